//! PLY point-cloud reader and writer (`ascii 1.0` and `binary_little_endian 1.0`).
//!
//! Only the `vertex` element is loaded. Other elements (faces, edges, ...)
//! are parsed far enough to be skipped. Coordinates may be `float` or
//! `double` and are always widened to `f64`; colors must be `uchar`.

use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::geometry::{Point3, PointCloud, Rgb};

#[derive(Debug, Error)]
pub enum PlyError {
    #[error("not a PLY file")]
    NotPly,
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("malformed header at byte {offset}: {message}")]
    Header { offset: usize, message: String },
    #[error("property `{name}`: {message}")]
    Property { name: String, message: String },
    #[error("truncated payload at byte {offset}")]
    Truncated { offset: usize },
    #[error("malformed value at byte {offset}: {message}")]
    Value { offset: usize, message: String },
    #[error("invalid coordinate at vertex {vertex}")]
    InvalidCoordinate { vertex: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

impl PlyFormat {
    pub fn keyword(self) -> &'static str {
        match self {
            PlyFormat::Ascii => "ascii",
            PlyFormat::BinaryLittleEndian => "binary_little_endian",
        }
    }
}

impl fmt::Display for PlyFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

/// Precision used for written coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CoordinateKind {
    F32,
    F64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScalarKind {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarKind {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => ScalarKind::I8,
            "uchar" | "uint8" => ScalarKind::U8,
            "short" | "int16" => ScalarKind::I16,
            "ushort" | "uint16" => ScalarKind::U16,
            "int" | "int32" => ScalarKind::I32,
            "uint" | "uint32" => ScalarKind::U32,
            "float" | "float32" => ScalarKind::F32,
            "double" | "float64" => ScalarKind::F64,
            _ => return None,
        })
    }

    pub fn size(self) -> usize {
        match self {
            ScalarKind::I8 | ScalarKind::U8 => 1,
            ScalarKind::I16 | ScalarKind::U16 => 2,
            ScalarKind::I32 | ScalarKind::U32 | ScalarKind::F32 => 4,
            ScalarKind::F64 => 8,
        }
    }

    pub fn is_float(self) -> bool {
        matches!(self, ScalarKind::F32 | ScalarKind::F64)
    }

    fn decode_le(self, b: &[u8]) -> f64 {
        match self {
            ScalarKind::I8 => b[0] as i8 as f64,
            ScalarKind::U8 => b[0] as f64,
            ScalarKind::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            ScalarKind::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            ScalarKind::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            ScalarKind::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            ScalarKind::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            ScalarKind::F64 => f64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
        }
    }

    fn parse_ascii(self, tok: &str) -> Option<f64> {
        match self {
            ScalarKind::F32 => tok.parse::<f32>().ok().map(f64::from),
            ScalarKind::F64 => tok.parse::<f64>().ok(),
            ScalarKind::I8 => tok.parse::<i8>().ok().map(f64::from),
            ScalarKind::U8 => tok.parse::<u8>().ok().map(f64::from),
            ScalarKind::I16 => tok.parse::<i16>().ok().map(f64::from),
            ScalarKind::U16 => tok.parse::<u16>().ok().map(f64::from),
            ScalarKind::I32 => tok.parse::<i32>().ok().map(f64::from),
            ScalarKind::U32 => tok.parse::<u32>().ok().map(f64::from),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum PropertyType {
    Scalar(ScalarKind),
    List { count: ScalarKind, item: ScalarKind },
}

#[derive(Clone, Debug)]
struct Property {
    name: String,
    ty: PropertyType,
}

#[derive(Clone, Debug)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

/// Summary of a parsed header.
#[derive(Clone, Debug, PartialEq)]
pub struct PlyHeader {
    pub format: PlyFormat,
    pub vertex_count: usize,
    pub has_color: bool,
    /// Vertex properties in file order.
    pub property_order: Vec<(String, ScalarKind)>,
}

struct VertexLayout {
    xyz: [usize; 3],
    rgb: Option<[usize; 3]>,
}

struct ParsedHeader {
    header: PlyHeader,
    elements: Vec<Element>,
    vertex_element: Option<usize>,
    layout: Option<VertexLayout>,
    payload_start: usize,
}

fn header_err(offset: usize, message: impl Into<String>) -> PlyError {
    PlyError::Header {
        offset,
        message: message.into(),
    }
}

fn parse_header(bytes: &[u8]) -> Result<ParsedHeader, PlyError> {
    let mut lines = Vec::new();
    let mut pos = 0;
    let payload_start = loop {
        let Some(rel) = bytes[pos..].iter().position(|&b| b == b'\n') else {
            if lines.is_empty() && !bytes.starts_with(b"ply") {
                return Err(PlyError::NotPly);
            }
            return Err(header_err(pos, "missing end_header"));
        };
        let raw = &bytes[pos..pos + rel];
        let text = std::str::from_utf8(raw)
            .map_err(|_| header_err(pos, "header is not valid text"))?
            .trim_end_matches('\r');
        let first = lines.is_empty();
        if first && text.trim() != "ply" {
            return Err(PlyError::NotPly);
        }
        let done = text.trim() == "end_header";
        lines.push((pos, text));
        pos += rel + 1;
        if done {
            break pos;
        }
    };

    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    for &(offset, line) in &lines[1..lines.len() - 1] {
        let mut toks = line.split_whitespace();
        let Some(keyword) = toks.next() else { continue };
        match keyword {
            "comment" | "obj_info" => {}
            "format" => {
                let kind = toks.next().unwrap_or("");
                let version = toks.next().unwrap_or("");
                format = Some(match kind {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    other => return Err(PlyError::UnsupportedFormat(other.to_string())),
                });
                if version != "1.0" {
                    return Err(PlyError::UnsupportedFormat(format!("{kind} {version}")));
                }
            }
            "element" => {
                let name = toks
                    .next()
                    .ok_or_else(|| header_err(offset, "element without a name"))?;
                let count = toks
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| header_err(offset, format!("bad count for element `{name}`")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            "property" => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| header_err(offset, "property before any element"))?;
                let toks: Vec<&str> = toks.collect();
                let unknown = |t: &str| header_err(offset, format!("unknown scalar type `{t}`"));
                let (ty, name) = match toks.as_slice() {
                    ["list", count, item, name] => (
                        PropertyType::List {
                            count: ScalarKind::parse(count).ok_or_else(|| unknown(count))?,
                            item: ScalarKind::parse(item).ok_or_else(|| unknown(item))?,
                        },
                        *name,
                    ),
                    [kind, name] => (
                        PropertyType::Scalar(ScalarKind::parse(kind).ok_or_else(|| unknown(kind))?),
                        *name,
                    ),
                    _ => return Err(header_err(offset, format!("malformed property line `{line}`"))),
                };
                element.properties.push(Property {
                    name: name.to_string(),
                    ty,
                });
            }
            other => return Err(header_err(offset, format!("unexpected keyword `{other}`"))),
        }
    }
    let format = format.ok_or_else(|| header_err(0, "missing format line"))?;

    let vertex_element = elements.iter().position(|e| e.name == "vertex");
    let (mut header, mut layout) = (
        PlyHeader {
            format,
            vertex_count: 0,
            has_color: false,
            property_order: Vec::new(),
        },
        None,
    );
    if let Some(vi) = vertex_element {
        let v = &elements[vi];
        header.vertex_count = v.count;
        for p in &v.properties {
            match p.ty {
                PropertyType::Scalar(k) => header.property_order.push((p.name.clone(), k)),
                PropertyType::List { .. } => {
                    return Err(PlyError::Property {
                        name: p.name.clone(),
                        message: "list-typed vertex properties are not supported".into(),
                    })
                }
            }
        }
        let l = vertex_layout(&header.property_order)?;
        header.has_color = l.rgb.is_some();
        layout = Some(l);
    }
    Ok(ParsedHeader {
        header,
        elements,
        vertex_element,
        layout,
        payload_start,
    })
}

fn vertex_layout(props: &[(String, ScalarKind)]) -> Result<VertexLayout, PlyError> {
    let find = |name: &str| props.iter().position(|(n, _)| n == name);
    for alias in ["r", "g", "b"] {
        if find(alias).is_some() {
            return Err(PlyError::Property {
                name: alias.into(),
                message: "color channels must be named red/green/blue".into(),
            });
        }
    }
    let mut xyz = [0; 3];
    for (slot, name) in xyz.iter_mut().zip(["x", "y", "z"]) {
        let i = find(name).ok_or_else(|| PlyError::Property {
            name: name.into(),
            message: "required vertex property is missing".into(),
        })?;
        if !props[i].1.is_float() {
            return Err(PlyError::Property {
                name: name.into(),
                message: "coordinates must be float or double".into(),
            });
        }
        *slot = i;
    }
    let channels: Vec<Option<usize>> = ["red", "green", "blue"].iter().map(|n| find(n)).collect();
    let rgb = match channels.as_slice() {
        [None, None, None] => None,
        [Some(r), Some(g), Some(b)] => {
            for &i in [r, g, b] {
                if props[i].1 != ScalarKind::U8 {
                    return Err(PlyError::Property {
                        name: props[i].0.clone(),
                        message: "color channels must be uchar".into(),
                    });
                }
            }
            Some([*r, *g, *b])
        }
        _ => {
            let missing = ["red", "green", "blue"]
                .iter()
                .zip(&channels)
                .find(|(_, c)| c.is_none())
                .map(|(n, _)| *n)
                .unwrap_or("red");
            return Err(PlyError::Property {
                name: missing.into(),
                message: "partial color: red, green and blue must all be present".into(),
            });
        }
    };
    Ok(VertexLayout { xyz, rgb })
}

/// Parse only the header.
pub fn read_header(bytes: &[u8]) -> Result<PlyHeader, PlyError> {
    Ok(parse_header(bytes)?.header)
}

pub fn read_ply(bytes: &[u8]) -> Result<PointCloud, PlyError> {
    Ok(read_ply_with_header(bytes)?.1)
}

pub fn read_ply_with_header(bytes: &[u8]) -> Result<(PlyHeader, PointCloud), PlyError> {
    let parsed = parse_header(bytes)?;
    let payload = &bytes[parsed.payload_start..];
    let rows = match parsed.header.format {
        PlyFormat::Ascii => read_ascii(&parsed, payload)?,
        PlyFormat::BinaryLittleEndian => read_binary(&parsed, payload)?,
    };
    let cloud = assemble(&parsed, rows)?;
    Ok((parsed.header, cloud))
}

fn assemble(parsed: &ParsedHeader, rows: Vec<Vec<f64>>) -> Result<PointCloud, PlyError> {
    let Some(layout) = &parsed.layout else {
        return Ok(PointCloud::default());
    };
    let mut points = Vec::with_capacity(rows.len());
    let mut colors: Option<Vec<Rgb>> = layout.rgb.map(|_| Vec::with_capacity(rows.len()));
    for (vertex, row) in rows.iter().enumerate() {
        let p = Point3::new(row[layout.xyz[0]], row[layout.xyz[1]], row[layout.xyz[2]]);
        if !p.is_finite() {
            return Err(PlyError::InvalidCoordinate { vertex });
        }
        points.push(p);
        if let (Some(c), Some(idx)) = (colors.as_mut(), layout.rgb) {
            c.push(idx.map(|i| row[i] as u8));
        }
    }
    PointCloud::with_colors(points, colors).map_err(|e| PlyError::Value {
        offset: parsed.payload_start,
        message: e.to_string(),
    })
}

fn read_ascii(parsed: &ParsedHeader, payload: &[u8]) -> Result<Vec<Vec<f64>>, PlyError> {
    let base = parsed.payload_start;
    let text = std::str::from_utf8(payload).map_err(|e| PlyError::Value {
        offset: base + e.valid_up_to(),
        message: "ascii payload is not valid text".into(),
    })?;
    // Non-blank lines with their byte offsets.
    let mut lines = text
        .split('\n')
        .scan(base, |off, l| {
            let start = *off;
            *off += l.len() + 1;
            Some((start, l))
        })
        .filter(|(_, l)| !l.trim().is_empty());
    let end = base + payload.len();

    let mut rows = Vec::new();
    for (ei, element) in parsed.elements.iter().enumerate() {
        let is_vertex = Some(ei) == parsed.vertex_element;
        if !is_vertex && ei > parsed.vertex_element.unwrap_or(usize::MAX) {
            break;
        }
        for _ in 0..element.count {
            let (offset, line) = lines.next().ok_or(PlyError::Truncated { offset: end })?;
            if !is_vertex {
                continue;
            }
            let mut toks = line.split_whitespace();
            let mut row = Vec::with_capacity(element.properties.len());
            for prop in &element.properties {
                let PropertyType::Scalar(kind) = prop.ty else {
                    unreachable!("list vertex properties rejected in header")
                };
                let tok = toks.next().ok_or(PlyError::Truncated { offset })?;
                let v = kind.parse_ascii(tok).ok_or_else(|| PlyError::Value {
                    offset,
                    message: format!("cannot parse `{tok}` as {kind:?} for `{}`", prop.name),
                })?;
                row.push(v);
            }
            rows.push(row);
        }
    }
    Ok(rows)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    base: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PlyError> {
        if self.bytes.len() - self.pos < n {
            return Err(PlyError::Truncated {
                offset: self.base + self.pos,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn scalar(&mut self, k: ScalarKind) -> Result<f64, PlyError> {
        Ok(k.decode_le(self.take(k.size())?))
    }
}

fn read_binary(parsed: &ParsedHeader, payload: &[u8]) -> Result<Vec<Vec<f64>>, PlyError> {
    let mut cur = Cursor {
        bytes: payload,
        pos: 0,
        base: parsed.payload_start,
    };
    let mut rows = Vec::new();
    for (ei, element) in parsed.elements.iter().enumerate() {
        let is_vertex = Some(ei) == parsed.vertex_element;
        if !is_vertex && ei > parsed.vertex_element.unwrap_or(usize::MAX) {
            break;
        }
        if is_vertex {
            let stride: usize = element
                .properties
                .iter()
                .map(|p| match p.ty {
                    PropertyType::Scalar(k) => k.size(),
                    PropertyType::List { .. } => unreachable!("rejected in header"),
                })
                .sum();
            let needed = stride.checked_mul(element.count);
            if needed.is_none_or(|n| n > payload.len() - cur.pos) {
                return Err(PlyError::Truncated {
                    offset: cur.base + payload.len(),
                });
            }
            rows.reserve(element.count);
        }
        for _ in 0..element.count {
            let mut row = Vec::with_capacity(if is_vertex { element.properties.len() } else { 0 });
            for prop in &element.properties {
                match prop.ty {
                    PropertyType::Scalar(k) => {
                        let v = cur.scalar(k)?;
                        if is_vertex {
                            row.push(v);
                        }
                    }
                    PropertyType::List { count, item } => {
                        let at = cur.base + cur.pos;
                        let n = cur.scalar(count)?;
                        if !(n >= 0.0) {
                            return Err(PlyError::Value {
                                offset: at,
                                message: format!("negative list length {n}"),
                            });
                        }
                        cur.take(n as usize * item.size())?;
                    }
                }
            }
            if is_vertex {
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

/// Serialize a cloud. Output depends only on the inputs, byte for byte.
pub fn write_ply(cloud: &PointCloud, format: PlyFormat, coords: CoordinateKind) -> Vec<u8> {
    let kind = match coords {
        CoordinateKind::F32 => "float",
        CoordinateKind::F64 => "double",
    };
    let mut out = Vec::new();
    out.extend_from_slice(b"ply\n");
    out.extend_from_slice(format!("format {} 1.0\n", format.keyword()).as_bytes());
    out.extend_from_slice(format!("element vertex {}\n", cloud.len()).as_bytes());
    for axis in ["x", "y", "z"] {
        out.extend_from_slice(format!("property {kind} {axis}\n").as_bytes());
    }
    let colors = cloud.colors();
    if colors.is_some() {
        for ch in ["red", "green", "blue"] {
            out.extend_from_slice(format!("property uchar {ch}\n").as_bytes());
        }
    }
    out.extend_from_slice(b"end_header\n");

    match format {
        PlyFormat::Ascii => {
            use std::fmt::Write as _;
            let mut line = String::new();
            for (i, p) in cloud.points().iter().enumerate() {
                line.clear();
                for (k, v) in p.to_array().into_iter().enumerate() {
                    let sep = if k == 0 { "" } else { " " };
                    match coords {
                        CoordinateKind::F32 => write!(line, "{sep}{:?}", v as f32),
                        CoordinateKind::F64 => write!(line, "{sep}{v:?}"),
                    }
                    .expect("write to String");
                }
                if let Some(c) = colors {
                    let [r, g, b] = c[i];
                    write!(line, " {r} {g} {b}").expect("write to String");
                }
                line.push('\n');
                out.extend_from_slice(line.as_bytes());
            }
        }
        PlyFormat::BinaryLittleEndian => {
            let stride = match coords {
                CoordinateKind::F32 => 12,
                CoordinateKind::F64 => 24,
            } + if colors.is_some() { 3 } else { 0 };
            out.reserve(stride * cloud.len());
            for (i, p) in cloud.points().iter().enumerate() {
                for v in p.to_array() {
                    match coords {
                        CoordinateKind::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                        CoordinateKind::F64 => out.extend_from_slice(&v.to_le_bytes()),
                    }
                }
                if let Some(c) = colors {
                    out.extend_from_slice(&c[i]);
                }
            }
        }
    }
    out
}

pub fn read_ply_file(path: impl AsRef<Path>) -> Result<(PlyHeader, PointCloud), PlyError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| PlyError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_ply_with_header(&bytes)
}

pub fn write_ply_file(
    path: impl AsRef<Path>,
    cloud: &PointCloud,
    format: PlyFormat,
    coords: CoordinateKind,
) -> Result<(), PlyError> {
    let path = path.as_ref();
    std::fs::write(path, write_ply(cloud, format, coords)).map_err(|source| PlyError::Io {
        path: path.display().to_string(),
        source,
    })
}
