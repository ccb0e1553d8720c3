use cloud_inspect_core::ply::{read_ply_file, write_ply, CoordinateKind, PlyFormat};
use cloud_inspect_core::{Point3, PointCloud};

fn fixture(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn expected() -> (Vec<[f32; 3]>, Vec<[u8; 3]>) {
    (
        vec![[0.0, 0.0, 0.0], [0.5, -1.25, 2.0], [1e-3, 3.25, -7.5], [0.1, 0.2, 0.3]],
        vec![[255, 0, 0], [0, 255, 0], [10, 20, 30], [128, 128, 128]],
    )
}

// VCGLib-style exports carry an alpha channel and an empty face element.
#[test]
fn reads_vcglib_style_exports() {
    let (pts, colors) = expected();
    for (name, format) in [
        ("vcglib_ascii.ply", PlyFormat::Ascii),
        ("vcglib_binary.ply", PlyFormat::BinaryLittleEndian),
    ] {
        let (header, cloud) = read_ply_file(fixture(name)).unwrap();
        assert_eq!(header.format, format);
        assert_eq!(header.vertex_count, 4);
        assert!(header.has_color);
        assert_eq!(header.property_order.len(), 7);
        let got: Vec<[f64; 3]> = cloud.points().iter().map(|p| p.to_array()).collect();
        let want: Vec<[f64; 3]> = pts.iter().map(|p| p.map(f64::from)).collect();
        assert_eq!(got, want, "{name}");
        assert_eq!(cloud.colors().unwrap(), &colors[..]);
    }
}

#[test]
fn ascii_writer_golden_output() {
    let cloud = PointCloud::with_colors(
        vec![Point3::new(0.5, -1.25, 2.0), Point3::new(0.1, 0.0, -3.0)],
        Some(vec![[255, 0, 0], [1, 2, 3]]),
    )
    .unwrap();
    let text = String::from_utf8(write_ply(&cloud, PlyFormat::Ascii, CoordinateKind::F32)).unwrap();
    let golden = "ply\n\
format ascii 1.0\n\
element vertex 2\n\
property float x\n\
property float y\n\
property float z\n\
property uchar red\n\
property uchar green\n\
property uchar blue\n\
end_header\n\
0.5 -1.25 2.0 255 0 0\n\
0.1 0.0 -3.0 1 2 3\n";
    assert_eq!(text, golden);
}
