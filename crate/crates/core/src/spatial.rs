//! Static k-d tree with exact nearest-neighbor queries.
//!
//! Nodes split at the median along the widest axis of their subset. Search
//! works on squared distances; ties are broken toward the smaller point
//! index, so results agree exactly with a linear scan.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};

const LEAF_SIZE: usize = 8;

#[derive(Clone, Debug)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// A nearest-neighbor hit: index into the indexed cloud and Euclidean distance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

#[derive(Clone, Debug)]
pub struct KdTree {
    points: Vec<Point3>,
    order: Vec<usize>,
    nodes: Vec<Node>,
    root: usize,
}

#[derive(Clone, Copy)]
struct Best {
    d2: f64,
    index: usize,
}

impl Best {
    #[inline]
    fn offer(&mut self, d2: f64, index: usize) {
        if d2 < self.d2 || (d2 == self.d2 && index < self.index) {
            self.d2 = d2;
            self.index = index;
        }
    }
}

impl KdTree {
    pub fn build(cloud: &PointCloud) -> Result<Self> {
        Self::from_points(cloud.points())
    }

    pub fn from_points(points: &[Point3]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::InvalidCloud(format!("non-finite coordinate at point {i}")));
        }
        let mut tree = KdTree {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::with_capacity(2 * points.len() / LEAF_SIZE + 1),
            root: 0,
        };
        tree.root = tree.build_node(0, points.len());
        Ok(tree)
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return self.nodes.len() - 1;
        }
        let points = &self.points;
        let slice = &mut self.order[start..end];

        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in slice.iter() {
            for a in 0..3 {
                let c = points[i].coord(a);
                lo[a] = lo[a].min(c);
                hi[a] = hi[a].max(c);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])).then(b.cmp(&a)))
            .unwrap_or(0);

        let mid = slice.len() / 2;
        slice.select_nth_unstable_by(mid, |&i, &j| {
            points[i]
                .coord(axis)
                .total_cmp(&points[j].coord(axis))
                .then(i.cmp(&j))
        });
        let value = points[slice[mid]].coord(axis);

        let left = self.build_node(start, start + mid);
        let right = self.build_node(start + mid, end);
        self.nodes.push(Node::Split {
            axis,
            value,
            left,
            right,
        });
        self.nodes.len() - 1
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    /// Number of nodes on the longest root-to-leaf path (a lone leaf has depth 1).
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], n: usize) -> usize {
            match nodes[n] {
                Node::Leaf { .. } => 1,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, self.root)
    }

    /// Point indices held by each leaf, in tree order.
    pub fn leaves(&self) -> Vec<&[usize]> {
        let mut out = Vec::new();
        let mut stack = vec![self.root];
        while let Some(n) = stack.pop() {
            match self.nodes[n] {
                Node::Leaf { start, end } => out.push(&self.order[start..end]),
                Node::Split { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        out
    }

    /// Checks that every split separates its subtrees (left ≤ value ≤ right).
    pub fn splits_are_consistent(&self) -> bool {
        fn collect(tree: &KdTree, n: usize, out: &mut Vec<usize>) {
            match tree.nodes[n] {
                Node::Leaf { start, end } => out.extend_from_slice(&tree.order[start..end]),
                Node::Split { left, right, .. } => {
                    collect(tree, left, out);
                    collect(tree, right, out);
                }
            }
        }
        self.nodes.iter().all(|node| match *node {
            Node::Leaf { .. } => true,
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let (mut l, mut r) = (Vec::new(), Vec::new());
                collect(self, left, &mut l);
                collect(self, right, &mut r);
                l.iter().all(|&i| self.points[i].coord(axis) <= value)
                    && r.iter().all(|&i| self.points[i].coord(axis) >= value)
            }
        })
    }

    fn search(&self, node: usize, q: &Point3, skip_coincident: bool, best: &mut Best) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d2 = q.distance_squared(&self.points[i]);
                    if skip_coincident && d2 == 0.0 {
                        continue;
                    }
                    best.offer(d2, i);
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q.coord(axis) - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, skip_coincident, best);
                // `<=` keeps equal-distance candidates with smaller indices reachable.
                if diff * diff <= best.d2 {
                    self.search(far, q, skip_coincident, best);
                }
            }
        }
    }

    fn run(&self, q: &Point3, bound: f64, skip_coincident: bool) -> Result<Option<(usize, f64)>> {
        if !q.is_finite() {
            return Err(Error::NonFiniteQuery);
        }
        let mut best = Best {
            d2: bound,
            index: usize::MAX,
        };
        self.search(self.root, q, skip_coincident, &mut best);
        Ok((best.index != usize::MAX).then_some((best.index, best.d2)))
    }

    /// Exact nearest neighbor; ties go to the smallest index.
    pub fn nearest(&self, query: &Point3) -> Result<Neighbor> {
        let (index, d2) = self
            .run(query, f64::INFINITY, false)?
            .expect("non-empty tree always yields a neighbor");
        Ok(Neighbor {
            index,
            distance: d2.sqrt(),
        })
    }

    /// The nearest neighbor if its distance is at most `radius`.
    pub fn nearest_within(&self, query: &Point3, radius: f64) -> Result<Option<Neighbor>> {
        if !(radius > 0.0) || radius.is_nan() {
            return Err(Error::param("radius", format!("must be positive, got {radius}")));
        }
        // Slightly loose pruning bound; the exact test happens on the root.
        let bound = if radius.is_finite() {
            radius * radius * (1.0 + 1e-10)
        } else {
            f64::INFINITY
        };
        Ok(self.run(query, bound, false)?.and_then(|(index, d2)| {
            let distance = d2.sqrt();
            (distance <= radius).then_some(Neighbor { index, distance })
        }))
    }

    /// Nearest point at a strictly positive distance (skips coincident points).
    pub fn nearest_distinct(&self, query: &Point3) -> Result<Option<Neighbor>> {
        Ok(self
            .run(query, f64::INFINITY, true)?
            .map(|(index, d2)| Neighbor {
                index,
                distance: d2.sqrt(),
            }))
    }

    /// Nearest neighbor for every query, computed in parallel, returned in query order.
    pub fn nearest_batch(&self, queries: &[Point3]) -> Result<Vec<Neighbor>> {
        queries.par_iter().map(|q| self.nearest(q)).collect()
    }

    pub fn nearest_within_batch(
        &self,
        queries: &[Point3],
        radius: f64,
    ) -> Result<Vec<Option<Neighbor>>> {
        queries
            .par_iter()
            .map(|q| self.nearest_within(q, radius))
            .collect()
    }
}
