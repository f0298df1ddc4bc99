//! Kd-tree nearest-neighbour queries over point clouds.
//!
//! Equidistant candidates resolve to the lowest insertion index, so query
//! results are reproducible regardless of tree shape.

use crate::cloud::Vec3;
use crate::error::{Error, Result};

const LEAF: i32 = -1;

#[derive(Debug, Clone, Copy)]
struct Node {
    point: u32,
    axis: u8,
    left: i32,
    right: i32,
}

/// Static 3-d tree over a point set. Indices in query results refer to the
/// order of the slice the tree was built from.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vec3>,
    nodes: Vec<Node>,
    root: i32,
}

impl KdTree {
    pub fn build(points: &[Vec3]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty("kd-tree over zero points".into()));
        }
        let mut tree = KdTree {
            points: points.to_vec(),
            nodes: Vec::with_capacity(points.len()),
            root: LEAF,
        };
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        tree.root = tree.build_rec(&mut order, 0);
        Ok(tree)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    fn build_rec(&mut self, order: &mut [u32], depth: usize) -> i32 {
        if order.is_empty() {
            return LEAF;
        }
        let axis = (depth % 3) as u8;
        let mid = order.len() / 2;
        order.select_nth_unstable_by(mid, |&a, &b| {
            let ca = self.points[a as usize][axis as usize];
            let cb = self.points[b as usize][axis as usize];
            ca.partial_cmp(&cb).unwrap().then(a.cmp(&b))
        });
        let point = order[mid];
        let (lo, rest) = order.split_at_mut(mid);
        let hi = &mut rest[1..];
        let left = self.build_rec(lo, depth + 1);
        let right = self.build_rec(hi, depth + 1);
        let id = self.nodes.len() as i32;
        self.nodes.push(Node { point, axis, left, right });
        id
    }

    /// Index and Euclidean distance of the nearest stored point.
    pub fn nearest(&self, query: &Vec3) -> (usize, f64) {
        let mut best = (u32::MAX, f64::INFINITY);
        self.nearest_rec(self.root, query, &mut best);
        (best.0 as usize, best.1.sqrt())
    }

    fn nearest_rec(&self, node: i32, query: &Vec3, best: &mut (u32, f64)) {
        if node == LEAF {
            return;
        }
        let n = self.nodes[node as usize];
        let p = self.points[n.point as usize];
        let d2 = (p - query).norm_squared();
        if d2 < best.1 || (d2 == best.1 && n.point < best.0) {
            *best = (n.point, d2);
        }
        let diff = query[n.axis as usize] - p[n.axis as usize];
        let (near, far) = if diff < 0.0 { (n.left, n.right) } else { (n.right, n.left) };
        self.nearest_rec(near, query, best);
        if diff * diff <= best.1 {
            self.nearest_rec(far, query, best);
        }
    }

    /// The `k` nearest stored points, ascending by distance with index as the
    /// tie key. `exclude` drops one index from consideration (a point asking
    /// for its own neighbours). Returns fewer than `k` pairs only when the
    /// tree has fewer eligible points.
    pub fn k_nearest(&self, query: &Vec3, k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
        if k == 0 {
            return Vec::new();
        }
        let mut heap: Vec<(f64, u32)> = Vec::with_capacity(k + 1);
        self.k_nearest_rec(self.root, query, k, exclude.map(|i| i as u32), &mut heap);
        heap.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        heap.into_iter().map(|(d2, i)| (i as usize, d2.sqrt())).collect()
    }

    fn k_nearest_rec(
        &self,
        node: i32,
        query: &Vec3,
        k: usize,
        exclude: Option<u32>,
        heap: &mut Vec<(f64, u32)>,
    ) {
        if node == LEAF {
            return;
        }
        let n = self.nodes[node as usize];
        if exclude != Some(n.point) {
            let p = self.points[n.point as usize];
            let d2 = (p - query).norm_squared();
            let cand = (d2, n.point);
            if heap.len() < k {
                heap_push(heap, cand);
            } else if lex_less(cand, heap[0]) {
                heap_replace_root(heap, cand);
            }
        }
        let p = self.points[n.point as usize];
        let diff = query[n.axis as usize] - p[n.axis as usize];
        let (near, far) = if diff < 0.0 { (n.left, n.right) } else { (n.right, n.left) };
        self.k_nearest_rec(near, query, k, exclude, heap);
        if heap.len() < k || diff * diff <= heap[0].0 {
            self.k_nearest_rec(far, query, k, exclude, heap);
        }
    }
}

fn lex_less(a: (f64, u32), b: (f64, u32)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

// Max-heap on (distance², index) lexicographic order; root is the current
// worst member, the one a closer candidate evicts.
fn heap_push(heap: &mut Vec<(f64, u32)>, item: (f64, u32)) {
    heap.push(item);
    let mut i = heap.len() - 1;
    while i > 0 {
        let parent = (i - 1) / 2;
        if lex_less(heap[parent], heap[i]) {
            heap.swap(parent, i);
            i = parent;
        } else {
            break;
        }
    }
}

fn heap_replace_root(heap: &mut Vec<(f64, u32)>, item: (f64, u32)) {
    heap[0] = item;
    let mut i = 0;
    loop {
        let (l, r) = (2 * i + 1, 2 * i + 2);
        let mut largest = i;
        if l < heap.len() && lex_less(heap[largest], heap[l]) {
            largest = l;
        }
        if r < heap.len() && lex_less(heap[largest], heap[r]) {
            largest = r;
        }
        if largest == i {
            break;
        }
        heap.swap(i, largest);
        i = largest;
    }
}

/// Reference nearest-neighbour scan with the same ordering contract as
/// [`KdTree`]. Quadratic; used to cross-check tree results in tests.
pub fn linear_k_nearest(
    points: &[Vec3],
    query: &Vec3,
    k: usize,
    exclude: Option<usize>,
) -> Vec<(usize, f64)> {
    let mut all: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .map(|(i, p)| ((p - query).norm_squared(), i))
        .collect();
    all.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    all.truncate(k);
    all.into_iter().map(|(d2, i)| (i, d2.sqrt())).collect()
}
