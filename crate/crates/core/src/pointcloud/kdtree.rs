//! Exact kd-tree over a flat coordinate buffer.
//!
//! Neighbors are ordered by `(squared distance, index)`, so results are
//! identical to a brute-force scan including tie-breaking.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
pub struct KdTree {
    dim: usize,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist2: f64,
    index: usize,
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

#[inline]
pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl KdTree {
    pub fn build(coords: &[f64], dim: usize) -> Self {
        let n = coords.len() / dim;
        let mut tree = KdTree {
            dim,
            order: (0..n).collect(),
            nodes: Vec::new(),
        };
        if n > 0 {
            tree.build_node(coords, 0, n);
        }
        tree
    }

    fn build_node(&mut self, coords: &[f64], start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let dim = self.dim;
        // split along the widest extent
        let mut axis = 0;
        let mut widest = -1.0;
        for a in 0..dim {
            let (lo, hi) = self.order[start..end]
                .iter()
                .map(|&i| coords[i * dim + a])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(v), hi.max(v))
                });
            if hi - lo > widest {
                widest = hi - lo;
                axis = a;
            }
        }
        let mid = (start + end) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&i, &j| {
            coords[i * dim + axis]
                .total_cmp(&coords[j * dim + axis])
                .then(i.cmp(&j))
        });
        let value = coords[self.order[mid] * dim + axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build_node(coords, start, mid);
        let right = self.build_node(coords, mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    /// The `k` nearest points to `query`, sorted by `(distance, index)`.
    pub fn knn(&self, coords: &[f64], query: &[f64], k: usize) -> Vec<(usize, f64)> {
        if k == 0 || self.order.is_empty() {
            return Vec::new();
        }
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        self.knn_node(coords, 0, query, k, &mut heap);
        let mut out: Vec<Candidate> = heap.into_vec();
        out.sort();
        out.into_iter().map(|c| (c.index, c.dist2.sqrt())).collect()
    }

    fn knn_node(
        &self,
        coords: &[f64],
        node: usize,
        query: &[f64],
        k: usize,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let c = Candidate {
                        dist2: dist2(&coords[i * self.dim..(i + 1) * self.dim], query),
                        index: i,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = query[axis] - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.knn_node(coords, near, query, k, heap);
                // equal distances must still be visited for index tie-breaks
                if heap.len() < k || diff * diff <= heap.peek().unwrap().dist2 {
                    self.knn_node(coords, far, query, k, heap);
                }
            }
        }
    }

    /// All points with distance `<= radius`, sorted by `(distance, index)`.
    pub fn within(&self, coords: &[f64], query: &[f64], radius: f64) -> Vec<(usize, f64)> {
        let mut out: Vec<Candidate> = Vec::new();
        if self.order.is_empty() {
            return Vec::new();
        }
        let r2 = radius * radius;
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            match self.nodes[node] {
                Node::Leaf { start, end } => {
                    for &i in &self.order[start..end] {
                        let d2 = dist2(&coords[i * self.dim..(i + 1) * self.dim], query);
                        if d2 <= r2 {
                            out.push(Candidate {
                                dist2: d2,
                                index: i,
                            });
                        }
                    }
                }
                Node::Split {
                    axis,
                    value,
                    left,
                    right,
                } => {
                    let diff = query[axis] - value;
                    let (near, far) = if diff < 0.0 {
                        (left, right)
                    } else {
                        (right, left)
                    };
                    stack.push(near);
                    if diff * diff <= r2 {
                        stack.push(far);
                    }
                }
            }
        }
        out.sort();
        out.into_iter().map(|c| (c.index, c.dist2.sqrt())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_knn(coords: &[f64], dim: usize, q: &[f64], k: usize) -> Vec<usize> {
        let n = coords.len() / dim;
        let mut all: Vec<Candidate> = (0..n)
            .map(|i| Candidate {
                dist2: dist2(&coords[i * dim..(i + 1) * dim], q),
                index: i,
            })
            .collect();
        all.sort();
        all.truncate(k);
        all.into_iter().map(|c| c.index).collect()
    }

    #[test]
    fn knn_matches_brute_force_with_ties() {
        // integer lattice has many exact distance ties
        let mut coords = Vec::new();
        for i in 0..15 {
            for j in 0..15 {
                coords.push(i as f64);
                coords.push(j as f64);
            }
        }
        let tree = KdTree::build(&coords, 2);
        for q in [[7.0, 7.0], [0.0, 0.0], [3.5, 9.0], [14.0, 2.5]] {
            for k in [1, 5, 9, 21, 25, 40] {
                let got: Vec<usize> = tree.knn(&coords, &q, k).into_iter().map(|p| p.0).collect();
                assert_eq!(got, brute_knn(&coords, 2, &q, k), "q={q:?} k={k}");
            }
        }
    }

    #[test]
    fn radius_matches_brute_force_3d() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let coords: Vec<f64> = (0..3 * 500).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let tree = KdTree::build(&coords, 3);
        for _ in 0..20 {
            let q: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let r = rng.gen_range(0.05..0.6);
            let got: Vec<usize> = tree
                .within(&coords, &q, r)
                .into_iter()
                .map(|p| p.0)
                .collect();
            let mut want: Vec<usize> = (0..500)
                .filter(|&i| dist2(&coords[3 * i..3 * i + 3], &q) <= r * r)
                .collect();
            want.sort_by(|&a, &b| {
                dist2(&coords[3 * a..3 * a + 3], &q)
                    .total_cmp(&dist2(&coords[3 * b..3 * b + 3], &q))
                    .then(a.cmp(&b))
            });
            assert_eq!(got, want);
        }
    }
}
