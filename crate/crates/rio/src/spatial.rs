//! Small 3D kd-tree for fixed-radius and k-nearest-neighbor queries.
//!
//! Radar scans hold at most a few thousand points, so a median-split tree
//! over indices is all the pipeline needs. Queries are deterministic: ties
//! in distance resolve to the lower point index.

use nalgebra::Vector3;

#[derive(Debug, Clone)]
struct Node {
    /// Index into the points slice.
    point: usize,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

/// kd-tree over a borrowed point set.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vector3<f64>>,
    nodes: Vec<Node>,
    root: Option<usize>,
}

impl KdTree {
    pub fn build(points: &[Vector3<f64>]) -> Self {
        let mut tree = Self {
            points: points.to_vec(),
            nodes: Vec::with_capacity(points.len()),
            root: None,
        };
        let mut indices: Vec<usize> = (0..points.len()).collect();
        tree.root = tree.build_rec(&mut indices, 0);
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build_rec(&mut self, indices: &mut [usize], depth: usize) -> Option<usize> {
        if indices.is_empty() {
            return None;
        }
        let axis = depth % 3;
        indices.sort_unstable_by(|&a, &b| {
            self.points[a][axis]
                .partial_cmp(&self.points[b][axis])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let mid = indices.len() / 2;
        let point = indices[mid];
        let node_id = self.nodes.len();
        self.nodes.push(Node {
            point,
            axis,
            left: None,
            right: None,
        });
        let (left_slice, right_slice) = indices.split_at_mut(mid);
        let left = self.build_rec(left_slice, depth + 1);
        let right = self.build_rec(&mut right_slice[1..], depth + 1);
        self.nodes[node_id].left = left;
        self.nodes[node_id].right = right;
        Some(node_id)
    }

    /// Indices of all points within `radius` of `query`, ascending by index.
    pub fn within_radius(&self, query: &Vector3<f64>, radius: f64) -> Vec<usize> {
        let mut found = Vec::new();
        if let Some(root) = self.root {
            self.radius_rec(root, query, radius * radius, &mut found);
        }
        found.sort_unstable();
        found
    }

    /// True if any point lies within `radius` of `query`.
    pub fn any_within_radius(&self, query: &Vector3<f64>, radius: f64) -> bool {
        match self.root {
            Some(root) => self.any_rec(root, query, radius * radius),
            None => false,
        }
    }

    fn radius_rec(&self, node_id: usize, query: &Vector3<f64>, r2: f64, found: &mut Vec<usize>) {
        let node = &self.nodes[node_id];
        let p = &self.points[node.point];
        if (p - query).norm_squared() <= r2 {
            found.push(node.point);
        }
        let diff = query[node.axis] - p[node.axis];
        let (near, far) = if diff < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        if let Some(n) = near {
            self.radius_rec(n, query, r2, found);
        }
        if diff * diff <= r2 {
            if let Some(f) = far {
                self.radius_rec(f, query, r2, found);
            }
        }
    }

    fn any_rec(&self, node_id: usize, query: &Vector3<f64>, r2: f64) -> bool {
        let node = &self.nodes[node_id];
        let p = &self.points[node.point];
        if (p - query).norm_squared() <= r2 {
            return true;
        }
        let diff = query[node.axis] - p[node.axis];
        let (near, far) = if diff < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        if let Some(n) = near {
            if self.any_rec(n, query, r2) {
                return true;
            }
        }
        if diff * diff <= r2 {
            if let Some(f) = far {
                return self.any_rec(f, query, r2);
            }
        }
        false
    }

    /// The `k` nearest neighbors of `query`, closest first. `exclude` skips
    /// one index (the query point itself when it is part of the set).
    pub fn knn(&self, query: &Vector3<f64>, k: usize, exclude: Option<usize>) -> Vec<usize> {
        if k == 0 {
            return Vec::new();
        }
        // (dist2, index) max-heap keeps the current best k.
        let mut heap: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        if let Some(root) = self.root {
            self.knn_rec(root, query, k, exclude, &mut heap);
        }
        heap.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        heap.into_iter().map(|(_, i)| i).collect()
    }

    fn knn_rec(
        &self,
        node_id: usize,
        query: &Vector3<f64>,
        k: usize,
        exclude: Option<usize>,
        heap: &mut Vec<(f64, usize)>,
    ) {
        let node = &self.nodes[node_id];
        let p = &self.points[node.point];
        if Some(node.point) != exclude {
            let d2 = (p - query).norm_squared();
            let candidate = (d2, node.point);
            if heap.len() < k {
                heap.push(candidate);
                heap.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(b.1.cmp(&a.1)));
            } else if Self::closer(candidate, heap[0]) {
                heap[0] = candidate;
                heap.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(b.1.cmp(&a.1)));
            }
        }
        let diff = query[node.axis] - p[node.axis];
        let (near, far) = if diff < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        if let Some(n) = near {
            self.knn_rec(n, query, k, exclude, heap);
        }
        let worst = if heap.len() < k {
            f64::INFINITY
        } else {
            heap[0].0
        };
        if diff * diff <= worst {
            if let Some(f) = far {
                self.knn_rec(f, query, k, exclude, heap);
            }
        }
    }

    fn closer(a: (f64, usize), b: (f64, usize)) -> bool {
        a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_points(n: usize, seed: u64) -> Vec<Vector3<f64>> {
        let mut rng = StdRng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Vector3::new(
                    rng.gen::<f64>() * 20.0 - 10.0,
                    rng.gen::<f64>() * 20.0 - 10.0,
                    rng.gen::<f64>() * 4.0 - 2.0,
                )
            })
            .collect()
    }

    #[test]
    fn radius_matches_brute_force() {
        let points = random_points(500, 7);
        let tree = KdTree::build(&points);
        let mut rng = StdRng::seed_from_u64(8);
        for _ in 0..50 {
            let q = Vector3::new(
                rng.gen::<f64>() * 20.0 - 10.0,
                rng.gen::<f64>() * 20.0 - 10.0,
                rng.gen::<f64>() * 4.0 - 2.0,
            );
            let r = rng.gen::<f64>() * 3.0;
            let mut brute: Vec<usize> = points
                .iter()
                .enumerate()
                .filter(|(_, p)| (*p - q).norm() <= r)
                .map(|(i, _)| i)
                .collect();
            brute.sort_unstable();
            assert_eq!(tree.within_radius(&q, r), brute);
            assert_eq!(tree.any_within_radius(&q, r), !brute.is_empty());
        }
    }

    #[test]
    fn knn_matches_brute_force() {
        let points = random_points(300, 9);
        let tree = KdTree::build(&points);
        let mut rng = StdRng::seed_from_u64(10);
        for _ in 0..50 {
            let qi = rng.gen_range(0..points.len());
            let q = points[qi];
            let k = rng.gen_range(1..20);
            let mut brute: Vec<(f64, usize)> = points
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != qi)
                .map(|(i, p)| ((p - q).norm_squared(), i))
                .collect();
            brute.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let expected: Vec<usize> = brute.into_iter().take(k).map(|(_, i)| i).collect();
            assert_eq!(tree.knn(&q, k, Some(qi)), expected);
        }
    }

    #[test]
    fn empty_tree_returns_nothing() {
        let tree = KdTree::build(&[]);
        assert!(tree.is_empty());
        assert!(tree.within_radius(&Vector3::zeros(), 1.0).is_empty());
        assert!(tree.knn(&Vector3::zeros(), 3, None).is_empty());
        assert!(!tree.any_within_radius(&Vector3::zeros(), 1.0));
    }

    #[test]
    fn knn_requesting_more_than_available() {
        let points = random_points(5, 11);
        let tree = KdTree::build(&points);
        let result = tree.knn(&Vector3::zeros(), 10, None);
        assert_eq!(result.len(), 5);
    }
}
