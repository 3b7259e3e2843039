//! Exact k-nearest-neighbour search and padded receptive fields.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::cloudio::{Point3, PointCloud};
use crate::{AscnError, Result};

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Immutable kd-tree over a cloud's points. Queries are exact; equal
/// distances are ordered by the lower original point index.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Vec<Point3>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    d2: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2.total_cmp(&other.d2).then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn coord(p: &Point3, axis: usize) -> f64 {
    match axis {
        0 => p.x,
        1 => p.y,
        _ => p.z,
    }
}

/// Squared distance as every search path computes it.
pub fn dist2(a: &Point3, b: &Point3) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

impl SpatialIndex {
    pub fn build(cloud: &PointCloud) -> SpatialIndex {
        let points = cloud.points().to_vec();
        let mut index = SpatialIndex {
            order: (0..points.len()).collect(),
            points,
            nodes: Vec::new(),
        };
        let n = index.points.len();
        index.build_node(0, n);
        index
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let axis = self.widest_axis(start, end);
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            coord(&points[a], axis)
                .total_cmp(&coord(&points[b], axis))
                .then(a.cmp(&b))
        });
        let value = coord(&self.points[self.order[mid]], axis);
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    fn widest_axis(&self, start: usize, end: usize) -> usize {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            for (a, (l, h)) in lo.iter_mut().zip(hi.iter_mut()).enumerate() {
                let c = coord(&self.points[i], a);
                *l = l.min(c);
                *h = h.max(c);
            }
        }
        (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])).then(b.cmp(&a)))
            .unwrap()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> Point3 {
        self.points[i]
    }

    /// The `min(k, N - 1)` nearest points to point `query`, excluding the
    /// query itself, ascending by distance then index.
    pub fn k_nearest(&self, query: usize, k: usize) -> Vec<usize> {
        self.k_nearest_to(&self.points[query], k, Some(query))
    }

    /// The `k` nearest stored points to an arbitrary location, optionally
    /// excluding one stored index.
    pub fn k_nearest_to(&self, q: &Point3, k: usize, exclude: Option<usize>) -> Vec<usize> {
        if k == 0 || self.points.is_empty() {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(0, q, k, exclude, &mut heap);
        let mut found = heap.into_vec();
        found.sort_unstable();
        found.into_iter().map(|c| c.index).collect()
    }

    fn search(
        &self,
        node: usize,
        q: &Point3,
        k: usize,
        exclude: Option<usize>,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if Some(i) == exclude {
                        continue;
                    }
                    let cand = Candidate { d2: dist2(q, &self.points[i]), index: i };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = coord(q, axis) - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, exclude, heap);
                // `<=` keeps equal-distance candidates with lower indices reachable.
                if heap.len() < k || diff * diff <= heap.peek().unwrap().d2 {
                    self.search(far, q, k, exclude, heap);
                }
            }
        }
    }
}

/// A centre point, its neighbours in ascending distance, and zero-padded
/// slots up to a fixed width.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceptiveField {
    pub center_index: usize,
    /// Real neighbours only (`valid_count` entries).
    pub neighbor_indices: Vec<usize>,
    /// `p_m - p_n` per slot; padded slots hold the zero vector.
    pub directions: Vec<Point3>,
    /// `|p_m - p_n|` per slot; padded slots hold 0.
    pub distances: Vec<f64>,
    pub valid_count: usize,
}

impl ReceptiveField {
    /// Builds a field from an ascending neighbour list, padded to `slots`.
    pub fn from_neighbors(
        cloud: &PointCloud,
        center: usize,
        neighbors: &[usize],
        slots: usize,
    ) -> Result<ReceptiveField> {
        if neighbors.is_empty() {
            return Err(AscnError::DegenerateCloud(format!(
                "point {center} has no neighbours"
            )));
        }
        if neighbors.len() > slots {
            return Err(AscnError::DimensionMismatch {
                expected: slots,
                actual: neighbors.len(),
            });
        }
        let p = cloud.point(center);
        let mut directions = Vec::with_capacity(slots);
        let mut distances = Vec::with_capacity(slots);
        for &m in neighbors {
            let d = cloud.point(m) - p;
            directions.push(d);
            distances.push(d.norm());
        }
        directions.resize(slots, Point3::ZERO);
        distances.resize(slots, 0.0);
        Ok(ReceptiveField {
            center_index: center,
            neighbor_indices: neighbors.to_vec(),
            directions,
            distances,
            valid_count: neighbors.len(),
        })
    }

    pub fn slots(&self) -> usize {
        self.directions.len()
    }

    /// Point index feeding slot `s`: the neighbour, or the centre for padding.
    pub fn slot_point(&self, s: usize) -> usize {
        self.neighbor_indices.get(s).copied().unwrap_or(self.center_index)
    }
}

/// Receptive field of point `n` with `m` neighbours padded to `m_max` slots.
pub fn receptive_field(
    cloud: &PointCloud,
    index: &SpatialIndex,
    n: usize,
    m: usize,
    m_max: usize,
) -> Result<ReceptiveField> {
    if m == 0 || m > m_max {
        return Err(AscnError::InvalidParam(format!(
            "need 1 <= M <= M_max, got M = {m}, M_max = {m_max}"
        )));
    }
    if cloud.len() < 2 {
        return Err(AscnError::DegenerateCloud("a single point has no neighbours".into()));
    }
    let neighbors = index.k_nearest(n, m);
    ReceptiveField::from_neighbors(cloud, n, &neighbors, m_max)
}

/// Distance to the farthest real neighbour (padding ignored).
pub fn max_distance(rf: &ReceptiveField) -> f64 {
    rf.distances[rf.valid_count - 1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;

    fn cloud(points: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(points.iter().copied().map(Point3::from_array).collect()).unwrap()
    }

    fn brute(points: &[Point3], q: usize, k: usize) -> Vec<usize> {
        let mut all: Vec<(f64, usize)> = (0..points.len())
            .filter(|&i| i != q)
            .map(|i| (dist2(&points[q], &points[i]), i))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.into_iter().take(k).map(|(_, i)| i).collect()
    }

    #[test]
    fn hand_checked_queries() {
        let c = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]]);
        let idx = SpatialIndex::build(&c);
        assert_eq!(idx.k_nearest(0, 2), vec![1, 2]);
        assert_eq!(idx.k_nearest(2, 5), vec![1, 0]);

        let single = SpatialIndex::build(&cloud(&[[1.0, 2.0, 3.0]]));
        assert!(single.k_nearest(0, 3).is_empty());
    }

    #[test]
    fn ties_prefer_lower_index() {
        // Grid with many equal distances and duplicates.
        let mut pts = Vec::new();
        for x in 0..6 {
            for y in 0..6 {
                pts.push([x as f64, y as f64, 0.0]);
            }
        }
        pts.push([2.0, 2.0, 0.0]);
        pts.push([2.0, 2.0, 0.0]);
        let c = cloud(&pts);
        let idx = SpatialIndex::build(&c);
        for q in 0..c.len() {
            for k in [1, 4, 9, 20] {
                assert_eq!(idx.k_nearest(q, k), brute(c.points(), q, k), "q={q} k={k}");
            }
        }
    }

    #[test]
    fn matches_brute_force_on_random_clouds() {
        let mut rng = rng_from_seed(17);
        let pts: Vec<Point3> = (0..1000)
            .map(|_| Point3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let c = PointCloud::new(pts).unwrap();
        let idx = SpatialIndex::build(&c);
        for q in (0..1000).step_by(7) {
            assert_eq!(idx.k_nearest(q, 10), brute(c.points(), q, 10));
        }
    }

    #[test]
    fn receptive_field_padding() {
        let c = cloud(&[[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        let idx = SpatialIndex::build(&c);
        let rf = receptive_field(&c, &idx, 0, 1, 3).unwrap();
        assert_eq!(rf.directions, vec![Point3::new(2.0, 0.0, 0.0), Point3::ZERO, Point3::ZERO]);
        assert_eq!(rf.distances, vec![2.0, 0.0, 0.0]);
        assert_eq!(rf.valid_count, 1);
        assert_eq!(max_distance(&rf), 2.0);
        assert_eq!(rf.slot_point(0), 1);
        assert_eq!(rf.slot_point(2), 0);

        // Asking for more neighbours than exist just yields fewer valid slots.
        let rf = receptive_field(&c, &idx, 1, 3, 3).unwrap();
        assert_eq!(rf.valid_count, 1);
    }

    #[test]
    fn receptive_field_full_and_errors() {
        let c = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 5.0, 0.0], [0.0, 0.0, 2.0]]);
        let idx = SpatialIndex::build(&c);
        let rf = receptive_field(&c, &idx, 0, 3, 3).unwrap();
        assert_eq!(rf.valid_count, 3);
        assert_eq!(rf.distances, vec![1.0, 2.0, 5.0]);
        assert_eq!(max_distance(&rf), 5.0);

        assert!(receptive_field(&c, &idx, 0, 0, 3).is_err());
        assert!(receptive_field(&c, &idx, 0, 4, 3).is_err());
        let one = cloud(&[[0.0, 0.0, 0.0]]);
        let one_idx = SpatialIndex::build(&one);
        assert!(matches!(
            receptive_field(&one, &one_idx, 0, 1, 3),
            Err(AscnError::DegenerateCloud(_))
        ));
    }

    #[test]
    fn collinear_build() {
        let c = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        let idx = SpatialIndex::build(&c);
        assert_eq!(idx.k_nearest(1, 2), vec![0, 2]);
    }
}
