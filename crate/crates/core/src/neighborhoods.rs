//! Neighborhood generation: metric balls at ladders of radii and
//! k-nearest-neighbor sets.
//!
//! Correctness is defined by the naive `O(n)` scan per query; the kd-tree
//! and the per-center distance ladder are accelerations that must return
//! identical index sets (same squared-distance comparisons, same
//! lowest-index tie-breaking). All returned member lists are sorted by
//! index so downstream floating-point reductions are order-stable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{dist_sq, PointCloud};

/// The ladder of neighborhoods evaluated around each design point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NeighborhoodSpec {
    /// Ball radii, strictly decreasing, all positive.
    BallRadii(Vec<f64>),
    /// Neighbor counts, strictly increasing, all at least 1.
    KnnCounts(Vec<usize>),
}

impl NeighborhoodSpec {
    pub fn ball_radii(radii: Vec<f64>) -> Result<Self> {
        if radii.is_empty() {
            return Err(Error::InvalidParam("radius list is empty".into()));
        }
        for pair in radii.windows(2) {
            if !(pair[1] < pair[0]) {
                return Err(Error::InvalidParam(
                    "radii must be strictly decreasing".into(),
                ));
            }
        }
        if radii.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::InvalidParam("radii must be positive and finite".into()));
        }
        Ok(NeighborhoodSpec::BallRadii(radii))
    }

    pub fn knn_counts(counts: Vec<usize>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::InvalidParam("neighbor count list is empty".into()));
        }
        for pair in counts.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::InvalidParam(
                    "neighbor counts must be strictly increasing".into(),
                ));
            }
        }
        if counts[0] == 0 {
            return Err(Error::InvalidParam("neighbor counts must be at least 1".into()));
        }
        Ok(NeighborhoodSpec::KnnCounts(counts))
    }

    /// Arithmetic radius ladder from `hi` down to `lo` in steps of `step`,
    /// both endpoints included (e.g. 2.0 down to 0.1 in decrements of 0.1).
    pub fn arithmetic_radii(hi: f64, lo: f64, step: f64) -> Result<Self> {
        if !(hi.is_finite() && lo.is_finite() && step.is_finite()) || step <= 0.0 || lo <= 0.0 || hi < lo {
            return Err(Error::InvalidParam(format!(
                "invalid arithmetic radius ladder {hi}:{lo}:{step}"
            )));
        }
        let steps = ((hi - lo) / step).round() as usize;
        let radii: Vec<f64> = (0..=steps).map(|i| hi - i as f64 * step).collect();
        NeighborhoodSpec::ball_radii(radii)
    }

    /// Number of scales in the ladder.
    pub fn len(&self) -> usize {
        match self {
            NeighborhoodSpec::BallRadii(r) => r.len(),
            NeighborhoodSpec::KnnCounts(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Scale values as plain numbers (radii, or counts cast to f64).
    pub fn scale_values(&self) -> Vec<f64> {
        match self {
            NeighborhoodSpec::BallRadii(r) => r.clone(),
            NeighborhoodSpec::KnnCounts(c) => c.iter().map(|&k| k as f64).collect(),
        }
    }
}

/// The member sets of one design point across the full ladder.
#[derive(Debug, Clone)]
pub struct NeighborhoodResult {
    pub center_id: usize,
    /// `(scale value, member indices)` in ladder order. Members are sorted
    /// ascending and always include the center.
    pub per_scale: Vec<(f64, Vec<usize>)>,
}

/// All indices within the closed ball of `radius` around the center point
/// (the center itself included), by exhaustive scan.
pub fn ball_neighborhood(cloud: &PointCloud, center: usize, radius: f64) -> Vec<usize> {
    let c = cloud.point(center);
    let r2 = radius * radius;
    (0..cloud.len())
        .filter(|&j| dist_sq(cloud.point(j), c) <= r2)
        .collect()
}

/// The `k` indices nearest to the center (the center counts as its own
/// 0-distance neighbor), distance ties broken by lower index. Exhaustive
/// scan; result sorted ascending.
pub fn knn_neighborhood(cloud: &PointCloud, center: usize, k: usize) -> Result<Vec<usize>> {
    let n = cloud.len();
    if k > n {
        return Err(Error::KExceedsCloud { k, n });
    }
    let c = cloud.point(center);
    let mut order: Vec<(f64, usize)> = (0..n).map(|j| (dist_sq(cloud.point(j), c), j)).collect();
    order.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let mut ids: Vec<usize> = order[..k].iter().map(|&(_, j)| j).collect();
    ids.sort_unstable();
    Ok(ids)
}

/// Dyadic radius ladder `diam * 2^-s` for `s = scale_lo..=scale_hi`,
/// descending, where `diam` is the largest per-axis coordinate extent.
pub fn dyadic_radii(cloud: &PointCloud, scale_lo: u32, scale_hi: u32) -> Result<Vec<f64>> {
    if scale_lo > scale_hi {
        return Err(Error::InvalidParam(format!(
            "scale_lo {scale_lo} exceeds scale_hi {scale_hi}"
        )));
    }
    let diam = cloud.coord_diameter();
    if diam <= 0.0 {
        return Err(Error::DegenerateDiameter);
    }
    Ok((scale_lo..=scale_hi)
        .map(|s| diam * 2f64.powi(-(s as i32)))
        .collect())
}

/// All squared distances from one center, sorted by `(distance, index)`.
///
/// Every ball in a descending radius ladder is a prefix of this order, and
/// every knn set is an exact-length prefix, so one `O(n log n)` pass serves
/// the entire ladder of a design point.
pub(crate) struct DistanceLadder {
    /// Point indices sorted by (squared distance, index).
    order: Vec<usize>,
    /// Squared distances aligned with `order` (non-decreasing).
    dist2: Vec<f64>,
}

impl DistanceLadder {
    pub fn new(cloud: &PointCloud, center: usize) -> Self {
        let c = cloud.point(center);
        let mut pairs: Vec<(f64, usize)> =
            (0..cloud.len()).map(|j| (dist_sq(cloud.point(j), c), j)).collect();
        pairs.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        DistanceLadder {
            order: pairs.iter().map(|&(_, j)| j).collect(),
            dist2: pairs.iter().map(|&(d, _)| d).collect(),
        }
    }

    /// Number of points with squared distance <= radius^2 (closed ball).
    pub fn ball_len(&self, radius: f64) -> usize {
        let r2 = radius * radius;
        self.dist2.partition_point(|&d| d <= r2)
    }

    /// The `len` nearest indices, sorted ascending.
    pub fn prefix_sorted(&self, len: usize) -> Vec<usize> {
        let mut ids = self.order[..len].to_vec();
        ids.sort_unstable();
        ids
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }
}

/// Member sets of the full ladder around one center, by the naive scan
/// semantics. Errors if a knn count exceeds the cloud size.
pub fn collect_neighborhoods(
    cloud: &PointCloud,
    center: usize,
    spec: &NeighborhoodSpec,
) -> Result<NeighborhoodResult> {
    let ladder = DistanceLadder::new(cloud, center);
    let mut per_scale = Vec::with_capacity(spec.len());
    match spec {
        NeighborhoodSpec::BallRadii(radii) => {
            for &r in radii {
                per_scale.push((r, ladder.prefix_sorted(ladder.ball_len(r))));
            }
        }
        NeighborhoodSpec::KnnCounts(counts) => {
            for &k in counts {
                if k > ladder.len() {
                    return Err(Error::KExceedsCloud { k, n: ladder.len() });
                }
                per_scale.push((k as f64, ladder.prefix_sorted(k)));
            }
        }
    }
    Ok(NeighborhoodResult {
        center_id: center,
        per_scale,
    })
}

const KD_LEAF_SIZE: usize = 24;

enum KdNode {
    Leaf {
        start: usize,
        end: usize,
    },
    Inner {
        axis: usize,
        split: f64,
        left: usize,
        right: usize,
    },
}

/// A kd-tree over a frozen cloud. Ball and knn queries return exactly the
/// sets the naive scan returns, including boundary points and index
/// tie-breaking; this equivalence is part of the test suite.
pub struct KdTree {
    nodes: Vec<KdNode>,
    ids: Vec<usize>,
    root: usize,
}

impl KdTree {
    pub fn build(cloud: &PointCloud) -> Self {
        let mut ids: Vec<usize> = (0..cloud.len()).collect();
        let mut nodes = Vec::new();
        let n = ids.len();
        let root = if n == 0 {
            nodes.push(KdNode::Leaf { start: 0, end: 0 });
            0
        } else {
            Self::build_rec(cloud, &mut ids, &mut nodes, 0, n, 0)
        };
        KdTree { nodes, ids, root }
    }

    fn build_rec(
        cloud: &PointCloud,
        ids: &mut [usize],
        nodes: &mut Vec<KdNode>,
        start: usize,
        end: usize,
        depth: usize,
    ) -> usize {
        let len = end - start;
        if len <= KD_LEAF_SIZE {
            nodes.push(KdNode::Leaf { start, end });
            return nodes.len() - 1;
        }
        let axis = depth % cloud.dim();
        let mid = len / 2;
        ids[start..end].select_nth_unstable_by(mid, |&a, &b| {
            cloud.point(a)[axis]
                .partial_cmp(&cloud.point(b)[axis])
                .unwrap()
                .then(a.cmp(&b))
        });
        let split = cloud.point(ids[start + mid])[axis];
        let left = Self::build_rec(cloud, ids, nodes, start, start + mid, depth + 1);
        let right = Self::build_rec(cloud, ids, nodes, start + mid, end, depth + 1);
        nodes.push(KdNode::Inner {
            axis,
            split,
            left,
            right,
        });
        nodes.len() - 1
    }

    /// Closed-ball query around an arbitrary location; sorted ascending.
    pub fn ball_at(&self, cloud: &PointCloud, q: &[f64], radius: f64) -> Vec<usize> {
        let r2 = radius * radius;
        let mut out = Vec::new();
        self.ball_rec(cloud, self.root, q, radius, r2, &mut out);
        out.sort_unstable();
        out
    }

    /// Closed-ball query around a member point; sorted ascending.
    pub fn ball(&self, cloud: &PointCloud, center: usize, radius: f64) -> Vec<usize> {
        self.ball_at(cloud, cloud.point(center), radius)
    }

    fn ball_rec(
        &self,
        cloud: &PointCloud,
        node: usize,
        q: &[f64],
        radius: f64,
        r2: f64,
        out: &mut Vec<usize>,
    ) {
        match self.nodes[node] {
            KdNode::Leaf { start, end } => {
                for &i in &self.ids[start..end] {
                    if dist_sq(cloud.point(i), q) <= r2 {
                        out.push(i);
                    }
                }
            }
            KdNode::Inner {
                axis,
                split,
                left,
                right,
            } => {
                let delta = q[axis] - split;
                if delta <= radius {
                    self.ball_rec(cloud, left, q, radius, r2, out);
                }
                if -delta <= radius {
                    self.ball_rec(cloud, right, q, radius, r2, out);
                }
            }
        }
    }

    /// The `k` nearest members of the cloud to `center`, ties broken by
    /// lower index; sorted ascending.
    pub fn knn(&self, cloud: &PointCloud, center: usize, k: usize) -> Result<Vec<usize>> {
        let n = cloud.len();
        if k > n {
            return Err(Error::KExceedsCloud { k, n });
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        let q = cloud.point(center).to_vec();
        // Max-heap of (dist2, idx); the root is the current worst candidate.
        let mut heap: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        self.knn_rec(cloud, self.root, &q, k, &mut heap);
        let mut ids: Vec<usize> = heap.into_iter().map(|(_, i)| i).collect();
        ids.sort_unstable();
        Ok(ids)
    }

    fn knn_rec(&self, cloud: &PointCloud, node: usize, q: &[f64], k: usize, heap: &mut Vec<(f64, usize)>) {
        fn worse(a: &(f64, usize), b: &(f64, usize)) -> bool {
            a.0 > b.0 || (a.0 == b.0 && a.1 > b.1)
        }
        fn push(heap: &mut Vec<(f64, usize)>, k: usize, item: (f64, usize)) {
            if heap.len() < k {
                heap.push(item);
                heap.sort_unstable_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(b.1.cmp(&a.1)));
            } else if worse(&heap[0], &item) {
                heap[0] = item;
                heap.sort_unstable_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(b.1.cmp(&a.1)));
            }
        }
        match self.nodes[node] {
            KdNode::Leaf { start, end } => {
                for &i in &self.ids[start..end] {
                    push(heap, k, (dist_sq(cloud.point(i), q), i));
                }
            }
            KdNode::Inner {
                axis,
                split,
                left,
                right,
            } => {
                let delta = q[axis] - split;
                let (near, far) = if delta < 0.0 { (left, right) } else { (right, left) };
                self.knn_rec(cloud, near, q, k, heap);
                // Must still visit the far side on exact plane-distance
                // ties: an equal-distance neighbor with a lower index may
                // live there.
                let worst = heap[0].0;
                if heap.len() < k || delta * delta <= worst {
                    self.knn_rec(cloud, far, q, k, heap);
                }
            }
        }
    }
}
