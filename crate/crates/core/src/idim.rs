//! Variance-based intrinsic dimensions, stratification by dimension, and
//! the local entropic-graph (GMST) estimator.
//!
//! The variance-based intrinsic dimension of a point set is the smallest
//! `i` whose leading `i` squared singular values capture at least fraction
//! `t` of the total variance. The local variant evaluates this over a
//! ladder of neighborhoods around each point and takes the minimum over
//! the scales whose cardinality exceeds the cutoff `c`; points for which
//! no scale qualifies are reported as undefined and excluded from strata.

use std::collections::BTreeMap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{centered_singular_values, dist_sq, PointCloud};
use crate::neighborhoods::{DistanceLadder, NeighborhoodSpec};

/// Parameters of the local intrinsic-dimension estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdParams {
    /// Variance threshold in (0, 1].
    pub t: f64,
    /// Cutoff count: a neighborhood qualifies only if it has strictly more
    /// than `cutoff` members.
    pub cutoff: usize,
    pub spec: NeighborhoodSpec,
}

impl IdParams {
    pub fn new(t: f64, cutoff: usize, spec: NeighborhoodSpec) -> Result<Self> {
        if !(t.is_finite() && t > 0.0 && t <= 1.0) {
            return Err(Error::InvalidParam(format!(
                "variance threshold t = {t} must lie in (0, 1]"
            )));
        }
        if cutoff == 0 {
            return Err(Error::InvalidParam("cutoff must be at least 1".into()));
        }
        Ok(IdParams { t, cutoff, spec })
    }
}

/// Per-point local intrinsic dimension with the evidence behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalIdRecord {
    pub point_id: usize,
    /// Minimum dimension over the qualifying scales; `None` when no scale
    /// qualifies.
    pub dimension: Option<usize>,
    /// `(scale value, dimension)` per ladder entry, in spec order.
    pub per_scale_dims: Vec<(f64, Option<usize>)>,
    /// Index into the spec list where the minimum was attained (lowest
    /// index on ties); `None` when undefined.
    pub argmin_scale_index: Option<usize>,
    /// Mean total variance over the scales where the dimension was
    /// defined; 0 when undefined everywhere.
    pub energy: f64,
}

/// Partition of the cloud indices by local intrinsic dimension.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Strata {
    /// Index set per dimension value, ascending keys, ascending members.
    pub groups: BTreeMap<usize, Vec<usize>>,
    /// Points with undefined dimension.
    pub unclassified: Vec<usize>,
}

impl Strata {
    /// Largest dimension present, if any stratum is non-empty.
    pub fn max_dimension(&self) -> Option<usize> {
        self.groups.keys().next_back().copied()
    }
}

/// Variance-based intrinsic dimension of a point subset, or `None` when
/// the subset does not exceed the cutoff. Zero total variance (a repeated
/// point) yields dimension 0.
pub fn d_vid(cloud: &PointCloud, ids: &[usize], t: f64, cutoff: usize) -> Option<usize> {
    if ids.len() <= cutoff || ids.is_empty() {
        return None;
    }
    let (sv, total) = centered_singular_values(cloud, ids);
    Some(dim_from_singular_values(&sv, total, t))
}

fn dim_from_singular_values(sv: &[f64], total: f64, t: f64) -> usize {
    if total <= 0.0 {
        return 0;
    }
    let target = t * total;
    let mut cum = 0.0;
    for (i, s) in sv.iter().enumerate() {
        cum += s * s;
        if cum >= target {
            return i + 1;
        }
    }
    sv.len()
}

/// Local intrinsic dimension of one point across the neighborhood ladder.
pub fn d_vlid(cloud: &PointCloud, p: usize, params: &IdParams) -> LocalIdRecord {
    let ladder = DistanceLadder::new(cloud, p);
    d_vlid_with_ladder(cloud, p, params, &ladder)
}

fn d_vlid_with_ladder(
    cloud: &PointCloud,
    p: usize,
    params: &IdParams,
    ladder: &DistanceLadder,
) -> LocalIdRecord {
    let n = cloud.len();
    let mut per_scale = Vec::with_capacity(params.spec.len());
    let mut energy_sum = 0.0;
    let mut energy_count = 0usize;

    let mut eval_prefix = |len: usize| -> (Option<usize>, f64) {
        if len <= params.cutoff {
            return (None, 0.0);
        }
        let ids = ladder.prefix_sorted(len);
        let (sv, total) = centered_singular_values(cloud, &ids);
        (Some(dim_from_singular_values(&sv, total, params.t)), total)
    };

    match &params.spec {
        NeighborhoodSpec::BallRadii(radii) => {
            // Consecutive radii often trap the same prefix; reuse the
            // evaluation when the member count is unchanged.
            let mut prev: Option<(usize, (Option<usize>, f64))> = None;
            for &r in radii {
                let len = ladder.ball_len(r);
                let entry = match &prev {
                    Some((plen, res)) if *plen == len => *res,
                    _ => {
                        let res = eval_prefix(len);
                        prev = Some((len, res));
                        res
                    }
                };
                if entry.0.is_some() {
                    energy_sum += entry.1;
                    energy_count += 1;
                }
                per_scale.push((r, entry.0));
            }
        }
        NeighborhoodSpec::KnnCounts(counts) => {
            for &k in counts {
                let entry = if k > n { (None, 0.0) } else { eval_prefix(k) };
                if entry.0.is_some() {
                    energy_sum += entry.1;
                    energy_count += 1;
                }
                per_scale.push((k as f64, entry.0));
            }
        }
    }

    let mut dimension: Option<usize> = None;
    let mut argmin: Option<usize> = None;
    for (i, (_, d)) in per_scale.iter().enumerate() {
        if let Some(d) = d {
            if dimension.map_or(true, |best| *d < best) {
                dimension = Some(*d);
                argmin = Some(i);
            }
        }
    }

    LocalIdRecord {
        point_id: p,
        dimension,
        per_scale_dims: per_scale,
        argmin_scale_index: argmin,
        energy: if energy_count > 0 {
            energy_sum / energy_count as f64
        } else {
            0.0
        },
    }
}

/// One [`LocalIdRecord`] per point, order-aligned with the cloud indices.
/// Deterministic for a given cloud and parameter set regardless of worker
/// scheduling.
pub fn compute_all_ids(cloud: &PointCloud, params: &IdParams) -> Result<Vec<LocalIdRecord>> {
    if cloud.is_empty() {
        return Err(Error::EmptySet {
            context: "compute_all_ids",
        });
    }
    if let NeighborhoodSpec::KnnCounts(counts) = &params.spec {
        if let Some(&k) = counts.iter().find(|&&k| k > cloud.len()) {
            return Err(Error::KExceedsCloud { k, n: cloud.len() });
        }
    }
    Ok((0..cloud.len())
        .into_par_iter()
        .map(|p| {
            let ladder = DistanceLadder::new(cloud, p);
            d_vlid_with_ladder(cloud, p, params, &ladder)
        })
        .collect())
}

/// Group record indices by defined dimension; undefined points go to
/// `unclassified`.
pub fn stratify(records: &[LocalIdRecord]) -> Strata {
    let mut strata = Strata::default();
    for r in records {
        match r.dimension {
            Some(d) => strata.groups.entry(d).or_default().push(r.point_id),
            None => strata.unclassified.push(r.point_id),
        }
    }
    strata
}

/// Lexicographic scale code for plotting: `dimension * |spec| - argmin`,
/// so higher dimensions sort above lower ones and, within a dimension,
/// minima attained at finer scales sort higher. The energy channel is the
/// record's mean total variance. Undefined points get `(-1, 0)`.
pub fn diagnostic_encodings(records: &[LocalIdRecord], spec: &NeighborhoodSpec) -> Vec<(i64, f64)> {
    let scale_count = spec.len() as i64;
    records
        .iter()
        .map(|r| match (r.dimension, r.argmin_scale_index) {
            (Some(d), Some(a)) => (d as i64 * scale_count - a as i64, r.energy),
            _ => (-1, 0.0),
        })
        .collect()
}

/// Options for the local GMST estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmstParams {
    /// Neighbors per vertex in the length graph.
    pub k: usize,
    /// Edge-weight exponent.
    pub gamma: f64,
    /// Seed for the subset draws inside the local window.
    pub seed: u64,
    /// Fit the growth law once over all subset sizes (default), or fit a
    /// slope per consecutive size pair and average the implied dimensions.
    pub per_pair_average: bool,
}

impl Default for GmstParams {
    fn default() -> Self {
        GmstParams {
            k: 5,
            gamma: 1.0,
            seed: 0,
            per_pair_average: false,
        }
    }
}

/// Result of the GMST growth-law fit at one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmstFit {
    pub point_id: usize,
    pub n_values: Vec<usize>,
    pub edge_lengths: Vec<f64>,
    /// Fitted multiplicative constant of the growth law.
    pub a: f64,
    /// Fitted dimension, clamped to `[1, D]`.
    pub d_est: f64,
    pub d_rounded: usize,
    /// Set when the raw exponent implied a dimension outside `[1, D]`.
    pub clamped: bool,
}

/// Total edge length of the k-nearest-neighbor graph restricted to
/// `members`: for every member, the sum of `|x_l - x_j|^gamma` over its
/// `k` nearest fellow members (self excluded).
pub fn gmst_edge_length(
    cloud: &PointCloud,
    members: &[usize],
    k: usize,
    gamma: f64,
) -> Result<f64> {
    let n = members.len();
    if k >= n {
        return Err(Error::KExceedsNeighborhood { k, n });
    }
    let mut total = 0.0;
    let mut d2 = Vec::with_capacity(n - 1);
    for &j in members {
        d2.clear();
        let pj = cloud.point(j);
        for &l in members {
            if l != j {
                d2.push((dist_sq(cloud.point(l), pj), l));
            }
        }
        d2.select_nth_unstable_by(k - 1, |a, b| {
            a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1))
        });
        total += d2[..k]
            .iter()
            .map(|(dd, _)| dd.sqrt().powf(gamma))
            .sum::<f64>();
    }
    Ok(total)
}

/// Local GMST dimension at point `p`.
///
/// The growth law `L(n) ~ a * n^((d - gamma)/d)` holds for samples of
/// increasing size drawn from a fixed support, so the estimator fixes the
/// window to the `max(n_range)` nearest neighbors of `p` and measures the
/// kNN-graph length of nested random subsets of the sizes in `n_range`
/// (a seeded shuffle makes the subsets deterministic). The dimension is
/// recovered from the log-log slope and clamped to `[1, D]`.
pub fn gmst_local_dimension(
    cloud: &PointCloud,
    p: usize,
    n_range: &[usize],
    params: &GmstParams,
) -> Result<GmstFit> {
    if n_range.is_empty() {
        return Err(Error::GmstFitFailed {
            reason: "empty n_range".into(),
            trace: vec![],
        });
    }
    let n_max = *n_range.iter().max().unwrap();
    for &n in n_range {
        if n <= params.k {
            return Err(Error::KExceedsNeighborhood { k: params.k, n });
        }
        if n > cloud.len() {
            return Err(Error::KExceedsCloud { k: n, n: cloud.len() });
        }
    }
    if n_range.len() < 2 {
        return Err(Error::GmstFitFailed {
            reason: "a single neighborhood size leaves the two-parameter growth law under-determined".into(),
            trace: vec![],
        });
    }

    let ladder = DistanceLadder::new(cloud, p);
    let mut window = ladder.prefix_sorted(n_max);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(p as u64);
    window.shuffle(&mut rng);

    let mut lengths = Vec::with_capacity(n_range.len());
    for &n in n_range {
        lengths.push(gmst_edge_length(cloud, &window[..n], params.k, params.gamma)?);
    }
    if lengths.iter().any(|&l| !(l.is_finite() && l > 0.0)) {
        return Err(Error::GmstFitFailed {
            reason: "non-positive edge length in the growth trace".into(),
            trace: lengths,
        });
    }

    let ambient = cloud.dim() as f64;
    let log_n: Vec<f64> = n_range.iter().map(|&n| (n as f64).ln()).collect();
    let log_l: Vec<f64> = lengths.iter().map(|&l| l.ln()).collect();

    let (a, d_est, clamped) = if params.per_pair_average {
        let mut dims = Vec::new();
        let mut any_clamped = false;
        for i in 0..log_n.len() - 1 {
            let e = (log_l[i + 1] - log_l[i]) / (log_n[i + 1] - log_n[i]);
            let (d, c) = dim_from_exponent(e, params.gamma, ambient);
            dims.push(d);
            any_clamped |= c;
        }
        let d = dims.iter().sum::<f64>() / dims.len() as f64;
        (f64::NAN, d, any_clamped)
    } else {
        let (intercept, slope) = linear_fit(&log_n, &log_l).ok_or_else(|| Error::GmstFitFailed {
            reason: "degenerate least-squares system".into(),
            trace: lengths.clone(),
        })?;
        let (d, c) = dim_from_exponent(slope, params.gamma, ambient);
        (intercept.exp(), d, c)
    };

    Ok(GmstFit {
        point_id: p,
        n_values: n_range.to_vec(),
        edge_lengths: lengths,
        a,
        d_est,
        d_rounded: d_est.round() as usize,
        clamped,
    })
}

/// Solve `e = (d - gamma)/d` for `d` and clamp into `[1, ambient]`.
fn dim_from_exponent(e: f64, gamma: f64, ambient: f64) -> (f64, bool) {
    if e >= 1.0 {
        // The law degenerates as d -> infinity; report the ambient bound.
        return (ambient, true);
    }
    let d = gamma / (1.0 - e);
    if d < 1.0 {
        (1.0, true)
    } else if d > ambient {
        (ambient, true)
    } else {
        (d, false)
    }
}

fn linear_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return None;
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    Some((intercept, slope))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn all_ids(c: &PointCloud) -> Vec<usize> {
        (0..c.len()).collect()
    }

    #[test]
    fn colinear_points_have_dimension_one() {
        let rows: Vec<Vec<f64>> = (0..20).map(|k| vec![k as f64, 0.0, 0.0]).collect();
        let c = PointCloud::from_rows(&rows).unwrap();
        assert_eq!(d_vid(&c, &all_ids(&c), 0.95, 10), Some(1));
    }

    #[test]
    fn circle_needs_both_directions() {
        let rows: Vec<Vec<f64>> = (0..100)
            .map(|k| {
                let a = k as f64 / 100.0 * std::f64::consts::TAU;
                vec![a.cos(), a.sin()]
            })
            .collect();
        let c = PointCloud::from_rows(&rows).unwrap();
        // By symmetry the two variance shares are about 1/2 each, so the
        // first direction alone cannot reach 95%.
        assert_eq!(d_vid(&c, &all_ids(&c), 0.95, 10), Some(2));
    }

    #[test]
    fn cutoff_is_strict() {
        let rows: Vec<Vec<f64>> = (0..10).map(|k| vec![k as f64]).collect();
        let c = PointCloud::from_rows(&rows).unwrap();
        assert_eq!(d_vid(&c, &all_ids(&c), 0.95, 10), None);
        assert_eq!(d_vid(&c, &all_ids(&c), 0.95, 9), Some(1));
    }

    #[test]
    fn zero_variance_is_dimension_zero() {
        let c = PointCloud::from_rows(&vec![vec![2.0, 2.0]; 8]).unwrap();
        assert_eq!(d_vid(&c, &all_ids(&c), 0.95, 3), Some(0));
    }

    #[test]
    fn monotone_in_t() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let rows: Vec<Vec<f64>> = (0..40)
                .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let c = PointCloud::from_rows(&rows).unwrap();
            let ids = all_ids(&c);
            let mut prev = 0usize;
            for t in [0.3, 0.5, 0.7, 0.9, 0.99] {
                let d = d_vid(&c, &ids, t, 5).unwrap();
                assert!(d >= prev, "dimension must not drop as t grows");
                prev = d;
            }
        }
    }

    #[test]
    fn isolated_point_is_undefined() {
        // Two far clusters; tiny radii leave every neighborhood at or
        // below the cutoff.
        let c = PointCloud::from_rows(&[vec![0.0, 0.0], vec![100.0, 0.0]]).unwrap();
        let params = IdParams::new(
            0.95,
            1,
            NeighborhoodSpec::ball_radii(vec![0.5, 0.25]).unwrap(),
        )
        .unwrap();
        let rec = d_vlid(&c, 0, &params);
        assert_eq!(rec.dimension, None);
        assert_eq!(rec.argmin_scale_index, None);
        assert_eq!(rec.energy, 0.0);
    }

    #[test]
    fn planar_disk_is_dimension_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut rows: Vec<Vec<f64>> = (0..400)
            .map(|_| {
                let r: f64 = rng.gen_range(0.0f64..1.0).sqrt();
                let a = rng.gen_range(0.0..std::f64::consts::TAU);
                vec![r * a.cos(), r * a.sin(), 0.0]
            })
            .collect();
        rows[0] = vec![0.0, 0.0, 0.0];
        let c = PointCloud::from_rows(&rows).unwrap();
        let params = IdParams::new(
            0.95,
            10,
            NeighborhoodSpec::ball_radii(vec![1.0, 0.5, 0.25]).unwrap(),
        )
        .unwrap();
        let rec = d_vlid(&c, 0, &params);
        assert_eq!(rec.dimension, Some(2));
    }

    #[test]
    fn two_point_cloud_with_generous_ball() {
        let c = PointCloud::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let params =
            IdParams::new(0.95, 1, NeighborhoodSpec::ball_radii(vec![10.0]).unwrap()).unwrap();
        let recs = compute_all_ids(&c, &params).unwrap();
        assert!(recs.iter().all(|r| r.dimension.is_some()));
    }

    #[test]
    fn stratify_partitions() {
        let mk = |id: usize, d: Option<usize>| LocalIdRecord {
            point_id: id,
            dimension: d,
            per_scale_dims: vec![],
            argmin_scale_index: d.map(|_| 0),
            energy: 0.0,
        };
        let records = vec![mk(0, Some(1)), mk(1, Some(2)), mk(2, Some(2)), mk(3, None)];
        let s = stratify(&records);
        assert_eq!(s.groups[&1], vec![0]);
        assert_eq!(s.groups[&2], vec![1, 2]);
        assert_eq!(s.unclassified, vec![3]);
        assert_eq!(s.max_dimension(), Some(2));

        let all_one = vec![mk(0, Some(1)), mk(1, Some(1))];
        let s = stratify(&all_one);
        assert_eq!(s.groups.len(), 1);
        assert!(s.unclassified.is_empty());
    }

    #[test]
    fn lex_codes() {
        let spec = NeighborhoodSpec::ball_radii((1..=20).rev().map(|i| i as f64 * 0.1).collect())
            .unwrap();
        let mk = |d: Option<usize>, arg: Option<usize>| LocalIdRecord {
            point_id: 0,
            dimension: d,
            per_scale_dims: vec![],
            argmin_scale_index: arg,
            energy: 1.5,
        };
        let recs = vec![
            mk(Some(2), Some(0)),
            mk(None, None),
            mk(Some(3), Some(3)),
            mk(Some(3), Some(5)),
        ];
        let codes = diagnostic_encodings(&recs, &spec);
        assert_eq!(codes[0], (40, 1.5));
        assert_eq!(codes[1], (-1, 0.0));
        assert_eq!(codes[2].0 - codes[3].0, 2);
    }

    #[test]
    fn gmst_edge_length_pairs() {
        // Two points at distance 2, k = 1, gamma = 1: each contributes 2.
        let c = PointCloud::from_rows(&[vec![0.0], vec![2.0]]).unwrap();
        assert_eq!(gmst_edge_length(&c, &[0, 1], 1, 1.0).unwrap(), 4.0);

        // Colinear at 0, 1, 3: nearest-neighbor lengths 1 + 1 + 2.
        let c = PointCloud::from_rows(&[vec![0.0], vec![1.0], vec![3.0]]).unwrap();
        assert_eq!(gmst_edge_length(&c, &[0, 1, 2], 1, 1.0).unwrap(), 4.0);
        // gamma = 2 squares each edge: 1 + 1 + 4.
        assert_eq!(gmst_edge_length(&c, &[0, 1, 2], 1, 2.0).unwrap(), 6.0);

        assert!(matches!(
            gmst_edge_length(&c, &[0, 1], 2, 1.0),
            Err(Error::KExceedsNeighborhood { .. })
        ));
    }

    #[test]
    fn gmst_scales_with_gamma_power() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let c = PointCloud::from_rows(&rows).unwrap();
        let s = 3.0f64;
        let scaled = PointCloud::from_flat(3, c.as_flat().iter().map(|v| v * s).collect()).unwrap();
        let ids = all_ids(&c);
        for gamma in [1.0, 2.0] {
            let l1 = gmst_edge_length(&c, &ids, 4, gamma).unwrap();
            let l2 = gmst_edge_length(&scaled, &ids, 4, gamma).unwrap();
            assert!((l2 - s.powf(gamma) * l1).abs() < 1e-9 * l2.abs());
        }
    }

    #[test]
    fn gmst_single_size_is_underdetermined() {
        let rows: Vec<Vec<f64>> = (0..400).map(|k| vec![k as f64 * 0.01, 0.0, 0.0]).collect();
        let c = PointCloud::from_rows(&rows).unwrap();
        assert!(matches!(
            gmst_local_dimension(&c, 200, &[300], &GmstParams::default()),
            Err(Error::GmstFitFailed { .. })
        ));
    }

    #[test]
    fn gmst_recovers_a_line() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut xs: Vec<f64> = (0..800).map(|_| rng.gen_range(0.0..10.0)).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x, 0.0, 0.0]).collect();
        let c = PointCloud::from_rows(&rows).unwrap();
        let n_range: Vec<usize> = (200..=400).step_by(25).collect();
        let fit = gmst_local_dimension(&c, 400, &n_range, &GmstParams::default()).unwrap();
        assert_eq!(fit.d_rounded, 1, "d_est = {}", fit.d_est);
        assert_eq!(fit.n_values.len(), fit.edge_lengths.len());
    }

    #[test]
    fn gmst_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let rows: Vec<Vec<f64>> = (0..500)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let c = PointCloud::from_rows(&rows).unwrap();
        let n_range: Vec<usize> = vec![100, 150, 200];
        let f1 = gmst_local_dimension(&c, 7, &n_range, &GmstParams::default()).unwrap();
        let f2 = gmst_local_dimension(&c, 7, &n_range, &GmstParams::default()).unwrap();
        assert_eq!(f1, f2);
    }
}
