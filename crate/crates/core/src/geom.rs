//! Point clouds, centered singular value decompositions and affine
//! subspace fits.
//!
//! The centered SVD is the workhorse of the whole crate: intrinsic
//! dimensions, leaf fits and the SQD statistics all reduce to singular
//! values of a centered point matrix. Singular values are computed on the
//! centered n-by-D matrix directly (never on its covariance) so that small
//! tail values keep full relative accuracy; when n exceeds D the matrix is
//! first compressed by a QR factorization, which leaves the singular values
//! and right-singular vectors unchanged.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// An ordered set of points in `R^D` with stable 0-based identities.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    dim: usize,
    coords: Vec<f64>,
}

impl PointCloud {
    /// Build a cloud from flat row-major coordinates (`n * dim` values).
    pub fn from_flat(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParam("ambient dimension must be positive".into()));
        }
        if coords.len() % dim != 0 {
            return Err(Error::InvalidParam(format!(
                "coordinate buffer length {} is not a multiple of dim {}",
                coords.len(),
                dim
            )));
        }
        if let Some(bad) = coords.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "non-finite coordinate at point {}, axis {}",
                bad / dim,
                bad % dim
            )));
        }
        Ok(PointCloud { dim, coords })
    }

    /// Build a cloud from one row per point.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(|r| r.len()).unwrap_or(0);
        if dim == 0 {
            return Err(Error::InvalidParam(
                "cannot infer ambient dimension from empty input".into(),
            ));
        }
        let mut coords = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::InvalidParam(format!(
                    "point {} has {} coordinates, expected {}",
                    i,
                    r.len(),
                    dim
                )));
            }
            coords.extend_from_slice(r);
        }
        PointCloud::from_flat(dim, coords)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.coords
    }

    /// Per-axis minima and maxima.
    pub fn bounding_box(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        if self.is_empty() {
            return None;
        }
        let mut lo = self.point(0).to_vec();
        let mut hi = lo.clone();
        for p in self.iter().skip(1) {
            for a in 0..self.dim {
                if p[a] < lo[a] {
                    lo[a] = p[a];
                }
                if p[a] > hi[a] {
                    hi[a] = p[a];
                }
            }
        }
        Some((lo, hi))
    }

    /// Largest per-axis extent, `max_a (max_i x_ia - min_i x_ia)`.
    pub fn coord_diameter(&self) -> f64 {
        match self.bounding_box() {
            Some((lo, hi)) => lo
                .iter()
                .zip(&hi)
                .map(|(l, h)| h - l)
                .fold(0.0, f64::max),
            None => 0.0,
        }
    }

    /// Squared Euclidean distance between two member points.
    pub fn dist_sq(&self, i: usize, j: usize) -> f64 {
        dist_sq(self.point(i), self.point(j))
    }
}

pub(crate) fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Singular value summary of a centered point set.
#[derive(Debug, Clone)]
pub struct SvdSummary {
    /// Centroid of the input set.
    pub mean: Vec<f64>,
    /// Singular values of the centered matrix, non-increasing, length
    /// `min(n, D)`.
    pub singular_values: Vec<f64>,
    /// Right-singular vectors aligned with `singular_values`, each of
    /// length `D`, pairwise orthonormal.
    pub basis: Vec<Vec<f64>>,
    /// Number of input points.
    pub count: usize,
}

impl SvdSummary {
    /// Total variance `sum(sigma_j^2)` of the centered set (no
    /// normalization by the point count).
    pub fn total_variance(&self) -> f64 {
        self.singular_values.iter().map(|s| s * s).sum()
    }

    /// Tail variance `sum_{j > d} sigma_j^2` beyond the leading `d`
    /// singular values.
    pub fn tail_variance(&self, d: usize) -> f64 {
        self.singular_values
            .iter()
            .skip(d)
            .map(|s| s * s)
            .sum()
    }
}

/// Total variance of a summary; see [`SvdSummary::total_variance`].
pub fn total_variance(summary: &SvdSummary) -> f64 {
    summary.total_variance()
}

/// An affine subspace `origin + span(basis)` of dimension `basis.len()`.
///
/// Zero basis vectors is legal and denotes the single point `origin`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AffineSubspace {
    pub origin: Vec<f64>,
    pub basis: Vec<Vec<f64>>,
}

impl AffineSubspace {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn ambient_dim(&self) -> usize {
        self.origin.len()
    }

    /// Squared Euclidean distance from `x` to the subspace.
    ///
    /// Computed by explicitly subtracting the projection, which keeps the
    /// residual accurate even when it is many orders of magnitude below
    /// `|x - origin|`.
    pub fn distance_sq(&self, x: &[f64]) -> f64 {
        let mut r: Vec<f64> = x.iter().zip(&self.origin).map(|(a, b)| a - b).collect();
        for b in &self.basis {
            let c: f64 = r.iter().zip(b).map(|(ri, bi)| ri * bi).sum();
            for (ri, bi) in r.iter_mut().zip(b) {
                *ri -= c * bi;
            }
        }
        r.iter().map(|v| v * v).sum()
    }
}

fn centroid(cloud: &PointCloud, ids: &[usize]) -> Vec<f64> {
    let d = cloud.dim();
    let mut mean = vec![0.0; d];
    for &i in ids {
        for (m, v) in mean.iter_mut().zip(cloud.point(i)) {
            *m += v;
        }
    }
    let n = ids.len() as f64;
    for m in &mut mean {
        *m /= n;
    }
    mean
}

fn centered_matrix(cloud: &PointCloud, ids: &[usize], mean: &[f64]) -> DMatrix<f64> {
    let d = cloud.dim();
    DMatrix::from_fn(ids.len(), d, |r, c| cloud.point(ids[r])[c] - mean[c])
}

/// Singular values (descending) of a centered matrix, optionally with the
/// right-singular basis. Tall matrices are QR-compressed first.
fn svd_of_centered(m: DMatrix<f64>, want_basis: bool) -> (Vec<f64>, Vec<Vec<f64>>) {
    let (n, d) = m.shape();
    let compact = if n > d { m.qr().r() } else { m };
    let svd = compact.svd(false, want_basis);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let sv: Vec<f64> = order.iter().map(|&j| svd.singular_values[j]).collect();
    let basis = if want_basis {
        let vt = svd.v_t.expect("requested right-singular vectors");
        order
            .iter()
            .map(|&j| vt.row(j).iter().copied().collect())
            .collect()
    } else {
        Vec::new()
    };
    (sv, basis)
}

/// Centroid, singular values and right-singular basis of the centered
/// matrix of the selected points. `count = ids.len()`.
pub fn center_and_svd(cloud: &PointCloud, ids: &[usize]) -> Result<SvdSummary> {
    if ids.is_empty() {
        return Err(Error::EmptySet {
            context: "center_and_svd",
        });
    }
    let mean = centroid(cloud, ids);
    let (singular_values, basis) = svd_of_centered(centered_matrix(cloud, ids, &mean), true);
    Ok(SvdSummary {
        mean,
        singular_values,
        basis,
        count: ids.len(),
    })
}

/// Singular values only, plus their squared sum. Cheaper than
/// [`center_and_svd`] when no basis is needed (the intrinsic-dimension
/// ladder calls this tens of thousands of times).
pub(crate) fn centered_singular_values(cloud: &PointCloud, ids: &[usize]) -> (Vec<f64>, f64) {
    debug_assert!(!ids.is_empty());
    let mean = centroid(cloud, ids);
    let (sv, _) = svd_of_centered(centered_matrix(cloud, ids, &mean), false);
    let total = sv.iter().map(|s| s * s).sum();
    (sv, total)
}

/// Extend `basis` to `d` pairwise-orthonormal vectors using canonical axes.
/// Needed when the requested fit dimension exceeds the number of singular
/// directions a small point set provides.
fn complete_basis(basis: &mut Vec<Vec<f64>>, d: usize, ambient: usize) {
    let mut axis = 0;
    while basis.len() < d && axis < ambient {
        let mut v = vec![0.0; ambient];
        v[axis] = 1.0;
        for b in basis.iter() {
            let c: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= c * bi;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            for vi in &mut v {
                *vi /= norm;
            }
            basis.push(v);
        }
        axis += 1;
    }
}

/// Best-fit affine subspace of dimension `d` through the centroid: the
/// span of the first `d` right-singular vectors. Minimizes the total
/// squared orthogonal distance over all d-dimensional affine subspaces.
pub fn best_fit_affine(cloud: &PointCloud, ids: &[usize], d: usize) -> Result<AffineSubspace> {
    let ambient = cloud.dim();
    if d > ambient {
        return Err(Error::DimensionExceedsAmbient { d, ambient });
    }
    let summary = center_and_svd(cloud, ids)?;
    let mut basis: Vec<Vec<f64>> = summary.basis.iter().take(d).cloned().collect();
    if basis.len() < d {
        complete_basis(&mut basis, d, ambient);
    }
    Ok(AffineSubspace {
        origin: summary.mean,
        basis,
    })
}

/// Sum of squared Euclidean distances from the selected points to the
/// subspace. Serves as the exactness oracle for the singular-value-tail
/// identities used by the SQD statistics.
pub fn residual_sqd_exact(cloud: &PointCloud, ids: &[usize], subspace: &AffineSubspace) -> f64 {
    ids.iter()
        .map(|&i| subspace.distance_sq(cloud.point(i)))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn cloud(rows: &[&[f64]]) -> PointCloud {
        PointCloud::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn all_ids(c: &PointCloud) -> Vec<usize> {
        (0..c.len()).collect()
    }

    #[test]
    fn degenerate_repeated_point() {
        let c = cloud(&[&[3.0, -1.0]; 5]);
        let s = center_and_svd(&c, &all_ids(&c)).unwrap();
        assert_eq!(s.mean, vec![3.0, -1.0]);
        assert_eq!(s.count, 5);
        for sv in &s.singular_values {
            assert_eq!(*sv, 0.0);
        }
    }

    #[test]
    fn cross_has_equal_variances() {
        // {(1,0), (-1,0), (0,1), (0,-1)}: hand SVD of the centered 4x2
        // matrix gives sigma^2 = (2, 2).
        let c = cloud(&[&[1.0, 0.0], &[-1.0, 0.0], &[0.0, 1.0], &[0.0, -1.0]]);
        let s = center_and_svd(&c, &all_ids(&c)).unwrap();
        assert_relative_eq!(s.mean[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(s.mean[1], 0.0, epsilon = 1e-12);
        assert_relative_eq!(s.singular_values[0] * s.singular_values[0], 2.0, epsilon = 1e-9);
        assert_relative_eq!(s.singular_values[1] * s.singular_values[1], 2.0, epsilon = 1e-9);
        assert_relative_eq!(s.total_variance(), 4.0, epsilon = 1e-9);
    }

    #[test]
    fn colinear_integer_points() {
        // {(k,0,0) : k=1..10}: one nonzero sigma, sigma^2 = sum (k-5.5)^2 = 82.5.
        let rows: Vec<Vec<f64>> = (1..=10).map(|k| vec![k as f64, 0.0, 0.0]).collect();
        let c = PointCloud::from_rows(&rows).unwrap();
        let s = center_and_svd(&c, &all_ids(&c)).unwrap();
        assert_relative_eq!(s.mean[0], 5.5, epsilon = 1e-12);
        assert_relative_eq!(s.singular_values[0] * s.singular_values[0], 82.5, epsilon = 1e-9);
        for sv in &s.singular_values[1..] {
            assert!(sv.abs() < 1e-9);
        }
    }

    #[test]
    fn empty_subset_is_an_error() {
        let c = cloud(&[&[0.0, 0.0]]);
        assert!(matches!(
            center_and_svd(&c, &[]),
            Err(Error::EmptySet { .. })
        ));
    }

    #[test]
    fn total_variance_arithmetic() {
        let s = SvdSummary {
            mean: vec![0.0],
            singular_values: vec![2.0, 1.0],
            basis: vec![],
            count: 3,
        };
        assert_eq!(total_variance(&s), 5.0);
    }

    #[test]
    fn best_fit_d0_is_centroid() {
        let c = cloud(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let sub = best_fit_affine(&c, &all_ids(&c), 0).unwrap();
        assert_eq!(sub.dim(), 0);
        assert_relative_eq!(sub.origin[0], 2.0);
        assert_relative_eq!(sub.origin[1], 3.0);
    }

    #[test]
    fn best_fit_line_through_colinear_points() {
        let rows: Vec<Vec<f64>> = (0..10).map(|k| vec![k as f64, 2.0 * k as f64]).collect();
        let c = PointCloud::from_rows(&rows).unwrap();
        let ids = all_ids(&c);
        let sub = best_fit_affine(&c, &ids, 1).unwrap();
        assert!(residual_sqd_exact(&c, &ids, &sub) < 1e-18);
    }

    #[test]
    fn best_fit_dominant_axis() {
        let c = cloud(&[&[1.0, 0.0], &[-1.0, 0.0], &[0.0, 0.1], &[0.0, -0.1]]);
        let sub = best_fit_affine(&c, &all_ids(&c), 1).unwrap();
        // Dominant direction is the x axis.
        assert!(sub.basis[0][0].abs() > 0.999);
        assert!(sub.basis[0][1].abs() < 1e-3);
    }

    #[test]
    fn dimension_exceeding_ambient_is_an_error() {
        let c = cloud(&[&[0.0, 0.0], &[1.0, 1.0]]);
        assert!(matches!(
            best_fit_affine(&c, &[0, 1], 3),
            Err(Error::DimensionExceedsAmbient { d: 3, ambient: 2 })
        ));
    }

    #[test]
    fn residual_of_points_off_plane() {
        // {(0,0,1), (0,0,-1)} against the xy-plane: distances 1 and 1.
        let c = cloud(&[&[0.0, 0.0, 1.0], &[0.0, 0.0, -1.0]]);
        let plane = AffineSubspace {
            origin: vec![0.0; 3],
            basis: vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]],
        };
        assert_relative_eq!(residual_sqd_exact(&c, &[0, 1], &plane), 2.0, epsilon = 1e-12);
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize, d: usize) -> PointCloud {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        PointCloud::from_rows(&rows).unwrap()
    }

    #[test]
    fn eckart_young_residual_identity() {
        // residual of the best d-fit equals the singular value tail.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let c = random_cloud(&mut rng, 50, 4);
        let ids = all_ids(&c);
        let s = center_and_svd(&c, &ids).unwrap();
        for d in 0..=4 {
            let sub = best_fit_affine(&c, &ids, d).unwrap();
            let res = residual_sqd_exact(&c, &ids, &sub);
            let tail = s.tail_variance(d);
            let scale = s.total_variance().max(1e-300);
            assert!(
                (res - tail).abs() <= 1e-9 * scale,
                "d={d}: residual {res} vs tail {tail}"
            );
        }
    }

    #[test]
    fn basis_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(n, d) in &[(3usize, 5usize), (40, 3), (7, 7)] {
            let c = random_cloud(&mut rng, n, d);
            let s = center_and_svd(&c, &all_ids(&c)).unwrap();
            assert_eq!(s.singular_values.len(), n.min(d));
            for i in 0..s.basis.len() {
                for j in 0..s.basis.len() {
                    let dot: f64 = s.basis[i].iter().zip(&s.basis[j]).map(|(a, b)| a * b).sum();
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - want).abs() < 1e-9, "({i},{j}) dot {dot}");
                }
            }
            // Total variance equals the squared Frobenius norm of the
            // centered input.
            let mean = centroid(&c, &all_ids(&c));
            let frob: f64 = c
                .iter()
                .map(|p| p.iter().zip(&mean).map(|(x, m)| (x - m) * (x - m)).sum::<f64>())
                .sum();
            let tv = s.total_variance();
            assert!((tv - frob).abs() <= 1e-9 * frob.max(1e-300));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn permutation_invariance(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(2usize..30);
            let d = rng.gen_range(1usize..5);
            let c = random_cloud(&mut rng, n, d);
            let mut ids = all_ids(&c);
            let s1 = center_and_svd(&c, &ids).unwrap();
            ids.shuffle(&mut rng);
            let s2 = center_and_svd(&c, &ids).unwrap();
            for (a, b) in s1.mean.iter().zip(&s2.mean) {
                prop_assert!((a - b).abs() < 1e-9);
            }
            for (a, b) in s1.singular_values.iter().zip(&s2.singular_values) {
                prop_assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
            }
        }

        #[test]
        fn scaling_scales_singular_values(seed in 0u64..1000, scale in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(2usize..20);
            let d = rng.gen_range(1usize..4);
            let c = random_cloud(&mut rng, n, d);
            let scaled = PointCloud::from_flat(
                d,
                c.as_flat().iter().map(|v| v * scale).collect(),
            ).unwrap();
            let ids = all_ids(&c);
            let s1 = center_and_svd(&c, &ids).unwrap();
            let s2 = center_and_svd(&scaled, &ids).unwrap();
            for (a, b) in s1.singular_values.iter().zip(&s2.singular_values) {
                prop_assert!((a * scale - b).abs() < 1e-9 * (1.0 + b.abs()));
            }
            let tv1 = s1.total_variance();
            let tv2 = s2.total_variance();
            prop_assert!((tv1 * scale * scale - tv2).abs() < 1e-9 * (1.0 + tv2.abs()));
        }
    }
}
