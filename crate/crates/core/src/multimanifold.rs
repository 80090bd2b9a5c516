//! Dyadic-cube partitioning of a stratum and per-leaf linear fits.
//!
//! A stratum of intrinsic dimension `i` is covered by a binary tree of
//! axis-cycling dyadic cubes rooted at an inflated bounding cube. A cube
//! becomes a leaf once the variance-based dimension of its members drops
//! to `i` or below (or the depth bound is reached); each leaf contributes
//! one linear component: the best-fit affine subspace through the member
//! centroid. Cubes left with fewer members than the minimum leaf size are
//! discarded and their points only counted.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{best_fit_affine, center_and_svd, AffineSubspace, PointCloud};
use crate::idim::d_vid;

/// Relative inflation applied to the root cube so every point is strictly
/// interior or on a low face; also the side floor for degenerate input.
const ROOT_INFLATION: f64 = 1e-9;

/// An axis-aligned dyadic cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DyadicCube {
    /// Minimum corner.
    pub lo: Vec<f64>,
    /// Side lengths (equal at the root; halved one axis at a time below).
    pub side: Vec<f64>,
    pub depth: usize,
    /// Axis this cube splits along when subdivided: `depth mod D`.
    pub split_axis: usize,
}

impl DyadicCube {
    fn new(lo: Vec<f64>, side: Vec<f64>, depth: usize) -> Self {
        let split_axis = depth % lo.len();
        DyadicCube {
            lo,
            side,
            depth,
            split_axis,
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Midpoint of the split axis. Locating and building must evaluate
    /// this identically, so the expression is defined once.
    pub fn split_midpoint(&self) -> f64 {
        self.lo[self.split_axis] + self.side[self.split_axis] * 0.5
    }

    /// The two children of the bisection; a point on the midpoint belongs
    /// to the upper child.
    pub fn children(&self) -> (DyadicCube, DyadicCube) {
        let ax = self.split_axis;
        let mid = self.split_midpoint();
        let mut side = self.side.clone();
        side[ax] *= 0.5;
        let lower = DyadicCube::new(self.lo.clone(), side.clone(), self.depth + 1);
        let mut lo_u = self.lo.clone();
        lo_u[ax] = mid;
        let upper = DyadicCube::new(lo_u, side, self.depth + 1);
        (lower, upper)
    }

    /// Closed containment test used for the root cube only; interior cubes
    /// are resolved by descent, never by face comparisons.
    fn contains_closed(&self, x: &[f64]) -> bool {
        self.lo
            .iter()
            .zip(&self.side)
            .zip(x)
            .all(|((l, s), v)| *v >= *l && *v <= *l + *s)
    }
}

/// One leaf of the dyadic tree: its cube, the best-fit affine subspace of
/// the members, and the centered singular value spectrum behind the fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearComponent {
    pub cube: DyadicCube,
    pub subspace: AffineSubspace,
    /// Stratum point indices inside the cube, ascending.
    pub member_ids: Vec<usize>,
    /// Squared singular values of the centered member matrix, descending.
    pub sv_squared: Vec<f64>,
}

impl LinearComponent {
    pub fn member_count(&self) -> usize {
        self.member_ids.len()
    }

    pub fn total_variance(&self) -> f64 {
        self.sv_squared.iter().sum()
    }
}

/// Construction parameters for one dyadic linear multi-manifold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildParams {
    /// Variance threshold used by the stopping rule. Splitting stops once
    /// the member set needs at most `stratum_dim` directions to capture
    /// fraction `t` of its variance; this threshold governs how coarse the
    /// partition is and is deliberately laxer by default than the 0.95
    /// used for stratification.
    pub t: f64,
    /// Minimum points a cube must keep to stay in the manifold; `None`
    /// applies `max(ceil(K ln K), 2 i + 2)` where `K` is the largest
    /// observed intrinsic dimension.
    pub min_leaf_points: Option<usize>,
    /// Depth bound of the dyadic tree.
    pub max_depth: usize,
    /// Largest intrinsic dimension observed across the strata, when known;
    /// feeds the default minimum leaf size.
    pub max_observed_dim: Option<usize>,
}

impl Default for BuildParams {
    fn default() -> Self {
        BuildParams {
            t: 0.85,
            min_leaf_points: None,
            max_depth: 12,
            max_observed_dim: None,
        }
    }
}

impl BuildParams {
    /// The minimum leaf size in effect for a stratum of dimension `i`.
    pub fn resolved_min_leaf(&self, stratum_dim: usize) -> usize {
        if let Some(m) = self.min_leaf_points {
            return m.max(2);
        }
        let k = self.max_observed_dim.unwrap_or(stratum_dim).max(1) as f64;
        let klogk = (k * k.ln()).ceil() as usize;
        klogk.max(2 * stratum_dim + 2).max(2)
    }
}

/// A dyadic linear multi-manifold approximating one stratum.
#[derive(Debug, Clone)]
pub struct MultiManifold {
    pub stratum_dim: usize,
    pub components: Vec<LinearComponent>,
    pub params: BuildParams,
    /// Minimum leaf size the build actually used.
    pub min_leaf_points: usize,
    /// Points discarded with undersized cubes.
    pub dropped_count: usize,
    pub root: DyadicCube,
    /// Component indices grouped by depth, for leaf location.
    by_depth: BTreeMap<usize, Vec<usize>>,
}

impl PartialEq for MultiManifold {
    fn eq(&self, other: &Self) -> bool {
        self.stratum_dim == other.stratum_dim
            && self.components == other.components
            && self.params == other.params
            && self.min_leaf_points == other.min_leaf_points
            && self.dropped_count == other.dropped_count
            && self.root == other.root
    }
}

/// Smallest axis-aligned cube holding the subset: low corner at the
/// per-axis minima, side the largest extent inflated by `1e-9` relative
/// (floored at `1e-9` and centered for a degenerate subset).
pub fn root_cube(cloud: &PointCloud, ids: &[usize]) -> Result<DyadicCube> {
    if ids.is_empty() {
        return Err(Error::EmptySet { context: "root_cube" });
    }
    let d = cloud.dim();
    let mut lo = cloud.point(ids[0]).to_vec();
    let mut hi = lo.clone();
    for &i in &ids[1..] {
        let p = cloud.point(i);
        for a in 0..d {
            if p[a] < lo[a] {
                lo[a] = p[a];
            }
            if p[a] > hi[a] {
                hi[a] = p[a];
            }
        }
    }
    let extent = lo
        .iter()
        .zip(&hi)
        .map(|(l, h)| h - l)
        .fold(0.0f64, f64::max);
    let side = if extent > 0.0 {
        extent * (1.0 + ROOT_INFLATION)
    } else {
        // Degenerate subset: a tiny cube centered on the point.
        for l in &mut lo {
            *l -= ROOT_INFLATION * 0.5;
        }
        ROOT_INFLATION
    };
    Ok(DyadicCube::new(lo, vec![side; d], 0))
}

/// Bisect a cube along its split axis and partition the member indices;
/// points on the midpoint go to the upper child.
pub fn split_cube(
    cube: &DyadicCube,
    cloud: &PointCloud,
    members: &[usize],
) -> (DyadicCube, DyadicCube, Vec<usize>, Vec<usize>) {
    let (lower, upper) = cube.children();
    let ax = cube.split_axis;
    let mid = cube.split_midpoint();
    let mut lower_ids = Vec::new();
    let mut upper_ids = Vec::new();
    for &i in members {
        if cloud.point(i)[ax] >= mid {
            upper_ids.push(i);
        } else {
            lower_ids.push(i);
        }
    }
    (lower, upper, lower_ids, upper_ids)
}

/// Build the dyadic linear multi-manifold of one stratum.
///
/// Recursion, top-down: a cube with fewer than the minimum leaf size is
/// discarded (members counted in `dropped_count`); a cube whose members
/// have a defined variance-based dimension at most `stratum_dim`, or that
/// sits at the depth bound, becomes a leaf; anything else is bisected.
/// Each leaf's subspace dimension is `min(d_vid, stratum_dim)` so the
/// result is genuinely a `stratum_dim`-dimensional multi-manifold.
pub fn build_multimanifold(
    cloud: &PointCloud,
    stratum_ids: &[usize],
    stratum_dim: usize,
    params: &BuildParams,
) -> Result<MultiManifold> {
    if stratum_ids.is_empty() {
        return Err(Error::EmptyStratum { dim: stratum_dim });
    }
    let min_leaf = params.resolved_min_leaf(stratum_dim);
    let root = root_cube(cloud, stratum_ids)?;
    let mut components = Vec::new();
    let mut dropped = 0usize;

    let mut stack: Vec<(DyadicCube, Vec<usize>)> = vec![(root.clone(), stratum_ids.to_vec())];
    while let Some((cube, members)) = stack.pop() {
        if members.is_empty() {
            continue;
        }
        if members.len() < min_leaf {
            dropped += members.len();
            continue;
        }
        let dim = d_vid(cloud, &members, params.t, min_leaf);
        let is_leaf = matches!(dim, Some(d) if d <= stratum_dim) || cube.depth >= params.max_depth;
        if is_leaf {
            let fit_dim = dim.unwrap_or(stratum_dim).min(stratum_dim);
            let subspace = best_fit_affine(cloud, &members, fit_dim)?;
            let summary = center_and_svd(cloud, &members)?;
            components.push(LinearComponent {
                cube,
                subspace,
                member_ids: members,
                sv_squared: summary.singular_values.iter().map(|s| s * s).collect(),
            });
        } else {
            let (lower, upper, lower_ids, upper_ids) = split_cube(&cube, cloud, &members);
            // Lower child is pushed last so it pops first: components come
            // out in deterministic depth-first, lower-first order.
            stack.push((upper, upper_ids));
            stack.push((lower, lower_ids));
        }
    }

    Ok(MultiManifold::assemble(
        stratum_dim,
        components,
        params.clone(),
        min_leaf,
        dropped,
        root,
    ))
}

impl MultiManifold {
    fn assemble(
        stratum_dim: usize,
        components: Vec<LinearComponent>,
        params: BuildParams,
        min_leaf_points: usize,
        dropped_count: usize,
        root: DyadicCube,
    ) -> Self {
        let mut by_depth: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, c) in components.iter().enumerate() {
            by_depth.entry(c.cube.depth).or_default().push(i);
        }
        MultiManifold {
            stratum_dim,
            components,
            params,
            min_leaf_points,
            dropped_count,
            root,
            by_depth,
        }
    }

    /// Sum of member counts over all components.
    pub fn supported_points(&self) -> usize {
        self.components.iter().map(|c| c.member_count()).sum()
    }

    /// The unique component whose cube contains `x`, or `None` for points
    /// outside the root cube or in a discarded region.
    ///
    /// Resolution descends the implicit tree, recomputing each midpoint
    /// with the same arithmetic the build used, so containment is exact;
    /// only the root test compares against faces (closed on the outermost
    /// ones).
    pub fn locate_leaf(&self, x: &[f64]) -> Option<usize> {
        if x.len() != self.root.dim() || !self.root.contains_closed(x) {
            return None;
        }
        let max_depth = *self.by_depth.keys().next_back()?;
        let mut cube = self.root.clone();
        loop {
            if let Some(ids) = self.by_depth.get(&cube.depth) {
                // Cube corners on the same descent path are recomputed
                // bit-identically, so exact equality is the right test.
                if let Some(&ci) = ids.iter().find(|&&ci| self.components[ci].cube.lo == cube.lo) {
                    return Some(ci);
                }
            }
            if cube.depth >= max_depth {
                return None;
            }
            let ax = cube.split_axis;
            let mid = cube.split_midpoint();
            let (lower, upper) = cube.children();
            cube = if x[ax] >= mid { upper } else { lower };
        }
    }

    /// Versioned JSON document: parameters, root cube and the component
    /// list (cube, subspace, member ids, squared singular values).
    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&MultiManifoldDoc::from(self))?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let doc: MultiManifoldDoc = serde_json::from_str(s)?;
        doc.into_manifold()
    }
}

const MANIFOLD_DOC_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct MultiManifoldDoc {
    version: u32,
    stratum_dim: usize,
    params: BuildParams,
    min_leaf_points: usize,
    dropped_count: usize,
    root: DyadicCube,
    components: Vec<ComponentDoc>,
}

#[derive(Serialize, Deserialize)]
struct ComponentDoc {
    cube: DyadicCube,
    origin: Vec<f64>,
    basis: Vec<Vec<f64>>,
    subspace_dim: usize,
    member_count: usize,
    member_ids: Vec<usize>,
    sv_squared: Vec<f64>,
}

impl From<&MultiManifold> for MultiManifoldDoc {
    fn from(mm: &MultiManifold) -> Self {
        MultiManifoldDoc {
            version: MANIFOLD_DOC_VERSION,
            stratum_dim: mm.stratum_dim,
            params: mm.params.clone(),
            min_leaf_points: mm.min_leaf_points,
            dropped_count: mm.dropped_count,
            root: mm.root.clone(),
            components: mm
                .components
                .iter()
                .map(|c| ComponentDoc {
                    cube: c.cube.clone(),
                    origin: c.subspace.origin.clone(),
                    basis: c.subspace.basis.clone(),
                    subspace_dim: c.subspace.dim(),
                    member_count: c.member_count(),
                    member_ids: c.member_ids.clone(),
                    sv_squared: c.sv_squared.clone(),
                })
                .collect(),
        }
    }
}

impl MultiManifoldDoc {
    fn into_manifold(self) -> Result<MultiManifold> {
        if self.version != MANIFOLD_DOC_VERSION {
            return Err(Error::InvalidParam(format!(
                "unsupported multi-manifold document version {}",
                self.version
            )));
        }
        let components = self
            .components
            .into_iter()
            .map(|c| {
                if c.basis.len() != c.subspace_dim {
                    return Err(Error::InvalidParam(
                        "component basis length disagrees with its dimension".into(),
                    ));
                }
                Ok(LinearComponent {
                    cube: c.cube,
                    subspace: AffineSubspace {
                        origin: c.origin,
                        basis: c.basis,
                    },
                    member_ids: c.member_ids,
                    sv_squared: c.sv_squared,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MultiManifold::assemble(
            self.stratum_dim,
            components,
            self.params,
            self.min_leaf_points,
            self.dropped_count,
            self.root,
        ))
    }
}
