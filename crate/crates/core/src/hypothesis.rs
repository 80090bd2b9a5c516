//! SQD statistics, train/test resampling distributions and the
//! multi-manifold hypothesis decision.
//!
//! For a component with fit dimension `d` and a test subset with centered
//! squared singular values `sigma_j^2`, two quantities are tracked: the
//! variance-threshold bound `(1 - t) * sum_j sigma_j^2` (the statistic the
//! test uses) and the exact tail `sum_{j > d} sigma_j^2` (the true sum of
//! squared distances to the best `d`-fit of the test subset). Whenever the
//! test subset's own variance dimension at threshold `t` is at most `d`,
//! the tail is bounded by the threshold form; both are reported.

use std::collections::BTreeMap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{center_and_svd, PointCloud};
use crate::idim::{compute_all_ids, stratify, IdParams};
use crate::multimanifold::{build_multimanifold, BuildParams, MultiManifold};

/// Per-component contribution to an SQD report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSqd {
    pub component: usize,
    pub supported: usize,
    pub sqd_bound: f64,
    pub sqd_exact: f64,
}

/// Sum-of-squared-distance statistics of a test set against one
/// multi-manifold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqdReport {
    pub per_component: Vec<ComponentSqd>,
    /// Sum of the per-component bounds.
    pub total_bound: f64,
    /// Sum of the per-component exact tails.
    pub total_exact: f64,
    /// Test points assigned to some component.
    pub supported: usize,
    /// Test points outside every component cube.
    pub unsupported: usize,
    /// `total_bound / supported`, 0 when nothing is supported.
    pub mean_bound: f64,
}

impl SqdReport {
    pub fn support_fraction(&self) -> f64 {
        let total = self.supported + self.unsupported;
        if total == 0 {
            0.0
        } else {
            self.supported as f64 / total as f64
        }
    }
}

/// Threshold bound and exact tail for one component's test members.
pub fn sqd_component(
    cloud: &PointCloud,
    test_members: &[usize],
    t: f64,
    d: usize,
) -> Result<(f64, f64)> {
    if test_members.is_empty() {
        return Err(Error::EmptySet {
            context: "sqd_component",
        });
    }
    let summary = center_and_svd(cloud, test_members)?;
    let bound = (1.0 - t) * summary.total_variance();
    let exact = summary.tail_variance(d);
    Ok((bound, exact))
}

/// Assign each test point to a component by leaf location and accumulate
/// the SQD statistics component by component.
pub fn sqd_total(
    test_cloud: &PointCloud,
    test_ids: &[usize],
    mm: &MultiManifold,
    t: f64,
) -> Result<SqdReport> {
    if test_cloud.dim() != mm.root.dim() {
        return Err(Error::InvalidParam(format!(
            "test cloud dimension {} does not match the manifold's ambient dimension {}",
            test_cloud.dim(),
            mm.root.dim()
        )));
    }
    let mut assigned: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut unsupported = 0usize;
    for &i in test_ids {
        match mm.locate_leaf(test_cloud.point(i)) {
            Some(ci) => assigned.entry(ci).or_default().push(i),
            None => unsupported += 1,
        }
    }

    let mut per_component = Vec::with_capacity(mm.components.len());
    let mut total_bound = 0.0;
    let mut total_exact = 0.0;
    let mut supported = 0usize;
    for (ci, comp) in mm.components.iter().enumerate() {
        let (count, bound, exact) = match assigned.get(&ci) {
            Some(ids) => {
                let (b, e) = sqd_component(test_cloud, ids, t, comp.subspace.dim())?;
                (ids.len(), b, e)
            }
            None => (0, 0.0, 0.0),
        };
        total_bound += bound;
        total_exact += exact;
        supported += count;
        per_component.push(ComponentSqd {
            component: ci,
            supported: count,
            sqd_bound: bound,
            sqd_exact: exact,
        });
    }

    let mean_bound = if supported > 0 {
        total_bound / supported as f64
    } else {
        0.0
    };
    Ok(SqdReport {
        per_component,
        total_bound,
        total_exact,
        supported,
        unsupported,
        mean_bound,
    })
}

/// Configuration of the resampling hypothesis test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    /// Resampling runs per stratum.
    pub runs: usize,
    /// Fraction of a stratum held out as the test subset each run.
    pub test_fraction: f64,
    /// Significance level of the acceptance interval.
    pub delta: f64,
    pub seed: u64,
    pub build: BuildParams,
    /// Variance threshold of the SQD statistic.
    pub t: f64,
    /// Upper-tail-only test instead of the default two-sided interval.
    pub one_sided: bool,
    /// Support fraction below which a decision carries a warning.
    pub support_floor: f64,
}

impl Default for TestConfig {
    fn default() -> Self {
        TestConfig {
            runs: 20,
            test_fraction: 1.0 / 3.0,
            delta: 0.05,
            seed: 0,
            build: BuildParams::default(),
            t: 0.95,
            one_sided: false,
            support_floor: 0.5,
        }
    }
}

impl TestConfig {
    fn validate(&self) -> Result<()> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::InvalidParam(format!(
                "test fraction {} must lie in (0, 1)",
                self.test_fraction
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidParam(format!(
                "significance level {} must lie in (0, 1)",
                self.delta
            )));
        }
        if self.runs == 0 {
            return Err(Error::InvalidParam("at least one resampling run is required".into()));
        }
        Ok(())
    }
}

/// Empirical distribution of the per-run SQD statistic for one stratum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestDistribution {
    pub stratum_dim: usize,
    pub runs: usize,
    /// Per-run mean-bound statistics, in run order.
    pub samples: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (n - 1 normalization).
    pub sd: f64,
    /// Standardized 1 - delta quantile, `(q(1 - delta) - mean) / sd`;
    /// informational, 0 when the distribution is degenerate.
    pub z_cutoff: f64,
    /// Per-run averages.
    pub train_count: f64,
    pub test_count: f64,
    pub support_fraction: f64,
}

impl TestDistribution {
    fn from_runs(
        stratum_dim: usize,
        samples: Vec<f64>,
        delta: f64,
        train_count: f64,
        test_count: f64,
        support_fraction: f64,
    ) -> Self {
        let runs = samples.len();
        let mean = samples.iter().sum::<f64>() / runs as f64;
        let sd = if runs > 1 {
            (samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (runs - 1) as f64)
                .sqrt()
        } else {
            0.0
        };
        let mut sorted = samples.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let z_cutoff = if sd > 0.0 {
            (empirical_quantile(&sorted, 1.0 - delta) - mean) / sd
        } else {
            0.0
        };
        TestDistribution {
            stratum_dim,
            runs,
            samples,
            mean,
            sd,
            z_cutoff,
            train_count,
            test_count,
            support_fraction,
        }
    }
}

/// Linear-interpolated empirical quantile (the common `h = (n-1) q` form)
/// of an ascending sample list.
pub fn empirical_quantile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let idx = h.floor() as usize;
    let frac = h - idx as f64;
    if idx + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[idx] + frac * (sorted[idx + 1] - sorted[idx])
    }
}

/// Build the empirical distribution of the SQD statistic for one stratum
/// by repeated train/test splitting.
///
/// Each run holds out `round(test_fraction * n)` points drawn without
/// replacement (seeded per run), fits the multi-manifold on the rest and
/// records the per-point bound statistic of the held-out points.
pub fn resample_distribution(
    cloud: &PointCloud,
    stratum_ids: &[usize],
    stratum_dim: usize,
    config: &TestConfig,
) -> Result<TestDistribution> {
    config.validate()?;
    let n = stratum_ids.len();
    let min_leaf = config.build.resolved_min_leaf(stratum_dim);
    let test_size = ((config.test_fraction * n as f64).round() as usize).clamp(1, n.saturating_sub(1));
    if n < 2 || n - test_size < min_leaf {
        return Err(Error::StratumTooSmall {
            n,
            min_leaf,
            fraction: config.test_fraction,
        });
    }

    struct RunOutcome {
        sample: f64,
        train: usize,
        test: usize,
        support: f64,
    }

    let outcomes: Vec<RunOutcome> = (0..config.runs)
        .into_par_iter()
        .map(|run| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(run as u64);
            let mut picks = rand::seq::index::sample(&mut rng, n, test_size).into_vec();
            picks.sort_unstable();
            let mut is_test = vec![false; n];
            for &p in &picks {
                is_test[p] = true;
            }
            let test_ids: Vec<usize> = picks.iter().map(|&p| stratum_ids[p]).collect();
            let train_ids: Vec<usize> = (0..n)
                .filter(|&p| !is_test[p])
                .map(|p| stratum_ids[p])
                .collect();
            let mm = build_multimanifold(cloud, &train_ids, stratum_dim, &config.build)?;
            let report = sqd_total(cloud, &test_ids, &mm, config.t)?;
            Ok(RunOutcome {
                sample: report.mean_bound,
                train: train_ids.len(),
                test: test_ids.len(),
                support: report.support_fraction(),
            })
        })
        .collect::<Result<_>>()?;

    let runs = outcomes.len() as f64;
    let samples: Vec<f64> = outcomes.iter().map(|o| o.sample).collect();
    let train_count = outcomes.iter().map(|o| o.train as f64).sum::<f64>() / runs;
    let test_count = outcomes.iter().map(|o| o.test as f64).sum::<f64>() / runs;
    let support = outcomes.iter().map(|o| o.support).sum::<f64>() / runs;
    Ok(TestDistribution::from_runs(
        stratum_dim,
        samples,
        config.delta,
        train_count,
        test_count,
        support,
    ))
}

/// Outcome of testing one candidate stratum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Accept,
    Reject,
    RejectNoMatchingStratum,
}

/// Acceptance interval; `lower = None` for the one-sided test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: Option<f64>,
    pub upper: f64,
}

/// Decision for one candidate stratum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub stratum_dim: usize,
    /// Observed mean-bound statistic; absent when there is nothing to
    /// measure against.
    pub statistic: Option<f64>,
    pub interval: Option<Interval>,
    pub verdict: Verdict,
    /// Fraction of candidate points supported by the manifold.
    pub support_fraction: Option<f64>,
    /// Set when the support fraction fell below the configured floor.
    pub low_support: bool,
}

/// Compare a candidate statistic against a stratum's empirical
/// distribution. Two-sided by default (equal-tailed quantiles); the
/// one-sided variant checks the upper tail only. A degenerate
/// distribution (zero spread) accepts within `1e-12` of its mean.
pub fn decide(
    candidate_stat: f64,
    dist: &TestDistribution,
    delta: f64,
    one_sided: bool,
) -> Result<Decision> {
    if dist.runs < 2 {
        return Err(Error::InsufficientRuns { runs: dist.runs });
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParam(format!(
            "significance level {delta} must lie in (0, 1)"
        )));
    }
    let mut sorted = dist.samples.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let degenerate = dist.sd == 0.0;
    let slack = if degenerate { 1e-12 } else { 0.0 };
    let (lower, upper) = if one_sided {
        (None, empirical_quantile(&sorted, 1.0 - delta))
    } else {
        (
            Some(empirical_quantile(&sorted, delta / 2.0)),
            empirical_quantile(&sorted, 1.0 - delta / 2.0),
        )
    };
    let inside = lower.map_or(true, |l| candidate_stat >= l - slack)
        && candidate_stat <= upper + slack;
    Ok(Decision {
        stratum_dim: dist.stratum_dim,
        statistic: Some(candidate_stat),
        interval: Some(Interval { lower, upper }),
        verdict: if inside { Verdict::Accept } else { Verdict::Reject },
        support_fraction: None,
        low_support: false,
    })
}

/// The full hypothesis-testing pipeline: stratify the data, build the
/// per-stratum empirical distributions, stratify the candidate, measure
/// each candidate stratum against the manifold of the matching data
/// stratum and decide. A candidate stratum whose dimension has no usable
/// counterpart distribution in the data is rejected outright.
pub fn full_test(
    data: &PointCloud,
    candidate: &PointCloud,
    id_params: &IdParams,
    config: &TestConfig,
) -> Result<Vec<Decision>> {
    if data.dim() != candidate.dim() {
        return Err(Error::InvalidParam(format!(
            "data dimension {} differs from candidate dimension {}",
            data.dim(),
            candidate.dim()
        )));
    }
    config.validate()?;
    let data_strata = stratify(&compute_all_ids(data, id_params)?);
    let cand_strata = stratify(&compute_all_ids(candidate, id_params)?);

    let mut build = config.build.clone();
    if build.max_observed_dim.is_none() {
        build.max_observed_dim = data_strata.max_dimension();
    }
    let config = TestConfig {
        build,
        ..config.clone()
    };

    // Distributions for every data stratum large enough to resample; a
    // stratum below the resampling floor contributes no distribution and
    // thus rejects matching candidate strata.
    let mut dists: BTreeMap<usize, TestDistribution> = BTreeMap::new();
    for (&dim, ids) in &data_strata.groups {
        match resample_distribution(data, ids, dim, &config) {
            Ok(d) => {
                dists.insert(dim, d);
            }
            Err(Error::StratumTooSmall { .. }) => {}
            Err(e) => return Err(e.in_stratum(dim)),
        }
    }

    let mut decisions = Vec::new();
    for (&dim, cand_ids) in &cand_strata.groups {
        match dists.get(&dim) {
            None => decisions.push(Decision {
                stratum_dim: dim,
                statistic: None,
                interval: None,
                verdict: Verdict::RejectNoMatchingStratum,
                support_fraction: None,
                low_support: false,
            }),
            Some(dist) => {
                let data_ids = &data_strata.groups[&dim];
                let mm = build_multimanifold(data, data_ids, dim, &config.build)
                    .map_err(|e| e.in_stratum(dim))?;
                let report =
                    sqd_total(candidate, cand_ids, &mm, config.t).map_err(|e| e.in_stratum(dim))?;
                let mut decision = decide(report.mean_bound, dist, config.delta, config.one_sided)
                    .map_err(|e| e.in_stratum(dim))?;
                let support = report.support_fraction();
                decision.support_fraction = Some(support);
                decision.low_support = support < config.support_floor;
                decisions.push(decision);
            }
        }
    }
    Ok(decisions)
}
