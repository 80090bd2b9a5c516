//! Pipeline driver: wires generation/ingestion, intrinsic dimensions,
//! stratification, manifold construction and the resampling test into one
//! run that writes json/csv artifacts and prints summary tables.
//!
//! A run is described by a [`RunSpec`], assembled from defaults, an
//! optional flat key-value spec file (`section.key = value` lines) and
//! command-line overrides, in that precedence order.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    export_labeled, gen_sphere_line, load_cloud, write_cloud_csv, CloudFormat, SphereLineSpec,
};
use crate::error::{Error, Result};
use crate::geom::PointCloud;
use crate::hypothesis::{
    decide, resample_distribution, sqd_total, Decision, TestConfig, TestDistribution, Verdict,
};
use crate::idim::{
    compute_all_ids, gmst_local_dimension, stratify, GmstFit, GmstParams, IdParams, Strata,
};
use crate::multimanifold::{build_multimanifold, BuildParams, MultiManifold};
use crate::neighborhoods::{dyadic_radii, NeighborhoodSpec};

/// Where the input cloud comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum InputSpec {
    File { path: PathBuf, format: CloudFormat },
    SphereLine(SphereLineSpec),
}

/// Neighborhood ladder choice; dyadic scales resolve against the loaded
/// cloud's coordinate diameter.
#[derive(Debug, Clone, PartialEq)]
pub enum ScaleChoice {
    /// Explicit radii, descending.
    Radii(Vec<f64>),
    /// Arithmetic ladder `hi` down to `lo` in steps of `step`.
    ArithmeticRadii { hi: f64, lo: f64, step: f64 },
    /// Dyadic scales `lo..=hi`, radii `diam * 2^-s`.
    DyadicScales { lo: u32, hi: u32 },
    /// k-nearest-neighbor counts, ascending.
    Knn(Vec<usize>),
}

impl ScaleChoice {
    fn resolve(&self, cloud: &PointCloud) -> Result<NeighborhoodSpec> {
        match self {
            ScaleChoice::Radii(r) => NeighborhoodSpec::ball_radii(r.clone()),
            ScaleChoice::ArithmeticRadii { hi, lo, step } => {
                NeighborhoodSpec::arithmetic_radii(*hi, *lo, *step)
            }
            ScaleChoice::DyadicScales { lo, hi } => {
                NeighborhoodSpec::ball_radii(dyadic_radii(cloud, *lo, *hi)?)
            }
            ScaleChoice::Knn(counts) => NeighborhoodSpec::knn_counts(counts.clone()),
        }
    }
}

/// How deep the pipeline goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    /// Intrinsic dimensions and the labeled export only.
    Idim,
    /// Plus per-stratum multi-manifolds.
    Build,
    /// Plus resampling distributions and decisions.
    Test,
}

/// Test-stage knobs (the rest of [`TestConfig`] comes from the build
/// section and the id threshold).
#[derive(Debug, Clone, PartialEq)]
pub struct TestSettings {
    pub runs: usize,
    pub test_fraction: f64,
    pub delta: f64,
    pub seed: u64,
    pub one_sided: bool,
    /// SQD variance threshold; defaults to the id threshold.
    pub t: Option<f64>,
}

impl Default for TestSettings {
    fn default() -> Self {
        TestSettings {
            runs: 20,
            test_fraction: 1.0 / 3.0,
            delta: 0.05,
            seed: 0,
            one_sided: false,
            t: None,
        }
    }
}

/// Local GMST probe settings.
#[derive(Debug, Clone, PartialEq)]
pub struct GmstSettings {
    pub n_lo: usize,
    pub n_hi: usize,
    pub n_step: usize,
    pub k: usize,
    pub gamma: f64,
    pub probe: usize,
    pub seed: u64,
}

impl Default for GmstSettings {
    fn default() -> Self {
        GmstSettings {
            n_lo: 200,
            n_hi: 400,
            n_step: 25,
            k: 5,
            gamma: 1.0,
            probe: 100,
            seed: 0,
        }
    }
}

/// Artifact destinations. File names resolve under `dir`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutPaths {
    pub dir: PathBuf,
    pub labeled: String,
    pub manifolds: String,
    pub distributions: String,
    pub decisions: String,
    pub gmst: String,
}

impl Default for OutPaths {
    fn default() -> Self {
        OutPaths {
            dir: PathBuf::from("."),
            labeled: "labeled.csv".into(),
            manifolds: "manifolds.json".into(),
            distributions: "distributions.json".into(),
            decisions: "decisions.json".into(),
            gmst: "gmst.json".into(),
        }
    }
}

/// Full description of one pipeline run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub input: Option<InputSpec>,
    pub stage: Stage,
    pub id_t: f64,
    pub cutoff: usize,
    pub scales: ScaleChoice,
    pub build: BuildParams,
    pub test: TestSettings,
    pub gmst: Option<GmstSettings>,
    pub candidate: Option<(PathBuf, CloudFormat)>,
    pub out: OutPaths,
}

impl Default for RunSpec {
    fn default() -> Self {
        RunSpec {
            input: None,
            stage: Stage::Test,
            id_t: 0.95,
            cutoff: 10,
            scales: ScaleChoice::DyadicScales { lo: 4, hi: 7 },
            build: BuildParams::default(),
            test: TestSettings::default(),
            gmst: None,
            candidate: None,
            out: OutPaths::default(),
        }
    }
}

/// Parse a flat key-value spec file: `key = value` lines, `#` comments,
/// dotted section keys. Later duplicates win.
pub fn parse_spec_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::File {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut pairs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: idx + 1,
            message: format!("expected 'key = value', found '{line}'"),
        })?;
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| {
        Error::InvalidParam(format!("key '{key}': cannot parse '{value}'"))
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::InvalidParam(format!(
            "key '{key}': expected a boolean, found '{value}'"
        ))),
    }
}

/// `a:b:c` triple of numbers, as used by radius ladders.
pub fn parse_triple(value: &str) -> Result<(f64, f64, f64)> {
    let parts: Vec<&str> = value.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::InvalidParam(format!(
            "expected three ':'-separated numbers, found '{value}'"
        )));
    }
    Ok((
        parse_num("radii", parts[0])?,
        parse_num("radii", parts[1])?,
        parse_num("radii", parts[2])?,
    ))
}

/// Radius ladder from an `a:b:step` argument; the grid runs from the
/// larger endpoint down to the smaller one.
pub fn scale_from_radii_arg(value: &str) -> Result<ScaleChoice> {
    let (a, b, step) = parse_triple(value)?;
    Ok(ScaleChoice::ArithmeticRadii {
        hi: a.max(b),
        lo: a.min(b),
        step,
    })
}

/// `lo:hi` dyadic scale range.
pub fn scale_from_scales_arg(value: &str) -> Result<ScaleChoice> {
    let parts: Vec<&str> = value.split(':').collect();
    if parts.len() != 2 {
        return Err(Error::InvalidParam(format!(
            "expected 'lo:hi' scales, found '{value}'"
        )));
    }
    Ok(ScaleChoice::DyadicScales {
        lo: parse_num("scales", parts[0])?,
        hi: parse_num("scales", parts[1])?,
    })
}

/// Comma-separated neighbor counts.
pub fn scale_from_knn_arg(value: &str) -> Result<ScaleChoice> {
    let counts = value
        .split(',')
        .map(|c| parse_num("knn", c.trim()))
        .collect::<Result<Vec<usize>>>()?;
    Ok(ScaleChoice::Knn(counts))
}

impl RunSpec {
    /// Apply spec-file pairs on top of the current values. The deepest
    /// section present decides the stage unless `pipeline.stage` says
    /// otherwise.
    pub fn apply_pairs(&mut self, pairs: &[(String, String)]) -> Result<()> {
        let mut gen = match &self.input {
            Some(InputSpec::SphereLine(s)) => s.clone(),
            _ => SphereLineSpec::default(),
        };
        let mut gen_requested = matches!(self.input, Some(InputSpec::SphereLine(_)));
        let mut input_path: Option<PathBuf> = None;
        let mut input_format = CloudFormat::Csv;
        let mut cand_path: Option<PathBuf> = None;
        let mut cand_format = CloudFormat::Csv;
        let mut saw_build = false;
        let mut saw_test = false;
        let mut explicit_stage: Option<Stage> = None;

        for (key, value) in pairs {
            match key.as_str() {
                "input.kind" => match value.as_str() {
                    "file" => gen_requested = false,
                    "sphere-line" => gen_requested = true,
                    other => {
                        return Err(Error::InvalidParam(format!(
                            "input.kind '{other}' (expected 'file' or 'sphere-line')"
                        )))
                    }
                },
                "input.path" => input_path = Some(PathBuf::from(value)),
                "input.format" => input_format = value.parse()?,
                "gen.n_sphere" => {
                    gen.n_sphere = parse_num(key, value)?;
                    gen_requested = true;
                }
                "gen.n_line" => {
                    gen.n_line = parse_num(key, value)?;
                    gen_requested = true;
                }
                "gen.radius" => {
                    gen.radius = parse_num(key, value)?;
                    gen_requested = true;
                }
                "gen.seed" => {
                    gen.seed = parse_num(key, value)?;
                    gen_requested = true;
                }
                "gen.area_uniform" => {
                    gen.area_uniform = parse_bool(key, value)?;
                    gen_requested = true;
                }
                "id.t" => self.id_t = parse_num(key, value)?,
                "id.cutoff" => self.cutoff = parse_num(key, value)?,
                "id.radii" => self.scales = scale_from_radii_arg(value)?,
                "id.scales" => self.scales = scale_from_scales_arg(value)?,
                "id.knn" => self.scales = scale_from_knn_arg(value)?,
                "build.t" => {
                    self.build.t = parse_num(key, value)?;
                    saw_build = true;
                }
                "build.min_leaf" => {
                    self.build.min_leaf_points = Some(parse_num(key, value)?);
                    saw_build = true;
                }
                "build.max_depth" => {
                    self.build.max_depth = parse_num(key, value)?;
                    saw_build = true;
                }
                "test.runs" => {
                    self.test.runs = parse_num(key, value)?;
                    saw_test = true;
                }
                "test.fraction" => {
                    self.test.test_fraction = parse_num(key, value)?;
                    saw_test = true;
                }
                "test.delta" => {
                    self.test.delta = parse_num(key, value)?;
                    saw_test = true;
                }
                "test.seed" => {
                    self.test.seed = parse_num(key, value)?;
                    saw_test = true;
                }
                "test.one_sided" => {
                    self.test.one_sided = parse_bool(key, value)?;
                    saw_test = true;
                }
                "test.t" => {
                    self.test.t = Some(parse_num(key, value)?);
                    saw_test = true;
                }
                "gmst.n" => {
                    let (a, b, c) = parse_triple(value)?;
                    let s = self.gmst.get_or_insert_with(GmstSettings::default);
                    s.n_lo = a.min(b) as usize;
                    s.n_hi = a.max(b) as usize;
                    s.n_step = c as usize;
                }
                "gmst.k" => {
                    self.gmst.get_or_insert_with(GmstSettings::default).k = parse_num(key, value)?
                }
                "gmst.gamma" => {
                    self.gmst.get_or_insert_with(GmstSettings::default).gamma =
                        parse_num(key, value)?
                }
                "gmst.probe" => {
                    self.gmst.get_or_insert_with(GmstSettings::default).probe =
                        parse_num(key, value)?
                }
                "gmst.seed" => {
                    self.gmst.get_or_insert_with(GmstSettings::default).seed =
                        parse_num(key, value)?
                }
                "candidate.path" => {
                    cand_path = Some(PathBuf::from(value));
                    saw_test = true;
                }
                "candidate.format" => cand_format = value.parse()?,
                "out.dir" => self.out.dir = PathBuf::from(value),
                "out.labeled" => self.out.labeled = value.clone(),
                "out.manifolds" => self.out.manifolds = value.clone(),
                "out.distributions" => self.out.distributions = value.clone(),
                "out.decisions" => self.out.decisions = value.clone(),
                "out.gmst" => self.out.gmst = value.clone(),
                "pipeline.stage" => {
                    explicit_stage = Some(match value.as_str() {
                        "idim" => Stage::Idim,
                        "build" => Stage::Build,
                        "test" => Stage::Test,
                        other => {
                            return Err(Error::InvalidParam(format!(
                                "pipeline.stage '{other}' (expected idim, build or test)"
                            )))
                        }
                    })
                }
                other => {
                    return Err(Error::InvalidParam(format!("unknown spec key '{other}'")));
                }
            }
        }

        self.input = if gen_requested {
            Some(InputSpec::SphereLine(gen))
        } else if let Some(path) = input_path {
            Some(InputSpec::File {
                path,
                format: input_format,
            })
        } else {
            self.input.take()
        };
        self.candidate = cand_path.map(|p| (p, cand_format)).or(self.candidate.take());
        self.stage = explicit_stage.unwrap_or(if saw_test {
            Stage::Test
        } else if saw_build {
            Stage::Build
        } else {
            Stage::Idim
        });
        Ok(())
    }

    fn test_config(&self) -> TestConfig {
        TestConfig {
            runs: self.test.runs,
            test_fraction: self.test.test_fraction,
            delta: self.test.delta,
            seed: self.test.seed,
            build: self.build.clone(),
            t: self.test.t.unwrap_or(self.id_t),
            one_sided: self.test.one_sided,
            support_floor: 0.5,
        }
    }
}

/// One row of the manifold summary (the Table-1-style block).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StratumSummary {
    pub dim: usize,
    pub total_points: usize,
    pub manifold_points: usize,
    pub components: usize,
    pub dropped: usize,
    pub e_sqd: f64,
}

/// Everything a run computed, for printing and assertions; large
/// structures live in the written artifacts.
#[derive(Debug, Default)]
pub struct PipelineReport {
    pub points: usize,
    pub ambient_dim: usize,
    pub strata_sizes: BTreeMap<usize, usize>,
    pub unclassified: usize,
    pub summaries: Vec<StratumSummary>,
    pub distributions: Vec<TestDistribution>,
    /// Strata skipped by the test stage, with the reason.
    pub skipped: Vec<(usize, String)>,
    pub decisions: Vec<Decision>,
    pub gmst: Vec<GmstFit>,
    pub artifacts: Vec<PathBuf>,
}

fn build_all(
    cloud: &PointCloud,
    strata: &Strata,
    build: &BuildParams,
    sqd_t: f64,
) -> Result<(BTreeMap<usize, MultiManifold>, Vec<StratumSummary>)> {
    let mut params = build.clone();
    if params.max_observed_dim.is_none() {
        params.max_observed_dim = strata.max_dimension();
    }
    let mut manifolds = BTreeMap::new();
    let mut summaries = Vec::new();
    for (&dim, ids) in &strata.groups {
        let mm = build_multimanifold(cloud, ids, dim, &params).map_err(|e| e.in_stratum(dim))?;
        let report = sqd_total(cloud, ids, &mm, sqd_t).map_err(|e| e.in_stratum(dim))?;
        summaries.push(StratumSummary {
            dim,
            total_points: ids.len(),
            manifold_points: mm.supported_points(),
            components: mm.components.len(),
            dropped: mm.dropped_count,
            e_sqd: report.mean_bound,
        });
        manifolds.insert(dim, mm);
    }
    Ok((manifolds, summaries))
}

#[derive(Serialize)]
struct VersionedList<T: Serialize> {
    version: u32,
    #[serde(flatten)]
    body: T,
}

fn write_json<T: Serialize>(path: &Path, body: T) -> Result<()> {
    let doc = VersionedList { version: 1, body };
    let text = serde_json::to_string_pretty(&doc)?;
    std::fs::write(path, text.as_bytes()).map_err(|e| Error::File {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

/// Execute a run end to end and write the requested artifacts.
pub fn run_pipeline(spec: &RunSpec) -> Result<PipelineReport> {
    let cloud = match &spec.input {
        Some(InputSpec::File { path, format }) => load_cloud(path, *format)?,
        Some(InputSpec::SphereLine(gen)) => gen_sphere_line(gen)?,
        None => {
            return Err(Error::InvalidParam(
                "no input: give input.path or a generator section".into(),
            ))
        }
    };

    let neighborhood_spec = spec.scales.resolve(&cloud)?;
    let id_params = IdParams::new(spec.id_t, spec.cutoff, neighborhood_spec)?;
    let records = compute_all_ids(&cloud, &id_params)?;
    let strata = stratify(&records);

    let mut report = PipelineReport {
        points: cloud.len(),
        ambient_dim: cloud.dim(),
        strata_sizes: strata.groups.iter().map(|(&d, ids)| (d, ids.len())).collect(),
        unclassified: strata.unclassified.len(),
        ..PipelineReport::default()
    };

    // Compute everything first; artifacts are written only afterwards so a
    // failing stage never leaves partial outputs behind.
    let mut manifolds: BTreeMap<usize, MultiManifold> = BTreeMap::new();
    if spec.stage >= Stage::Build {
        let sqd_t = spec.test.t.unwrap_or(spec.id_t);
        let (mms, summaries) = build_all(&cloud, &strata, &spec.build, sqd_t)?;
        manifolds = mms;
        report.summaries = summaries;
    }

    let mut candidate_data: Option<(PointCloud, Strata)> = None;
    if spec.stage >= Stage::Test {
        let config = spec.test_config();
        for (&dim, ids) in &strata.groups {
            match resample_distribution(&cloud, ids, dim, &config) {
                Ok(dist) => report.distributions.push(dist),
                Err(e @ Error::StratumTooSmall { .. }) => {
                    report.skipped.push((dim, e.to_string()))
                }
                Err(e) => return Err(e.in_stratum(dim)),
            }
        }

        if let Some((path, format)) = &spec.candidate {
            let cand = load_cloud(path, *format)?;
            if cand.dim() != cloud.dim() {
                return Err(Error::InvalidParam(format!(
                    "candidate dimension {} differs from data dimension {}",
                    cand.dim(),
                    cloud.dim()
                )));
            }
            let cand_spec = spec.scales.resolve(&cand)?;
            let cand_params = IdParams::new(spec.id_t, spec.cutoff, cand_spec)?;
            let cand_strata = stratify(&compute_all_ids(&cand, &cand_params)?);
            for (&dim, cand_ids) in &cand_strata.groups {
                let dist = report.distributions.iter().find(|d| d.stratum_dim == dim);
                match (dist, manifolds.get(&dim)) {
                    (Some(dist), Some(mm)) => {
                        let rep = sqd_total(&cand, cand_ids, mm, config.t)
                            .map_err(|e| e.in_stratum(dim))?;
                        let mut d = decide(rep.mean_bound, dist, config.delta, config.one_sided)
                            .map_err(|e| e.in_stratum(dim))?;
                        d.support_fraction = Some(rep.support_fraction());
                        d.low_support = rep.support_fraction() < config.support_floor;
                        report.decisions.push(d);
                    }
                    _ => report.decisions.push(Decision {
                        stratum_dim: dim,
                        statistic: None,
                        interval: None,
                        verdict: Verdict::RejectNoMatchingStratum,
                        support_fraction: None,
                        low_support: false,
                    }),
                }
            }
            candidate_data = Some((cand, cand_strata));
        } else {
            // Self-consistency decisions: the full-stratum statistic from
            // the summary block against the stratum's own distribution.
            for summary in &report.summaries {
                if let Some(dist) = report
                    .distributions
                    .iter()
                    .find(|d| d.stratum_dim == summary.dim)
                {
                    let mut d = decide(summary.e_sqd, dist, config.delta, config.one_sided)
                        .map_err(|e| e.in_stratum(summary.dim))?;
                    let support =
                        summary.manifold_points as f64 / summary.total_points.max(1) as f64;
                    d.support_fraction = Some(support);
                    d.low_support = support < config.support_floor;
                    report.decisions.push(d);
                }
            }
        }
    }

    let mut gmst_fits = Vec::new();
    if let Some(g) = &spec.gmst {
        let n_range: Vec<usize> = (g.n_lo..=g.n_hi).step_by(g.n_step.max(1)).collect();
        let params = GmstParams {
            k: g.k,
            gamma: g.gamma,
            seed: g.seed,
            per_pair_average: false,
        };
        let stride = (cloud.len() / g.probe.max(1)).max(1);
        for p in (0..cloud.len()).step_by(stride).take(g.probe) {
            gmst_fits.push(gmst_local_dimension(&cloud, p, &n_range, &params)?);
        }
    }

    // Write phase.
    std::fs::create_dir_all(&spec.out.dir).map_err(|e| Error::File {
        path: spec.out.dir.clone(),
        source: e,
    })?;
    let labeled_path = spec.out.dir.join(&spec.out.labeled);
    export_labeled(&labeled_path, &cloud, &records, &strata)?;
    report.artifacts.push(labeled_path);

    if spec.stage >= Stage::Build {
        #[derive(Serialize)]
        struct Manifolds {
            manifolds: Vec<serde_json::Value>,
        }
        let docs = manifolds
            .values()
            .map(|mm| Ok(serde_json::from_str(&mm.to_json_string()?)?))
            .collect::<Result<Vec<serde_json::Value>>>()?;
        let path = spec.out.dir.join(&spec.out.manifolds);
        write_json(&path, Manifolds { manifolds: docs })?;
        report.artifacts.push(path);
    }

    if spec.stage >= Stage::Test {
        #[derive(Serialize)]
        struct Dists<'a> {
            distributions: &'a [TestDistribution],
            skipped: &'a [(usize, String)],
        }
        let path = spec.out.dir.join(&spec.out.distributions);
        write_json(
            &path,
            Dists {
                distributions: &report.distributions,
                skipped: &report.skipped,
            },
        )?;
        report.artifacts.push(path);

        #[derive(Serialize)]
        struct Decisions<'a> {
            decisions: &'a [Decision],
        }
        let path = spec.out.dir.join(&spec.out.decisions);
        write_json(
            &path,
            Decisions {
                decisions: &report.decisions,
            },
        )?;
        report.artifacts.push(path);
    }

    if !gmst_fits.is_empty() {
        #[derive(Serialize)]
        struct Gmst<'a> {
            fits: &'a [GmstFit],
        }
        let path = spec.out.dir.join(&spec.out.gmst);
        write_json(&path, Gmst { fits: &gmst_fits })?;
        report.artifacts.push(path);
        report.gmst = gmst_fits;
    }

    drop(candidate_data);
    Ok(report)
}

/// Generate a sphere-line cloud and write it as csv; the `gen` subcommand.
pub fn run_gen(spec: &SphereLineSpec, out: &Path) -> Result<usize> {
    let cloud = gen_sphere_line(spec)?;
    write_cloud_csv(out, &cloud)?;
    Ok(cloud.len())
}

/// Strata cardinality block.
pub fn render_strata(report: &PipelineReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:>4} {:>10}", "dim", "points");
    for (dim, count) in &report.strata_sizes {
        let _ = writeln!(s, "{dim:>4} {count:>10}");
    }
    if report.unclassified > 0 {
        let _ = writeln!(s, "{:>4} {:>10}", "-", report.unclassified);
    }
    s
}

/// Manifold summary block mirroring the per-stratum table: dimension,
/// stratum size, supported points, component count, per-point E(SQD).
pub fn render_summary(report: &PipelineReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:>4} {:>10} {:>10} {:>11} {:>12}",
        "dim", "total pts", "mm pts", "components", "E(SQD)"
    );
    for row in &report.summaries {
        let _ = writeln!(
            s,
            "{:>4} {:>10} {:>10} {:>11} {:>12.4}",
            row.dim, row.total_points, row.manifold_points, row.components, row.e_sqd
        );
    }
    s
}

/// Distribution statistics block: dimension, E(E(SQD)), support fraction,
/// train/test counts, runs, SD, standardized upper-quantile cutoff.
pub fn render_distributions(report: &PipelineReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:>4} {:>12} {:>8} {:>11} {:>10} {:>5} {:>12} {:>9}",
        "d", "E(E(SQD))", "support", "train count", "test count", "runs", "SD(E(SQD))", "z cutoff"
    );
    for d in &report.distributions {
        let _ = writeln!(
            s,
            "{:>4} {:>12.4} {:>8.3} {:>11.1} {:>10.1} {:>5} {:>12.4} {:>9.4}",
            d.stratum_dim,
            d.mean,
            d.support_fraction,
            d.train_count,
            d.test_count,
            d.runs,
            d.sd,
            d.z_cutoff
        );
    }
    for (dim, reason) in &report.skipped {
        let _ = writeln!(s, "{dim:>4} skipped: {reason}");
    }
    s
}

/// Decision block.
pub fn render_decisions(report: &PipelineReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:>4} {:>12} {:>26} {:>28} {:>8}",
        "d", "statistic", "interval", "verdict", "support"
    );
    for d in &report.decisions {
        let stat = d
            .statistic
            .map(|v| format!("{v:.4}"))
            .unwrap_or_else(|| "-".into());
        let interval = match &d.interval {
            Some(i) => format!(
                "[{}, {:.4}]",
                i.lower.map(|l| format!("{l:.4}")).unwrap_or_else(|| "-inf".into()),
                i.upper
            ),
            None => "-".into(),
        };
        let verdict = match d.verdict {
            Verdict::Accept => "accept",
            Verdict::Reject => "reject",
            Verdict::RejectNoMatchingStratum => "reject-no-matching-stratum",
        };
        let support = d
            .support_fraction
            .map(|v| format!("{v:.3}"))
            .unwrap_or_else(|| "-".into());
        let warn = if d.low_support { "  (low support)" } else { "" };
        let _ = writeln!(s, "{:>4} {:>12} {:>26} {:>28} {:>8}{}", d.stratum_dim, stat, interval, verdict, support, warn);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn spec_file_parsing_and_stage_inference() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("run.spec");
        std::fs::write(
            &path,
            "# comment\n\
             input.kind = sphere-line\n\
             gen.n_sphere = 100\n\
             gen.seed = 3\n\
             id.t = 0.9\n\
             id.radii = 0.2:2:0.2\n",
        )
        .unwrap();
        let mut spec = RunSpec::default();
        spec.apply_pairs(&parse_spec_file(&path).unwrap()).unwrap();
        assert_eq!(spec.stage, Stage::Idim);
        assert_eq!(spec.id_t, 0.9);
        match &spec.input {
            Some(InputSpec::SphereLine(g)) => {
                assert_eq!(g.n_sphere, 100);
                assert_eq!(g.seed, 3);
            }
            other => panic!("unexpected input {other:?}"),
        }
        match &spec.scales {
            ScaleChoice::ArithmeticRadii { hi, lo, step } => {
                assert_eq!((*hi, *lo, *step), (2.0, 0.2, 0.2));
            }
            other => panic!("unexpected scales {other:?}"),
        }

        std::fs::write(&path, "input.path = cloud.csv\ntest.runs = 5\n").unwrap();
        let mut spec = RunSpec::default();
        spec.apply_pairs(&parse_spec_file(&path).unwrap()).unwrap();
        assert_eq!(spec.stage, Stage::Test);
        assert_eq!(spec.test.runs, 5);

        std::fs::write(&path, "input.path = cloud.csv\nbuild.max_depth = 6\n").unwrap();
        let mut spec = RunSpec::default();
        spec.apply_pairs(&parse_spec_file(&path).unwrap()).unwrap();
        assert_eq!(spec.stage, Stage::Build);

        std::fs::write(&path, "bogus.key = 1\n").unwrap();
        let mut spec = RunSpec::default();
        assert!(spec.apply_pairs(&parse_spec_file(&path).unwrap()).is_err());
    }

    #[test]
    fn arg_parsers() {
        assert!(matches!(
            scale_from_radii_arg("0.1:2:0.1").unwrap(),
            ScaleChoice::ArithmeticRadii { hi, lo, .. } if hi == 2.0 && lo == 0.1
        ));
        assert!(matches!(
            scale_from_scales_arg("4:7").unwrap(),
            ScaleChoice::DyadicScales { lo: 4, hi: 7 }
        ));
        assert!(matches!(
            scale_from_knn_arg("50,100,200").unwrap(),
            ScaleChoice::Knn(ref v) if v == &vec![50, 100, 200]
        ));
        assert!(scale_from_radii_arg("1:2").is_err());
    }

    fn small_run_spec(dir: &Path) -> RunSpec {
        RunSpec {
            input: Some(InputSpec::SphereLine(SphereLineSpec {
                n_sphere: 220,
                n_line: 60,
                seed: 5,
                ..SphereLineSpec::default()
            })),
            stage: Stage::Test,
            scales: ScaleChoice::ArithmeticRadii {
                hi: 2.0,
                lo: 0.2,
                step: 0.2,
            },
            test: TestSettings {
                runs: 6,
                ..TestSettings::default()
            },
            out: OutPaths {
                dir: dir.to_path_buf(),
                ..OutPaths::default()
            },
            ..RunSpec::default()
        }
    }

    #[test]
    fn pipeline_writes_artifacts_and_is_deterministic() {
        let dir_a = tempdir().unwrap();
        let dir_b = tempdir().unwrap();
        let report_a = run_pipeline(&small_run_spec(dir_a.path())).unwrap();
        let report_b = run_pipeline(&small_run_spec(dir_b.path())).unwrap();
        assert!(report_a.points == 280 && report_a.ambient_dim == 3);
        assert!(!report_a.summaries.is_empty());
        for name in ["labeled.csv", "manifolds.json", "distributions.json", "decisions.json"] {
            let a = std::fs::read(dir_a.path().join(name)).unwrap();
            let b = std::fs::read(dir_b.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical runs");
            assert!(!a.is_empty());
        }
        assert_eq!(report_a.decisions.len(), report_b.decisions.len());
    }

    #[test]
    fn idim_stage_skips_test_artifacts() {
        let dir = tempdir().unwrap();
        let spec = RunSpec {
            stage: Stage::Idim,
            ..small_run_spec(dir.path())
        };
        run_pipeline(&spec).unwrap();
        assert!(dir.path().join("labeled.csv").exists());
        assert!(!dir.path().join("distributions.json").exists());
        assert!(!dir.path().join("manifolds.json").exists());
    }

    #[test]
    fn missing_input_is_an_error() {
        let spec = RunSpec {
            input: Some(InputSpec::File {
                path: PathBuf::from("/nonexistent/cloud.csv"),
                format: CloudFormat::Csv,
            }),
            ..RunSpec::default()
        };
        match run_pipeline(&spec) {
            Err(Error::File { path, .. }) => {
                assert!(path.to_string_lossy().contains("nonexistent"))
            }
            other => panic!("expected file error, got {other:?}"),
        }
    }

    #[test]
    fn tables_render() {
        let dir = tempdir().unwrap();
        let report = run_pipeline(&small_run_spec(dir.path())).unwrap();
        let s = render_summary(&report);
        assert!(s.contains("components"));
        let d = render_distributions(&report);
        assert!(d.contains("z cutoff"));
        let v = render_decisions(&report);
        assert!(v.contains("verdict"));
        let st = render_strata(&report);
        assert!(st.contains("points"));
    }
}
