//! Synthetic data generation and point-cloud file ingestion/export.
//!
//! The sphere-line generator reproduces the reference configuration: a
//! radius-1/2 sphere centered at the origin sampled uniformly in polar
//! angles (deliberately not area-uniform) plus two x-axis segments outside
//! the sphere. File formats are a headered csv (columns `x1..xD` or
//! `x,y,z` first) and headerless whitespace xyz triples; exported floats
//! carry 17 significant digits so coordinates round-trip bit-exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::PointCloud;
use crate::idim::{LocalIdRecord, Strata};

/// Configuration of the sphere-line sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereLineSpec {
    pub n_sphere: usize,
    pub n_line: usize,
    pub radius: f64,
    /// Two x-axis intervals, disjoint from the open ball interior.
    pub line_intervals: [(f64, f64); 2],
    pub seed: u64,
    /// Draw the polar angle area-uniformly instead of angle-uniformly.
    pub area_uniform: bool,
}

impl Default for SphereLineSpec {
    fn default() -> Self {
        SphereLineSpec {
            n_sphere: 2513,
            n_line: 193,
            radius: 0.5,
            line_intervals: [(-1.0, -0.5), (0.5, 1.0)],
            seed: 7,
            area_uniform: false,
        }
    }
}

impl SphereLineSpec {
    fn validate(&self) -> Result<()> {
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(Error::InvalidParam(format!(
                "sphere radius {} must be positive",
                self.radius
            )));
        }
        for (a, b) in &self.line_intervals {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return Err(Error::InvalidParam(format!(
                    "degenerate line interval [{a}, {b}]"
                )));
            }
            // The interval must avoid the open ball interior (-r, r).
            if !(*b <= -self.radius || *a >= self.radius) {
                return Err(Error::InvalidParam(format!(
                    "line interval [{a}, {b}] enters the open ball of radius {}",
                    self.radius
                )));
            }
        }
        Ok(())
    }
}

/// Generate the sphere-line cloud: `n_sphere` points on the sphere
/// surface followed by `n_line` points on the segments (length-weighted
/// across the two intervals, y = z = 0). Deterministic in the seed.
pub fn gen_sphere_line(spec: &SphereLineSpec) -> Result<PointCloud> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut coords = Vec::with_capacity((spec.n_sphere + spec.n_line) * 3);
    let r = spec.radius;
    for _ in 0..spec.n_sphere {
        let phi = rng.gen_range(0.0..std::f64::consts::TAU);
        let (sin_theta, cos_theta) = if spec.area_uniform {
            let c: f64 = 1.0 - 2.0 * rng.gen_range(0.0..1.0);
            ((1.0 - c * c).max(0.0).sqrt(), c)
        } else {
            let theta = rng.gen_range(0.0..std::f64::consts::PI);
            theta.sin_cos()
        };
        coords.push(r * sin_theta * phi.cos());
        coords.push(r * sin_theta * phi.sin());
        coords.push(r * cos_theta);
    }
    let len0 = spec.line_intervals[0].1 - spec.line_intervals[0].0;
    let len1 = spec.line_intervals[1].1 - spec.line_intervals[1].0;
    for _ in 0..spec.n_line {
        let u = rng.gen_range(0.0..len0 + len1);
        let x = if u < len0 {
            spec.line_intervals[0].0 + u
        } else {
            spec.line_intervals[1].0 + (u - len0)
        };
        coords.push(x);
        coords.push(0.0);
        coords.push(0.0);
    }
    PointCloud::from_flat(3, coords)
}

/// Point-cloud file formats understood by the loader.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CloudFormat {
    Csv,
    Xyz,
}

impl std::str::FromStr for CloudFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(CloudFormat::Csv),
            "xyz" => Ok(CloudFormat::Xyz),
            other => Err(Error::InvalidParam(format!("unknown cloud format '{other}'"))),
        }
    }
}

/// Render a float with 17 significant digits; parses back to the exact
/// same f64.
pub fn format_g17(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_cell(cell: &str, line: usize) -> Result<f64> {
    let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("cannot parse '{}' as a number", cell.trim()),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("non-finite value '{}'", cell.trim()),
        });
    }
    Ok(v)
}

/// Number of leading coordinate columns declared by a csv header:
/// either `x,y,z` or a run `x1,x2,...,xD`.
fn coord_columns(header: &[String]) -> Result<usize> {
    let lower: Vec<String> = header.iter().map(|h| h.trim().to_ascii_lowercase()).collect();
    if lower.len() >= 3 && lower[0] == "x" && lower[1] == "y" && lower[2] == "z" {
        return Ok(3);
    }
    let mut d = 0;
    while d < lower.len() && lower[d] == format!("x{}", d + 1) {
        d += 1;
    }
    if d == 0 {
        return Err(Error::Parse {
            line: 1,
            message: format!(
                "header must start with coordinate columns x1..xD or x,y,z (found '{}')",
                header.join(",")
            ),
        });
    }
    Ok(d)
}

/// Load a point cloud from a csv (header row, coordinate columns first)
/// or xyz (headerless whitespace triples) file. Rows with non-finite
/// values are rejected with their line number.
pub fn load_cloud(path: &Path, format: CloudFormat) -> Result<PointCloud> {
    let file = File::open(path).map_err(|e| Error::File {
        path: path.to_path_buf(),
        source: e,
    })?;
    let reader = BufReader::new(file);
    match format {
        CloudFormat::Csv => load_csv(reader),
        CloudFormat::Xyz => load_xyz(reader),
    }
}

fn load_csv<R: BufRead>(reader: R) -> Result<PointCloud> {
    let mut lines = reader.lines().enumerate();
    let (_, header_line) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "missing header row".into(),
    })?;
    let header: Vec<String> = header_line?.split(',').map(|s| s.to_string()).collect();
    let width = header.len();
    let dim = coord_columns(&header)?;
    let mut coords = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != width {
            return Err(Error::RaggedRows {
                line: line_no,
                expected: width,
                found: cells.len(),
            });
        }
        for cell in &cells[..dim] {
            coords.push(parse_cell(cell, line_no)?);
        }
    }
    if coords.is_empty() {
        return Err(Error::EmptySet {
            context: "load_cloud",
        });
    }
    PointCloud::from_flat(dim, coords)
}

fn load_xyz<R: BufRead>(reader: R) -> Result<PointCloud> {
    let mut coords = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split_whitespace().collect();
        if cells.len() != 3 {
            return Err(Error::RaggedRows {
                line: line_no,
                expected: 3,
                found: cells.len(),
            });
        }
        for cell in cells {
            coords.push(parse_cell(cell, line_no)?);
        }
    }
    if coords.is_empty() {
        return Err(Error::EmptySet {
            context: "load_cloud",
        });
    }
    PointCloud::from_flat(3, coords)
}

/// Write a bare cloud as csv with header `x1..xD`.
pub fn write_cloud_csv(path: &Path, cloud: &PointCloud) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::File {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut w = BufWriter::new(file);
    let header: Vec<String> = (1..=cloud.dim()).map(|i| format!("x{i}")).collect();
    writeln!(w, "{}", header.join(","))?;
    for p in cloud.iter() {
        let row: Vec<String> = p.iter().map(|&v| format_g17(v)).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Write a cloud as headerless xyz triples.
pub fn write_cloud_xyz(path: &Path, cloud: &PointCloud) -> Result<()> {
    if cloud.dim() != 3 {
        return Err(Error::InvalidParam(format!(
            "xyz export requires 3 coordinates, cloud has {}",
            cloud.dim()
        )));
    }
    let file = File::create(path).map_err(|e| Error::File {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut w = BufWriter::new(file);
    for p in cloud.iter() {
        writeln!(w, "{} {} {}", format_g17(p[0]), format_g17(p[1]), format_g17(p[2]))?;
    }
    w.flush()?;
    Ok(())
}

/// Export the cloud with its analysis columns: `x1..xD, idim, lex_code,
/// energy, stratum`. Undefined points carry `-1` in the idim and stratum
/// columns. Coordinates round-trip bit-exactly through [`load_cloud`].
pub fn export_labeled(
    path: &Path,
    cloud: &PointCloud,
    records: &[LocalIdRecord],
    strata: &Strata,
) -> Result<()> {
    if records.len() != cloud.len() {
        return Err(Error::InvalidParam(format!(
            "{} records for {} points",
            records.len(),
            cloud.len()
        )));
    }
    let mut stratum_of = vec![-1i64; cloud.len()];
    for (&dim, ids) in &strata.groups {
        for &i in ids {
            stratum_of[i] = dim as i64;
        }
    }
    let file = File::create(path).map_err(|e| Error::File {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut w = BufWriter::new(file);
    let mut header: Vec<String> = (1..=cloud.dim()).map(|i| format!("x{i}")).collect();
    header.extend(["idim", "lex_code", "energy", "stratum"].map(String::from));
    writeln!(w, "{}", header.join(","))?;
    let scale_count = records
        .first()
        .map(|r| r.per_scale_dims.len())
        .unwrap_or(0) as i64;
    for (i, p) in cloud.iter().enumerate() {
        let r = &records[i];
        let (idim, lex) = match (r.dimension, r.argmin_scale_index) {
            (Some(d), Some(a)) => (d as i64, d as i64 * scale_count - a as i64),
            _ => (-1, -1),
        };
        let energy = if r.dimension.is_some() { r.energy } else { 0.0 };
        let mut row: Vec<String> = p.iter().map(|&v| format_g17(v)).collect();
        row.push(idim.to_string());
        row.push(lex.to_string());
        row.push(format_g17(energy));
        row.push(stratum_of[i].to_string());
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::idim::{compute_all_ids, stratify, IdParams};
    use crate::neighborhoods::NeighborhoodSpec;
    use tempfile::tempdir;

    #[test]
    fn generator_is_deterministic() {
        let spec = SphereLineSpec::default();
        let a = gen_sphere_line(&spec).unwrap();
        let b = gen_sphere_line(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2706);
        let c = gen_sphere_line(&SphereLineSpec {
            seed: 8,
            ..spec
        })
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sphere_points_sit_on_the_sphere() {
        let spec = SphereLineSpec {
            n_sphere: 500,
            n_line: 100,
            ..SphereLineSpec::default()
        };
        let cloud = gen_sphere_line(&spec).unwrap();
        for i in 0..500 {
            let p = cloud.point(i);
            let norm = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            assert!((norm - 0.5).abs() < 1e-12);
        }
        for i in 500..600 {
            let p = cloud.point(i);
            assert!(p[0].abs() >= 0.5 && p[0].abs() <= 1.0);
            assert_eq!(p[1], 0.0);
            assert_eq!(p[2], 0.0);
        }
    }

    #[test]
    fn line_only_cloud() {
        let spec = SphereLineSpec {
            n_sphere: 0,
            n_line: 50,
            ..SphereLineSpec::default()
        };
        let cloud = gen_sphere_line(&spec).unwrap();
        assert!(cloud.iter().all(|p| p[1] == 0.0 && p[2] == 0.0));
    }

    #[test]
    fn interval_validation() {
        let bad = SphereLineSpec {
            line_intervals: [(-1.0, -0.5), (0.2, 1.0)],
            ..SphereLineSpec::default()
        };
        assert!(gen_sphere_line(&bad).is_err());
    }

    #[test]
    fn xyz_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("axes.xyz");
        std::fs::write(&path, "1 0 0\n0 1 0\n0 0 1\n").unwrap();
        let cloud = load_cloud(&path, CloudFormat::Xyz).unwrap();
        assert_eq!(cloud.len(), 3);
        assert_eq!(cloud.dim(), 3);
        assert_eq!(cloud.point(1), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn nan_row_is_rejected_with_its_line() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.xyz");
        std::fs::write(&path, "1 0 0\n0 nan 0\n").unwrap();
        match load_cloud(&path, CloudFormat::Xyz) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("ragged.xyz");
        std::fs::write(&path, "1 0 0\n1 2\n").unwrap();
        assert!(matches!(
            load_cloud(&path, CloudFormat::Xyz),
            Err(Error::RaggedRows { line: 2, .. })
        ));
    }

    #[test]
    fn csv_headers() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.csv");
        std::fs::write(&path, "x,y,z\n1,2,3\n").unwrap();
        let cloud = load_cloud(&path, CloudFormat::Csv).unwrap();
        assert_eq!(cloud.dim(), 3);

        std::fs::write(&path, "x1,x2\n1,2\n3,4\n").unwrap();
        let cloud = load_cloud(&path, CloudFormat::Csv).unwrap();
        assert_eq!(cloud.dim(), 2);
        assert_eq!(cloud.len(), 2);

        std::fs::write(&path, "a,b\n1,2\n").unwrap();
        assert!(load_cloud(&path, CloudFormat::Csv).is_err());
    }

    #[test]
    fn csv_export_round_trips_bit_exactly() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("cloud.csv");
        let cloud = gen_sphere_line(&SphereLineSpec {
            n_sphere: 200,
            n_line: 20,
            ..SphereLineSpec::default()
        })
        .unwrap();
        write_cloud_csv(&path, &cloud).unwrap();
        let back = load_cloud(&path, CloudFormat::Csv).unwrap();
        assert_eq!(cloud, back);
    }

    #[test]
    fn labeled_export_round_trips_and_flags_undefined() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("labeled.csv");
        let cloud = gen_sphere_line(&SphereLineSpec {
            n_sphere: 150,
            n_line: 30,
            seed: 3,
            ..SphereLineSpec::default()
        })
        .unwrap();
        let params = IdParams::new(
            0.95,
            10,
            NeighborhoodSpec::ball_radii(vec![1.0, 0.5, 0.05]).unwrap(),
        )
        .unwrap();
        let records = compute_all_ids(&cloud, &params).unwrap();
        let strata = stratify(&records);
        export_labeled(&path, &cloud, &records, &strata).unwrap();
        let back = load_cloud(&path, CloudFormat::Csv).unwrap();
        assert_eq!(cloud, back);
        // idim column mirrors the records, -1 for undefined.
        let text = std::fs::read_to_string(&path).unwrap();
        for (line, r) in text.lines().skip(1).zip(&records) {
            let idim: i64 = line.split(',').nth(3).unwrap().parse().unwrap();
            match r.dimension {
                Some(d) => assert_eq!(idim, d as i64),
                None => assert_eq!(idim, -1),
            }
        }
    }

    #[test]
    fn g17_round_trip() {
        for v in [0.0, -0.0, 1.0 / 3.0, 2.5e-17, -123456.789, f64::MIN_POSITIVE] {
            let s = format_g17(v);
            let back: f64 = s.parse().unwrap();
            assert_eq!(v.to_bits(), back.to_bits(), "{v} -> {s}");
        }
    }
}
