//! On-disk formats: versioned JSON archives, CSV tables and run manifests.
//!
//! Floats are written in the shortest form that parses back to the same
//! bits, so a saved wall or orbit reloads exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{ForcingModel, IntegratorConfig, Waveform};
use crate::energy::{EnergyTerms, PhaseProfile, WallDiagnostics, WallProfile, Winding};
use crate::error::{NeelError, Result};
use crate::grid::GridSpec;
use crate::params::RescaledParameters;
use crate::periodic::{ContinuationFailure, OrbitVerification, PeriodicOptions, PeriodicOrbit};

pub const ARCHIVE_FORMAT: &str = "neel-archive";
pub const ARCHIVE_VERSION: u32 = 1;
pub const TOOL_NAME: &str = "neel";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchiveKind {
    Wall,
    Orbits,
    Spectrum,
    Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Record attached to every output: what produced it and with which settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool: String,
    pub code_version: String,
    pub archive_version: u32,
    pub command: String,
    /// sha256 of the canonical JSON of the effective configuration.
    pub config_hash: String,
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    #[serde(default)]
    pub outputs: Vec<OutputEntry>,
    pub status: String,
    pub exit_code: i32,
    #[serde(default)]
    pub notes: Vec<String>,
    /// Scalar results worth finding without opening the outputs.
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
}

impl Manifest {
    pub fn new(command: &str, config_hash: &str) -> Self {
        Self {
            tool: TOOL_NAME.into(),
            code_version: env!("CARGO_PKG_VERSION").into(),
            archive_version: ARCHIVE_VERSION,
            command: command.into(),
            config_hash: config_hash.into(),
            tolerances: BTreeMap::new(),
            outputs: Vec::new(),
            status: "ok".into(),
            exit_code: 0,
            notes: Vec::new(),
            metrics: BTreeMap::new(),
        }
    }

    pub fn tolerance(mut self, name: &str, value: f64) -> Self {
        self.tolerances.insert(name.into(), value);
        self
    }

    /// Non-finite values are dropped; JSON has no encoding for them.
    pub fn metric(&mut self, name: &str, value: f64) {
        if value.is_finite() {
            self.metrics.insert(name.into(), value);
        }
    }

    /// Records a written file with its checksum; `root` is stripped from the path.
    pub fn record_output(&mut self, path: &Path, root: &Path) -> Result<()> {
        let bytes = fs::read(path)?;
        let rel = path.strip_prefix(root).unwrap_or(path);
        self.outputs.push(OutputEntry {
            path: rel.to_string_lossy().replace('\\', "/"),
            sha256: hex::encode(Sha256::digest(&bytes)),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }
}

/// sha256 of the canonical (key-sorted, compact) JSON form of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let canonical = serde_json::to_string(&serde_json::to_value(value)?)?;
    Ok(hex::encode(Sha256::digest(canonical.as_bytes())))
}

/// Self-describing envelope around a payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Archive<T> {
    pub format: String,
    pub version: u32,
    pub kind: ArchiveKind,
    pub manifest: Manifest,
    pub payload: T,
}

impl<T: Serialize + DeserializeOwned> Archive<T> {
    pub fn new(kind: ArchiveKind, manifest: Manifest, payload: T) -> Self {
        Self {
            format: ARCHIVE_FORMAT.into(),
            version: ARCHIVE_VERSION,
            kind,
            manifest,
            payload,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str, kind: ArchiveKind) -> Result<Self> {
        let header: serde_json::Value = serde_json::from_str(text)?;
        let format = header.get("format").and_then(|v| v.as_str()).unwrap_or("");
        if format != ARCHIVE_FORMAT {
            return Err(NeelError::Config(format!(
                "not a {ARCHIVE_FORMAT} file (format = {format:?})"
            )));
        }
        let version = header.get("version").and_then(|v| v.as_u64()).unwrap_or(0);
        if version != ARCHIVE_VERSION as u64 {
            return Err(NeelError::Config(format!(
                "archive version {version} is not supported (expected {ARCHIVE_VERSION})"
            )));
        }
        let archive: Self = serde_json::from_value(header)?;
        if archive.kind != kind {
            return Err(NeelError::Config(format!(
                "expected a {kind:?} archive, found {:?}",
                archive.kind
            )));
        }
        Ok(archive)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_json()?)
    }

    pub fn load(path: &Path, kind: ArchiveKind) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?, kind)
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

/// Everything needed to rebuild a [`WallProfile`] exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WallRecord {
    pub params: RescaledParameters,
    pub grid: GridSpec,
    pub winding: Winding,
    /// θ − θ_ref for walls.
    pub periodic_part: Vec<f64>,
    pub theta: Vec<f64>,
    pub derivative: Vec<f64>,
    pub el_residual_norm: f64,
    pub tail_value: f64,
    pub energy: EnergyTerms,
    pub diagnostics: WallDiagnostics,
}

impl WallRecord {
    pub fn from_wall(wall: &WallProfile) -> Self {
        Self {
            params: wall.params,
            grid: wall.grid().spec(),
            winding: wall.profile.winding(),
            periodic_part: wall.profile.periodic_part().to_vec(),
            theta: wall.theta().to_vec(),
            derivative: wall.derivative().to_vec(),
            el_residual_norm: wall.el_residual_norm,
            tail_value: wall.tail_value,
            energy: wall.energy,
            diagnostics: wall.diagnostics.clone(),
        }
    }

    pub fn to_wall(&self) -> Result<WallProfile> {
        self.params.validate()?;
        let grid = self.grid.build()?;
        let profile = PhaseProfile::from_parts(&grid, self.winding, self.periodic_part.clone(), self.theta.clone())?;
        let mismatch = profile
            .slope()
            .iter()
            .zip(&self.derivative)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if !(mismatch <= 1e-9) || self.derivative.len() != grid.len() {
            return Err(NeelError::Config(format!(
                "stored derivative disagrees with the profile by {mismatch:.3e}"
            )));
        }
        Ok(WallProfile {
            profile,
            params: self.params,
            el_residual_norm: self.el_residual_norm,
            tail_value: self.tail_value,
            energy: self.energy,
            diagnostics: self.diagnostics.clone(),
        })
    }
}

pub fn save_wall(path: &Path, wall: &WallProfile, manifest: Manifest) -> Result<()> {
    Archive::new(ArchiveKind::Wall, manifest, WallRecord::from_wall(wall)).save(path)
}

pub fn load_wall(path: &Path) -> Result<(WallProfile, Manifest)> {
    let a: Archive<WallRecord> = Archive::load(path, ArchiveKind::Wall)?;
    Ok((a.payload.to_wall()?, a.manifest))
}

/// A continuation run: settings, orbits and their re-integration checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrbitSet {
    pub params: RescaledParameters,
    pub forcing: ForcingModel,
    pub integrator: IntegratorConfig,
    pub options: PeriodicOptions,
    pub orbits: Vec<PeriodicOrbit>,
    #[serde(default)]
    pub verification: Vec<OrbitVerification>,
    #[serde(default)]
    pub failure: Option<ContinuationFailure>,
    #[serde(default)]
    pub halvings: Vec<f64>,
}

/// CSV with a header row; columns must have equal length.
pub fn write_columns(path: &Path, headers: &[&str], columns: &[&[f64]]) -> Result<()> {
    if headers.len() != columns.len() {
        return Err(NeelError::length(headers.len(), columns.len()));
    }
    let rows = columns.first().map_or(0, |c| c.len());
    if let Some(c) = columns.iter().find(|c| c.len() != rows) {
        return Err(NeelError::length(rows, c.len()));
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(headers)?;
    for i in 0..rows {
        w.write_record(columns.iter().map(|c| c[i].to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads numeric columns, skipping a header row if the first field is not a number.
pub fn read_columns(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(|f| f.parse::<f64>()).collect();
        match parsed {
            Ok(v) => rows.push(v),
            Err(_) if i == 0 => continue,
            Err(e) => {
                return Err(NeelError::Config(format!("{}: row {}: {e}", path.display(), i + 1)));
            }
        }
    }
    Ok(rows)
}

/// Two-column (t, h) table on [0, T]. A missing end point t = T is filled in
/// with h(0) so the waveform wraps.
pub fn read_tabulated_forcing(path: &Path, period: f64) -> Result<Waveform> {
    let rows = read_columns(path)?;
    if rows.iter().any(|r| r.len() != 2) {
        return Err(NeelError::Config(format!(
            "{}: expected two columns (t, value)",
            path.display()
        )));
    }
    let mut times: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let mut values: Vec<f64> = rows.iter().map(|r| r[1]).collect();
    if let (Some(&last), Some(&first)) = (times.last(), values.first()) {
        if last < period {
            times.push(period);
            values.push(first);
        }
    }
    Ok(Waveform::Tabulated { times, values })
}

/// Matrix CSV: the header row holds x nodes after one label cell; every
/// following row is t followed by h(t, x) at those nodes.
pub fn read_space_time_forcing(path: &Path, period: f64) -> Result<Waveform> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut records = r.records();
    let header = records
        .next()
        .ok_or_else(|| NeelError::Config(format!("{}: empty file", path.display())))??;
    let nodes: Vec<f64> = header
        .iter()
        .skip(1)
        .map(|f| f.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| NeelError::Config(format!("{}: header: {e}", path.display())))?;
    let mut times = Vec::new();
    let mut values = Vec::new();
    for rec in records {
        let row: Vec<f64> = rec?
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| NeelError::Config(format!("{}: {e}", path.display())))?;
        if row.len() != nodes.len() + 1 {
            return Err(NeelError::length(nodes.len() + 1, row.len()));
        }
        times.push(row[0]);
        values.push(row[1..].to_vec());
    }
    if let (Some(&last), Some(first)) = (times.last(), values.first().cloned()) {
        if last < period {
            times.push(period);
            values.push(first);
        }
    }
    Ok(Waveform::SpaceTime { times, nodes, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{solve_wall, SolverOptions};
    use crate::grid::Grid;

    #[test]
    fn wall_round_trip_is_exact() {
        let g = Grid::new(20.0, 256).unwrap();
        let w = solve_wall(&RescaledParameters::default(), &g, &SolverOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("wall.json");
        save_wall(&p, &w, Manifest::new("test", "abc")).unwrap();
        let (back, m) = load_wall(&p).unwrap();
        assert_eq!(m.command, "test");
        assert_eq!(WallRecord::from_wall(&back), WallRecord::from_wall(&w));
        assert!(back
            .curvature()
            .iter()
            .zip(w.curvature())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn rejects_wrong_kind_and_version() {
        let a = Archive::new(ArchiveKind::Spectrum, Manifest::new("x", "y"), 1.5f64);
        let text = a.to_json().unwrap();
        assert!(Archive::<f64>::from_json(&text, ArchiveKind::Wall).is_err());
        let bumped = text.replace("\"version\": 1", "\"version\": 99");
        assert!(Archive::<f64>::from_json(&bumped, ArchiveKind::Spectrum).is_err());
        assert_eq!(
            Archive::<f64>::from_json(&text, ArchiveKind::Spectrum).unwrap().payload,
            1.5
        );
    }

    #[test]
    fn hash_ignores_key_order() {
        let a: serde_json::Value = serde_json::from_str(r#"{"a":1,"b":[2,3]}"#).unwrap();
        let b: serde_json::Value = serde_json::from_str(r#"{"b":[2,3],"a":1}"#).unwrap();
        assert_eq!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
    }

    #[test]
    fn csv_round_trip_and_tabulated_wrap() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.csv");
        let t = [0.0, 0.25, 0.5];
        let v = [0.1, 1.0 / 3.0, -0.2];
        write_columns(&p, &["t", "h"], &[&t, &v]).unwrap();
        let rows = read_columns(&p).unwrap();
        assert_eq!(rows[1][1].to_bits(), (1.0f64 / 3.0).to_bits());
        match read_tabulated_forcing(&p, 1.0).unwrap() {
            Waveform::Tabulated { times, values } => {
                assert_eq!(times, vec![0.0, 0.25, 0.5, 1.0]);
                assert_eq!(values[3], 0.1);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn space_time_table() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("hx.csv");
        fs::write(&p, "t,-1,0,1\n0,0,1,0\n0.5,1,2,1\n").unwrap();
        match read_space_time_forcing(&p, 1.0).unwrap() {
            Waveform::SpaceTime { times, nodes, values } => {
                assert_eq!(nodes, vec![-1.0, 0.0, 1.0]);
                assert_eq!(times, vec![0.0, 0.5, 1.0]);
                assert_eq!(values[2], vec![0.0, 1.0, 0.0]);
            }
            _ => unreachable!(),
        }
    }
}
