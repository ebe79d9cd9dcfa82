//! Run manifests and the artifact diff used by `compare`.
//!
//! A manifest is a plain-text file of `[run]`, `[config]`, `[checks]`,
//! `[metrics]` and `[artifacts]` sections, written atomically at run end.
//! Artifacts are listed with their SHA-256 so determinism is checkable by
//! comparing manifests alone; the wall time lives only in `[run]` and never
//! enters an artifact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use otflow::diag::{fmt_f64, write_atomic};
use otflow::dump::{read_cloud, read_field};
use otflow::{Error, Result};
use sha2::{Digest, Sha256};

/// One recorded invariant check; `pass` means `value <= limit`.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub value: f64,
    pub limit: f64,
}

impl CheckResult {
    pub fn bound(name: &str, value: f64, limit: f64) -> Self {
        CheckResult { name: name.to_string(), pass: value <= limit, value, limit }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub subcommand: String,
    pub version: String,
    pub seed: u64,
    pub wall_ms: u128,
    pub checks: Vec<CheckResult>,
    pub metrics: Vec<(String, f64)>,
    /// Resolved config echo in registry order.
    pub config: Vec<(String, String)>,
    /// `(file name, sha256 hex)` relative to the manifest directory.
    pub artifacts: Vec<(String, String)>,
}

impl Manifest {
    pub fn invariants_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        write!(out, "{b:02x}").unwrap();
    }
    out
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

pub fn manifest_to_string(m: &Manifest) -> String {
    let mut out = String::new();
    out.push_str("[run]\n");
    let _ = writeln!(out, "subcommand = {}", m.subcommand);
    let _ = writeln!(out, "version = {}", m.version);
    let _ = writeln!(out, "seed = {}", m.seed);
    let _ = writeln!(out, "wall_ms = {}", m.wall_ms);
    let _ = writeln!(out, "invariants = {}", if m.invariants_pass() { "pass" } else { "fail" });
    out.push_str("\n[config]\n");
    for (k, v) in &m.config {
        let _ = writeln!(out, "{k} = {v}");
    }
    out.push_str("\n[checks]\n");
    for c in &m.checks {
        let _ = writeln!(
            out,
            "{} = {} {} {}",
            c.name,
            if c.pass { "pass" } else { "fail" },
            fmt_f64(c.value),
            fmt_f64(c.limit)
        );
    }
    out.push_str("\n[metrics]\n");
    for (k, v) in &m.metrics {
        let _ = writeln!(out, "{k} = {}", fmt_f64(*v));
    }
    out.push_str("\n[artifacts]\n");
    for (name, hash) in &m.artifacts {
        let _ = writeln!(out, "{name} = {hash}");
    }
    out
}

pub fn write_manifest(path: &Path, m: &Manifest) -> Result<()> {
    write_atomic(path, manifest_to_string(m).as_bytes())
}

fn parse_err(detail: String) -> Error {
    Error::Parse { what: "manifest", detail }
}

pub fn parse_manifest(text: &str) -> Result<Manifest> {
    let mut section = String::new();
    let mut run: BTreeMap<String, String> = BTreeMap::new();
    let mut config = Vec::new();
    let mut checks = Vec::new();
    let mut metrics = Vec::new();
    let mut artifacts = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            section = name.to_string();
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
            .ok_or_else(|| parse_err(format!("line {}: {raw:?}", lineno + 1)))?;
        match section.as_str() {
            "run" => {
                run.insert(key, value);
            }
            "config" => config.push((key, value)),
            "checks" => {
                let parts: Vec<&str> = value.split_whitespace().collect();
                if parts.len() != 3 || (parts[0] != "pass" && parts[0] != "fail") {
                    return Err(parse_err(format!("check line for `{key}`: {value:?}")));
                }
                let value_num: f64 = parts[1]
                    .parse()
                    .map_err(|_| parse_err(format!("check value for `{key}`")))?;
                let limit: f64 = parts[2]
                    .parse()
                    .map_err(|_| parse_err(format!("check limit for `{key}`")))?;
                checks.push(CheckResult {
                    name: key,
                    pass: parts[0] == "pass",
                    value: value_num,
                    limit,
                });
            }
            "metrics" => {
                let v: f64 = value
                    .parse()
                    .map_err(|_| parse_err(format!("metric value for `{key}`")))?;
                metrics.push((key, v));
            }
            "artifacts" => artifacts.push((key, value)),
            other => return Err(parse_err(format!("line outside a known section: [{other}]"))),
        }
    }
    let field = |name: &str| -> Result<String> {
        run.get(name)
            .cloned()
            .ok_or_else(|| parse_err(format!("missing run field `{name}`")))
    };
    Ok(Manifest {
        subcommand: field("subcommand")?,
        version: field("version")?,
        seed: field("seed")?
            .parse()
            .map_err(|_| parse_err("seed is not an integer".to_string()))?,
        wall_ms: field("wall_ms")?
            .parse()
            .map_err(|_| parse_err("wall_ms is not an integer".to_string()))?,
        checks,
        metrics,
        config,
        artifacts,
    })
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    parse_manifest(&std::fs::read_to_string(path)?)
}

/// Per-artifact difference between two runs.
#[derive(Debug, Clone)]
pub struct ArtifactDiff {
    pub name: String,
    /// Grid-weighted L2 for fields, per-atom RMS for clouds, absent for CSVs.
    pub l2: Option<f64>,
    pub max: f64,
    pub hash_equal: bool,
}

/// Sup over matching snapshot indices of the per-snapshot L2 difference.
#[derive(Debug, Clone)]
pub struct TrajectoryDiff {
    pub stem: String,
    pub matched: usize,
    pub sup_l2: f64,
}

#[derive(Debug, Clone)]
pub struct DiffReport {
    pub diffs: Vec<ArtifactDiff>,
    pub trajectories: Vec<TrajectoryDiff>,
    pub only_a: Vec<String>,
    pub only_b: Vec<String>,
}

impl DiffReport {
    pub fn all_zero(&self) -> bool {
        self.diffs.iter().all(|d| d.max == 0.0 && d.l2.unwrap_or(0.0) == 0.0)
    }
}

fn diff_fields(name: &str, pa: &Path, pb: &Path) -> Result<(f64, f64)> {
    let (fa, _) = read_field(pa)?;
    let (fb, _) = read_field(pb)?;
    fa.check_same_shape(&fb)?;
    let data: Vec<f64> = fa.data().iter().zip(fb.data()).map(|(a, b)| a - b).collect();
    let max = data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = otflow::grid::VectorField::from_data(fa.grid(), fa.ncomp(), data)?;
    let _ = name;
    Ok((diff.l2_norm(), max))
}

fn diff_clouds(pa: &Path, pb: &Path) -> Result<(f64, f64)> {
    let (ca, _) = read_cloud(pa)?;
    let (cb, _) = read_cloud(pb)?;
    if ca.d() != cb.d() || ca.m() != cb.m() || ca.n_atoms() != cb.n_atoms() {
        return Err(Error::shape(format!(
            "clouds differ: {} atoms in d={} m={} vs {} atoms in d={} m={}",
            ca.n_atoms(),
            ca.d(),
            ca.m(),
            cb.n_atoms(),
            cb.d(),
            cb.m()
        )));
    }
    let mut sq = 0.0;
    let mut max = 0.0f64;
    for (a, b) in ca.values().iter().zip(cb.values()) {
        let diff = a - b;
        sq += diff * diff;
        max = max.max(diff.abs());
    }
    Ok(((sq / ca.n_atoms() as f64).sqrt(), max))
}

fn diff_csvs(pa: &Path, pb: &Path) -> Result<f64> {
    let ta = std::fs::read_to_string(pa)?;
    let tb = std::fs::read_to_string(pb)?;
    let la: Vec<&str> = ta.lines().collect();
    let lb: Vec<&str> = tb.lines().collect();
    if la.first() != lb.first() {
        return Err(Error::shape(format!(
            "CSV headers differ: {:?} vs {:?}",
            la.first().unwrap_or(&""),
            lb.first().unwrap_or(&"")
        )));
    }
    if la.len() != lb.len() {
        return Err(Error::shape(format!(
            "CSV row counts differ: {} vs {}",
            la.len().saturating_sub(1),
            lb.len().saturating_sub(1)
        )));
    }
    let mut max = 0.0f64;
    for (ra, rb) in la.iter().zip(&lb).skip(1) {
        let ca: Vec<&str> = ra.split(',').collect();
        let cb: Vec<&str> = rb.split(',').collect();
        if ca.len() != cb.len() {
            return Err(Error::shape("CSV column counts differ".to_string()));
        }
        for (va, vb) in ca.iter().zip(&cb) {
            let a: f64 = va.parse().map_err(|_| Error::Parse {
                what: "csv",
                detail: format!("not a number: {va:?}"),
            })?;
            let b: f64 = vb.parse().map_err(|_| Error::Parse {
                what: "csv",
                detail: format!("not a number: {vb:?}"),
            })?;
            max = max.max((a - b).abs());
        }
    }
    Ok(max)
}

/// Snapshot stems: `y_000120.field` belongs to trajectory `y`.
fn snapshot_stem(name: &str) -> Option<(&str, u64)> {
    let base = name.strip_suffix(".field").or_else(|| name.strip_suffix(".cloud"))?;
    let (stem, idx) = base.rsplit_once('_')?;
    let idx: u64 = idx.parse().ok()?;
    if stem.is_empty() {
        None
    } else {
        Some((stem, idx))
    }
}

/// Diff every artifact the two manifests share. Field and cloud snapshots
/// sharing a `<stem>_<index>` pattern are additionally aggregated into a
/// sup-over-index trajectory distance.
pub fn compare_runs(manifest_a: &Path, manifest_b: &Path) -> Result<DiffReport> {
    let ma = read_manifest(manifest_a)?;
    let mb = read_manifest(manifest_b)?;
    let dir_a = manifest_a.parent().unwrap_or(Path::new("."));
    let dir_b = manifest_b.parent().unwrap_or(Path::new("."));
    let hashes_b: BTreeMap<&str, &str> =
        mb.artifacts.iter().map(|(n, h)| (n.as_str(), h.as_str())).collect();
    let names_a: Vec<&str> = ma.artifacts.iter().map(|(n, _)| n.as_str()).collect();

    let mut diffs = Vec::new();
    let mut traj: BTreeMap<String, TrajectoryDiff> = BTreeMap::new();
    for (name, hash_a) in &ma.artifacts {
        let Some(hash_b) = hashes_b.get(name.as_str()) else {
            continue;
        };
        let pa = dir_a.join(name);
        let pb = dir_b.join(name);
        let (l2, max) = if name.ends_with(".field") {
            let (l2, max) = diff_fields(name, &pa, &pb)?;
            (Some(l2), max)
        } else if name.ends_with(".cloud") {
            let (l2, max) = diff_clouds(&pa, &pb)?;
            (Some(l2), max)
        } else if name.ends_with(".csv") {
            (None, diff_csvs(&pa, &pb)?)
        } else {
            continue;
        };
        if let (Some((stem, _)), Some(l2)) = (snapshot_stem(name), l2) {
            let entry = traj.entry(stem.to_string()).or_insert(TrajectoryDiff {
                stem: stem.to_string(),
                matched: 0,
                sup_l2: 0.0,
            });
            entry.matched += 1;
            entry.sup_l2 = entry.sup_l2.max(l2);
        }
        diffs.push(ArtifactDiff {
            name: name.clone(),
            l2,
            max,
            hash_equal: hash_a == hash_b,
        });
    }
    let only_a = ma
        .artifacts
        .iter()
        .map(|(n, _)| n.clone())
        .filter(|n| !hashes_b.contains_key(n.as_str()))
        .collect();
    let only_b = mb
        .artifacts
        .iter()
        .map(|(n, _)| n.clone())
        .filter(|n| !names_a.contains(&n.as_str()))
        .collect();
    Ok(DiffReport {
        diffs,
        trajectories: traj.into_values().collect(),
        only_a,
        only_b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifests_round_trip_through_text() {
        let m = Manifest {
            subcommand: "gnsb".to_string(),
            version: "0.1.0".to_string(),
            seed: 7,
            wall_ms: 1234,
            checks: vec![CheckResult::bound("energy_excess", 1.5e-6, 1e-2)],
            metrics: vec![("final_energy".to_string(), 0.25)],
            config: vec![("out".to_string(), "runs/demo".to_string())],
            artifacts: vec![("gnsb.csv".to_string(), sha256_hex(b"rows"))],
        };
        let text = manifest_to_string(&m);
        assert!(text.contains("invariants = pass"));
        let back = parse_manifest(&text).unwrap();
        assert_eq!(back, m);

        let failing = Manifest {
            checks: vec![CheckResult::bound("energy_excess", 2.0, 1e-2)],
            ..m
        };
        assert!(manifest_to_string(&failing).contains("invariants = fail"));
    }

    #[test]
    fn sha256_matches_a_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn snapshot_names_split_into_stem_and_index() {
        assert_eq!(snapshot_stem("y_000120.field"), Some(("y", 120)));
        assert_eq!(snapshot_stem("b_7.cloud"), Some(("b", 7)));
        assert_eq!(snapshot_stem("run.csv"), None);
        assert_eq!(snapshot_stem("_12.field"), None);
        assert_eq!(snapshot_stem("y_final.field"), None);
    }
}
