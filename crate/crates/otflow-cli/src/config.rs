//! Plain-text run configuration: `key = value` lines under a `[subcommand]`
//! section header, no nesting. Every key a subcommand accepts is declared in
//! its registry with a type, an optional default and a help line; resolution
//! rejects unknown keys, reports every problem in one pass, and tracks which
//! keys the pipeline actually read so coverage is testable.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};

pub const SUBCOMMANDS: &[&str] = &[
    "rearrange",
    "aht",
    "jko",
    "gnsb",
    "hf",
    "ghb",
    "crossburgers",
    "sweep",
];

/// Value type a key must parse as; checked during resolution so that every
/// malformed value is reported alongside the missing and unknown keys.
#[derive(Debug, Clone, Copy)]
pub enum Kind {
    /// Any non-empty string.
    Str,
    /// One of a fixed set of names.
    Choice(&'static [&'static str]),
    /// Finite float.
    F64,
    /// Finite float, strictly positive.
    PosF64,
    /// Finite float, non-negative.
    NonNegF64,
    /// Unsigned integer.
    Usize,
    /// Unsigned 64-bit integer (seeds).
    U64,
    /// `true` or `false`.
    Bool,
    /// Comma-separated list of positive floats, non-empty.
    PosF64List,
    /// A positive float, or `auto` to let the pipeline pick.
    AutoPosF64,
}

impl Kind {
    fn describe(&self) -> String {
        match self {
            Kind::Str => "a non-empty string".to_string(),
            Kind::Choice(opts) => format!("one of {}", opts.join(", ")),
            Kind::F64 => "a finite float".to_string(),
            Kind::PosF64 => "a positive float".to_string(),
            Kind::NonNegF64 => "a non-negative float".to_string(),
            Kind::Usize => "an unsigned integer".to_string(),
            Kind::U64 => "an unsigned integer".to_string(),
            Kind::Bool => "true or false".to_string(),
            Kind::PosF64List => "a comma-separated list of positive floats".to_string(),
            Kind::AutoPosF64 => "a positive float or auto".to_string(),
        }
    }

    fn check(&self, raw: &str) -> bool {
        match self {
            Kind::Str => !raw.is_empty(),
            Kind::Choice(opts) => opts.contains(&raw),
            Kind::F64 => raw.parse::<f64>().map(|v| v.is_finite()).unwrap_or(false),
            Kind::PosF64 => raw.parse::<f64>().map(|v| v.is_finite() && v > 0.0).unwrap_or(false),
            Kind::NonNegF64 => {
                raw.parse::<f64>().map(|v| v.is_finite() && v >= 0.0).unwrap_or(false)
            }
            Kind::Usize => raw.parse::<usize>().is_ok(),
            Kind::U64 => raw.parse::<u64>().is_ok(),
            Kind::Bool => raw == "true" || raw == "false",
            Kind::PosF64List => {
                let items: Vec<&str> = raw.split(',').map(str::trim).collect();
                !items.is_empty()
                    && items.iter().all(|s| {
                        s.parse::<f64>().map(|v| v.is_finite() && v > 0.0).unwrap_or(false)
                    })
            }
            Kind::AutoPosF64 => raw == "auto" || Kind::PosF64.check(raw),
        }
    }
}

pub struct KeySpec {
    pub name: &'static str,
    pub kind: Kind,
    /// `None` marks the key required.
    pub default: Option<&'static str>,
    pub help: &'static str,
}

const fn req(name: &'static str, kind: Kind, help: &'static str) -> KeySpec {
    KeySpec { name, kind, default: None, help }
}

const fn opt(name: &'static str, kind: Kind, default: &'static str, help: &'static str) -> KeySpec {
    KeySpec { name, kind, default: Some(default), help }
}

const CLOUD_PRESETS: &[&str] = &["identity", "random", "gaussian", "two_clusters"];
const GNSB_FIELDS: &[&str] =
    &["zero", "uniform", "gradient", "single_mode", "smooth_random", "top_heavy"];
const SOLVERS: &[&str] = &["auto", "exact", "auction"];
const FORCINGS: &[&str] = &["hookean", "model1", "model2", "model3"];

const REARRANGE_KEYS: &[KeySpec] = &[
    req("out", Kind::Str, "output directory"),
    req("n_side", Kind::Usize, "atoms per side of the uniform grid"),
    opt("d", Kind::Usize, "2", "space dimension"),
    opt("preset", Kind::Choice(CLOUD_PRESETS), "random", "value cloud preset"),
    opt("seed", Kind::U64, "1", "preset generator seed"),
    opt("scale", Kind::PosF64, "1.0", "preset value scale"),
    opt("solver", Kind::Choice(SOLVERS), "auto", "assignment solver"),
];

const AHT_KEYS: &[KeySpec] = &[
    req("out", Kind::Str, "output directory"),
    req("n", Kind::Usize, "grid resolution per axis (power of two)"),
    req("t_end", Kind::PosF64, "final time"),
    req("dt", Kind::PosF64, "time step"),
    opt("domain", Kind::Choice(&["torus", "box"]), "torus", "spatial domain"),
    opt("d", Kind::Usize, "2", "space dimension (torus only; the box is 2D)"),
    opt(
        "kind",
        Kind::Choice(&["identity", "neg_laplacian"]),
        "neg_laplacian",
        "dissipation operator K",
    ),
    opt("y0", Kind::Choice(GNSB_FIELDS), "smooth_random", "initial map preset"),
    opt("seed", Kind::U64, "1", "preset generator seed"),
    opt("amplitude", Kind::F64, "1.0", "initial map amplitude"),
    opt("scheme", Kind::Choice(&["euler", "midpoint"]), "midpoint", "time scheme"),
    opt("balance_coeff", Kind::PosF64, "10.0", "energy balance tolerance coefficient"),
    opt("stride", Kind::Usize, "0", "snapshot stride in steps, 0 = final only"),
];

const JKO_KEYS: &[KeySpec] = &[
    req("out", Kind::Str, "output directory"),
    req("n_side", Kind::Usize, "atoms per side of the uniform grid"),
    req("h", Kind::PosF64, "proximal step"),
    req("steps", Kind::Usize, "number of proximal steps"),
    opt("d", Kind::Usize, "2", "space dimension"),
    opt("preset", Kind::Choice(CLOUD_PRESETS), "gaussian", "target value cloud preset"),
    opt("seed", Kind::U64, "1", "preset generator seed"),
    opt("scale", Kind::PosF64, "1.0", "preset value scale"),
    opt("solver", Kind::Choice(SOLVERS), "auto", "assignment solver"),
    opt("stride", Kind::Usize, "0", "snapshot stride in steps, 0 = final only"),
];

const GNSB_KEYS: &[KeySpec] = &[
    req("out", Kind::Str, "output directory"),
    req("n", Kind::Usize, "grid resolution per axis (power of two)"),
    req("eps", Kind::PosF64, "inertia epsilon"),
    req("t_end", Kind::PosF64, "final time"),
    req("dt", Kind::PosF64, "time step"),
    opt("domain", Kind::Choice(&["torus", "box"]), "torus", "spatial domain"),
    opt("d", Kind::Usize, "2", "space dimension (torus only; the box is 2D)"),
    opt(
        "kind",
        Kind::Choice(&["none", "identity", "neg_laplacian"]),
        "identity",
        "dissipation operator K",
    ),
    opt("y0", Kind::Choice(GNSB_FIELDS), "smooth_random", "initial value preset"),
    opt("seed", Kind::U64, "1", "preset generator seed"),
    opt("amplitude", Kind::F64, "1.0", "initial value amplitude"),
    opt("forcing", Kind::Choice(FORCINGS), "hookean", "forcing preset"),
    opt("kappa", Kind::PosF64, "1.0", "spring stiffness"),
    opt(
        "carrier",
        Kind::Choice(&["zero", "drift", "swirl"]),
        "zero",
        "anchor velocity (model1 only)",
    ),
    opt("drift_x", Kind::F64, "0.0", "carrier drift, first component"),
    opt("drift_y", Kind::F64, "0.0", "carrier drift, second component"),
    opt("omega", Kind::F64, "1.0", "carrier swirl rate"),
    opt(
        "anchor0",
        Kind::Choice(&["position", "zero"]),
        "position",
        "initial anchors for the two-block models",
    ),
    opt("strang", Kind::Bool, "false", "symmetrize the source split"),
    opt("stride", Kind::Usize, "0", "snapshot stride in steps, 0 = final only"),
    opt("excess_coeff", Kind::PosF64, "10.0", "energy excess tolerance coefficient"),
    opt("div_tol", Kind::PosF64, "1e-6", "divergence tolerance on the velocity"),
];

const HF_KEYS: &[KeySpec] = &[
    req("out", Kind::Str, "output directory"),
    req("n", Kind::Usize, "grid resolution per axis (power of two)"),
    req("t_end", Kind::PosF64, "final time"),
    req("dt", Kind::PosF64, "time step"),
    opt("domain", Kind::Choice(&["torus", "box"]), "torus", "spatial domain"),
    opt("d", Kind::Usize, "2", "space dimension (torus only; the box is 2D)"),
    opt(
        "kind",
        Kind::Choice(&["identity", "neg_laplacian"]),
        "identity",
        "dissipation operator K (must be coercive)",
    ),
    opt("y0", Kind::Choice(GNSB_FIELDS), "smooth_random", "initial value preset"),
    opt("seed", Kind::U64, "1", "preset generator seed"),
    opt("amplitude", Kind::F64, "1.0", "initial value amplitude"),
    opt("forcing", Kind::Choice(FORCINGS), "hookean", "forcing preset"),
    opt("kappa", Kind::PosF64, "1.0", "spring stiffness"),
    opt(
        "carrier",
        Kind::Choice(&["zero", "drift", "swirl"]),
        "zero",
        "anchor velocity (model1 only)",
    ),
    opt("drift_x", Kind::F64, "0.0", "carrier drift, first component"),
    opt("drift_y", Kind::F64, "0.0", "carrier drift, second component"),
    opt("omega", Kind::F64, "1.0", "carrier swirl rate"),
    opt(
        "anchor0",
        Kind::Choice(&["position", "zero"]),
        "position",
        "initial anchors for the two-block models",
    ),
    opt("stride", Kind::Usize, "0", "snapshot stride in steps, 0 = final only"),
    opt(
        "balance_tol",
        Kind::AutoPosF64,
        "auto",
        "force-balance residual tolerance; auto is 1e-6 on the torus, 0.1 h^2 on the box",
    ),
    opt("div_tol", Kind::PosF64, "1e-6", "divergence tolerance on the velocity"),
];

const GHB_KEYS: &[KeySpec] = &[
    req("out", Kind::Str, "output directory"),
    req("n_side", Kind::Usize, "atoms per side of the uniform grid"),
    req("h", Kind::PosF64, "time step"),
    req("t_end", Kind::PosF64, "final time"),
    opt("d", Kind::Usize, "2", "space dimension"),
    opt("preset", Kind::Choice(CLOUD_PRESETS), "random", "initial value cloud preset"),
    opt("seed", Kind::U64, "1", "preset generator seed"),
    opt("scale", Kind::PosF64, "1.0", "preset value scale"),
    opt(
        "forcing",
        Kind::Choice(&["zero", "contract", "expand", "rotate"]),
        "rotate",
        "value forcing preset",
    ),
    opt("kappa", Kind::PosF64, "1.0", "forcing rate"),
    opt("solver", Kind::Choice(SOLVERS), "auto", "assignment solver"),
    opt("stride", Kind::Usize, "0", "snapshot stride in steps, 0 = final only"),
    opt("weak_coeff", Kind::PosF64, "20.0", "weak residual tolerance coefficient (times h)"),
    opt("bins", Kind::Usize, "0", "density histogram bins per axis, 0 = skip"),
    opt("bandwidth", Kind::NonNegF64, "0.0", "density smoothing bandwidth in bins, 0 = none"),
];

const CROSSBURGERS_KEYS: &[KeySpec] = &[
    req("out", Kind::Str, "output directory"),
    req("n_s", Kind::Usize, "arclength resolution (power of two)"),
    req("t_end", Kind::PosF64, "final time"),
    req("dt", Kind::PosF64, "time step"),
    opt("profile", Kind::Choice(&["family", "mode", "random"]), "family", "initial profile"),
    opt("alpha0", Kind::NonNegF64, "1.0", "family transverse amplitude"),
    opt("beta0", Kind::F64, "0.0", "family axial offset"),
    opt("mode_k", Kind::Usize, "1", "wavenumber of the mode profile"),
    opt("seed", Kind::U64, "1", "random profile seed"),
    opt("amplitude", Kind::F64, "1.0", "random profile amplitude"),
    opt("viscous", Kind::Bool, "true", "keep the diffusion term"),
    opt("scheme", Kind::Choice(&["imex", "explicit"]), "imex", "time scheme"),
    opt("stride", Kind::Usize, "0", "snapshot stride in steps, 0 = final only"),
    opt("decay_tol", Kind::AutoPosF64, "auto", "decay identity tolerance, auto = 100 dt^2"),
    opt("family_tol", Kind::PosF64, "1e-3", "family tracking tolerance"),
];

const SWEEP_KEYS: &[KeySpec] = &[
    req("out", Kind::Str, "output directory"),
    req("n", Kind::Usize, "grid resolution per axis (power of two)"),
    req("t_end", Kind::PosF64, "final time"),
    req("dt", Kind::PosF64, "time step cap (each eps runs at min(dt, eps/2))"),
    opt("eps_list", Kind::PosF64List, "1e-1,1e-2,1e-3,1e-4", "inertia values to sweep"),
    opt("domain", Kind::Choice(&["torus", "box"]), "torus", "spatial domain"),
    opt("d", Kind::Usize, "2", "space dimension (torus only; the box is 2D)"),
    opt(
        "kind",
        Kind::Choice(&["identity", "neg_laplacian"]),
        "identity",
        "dissipation operator K (must be coercive)",
    ),
    opt("y0", Kind::Choice(GNSB_FIELDS), "smooth_random", "initial value preset"),
    opt("seed", Kind::U64, "1", "preset generator seed"),
    opt("amplitude", Kind::F64, "1.0", "initial value amplitude"),
    opt("forcing", Kind::Choice(FORCINGS), "hookean", "forcing preset"),
    opt("kappa", Kind::PosF64, "1.0", "spring stiffness"),
    opt(
        "carrier",
        Kind::Choice(&["zero", "drift", "swirl"]),
        "zero",
        "anchor velocity (model1 only)",
    ),
    opt("drift_x", Kind::F64, "0.0", "carrier drift, first component"),
    opt("drift_y", Kind::F64, "0.0", "carrier drift, second component"),
    opt("omega", Kind::F64, "1.0", "carrier swirl rate"),
    opt(
        "anchor0",
        Kind::Choice(&["position", "zero"]),
        "position",
        "initial anchors for the two-block models",
    ),
    opt("excess_coeff", Kind::PosF64, "10.0", "energy excess tolerance coefficient"),
];

pub fn registry(sub: &str) -> Option<&'static [KeySpec]> {
    match sub {
        "rearrange" => Some(REARRANGE_KEYS),
        "aht" => Some(AHT_KEYS),
        "jko" => Some(JKO_KEYS),
        "gnsb" => Some(GNSB_KEYS),
        "hf" => Some(HF_KEYS),
        "ghb" => Some(GHB_KEYS),
        "crossburgers" => Some(CROSSBURGERS_KEYS),
        "sweep" => Some(SWEEP_KEYS),
        _ => None,
    }
}

/// One-line-per-key summary of a registry, used by `validate` on an empty
/// config and by the usage text.
pub fn describe_keys(sub: &str) -> String {
    let mut out = format!("[{sub}]\n");
    for spec in registry(sub).unwrap_or(&[]) {
        let status = match spec.default {
            None => "required".to_string(),
            Some(d) => format!("default {d}"),
        };
        out.push_str(&format!("  {} ({}) - {}\n", spec.name, status, spec.help));
    }
    out
}

/// Sections of a config file in file order; keys keep file order too.
pub type Sections = Vec<(String, Vec<(String, String)>)>;

fn key_ok(s: &str) -> bool {
    !s.is_empty()
        && s.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

/// Parse `key = value` lines under `[section]` headers. `#` starts a
/// comment. Every malformed line, unknown section and duplicate is
/// collected; the parse fails with the full list.
pub fn parse_sections(text: &str) -> Result<Sections, Vec<String>> {
    let mut sections: Sections = Vec::new();
    let mut errors = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let n = lineno + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            match name.strip_suffix(']') {
                Some(name) if SUBCOMMANDS.contains(&name) => {
                    if sections.iter().any(|(s, _)| s == name) {
                        errors.push(format!("line {n}: duplicate section [{name}]"));
                    } else {
                        sections.push((name.to_string(), Vec::new()));
                    }
                }
                Some(name) => {
                    errors.push(format!(
                        "line {n}: unknown section [{name}] (expected one of {})",
                        SUBCOMMANDS.join(", ")
                    ));
                    // Park the keys somewhere so they do not cascade.
                    sections.push((name.to_string(), Vec::new()));
                }
                None => errors.push(format!("line {n}: unterminated section header {line:?}")),
            }
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            errors.push(format!("line {n}: expected `key = value`, got {line:?}"));
            continue;
        };
        let key = key.trim();
        let value = value.trim();
        if !key_ok(key) {
            errors.push(format!("line {n}: bad key {key:?} (lowercase, digits, underscores)"));
            continue;
        }
        if value.is_empty() {
            errors.push(format!("line {n}: key `{key}` has an empty value"));
            continue;
        }
        match sections.last_mut() {
            None => errors.push(format!("line {n}: key `{key}` before any [section] header")),
            Some((_, entries)) => {
                if entries.iter().any(|(k, _)| k == key) {
                    errors.push(format!("line {n}: duplicate key `{key}`"));
                } else {
                    entries.push((key.to_string(), value.to_string()));
                }
            }
        }
    }
    // Drop the parking sections for unknown names.
    sections.retain(|(name, _)| SUBCOMMANDS.contains(&name.as_str()));
    if errors.is_empty() {
        Ok(sections)
    } else {
        Err(errors)
    }
}

/// A section checked against its registry: defaults filled in, every value
/// well-formed. Reads are recorded so a coverage test can prove the
/// pipeline consumes every declared key.
#[derive(Debug)]
pub struct Resolved {
    sub: &'static str,
    order: Vec<&'static str>,
    values: BTreeMap<&'static str, String>,
    read: RefCell<BTreeSet<&'static str>>,
}

/// Check a section's entries against the `sub` registry, reporting every
/// unknown key, missing required key and malformed value at once.
pub fn resolve(sub: &str, entries: &[(String, String)]) -> Result<Resolved, Vec<String>> {
    let Some(specs) = registry(sub) else {
        return Err(vec![format!("unknown subcommand {sub:?}")]);
    };
    let sub = SUBCOMMANDS.iter().find(|s| **s == sub).unwrap();
    let mut errors = Vec::new();
    for (key, _) in entries {
        if !specs.iter().any(|s| s.name == key) {
            errors.push(format!("[{sub}] unknown key `{key}`"));
        }
    }
    let mut values = BTreeMap::new();
    let mut order = Vec::with_capacity(specs.len());
    for spec in specs {
        order.push(spec.name);
        let raw = entries.iter().find(|(k, _)| k == spec.name).map(|(_, v)| v.as_str());
        match (raw, spec.default) {
            (None, None) => {
                errors.push(format!(
                    "[{sub}] missing required key `{}` ({})",
                    spec.name, spec.help
                ));
            }
            (None, Some(default)) => {
                values.insert(spec.name, default.to_string());
            }
            (Some(raw), _) => {
                if spec.kind.check(raw) {
                    values.insert(spec.name, raw.to_string());
                } else {
                    errors.push(format!(
                        "[{sub}] key `{}`: expected {}, got {raw:?}",
                        spec.name,
                        spec.kind.describe()
                    ));
                }
            }
        }
    }
    if !errors.is_empty() {
        return Err(errors);
    }
    Ok(Resolved { sub, order, values, read: RefCell::new(BTreeSet::new()) })
}

impl Resolved {
    pub fn subcommand(&self) -> &'static str {
        self.sub
    }

    fn raw(&self, name: &str) -> &str {
        let key = self
            .order
            .iter()
            .find(|k| **k == name)
            .unwrap_or_else(|| panic!("[{}] reads undeclared key `{name}`", self.sub));
        self.read.borrow_mut().insert(key);
        &self.values[key]
    }

    pub fn str(&self, name: &str) -> &str {
        self.raw(name)
    }

    pub fn f64(&self, name: &str) -> f64 {
        self.raw(name).parse().unwrap()
    }

    pub fn usize(&self, name: &str) -> usize {
        self.raw(name).parse().unwrap()
    }

    pub fn u64(&self, name: &str) -> u64 {
        self.raw(name).parse().unwrap()
    }

    pub fn bool(&self, name: &str) -> bool {
        self.raw(name) == "true"
    }

    pub fn f64_list(&self, name: &str) -> Vec<f64> {
        self.raw(name).split(',').map(|s| s.trim().parse().unwrap()).collect()
    }

    /// `auto` resolved to a computed value; the echo is updated so the
    /// manifest records the number actually used.
    pub fn auto_f64(&mut self, name: &str, auto: f64) -> f64 {
        if self.raw(name) == "auto" {
            let key = *self.order.iter().find(|k| **k == name).unwrap();
            self.values.insert(key, format!("{auto:e}"));
            auto
        } else {
            self.raw(name).parse().unwrap()
        }
    }

    /// Overwrite the output directory (the `--out` CLI flag).
    pub fn override_out(&mut self, out: &str) {
        let key = *self.order.iter().find(|k| **k == "out").unwrap();
        self.values.insert(key, out.to_string());
    }

    /// Declared keys the pipeline never read; the coverage test requires
    /// this to be empty after plan construction.
    pub fn unread(&self) -> Vec<&'static str> {
        let read = self.read.borrow();
        self.order.iter().filter(|k| !read.contains(*k)).copied().collect()
    }

    /// Resolved `(key, value)` pairs in registry order, for the config echo.
    pub fn echo(&self) -> Vec<(String, String)> {
        self.order
            .iter()
            .map(|k| (k.to_string(), self.values[k].clone()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parser_handles_comments_sections_and_reports_all_errors() {
        let text = "\n# demo\n[aht]\nn = 64\nt_end = 1.0\n";
        let sections = parse_sections(text).unwrap();
        assert_eq!(sections.len(), 1);
        assert_eq!(sections[0].0, "aht");
        assert_eq!(sections[0].1.len(), 2);

        let bad = "x = 1\n[aht]\nn = 64\nn = 32\nbroken line\n[nope]\nk = v\n";
        let errors = parse_sections(bad).unwrap_err();
        let text = errors.join("\n");
        assert!(text.contains("before any [section]"), "{text}");
        assert!(text.contains("duplicate key `n`"), "{text}");
        assert!(text.contains("expected `key = value`"), "{text}");
        assert!(text.contains("unknown section [nope]"), "{text}");
        assert_eq!(errors.len(), 4, "{text}");
    }

    #[test]
    fn resolution_reports_unknown_missing_and_malformed_together() {
        let entries = vec![
            ("bogus".to_string(), "1".to_string()),
            ("dt".to_string(), "fast".to_string()),
        ];
        let errors = resolve("aht", &entries).unwrap_err();
        let text = errors.join("\n");
        assert!(text.contains("unknown key `bogus`"), "{text}");
        assert!(text.contains("missing required key `out`"), "{text}");
        assert!(text.contains("missing required key `n`"), "{text}");
        assert!(text.contains("missing required key `t_end`"), "{text}");
        assert!(text.contains("key `dt`: expected a positive float"), "{text}");
        assert_eq!(errors.len(), 5, "{text}");
    }

    #[test]
    fn defaults_fill_in_and_reads_are_tracked() {
        let entries = vec![
            ("out".to_string(), "runs/demo".to_string()),
            ("n".to_string(), "16".to_string()),
            ("t_end".to_string(), "0.5".to_string()),
            ("dt".to_string(), "0.01".to_string()),
        ];
        let res = resolve("aht", &entries).unwrap();
        assert_eq!(res.str("y0"), "smooth_random");
        assert_eq!(res.usize("n"), 16);
        assert!(res.unread().contains(&"seed"));
        assert!(!res.unread().contains(&"n"));
        let echo = res.echo();
        assert_eq!(echo[0].0, "out");
        assert!(echo.iter().any(|(k, v)| k == "kind" && v == "neg_laplacian"));
    }

    #[test]
    fn auto_keys_resolve_and_update_the_echo() {
        let entries = vec![
            ("out".to_string(), "runs/cb".to_string()),
            ("n_s".to_string(), "16".to_string()),
            ("t_end".to_string(), "0.1".to_string()),
            ("dt".to_string(), "0.01".to_string()),
        ];
        let mut res = resolve("crossburgers", &entries).unwrap();
        let tol = res.auto_f64("decay_tol", 100.0 * 0.01 * 0.01);
        assert_eq!(tol, 1e-2);
        assert!(res.echo().iter().any(|(k, v)| k == "decay_tol" && v == "1e-2"));
    }

    #[test]
    fn every_registry_is_well_formed() {
        for sub in SUBCOMMANDS {
            let specs = registry(sub).unwrap();
            let mut seen = BTreeSet::new();
            for spec in specs {
                assert!(key_ok(spec.name), "bad key name {:?}", spec.name);
                assert!(seen.insert(spec.name), "duplicate key {:?} in [{sub}]", spec.name);
                assert!(!spec.help.is_empty());
                if let Some(default) = spec.default {
                    assert!(spec.kind.check(default), "default for {:?} fails its kind", spec.name);
                }
            }
            assert!(specs.iter().any(|s| s.name == "out"));
            assert!(describe_keys(sub).contains("required"));
        }
    }
}
