//! Sectioned `key = value` run configuration.
//!
//! ```text
//! # comment
//! [lattice]
//! n = 2
//! sizes = 16          # one value for every real axis, or one per axis
//! periods = pi
//! [flow]
//! mode = pcf-oneform
//! t_end = 1.0
//! ```
//!
//! Parsing collects every problem before failing; unknown sections and keys
//! are errors.

use crate::error::{PcfError, Result};
use crate::flow::{Formulation, Integrator, StepControl};
use crate::lattice::{ComplexLattice, MAX_COMPLEX_DIM};
use serde::Serialize;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    PcfMetric,
    PcfOneform,
    PcfSplit,
    Gk,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::PcfMetric => "pcf-metric",
            Mode::PcfOneform => "pcf-oneform",
            Mode::PcfSplit => "pcf-split",
            Mode::Gk => "gk",
        }
    }

    pub fn formulation(self) -> Option<Formulation> {
        match self {
            Mode::PcfMetric => Some(Formulation::Metric),
            Mode::PcfOneform => Some(Formulation::Oneform),
            Mode::PcfSplit => Some(Formulation::Split),
            Mode::Gk => None,
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [Mode::PcfMetric, Mode::PcfOneform, Mode::PcfSplit, Mode::Gk]
            .into_iter()
            .find(|m| m.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatticeConfig {
    pub n: usize,
    /// One entry per real axis.
    pub sizes: Vec<usize>,
    pub periods: Vec<f64>,
    /// Complex dimension of the `+` factor in GK mode.
    pub plus_dim: usize,
}

impl LatticeConfig {
    pub fn build(&self) -> Result<ComplexLattice> {
        ComplexLattice::new(self.n, self.sizes.clone(), self.periods.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum InitialData {
    Seeded { seed: u64, amplitude: f64, max_mode: f64 },
    Snapshot(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowConfig {
    pub mode: Mode,
    pub integrator: Integrator,
    pub cfl_safety: f64,
    pub dt: Option<f64>,
    pub steps: Option<usize>,
    pub t_end: f64,
    pub normalized: bool,
    pub dealias: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SamplingConfig {
    pub sample_every: usize,
    pub snapshot_times: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsConfig {
    pub potential: bool,
    pub fk_order: Option<usize>,
    pub born_infeld: bool,
    pub w_heat: bool,
    /// Centre of the snapshot triples used by `check`.
    pub check_time: f64,
    /// Step of the coarse `check` run; the fine run halves it.
    pub check_dt: Option<f64>,
    /// Steps between the states of a triple.
    pub check_stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub lattice: LatticeConfig,
    pub flow: FlowConfig,
    pub initial: InitialData,
    pub sampling: SamplingConfig,
    pub diagnostics: DiagnosticsConfig,
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn step_control(&self) -> StepControl {
        StepControl {
            dt: self
                .flow
                .dt
                .or(self.flow.steps.filter(|&s| s > 0).map(|s| self.flow.t_end / s as f64)),
            cfl_safety: self.flow.cfl_safety,
            integrator: self.flow.integrator,
            dealias: self.flow.dealias,
        }
    }

    /// The effective configuration in the input format; parsing it gives
    /// back `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let list = |v: Vec<String>| v.join(" ");
        let l = &self.lattice;
        let _ = writeln!(s, "[lattice]");
        let _ = writeln!(s, "n = {}", l.n);
        let _ = writeln!(s, "sizes = {}", list(l.sizes.iter().map(|v| v.to_string()).collect()));
        let _ = writeln!(s, "periods = {}", list(l.periods.iter().map(|v| fmt_f64(*v)).collect()));
        let _ = writeln!(s, "plus_dim = {}", l.plus_dim);
        let f = &self.flow;
        let _ = writeln!(s, "\n[flow]");
        let _ = writeln!(s, "mode = {}", f.mode.name());
        let _ = writeln!(
            s,
            "integrator = {}",
            match f.integrator {
                Integrator::Rk4 => "rk4",
                Integrator::Euler => "euler",
            }
        );
        let _ = writeln!(s, "cfl_safety = {}", fmt_f64(f.cfl_safety));
        if let Some(dt) = f.dt {
            let _ = writeln!(s, "dt = {}", fmt_f64(dt));
        }
        if let Some(n) = f.steps {
            let _ = writeln!(s, "steps = {n}");
        }
        let _ = writeln!(s, "t_end = {}", fmt_f64(f.t_end));
        let _ = writeln!(s, "normalized = {}", f.normalized);
        let _ = writeln!(s, "dealias = {}", f.dealias);
        let _ = writeln!(s, "\n[initial]");
        match &self.initial {
            InitialData::Seeded {
                seed,
                amplitude,
                max_mode,
            } => {
                let _ = writeln!(s, "seed = {seed}");
                let _ = writeln!(s, "amplitude = {}", fmt_f64(*amplitude));
                let _ = writeln!(s, "max_mode = {}", fmt_f64(*max_mode));
            }
            InitialData::Snapshot(p) => {
                let _ = writeln!(s, "snapshot = {}", p.display());
            }
        }
        let _ = writeln!(s, "\n[sampling]");
        let _ = writeln!(s, "sample_every = {}", self.sampling.sample_every);
        let _ = writeln!(
            s,
            "snapshot_times = {}",
            list(self.sampling.snapshot_times.iter().map(|v| fmt_f64(*v)).collect())
        );
        let d = &self.diagnostics;
        let _ = writeln!(s, "\n[diagnostics]");
        let _ = writeln!(s, "potential = {}", d.potential);
        let _ = writeln!(
            s,
            "fk_order = {}",
            d.fk_order.map_or("none".to_string(), |k| k.to_string())
        );
        let _ = writeln!(s, "born_infeld = {}", d.born_infeld);
        let _ = writeln!(s, "w_heat = {}", d.w_heat);
        let _ = writeln!(s, "check_time = {}", fmt_f64(d.check_time));
        if let Some(dt) = d.check_dt {
            let _ = writeln!(s, "check_dt = {}", fmt_f64(dt));
        }
        let _ = writeln!(s, "check_stride = {}", d.check_stride);
        let _ = writeln!(s, "\n[output]");
        let _ = writeln!(s, "dir = {}", self.output_dir.display());
        s
    }
}

/// Shortest decimal text that parses back to the same value.
fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

const KEYS: &[(&str, &[&str])] = &[
    ("lattice", &["n", "sizes", "periods", "plus_dim"]),
    (
        "flow",
        &[
            "mode",
            "integrator",
            "cfl_safety",
            "dt",
            "steps",
            "t_end",
            "normalized",
            "dealias",
        ],
    ),
    ("initial", &["seed", "amplitude", "max_mode", "snapshot"]),
    ("sampling", &["sample_every", "snapshot_times"]),
    (
        "diagnostics",
        &[
            "potential",
            "fk_order",
            "born_infeld",
            "w_heat",
            "check_time",
            "check_dt",
            "check_stride",
        ],
    ),
    ("output", &["dir"]),
];

struct Entry {
    value: String,
    line: usize,
}

struct Reader {
    entries: HashMap<(String, String), Entry>,
    errors: Vec<String>,
}

impl Reader {
    fn raw(&self, sec: &str, key: &str) -> Option<&Entry> {
        self.entries.get(&(sec.to_string(), key.to_string()))
    }

    fn get<T>(&mut self, sec: &str, key: &str, what: &str, parse: impl Fn(&str) -> Option<T>) -> Option<T> {
        let e = self.raw(sec, key)?;
        match parse(&e.value) {
            Some(v) => Some(v),
            None => {
                let msg = format!("line {}: [{sec}] {key}: expected {what}, got '{}'", e.line, e.value);
                self.errors.push(msg);
                None
            }
        }
    }

    fn list<T>(&mut self, sec: &str, key: &str, what: &str, parse: impl Fn(&str) -> Option<T>) -> Option<Vec<T>> {
        self.get(sec, key, what, |s| {
            s.split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .map(&parse)
                .collect()
        })
    }

    fn fail(&mut self, msg: String) {
        self.errors.push(msg);
    }
}

fn parse_f64(s: &str) -> Option<f64> {
    let s = s.trim();
    let pi = std::f64::consts::PI;
    let v = if s == "pi" {
        pi
    } else if let Some(c) = s.strip_suffix("*pi").or_else(|| s.strip_suffix("pi")) {
        c.trim().parse::<f64>().ok()? * pi
    } else {
        s.parse::<f64>().ok()?
    };
    v.is_finite().then_some(v)
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "true" | "yes" | "on" => Some(true),
        "false" | "no" | "off" => Some(false),
        _ => None,
    }
}

fn parse_usize(s: &str) -> Option<usize> {
    s.parse().ok()
}

fn broadcast<T: Copy>(v: Vec<T>, d: usize, name: &str, r: &mut Reader) -> Option<Vec<T>> {
    match v.len() {
        1 => Some(vec![v[0]; d]),
        k if k == d => Some(v),
        k => {
            r.fail(format!("{name} needs 1 or {d} values, got {k}"));
            None
        }
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
}

/// Parse and validate a configuration.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut r = Reader {
        entries: HashMap::new(),
        errors: vec![],
    };
    let mut section: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let name = name.trim();
            if KEYS.iter().any(|(s, _)| *s == name) {
                section = Some(name.to_string());
            } else {
                r.fail(format!("line {ln}: unknown section [{name}]"));
                section = None;
            }
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            r.fail(format!("line {ln}: expected 'key = value', got '{line}'"));
            continue;
        };
        let (key, value) = (key.trim(), value.trim());
        let Some(sec) = &section else {
            r.fail(format!("line {ln}: key '{key}' outside a known section"));
            continue;
        };
        let known = KEYS
            .iter()
            .find(|(s, _)| s == sec)
            .is_some_and(|(_, ks)| ks.contains(&key));
        if !known {
            r.fail(format!("line {ln}: unknown key '{key}' in [{sec}]"));
            continue;
        }
        let id = (sec.clone(), key.to_string());
        if let Some(prev) = r.entries.get(&id) {
            let msg = format!(
                "line {ln}: duplicate key '{key}' in [{sec}] (first set on line {})",
                prev.line
            );
            r.fail(msg);
            continue;
        }
        r.entries.insert(
            id,
            Entry {
                value: value.to_string(),
                line: ln,
            },
        );
    }

    let mode = r
        .get(
            "flow",
            "mode",
            "one of pcf-metric, pcf-oneform, pcf-split, gk",
            Mode::parse,
        )
        .unwrap_or(Mode::PcfOneform);
    let n = r.get("lattice", "n", "a positive integer", parse_usize).unwrap_or(2);
    if n == 0 || n > MAX_COMPLEX_DIM {
        r.fail(format!("n must be between 1 and {MAX_COMPLEX_DIM}, got {n}"));
    }
    let d = 2 * n.clamp(1, MAX_COMPLEX_DIM);
    let sizes = r
        .list("lattice", "sizes", "positive integers", parse_usize)
        .and_then(|v| broadcast(v, d, "sizes", &mut r))
        .unwrap_or(vec![16; d]);
    if sizes.iter().any(|&s| s == 0 || s % 2 == 1) {
        r.fail("sizes must be even".into());
    }
    let periods = r
        .list("lattice", "periods", "positive numbers", parse_f64)
        .and_then(|v| broadcast(v, d, "periods", &mut r))
        .unwrap_or(vec![std::f64::consts::PI; d]);
    if periods.iter().any(|&p| p <= 0.0) {
        r.fail("periods must be positive".into());
    }
    let plus_dim = r
        .get("lattice", "plus_dim", "a positive integer", parse_usize)
        .unwrap_or(n / 2);
    if mode == Mode::Gk && (plus_dim == 0 || plus_dim >= n) {
        r.fail(format!(
            "gk mode needs 0 < plus_dim < n, got plus_dim = {plus_dim}, n = {n}"
        ));
    }

    let integrator = r
        .get("flow", "integrator", "rk4 or euler", |s| match s {
            "rk4" => Some(Integrator::Rk4),
            "euler" => Some(Integrator::Euler),
            _ => None,
        })
        .unwrap_or(Integrator::Rk4);
    let cfl_safety = r.get("flow", "cfl_safety", "a number", parse_f64).unwrap_or(0.1);
    if !(cfl_safety > 0.0 && cfl_safety <= 1.0) {
        r.fail(format!("cfl_safety must lie in (0, 1], got {cfl_safety}"));
    }
    let dt = r.get("flow", "dt", "a number", parse_f64);
    if dt.is_some_and(|v| v <= 0.0) {
        r.fail("dt must be positive".into());
    }
    let steps = r.get("flow", "steps", "a nonnegative integer", parse_usize);
    if dt.is_some() && steps.is_some() {
        r.fail("set at most one of dt and steps".into());
    }
    let t_end = r.get("flow", "t_end", "a number", parse_f64).unwrap_or(1.0);
    if t_end < 0.0 {
        r.fail("t_end must be nonnegative".into());
    }
    let normalized = r
        .get("flow", "normalized", "true or false", parse_bool)
        .unwrap_or(false);
    if normalized && mode != Mode::PcfMetric {
        r.fail("normalized flow needs mode = pcf-metric".into());
    }
    let dealias = r.get("flow", "dealias", "true or false", parse_bool).unwrap_or(true);

    let snapshot = r.raw("initial", "snapshot").map(|e| PathBuf::from(&e.value));
    let seeded = ["seed", "amplitude", "max_mode"]
        .iter()
        .any(|k| r.raw("initial", k).is_some());
    let initial = match snapshot {
        Some(p) => {
            if seeded {
                r.fail("[initial] takes either snapshot or seed/amplitude/max_mode".into());
            }
            InitialData::Snapshot(p)
        }
        None => {
            let seed = r
                .get("initial", "seed", "a nonnegative integer", |s| s.parse().ok())
                .unwrap_or(20240601);
            let amplitude = r.get("initial", "amplitude", "a number", parse_f64).unwrap_or(0.0);
            let max_mode = r.get("initial", "max_mode", "a number", parse_f64).unwrap_or(2.0);
            if amplitude < 0.0 {
                r.fail("amplitude must be nonnegative".into());
            }
            if max_mode < 1.0 {
                r.fail("max_mode must be at least 1".into());
            }
            InitialData::Seeded {
                seed,
                amplitude,
                max_mode,
            }
        }
    };

    let sample_every = r
        .get("sampling", "sample_every", "a positive integer", parse_usize)
        .unwrap_or(1);
    if sample_every == 0 {
        r.fail("sample_every must be positive".into());
    }
    let snapshot_times = r
        .list("sampling", "snapshot_times", "numbers", parse_f64)
        .unwrap_or_default();
    if snapshot_times.windows(2).any(|w| w[1] <= w[0]) {
        r.fail("snapshot_times must be strictly increasing".into());
    }
    if snapshot_times.iter().any(|&t| t < 0.0 || t > t_end) {
        r.fail(format!("snapshot_times must lie in [0, t_end = {t_end}]"));
    }

    let potential = r
        .get("diagnostics", "potential", "true or false", parse_bool)
        .unwrap_or(true);
    let fk_order = r
        .get("diagnostics", "fk_order", "a positive integer or none", |s| match s {
            "none" => Some(None),
            _ => s.parse::<usize>().ok().filter(|&k| k > 0).map(Some),
        })
        .unwrap_or(None);
    let born_infeld = r
        .get("diagnostics", "born_infeld", "true or false", parse_bool)
        .unwrap_or(true);
    let w_heat = r
        .get("diagnostics", "w_heat", "true or false", parse_bool)
        .unwrap_or(false);
    let check_time = r.get("diagnostics", "check_time", "a number", parse_f64).unwrap_or(0.2);
    let check_dt = r.get("diagnostics", "check_dt", "a number", parse_f64);
    let check_stride = r
        .get("diagnostics", "check_stride", "a positive integer", parse_usize)
        .unwrap_or(8);
    if check_dt.is_some_and(|v| v <= 0.0) {
        r.fail("check_dt must be positive".into());
    }
    if check_stride == 0 {
        r.fail("check_stride must be positive".into());
    }
    if check_time <= 0.0 {
        r.fail("check_time must be positive".into());
    }
    if mode == Mode::Gk && (potential || born_infeld || w_heat || fk_order.is_some()) {
        for (k, on) in [
            ("potential", potential && r.raw("diagnostics", "potential").is_some()),
            (
                "born_infeld",
                born_infeld && r.raw("diagnostics", "born_infeld").is_some(),
            ),
            ("w_heat", w_heat),
            ("fk_order", fk_order.is_some()),
        ] {
            if on {
                r.fail(format!("[diagnostics] {k} is not available in gk mode"));
            }
        }
    }
    let (potential, born_infeld) = if mode == Mode::Gk {
        (false, false)
    } else {
        (potential, born_infeld)
    };
    if (born_infeld || w_heat) && !potential && mode != Mode::Gk {
        r.fail("born_infeld and w_heat need potential = true".into());
    }
    let output_dir = r
        .raw("output", "dir")
        .map(|e| PathBuf::from(&e.value))
        .unwrap_or_else(|| PathBuf::from("out"));

    let lattice = LatticeConfig {
        n,
        sizes,
        periods,
        plus_dim,
    };
    if r.errors.is_empty() {
        if let Err(e) = lattice.build() {
            r.fail(e.to_string());
        }
    }
    if !r.errors.is_empty() {
        return Err(PcfError::Config(r.errors));
    }
    Ok(RunConfig {
        lattice,
        flow: FlowConfig {
            mode,
            integrator,
            cfl_safety,
            dt,
            steps,
            t_end,
            normalized,
            dealias,
        },
        initial,
        sampling: SamplingConfig {
            sample_every,
            snapshot_times,
        },
        diagnostics: DiagnosticsConfig {
            potential,
            fk_order,
            born_infeld,
            w_heat,
            check_time,
            check_dt,
            check_stride,
        },
        output_dir,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn errors(text: &str) -> Vec<String> {
        match parse_config(text) {
            Err(PcfError::Config(e)) => e,
            other => panic!("expected config errors, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let c = parse_config("[flow]\nmode = pcf-metric\n").unwrap();
        assert_eq!(c.lattice.n, 2);
        assert_eq!(c.lattice.sizes, vec![16; 4]);
        assert_eq!(c.flow.integrator, Integrator::Rk4);
        assert_eq!(c.sampling.sample_every, 1);
        assert_eq!(c.output_dir, PathBuf::from("out"));
        assert!(matches!(c.initial, InitialData::Seeded { amplitude, .. } if amplitude == 0.0));
    }

    #[test]
    fn odd_size_is_rejected() {
        let e = errors("[lattice]\nsizes = 15\n");
        assert!(e.iter().any(|m| m == "sizes must be even"), "{e:?}");
    }

    #[test]
    fn duplicate_key_names_line() {
        let e = errors("[flow]\nt_end = 1\n\nt_end = 2\n");
        assert!(
            e.iter().any(|m| m.starts_with("line 4:") && m.contains("line 2")),
            "{e:?}"
        );
    }

    #[test]
    fn all_errors_reported_at_once() {
        let e = errors("[lattice]\nsizes = 15\nbogus = 1\n[flow]\nmode = ricci\ncfl_safety = x\n[nowhere]\n");
        assert!(e.len() >= 5, "{e:?}");
        assert!(e.iter().any(|m| m.contains("unknown key 'bogus'")));
        assert!(e.iter().any(|m| m.contains("unknown section [nowhere]")));
        assert!(e.iter().any(|m| m.contains("cfl_safety") && m.contains("'x'")));
    }

    #[test]
    fn pi_periods_and_per_axis_lists() {
        let c = parse_config("[lattice]\nn = 1\nsizes = 8, 12\nperiods = pi 2pi\n").unwrap();
        assert_eq!(c.lattice.sizes, vec![8, 12]);
        assert!((c.lattice.periods[1] - 2.0 * std::f64::consts::PI).abs() < 1e-15);
        assert!(errors("[lattice]\nn = 1\nsizes = 8 8 8\n")
            .iter()
            .any(|m| m.contains("1 or 2 values")));
    }

    #[test]
    fn mode_constraints() {
        assert!(!errors("[flow]\nmode = pcf-oneform\nnormalized = true\n").is_empty());
        assert!(!errors("[lattice]\nn = 2\nplus_dim = 2\n[flow]\nmode = gk\n").is_empty());
        assert!(!errors("[flow]\ndt = 0.1\nsteps = 4\n").is_empty());
        assert!(!errors("[initial]\nsnapshot = a.pcf\nseed = 3\n").is_empty());
        let gk = parse_config("[flow]\nmode = gk\n").unwrap();
        assert_eq!(gk.lattice.plus_dim, 1);
        assert!(!gk.diagnostics.potential);
    }

    #[test]
    fn steps_fix_the_step() {
        let c = parse_config("[flow]\nt_end = 0.5\nsteps = 10\n").unwrap();
        assert_eq!(c.step_control().dt, Some(0.05));
        let z = parse_config("[flow]\nsteps = 0\n").unwrap();
        assert_eq!(z.step_control().dt, None);
    }

    #[test]
    fn effective_text_round_trips() {
        let text = "[lattice]\nn = 1\nsizes = 8 10\nperiods = 1.5\n[flow]\nmode = pcf-split\ndt = 0.001\nt_end = 0.3\n\
                    [initial]\nseed = 9\namplitude = 0.1\n[sampling]\nsample_every = 3\nsnapshot_times = 0.1, 0.2\n\
                    [diagnostics]\nfk_order = 2\nw_heat = true\ncheck_dt = 0.002\n[output]\ndir = /tmp/x\n";
        let c = parse_config(text).unwrap();
        assert_eq!(parse_config(&c.to_text()).unwrap(), c);
        let s = parse_config("[initial]\nsnapshot = some/file.pcf\n").unwrap();
        assert_eq!(parse_config(&s.to_text()).unwrap(), s);
    }
}
