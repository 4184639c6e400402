//! Config-driven runs and the self-contained `check`.

use crate::config::{InitialData, Mode, RunConfig};
use crate::diagnostics::{
    flow_record, identity_suite, monotone_monitors, potential_of, subsolution_monitor, DiagnosticsRecord,
    IdentityReport, MonotoneReport, MonotoneTolerance, RecordOptions, SubsolutionReport, SuiteTolerance, REPORT_SCHEMA,
};
use crate::error::{PcfError, Result};
use crate::field::Field;
use crate::flow::{random_pluriclosed_perturbation, step, step_size, Background, FlowState, Formulation, StepControl};
use crate::gk::{gk_cfl_dt, gk_record, gk_step, random_gk_potential, GkBackground, GkState};
use crate::hermitian::metric_from_oneform;
use crate::io::{log_fit, read_snapshot, write_atomic, write_series, write_snapshot, AbortInfo, Snapshot, Summary};
use crate::spectral::Grid;
use num_complex::Complex64 as C64;
use serde::Serialize;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

/// A state of either flow.
#[derive(Debug, Clone)]
pub enum RunState {
    Flow(FlowState),
    Gk(GkState),
}

impl RunState {
    pub fn t(&self) -> f64 {
        match self {
            RunState::Flow(s) => s.t,
            RunState::Gk(s) => s.t,
        }
    }

    fn set_t(&mut self, t: f64) {
        match self {
            RunState::Flow(s) => s.t = t,
            RunState::Gk(s) => s.t = t,
        }
    }

    pub fn snapshot(&self) -> Snapshot {
        match self {
            RunState::Flow(s) => Snapshot::of_flow(s),
            RunState::Gk(s) => Snapshot::of_gk(s),
        }
    }

    /// Componentwise lattice mean of the metric.
    fn metric_means(&self) -> Result<Vec<C64>> {
        Ok(match self {
            RunState::Flow(s) => s.g.field().means(),
            RunState::Gk(s) => s.metric()?.field().means(),
        })
    }

    fn step_size(&self, ctrl: &StepControl) -> Result<f64> {
        match self {
            RunState::Flow(s) => step_size(s, ctrl),
            RunState::Gk(s) => Ok(ctrl.dt.unwrap_or_else(|| gk_cfl_dt(s, ctrl))),
        }
    }

    fn advance(&self, ctrl: &StepControl, dt: f64) -> Result<Self> {
        Ok(match self {
            RunState::Flow(s) => RunState::Flow(step(s, ctrl, dt)?),
            RunState::Gk(s) => RunState::Gk(gk_step(s, ctrl, dt)?),
        })
    }
}

/// How the initial data came about.
#[derive(Debug, Clone, Serialize)]
pub struct InitialInfo {
    pub amplitude: Option<f64>,
    pub halvings: u32,
    pub snapshot: Option<String>,
}

/// Convert a flow state to another formulation with the same metric.
pub fn reformulate(s: &FlowState, target: Formulation) -> Result<FlowState> {
    if s.formulation == target {
        return Ok(s.clone());
    }
    let bg = s.background.clone();
    let mut out = match target {
        Formulation::Metric => FlowState::metric(s.g.field().clone(), bg, false)?,
        Formulation::Oneform => FlowState::oneform(potential_of(s)?, bg)?,
        Formulation::Split => {
            let alpha = potential_of(s)?;
            let f = Field::zeros(s.grid(), vec![], "");
            FlowState::split(alpha, f, bg)?
        }
    };
    out.t = s.t;
    Ok(out)
}

pub fn initial_state(config: &RunConfig) -> Result<(RunState, InitialInfo)> {
    let grid = Grid::new(config.lattice.build()?);
    let n = config.lattice.n;
    match &config.initial {
        InitialData::Snapshot(path) => {
            let snap = read_snapshot(path)?;
            let info = InitialInfo {
                amplitude: None,
                halvings: 0,
                snapshot: Some(path.display().to_string()),
            };
            let state = match config.flow.mode.formulation() {
                None => RunState::Gk(snap.to_gk_state(&grid)?),
                Some(form) => {
                    let mut s = reformulate(&snap.to_flow_state(&grid)?, form)?;
                    s.normalized = config.flow.normalized;
                    RunState::Flow(s)
                }
            };
            Ok((state, info))
        }
        InitialData::Seeded {
            seed,
            amplitude,
            max_mode,
        } => match config.flow.mode.formulation() {
            None => {
                let k = config.lattice.plus_dim;
                let bg = GkBackground::identity(k, n - k);
                let (u, amp, halvings) = random_gk_potential(&grid, k, &bg, *seed, *amplitude, *max_mode)?;
                let info = InitialInfo {
                    amplitude: Some(amp),
                    halvings,
                    snapshot: None,
                };
                Ok((RunState::Gk(GkState::new(u, k, bg)?), info))
            }
            Some(form) => {
                let bg = Background::identity(n);
                let p = random_pluriclosed_perturbation(&grid, &bg, *seed, *amplitude, *max_mode)?;
                let info = InitialInfo {
                    amplitude: Some(p.amplitude),
                    halvings: p.halvings,
                    snapshot: None,
                };
                let s = match form {
                    Formulation::Metric => {
                        let g = metric_from_oneform(&Field::constant_matrix(&grid, &bg.ghat), &p.alpha, None)?;
                        FlowState::metric(g, bg, config.flow.normalized)?
                    }
                    Formulation::Oneform => FlowState::oneform(p.alpha, bg)?,
                    Formulation::Split => FlowState::split(p.alpha, Field::zeros(&grid, vec![], ""), bg)?,
                };
                Ok((RunState::Flow(s), info))
            }
        },
    }
}

pub fn record_options(config: &RunConfig) -> RecordOptions {
    let d = &config.diagnostics;
    RecordOptions {
        potential: d.potential,
        fk_order: d.fk_order,
        born_infeld: d.born_infeld,
        w_heat: d.w_heat,
    }
}

fn record_of(
    s: &RunState,
    mean0: &[C64],
    opts: &RecordOptions,
    before: Option<&RunState>,
    after: Option<&RunState>,
) -> Result<DiagnosticsRecord> {
    match s {
        RunState::Gk(g) => gk_record(g, mean0),
        RunState::Flow(f) => {
            let neighbors = opts.w_heat.then(|| (flow_or(before, f), flow_or(after, f)));
            flow_record(f, mean0, opts, neighbors)
        }
    }
}

fn flow_or<'a>(o: Option<&'a RunState>, f: &'a FlowState) -> &'a FlowState {
    match o {
        Some(RunState::Flow(x)) => x,
        _ => f,
    }
}

/// In-memory result of [`evolve`].
#[derive(Debug, Clone)]
pub struct Evolution {
    pub records: Vec<DiagnosticsRecord>,
    pub steps: usize,
    pub abort: Option<AbortInfo>,
    pub initial: RunState,
    pub last: RunState,
    /// `(time, state)` at each configured snapshot time reached.
    pub snapshots: Vec<(f64, RunState)>,
}

/// Time levels the stepper lands on exactly.
fn targets(config: &RunConfig) -> Vec<f64> {
    let mut t: Vec<f64> = config
        .sampling
        .snapshot_times
        .iter()
        .copied()
        .filter(|&x| x > 0.0)
        .collect();
    t.push(config.flow.t_end);
    t.dedup();
    t
}

/// Run the configured flow from `start` without touching the disk.
pub fn evolve(config: &RunConfig, start: RunState) -> Result<Evolution> {
    let ctrl = config.step_control();
    let opts = record_options(config);
    let mean0 = start.metric_means()?;
    let every = config.sampling.sample_every;
    let t_end = config.flow.t_end;
    let mut snapshots = vec![];
    if config.sampling.snapshot_times.first() == Some(&0.0) {
        snapshots.push((0.0, start.clone()));
    }
    let mut records = vec![];
    let mut abort = None;
    let mut prev: Option<RunState> = None;
    let mut cur = start.clone();
    // A sampled state waits one step for its successor, which the W heat
    // column needs.
    let mut pending = true;
    let mut steps = 0;
    let stepping = config.flow.steps != Some(0);
    let mut goals = targets(config).into_iter().peekable();
    while stepping && cur.t() < t_end {
        let Some(&goal) = goals.peek() else { break };
        let t = cur.t();
        let mut dt = cur.step_size(&ctrl)?;
        let landing = t + dt >= goal - 1e-9 * dt;
        if landing {
            dt = goal - t;
        }
        let mut next = match cur.advance(&ctrl, dt) {
            Ok(s) => s,
            Err(PcfError::Positivity(p)) => {
                abort = Some(AbortInfo {
                    t,
                    step: steps + 1,
                    message: p.to_string(),
                });
                break;
            }
            Err(e) => return Err(e),
        };
        steps += 1;
        if landing {
            next.set_t(goal);
            goals.next();
            if config.sampling.snapshot_times.contains(&goal) {
                snapshots.push((goal, next.clone()));
            }
        }
        if pending {
            let r = record_of(&cur, &mean0, &opts, prev.as_ref(), Some(&next))?;
            if !r.is_finite() {
                abort = Some(AbortInfo {
                    t: cur.t(),
                    step: steps - 1,
                    message: "non-finite diagnostics".into(),
                });
                pending = false;
                break;
            }
            records.push(r);
        }
        pending = steps % every == 0 || next.t() >= t_end;
        prev = Some(std::mem::replace(&mut cur, next));
    }
    if pending {
        let r = record_of(&cur, &mean0, &opts, prev.as_ref(), None)?;
        if r.is_finite() {
            records.push(r);
        } else if abort.is_none() {
            abort = Some(AbortInfo {
                t: cur.t(),
                step: steps,
                message: "non-finite diagnostics".into(),
            });
        }
    }
    Ok(Evolution {
        records,
        steps,
        abort,
        initial: start,
        last: cur,
        snapshots,
    })
}

/// Columns whose logarithm is fitted in the summary.
const FIT_COLUMNS: &[&str] = &["torsion_sq_sup", "dalpha_sq_sup", "sup_abs_udot"];

fn fits(records: &[DiagnosticsRecord]) -> Vec<(String, Option<crate::io::LogFit>)> {
    let Some(last) = records.last() else {
        return vec![];
    };
    let t1 = last.t;
    let cols: Vec<Vec<(String, f64)>> = records.iter().map(|r| r.columns()).collect();
    FIT_COLUMNS
        .iter()
        .filter(|name| cols[0].iter().any(|(n, _)| n == *name))
        .map(|name| {
            let pts: Vec<(f64, f64)> = records
                .iter()
                .zip(&cols)
                .map(|(r, c)| (r.t, c.iter().find(|(n, _)| n == name).map_or(f64::NAN, |x| x.1)))
                .collect();
            (name.to_string(), log_fit(&pts, 0.5 * t1, t1))
        })
        .collect()
}

/// Files and in-memory results of [`run`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub evolution: Evolution,
    pub initial: InitialInfo,
    pub summary: Summary,
    pub series_path: PathBuf,
    pub snapshot_paths: Vec<PathBuf>,
}

/// Evolve per `config` and write the effective config, `series.csv`, the
/// snapshots (`snapshot_NNN.pcf` at each snapshot time, `final.pcf`) and
/// `summary.json` into the output directory.
pub fn run(config: &RunConfig) -> Result<RunOutput> {
    let clock = Instant::now();
    let dir = &config.output_dir;
    std::fs::create_dir_all(dir)?;
    write_atomic(&dir.join("config.effective"), config.to_text().as_bytes())?;
    let (start, initial) = initial_state(config)?;
    let evolution = evolve(config, start)?;
    let series_path = dir.join("series.csv");
    write_series(&series_path, &evolution.records)?;
    let mut snapshot_paths = vec![];
    for (k, (_, s)) in evolution.snapshots.iter().enumerate() {
        let p = dir.join(format!("snapshot_{k:03}.pcf"));
        write_snapshot(&p, &s.snapshot())?;
        snapshot_paths.push(p);
    }
    let p = dir.join("final.pcf");
    write_snapshot(&p, &evolution.last.snapshot())?;
    snapshot_paths.push(p);
    let summary = Summary {
        schema: REPORT_SCHEMA,
        mode: config.flow.mode.name().into(),
        steps: evolution.steps,
        samples: evolution.records.len(),
        t_final: evolution.last.t(),
        fits: fits(&evolution.records),
        abort: evolution.abort.clone(),
        monotone: monotone_monitors(&evolution.records, MonotoneTolerance::default()),
        snapshots: snapshot_paths
            .iter()
            .map(|p| {
                p.file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default()
            })
            .collect(),
        wall_clock_seconds: clock.elapsed().as_secs_f64(),
    };
    crate::io::write_summary(&dir.join("summary.json"), &summary)?;
    Ok(RunOutput {
        evolution,
        initial,
        summary,
        series_path,
        snapshot_paths,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub schema: u32,
    pub mode: String,
    pub dt: f64,
    pub stride: usize,
    pub identity: Option<IdentityReport>,
    pub subsolution: Option<SubsolutionReport>,
    pub monotone: MonotoneReport,
    pub pass: bool,
}

impl std::fmt::Display for CheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "check: mode {}, dt {:.4e}, stride {}",
            self.mode, self.dt, self.stride
        )?;
        if let Some(r) = &self.identity {
            write!(f, "{r}")?;
        }
        if let Some(r) = &self.subsolution {
            write!(f, "{r}")?;
        }
        write!(f, "{}", self.monotone)?;
        writeln!(f, "{}", if self.pass { "PASS" } else { "FAIL" })
    }
}

/// Triples `(t* − sΔt, t*, t* + sΔt)` from a fixed-step run, plus the
/// per-step records.
fn triple_run(
    start: &FlowState,
    ctrl: &StepControl,
    dt: f64,
    centre: usize,
    stride: usize,
    opts: &RecordOptions,
) -> Result<(Vec<FlowState>, Vec<DiagnosticsRecord>)> {
    let mean0 = start.g.field().means();
    let mut s = start.clone();
    let mut triple = vec![];
    let mut records = vec![flow_record(&s, &mean0, opts, None)?];
    for k in 1..=centre + stride {
        s = step(&s, ctrl, dt)?;
        s.t = k as f64 * dt;
        records.push(flow_record(&s, &mean0, opts, None)?);
        if k + stride == centre || k == centre || k == centre + stride {
            triple.push(s.clone());
        }
    }
    Ok((triple, records))
}

/// Identity suite, monotone monitors and (one-form and split runs) the `W`
/// subsolution monitor on a short run built from `config`, at step `Δt` and
/// `Δt/2`.
pub fn check(config: &RunConfig) -> Result<CheckReport> {
    let (start, _) = initial_state(config)?;
    let d = &config.diagnostics;
    let stride = d.check_stride;
    let mut ctrl = config.step_control();
    ctrl.dt = None;
    let t_star = d.check_time;
    match start {
        RunState::Gk(_) => {
            let mut short = config.clone();
            short.flow.t_end = t_star;
            short.flow.steps = None;
            short.sampling.sample_every = 1;
            short.sampling.snapshot_times.clear();
            let ev = evolve(&short, start)?;
            if let Some(a) = ev.abort {
                return Err(PcfError::Positivity(crate::error::PositivityError {
                    what: a.message,
                    min_eigenvalue: f64::NAN,
                    floor: 0.0,
                    point: 0,
                    t: Some(a.t),
                }));
            }
            let monotone = monotone_monitors(&ev.records, MonotoneTolerance::default());
            Ok(CheckReport {
                schema: REPORT_SCHEMA,
                mode: config.flow.mode.name().into(),
                dt: ev.records.get(1).map_or(0.0, |r| r.t),
                stride,
                identity: None,
                subsolution: None,
                pass: monotone.pass,
                monotone,
            })
        }
        RunState::Flow(s0) => {
            let dt = match d.check_dt {
                Some(v) => v,
                None => t_star / (t_star / step_size(&s0, &ctrl)?).ceil(),
            };
            let centre = (t_star / dt).round() as usize;
            if ((centre as f64) * dt - t_star).abs() > 1e-9 * t_star {
                return Err(PcfError::Config(vec![format!(
                    "check_time {t_star} is not a multiple of check_dt {dt}"
                )]));
            }
            if centre < stride {
                return Err(PcfError::Config(vec![format!(
                    "check_time {t_star} is shorter than check_stride × check_dt"
                )]));
            }
            let opts = RecordOptions {
                potential: true,
                fk_order: None,
                born_infeld: false,
                w_heat: false,
            };
            let (coarse, records) = triple_run(&s0, &ctrl, dt, centre, stride, &opts)?;
            let (fine, _) = triple_run(&s0, &ctrl, 0.5 * dt, 2 * centre, stride, &opts)?;
            let identity = identity_suite(&coarse, Some(&fine), SuiteTolerance::default())?;
            let subsolution = if config.flow.mode == Mode::PcfMetric {
                None
            } else {
                Some(subsolution_monitor(&coarse, Some(&fine), 1e-2)?)
            };
            let monotone = monotone_monitors(&records, MonotoneTolerance::default());
            let pass = identity.pass && subsolution.as_ref().is_none_or(|r| r.pass) && monotone.pass;
            Ok(CheckReport {
                schema: REPORT_SCHEMA,
                mode: config.flow.mode.name().into(),
                dt,
                stride,
                identity: Some(identity),
                subsolution,
                monotone,
                pass,
            })
        }
    }
}

/// Grid of a config's lattice.
pub fn grid_of(config: &RunConfig) -> Result<Arc<Grid>> {
    Ok(Grid::new(config.lattice.build()?))
}
