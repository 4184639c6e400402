//! On-disk formats: `series.csv`, `PCF1` binary snapshots with a text
//! sidecar, and `summary.json`. Every file is written to a temporary file in
//! the target directory and renamed into place.

use crate::diagnostics::DiagnosticsRecord;
use crate::error::{PcfError, Result};
use crate::field::Field;
use crate::flow::{Background, FlowState, Formulation};
use crate::gk::{GkBackground, GkState};
use crate::lattice::ComplexLattice;
use crate::linalg::Mat;
use crate::spectral::Grid;
use num_complex::Complex64 as C64;
use serde::Serialize;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"PCF1";
pub const SNAPSHOT_VERSION: u32 = 1;

/// Write `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| PcfError::Io(e.error))?;
    Ok(())
}

/// Header row and one row per record, numbers with 17 significant digits.
pub fn series_csv(records: &[DiagnosticsRecord]) -> String {
    let mut s = String::new();
    let Some(first) = records.first() else {
        return s;
    };
    let names: Vec<String> = first.columns().into_iter().map(|(n, _)| n).collect();
    s.push_str(&names.join(","));
    s.push('\n');
    for r in records {
        let row: Vec<String> = r.columns().into_iter().map(|(_, v)| format!("{v:.16e}")).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn write_series(path: &Path, records: &[DiagnosticsRecord]) -> Result<()> {
    write_atomic(path, series_csv(records).as_bytes())
}

/// What a snapshot holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapshotKind {
    Flow(Formulation),
    Gk,
}

impl SnapshotKind {
    fn code(self) -> u8 {
        match self {
            SnapshotKind::Flow(f) => f.code(),
            SnapshotKind::Gk => 3,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            3 => Some(SnapshotKind::Gk),
            _ => Formulation::from_code(c).map(SnapshotKind::Flow),
        }
    }

    /// Names of the stored fields, in file order.
    pub fn field_names(self) -> &'static [&'static str] {
        match self {
            SnapshotKind::Flow(Formulation::Metric) => &["g"],
            SnapshotKind::Flow(Formulation::Oneform) => &["alpha", "g"],
            SnapshotKind::Flow(Formulation::Split) => &["beta", "f", "g"],
            SnapshotKind::Gk => &["u"],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SnapshotKind::Flow(f) => f.name(),
            SnapshotKind::Gk => "gk",
        }
    }
}

/// A state as stored on disk: lattice, time, kind, constant background
/// matrices (`ĝ, h` or `g₀₊, g₀₋, h₊, h₋`) and the fields.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub lattice: ComplexLattice,
    pub t: f64,
    pub kind: SnapshotKind,
    /// `+` dimension for GK snapshots, 0 otherwise.
    pub plus_dim: usize,
    pub normalized: bool,
    pub background: Vec<Mat>,
    pub fields: Vec<Field>,
}

impl Snapshot {
    pub fn of_flow(s: &FlowState) -> Self {
        let mut fields = vec![];
        match s.formulation {
            Formulation::Metric => {}
            Formulation::Oneform => fields.push(s.alpha.clone().expect("oneform state")),
            Formulation::Split => {
                fields.push(s.beta.clone().expect("split state"));
                fields.push(s.f.clone().expect("split state"));
            }
        }
        fields.push(s.g.field().clone());
        Self {
            lattice: s.grid().lattice().clone(),
            t: s.t,
            kind: SnapshotKind::Flow(s.formulation),
            plus_dim: 0,
            normalized: s.normalized,
            background: vec![s.background.ghat.clone(), s.background.h.clone()],
            fields,
        }
    }

    pub fn of_gk(s: &GkState) -> Self {
        let b = &s.background;
        Self {
            lattice: s.grid().lattice().clone(),
            t: s.t,
            kind: SnapshotKind::Gk,
            plus_dim: s.k,
            normalized: false,
            background: vec![
                b.g0_plus.clone(),
                b.g0_minus.clone(),
                b.h_plus.clone(),
                b.h_minus.clone(),
            ],
            fields: vec![s.u.clone()],
        }
    }

    pub fn to_flow_state(&self, grid: &Arc<Grid>) -> Result<FlowState> {
        let SnapshotKind::Flow(form) = self.kind else {
            return Err(PcfError::WrongMode("snapshot holds a gk state".into()));
        };
        let bg = Background {
            ghat: self.background[0].clone(),
            h: self.background[1].clone(),
        };
        let f = self.fields_on(grid)?;
        let mut s = match form {
            Formulation::Metric => FlowState::metric(f[0].clone(), bg, self.normalized)?,
            Formulation::Oneform => FlowState::oneform(f[0].clone(), bg)?,
            Formulation::Split => FlowState::split(f[0].clone(), f[1].clone(), bg)?,
        };
        s.t = self.t;
        Ok(s)
    }

    pub fn to_gk_state(&self, grid: &Arc<Grid>) -> Result<GkState> {
        if self.kind != SnapshotKind::Gk {
            return Err(PcfError::WrongMode(format!(
                "snapshot holds a {} state",
                self.kind.name()
            )));
        }
        let b = &self.background;
        let bg = GkBackground {
            g0_plus: b[0].clone(),
            g0_minus: b[1].clone(),
            h_plus: b[2].clone(),
            h_minus: b[3].clone(),
        };
        let mut s = GkState::new(self.fields_on(grid)?.remove(0), self.plus_dim, bg)?;
        s.t = self.t;
        Ok(s)
    }

    fn fields_on(&self, grid: &Arc<Grid>) -> Result<Vec<Field>> {
        if grid.lattice() != &self.lattice {
            return Err(PcfError::Snapshot(
                "snapshot lattice differs from the run lattice".into(),
            ));
        }
        self.fields
            .iter()
            .map(|f| Field::from_comps(grid, f.shape().to_vec(), f.sig(), f.comps().to_vec()))
            .collect()
    }

    /// Binary encoding.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(SNAPSHOT_MAGIC);
        b.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
        let lat = &self.lattice;
        b.extend_from_slice(&(lat.n() as u32).to_le_bytes());
        for &s in lat.sizes() {
            b.extend_from_slice(&(s as u32).to_le_bytes());
        }
        for &p in lat.periods() {
            b.extend_from_slice(&p.to_le_bytes());
        }
        b.extend_from_slice(&self.t.to_le_bytes());
        b.push(self.kind.code());
        b.push(self.normalized as u8);
        b.extend_from_slice(&(self.plus_dim as u32).to_le_bytes());
        b.extend_from_slice(&(self.background.len() as u32).to_le_bytes());
        for m in &self.background {
            b.extend_from_slice(&(m.order() as u32).to_le_bytes());
            put_values(&mut b, &m.to_rows());
        }
        b.extend_from_slice(&(self.fields.len() as u32).to_le_bytes());
        for f in &self.fields {
            b.extend_from_slice(&(f.shape().len() as u32).to_le_bytes());
            for &d in f.shape() {
                b.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for c in f.comps() {
                put_values(&mut b, c);
            }
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != SNAPSHOT_MAGIC {
            return Err(PcfError::Snapshot("bad magic, not a PCF1 snapshot".into()));
        }
        let version = r.u32()?;
        if version != SNAPSHOT_VERSION {
            return Err(PcfError::Snapshot(format!(
                "format version {version}, this build reads version {SNAPSHOT_VERSION}"
            )));
        }
        let n = r.u32()? as usize;
        if n == 0 || n > crate::lattice::MAX_COMPLEX_DIM {
            return Err(PcfError::Snapshot(format!("complex dimension {n} out of range")));
        }
        let sizes = (0..2 * n)
            .map(|_| r.u32().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let periods = (0..2 * n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let lattice = ComplexLattice::new(n, sizes, periods).map_err(|e| PcfError::Snapshot(e.to_string()))?;
        let t = r.f64()?;
        let code = r.take(1)?[0];
        let kind =
            SnapshotKind::from_code(code).ok_or_else(|| PcfError::Snapshot(format!("unknown state kind {code}")))?;
        let normalized = r.take(1)?[0] != 0;
        let plus_dim = r.u32()? as usize;
        let nbg = r.u32()? as usize;
        let mut background = Vec::with_capacity(nbg.min(8));
        for _ in 0..nbg {
            let m = r.u32()? as usize;
            if m > 2 * crate::tensor::MAXN {
                return Err(PcfError::Snapshot(format!("background order {m} out of range")));
            }
            background.push(Mat::from_rows(m, &r.values(m * m)?));
        }
        let expected_bg = if kind == SnapshotKind::Gk { 4 } else { 2 };
        if nbg != expected_bg {
            return Err(PcfError::Snapshot(format!(
                "expected {expected_bg} background matrices, found {nbg}"
            )));
        }
        let nf = r.u32()? as usize;
        if nf != kind.field_names().len() {
            return Err(PcfError::Snapshot(format!(
                "a {} snapshot has {} fields, found {nf}",
                kind.name(),
                kind.field_names().len()
            )));
        }
        let grid = Grid::new(lattice.clone());
        let mut fields = Vec::with_capacity(nf);
        for name in kind.field_names() {
            let rank = r.u32()? as usize;
            if rank > 3 {
                return Err(PcfError::Snapshot(format!("field {name} has rank {rank}")));
            }
            let shape = (0..rank)
                .map(|_| r.u32().map(|v| v as usize))
                .collect::<Result<Vec<_>>>()?;
            if shape.iter().any(|&d| d > 2 * crate::tensor::MAXN) {
                return Err(PcfError::Snapshot(format!("field {name} has shape {shape:?}")));
            }
            let nc: usize = shape.iter().product();
            let comps = (0..nc).map(|_| r.values(grid.len())).collect::<Result<Vec<_>>>()?;
            let sig = match rank {
                0 => "",
                1 => "i",
                _ => "ij̄",
            };
            fields.push(Field::from_comps(&grid, shape, sig, comps)?);
        }
        if r.pos != bytes.len() {
            return Err(PcfError::Snapshot(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            lattice,
            t,
            kind,
            plus_dim,
            normalized,
            background,
            fields,
        })
    }

    /// Text sidecar listing the fields and their shapes.
    pub fn header(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "format PCF1 version {SNAPSHOT_VERSION}");
        let _ = writeln!(s, "kind {}", self.kind.name());
        let _ = writeln!(s, "t {:?}", self.t);
        let _ = writeln!(s, "n {}", self.lattice.n());
        let _ = writeln!(s, "sizes {:?}", self.lattice.sizes());
        let _ = writeln!(s, "periods {:?}", self.lattice.periods());
        if self.kind == SnapshotKind::Gk {
            let _ = writeln!(s, "plus_dim {}", self.plus_dim);
        }
        for (name, f) in self.kind.field_names().iter().zip(&self.fields) {
            let _ = writeln!(s, "field {name} shape {:?}", f.shape());
        }
        s
    }

    /// One line per grid point: index, coordinates, then real and imaginary
    /// parts of every component.
    pub fn to_csv(&self) -> String {
        let grid = Grid::new(self.lattice.clone());
        let coords = grid.lattice().coordinates();
        let mut s = String::from("index");
        for a in 0..coords.len() {
            let _ = write!(s, ",x{a}");
        }
        for (name, f) in self.kind.field_names().iter().zip(&self.fields) {
            for c in 0..f.ncomp() {
                let _ = write!(s, ",{name}{c}_re,{name}{c}_im");
            }
        }
        s.push('\n');
        for p in 0..grid.len() {
            let _ = write!(s, "{p}");
            for c in &coords {
                let _ = write!(s, ",{:.16e}", c[p]);
            }
            for f in &self.fields {
                for c in f.comps() {
                    let _ = write!(s, ",{:.16e},{:.16e}", c[p].re, c[p].im);
                }
            }
            s.push('\n');
        }
        s
    }
}

fn put_values(b: &mut Vec<u8>, v: &[C64]) {
    for z in v {
        b.extend_from_slice(&z.re.to_le_bytes());
        b.extend_from_slice(&z.im.to_le_bytes());
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, k: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < k {
            return Err(PcfError::Snapshot(format!(
                "truncated: needed {k} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + k];
        self.pos += k;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn values(&mut self, k: usize) -> Result<Vec<C64>> {
        let raw = self.take(
            k.checked_mul(16)
                .ok_or_else(|| PcfError::Snapshot("size overflow".into()))?,
        )?;
        Ok(raw
            .chunks_exact(16)
            .map(|c| {
                C64::new(
                    f64::from_le_bytes(c[..8].try_into().expect("8 bytes")),
                    f64::from_le_bytes(c[8..].try_into().expect("8 bytes")),
                )
            })
            .collect())
    }
}

/// Sidecar path: `<snapshot>.hdr`.
pub fn header_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".hdr");
    PathBuf::from(s)
}

pub fn write_snapshot(path: &Path, snap: &Snapshot) -> Result<()> {
    write_atomic(path, &snap.to_bytes())?;
    write_atomic(&header_path(path), snap.header().as_bytes())
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot> {
    Snapshot::from_bytes(&std::fs::read(path)?)
}

/// Least-squares line through `(t, log y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub t_from: f64,
    pub t_to: f64,
    pub points: usize,
}

/// Fit over the samples with `t` in `[t_from, t_to]` and `y > 0`; `None`
/// with fewer than two such samples or no spread in `t`.
pub fn log_fit(samples: &[(f64, f64)], t_from: f64, t_to: f64) -> Option<LogFit> {
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .filter(|(t, y)| *t >= t_from && *t <= t_to && *y > 0.0 && y.is_finite())
        .map(|&(t, y)| (t, y.ln()))
        .collect();
    let k = pts.len();
    if k < 2 {
        return None;
    }
    let kf = k as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / kf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / kf;
    let stt: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sty: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if stt <= 0.0 {
        return None;
    }
    let slope = sty / stt;
    let r_squared = if syy > 0.0 { sty * sty / (stt * syy) } else { 1.0 };
    Some(LogFit {
        slope,
        intercept: my - slope * mt,
        r_squared,
        t_from: pts[0].0,
        t_to: pts[k - 1].0,
        points: k,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AbortInfo {
    pub t: f64,
    pub step: usize,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub schema: u32,
    pub mode: String,
    pub steps: usize,
    pub samples: usize,
    pub t_final: f64,
    /// Fits of the log of `<column>` over the final half of the run.
    pub fits: Vec<(String, Option<LogFit>)>,
    pub abort: Option<AbortInfo>,
    pub monotone: crate::diagnostics::MonotoneReport,
    pub snapshots: Vec<String>,
    pub wall_clock_seconds: f64,
}

pub fn write_summary(path: &Path, s: &Summary) -> Result<()> {
    let text = serde_json::to_string_pretty(s).map_err(|e| PcfError::Snapshot(e.to_string()))?;
    write_atomic(path, text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::Stats;
    use crate::flow::{flat_state, random_pluriclosed_perturbation};
    use std::f64::consts::PI;

    fn grid() -> Arc<Grid> {
        Grid::new(ComplexLattice::uniform(2, 8, PI).unwrap())
    }

    fn record(t: f64) -> DiagnosticsRecord {
        let s = Stats {
            sup: t,
            inf: -t,
            mean: 0.1,
        };
        DiagnosticsRecord {
            t,
            torsion_sq: s,
            dalpha_sq: None,
            trace_h: s,
            logdet_ratio: s,
            fk: None,
            pluriclosed_residual: 0.0,
            mean_drift: 0.0,
            detw_error: Some(1e-16),
            w_heat_pos: None,
            min_eig_g: 1.0,
            gk: None,
        }
    }

    #[test]
    fn three_samples_make_four_lines() {
        let csv = series_csv(&[record(0.0), record(0.5), record(1.0)]);
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("t,torsion_sq_sup,"));
        let last = csv.lines().nth(2).unwrap();
        assert!(last.starts_with("5.0000000000000000e-1,"), "{last}");
        assert_eq!(series_csv(&[]), "");
    }

    #[test]
    fn snapshot_round_trip_is_bit_exact() {
        let g = grid();
        let bg = Background::identity(2);
        let a = random_pluriclosed_perturbation(&g, &bg, 4, 0.1, 2.0).unwrap();
        let mut s = FlowState::oneform(a.alpha, bg).unwrap();
        s.t = 0.125;
        let snap = Snapshot::of_flow(&s);
        let back = Snapshot::from_bytes(&snap.to_bytes()).unwrap();
        assert_eq!(back.to_bytes(), snap.to_bytes());
        let r = back.to_flow_state(&g).unwrap();
        assert_eq!(r.t, 0.125);
        assert_eq!(r.alpha.unwrap().comps(), s.alpha.as_ref().unwrap().comps());
        assert_eq!(r.g.field().comps(), s.g.field().comps());
    }

    #[test]
    fn flat_snapshot_bytes_are_reproducible_and_files_atomic() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.pcf");
        let s = flat_state(&grid(), Background::identity(2), Formulation::Split).unwrap();
        write_snapshot(&p, &Snapshot::of_flow(&s)).unwrap();
        let first = std::fs::read(&p).unwrap();
        write_snapshot(&p, &Snapshot::of_flow(&s)).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), first);
        let hdr = std::fs::read_to_string(header_path(&p)).unwrap();
        assert!(hdr.contains("field beta shape [2]") && hdr.contains("field f shape []"));
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 2);
        let snap = read_snapshot(&p).unwrap();
        assert_eq!(snap.kind, SnapshotKind::Flow(Formulation::Split));
        assert_eq!(snap.to_csv().lines().count(), 1 + 8usize.pow(4));
    }

    #[test]
    fn version_and_truncation_errors() {
        let s = flat_state(&grid(), Background::identity(2), Formulation::Metric).unwrap();
        let bytes = Snapshot::of_flow(&s).to_bytes();
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(Snapshot::from_bytes(&v2), Err(PcfError::Snapshot(m)) if m.contains("version 2")));
        let cut = &bytes[..bytes.len() - 5];
        assert!(matches!(Snapshot::from_bytes(cut), Err(PcfError::Snapshot(m)) if m.contains("truncated")));
        assert!(matches!(Snapshot::from_bytes(b"PCF0"), Err(PcfError::Snapshot(m)) if m.contains("magic")));
    }

    #[test]
    fn gk_snapshot_round_trip() {
        let g = Grid::new(ComplexLattice::uniform(2, 8, PI).unwrap());
        let bg = GkBackground::identity(1, 1);
        let (u, _, _) = crate::gk::random_gk_potential(&g, 1, &bg, 2, 0.1, 2.0).unwrap();
        let s = GkState::new(u, 1, bg).unwrap();
        let back = Snapshot::from_bytes(&Snapshot::of_gk(&s).to_bytes()).unwrap();
        let r = back.to_gk_state(&g).unwrap();
        assert_eq!(r.u.comps(), s.u.comps());
        assert!(back.to_flow_state(&g).is_err());
    }

    #[test]
    fn log_fit_recovers_exponential() {
        let pts: Vec<(f64, f64)> = (0..20)
            .map(|i| (i as f64 * 0.5, 3.0 * (-1.5 * i as f64 * 0.5).exp()))
            .collect();
        let f = log_fit(&pts, 2.0, 10.0).unwrap();
        assert!((f.slope + 1.5).abs() < 1e-12);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        assert_eq!(f.t_from, 2.0);
        assert!(log_fit(&pts[..1], 0.0, 1.0).is_none());
    }
}
