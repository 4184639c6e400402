use std::fmt;

/// Loss of positive definiteness (or of invertibility) of a metric field.
#[derive(Debug, Clone, PartialEq)]
pub struct PositivityError {
    /// Which object failed, e.g. `"g"`, `"g+ block"`.
    pub what: String,
    pub min_eigenvalue: f64,
    pub floor: f64,
    /// Flat grid index of the worst point.
    pub point: usize,
    /// Flow time at which the failure was detected, if any.
    pub t: Option<f64>,
}

impl fmt::Display for PositivityError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} lost positivity: min eigenvalue {:.6e} <= floor {:.3e} at grid point {}",
            self.what, self.min_eigenvalue, self.floor, self.point
        )?;
        if let Some(t) = self.t {
            write!(f, " (t = {t:.6})")?;
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PcfError {
    #[error("invalid lattice: {0}")]
    Lattice(String),
    #[error("complex axis {axis} out of range for complex dimension {n}")]
    AxisOutOfRange { axis: usize, n: usize },
    #[error("{0}")]
    Positivity(PositivityError),
    #[error("componentwise means differ by {0:.3e}; not of the form dbar(a) + d(conj a)")]
    MeanMismatch(f64),
    #[error("difference is not pluriclosed: reconstruction residual {0:.3e}")]
    NotPluriclosed(f64),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("{}", .0.join("\n"))]
    Config(Vec<String>),
    #[error("snapshot: {0}")]
    Snapshot(String),
    #[error("time steps differ: {0}")]
    DtMismatch(String),
    #[error("missing snapshots: {0}")]
    MissingSnapshots(String),
    #[error("wrong flow mode: {0}")]
    WrongMode(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<PositivityError> for PcfError {
    fn from(e: PositivityError) -> Self {
        PcfError::Positivity(e)
    }
}

pub type Result<T> = std::result::Result<T, PcfError>;
