use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RapidError {
    #[error("state left the physical set: minimum eigenvalue {min_eig:.3e}")]
    NonPhysicalState { min_eig: f64 },
    #[error("outcome {outcome} has zero probability under the hypothesis")]
    DegenerateLikelihood { outcome: i8 },
    #[error("information matrix is singular (condition number {cond:.3e})")]
    SingularInformation { cond: f64 },
    #[error("budget infeasible: {n_steps} steps of at least {t_min} us exceed total time {t_tot} us")]
    InfeasibleBudget { n_steps: usize, t_min: f64, t_tot: f64 },
    #[error("training diverged: {what} = {value:.3e}")]
    DivergenceDetected { what: String, value: f64 },
    #[error("target not bracketed: P_D {p_lo:.3} at low edge, {p_hi:.3} at high edge")]
    TargetUnreachable { p_lo: f64, p_hi: f64 },
    #[error("covariance rank {rank} below number of sources {sources}")]
    RankDeficient { rank: usize, sources: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for RapidError {
    fn from(e: std::io::Error) -> Self {
        RapidError::Io(e.to_string())
    }
}

impl From<csv::Error> for RapidError {
    fn from(e: csv::Error) -> Self {
        RapidError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, RapidError>;
