use std::path::PathBuf;

use chrono::NaiveDate;
use thiserror::Error;

use crate::series::Unit;
use crate::ssm::SsmParams;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("line {line}: cannot parse {field} from {raw:?}")]
    Parse {
        line: u64,
        field: &'static str,
        raw: String,
    },

    #[error("duplicate week {0}")]
    DuplicateWeek(NaiveDate),

    #[error("gap of {days} days between {from} and {to} is not a whole number of weeks")]
    Cadence {
        from: NaiveDate,
        to: NaiveDate,
        days: i64,
    },

    #[error("negative value {value} on {date}")]
    NegativeValue { date: NaiveDate, value: f64 },

    #[error("expected a series in {expected:?}, got {found:?}")]
    UnitMismatch { expected: Unit, found: Unit },

    #[error("value at week {week} must be strictly positive, got {value}")]
    NonPositive { week: usize, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("mode B needs per-week observation SDs but the series has none")]
    MissingObsSd,

    #[error("week {0} is the anchored initial week and has no renewal mean")]
    AnchoredWeek(usize),

    #[error("series too short: {0}")]
    TooShort(String),

    #[error(
        "optimizer stopped after {iterations} iterations with gradient norm {grad_norm:.3e} \
         (best: sigma_w={:.6}, sigma_v={:.6}, psi={:.6})",
        best.sigma_w, best.sigma_v, best.psi
    )]
    NotConverged {
        best: SsmParams,
        best_loglik: f64,
        iterations: usize,
        grad_norm: f64,
    },

    #[error("could not find a finite starting point after {0} attempts")]
    Initialization(usize),
}
