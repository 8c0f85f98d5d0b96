//! One error type for the whole crate, carved into the classes the CLI
//! reports as distinct exit codes. Library call sites attach context via the
//! variant message; the binary maps variants to codes in one place.

/// Crate-wide error. Variants group by *failure class*, not by module, so the
/// process exit code (see [`CoreError::exit_code`]) stays meaningful when an
/// error crosses module boundaries.
#[derive(Debug, thiserror::Error)]
pub enum CoreError {
    /// Input file or directory absent/unreadable.
    #[error("missing input: {0}")]
    Missing(String),

    /// I/O failure while reading or writing artifacts.
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    /// Structurally malformed input: CSV rows that do not parse, bad JSON,
    /// unknown config keys, template placeholders that match nothing.
    #[error("schema: {0}")]
    Schema(String),

    /// Input parsed but the values are inadmissible (non-positive price,
    /// weights off the simplex, fit range before warmup, ...).
    #[error("validation: {0}")]
    Validation(String),

    /// A computation's mathematical precondition failed (m_ave = 0 in a
    /// ratio score, all-cash portfolio fed to ENB, non-finite gradient).
    #[error("domain: {0}")]
    Domain(String),

    /// Training aborted; a checkpoint of the last good state was written
    /// when one was available.
    #[error("training aborted: {0}")]
    Training(String),

    /// Fetch attempted with no network and no cache entry.
    #[error("offline and not cached: {0}")]
    Offline(String),

    /// Remote endpoint reachable but unhappy.
    #[error("transport: {0}")]
    Transport(String),
}

impl CoreError {
    /// Process exit code for this failure class. Documented in the CLI help;
    /// scripts are expected to branch on these.
    ///
    /// 2 missing input · 3 schema mismatch · 4 domain/data validation ·
    /// 5 training abort · 6 network failure · 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CoreError::Missing(_) => 2,
            CoreError::Schema(_) => 3,
            CoreError::Validation(_) | CoreError::Domain(_) => 4,
            CoreError::Training(_) => 5,
            CoreError::Offline(_) | CoreError::Transport(_) => 6,
            CoreError::Io(_) => 1,
        }
    }
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

/// Shorthand for the pervasive "format + wrap" pattern at validation sites.
macro_rules! bail {
    ($variant:ident, $($arg:tt)*) => {
        return Err($crate::error::CoreError::$variant(format!($($arg)*)))
    };
}
pub(crate) use bail;
