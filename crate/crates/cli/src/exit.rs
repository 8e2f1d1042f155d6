use std::fmt;
use std::path::Path;

/// Process exit codes. Usage errors (unknown flags, bad values) come from
/// the argument parser and use 2.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exit {
    Usage = 2,
    MissingInput = 3,
    BadFormat = 4,
    InvalidArgument = 5,
    Numerical = 6,
    Output = 7,
}

pub const EXIT_CODES_HELP: &str = "\
Exit codes:
  0  all artifacts written and validated
  2  usage error (unknown flag, malformed value)
  3  input file missing or unreadable
  4  input file malformed
  5  invalid argument combination
  6  numerical failure
  7  output could not be written or failed validation";

#[derive(Debug)]
pub struct Failure {
    pub code: Exit,
    pub error: anyhow::Error,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

pub type CliResult<T> = std::result::Result<T, Failure>;

pub fn fail<T>(code: Exit, msg: impl fmt::Display) -> CliResult<T> {
    Err(Failure { code, error: anyhow::anyhow!("{msg}") })
}

/// Library errors raised while computing results.
pub fn lib_err(e: modpose::Error) -> Failure {
    use modpose::Error as E;
    let code = match &e {
        E::NonFinite(_) | E::DegenerateHead(_) => Exit::Numerical,
        E::Format(_) => Exit::BadFormat,
        E::Io(_) => Exit::Output,
        _ => Exit::InvalidArgument,
    };
    Failure { code, error: e.into() }
}

/// Library errors raised while parsing `path`.
pub fn input_err(path: &Path, e: modpose::Error) -> Failure {
    Failure { code: Exit::BadFormat, error: anyhow::Error::from(e).context(format!("reading {}", path.display())) }
}

pub trait Context<T> {
    fn code(self, code: Exit, what: impl fmt::Display) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> Context<T> for std::result::Result<T, E> {
    fn code(self, code: Exit, what: impl fmt::Display) -> CliResult<T> {
        self.map_err(|e| Failure { code, error: e.into().context(what.to_string()) })
    }
}
