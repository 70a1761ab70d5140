use std::fmt;
use std::process::ExitCode;

/// An error together with the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

pub const EXIT_OUTPUT: u8 = 1;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

impl Failure {
    pub fn input(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: EXIT_INPUT,
            error: error.into(),
        }
    }

    pub fn output(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: EXIT_OUTPUT,
            error: error.into(),
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code)
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

/// Numerical breakdowns exit with 3, everything else the user can fix with 2.
fn code_of(e: &airls::Error) -> u8 {
    use airls::Error::*;
    match e {
        NonFinite(_) | Numerical { .. } | ProposalTooWide => EXIT_NUMERICAL,
        Resampling { source, .. } => code_of(source),
        _ => EXIT_INPUT,
    }
}

impl From<airls::Error> for Failure {
    fn from(e: airls::Error) -> Self {
        Self {
            code: code_of(&e),
            error: e.into(),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, Failure>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes() {
        let cfg = airls::Error::InvalidConfig("alpha must be > 0".into());
        assert_eq!(Failure::from(cfg).code, EXIT_INPUT);
        assert_eq!(
            Failure::from(airls::Error::ProposalTooWide).code,
            EXIT_NUMERICAL
        );
        let nested = airls::Error::Resampling {
            index: 3,
            source: Box::new(airls::Error::NonFinite("x".into())),
        };
        assert_eq!(Failure::from(nested).code, EXIT_NUMERICAL);
        assert_eq!(
            Failure::from(airls::Error::Parse("bad".into())).code,
            EXIT_INPUT
        );
    }
}
