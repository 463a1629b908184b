use std::fmt;

use duskmot::Error;

pub const OK: u8 = 0;
pub const FAILED: u8 = 1;
pub const USAGE: u8 = 2;
pub const IO: u8 = 3;

/// Bad invocation or configuration.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// A check ran and did not pass, or a metric came out undefined.
#[derive(Debug)]
pub struct Failure(pub String);

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Failure {}

pub fn code_for(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Usage>().is_some() {
        return USAGE;
    }
    if err.downcast_ref::<Failure>().is_some() {
        return FAILED;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::Dimension { .. } | Error::Contract(_)) => USAGE,
        Some(Error::NonFinite { .. } | Error::Numerical(_) | Error::Training { .. }) => FAILED,
        Some(Error::Format(_) | Error::Parse { .. } | Error::Io { .. }) => IO,
        None if err.downcast_ref::<std::io::Error>().is_some() => IO,
        None => FAILED,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes() {
        assert_eq!(code_for(&Usage("x".into()).into()), USAGE);
        assert_eq!(code_for(&Failure("x".into()).into()), FAILED);
        assert_eq!(code_for(&Error::Format("x".into()).into()), IO);
        assert_eq!(code_for(&Error::Contract("x".into()).into()), USAGE);
        assert_eq!(code_for(&Error::Numerical("x".into()).into()), FAILED);
        let io = std::io::Error::new(std::io::ErrorKind::NotFound, "gone");
        assert_eq!(code_for(&io.into()), IO);
    }
}
