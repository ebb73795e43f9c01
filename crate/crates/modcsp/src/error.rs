use thiserror::Error;

/// Errors raised by library operations.
///
/// Budget exhaustion in searches is *not* an error: it is reported through the
/// status fields of the search results. Errors are reserved for malformed
/// input, violated preconditions and configured guards.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("relation `{relation}`, tuple {index}: {message}")]
    BadTuple { relation: String, index: usize, message: String },

    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },

    #[error("duplicate {kind} `{name}`")]
    Duplicate { kind: &'static str, name: String },

    #[error("structures are not similar: {0}")]
    Dissimilar(String),

    #[error("{0} is not a prime")]
    NotPrime(u64),

    #[error("guard exceeded: {what} ({actual} > {limit})")]
    Guard { what: String, actual: u128, limit: u128 },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("arity mismatch: {0}")]
    Arity(String),

    #[error("json: {0}")]
    Json(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e.to_string())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}

pub(crate) fn guard(what: impl Into<String>, actual: u128, limit: u128) -> Result<()> {
    if actual > limit {
        Err(Error::Guard { what: what.into(), actual, limit })
    } else {
        Ok(())
    }
}

/// Trial-division primality test; moduli in this crate are tiny.
pub fn is_prime(p: u64) -> bool {
    if p < 2 {
        return false;
    }
    let mut d = 2u64;
    while d * d <= p {
        if p.is_multiple_of(d) {
            return false;
        }
        d += 1;
    }
    true
}

pub(crate) fn check_prime(p: u64) -> Result<()> {
    if is_prime(p) {
        Ok(())
    } else {
        Err(Error::NotPrime(p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_primes() {
        let primes: Vec<u64> = (0..30).filter(|&n| is_prime(n)).collect();
        assert_eq!(primes, vec![2, 3, 5, 7, 11, 13, 17, 19, 23, 29]);
        assert!(check_prime(4).is_err());
    }
}
