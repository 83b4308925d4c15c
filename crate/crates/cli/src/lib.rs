//! File formats, experiment drivers and the command-line interface around `m2vsl-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod experiments;
pub mod m2ts;
pub mod pgm;
pub mod report;

/// Marks failures that map to the numerical exit status.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NumericalFailure(pub String);

impl std::fmt::Display for NumericalFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericalFailure {}

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

/// 2 when a non-finite value, a degenerate value (such as a zero-norm embedding) or a
/// failed gradient check caused the error, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    let numerical = err.chain().any(|e| {
        e.downcast_ref::<NumericalFailure>().is_some()
            || matches!(
                e.downcast_ref::<m2vsl_core::Error>(),
                Some(m2vsl_core::Error::NonFinite(_) | m2vsl_core::Error::Degenerate(_))
            )
    });
    if numerical {
        EXIT_NUMERICAL
    } else {
        EXIT_VALIDATION
    }
}
