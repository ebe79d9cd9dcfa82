//! Plumbing behind the `otflow` binary: config files, run pipelines, and
//! manifests. Kept as a library so the integration tests can drive each
//! stage directly.

pub mod config;
pub mod manifest;
pub mod pipelines;

/// Exit code for an [`otflow::Error`] escaping a pipeline: bad parameters
/// and malformed files are config errors, violated run invariants get their
/// own code, everything else is a solver failure.
pub fn exit_code(e: &otflow::Error) -> i32 {
    use otflow::Error;
    match e {
        Error::InvalidParameter(_) | Error::Parse { .. } => 2,
        Error::InvariantViolated { .. } => 1,
        _ => 3,
    }
}
