//! Config-driven front end: build tasks, train, verify bounds, probe
//! checkpoints, sweep parameters and render plots.

pub mod config;
pub mod tasks;
pub mod plot;
pub mod run;
pub mod verify;

use config::ConfigError;

/// Process exit code for an error: 2 for config or usage problems, 3 for a
/// run that diverged or failed to converge, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<hacklab_core::Error>() {
            if matches!(e, hacklab_core::Error::Diverged { .. } | hacklab_core::Error::NonConverged { .. }) {
                return 3;
            }
        }
    }
    1
}
