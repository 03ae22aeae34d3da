//! Non-fatal diagnostics attached to estimates.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    /// Noise floor exceeded the lag-0 variance; signal variance set to 0.
    SignalVarianceClamped,
    /// arccos argument fell outside [−1, 1].
    ArccosClamped,
    /// Procrustes cross-product had (numerically) zero singular values.
    DegenerateProcrustes,
    /// Phases at 0 or π were dropped before clustering.
    RealEigenvaluesDropped,
    /// A phase sits outside every estimated support interval.
    StrayPhases,
    /// A ridge term was added to rescue singular normal equations.
    RidgeBump,
    /// Step halving could not reduce the objective.
    StepRejected,
    /// Iteration cap reached before the tolerance.
    NotConverged,
    /// The trial failed; its numbers are NaN.
    TrialFailed,
}

impl Flag {
    pub fn as_str(self) -> &'static str {
        match self {
            Flag::SignalVarianceClamped => "signal_variance_clamped",
            Flag::ArccosClamped => "arccos_clamped",
            Flag::DegenerateProcrustes => "degenerate_procrustes",
            Flag::RealEigenvaluesDropped => "real_eigenvalues_dropped",
            Flag::StrayPhases => "stray_phases",
            Flag::RidgeBump => "ridge_bump",
            Flag::StepRejected => "step_rejected",
            Flag::NotConverged => "not_converged",
            Flag::TrialFailed => "trial_failed",
        }
    }
}

impl fmt::Display for Flag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Appends `flag` unless already present.
pub(crate) fn raise(flags: &mut Vec<Flag>, flag: Flag) {
    if !flags.contains(&flag) {
        flags.push(flag);
    }
}
