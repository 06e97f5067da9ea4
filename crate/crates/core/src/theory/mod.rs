//! Executable checks of the distance-amplification and equivalence results.

mod equivalence;
mod separation;
#[cfg(test)]
mod tests;

pub use equivalence::{
    lemma1_coefficient, theorem2_equivalence_check, theorem2_residual, theorem2_trials, Theorem2Params, Theorem2Report, CONTROL_FLOOR,
    THEOREM2_TOLERANCE,
};
pub use separation::{
    csbm_expected_distance, theorem1_construct_witness, theorem1_max_ratio, theorem1_verify, DistanceEstimates,
    DistanceReport, MaxRatio, Theorem1Witness, RATIO_TOLERANCE,
};
