//! Joint exploration of one or two DSF paths: history bookkeeping, step
//! classification, renewal steps and the observables built on them.

mod history;
mod pair;
mod renewal;
mod state;

pub use history::{history_height, update_history, HistoryRegion, UpperBall, GEOM_TOL};
pub use pair::{coupled_field, coupling_trial, independent_pair_renewals, CouplingOutcome, IndependentRenewals, SimultaneousRenewal};
pub use renewal::{
    detect_renewals, extract_observables, run_with_renewals, write_log_ndjson, write_records_csv, Observables, RenewalDetector,
    RenewalRecord, RenewalRun,
};
pub use state::{
    classify_step, default_m_d, event_a, interior_points, joint_step, lands_in_cap, upper_neighbourhood, verify_exploration_invariants,
    ExplorationState, ExploreOptions, InvariantReport, Mode, Movers, StepEvent, StepKind, Violation, DEFAULT_DELTA,
};

#[cfg(test)]
mod tests;
