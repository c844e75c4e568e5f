//! Estimators and checks for the limit behaviour of `Z_n`.
//!
//! Probabilities that the exact engine can reach are estimated by
//! conditional Monte Carlo: exact quenched values averaged over sampled
//! environments. Pathwise functionals use simulated paths.

pub mod decay;
pub mod dist;
pub mod fit;
pub mod gof;
pub mod moments;
pub mod phi;
pub mod renewal;

pub use decay::{
    ceil_log_levels, conditional_replicates, conditional_table, decay_rate, decay_rates, extinction_decay,
    lower_deviation, supermultiplicativity_check, DecaySeries, DecayTable, EventMethod, LowerDeviation, Replicates,
    SuperRow,
};
pub use dist::{
    clt_test, edgeworth_exact_oracle, edgeworth_medians, edgeworth_test, estimate_shift, survivor_sample, CltRow,
    EdgeworthReport, EdgeworthRow, ShiftEstimate, SurvivorSample,
};
pub use fit::{
    decay_points, fit_decay, fit_decay_shared, grid_distance, ks_report, ks_statistic, DecayFit, DecayPoint, KsReport,
    KsTarget, Z99,
};
pub use gof::{chi_square, ChiSquare};
pub use moments::{
    harmonic_from_law, harmonic_mellin, harmonic_moment, log_moment_on_extinction_step, HarmonicMethod, HarmonicReport,
    LogMomentReport,
};
pub use phi::{phi_convergence, phi_hat, PhiReport, PhiRow, PhiSeries};
pub use renewal::{renewal_count, traversal_horizon, RenewalReport, RenewalRow};
