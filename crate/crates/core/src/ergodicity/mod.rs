//! Long-time behaviour: stationary averages, distances between empirical
//! laws, mixing, Foias-Prodi squeezing, Feller coupling and pair recurrence.

mod coupling;
mod distance;
mod mixing;
mod recurrence;
mod squeeze;
mod stationary;

pub use coupling::{coupling_stability, FellerReport, FellerRow};
pub use distance::{
    dual_lipschitz_bootstrap, dual_lipschitz_estimate, observables, DistanceEstimate,
    EmpiricalMeasure, Functional, TestDictionary, OBSERVABLE_COEFFS, OBSERVABLE_LEN,
};
pub use mixing::{mixing_experiment, MixingConfig, MixingReport};
pub use recurrence::{fit_gamma, recurrence_experiment, RecurrenceReport, RecurrenceRow};
pub use squeeze::{foias_prodi_experiment, squeeze_sweep, SqueezeRecord, SqueezeSummary};
pub use stationary::{stationary_report, StationaryReport};
