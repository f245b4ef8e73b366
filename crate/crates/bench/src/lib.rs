//! Shared fixtures for the solver benchmarks.

use ehdsc_core::region::{exchangeable_correlation, full_set_rate, RateRegion};
use ehdsc_core::rd::RdProblem;
use ehdsc_core::DistortionCost;

/// Three correlated sources with the default distortion box.
pub fn region(omega: f64) -> (RateRegion, f64) {
    let o = exchangeable_correlation(3, omega);
    (RateRegion::new(&o).unwrap(), full_set_rate(&o, 1e-3).unwrap())
}

pub fn rd_problem(region: &RateRegion, r_max: f64, prices: [f64; 3], v: f64) -> RdProblem<'_> {
    RdProblem::new(region, prices.to_vec(), v, vec![DistortionCost::Linear; 3], r_max, 1e-3, 1.0).unwrap()
}
