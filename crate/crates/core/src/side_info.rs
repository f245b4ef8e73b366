//! Cluster-head side information: the sink acquires a correlated signal at
//! rate `R_d`, which conditions the rate region seen by the sensors.

use serde::{Deserialize, Serialize};

use crate::cost::DistortionCost;
use crate::error::Result;
use crate::rd::{solve_central, RdProblem, RdSolution};
use crate::region::RateRegion;

/// Golden-section tolerance on `R_d`.
pub const SIDE_RATE_TOL: f64 = 1e-4;

/// Cluster-head parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SideInfoConfig {
    /// Energy per unit of side-information rate.
    pub alpha_d: f64,
    /// Harvest bound at the cluster head.
    pub h_max_d: f64,
    /// Correlation of the exchangeable source model.
    pub omega: f64,
}

impl Default for SideInfoConfig {
    fn default() -> Self {
        Self { alpha_d: 1.0, h_max_d: 12.0, omega: 0.5 }
    }
}

/// Joint choice of sensor rates/distortions and side-information rate.
#[derive(Debug, Clone, PartialEq)]
pub struct SideInfoSolution {
    pub solution: RdSolution,
    pub side_rate: f64,
    /// Sensor objective plus the side-rate cost.
    pub objective: f64,
}

/// Inputs of the per-slot problem shared by every candidate `R_d`.
#[derive(Debug, Clone)]
pub struct SideInfoProblem<'a> {
    pub rate_price: &'a [f64],
    pub v: f64,
    pub costs: &'a [DistortionCost],
    pub r_max: f64,
    pub d_min: f64,
    pub d_max: f64,
    pub omega: f64,
    /// Price of side-information rate, `(theta_d - E_d) * alpha_d`.
    pub side_price: f64,
}

impl SideInfoProblem<'_> {
    /// Optimal sensor decision for a fixed side-information rate.
    pub fn solve_at(&self, r_d: f64) -> Result<SideInfoSolution> {
        let region = RateRegion::exchangeable(self.rate_price.len(), self.omega, r_d)?;
        let problem = RdProblem::new(
            &region,
            self.rate_price.to_vec(),
            self.v,
            self.costs.to_vec(),
            self.r_max,
            self.d_min,
            self.d_max,
        )?;
        let solution = solve_central(&problem)?;
        let objective = solution.objective + self.side_price * r_d;
        Ok(SideInfoSolution { solution, side_rate: r_d, objective })
    }
}

/// Outer golden-section search over `R_d` in `[0, R_max]` with an inner
/// central solve. Both endpoints are also evaluated, and `R_d = 0` is kept
/// whenever it is at least as good as the best interior candidate.
pub fn rd_optimize_with_side_info(p: &SideInfoProblem) -> Result<SideInfoSolution> {
    let zero = p.solve_at(0.0)?;
    let top = p.solve_at(p.r_max)?;
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0, p.r_max);
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let mut s1 = p.solve_at(x1)?;
    let mut s2 = p.solve_at(x2)?;
    while b - a > SIDE_RATE_TOL {
        if s1.objective <= s2.objective {
            b = x2;
            x2 = x1;
            s2 = s1;
            x1 = b - inv_phi * (b - a);
            s1 = p.solve_at(x1)?;
        } else {
            a = x1;
            x1 = x2;
            s1 = s2;
            x2 = a + inv_phi * (b - a);
            s2 = p.solve_at(x2)?;
        }
    }
    let mut best = if s1.objective <= s2.objective { s1 } else { s2 };
    if top.objective < best.objective {
        best = top;
    }
    let tie = 1e-12 * zero.objective.abs().max(1.0);
    if zero.objective <= best.objective + tie {
        best = zero;
    }
    Ok(best)
}

/// Sink backlog update `max(U_d - mu_dc, 0) + arrivals`.
pub fn sink_queue_step(u_d: f64, mu_dc: f64, arrivals: f64) -> f64 {
    (u_d - mu_dc).max(0.0) + arrivals
}
