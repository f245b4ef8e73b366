//! Experiment configuration and its resolution into model objects.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bound::BinValue;
use crate::cost::DistortionCost;
use crate::error::{Error, Result};
use crate::model::{log, GlobalParams, Link, NetworkGraph, Vertex};
use crate::policy::{Controller, RdSolver, SideInfoMode};
use crate::rd::DistributedOptions;
use crate::region::{exchangeable_correlation, full_set_rate};

/// Operating mode of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// The sink is the final destination.
    #[default]
    Plain,
    /// The sink is a cluster head that acquires side information.
    SideInfo,
    /// Cluster-head topology with the side-information rate held at zero.
    SideInfoBaseline,
}

impl Mode {
    pub fn has_collector(self) -> bool {
        self != Mode::Plain
    }
}

/// Per-slot rate-distortion solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    #[default]
    Central,
    Distributed,
}

/// Everything that determines a run. Unset optional bounds are derived:
/// `r_max` from the full-set region bound at `d_min`, `p_max = alpha r_max`,
/// and `mu_max = log(1 + p_max s_max)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub num_sensors: usize,
    /// One-based labels of measuring sensors.
    pub measuring: Vec<usize>,
    /// Links written as `from->to` with labels `1`, `2`, ..., `d`, `c`. The
    /// `d->c` link is added automatically in the side-information modes.
    pub links: Vec<String>,
    pub mode: Mode,
    pub omega: f64,
    pub v: f64,
    pub slots: u64,
    pub seed: u64,
    pub replicas: usize,
    /// Fraction of slots excluded from time averages.
    pub burn_in: f64,
    pub alpha: f64,
    pub h_max: f64,
    pub d_min: f64,
    pub d_max: f64,
    pub b: f64,
    pub r_max: Option<f64>,
    pub p_max: Option<f64>,
    pub mu_max: Option<f64>,
    /// Mean of the exponential channel power gains.
    pub gain_scale: f64,
    /// Gains are clipped at this value.
    pub s_max: f64,
    pub alpha_d: f64,
    pub h_max_d: f64,
    pub rd_solver: SolverKind,
    pub distributed_iters: usize,
    pub strict: bool,
    /// Initial battery as a fraction of `theta`.
    pub initial_battery: f64,
    pub lower_bound: bool,
    pub lb_bins: usize,
    pub lb_iters: usize,
    pub lb_bin_value: BinValue,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            num_sensors: 5,
            measuring: vec![1, 2, 3],
            links: ["1->4", "2->4", "2->5", "3->5", "4->d", "5->d"].map(String::from).to_vec(),
            mode: Mode::Plain,
            omega: 0.5,
            v: 1000.0,
            slots: 20_000,
            seed: 1,
            replicas: 1,
            burn_in: 0.1,
            alpha: 1.0,
            h_max: 3.0,
            d_min: 1e-3,
            d_max: 1.0,
            b: 1.0,
            r_max: None,
            p_max: None,
            mu_max: None,
            gain_scale: 1.0,
            s_max: 10.0,
            alpha_d: 1.0,
            h_max_d: 12.0,
            rd_solver: SolverKind::Central,
            distributed_iters: 300,
            strict: true,
            initial_battery: 1.0,
            lower_bound: true,
            lb_bins: 8,
            lb_iters: 3000,
            lb_bin_value: BinValue::Upper,
        }
    }
}

/// Model objects derived from a configuration.
#[derive(Debug, Clone)]
pub struct Setup {
    pub graph: NetworkGraph,
    pub params: GlobalParams,
    pub correlation: DMatrix<f64>,
    pub costs: Vec<DistortionCost>,
}

fn parse_link(s: &str) -> Result<Link> {
    let (a, b) = s
        .split_once("->")
        .ok_or_else(|| Error::Topology(format!("link '{s}' must look like 'from->to'")))?;
    Ok(Link::new(a.parse()?, b.parse()?))
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Parameter(format!("{name} must lie in [0, 1), got {v}")))
            }
        };
        unit("omega", self.omega)?;
        unit("burn_in", self.burn_in)?;
        if !(self.v > 0.0 && self.v.is_finite()) {
            return Err(Error::Parameter(format!("V must be positive, got {}", self.v)));
        }
        if self.replicas == 0 {
            return Err(Error::Parameter("need at least one replica".into()));
        }
        if !(self.gain_scale > 0.0 && self.s_max > 0.0) {
            return Err(Error::Parameter("gain scale and clip must be positive".into()));
        }
        if !(self.initial_battery >= 0.0 && self.initial_battery <= 1.0) {
            return Err(Error::Parameter("initial_battery must lie in [0, 1]".into()));
        }
        if self.measuring.iter().any(|&m| m == 0 || m > self.num_sensors) {
            return Err(Error::Topology("measuring labels are one-based sensor ids".into()));
        }
        Ok(())
    }

    pub fn graph(&self) -> Result<NetworkGraph> {
        let mut links = self.links.iter().map(|s| parse_link(s)).collect::<Result<Vec<_>>>()?;
        let dc = Link::new(Vertex::Sink, Vertex::Collector);
        if self.mode.has_collector() && !links.contains(&dc) {
            links.push(dc);
        }
        let measuring: Vec<usize> = self.measuring.iter().map(|m| m - 1).collect();
        NetworkGraph::new(self.num_sensors, &measuring, links)
    }

    /// Validates and derives the graph, bounds, correlation and costs.
    pub fn setup(&self) -> Result<Setup> {
        self.validate()?;
        let graph = self.graph()?;
        let correlation = exchangeable_correlation(graph.num_measuring(), self.omega);
        let r_max = match self.r_max {
            Some(r) => r,
            None => full_set_rate(&correlation, self.d_min)?,
        };
        let p_max = self.p_max.unwrap_or(self.alpha * r_max);
        let mu_max = self.mu_max.unwrap_or_else(|| log(1.0 + p_max * self.s_max));
        let n = graph.num_agents();
        let sink = graph.sink_agent();
        let mut alpha = vec![self.alpha; n];
        let mut h_max = vec![self.h_max; n];
        alpha[sink] = self.alpha_d;
        h_max[sink] = self.h_max_d;
        let params = GlobalParams {
            p_max,
            r_max,
            d_min: self.d_min,
            d_max: self.d_max,
            h_max,
            mu_max,
            b: self.b,
            alpha,
            xi: self.s_max / crate::model::LOG_BASE.ln(),
        };
        params.validate(&graph)?;
        let costs = vec![DistortionCost::Linear; graph.num_measuring()];
        Ok(Setup { graph, params, correlation, costs })
    }

    /// Controller matching the configured mode and solver.
    pub fn controller(&self, setup: &Setup) -> Result<Controller> {
        let Setup { graph, params, costs, .. } = setup.clone();
        let mut c = match self.mode {
            Mode::Plain => {
                let solver = match self.rd_solver {
                    SolverKind::Central => RdSolver::Central,
                    SolverKind::Distributed => RdSolver::Distributed(DistributedOptions {
                        max_iter: self.distributed_iters,
                        ..DistributedOptions::default()
                    }),
                };
                Controller::new(graph, params, costs, self.v, solver)?
            }
            Mode::SideInfo => {
                Controller::with_side_info(graph, params, costs, self.v, self.omega, SideInfoMode::Optimized)?
            }
            Mode::SideInfoBaseline => {
                Controller::with_side_info(graph, params, costs, self.v, self.omega, SideInfoMode::Disabled)?
            }
        };
        c.set_strict(self.strict);
        Ok(c)
    }
}
