//! The perturbed drift-plus-penalty controller and its invariant monitors.
//!
//! Each slot runs four steps in order: energy harvesting, rate-distortion
//! optimization, power allocation and queue updates. Batteries are pulled
//! toward the perturbation weight `theta`, which keeps every agent that
//! spends energy above `alpha R_max + P_max`.

use serde::{Deserialize, Serialize};

use nalgebra::DMatrix;

use crate::cost::DistortionCost;
use crate::error::{Error, Result};
use crate::model::{
    data_queue_step, link_rates, log, GlobalParams, NetworkGraph, QueueState, SlotDecision, SlotState, LOG_BASE,
};
use crate::power::{allocate, link_weights};
use crate::rd::{solve_central, solve_distributed, DistributedOptions, RdProblem};
use crate::region::{RateRegion, KAPPA};
use crate::side_info::{rd_optimize_with_side_info, SideInfoProblem};

/// Relative tolerance of every invariant comparison.
pub const INVARIANT_TOL: f64 = 1e-9;

/// Grid resolution used by [`gamma`].
pub const GAMMA_GRID: usize = 10_000;

/// `sup_d (f(d) - f(D_max)) / (c log(d / D_max))` over `[D_min, D_max)`,
/// where `c` is the coefficient of `log d` in the rate region.
pub fn gamma(f: &DistortionCost, d_min: f64, d_max: f64, log_coeff: f64) -> f64 {
    if f.is_constant() {
        return 0.0;
    }
    let limit = f.derivative(d_max) * d_max * LOG_BASE.ln() / log_coeff;
    if d_min >= d_max {
        return limit;
    }
    let f_max = f.value(d_max);
    (0..GAMMA_GRID)
        .map(|i| d_min + (d_max - d_min) * i as f64 / GAMMA_GRID as f64)
        .map(|d| (f.value(d) - f_max) / (log_coeff * log(d / d_max)))
        .fold(limit, f64::max)
}

/// Energy to store this slot: `min(theta - E, H)` when below `theta`, else 0.
pub fn harvest_decide(battery: f64, harvest: f64, theta: f64) -> f64 {
    if battery < theta {
        (theta - battery).min(harvest)
    } else {
        0.0
    }
}

/// Performance-gap constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BConstants {
    /// Data-queue drift term per queued agent.
    pub b_u: f64,
    /// Sum over queued agents of the data and energy drift terms.
    pub b_tilde: f64,
    /// Full constant including the weight-offset terms.
    pub b: f64,
}

/// Energy drift term `(H^2 + alpha^2 R^2 + P^2 + 2 alpha R P) / 2` of one agent.
pub fn b_energy(params: &GlobalParams, agent: usize) -> f64 {
    let (h, a, r, p) = (params.h_max[agent], params.alpha[agent], params.r_max, params.p_max);
    (h * h + a * a * r * r + p * p + 2.0 * a * r * p) / 2.0
}

/// Closed-form gap constants for a graph and its parameters.
pub fn constant_b(graph: &NetworkGraph, params: &GlobalParams) -> BConstants {
    let (mu, r) = (params.mu_max, params.r_max);
    let b_u = mu * (mu + r) + r * r / 2.0;
    let delta = params.delta(graph);
    let l = graph.l_max() as f64;
    let agents = 0..graph.active_agents();
    let b_tilde: f64 = agents.clone().map(|a| b_u + b_energy(params, a)).sum();
    let extra: f64 = agents.map(|a| delta * l * mu + params.h_max[a].powi(2) / 4.0).sum();
    BConstants { b_u, b_tilde, b: b_tilde + extra }
}

/// Control weights derived once per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub v: f64,
    /// Per agent; zero for relays and the sink.
    pub gamma: Vec<f64>,
    /// Per agent `min(alpha, 1)`.
    pub beta: Vec<f64>,
    /// Per agent perturbation weight.
    pub theta: Vec<f64>,
    pub gamma_max: f64,
    pub b: BConstants,
}

impl PolicyConfig {
    /// `costs` holds one entry per measuring node, in measuring order.
    pub fn new(graph: &NetworkGraph, params: &GlobalParams, costs: &[DistortionCost], v: f64) -> Result<Self> {
        params.validate(graph)?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Parameter(format!("V must be positive, got {v}")));
        }
        let measuring = graph.measuring_nodes();
        if costs.len() != measuring.len() {
            return Err(Error::Parameter(format!("need {} cost functions", measuring.len())));
        }
        let n = graph.num_agents();
        let mut g = vec![0.0; n];
        for (&node, f) in measuring.iter().zip(costs) {
            if !f.validate(params.d_min, params.d_max) {
                return Err(Error::Parameter(format!("invalid cost function at sensor {}", node + 1)));
            }
            g[node] = gamma(f, params.d_min, params.d_max, KAPPA);
        }
        let gamma_max = g.iter().cloned().fold(0.0, f64::max);
        let gamma_sum: f64 = g.iter().sum();
        let beta: Vec<f64> = (0..n).map(|a| params.beta(a)).collect();
        let theta = (0..n)
            .map(|a| {
                if a >= graph.active_agents() {
                    return 0.0;
                }
                let own = if a == graph.sink_agent() { gamma_sum } else { g[a] };
                let rate_term = if beta[a] > 0.0 { own / beta[a] } else { 0.0 };
                v * rate_term.max(params.xi * gamma_max) + params.alpha[a] * params.r_max + params.p_max
            })
            .collect();
        Ok(Self { v, gamma: g, beta, theta, gamma_max, b: constant_b(graph, params) })
    }

    /// Upper bound on every queued backlog.
    pub fn backlog_bound(&self, params: &GlobalParams) -> f64 {
        self.gamma_max * self.v + params.r_max / params.b
    }

    /// Battery level required before an agent may spend energy.
    pub fn spend_threshold(&self, params: &GlobalParams, agent: usize) -> f64 {
        params.alpha[agent] * params.r_max + params.p_max
    }
}

/// Which monitored property failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// Battery outside `[0, theta]`.
    BatteryBound,
    /// Backlog outside `[0, gamma_max V + R_max / b]`.
    BacklogBound,
    /// Energy spent while the battery was below `alpha R_max + P_max`.
    SpendingThreshold,
    /// Energy spent beyond the stored battery.
    EnergyCausality,
}

/// One failed check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub slot: u64,
    pub agent: usize,
    pub kind: ViolationKind,
    pub value: f64,
    pub limit: f64,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?} at agent {}: value {} vs limit {}", self.kind, self.agent, self.value, self.limit)
    }
}

fn exceeds(value: f64, limit: f64) -> bool {
    value > limit + INVARIANT_TOL * limit.abs().max(1.0)
}

fn below_zero(value: f64) -> bool {
    value < -INVARIANT_TOL
}

/// Checks one slot transition: battery and backlog bounds on both states,
/// the spending threshold and energy causality for the decision.
pub fn check_slot(
    graph: &NetworkGraph,
    params: &GlobalParams,
    config: &PolicyConfig,
    slot: u64,
    before: &QueueState,
    decision: &SlotDecision,
    after: &QueueState,
) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |agent, kind, value, limit| out.push(Violation { slot, agent, kind, value, limit });
    let backlog_limit = config.backlog_bound(params);
    for a in 0..graph.active_agents() {
        let theta = config.theta[a];
        for q in [before, after] {
            let e = q.battery[a];
            if below_zero(e) {
                push(a, ViolationKind::BatteryBound, e, 0.0);
            } else if exceeds(e, theta) {
                push(a, ViolationKind::BatteryBound, e, theta);
            }
            let u = q.backlog[a];
            if below_zero(u) {
                push(a, ViolationKind::BacklogBound, u, 0.0);
            } else if exceeds(u, backlog_limit) {
                push(a, ViolationKind::BacklogBound, u, backlog_limit);
            }
        }
        let spend = decision.spending(graph, params, a);
        let rate = if a == graph.sink_agent() { decision.side_rate } else { decision.rates[a] };
        let threshold = config.spend_threshold(params, a);
        let spends = rate > 0.0 || graph.out_links(a).iter().any(|&l| decision.powers[l] > 0.0);
        if spends && exceeds(threshold, before.battery[a]) {
            push(a, ViolationKind::SpendingThreshold, before.battery[a], threshold);
        }
        if exceeds(spend, before.battery[a]) {
            push(a, ViolationKind::EnergyCausality, spend, before.battery[a]);
        }
    }
    out
}

/// One recorded slot of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub before: QueueState,
    pub decision: SlotDecision,
    pub after: QueueState,
}

/// Violation counts over a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InvariantReport {
    pub battery_bound: u64,
    pub backlog_bound: u64,
    pub spending_threshold: u64,
    pub energy_causality: u64,
    pub first: Option<Violation>,
}

impl InvariantReport {
    pub fn total(&self) -> u64 {
        self.battery_bound + self.backlog_bound + self.spending_threshold + self.energy_causality
    }

    pub fn record(&mut self, v: Violation) {
        match v.kind {
            ViolationKind::BatteryBound => self.battery_bound += 1,
            ViolationKind::BacklogBound => self.backlog_bound += 1,
            ViolationKind::SpendingThreshold => self.spending_threshold += 1,
            ViolationKind::EnergyCausality => self.energy_causality += 1,
        }
        self.first.get_or_insert(v);
    }
}

/// Re-checks a completed trace.
pub fn check_invariants(
    graph: &NetworkGraph,
    params: &GlobalParams,
    config: &PolicyConfig,
    trace: &[TraceEntry],
) -> InvariantReport {
    let mut report = InvariantReport::default();
    for (t, e) in trace.iter().enumerate() {
        for v in check_slot(graph, params, config, t as u64, &e.before, &e.decision, &e.after) {
            report.record(v);
        }
    }
    report
}

/// Solver used for the rate-distortion step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum RdSolver {
    #[default]
    Central,
    Distributed(DistributedOptions),
}

/// How the sink acquires side information.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SideInfoMode {
    /// Rate chosen by the joint search.
    Optimized,
    /// Rate held at zero.
    Disabled,
}

/// Result of one controller step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub decision: SlotDecision,
    pub next: QueueState,
    /// Sum of distortion costs over measuring nodes.
    pub cost: f64,
    pub delivered: f64,
    pub violations: Vec<Violation>,
}

/// Stateful per-slot controller.
#[derive(Debug, Clone)]
pub struct Controller {
    graph: NetworkGraph,
    params: GlobalParams,
    costs: Vec<DistortionCost>,
    config: PolicyConfig,
    solver: RdSolver,
    side_info: Option<(f64, SideInfoMode)>,
    strict: bool,
    region: Option<(DMatrix<f64>, RateRegion)>,
}

impl Controller {
    pub fn new(
        graph: NetworkGraph,
        params: GlobalParams,
        costs: Vec<DistortionCost>,
        v: f64,
        solver: RdSolver,
    ) -> Result<Self> {
        if graph.is_side_info() {
            return Err(Error::Parameter("use with_side_info for a graph with a collector".into()));
        }
        let config = PolicyConfig::new(&graph, &params, &costs, v)?;
        Ok(Self { graph, params, costs, config, solver, side_info: None, strict: true, region: None })
    }

    /// Controller for a side-information graph with exchangeable sources of
    /// correlation `omega`.
    pub fn with_side_info(
        graph: NetworkGraph,
        params: GlobalParams,
        costs: Vec<DistortionCost>,
        v: f64,
        omega: f64,
        mode: SideInfoMode,
    ) -> Result<Self> {
        if !graph.is_side_info() {
            return Err(Error::Parameter("graph has no collector".into()));
        }
        if !(0.0..1.0).contains(&omega) {
            return Err(Error::Parameter(format!("omega must lie in [0, 1), got {omega}")));
        }
        let config = PolicyConfig::new(&graph, &params, &costs, v)?;
        Ok(Self {
            graph,
            params,
            costs,
            config,
            solver: RdSolver::Central,
            side_info: Some((omega, mode)),
            strict: true,
            region: None,
        })
    }

    /// When false, violations are reported in the outcome instead of
    /// aborting the step.
    pub fn set_strict(&mut self, strict: bool) {
        self.strict = strict;
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn graph(&self) -> &NetworkGraph {
        &self.graph
    }

    pub fn params(&self) -> &GlobalParams {
        &self.params
    }

    /// Empty data queues with each battery at `fill * theta`.
    pub fn initial_state(&self, fill: f64) -> QueueState {
        let n = self.graph.num_agents();
        QueueState::new(vec![0.0; n], self.config.theta.iter().map(|t| t * fill).collect())
    }

    fn region_for(&mut self, o: &DMatrix<f64>) -> Result<&RateRegion> {
        let stale = self.region.as_ref().map_or(true, |(m, _)| m != o);
        if stale {
            self.region = Some((o.clone(), RateRegion::new(o)?));
        }
        Ok(&self.region.as_ref().expect("region cached").1)
    }

    fn rate_distortion(&mut self, q: &QueueState, s: &SlotState, decision: &mut SlotDecision) -> Result<()> {
        let measuring = self.graph.measuring_nodes();
        if measuring.is_empty() {
            return Ok(());
        }
        let price: Vec<f64> = measuring
            .iter()
            .map(|&n| q.backlog[n] + (self.config.theta[n] - q.battery[n]) * self.params.alpha[n])
            .collect();
        let (v, p) = (self.config.v, &self.params);
        let (rates, dist) = match self.side_info {
            Some((omega, mode)) => {
                let d = self.graph.sink_agent();
                let sp = SideInfoProblem {
                    rate_price: &price,
                    v,
                    costs: &self.costs,
                    r_max: p.r_max,
                    d_min: p.d_min,
                    d_max: p.d_max,
                    omega,
                    side_price: (self.config.theta[d] - q.battery[d]) * p.alpha[d],
                };
                let sol = match mode {
                    SideInfoMode::Optimized => rd_optimize_with_side_info(&sp)?,
                    SideInfoMode::Disabled => sp.solve_at(0.0)?,
                };
                decision.side_rate = sol.side_rate;
                (sol.solution.rates, sol.solution.distortions)
            }
            None => {
                let (solver, costs) = (self.solver, self.costs.clone());
                let (r_max, d_min, d_max) = (p.r_max, p.d_min, p.d_max);
                let region = self.region_for(&s.correlation)?;
                let problem = RdProblem::new(region, price, v, costs, r_max, d_min, d_max)?;
                let sol = match solver {
                    RdSolver::Central => solve_central(&problem)?,
                    RdSolver::Distributed(opts) => solve_distributed(&problem, &opts)?.solution,
                };
                (sol.rates, sol.distortions)
            }
        };
        for (i, &n) in measuring.iter().enumerate() {
            decision.rates[n] = rates[i];
            decision.distortions[n] = dist[i];
        }
        Ok(())
    }

    /// Runs one slot from `q` under the exogenous state `s`.
    pub fn step(&mut self, slot: u64, q: &QueueState, s: &SlotState) -> Result<StepOutcome> {
        s.validate(&self.graph, &self.params)?;
        let mut decision = SlotDecision::idle(&self.graph, &self.params);
        for a in 0..self.graph.active_agents() {
            decision.harvested[a] = harvest_decide(q.battery[a], s.harvest[a], self.config.theta[a]);
        }
        self.rate_distortion(q, s, &mut decision)?;
        let weights = link_weights(&self.graph, &q.backlog, self.params.delta(&self.graph));
        decision.powers = allocate(&self.graph, &self.params, &weights, &s.gains, &q.battery, &self.config.theta);

        let mut battery = q.battery.clone();
        for a in 0..self.graph.active_agents() {
            let spend = decision.spending(&self.graph, &self.params, a);
            if self.strict && exceeds(spend, q.battery[a]) {
                return Err(Error::EnergyCausality { agent: a, spend, battery: q.battery[a] });
            }
            battery[a] = (q.battery[a] - spend).max(0.0) + decision.harvested[a];
        }
        let caps = link_rates(&decision.powers, &s.gains, self.params.mu_max);
        let flow = data_queue_step(&self.graph, &q.backlog, &decision.rates, &caps, self.params.b);
        let next = QueueState::new(flow.backlog, battery);

        let violations = check_slot(&self.graph, &self.params, &self.config, slot, q, &decision, &next);
        if self.strict {
            if let Some(v) = violations.first() {
                return Err(Error::Invariant { slot, detail: v.to_string() });
            }
        }
        let cost = self
            .graph
            .measuring_nodes()
            .iter()
            .zip(&self.costs)
            .map(|(&m, f)| f.value(decision.distortions[m]))
            .sum();
        Ok(StepOutcome { decision, next, cost, delivered: flow.delivered, violations })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Link, Vertex};
    use crate::region::exchangeable_correlation;

    fn params(n_agents: usize, r_max: f64) -> GlobalParams {
        GlobalParams {
            p_max: r_max,
            r_max,
            d_min: 1e-3,
            d_max: 1.0,
            h_max: vec![3.0; n_agents],
            mu_max: (1.0 + r_max * 10.0).ln(),
            b: 1.0,
            alpha: vec![1.0; n_agents],
            xi: 10.0,
        }
    }

    #[test]
    fn gamma_examples() {
        let lin = DistortionCost::Linear;
        assert!((gamma(&lin, 1e-3, 1.0, 1.0) - 1.0).abs() < 1e-9);
        assert!((gamma(&lin, 1e-3, 1.0, KAPPA) - 2.0).abs() < 1e-9);
        assert_eq!(gamma(&DistortionCost::Constant { value: 3.0 }, 1e-3, 1.0, 1.0), 0.0);
        let sq = DistortionCost::Power { exponent: 2.0 };
        assert!((gamma(&sq, 1e-3, 1.0, 1.0) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn gamma_matches_independent_grid_sup() {
        let f = DistortionCost::Power { exponent: 1.5 };
        let (lo, hi) = (0.01, 2.0);
        let mut best: f64 = 0.0;
        for i in 0..200_000 {
            let d = lo + (hi - lo) * i as f64 / 200_000.0;
            best = best.max((f.value(d) - f.value(hi)) / (d / hi).ln());
        }
        let g = gamma(&f, lo, hi, 1.0);
        assert!(g >= best - 1e-9 && g - best < 1e-4, "{g} vs {best}");
    }

    #[test]
    fn harvest_examples() {
        assert_eq!(harvest_decide(5.0, 3.0, 5.0), 0.0);
        assert_eq!(harvest_decide(0.0, 3.0, 5.0), 3.0);
        assert_eq!(harvest_decide(4.0, 3.0, 5.0), 1.0);
        assert_eq!(harvest_decide(6.0, 3.0, 5.0), 0.0);
    }

    #[test]
    fn constant_b_examples() {
        let g = NetworkGraph::new(1, &[0], vec![Link::new(Vertex::Sensor(0), Vertex::Sink)]).unwrap();
        let mut p = params(2, 1.0);
        p.mu_max = 1.0;
        p.h_max = vec![0.0; 2];
        p.alpha = vec![0.0; 2];
        p.p_max = 0.0;
        let c = constant_b(&g, &p);
        let delta = p.delta(&g);
        assert!((c.b - (2.5 + delta)).abs() < 1e-12);
        assert!(c.b >= c.b_tilde);
        p.mu_max = 0.0;
        p.r_max = 0.0;
        assert_eq!(constant_b(&g, &p).b, 0.0);
    }

    #[test]
    fn constant_b_full_formula() {
        let g = NetworkGraph::relay_five(false);
        let p = params(6, 4.0);
        let (mu, r, h, a, pm) = (p.mu_max, p.r_max, 3.0, 1.0, p.p_max);
        let n = 5.0;
        let l = g.l_max() as f64;
        let delta = l * mu + r;
        let expected = n * (mu * (mu + r) + r * r / 2.0)
            + n / 2.0 * (h * h + a * a * r * r + pm * pm + 2.0 * a * r * pm)
            + n * (delta * l * mu + h * h / 4.0);
        assert!((constant_b(&g, &p).b - expected).abs() < 1e-9 * expected);
    }

    #[test]
    fn theta_formula() {
        let g = NetworkGraph::relay_five(false);
        let p = params(6, 4.0);
        let c = PolicyConfig::new(&g, &p, &[DistortionCost::Linear; 3], 100.0).unwrap();
        assert_eq!(c.gamma_max, 2.0);
        assert_eq!(c.gamma[3], 0.0);
        let expected = 100.0 * (2.0f64).max(10.0 * 2.0) + 4.0 + 4.0;
        for a in 0..5 {
            assert!((c.theta[a] - expected).abs() < 1e-9);
        }
        let mut p2 = p.clone();
        p2.xi = 0.1;
        let c2 = PolicyConfig::new(&g, &p2, &[DistortionCost::Linear; 3], 100.0).unwrap();
        assert!((c2.theta[0] - (2.0 / 1.0 * 100.0 + 8.0)).abs() < 1e-9);
        assert!((c2.theta[3] - (0.1 * 2.0 * 100.0 + 8.0)).abs() < 1e-9);
    }

    fn controller(v: f64) -> Controller {
        let g = NetworkGraph::relay_five(false);
        let p = params(6, 4.0);
        Controller::new(g, p, vec![DistortionCost::Linear; 3], v, RdSolver::Central).unwrap()
    }

    fn slot(harvest: f64) -> SlotState {
        SlotState { gains: vec![1.0; 6], correlation: exchangeable_correlation(3, 0.5), harvest: vec![harvest; 6] }
    }

    #[test]
    fn full_battery_empty_queues_slot() {
        let mut c = controller(10.0);
        let q = c.initial_state(1.0);
        let out = c.step(0, &q, &slot(0.0)).unwrap();
        assert!(out.decision.powers.iter().all(|&p| p == 0.0));
        assert!(out.decision.harvested.iter().all(|&h| h == 0.0));
        assert!(out.violations.is_empty());
        for a in 0..5 {
            let spent = out.decision.rates[a];
            assert!((out.next.battery[a] - (q.battery[a] - spent)).abs() < 1e-9);
            assert!((out.next.backlog[a] - out.decision.rates[a]).abs() < 1e-12);
        }
    }

    #[test]
    fn low_batteries_spend_nothing() {
        let mut c = controller(50.0);
        let mut q = c.initial_state(0.0);
        for a in 0..5 {
            q.battery[a] = c.config().spend_threshold(c.params(), a) * 0.999;
            q.backlog[a] = if a < 3 { 40.0 } else { 0.0 };
        }
        let out = c.step(0, &q, &slot(3.0)).unwrap();
        assert!(out.decision.rates.iter().all(|&r| r == 0.0));
        assert!(out.decision.powers.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn random_walk_has_no_violations() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for v in [1.0, 30.0] {
            let mut c = controller(v);
            let mut q = c.initial_state(1.0);
            let mut trace = Vec::new();
            for t in 0..300 {
                let s = SlotState {
                    gains: (0..6).map(|_| rng.random_range(0.0..10.0)).collect(),
                    correlation: exchangeable_correlation(3, 0.5),
                    harvest: (0..6).map(|_| rng.random_range(0.0..3.0)).collect(),
                };
                let out = c.step(t, &q, &s).unwrap();
                trace.push(TraceEntry { before: q.clone(), decision: out.decision.clone(), after: out.next.clone() });
                q = out.next;
            }
            let report = check_invariants(c.graph(), c.params(), c.config(), &trace);
            assert_eq!(report.total(), 0);
        }
    }

    #[test]
    fn detector_reports_injected_battery_overflow() {
        let c = controller(10.0);
        let q = c.initial_state(1.0);
        let mut bad = q.clone();
        bad.battery[0] = c.config().theta[0] * 1.01;
        let idle = SlotDecision::idle(c.graph(), c.params());
        let report = check_invariants(
            c.graph(),
            c.params(),
            c.config(),
            &[TraceEntry { before: q.clone(), decision: idle.clone(), after: bad }],
        );
        assert_eq!(report.battery_bound, 1);
        assert_eq!(report.total(), 1);

        let mut spend = idle;
        spend.powers[0] = 1.0;
        let mut low = q.clone();
        low.battery[0] = 0.5;
        let report = check_invariants(
            c.graph(),
            c.params(),
            c.config(),
            &[TraceEntry { before: low.clone(), decision: spend, after: low }],
        );
        assert_eq!(report.spending_threshold, 1);
        assert_eq!(report.energy_causality, 1);
    }

    #[test]
    fn strict_mode_turns_violations_into_errors() {
        let mut c = controller(10.0);
        let mut q = c.initial_state(1.0);
        q.backlog[0] = 1e9;
        assert!(matches!(c.step(3, &q, &slot(0.0)), Err(Error::Invariant { slot: 3, .. })));
        c.set_strict(false);
        let out = c.step(3, &q, &slot(0.0)).unwrap();
        assert!(out.violations.iter().any(|v| v.kind == ViolationKind::BacklogBound));
    }

    #[test]
    fn side_info_controller_respects_invariants() {
        use rand::{Rng, SeedableRng};
        let g = NetworkGraph::relay_five(true);
        let mut p = params(6, 4.0);
        p.h_max[5] = 12.0;
        let mut c =
            Controller::with_side_info(g, p, vec![DistortionCost::Linear; 3], 20.0, 0.9, SideInfoMode::Optimized)
                .unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let mut q = c.initial_state(1.0);
        let mut used_side = false;
        for t in 0..100 {
            let s = SlotState {
                gains: (0..7).map(|_| rng.random_range(0.0..10.0)).collect(),
                correlation: exchangeable_correlation(3, 0.9),
                harvest: (0..6).map(|a| rng.random_range(0.0..if a == 5 { 12.0 } else { 3.0 })).collect(),
            };
            let out = c.step(t, &q, &s).unwrap();
            used_side |= out.decision.side_rate > 0.0;
            q = out.next;
        }
        assert!(used_side);
    }
}
