//! Lagrangian lower bounds on the optimal time-average cost.
//!
//! Relaxing queue stability to mean-rate stability and energy availability to
//! mean energy balance, then dualizing, gives a function of the multipliers
//! `(lambda, upsilon, chi)` whose value divided by `V` lower-bounds the
//! optimal cost. Because the interference-free capacity makes every term
//! separable, the dual splits into a rate/distortion part per source state, a
//! power part per agent and channel state, and a harvest part per agent and
//! harvest state.
//!
//! Multipliers are expressed in units of `V`, so every value returned here is
//! already a cost per slot.

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cost::DistortionCost;
use crate::error::{Error, Result};
use crate::model::{link_capacity, GlobalParams, NetworkGraph};
use crate::power::{allocation_value, waterfill};
use crate::region::{kappa_ln, members, subsets, RateRegion};

/// Discrete source state.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceState {
    pub correlation: DMatrix<f64>,
    pub prob: f64,
}

/// Channel states of one agent: gains over its outgoing links, in link order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentChannel {
    pub gains: Vec<Vec<f64>>,
    pub probs: Vec<f64>,
}

/// Harvest states of one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentHarvest {
    pub levels: Vec<f64>,
    pub probs: Vec<f64>,
}

/// Finite-state model with independent source, channel and harvest
/// processes. Channel and harvest entries are indexed by sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteStateModel {
    pub sources: Vec<SourceState>,
    pub channels: Vec<AgentChannel>,
    pub harvest: Vec<AgentHarvest>,
}

/// Value chosen to represent each quantile bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinValue {
    /// Upper edge of the bin. The discretized model then dominates the
    /// continuous one, so its bound is also a bound for the continuous model.
    #[default]
    Upper,
    /// Median of the bin.
    Median,
}

fn check_probs(p: &[f64], what: &str) -> Result<()> {
    if p.is_empty() || p.iter().any(|&x| !(x >= 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Parameter(format!("{what} probabilities must be nonnegative and sum to 1")));
    }
    Ok(())
}

impl DiscreteStateModel {
    pub fn validate(&self, graph: &NetworkGraph) -> Result<()> {
        if graph.is_side_info() {
            return Err(Error::Parameter("lower bound is defined for plain mode only".into()));
        }
        check_probs(&self.sources.iter().map(|s| s.prob).collect::<Vec<_>>(), "source")?;
        let n = graph.num_sensors();
        if self.channels.len() != n || self.harvest.len() != n {
            return Err(Error::Parameter(format!("need channel and harvest states for {n} sensors")));
        }
        for (a, c) in self.channels.iter().enumerate() {
            check_probs(&c.probs, "channel")?;
            let deg = graph.out_links(a).len();
            if c.gains.len() != c.probs.len() || c.gains.iter().any(|g| g.len() != deg) {
                return Err(Error::Parameter(format!("channel states of sensor {} need {deg} gains", a + 1)));
            }
        }
        for h in &self.harvest {
            check_probs(&h.probs, "harvest")?;
            if h.levels.len() != h.probs.len() {
                return Err(Error::Parameter("one harvest level per probability".into()));
            }
        }
        for s in &self.sources {
            if s.correlation.nrows() != graph.num_measuring() {
                return Err(Error::Parameter("source state size must match measuring nodes".into()));
            }
        }
        Ok(())
    }

    /// Quantile discretization of a fixed source, i.i.d. unit-mean
    /// exponential gains scaled by `gain_scale` and clipped at `s_max`, and
    /// uniform harvest on `[0, H_max]`. Each link and each harvest gets
    /// `bins` equiprobable bins; an agent's channel states are the product of
    /// its links' bins.
    pub fn quantile(
        graph: &NetworkGraph,
        params: &GlobalParams,
        correlation: &DMatrix<f64>,
        gain_scale: f64,
        s_max: f64,
        bins: usize,
        value: BinValue,
    ) -> Result<Self> {
        if bins == 0 {
            return Err(Error::Parameter("need at least one bin".into()));
        }
        let pos = |i: usize| match value {
            BinValue::Upper => (i + 1) as f64 / bins as f64,
            BinValue::Median => (i as f64 + 0.5) / bins as f64,
        };
        let gain_levels: Vec<f64> = (0..bins)
            .map(|i| {
                let q = pos(i);
                if q >= 1.0 {
                    s_max
                } else {
                    (-gain_scale * (1.0 - q).ln()).min(s_max)
                }
            })
            .collect();
        let channels = (0..graph.num_sensors())
            .map(|a| {
                let deg = graph.out_links(a).len();
                let count = bins.pow(deg as u32);
                let gains = (0..count)
                    .map(|mut idx| {
                        (0..deg)
                            .map(|_| {
                                let g = gain_levels[idx % bins];
                                idx /= bins;
                                g
                            })
                            .collect()
                    })
                    .collect();
                AgentChannel { gains, probs: vec![1.0 / count as f64; count] }
            })
            .collect();
        let harvest = (0..graph.num_sensors())
            .map(|a| AgentHarvest {
                levels: (0..bins).map(|i| pos(i) * params.h_max[a]).collect(),
                probs: vec![1.0 / bins as f64; bins],
            })
            .collect();
        let model = Self { sources: vec![SourceState { correlation: correlation.clone(), prob: 1.0 }], channels, harvest };
        model.validate(graph)?;
        Ok(model)
    }
}

/// Multipliers in units of `V`. `lambda[i]` holds the subset prices of source
/// state `i`; `upsilon` and `chi` are indexed by sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplierSet {
    pub lambda: Vec<Vec<f64>>,
    pub upsilon: Vec<f64>,
    pub chi: Vec<f64>,
}

impl MultiplierSet {
    pub fn zeros(graph: &NetworkGraph, model: &DiscreteStateModel) -> Self {
        let m = (1usize << graph.num_measuring()) - 1;
        let n = graph.num_sensors();
        Self { lambda: vec![vec![0.0; m]; model.sources.len()], upsilon: vec![0.0; n], chi: vec![0.0; n] }
    }

    fn project(&mut self) {
        for l in self.lambda.iter_mut().flatten() {
            *l = l.max(0.0);
        }
        for u in &mut self.upsilon {
            *u = u.max(0.0);
        }
    }

    fn flat(&self) -> Vec<f64> {
        self.lambda.iter().flatten().chain(&self.upsilon).chain(&self.chi).copied().collect()
    }

    fn add_scaled(&mut self, dir: &[f64], step: f64) {
        let mut it = dir.iter();
        for l in self.lambda.iter_mut().flatten().chain(&mut self.upsilon).chain(&mut self.chi) {
            *l += step * it.next().expect("direction length");
        }
    }
}

/// Shared pieces of the bound problem.
#[derive(Debug, Clone)]
pub struct BoundProblem<'a> {
    pub graph: &'a NetworkGraph,
    pub params: &'a GlobalParams,
    /// One cost per measuring node, in measuring order.
    pub costs: &'a [DistortionCost],
}

/// Minimizer of `f(d) - kappa Lambda ln d` over `[D_min, D_max]`.
fn best_distortion(f: &DistortionCost, price: f64, d_min: f64, d_max: f64) -> f64 {
    let kap = kappa_ln();
    if f.is_constant() || price <= 0.0 {
        return d_min;
    }
    if let DistortionCost::Linear = f {
        return (kap * price).clamp(d_min, d_max);
    }
    let slope = |d: f64| f.derivative(d) * d - kap * price;
    if slope(d_min) >= 0.0 {
        return d_min;
    }
    if slope(d_max) <= 0.0 {
        return d_max;
    }
    let (mut lo, mut hi) = (d_min, d_max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if slope(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Per-piece minimizers, used for both values and subgradients.
struct SourcePiece {
    value: f64,
    rates: Vec<f64>,
    /// `g(X_m) - kappa sum ln d - sum r` per subset.
    slack: Vec<f64>,
}

fn source_piece(p: &BoundProblem, region: &RateRegion, lambda: &[f64], m: &MultiplierSet) -> SourcePiece {
    let measuring = p.graph.measuring_nodes();
    let k = measuring.len();
    let kap = kappa_ln();
    let mut value: f64 = lambda.iter().zip(region.entropies()).map(|(l, g)| l * g).sum();
    let mut rates = vec![0.0; k];
    let mut dist = vec![0.0; k];
    for (i, &node) in measuring.iter().enumerate() {
        let price: f64 = lambda
            .iter()
            .enumerate()
            .filter(|(j, _)| (*j as u32 + 1) & (1 << i) != 0)
            .map(|(_, l)| l)
            .sum();
        let f = &p.costs[i];
        let d = best_distortion(f, price, p.params.d_min, p.params.d_max);
        dist[i] = d;
        value += f.value(d) - kap * price * d.ln();
        let coeff = -price + m.upsilon[node] / p.params.b + m.chi[node] * p.params.alpha[node];
        if coeff < 0.0 {
            rates[i] = p.params.r_max;
            value += coeff * p.params.r_max;
        }
    }
    let slack = subsets(k)
        .map(|mask| {
            region.entropies()[mask as usize - 1] - members(mask).map(|i| kap * dist[i].ln() + rates[i]).sum::<f64>()
        })
        .collect();
    SourcePiece { value, rates, slack }
}

/// Power piece of one sensor in one channel state: value and chosen powers.
///
/// Weights `upsilon_n - upsilon_m` may be negative. With a nonnegative energy
/// price such links stay silent. With a negative price the budget remainder
/// left by the positive-weight links is either kept or spent whole on a single
/// link, since the penalty on one link is concave in its power.
fn power_piece(p: &BoundProblem, agent: usize, gains: &[f64], m: &MultiplierSet) -> (f64, Vec<f64>) {
    let out = p.graph.out_links(agent);
    let w: Vec<f64> = out
        .iter()
        .map(|&l| {
            let to = p.graph.to_agent(l).filter(|&a| a < p.graph.num_sensors()).map_or(0.0, |a| m.upsilon[a]);
            m.upsilon[agent] - to
        })
        .collect();
    let positive: Vec<f64> = w.iter().map(|x| x.max(0.0)).collect();
    let chi = m.chi[agent];
    let mu = p.params.mu_max;
    let mut best = waterfill(&positive, gains, chi.max(0.0), p.params.p_max, mu);
    let mut best_value = allocation_value(&w, gains, &best, chi, mu);
    if chi < 0.0 {
        let leftover = p.params.p_max - best.iter().sum::<f64>();
        if leftover > 0.0 {
            for j in 0..out.len() {
                let mut cand = best.clone();
                cand[j] += leftover;
                let v = allocation_value(&w, gains, &cand, chi, mu);
                if v > best_value {
                    best_value = v;
                    best = cand;
                }
            }
        }
    }
    (-best_value, best)
}

fn regions(model: &DiscreteStateModel) -> Result<Vec<RateRegion>> {
    model.sources.iter().map(|s| RateRegion::new(&s.correlation)).collect()
}

/// Dual value with its subgradient, both in units of `V`.
fn evaluate(
    p: &BoundProblem,
    model: &DiscreteStateModel,
    regions: &[RateRegion],
    m: &MultiplierSet,
) -> (f64, MultiplierSet) {
    let n = p.graph.num_sensors();
    let measuring = p.graph.measuring_nodes();
    let mut grad = MultiplierSet { lambda: Vec::new(), upsilon: vec![0.0; n], chi: vec![0.0; n] };
    let mut total = 0.0;
    for ((src, region), lambda) in model.sources.iter().zip(regions).zip(&m.lambda) {
        let piece = source_piece(p, region, lambda, m);
        total += src.prob * piece.value;
        grad.lambda.push(piece.slack);
        for (i, &node) in measuring.iter().enumerate() {
            grad.upsilon[node] += src.prob * piece.rates[i] / p.params.b;
            grad.chi[node] += src.prob * p.params.alpha[node] * piece.rates[i];
        }
    }
    for a in 0..n {
        let out = p.graph.out_links(a);
        for (gains, &prob) in model.channels[a].gains.iter().zip(&model.channels[a].probs) {
            let (value, powers) = power_piece(p, a, gains, m);
            total += prob * value;
            grad.chi[a] += prob * powers.iter().sum::<f64>();
            for ((&l, &pw), &s) in out.iter().zip(&powers).zip(gains) {
                let c = link_capacity(pw, s, p.params.mu_max);
                grad.upsilon[a] -= prob * c;
                if let Some(to) = p.graph.to_agent(l).filter(|&t| t < n) {
                    grad.upsilon[to] += prob * c;
                }
            }
        }
        let chi = m.chi[a];
        for (&h, &prob) in model.harvest[a].levels.iter().zip(&model.harvest[a].probs) {
            if chi > 0.0 {
                total -= prob * chi * h;
                grad.chi[a] -= prob * h;
            }
        }
    }
    (total, grad)
}

/// Dual function for one joint state: a source state, per-link gains and
/// per-agent harvest levels.
pub fn dual_per_state(
    p: &BoundProblem,
    correlation: &DMatrix<f64>,
    gains: &[f64],
    harvest: &[f64],
    m: &MultiplierSet,
) -> Result<f64> {
    let region = RateRegion::new(correlation)?;
    let mut total = source_piece(p, &region, &m.lambda[0], m).value;
    for a in 0..p.graph.num_sensors() {
        let g: Vec<f64> = p.graph.out_links(a).iter().map(|&l| gains[l]).collect();
        total += power_piece(p, a, &g, m).0;
        total -= m.chi[a].max(0.0) * harvest[a];
    }
    Ok(total)
}

/// Probability-weighted dual value, in units of `V`.
pub fn dual_value(p: &BoundProblem, model: &DiscreteStateModel, m: &MultiplierSet) -> Result<f64> {
    model.validate(p.graph)?;
    Ok(evaluate(p, model, &regions(model)?, m).0)
}

/// Result of [`maximize_dual`].
#[derive(Debug, Clone, PartialEq)]
pub struct DualBound {
    pub multipliers: MultiplierSet,
    /// Best dual value seen, a lower bound on the optimal cost.
    pub lower_bound: f64,
    /// Best value after each iteration.
    pub history: Vec<f64>,
}

/// Projected subgradient ascent with normalized `step0 / sqrt(t)` steps.
pub fn maximize_dual(p: &BoundProblem, model: &DiscreteStateModel, iterations: usize, step0: f64) -> Result<DualBound> {
    model.validate(p.graph)?;
    let regions = regions(model)?;
    let mut m = MultiplierSet::zeros(p.graph, model);
    let (mut best, mut grad) = evaluate(p, model, &regions, &m);
    let mut best_m = m.clone();
    let mut history = Vec::with_capacity(iterations);
    for t in 1..=iterations {
        let dir = grad.flat();
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= 1e-15 {
            history.push(best);
            continue;
        }
        m.add_scaled(&dir, step0 / (t as f64).sqrt() / norm);
        m.project();
        let (value, g) = evaluate(p, model, &regions, &m);
        grad = g;
        if value > best {
            best = value;
            best_m = m.clone();
        }
        history.push(best);
    }
    Ok(DualBound { multipliers: best_m, lower_bound: best, history })
}

/// Grid sizes of [`direct_solve_small`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DirectGrid {
    pub distortion_points: usize,
    pub power_points: usize,
}

impl Default for DirectGrid {
    fn default() -> Self {
        Self { distortion_points: 15, power_points: 15 }
    }
}

/// Corner points of `{r >= 0 : sum_X r >= b(X)}`. Along every node order
/// each node takes the least rate meeting all subsets it completes; points
/// outside the rate box are dropped.
fn corner_rates(region: &RateRegion, dist: &[f64], r_max: f64) -> Vec<Vec<f64>> {
    let k = dist.len();
    let kap = kappa_ln();
    let bound = |mask: u32| -> f64 {
        region.entropies()[mask as usize - 1] - members(mask).map(|i| kap * dist[i].ln()).sum::<f64>()
    };
    let mut orders: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..k {
        orders = orders
            .into_iter()
            .flat_map(|o| {
                (0..k).filter(|i| !o.contains(i)).map(|i| [o.as_slice(), &[i]].concat()).collect::<Vec<_>>()
            })
            .collect();
    }
    let mut out: Vec<Vec<f64>> = Vec::new();
    for order in orders {
        let mut r = vec![0.0; k];
        let mut prefix = 0u32;
        for &i in &order {
            prefix |= 1 << i;
            r[i] = subsets(k)
                .filter(|&t| t & prefix == t && t & (1 << i) != 0)
                .map(|t| bound(t) - members(t).filter(|&j| j != i).map(|j| r[j]).sum::<f64>())
                .fold(0.0, f64::max);
        }
        if r.iter().all(|&x| x <= r_max * (1.0 + 1e-12)) && !out.contains(&r) {
            out.push(r);
        }
    }
    out
}

/// Relaxed stationary-randomized problem solved as a linear program over
/// discretized action atoms, for networks of at most two sensors. Distortions
/// take values on a grid including `D_max`, rates are the region corner points
/// for each distortion pair, and powers lie on a per-link grid within the
/// budget. The returned cost is an upper bound on the relaxed optimum of the
/// model and hence at least any dual value.
pub fn direct_solve_small(p: &BoundProblem, model: &DiscreteStateModel, grid: DirectGrid) -> Result<f64> {
    model.validate(p.graph)?;
    let n = p.graph.num_sensors();
    if n > 2 {
        return Err(Error::TooLarge(format!("{n} sensors; at most 2 supported")));
    }
    if grid.distortion_points > 15 || grid.power_points > 15 || grid.distortion_points < 2 || grid.power_points < 2 {
        return Err(Error::TooLarge("grids must have between 2 and 15 points".into()));
    }
    if model.sources.len() > 4
        || model.channels.iter().any(|c| c.probs.len() > 4)
        || model.harvest.iter().any(|h| h.probs.len() > 4)
    {
        return Err(Error::TooLarge("at most 4 states per process".into()));
    }
    let prm = p.params;
    let measuring = p.graph.measuring_nodes();
    let k = measuring.len();
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    // Row accumulators: stability and energy balance per sensor.
    let mut stab: Vec<Vec<(minilp::Variable, f64)>> = vec![Vec::new(); n];
    let mut energy: Vec<Vec<(minilp::Variable, f64)>> = vec![Vec::new(); n];

    let d_grid: Vec<f64> = (0..grid.distortion_points)
        .map(|i| {
            let t = i as f64 / (grid.distortion_points - 1) as f64;
            (prm.d_min.ln() + t * (prm.d_max.ln() - prm.d_min.ln())).exp()
        })
        .collect();
    for src in &model.sources {
        let region = RateRegion::new(&src.correlation)?;
        let mut vars = Vec::new();
        let mut idx = vec![0usize; k];
        loop {
            let dist: Vec<f64> = idx.iter().map(|&i| d_grid[i]).collect();
            let cost: f64 = dist.iter().zip(p.costs).map(|(&d, f)| f.value(d)).sum();
            for r in corner_rates(&region, &dist, prm.r_max) {
                let v = lp.add_var(src.prob * cost, (0.0, 1.0));
                vars.push((v, 1.0));
                for (i, &node) in measuring.iter().enumerate() {
                    stab[node].push((v, src.prob * r[i] / prm.b));
                    energy[node].push((v, src.prob * prm.alpha[node] * r[i]));
                }
            }
            let mut pos = 0;
            while pos < k {
                idx[pos] += 1;
                if idx[pos] < d_grid.len() {
                    break;
                }
                idx[pos] = 0;
                pos += 1;
            }
            if pos == k {
                break;
            }
        }
        if vars.is_empty() {
            return Err(Error::Infeasible("no feasible rate atom for a source state".into()));
        }
        lp.add_constraint(vars.as_slice(), ComparisonOp::Eq, 1.0);
    }

    for a in 0..n {
        let out = p.graph.out_links(a);
        let step = prm.p_max / (grid.power_points - 1) as f64;
        let mut atoms: Vec<Vec<f64>> = vec![vec![]];
        for _ in out {
            atoms = atoms
                .into_iter()
                .flat_map(|v| (0..grid.power_points).map(move |j| [v.clone(), vec![j as f64 * step]].concat()))
                .filter(|v| v.iter().sum::<f64>() <= prm.p_max * (1.0 + 1e-12))
                .collect();
        }
        for (gains, &prob) in model.channels[a].gains.iter().zip(&model.channels[a].probs) {
            let mut vars = Vec::new();
            for atom in &atoms {
                let v = lp.add_var(0.0, (0.0, 1.0));
                vars.push((v, 1.0));
                energy[a].push((v, prob * atom.iter().sum::<f64>()));
                for ((&l, &pw), &s) in out.iter().zip(atom).zip(gains) {
                    let c = link_capacity(pw, s, prm.mu_max);
                    stab[a].push((v, -prob * c));
                    if let Some(to) = p.graph.to_agent(l).filter(|&t| t < n) {
                        stab[to].push((v, prob * c));
                    }
                }
            }
            lp.add_constraint(vars.as_slice(), ComparisonOp::Eq, 1.0);
        }
        for (&h, &prob) in model.harvest[a].levels.iter().zip(&model.harvest[a].probs) {
            let v = lp.add_var(0.0, (0.0, 1.0));
            energy[a].push((v, -prob * h));
        }
    }
    for a in 0..n {
        lp.add_constraint(stab[a].as_slice(), ComparisonOp::Le, 0.0);
        lp.add_constraint(energy[a].as_slice(), ComparisonOp::Eq, 0.0);
    }
    let sol = lp.solve().map_err(|e| Error::Lp(e.to_string()))?;
    Ok(sol.objective())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Link, Vertex};
    use crate::region::exchangeable_correlation;

    fn params(n_agents: usize) -> GlobalParams {
        GlobalParams {
            p_max: 2.0,
            r_max: 4.0,
            d_min: 1e-2,
            d_max: 1.0,
            h_max: vec![2.0; n_agents],
            mu_max: 5.0,
            b: 1.0,
            alpha: vec![1.0; n_agents],
            xi: 10.0,
        }
    }

    fn chain() -> NetworkGraph {
        NetworkGraph::new(
            2,
            &[0, 1],
            vec![Link::new(Vertex::Sensor(0), Vertex::Sensor(1)), Link::new(Vertex::Sensor(1), Vertex::Sink)],
        )
        .unwrap()
    }

    fn toy_model(omega: f64, harvest: &[f64]) -> DiscreteStateModel {
        DiscreteStateModel {
            sources: vec![
                SourceState { correlation: exchangeable_correlation(2, omega), prob: 0.6 },
                SourceState { correlation: exchangeable_correlation(2, omega / 2.0), prob: 0.4 },
            ],
            channels: vec![
                AgentChannel { gains: vec![vec![0.5], vec![2.0]], probs: vec![0.5, 0.5] },
                AgentChannel { gains: vec![vec![1.0], vec![3.0], vec![0.2]], probs: vec![0.3, 0.3, 0.4] },
            ],
            harvest: vec![
                AgentHarvest { levels: harvest.to_vec(), probs: vec![1.0 / harvest.len() as f64; harvest.len()] },
                AgentHarvest { levels: harvest.to_vec(), probs: vec![1.0 / harvest.len() as f64; harvest.len()] },
            ],
        }
    }

    #[test]
    fn zero_multipliers_give_floor_cost() {
        let g = chain();
        let prm = params(3);
        let costs = [DistortionCost::Linear; 2];
        let p = BoundProblem { graph: &g, params: &prm, costs: &costs };
        let model = toy_model(0.5, &[1.0, 2.0]);
        let m = MultiplierSet::zeros(&g, &model);
        assert!((dual_value(&p, &model, &m).unwrap() - 2.0 * prm.d_min).abs() < 1e-12);
    }

    #[test]
    fn harvest_term_uses_positive_energy_price() {
        let g = chain();
        let prm = params(3);
        let costs = [DistortionCost::Linear; 2];
        let p = BoundProblem { graph: &g, params: &prm, costs: &costs };
        let o = exchangeable_correlation(2, 0.0);
        let mut m = MultiplierSet { lambda: vec![vec![0.0; 3]], upsilon: vec![0.0; 2], chi: vec![0.0; 2] };
        let base = dual_per_state(&p, &o, &[1.0, 1.0], &[2.0, 0.0], &m).unwrap();
        m.chi[0] = 0.5;
        let with = dual_per_state(&p, &o, &[1.0, 1.0], &[2.0, 0.0], &m).unwrap();
        assert!((with - (base + 0.5 * prm.p_max * 0.0 - 0.5 * 2.0)).abs() < 1e-12);
    }

    fn grid_min(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
        (0..=n).map(|i| f(lo + (hi - lo) * i as f64 / n as f64)).fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn per_state_value_matches_grid_infimum() {
        use rand::{Rng, SeedableRng};
        let g = chain();
        let prm = params(3);
        let costs = [DistortionCost::Linear; 2];
        let p = BoundProblem { graph: &g, params: &prm, costs: &costs };
        let o = exchangeable_correlation(2, 0.6);
        let region = RateRegion::new(&o).unwrap();
        let kap = kappa_ln();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let m = MultiplierSet {
                lambda: vec![(0..3).map(|_| rng.random_range(0.0..2.0)).collect()],
                upsilon: (0..2).map(|_| rng.random_range(0.0..2.0)).collect(),
                chi: (0..2).map(|_| rng.random_range(-1.0..1.0)).collect(),
            };
            let gains = [rng.random_range(0.1..3.0), rng.random_range(0.1..3.0)];
            let harvest = [rng.random_range(0.0..2.0), rng.random_range(0.0..2.0)];
            let exact = dual_per_state(&p, &o, &gains, &harvest, &m).unwrap();

            let lam = &m.lambda[0];
            let mut oracle: f64 = lam.iter().zip(region.entropies()).map(|(l, g)| l * g).sum();
            let price = [lam[0] + lam[2], lam[1] + lam[2]];
            for n in 0..2 {
                oracle += grid_min(|d| d - kap * price[n] * d.ln(), prm.d_min, prm.d_max, 20_000);
                let coeff = -price[n] + m.upsilon[n] / prm.b + m.chi[n] * prm.alpha[n];
                oracle += grid_min(|r| coeff * r, 0.0, prm.r_max, 20);
                oracle += grid_min(|h| -m.chi[n] * h, 0.0, harvest[n], 20);
            }
            let w = [m.upsilon[0] - m.upsilon[1], m.upsilon[1]];
            for n in 0..2 {
                oracle += grid_min(
                    |pw| -w[n] * link_capacity(pw, gains[n], prm.mu_max) + m.chi[n] * pw,
                    0.0,
                    prm.p_max,
                    20_000,
                );
            }
            assert!(exact <= oracle + 1e-9, "{exact} > {oracle}");
            assert!(oracle - exact < 1e-3, "{exact} vs {oracle}");
        }
    }

    #[test]
    fn single_state_model_equals_per_state_value() {
        let g = chain();
        let prm = params(3);
        let costs = [DistortionCost::Linear; 2];
        let p = BoundProblem { graph: &g, params: &prm, costs: &costs };
        let o = exchangeable_correlation(2, 0.3);
        let model = DiscreteStateModel {
            sources: vec![SourceState { correlation: o.clone(), prob: 1.0 }],
            channels: vec![
                AgentChannel { gains: vec![vec![1.5]], probs: vec![1.0] },
                AgentChannel { gains: vec![vec![0.7]], probs: vec![1.0] },
            ],
            harvest: vec![
                AgentHarvest { levels: vec![1.0], probs: vec![1.0] },
                AgentHarvest { levels: vec![0.5], probs: vec![1.0] },
            ],
        };
        let m = MultiplierSet { lambda: vec![vec![0.3, 0.2, 0.9]], upsilon: vec![0.8, 0.4], chi: vec![0.2, -0.1] };
        let a = dual_value(&p, &model, &m).unwrap();
        let b = dual_per_state(&p, &o, &[1.5, 0.7], &[1.0, 0.5], &m).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn ascent_is_monotone_and_below_direct_solve() {
        let g = chain();
        let prm = params(3);
        let costs = [DistortionCost::Linear; 2];
        let p = BoundProblem { graph: &g, params: &prm, costs: &costs };
        for omega in [0.0, 0.5, 0.9] {
            let model = toy_model(omega, &[0.5, 1.5]);
            let lb = maximize_dual(&p, &model, 3000, 0.5).unwrap();
            assert!(lb.history.windows(2).all(|w| w[1] >= w[0]));
            assert!(lb.lower_bound >= 2.0 * prm.d_min);
            let direct = direct_solve_small(&p, &model, DirectGrid::default()).unwrap();
            assert!(lb.lower_bound <= direct + 1e-9, "{} > {direct}", lb.lower_bound);
            assert!(direct - lb.lower_bound < 0.1 * direct, "{} vs {direct}", lb.lower_bound);
        }
    }

    #[test]
    fn zero_harvest_forces_maximum_distortion() {
        let g = chain();
        let prm = params(3);
        let costs = [DistortionCost::Linear; 2];
        let p = BoundProblem { graph: &g, params: &prm, costs: &costs };
        let model = toy_model(0.0, &[0.0]);
        let direct = direct_solve_small(&p, &model, DirectGrid::default()).unwrap();
        assert!((direct - 2.0 * prm.d_max).abs() < 1e-9);
        let lb = maximize_dual(&p, &model, 2000, 0.5).unwrap();
        assert!(lb.lower_bound <= direct + 1e-12);
    }

    #[test]
    fn abundant_energy_single_node_matches_analytic() {
        let g = NetworkGraph::new(1, &[0], vec![Link::new(Vertex::Sensor(0), Vertex::Sink)]).unwrap();
        let mut prm = params(2);
        prm.h_max = vec![100.0; 2];
        let costs = [DistortionCost::Linear];
        let p = BoundProblem { graph: &g, params: &prm, costs: &costs };
        let model = DiscreteStateModel {
            sources: vec![SourceState { correlation: DMatrix::identity(1, 1), prob: 1.0 }],
            channels: vec![AgentChannel { gains: vec![vec![1.0]], probs: vec![1.0] }],
            harvest: vec![AgentHarvest { levels: vec![100.0], probs: vec![1.0] }],
        };
        let r = (1.0 + prm.p_max).ln().min(prm.mu_max).min(prm.r_max) * prm.b;
        let analytic = (-r / kappa_ln()).exp().max(prm.d_min);
        let direct = direct_solve_small(&p, &model, DirectGrid::default()).unwrap();
        let lb = maximize_dual(&p, &model, 5000, 0.5).unwrap().lower_bound;
        assert!(lb <= analytic + 1e-9 && analytic <= direct + 1e-9, "{lb} {analytic} {direct}");
        assert!(analytic - lb < 2e-2 * analytic, "{lb} vs {analytic}");
        assert!(direct - analytic < 0.1 * analytic, "{direct} vs {analytic}");
    }

    #[test]
    fn corner_points_are_feasible_vertices() {
        let region = RateRegion::new(&exchangeable_correlation(3, 0.5)).unwrap();
        let d = [0.1, 0.2, 0.3];
        let corners = corner_rates(&region, &d, 100.0);
        assert_eq!(corners.len(), 6);
        for r in &corners {
            assert!(region.feasible(r, &d));
            let total: f64 = r.iter().sum();
            let full = region.rate_bound(7, &d).unwrap();
            assert!((total - full).abs() < 1e-9);
        }
    }

    #[test]
    fn quantile_model_shapes() {
        let g = NetworkGraph::relay_five(false);
        let prm = GlobalParams { h_max: vec![3.0; 6], alpha: vec![1.0; 6], ..params(6) };
        let o = exchangeable_correlation(3, 0.5);
        let m = DiscreteStateModel::quantile(&g, &prm, &o, 1.0, 10.0, 8, BinValue::Upper).unwrap();
        assert_eq!(m.channels[1].probs.len(), 64);
        assert_eq!(m.channels[0].probs.len(), 8);
        assert_eq!(m.channels[0].gains[7][0], 10.0);
        assert!((m.channels[0].gains[3][0] - 2f64.ln()).abs() < 1e-12);
        assert_eq!(m.harvest[0].levels[7], 3.0);
    }
}
