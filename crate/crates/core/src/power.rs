//! Max-weight power allocation with battery-perturbed power prices.
//!
//! Each transmitting agent solves
//!
//! ```text
//! max  sum_m W_m C(p_m, S_m) - c * sum_m p_m   s.t.  sum_m p_m <= P_max, p >= 0
//! ```
//!
//! with `c = theta - E`. Under the interference-free capacity this separates
//! per agent and is solved exactly by water-filling on the budget multiplier.

use crate::model::{exp, link_capacity, GlobalParams, NetworkGraph, LOG_BASE};

/// Tolerance on the budget multiplier.
pub const MULTIPLIER_TOL: f64 = 1e-9;
/// Maximum bisection steps on the budget multiplier.
pub const MAX_BISECTION: usize = 200;

/// `W_{n,m} = max(U_n - U_m - delta, 0)` for every link. The receiver's backlog
/// is read from `backlog`; in plain mode the sink entry is zero, and the
/// collector always counts as empty.
pub fn link_weights(graph: &NetworkGraph, backlog: &[f64], delta: f64) -> Vec<f64> {
    (0..graph.links().len())
        .map(|l| {
            let from = backlog[graph.from_agent(l)];
            let to = match graph.to_agent(l) {
                Some(a) if a == graph.sink_agent() && !graph.is_side_info() => 0.0,
                Some(a) => backlog[a],
                None => 0.0,
            };
            (from - to - delta).max(0.0)
        })
        .collect()
}

/// Objective of one agent's allocation.
pub fn allocation_value(weights: &[f64], gains: &[f64], powers: &[f64], price: f64, mu_max: f64) -> f64 {
    weights
        .iter()
        .zip(gains)
        .zip(powers)
        .map(|((&w, &s), &p)| w * link_capacity(p, s, mu_max) - price * p)
        .sum()
}

/// Solves one agent's allocation problem over its outgoing links.
///
/// `price` is the linear power cost. A zero price still caps spending at the
/// budget; a negative price (only reached by the dual bound) makes the whole
/// budget worth spending.
pub fn waterfill(weights: &[f64], gains: &[f64], price: f64, budget: f64, mu_max: f64) -> Vec<f64> {
    let k = weights.len();
    let mut p = vec![0.0; k];
    if k == 0 || budget <= 0.0 {
        return p;
    }
    let scale = LOG_BASE.ln();
    // Work with natural-log utilities: w C(p) = (w / ln base) ln(1 + p s).
    let w: Vec<f64> = weights.iter().map(|&x| x / scale).collect();
    let caps: Vec<f64> = gains
        .iter()
        .map(|&s| if s > 0.0 { (exp(mu_max) - 1.0) / s } else { 0.0 })
        .collect();
    let active: Vec<usize> = (0..k).filter(|&m| w[m] > 0.0 && gains[m] > 0.0).collect();
    let c = price.max(0.0);
    let level = |nu: f64, m: usize| -> f64 {
        let denom = nu + c;
        if denom <= 0.0 {
            return caps[m];
        }
        (w[m] / denom - 1.0 / gains[m]).clamp(0.0, caps[m])
    };
    let total = |nu: f64| -> f64 { active.iter().map(|&m| level(nu, m)).sum() };
    let nu = if active.is_empty() || total(0.0) <= budget {
        0.0
    } else {
        let mut lo = 0.0;
        let mut hi = active.iter().map(|&m| w[m] * gains[m]).fold(0.0, f64::max);
        for _ in 0..MAX_BISECTION {
            if hi - lo <= MULTIPLIER_TOL * hi.max(1.0) * 1e-3 {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if total(mid) > budget {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    };
    for &m in &active {
        p[m] = level(nu, m);
    }
    if price < 0.0 {
        let spent: f64 = p.iter().sum();
        let leftover = budget - spent;
        if leftover > 0.0 {
            p[0] += leftover;
        }
    }
    p
}

/// Per-link powers for every transmitting agent.
///
/// `battery` and `theta` are per agent; the power price of agent `n` is
/// `theta_n - E_n`. In side-information mode the sink's link to the collector
/// is allocated the same way as any sensor link.
pub fn allocate(
    graph: &NetworkGraph,
    params: &GlobalParams,
    weights: &[f64],
    gains: &[f64],
    battery: &[f64],
    theta: &[f64],
) -> Vec<f64> {
    let mut powers = vec![0.0; graph.links().len()];
    for agent in 0..graph.active_agents() {
        let out = graph.out_links(agent);
        if out.is_empty() {
            continue;
        }
        let w: Vec<f64> = out.iter().map(|&l| weights[l]).collect();
        let s: Vec<f64> = out.iter().map(|&l| gains[l]).collect();
        let price = (theta[agent] - battery[agent]).max(0.0);
        let p = waterfill(&w, &s, price, params.p_max, params.mu_max);
        for (&l, v) in out.iter().zip(p) {
            powers[l] = v;
        }
    }
    powers
}
