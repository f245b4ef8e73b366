//! Slot-loop simulation, metrics and experiment sweeps.

mod config;
mod experiment;

pub use config::{ExperimentConfig, Mode, Setup, SolverKind};
pub use experiment::{
    lower_bound, single, summarize, sweep_omega, sweep_sideinfo, sweep_v, Row, Summary, CSV_HEADER,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{NetworkGraph, SlotState};
use crate::policy::InvariantReport;

/// Draws i.i.d. slot states: exponential channel power gains clipped at
/// `s_max` and uniform harvest on `[0, H_max]` per active agent.
#[derive(Debug, Clone)]
pub struct StateGenerator {
    rng: ChaCha8Rng,
    gain_scale: f64,
    s_max: f64,
}

impl StateGenerator {
    pub fn new(seed: u64, gain_scale: f64, s_max: f64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), gain_scale, s_max }
    }

    pub fn gen_slot_state(&mut self, setup: &Setup) -> SlotState {
        let g = &setup.graph;
        let gains = (0..g.links().len())
            .map(|_| {
                let e: f64 = self.rng.sample(Exp1);
                (self.gain_scale * e).min(self.s_max)
            })
            .collect();
        let harvest = (0..g.num_agents())
            .map(|a| if a < g.active_agents() { self.rng.random::<f64>() * setup.params.h_max[a] } else { 0.0 })
            .collect();
        SlotState { gains, correlation: setup.correlation.clone(), harvest }
    }
}

/// One recorded slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub backlog: Vec<f64>,
    pub battery: Vec<f64>,
    pub rates: Vec<f64>,
    pub distortions: Vec<f64>,
    pub powers: Vec<f64>,
    pub side_rate: f64,
    pub cost: f64,
}

/// Aggregates of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub slots: u64,
    /// Time-average distortion cost after burn-in.
    pub f0: f64,
    /// Largest network queue size over the run.
    pub queue_max: f64,
    /// Average network queue size after burn-in.
    pub queue_avg: f64,
    /// Average side-information rate after burn-in.
    pub side_rate_avg: f64,
    pub generated: f64,
    pub delivered: f64,
    pub b_over_v: f64,
    pub violations: InvariantReport,
    /// Per-slot records, kept only when requested.
    pub series: Vec<SlotRecord>,
}

/// Network queue size: the sum of sensor backlogs.
pub fn network_queue(graph: &NetworkGraph, backlog: &[f64]) -> f64 {
    backlog[..graph.num_sensors()].iter().sum()
}

/// Runs one seed of a configuration.
pub fn run(config: &ExperimentConfig, seed: u64, record: bool) -> Result<RunMetrics> {
    let setup = config.setup()?;
    let mut controller = config.controller(&setup)?;
    let mut gen = StateGenerator::new(seed, config.gain_scale, config.s_max);
    let mut q = controller.initial_state(config.initial_battery);
    let graph = setup.graph.clone();
    let burn = (config.burn_in * config.slots as f64).floor() as u64;
    let mut m = RunMetrics {
        seed,
        slots: config.slots,
        f0: 0.0,
        queue_max: 0.0,
        queue_avg: 0.0,
        side_rate_avg: 0.0,
        generated: 0.0,
        delivered: 0.0,
        b_over_v: controller.config().b.b / config.v,
        violations: InvariantReport::default(),
        series: Vec::new(),
    };
    for t in 0..config.slots {
        let s = gen.gen_slot_state(&setup);
        let out = controller.step(t, &q, &s)?;
        for v in out.violations {
            m.violations.record(v);
        }
        let queue = network_queue(&graph, &out.next.backlog);
        m.queue_max = m.queue_max.max(queue);
        m.generated += out.decision.rates.iter().sum::<f64>() / setup.params.b;
        m.delivered += out.delivered;
        if t >= burn {
            m.f0 += out.cost;
            m.queue_avg += queue;
            m.side_rate_avg += out.decision.side_rate;
        }
        if record {
            m.series.push(SlotRecord {
                backlog: out.next.backlog.clone(),
                battery: out.next.battery.clone(),
                rates: out.decision.rates.clone(),
                distortions: out.decision.distortions.clone(),
                powers: out.decision.powers.clone(),
                side_rate: out.decision.side_rate,
                cost: out.cost,
            });
        }
        q = out.next;
    }
    let kept = config.slots.saturating_sub(burn);
    if kept > 0 {
        m.f0 /= kept as f64;
        m.queue_avg /= kept as f64;
        m.side_rate_avg /= kept as f64;
    }
    Ok(m)
}

/// Runs every replica (`seed`, `seed + 1`, ...) in parallel, in seed order.
pub fn run_replicas(config: &ExperimentConfig) -> Result<Vec<RunMetrics>> {
    use rayon::prelude::*;
    (0..config.replicas as u64)
        .into_par_iter()
        .map(|r| run(config, config.seed.wrapping_add(r), false))
        .collect()
}
