//! Parameter sweeps and their tabular output.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Mode};
use super::{run, RunMetrics};
use crate::bound::{maximize_dual, BoundProblem, DiscreteStateModel};
use crate::error::Result;

/// Header of every experiment table.
pub const CSV_HEADER: &str = "sweep_param,value,F0,queue_max,queue_avg,lower_bound,B_over_V,violations,seed,slots";

/// One run of a sweep. Field order matches [`CSV_HEADER`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub sweep_param: String,
    pub value: f64,
    #[serde(rename = "F0")]
    pub f0: f64,
    pub queue_max: f64,
    pub queue_avg: f64,
    pub lower_bound: Option<f64>,
    #[serde(rename = "B_over_V")]
    pub b_over_v: f64,
    pub violations: u64,
    pub seed: u64,
    pub slots: u64,
}

impl Row {
    fn new(param: &str, value: f64, m: &RunMetrics, lower_bound: Option<f64>) -> Self {
        Self {
            sweep_param: param.to_string(),
            value,
            f0: m.f0,
            queue_max: m.queue_max,
            queue_avg: m.queue_avg,
            lower_bound,
            b_over_v: m.b_over_v,
            violations: m.violations.total(),
            seed: m.seed,
            slots: m.slots,
        }
    }
}

/// Mean and standard error over the replicas of one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub sweep_param: String,
    pub value: f64,
    pub replicas: usize,
    pub f0_mean: f64,
    pub f0_stderr: f64,
    pub queue_max_mean: f64,
    pub queue_max_stderr: f64,
    pub queue_avg_mean: f64,
    pub queue_avg_stderr: f64,
    pub lower_bound: Option<f64>,
    pub violations: u64,
}

fn mean_stderr(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (mean, 0.0);
    }
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Groups consecutive rows sharing a sweep parameter and value.
pub fn summarize(rows: &[Row]) -> Vec<Summary> {
    let mut out: Vec<Summary> = Vec::new();
    let mut start = 0;
    while start < rows.len() {
        let key = (&rows[start].sweep_param, rows[start].value);
        let end = start + rows[start..].iter().take_while(|r| (&r.sweep_param, r.value) == key).count();
        let group = &rows[start..end];
        let col = |f: fn(&Row) -> f64| mean_stderr(&group.iter().map(f).collect::<Vec<_>>());
        let (f0_mean, f0_stderr) = col(|r| r.f0);
        let (queue_max_mean, queue_max_stderr) = col(|r| r.queue_max);
        let (queue_avg_mean, queue_avg_stderr) = col(|r| r.queue_avg);
        out.push(Summary {
            sweep_param: key.0.clone(),
            value: key.1,
            replicas: group.len(),
            f0_mean,
            f0_stderr,
            queue_max_mean,
            queue_max_stderr,
            queue_avg_mean,
            queue_avg_stderr,
            lower_bound: group[0].lower_bound,
            violations: group.iter().map(|r| r.violations).sum(),
        });
        start = end;
    }
    out
}

/// Dual lower bound on the optimal cost for the quantile-discretized
/// version of a plain-mode configuration.
pub fn lower_bound(config: &ExperimentConfig) -> Result<f64> {
    let setup = config.setup()?;
    let model = DiscreteStateModel::quantile(
        &setup.graph,
        &setup.params,
        &setup.correlation,
        config.gain_scale,
        config.s_max,
        config.lb_bins,
        config.lb_bin_value,
    )?;
    let p = BoundProblem { graph: &setup.graph, params: &setup.params, costs: &setup.costs };
    Ok(maximize_dual(&p, &model, config.lb_iters, 0.5)?.lower_bound)
}

struct Point {
    param: &'static str,
    value: f64,
    config: ExperimentConfig,
}

fn execute(points: Vec<Point>) -> Result<Vec<Row>> {
    let bounds: Vec<Option<f64>> = points
        .par_iter()
        .map(|p| {
            if p.config.lower_bound && p.config.mode == Mode::Plain {
                lower_bound(&p.config).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, u64)> = points
        .iter()
        .enumerate()
        .flat_map(|(i, p)| (0..p.config.replicas as u64).map(move |r| (i, p.config.seed.wrapping_add(r))))
        .collect();
    let metrics: Vec<RunMetrics> =
        jobs.par_iter().map(|&(i, seed)| run(&points[i].config, seed, false)).collect::<Result<_>>()?;
    Ok(jobs
        .iter()
        .zip(&metrics)
        .map(|(&(i, _), m)| Row::new(points[i].param, points[i].value, m, bounds[i]))
        .collect())
}

/// Replicas of the configuration as given.
pub fn single(config: &ExperimentConfig) -> Result<Vec<Row>> {
    execute(vec![Point { param: "run", value: config.v, config: config.clone() }])
}

/// One run per `V` value and replica.
pub fn sweep_v(config: &ExperimentConfig, values: &[f64]) -> Result<Vec<Row>> {
    let points = values
        .iter()
        .map(|&v| Point { param: "V", value: v, config: ExperimentConfig { v, ..config.clone() } })
        .collect();
    execute(points)
}

/// One run per correlation value and replica.
pub fn sweep_omega(config: &ExperimentConfig, values: &[f64]) -> Result<Vec<Row>> {
    let points = values
        .iter()
        .map(|&omega| Point { param: "omega", value: omega, config: ExperimentConfig { omega, ..config.clone() } })
        .collect();
    execute(points)
}

/// For each correlation value, a side-information run followed by the
/// zero-side-rate baseline.
pub fn sweep_sideinfo(config: &ExperimentConfig, values: &[f64]) -> Result<Vec<Row>> {
    let points = values
        .iter()
        .flat_map(|&omega| {
            [("omega_sideinfo", Mode::SideInfo), ("omega_baseline", Mode::SideInfoBaseline)].map(|(param, mode)| {
                Point { param, value: omega, config: ExperimentConfig { omega, mode, ..config.clone() } }
            })
        })
        .collect();
    execute(points)
}
