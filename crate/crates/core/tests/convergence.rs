use ehdsc_core::sim::{run, ExperimentConfig};

#[test]
fn default_run_cost_stabilizes() {
    let cfg = ExperimentConfig { v: 1000.0, omega: 0.5, slots: 20_000, lower_bound: false, ..Default::default() };
    let m = run(&cfg, cfg.seed, true).unwrap();
    assert_eq!(m.violations.total(), 0);
    let n = m.series.len();
    let mean = |from: usize| m.series[from..].iter().map(|r| r.cost).sum::<f64>() / (n - from) as f64;
    let (half, quarter) = (mean(n / 2), mean(3 * n / 4));
    assert!((quarter - half).abs() <= 0.05 * half, "last quarter {quarter} vs last half {half}");
}
