mod args;
mod output;

use anyhow::Result;
use clap::Parser;
use ehdsc_core::sim::{self, Row, Summary};

use args::{Cli, Command};
use output::Manifest;

fn print_summaries(summaries: &[Summary]) {
    println!(
        "{:<16} {:>10} {:>4} {:>12} {:>10} {:>12} {:>12} {:>10} {:>5}",
        "param", "value", "n", "F0", "+-", "queue_max", "queue_avg", "LB", "viol"
    );
    for s in summaries {
        let lb = s.lower_bound.map_or("-".to_string(), |v| format!("{v:.5}"));
        println!(
            "{:<16} {:>10} {:>4} {:>12.6} {:>10.6} {:>12.2} {:>12.2} {:>10} {:>5}",
            s.sweep_param, s.value, s.replicas, s.f0_mean, s.f0_stderr, s.queue_max_mean, s.queue_avg_mean, lb, s.violations
        );
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let common = cli.command.common();
    let config = common.resolve()?;
    let name = cli.command.name();
    let mut manifest = Manifest::new(name, &config);
    let values: Vec<f64>;
    let rows: Option<Vec<Row>> = match &cli.command {
        Command::Run(_) => Some(sim::single(&config)?),
        Command::SweepV { values: v, .. } => {
            values = v.clone().unwrap_or_else(args::default_v_values);
            manifest.values = Some(&values);
            Some(sim::sweep_v(&config, &values)?)
        }
        Command::SweepOmega { values: v, .. } => {
            values = v.clone().unwrap_or_else(args::default_omega_values);
            manifest.values = Some(&values);
            Some(sim::sweep_omega(&config, &values)?)
        }
        Command::SweepSideinfo { values: v, .. } => {
            values = v.clone().unwrap_or_else(args::default_omega_values);
            manifest.values = Some(&values);
            Some(sim::sweep_sideinfo(&config, &values)?)
        }
        Command::LowerBound(_) => {
            let lb = sim::lower_bound(&config)?;
            println!("lower bound {lb:.6}");
            manifest.lower_bound = Some(lb);
            None
        }
    };
    if let Some(rows) = &rows {
        print_summaries(&sim::summarize(rows));
        let bad: u64 = rows.iter().map(|r| r.violations).sum();
        if bad > 0 {
            eprintln!("warning: {bad} invariant violations recorded");
        }
    }
    for path in output::emit(&common.out, name, rows.as_deref(), manifest)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}
