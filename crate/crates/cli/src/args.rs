//! Command-line flags and their resolution against a config file.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use ehdsc_core::bound::BinValue;
use ehdsc_core::sim::{ExperimentConfig, Mode, SolverKind};
use serde::de::DeserializeOwned;

#[derive(Debug, Parser)]
#[command(name = "ehdsc", version, about = "Energy-harvesting distributed source coding experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the configuration as given, once per replica.
    Run(Common),
    /// Sweep the penalty weight V.
    SweepV {
        #[command(flatten)]
        common: Common,
        /// Comma-separated V values. Defaults to 1, 500, 1000, ..., 10000.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Sweep the source correlation.
    SweepOmega {
        #[command(flatten)]
        common: Common,
        /// Comma-separated correlation values. Defaults to 0, 0.1, ..., 0.9, 0.99.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Compare side-information acquisition against the zero-side-rate baseline.
    SweepSideinfo {
        #[command(flatten)]
        common: Common,
        /// Comma-separated correlation values. Defaults to 0, 0.1, ..., 0.9, 0.99.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Compute the dual lower bound for the discretized configuration.
    LowerBound(Common),
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Command::Run(c) | Command::LowerBound(c) => c,
            Command::SweepV { common, .. } | Command::SweepOmega { common, .. } | Command::SweepSideinfo { common, .. } => {
                common
            }
        }
    }

    /// Base name of the files written by this command.
    pub fn name(&self) -> &'static str {
        match self {
            Command::Run(_) => "run",
            Command::SweepV { .. } => "sweep_v",
            Command::SweepOmega { .. } => "sweep_omega",
            Command::SweepSideinfo { .. } => "sweep_sideinfo",
            Command::LowerBound(_) => "lower_bound",
        }
    }
}

fn parse_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_"))).map_err(|e| e.to_string())
}

/// Flags shared by every subcommand. Each config flag overrides the value
/// read from `--config`.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// TOML file with any subset of the configuration keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,

    #[arg(long)]
    pub num_sensors: Option<usize>,
    /// Comma-separated one-based labels of measuring sensors.
    #[arg(long, value_delimiter = ',')]
    pub measuring: Option<Vec<usize>>,
    /// Comma-separated links such as `1->4,4->d`.
    #[arg(long, value_delimiter = ',')]
    pub links: Option<Vec<String>>,
    /// plain, side_info or side_info_baseline.
    #[arg(long, value_parser = parse_enum::<Mode>)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub omega: Option<f64>,
    #[arg(long)]
    pub v: Option<f64>,
    #[arg(long)]
    pub slots: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replicas: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub h_max: Option<f64>,
    #[arg(long)]
    pub d_min: Option<f64>,
    #[arg(long)]
    pub d_max: Option<f64>,
    #[arg(long)]
    pub b: Option<f64>,
    #[arg(long)]
    pub r_max: Option<f64>,
    #[arg(long)]
    pub p_max: Option<f64>,
    #[arg(long)]
    pub mu_max: Option<f64>,
    #[arg(long)]
    pub gain_scale: Option<f64>,
    #[arg(long)]
    pub s_max: Option<f64>,
    #[arg(long)]
    pub alpha_d: Option<f64>,
    #[arg(long)]
    pub h_max_d: Option<f64>,
    /// central or distributed.
    #[arg(long, value_parser = parse_enum::<SolverKind>)]
    pub rd_solver: Option<SolverKind>,
    #[arg(long)]
    pub distributed_iters: Option<usize>,
    #[arg(long)]
    pub strict: Option<bool>,
    #[arg(long)]
    pub initial_battery: Option<f64>,
    #[arg(long)]
    pub lower_bound: Option<bool>,
    #[arg(long)]
    pub lb_bins: Option<usize>,
    #[arg(long)]
    pub lb_iters: Option<usize>,
    /// upper or median.
    #[arg(long, value_parser = parse_enum::<BinValue>)]
    pub lb_bin_value: Option<BinValue>,
}

/// Reads a TOML configuration file.
pub fn read_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

macro_rules! overlay {
    ($cfg:ident, $flags:ident; $($field:ident),* ; $($opt:ident),*) => {
        $(if let Some(v) = &$flags.$field { $cfg.$field = v.clone(); })*
        $(if let Some(v) = $flags.$opt { $cfg.$opt = Some(v); })*
    };
}

impl Common {
    /// File values, then flag overrides, then validation.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => read_config(path)?,
            None => ExperimentConfig::default(),
        };
        overlay!(cfg, self;
            num_sensors, measuring, links, mode, omega, v, slots, seed, replicas, burn_in, alpha, h_max,
            d_min, d_max, b, gain_scale, s_max, alpha_d, h_max_d, rd_solver, distributed_iters, strict,
            initial_battery, lower_bound, lb_bins, lb_iters, lb_bin_value;
            r_max, p_max, mu_max);
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn default_v_values() -> Vec<f64> {
    std::iter::once(1.0).chain((1..=20).map(|k| 500.0 * k as f64)).collect()
}

pub fn default_omega_values() -> Vec<f64> {
    (0..10).map(|k| k as f64 / 10.0).chain(std::iter::once(0.99)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "v = 50.0\nslots = 10\nmode = \"side_info\"\n").unwrap();
        let cli = Cli::try_parse_from(["ehdsc", "run", "--config", path.to_str().unwrap(), "--v", "7"]).unwrap();
        let cfg = cli.command.common().resolve().unwrap();
        assert_eq!(cfg.v, 7.0);
        assert_eq!(cfg.slots, 10);
        assert_eq!(cfg.mode, Mode::SideInfo);
        assert_eq!(cfg.omega, 0.5);
    }

    #[test]
    fn enum_and_list_flags() {
        let cli = Cli::try_parse_from([
            "ehdsc",
            "sweep-v",
            "--values",
            "1,10",
            "--rd-solver",
            "distributed",
            "--lb-bin-value",
            "median",
            "--links",
            "1->d,2->d",
            "--num-sensors",
            "2",
            "--measuring",
            "1,2",
            "--r-max",
            "4",
        ])
        .unwrap();
        let cfg = cli.command.common().resolve().unwrap();
        assert_eq!(cfg.rd_solver, SolverKind::Distributed);
        assert_eq!(cfg.lb_bin_value, BinValue::Median);
        assert_eq!(cfg.links, vec!["1->d", "2->d"]);
        assert_eq!(cfg.r_max, Some(4.0));
        match cli.command {
            Command::SweepV { values, .. } => assert_eq!(values, Some(vec![1.0, 10.0])),
            _ => unreachable!(),
        }
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(Cli::try_parse_from(["ehdsc", "run", "--mode", "bogus"]).is_err());
        let cli = Cli::try_parse_from(["ehdsc", "run", "--omega", "1.5"]).unwrap();
        assert!(cli.command.common().resolve().is_err());
    }

    #[test]
    fn default_grids() {
        let v = default_v_values();
        assert_eq!((v.len(), v[0], v[1], v[20]), (21, 1.0, 500.0, 10_000.0));
        let w = default_omega_values();
        assert_eq!((w.len(), w[9], w[10]), (11, 0.9, 0.99));
    }
}
