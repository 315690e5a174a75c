use std::path::PathBuf;

use anyhow::Context;

use rdskit_core::exec::{with_workers, Execution};
use rdskit_core::regime_sim::{sweep, write_sweep_csv, Regime, RegimeConfig, SweepRow};

use super::{check_output, write_output, RunSummary};

#[derive(Debug, Clone)]
pub struct SimulateOptions {
    pub output: Option<PathBuf>,
    pub force: bool,
    pub regimes: Vec<Regime>,
    pub n: usize,
    pub dim: usize,
    pub noises: Vec<f64>,
    pub clusters: usize,
    pub seed: u64,
    pub num_seeds: u64,
    pub workers: Option<usize>,
}

impl Default for SimulateOptions {
    fn default() -> Self {
        Self {
            output: None,
            force: false,
            regimes: Regime::ALL.to_vec(),
            n: 10,
            dim: 2,
            noises: vec![0.0],
            clusters: 2,
            seed: 0,
            num_seeds: 1,
            workers: None,
        }
    }
}

impl SimulateOptions {
    /// Regime × noise × seed grid, in that nesting order.
    pub fn configs(&self) -> Vec<RegimeConfig> {
        let mut out = Vec::new();
        for &regime in &self.regimes {
            for &noise in &self.noises {
                for s in 0..self.num_seeds {
                    out.push(
                        RegimeConfig::new(regime, self.n, self.dim, self.seed.wrapping_add(s))
                            .with_noise(noise)
                            .with_clusters(self.clusters),
                    );
                }
            }
        }
        out
    }
}

/// Writes the sweep CSV for the configured grid.
pub fn cmd_simulate(opts: &SimulateOptions) -> anyhow::Result<RunSummary> {
    check_output(opts.output.as_deref(), opts.force, &[])?;
    let configs = opts.configs();
    for cfg in &configs {
        cfg.validate()?;
    }
    let rows: Vec<SweepRow> = with_workers(opts.workers, || sweep(&configs, Execution::Parallel))
        .into_iter()
        .collect::<Result<_, _>>()?;
    let mut buf = Vec::new();
    write_sweep_csv(&rows, &mut buf).context("writing sweep CSV")?;
    write_output(opts.output.as_deref(), &buf)?;
    Ok(RunSummary {
        read: configs.len(),
        scored: rows.len(),
        ..Default::default()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_shape() {
        let opts = SimulateOptions {
            noises: vec![0.0, 0.1],
            num_seeds: 3,
            ..Default::default()
        };
        let configs = opts.configs();
        assert_eq!(configs.len(), 3 * 2 * 3);
        assert_eq!(configs[0].regime, Regime::Coherent);
        assert_eq!(configs[2].seed, 2);
        assert_eq!(configs[3].noise, 0.1);
    }

    #[test]
    fn three_regimes_three_rows() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("sweep.csv");
        let opts = SimulateOptions {
            output: Some(out.clone()),
            ..Default::default()
        };
        let summary = cmd_simulate(&opts).unwrap();
        assert_eq!(summary.scored, 3);
        let text = std::fs::read_to_string(&out).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("regime,n,dim,noise,clusters,seed,rds,rds_l2,eigen_embed,avg_cosine\n"));
        assert!(cmd_simulate(&opts).is_err());
    }

    #[test]
    fn infeasible_config_is_an_error() {
        let opts = SimulateOptions {
            regimes: vec![Regime::Opposing],
            clusters: 5,
            dim: 2,
            ..Default::default()
        };
        assert!(cmd_simulate(&opts).is_err());
    }
}
