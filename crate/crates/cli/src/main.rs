//! `rfvlc-alloc`: run one allocation scheme, sweep a scenario parameter, or
//! compare the proposed scheme with the exhaustive oracle.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::{info, warn};
use rfvlc_core::matching::write_matching_csv;
use rfvlc_core::orchestrator::{
    run_exhaustive, run_experiment, tiny_config, Instance, SchemeId, SweepParam,
};
use rfvlc_core::scenario::ScenarioConfig;
use rfvlc_core::Error;

#[derive(Parser)]
#[command(
    name = "rfvlc-alloc",
    version,
    about = "Energy-efficient RF/VLC resource allocation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scheme on one scenario.
    Run {
        /// Scenario JSON with ScenarioConfig field names.
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        scheme: SchemeId,
        /// Overrides the scenario file's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write every channel gain as CSV.
        #[arg(long)]
        dump_channels: Option<PathBuf>,
        /// Write the final AP matching as CSV.
        #[arg(long)]
        dump_matching: Option<PathBuf>,
        /// Write the Pareto frontier of the final power allocation as CSV.
        #[arg(long)]
        dump_pareto: Option<PathBuf>,
    },
    /// Monte-Carlo sweep over one parameter.
    Sweep {
        #[arg(long)]
        param: SweepParam,
        /// Comma-separated values: user counts, r_min in bit/s, LoS band
        /// indices 0-3, or circuit power multipliers.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        schemes: Vec<SchemeId>,
        /// `a..b` (exclusive), `a..=b`, `a-b` (inclusive) or a comma list.
        #[arg(long)]
        seeds: String,
        #[arg(long)]
        out: PathBuf,
        /// Base scenario; the desk default when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Also write per-cell means and standard errors.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Exhaustive oracle against the proposed iterative scheme.
    Oracle {
        /// Power levels per subchannel, including zero.
        #[arg(long)]
        levels: usize,
        /// Scenario to search; a three-user, three-subchannel instance with one
        /// AP per tier when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    let spec = spec.trim();
    let range = |a: &str, b: &str, inclusive: bool| -> Result<Vec<u64>> {
        let lo: u64 = a.trim().parse().context("seed range start")?;
        let hi: u64 = b.trim().parse().context("seed range end")?;
        Ok(if inclusive {
            (lo..=hi).collect()
        } else {
            (lo..hi).collect()
        })
    };
    if let Some((a, b)) = spec.split_once("..=") {
        range(a, b, true)
    } else if let Some((a, b)) = spec.split_once("..") {
        range(a, b, false)
    } else if let Some((a, b)) = spec.split_once('-') {
        range(a, b, true)
    } else {
        spec.split(',')
            .map(|s| s.trim().parse().with_context(|| format!("bad seed '{s}'")))
            .collect()
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ScenarioConfig> {
    let mut cfg = ScenarioConfig::load(path)
        .with_context(|| format!("loading scenario {}", path.display()))?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            scenario,
            scheme,
            seed,
            dump_channels,
            dump_matching,
            dump_pareto,
        } => {
            let cfg = load_config(&scenario, seed)?;
            let instance = Instance::generate(cfg)?;
            if let Some(path) = &dump_channels {
                instance.channel.write_csv(create(path)?)?;
            }
            let result = instance.run(scheme)?;
            if let Some(path) = &dump_matching {
                match (&result.matching, &result.preferences) {
                    (Some(m), Some(p)) => write_matching_csv(m, p, create(path)?)?,
                    _ => warn!("{scheme} has no matching stage; --dump-matching skipped"),
                }
            }
            if let Some(path) = &dump_pareto {
                match &result.frontier {
                    Some(f) => f.write_csv(create(path)?)?,
                    None => warn!("{scheme} has no Pareto sweep; --dump-pareto skipped"),
                }
            }
            let e = &result.evaluated;
            println!("scheme {}", result.scheme);
            println!("seed {}", result.seed);
            println!("sum_rate_bps {}", e.sum_rate);
            println!("transmit_power_w {}", e.transmit_power);
            println!("total_power_w {}", e.total_power);
            println!("ee {}", e.ee);
            println!("outage_count {}", result.outage_count);
            println!("iterations {}", result.iterations_used);
            println!("wall_time_s {}", result.wall_time_s);
            if !result.dropped_users.is_empty() {
                println!("qos_dropped_users {:?}", result.dropped_users);
            }
        }
        Command::Sweep {
            param,
            values,
            schemes,
            seeds,
            out,
            scenario,
            summary,
        } => {
            let base = match &scenario {
                Some(path) => load_config(path, None)?,
                None => ScenarioConfig::default(),
            };
            let seeds = parse_seeds(&seeds)?;
            info!(
                "sweeping {param} over {} values, {} schemes, {} seeds",
                values.len(),
                schemes.len(),
                seeds.len()
            );
            let table = run_experiment(&base, param, &values, &schemes, &seeds)?;
            table.write_csv(create(&out)?)?;
            if let Some(path) = &summary {
                table.write_summary_csv(create(path)?)?;
            }
            for cell in &table.cells {
                println!(
                    "{param}={} {}: mean EE {:.4e} (se {:.2e}), mean outage {:.2}",
                    cell.sweep_value, cell.scheme, cell.mean_ee, cell.se_ee, cell.mean_outage
                );
            }
        }
        Command::Oracle {
            levels,
            scenario,
            seed,
        } => {
            let cfg = match &scenario {
                Some(path) => load_config(path, seed)?,
                None => tiny_config(seed.unwrap_or(0), 3, 3),
            };
            let instance = Instance::generate(cfg)?;
            let oracle = run_exhaustive(&instance.config, &instance.channel, levels)?;
            let proposed = instance.run(SchemeId::ProposedIterative)?;
            if oracle.evaluated.ee <= 0.0 {
                bail!("oracle found no configuration with positive EE");
            }
            println!("levels {levels}");
            println!("oracle_ee {}", oracle.evaluated.ee);
            println!("proposed_ee {}", proposed.evaluated.ee);
            println!("ratio {}", proposed.evaluated.ee / oracle.evaluated.ee);
            println!("oracle_wall_time_s {}", oracle.wall_time_s);
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::ConstraintViolation { .. }) => 2,
        Some(Error::Refused(_)) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_ranges() {
        assert_eq!(parse_seeds("0..3").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_seeds("2..=4").unwrap(), vec![2, 3, 4]);
        assert_eq!(parse_seeds("5-7").unwrap(), vec![5, 6, 7]);
        assert_eq!(parse_seeds("1,4,9").unwrap(), vec![1, 4, 9]);
        assert_eq!(parse_seeds("8").unwrap(), vec![8]);
        assert!(parse_seeds("a..b").is_err());
    }
}
