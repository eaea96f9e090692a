//! Monte-Carlo sweeps: every (sweep value, seed) scenario is generated once
//! and solved by each requested scheme, so schemes see common random numbers.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Instance, SchemeId};
use crate::error::{Error, Result};
use crate::scenario::ScenarioConfig;

/// LoS probability bands, addressed by index in a `los` sweep.
pub const LOS_BANDS: [(&str, [f64; 2]); 4] = [
    ("very-low", [0.0, 0.3]),
    ("low", [0.3, 0.5]),
    ("medium", [0.5, 0.8]),
    ("high", [0.8, 1.0]),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    /// User count.
    Users,
    /// Minimum rate in bit/s.
    Rmin,
    /// Index into [`LOS_BANDS`].
    Los,
    /// Multiplier on every AP's circuit power.
    Circuit,
}

impl SweepParam {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepParam::Users => "users",
            SweepParam::Rmin => "rmin",
            SweepParam::Los => "los",
            SweepParam::Circuit => "circuit",
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            SweepParam::Users,
            SweepParam::Rmin,
            SweepParam::Los,
            SweepParam::Circuit,
        ]
        .into_iter()
        .find(|p| p.as_str() == s)
        .ok_or_else(|| Error::InvalidConfig(format!("unknown sweep parameter '{s}'")))
    }
}

fn whole(value: f64, what: &str) -> Result<usize> {
    if value >= 0.0 && value.fract() == 0.0 && value.is_finite() {
        Ok(value as usize)
    } else {
        Err(Error::InvalidConfig(format!(
            "{what} must be a non-negative integer, got {value}"
        )))
    }
}

/// `base` with one parameter set to `value`.
pub fn apply_sweep(base: &ScenarioConfig, param: SweepParam, value: f64) -> Result<ScenarioConfig> {
    let mut cfg = base.clone();
    match param {
        SweepParam::Users => cfg.user_count = whole(value, "user count")?,
        SweepParam::Rmin => cfg.r_min = value,
        SweepParam::Los => {
            let band = whole(value, "LoS band index")?;
            let (_, range) = LOS_BANDS.get(band).ok_or_else(|| {
                Error::InvalidConfig(format!("LoS band index {band} out of range 0..4"))
            })?;
            cfg.los_prob_range = *range;
        }
        SweepParam::Circuit => {
            cfg.circuit_macro *= value;
            cfg.circuit_pico *= value;
            cfg.circuit_vlc *= value;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// One CSV row: one scheme on one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub sweep_param: SweepParam,
    pub sweep_value: f64,
    pub scheme: SchemeId,
    pub seed: u64,
    pub sum_rate_bps: f64,
    pub total_power_w: f64,
    pub ee: f64,
    pub outage_count: usize,
    pub iterations: usize,
    pub wall_time_s: f64,
}

/// Seed-averaged metrics of one (sweep value, scheme) cell; `se_*` are
/// standard errors of the mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub sweep_value: f64,
    pub scheme: SchemeId,
    pub runs: usize,
    pub mean_ee: f64,
    pub se_ee: f64,
    pub mean_sum_rate: f64,
    pub se_sum_rate: f64,
    pub mean_total_power: f64,
    pub se_total_power: f64,
    pub mean_outage: f64,
    pub se_outage: f64,
    pub mean_iterations: f64,
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentTable {
    pub param: SweepParam,
    /// Ordered by sweep value, then scheme, then seed.
    pub rows: Vec<ExperimentRow>,
    pub cells: Vec<CellSummary>,
}

impl ExperimentTable {
    pub fn cell(&self, value: f64, scheme: SchemeId) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.sweep_value == value && c.scheme == scheme)
    }

    /// Per-run rows with the fixed column set.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        if self.rows.is_empty() {
            w.write_record([
                "sweep_param",
                "sweep_value",
                "scheme",
                "seed",
                "sum_rate_bps",
                "total_power_w",
                "ee",
                "outage_count",
                "iterations",
                "wall_time_s",
            ])?;
        }
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for cell in &self.cells {
            w.serialize(cell)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs the Cartesian product of values, schemes and seeds. Scenarios run in
/// parallel; rows come back in a fixed order regardless of scheduling.
pub fn run_experiment(
    base: &ScenarioConfig,
    param: SweepParam,
    values: &[f64],
    schemes: &[SchemeId],
    seeds: &[u64],
) -> Result<ExperimentTable> {
    let jobs: Vec<(usize, u64)> = (0..values.len())
        .flat_map(|v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let results: Vec<Result<Vec<ExperimentRow>>> = jobs
        .par_iter()
        .map(|&(v, seed)| {
            let mut cfg = apply_sweep(base, param, values[v])?;
            cfg.seed = seed;
            let instance = Instance::generate(cfg)?;
            schemes
                .iter()
                .map(|&scheme| {
                    let r = instance.run(scheme)?;
                    Ok(ExperimentRow {
                        sweep_param: param,
                        sweep_value: values[v],
                        scheme,
                        seed,
                        sum_rate_bps: r.evaluated.sum_rate,
                        total_power_w: r.evaluated.total_power,
                        ee: r.evaluated.ee,
                        outage_count: r.outage_count,
                        iterations: r.iterations_used,
                        wall_time_s: r.wall_time_s,
                    })
                })
                .collect()
        })
        .collect();

    let mut by_job = Vec::with_capacity(results.len());
    for r in results {
        by_job.push(r?);
    }
    let mut rows = Vec::with_capacity(jobs.len() * schemes.len());
    let mut cells = Vec::new();
    for (v, &value) in values.iter().enumerate() {
        for si in 0..schemes.len() {
            let cell: Vec<ExperimentRow> = jobs
                .iter()
                .zip(&by_job)
                .filter(|((jv, _), _)| *jv == v)
                .map(|(_, job_rows)| job_rows[si].clone())
                .collect();
            if cell.is_empty() {
                continue;
            }
            let metric =
                |f: fn(&ExperimentRow) -> f64| mean_se(&cell.iter().map(f).collect::<Vec<_>>());
            let (mean_ee, se_ee) = metric(|r| r.ee);
            let (mean_sum_rate, se_sum_rate) = metric(|r| r.sum_rate_bps);
            let (mean_total_power, se_total_power) = metric(|r| r.total_power_w);
            let (mean_outage, se_outage) = metric(|r| r.outage_count as f64);
            let (mean_iterations, _) = metric(|r| r.iterations as f64);
            cells.push(CellSummary {
                sweep_value: value,
                scheme: schemes[si],
                runs: cell.len(),
                mean_ee,
                se_ee,
                mean_sum_rate,
                se_sum_rate,
                mean_total_power,
                se_total_power,
                mean_outage,
                se_outage,
                mean_iterations,
            });
            rows.extend(cell);
        }
    }
    Ok(ExperimentTable { param, rows, cells })
}
