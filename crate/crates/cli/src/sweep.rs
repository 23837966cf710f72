use anyhow::{bail, Result};
use balfmm::engine::FmmConfig;
use serde::Serialize;

use crate::args::{SweepArgs, SweepParam};
use crate::run::{argmin, execute, load_data, mean, DatasetInfo};

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    /// Critical-path CPU seconds (slowest rank) per repeat.
    pub times: Vec<f64>,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Mean, min and max divided by the smallest mean of the sweep.
    pub normalized: [f64; 3],
    pub order: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub param: SweepParam,
    pub points: Vec<SweepPoint>,
    pub optimum: f64,
    /// The fastest value is neither the first nor the last.
    pub interior_minimum: bool,
    /// Largest `|mean - average of means| / average of means`.
    pub spread: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub command: &'static str,
    pub dataset: DatasetInfo,
    pub base: FmmConfig,
    pub repeats: usize,
    pub sweeps: Vec<SweepResult>,
}

fn with_value(base: &FmmConfig, param: SweepParam, value: f64) -> FmmConfig {
    match param {
        SweepParam::Theta => FmmConfig { theta: value, ..*base },
        SweepParam::Levels => FmmConfig { levels: value as usize, ..*base },
        SweepParam::Eta => FmmConfig { eta: value, ..*base },
    }
}

pub fn sweep(args: &SweepArgs) -> Result<Option<SweepReport>> {
    if args.repeats == 0 {
        bail!("--repeats must be at least 1");
    }
    let (sources, targets, dataset) = load_data(&args.data)?;
    let base = args.fmm.config();
    let params =
        if args.param.is_empty() { vec![SweepParam::Theta, SweepParam::Levels, SweepParam::Eta] } else { args.param.clone() };
    let mut sweeps = Vec::new();
    for param in params {
        let values: Vec<f64> = match param {
            SweepParam::Theta => args.theta_values.clone(),
            SweepParam::Levels => args.level_values.iter().map(|&l| l as f64).collect(),
            SweepParam::Eta => args.eta_values.clone(),
        };
        if values.is_empty() {
            bail!("empty value list for {param:?}");
        }
        let configs: Vec<FmmConfig> = values.iter().map(|&v| with_value(&base, param, v)).collect();
        let orders = configs.iter().map(|c| Ok(c.policy()?.order)).collect::<Result<Vec<_>>>()?;
        let mut times = vec![Vec::with_capacity(args.repeats); values.len()];
        // repeats outermost so slow drift in machine state spreads over all values
        for _ in 0..args.repeats {
            for (i, config) in configs.iter().enumerate() {
                let Some(out) = execute(&sources, targets.as_deref(), config, &args.fmm)? else {
                    return Ok(None);
                };
                times[i].push(out.report.max_rank_cpu());
            }
        }
        sweeps.push(summarize(param, &values, times, &orders));
    }
    Ok(Some(SweepReport { command: "sweep", dataset, base, repeats: args.repeats, sweeps }))
}

pub fn summarize(param: SweepParam, values: &[f64], times: Vec<Vec<f64>>, orders: &[usize]) -> SweepResult {
    let means: Vec<f64> = times.iter().map(|t| mean(t)).collect();
    let best = argmin(&means).expect("non-empty sweep");
    let scale = means[best];
    let average = mean(&means);
    let points = values
        .iter()
        .zip(times)
        .zip(orders)
        .map(|((&value, times), &order)| {
            let m = mean(&times);
            let lo = times.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = times.iter().copied().fold(0.0, f64::max);
            SweepPoint { value, mean: m, min: lo, max: hi, normalized: [m / scale, lo / scale, hi / scale], order, times }
        })
        .collect();
    SweepResult {
        param,
        points,
        optimum: values[best],
        interior_minimum: best > 0 && best + 1 < values.len(),
        spread: means.iter().map(|m| (m - average).abs() / average).fold(0.0, f64::max),
    }
}

impl SweepReport {
    pub fn summary(&self) -> String {
        let mut s = format!("sweep: N={} repeats={}\n", self.dataset.n, self.repeats);
        for sw in &self.sweeps {
            s += &format!(
                "  {:?}: optimum {} (interior: {}), spread {:.1}%\n",
                sw.param,
                sw.optimum,
                sw.interior_minimum,
                100.0 * sw.spread
            );
            for p in &sw.points {
                s += &format!(
                    "    {:>5} Q={:>2} mean {:>8.3}s  normalized {:.3} [{:.3}, {:.3}]\n",
                    p.value, p.order, p.mean, p.normalized[0], p.normalized[1], p.normalized[2]
                );
            }
        }
        s
    }
}
