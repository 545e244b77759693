use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::Serialize;

use super::TrainError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedResult {
    pub seed: u64,
    pub metrics: BTreeMap<String, f64>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiSeedReport {
    pub runs: Vec<SeedResult>,
    pub mean: BTreeMap<String, f64>,
    /// Population standard deviation.
    pub std: BTreeMap<String, f64>,
}

/// Mean and standard deviation of every metric present in all runs.
pub fn aggregate(runs: Vec<SeedResult>) -> MultiSeedReport {
    let mut mean = BTreeMap::new();
    let mut std = BTreeMap::new();
    if let Some(first) = runs.first() {
        for key in first.metrics.keys() {
            let values: Vec<f64> = runs.iter().filter_map(|r| r.metrics.get(key).copied()).collect();
            if values.len() != runs.len() {
                continue;
            }
            let n = values.len() as f64;
            let m = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
            mean.insert(key.clone(), m);
            std.insert(key.clone(), var.sqrt());
        }
    }
    MultiSeedReport { runs, mean, std }
}

/// Runs `run` once per seed, in order, and aggregates the results.
pub fn multi_seed_run<F>(seeds: &[u64], mut run: F) -> Result<MultiSeedReport, TrainError>
where
    F: FnMut(u64) -> Result<SeedResult, TrainError>,
{
    if seeds.is_empty() {
        return Err(TrainError::Config("at least one seed is required".into()));
    }
    let runs = seeds.iter().map(|&s| run(s)).collect::<Result<Vec<_>, _>>()?;
    Ok(aggregate(runs))
}
