//! Ablation sweep: the plain dual-GAN baseline, the inspector-only
//! variant without image discriminators, and the mix-up resolution
//! variants, each averaged over seeds.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::train;
use super::RunConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub k: Option<usize>,
    pub seeds: Vec<u64>,
    pub dice_avg: f64,
    /// Absent when every case/class pair had an undefined distance.
    pub assd_avg: Option<f64>,
    pub per_seed_dice: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub warnings: Vec<String>,
}

impl AblationTable {
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<28} {:>8} {:>8}\n",
            "setting", "dice", "assd"
        ));
        out.push_str(&"-".repeat(46));
        out.push('\n');
        for row in &self.rows {
            let assd = row
                .assd_avg
                .map(|v| format!("{v:.2}"))
                .unwrap_or_else(|| "n/a".to_string());
            out.push_str(&format!(
                "{:<28} {:>8.1} {:>8}\n",
                row.name,
                row.dice_avg * 100.0,
                assd
            ));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("setting,k,dice_avg,assd_avg,seeds\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{:.6},{},{}\n",
                row.name,
                row.k.map(|k| k.to_string()).unwrap_or_default(),
                row.dice_avg,
                row.assd_avg.map(|v| format!("{v:.6}")).unwrap_or_default(),
                row.seeds
                    .iter()
                    .map(|s| s.to_string())
                    .collect::<Vec<_>>()
                    .join(";")
            ));
        }
        out
    }
}

/// All run variants of the sweep, in table order.
fn variants(base: &RunConfig, k_values: &[usize]) -> Result<(Vec<(String, RunConfig)>, Vec<String>)> {
    let mut warnings = Vec::new();
    let mut ks: Vec<usize> = Vec::new();
    for &k in k_values {
        if ks.contains(&k) {
            warnings.push(format!("duplicate k={k} ignored"));
            continue;
        }
        if base.model.image_side % k != 0 {
            return Err(Error::config(format!(
                "k={k} does not divide image_side {}",
                base.model.image_side
            )));
        }
        ks.push(k);
    }
    ks.sort_unstable();
    if ks.is_empty() {
        return Err(Error::config("ablation needs at least one k value"));
    }

    let mut out = Vec::new();
    let mut baseline = base.clone();
    baseline.ablation.disable_synthmix = true;
    out.push(("baseline_no_synthmix".to_string(), baseline));

    let mut model0 = base.clone();
    model0.ablation.disable_d_s_d_t = true;
    out.push(("model0_no_ds_dt".to_string(), model0));

    for &k in &ks {
        let mut cfg = base.clone();
        cfg.ablation.k_override = Some(k);
        out.push((format!("synthmix_k{k}"), cfg));
    }
    Ok((out, warnings))
}

/// Run the sweep: one training run per (variant, seed); per-variant Dice
/// and ASSD averaged over seeds. Writes `ablation.json`, `ablation.csv`,
/// and `ablation.txt` under `out_dir`.
pub fn ablate(
    base: &RunConfig,
    k_values: &[usize],
    seeds: &[u64],
    out_dir: &Path,
) -> Result<AblationTable> {
    base.validate()?;
    if seeds.is_empty() {
        return Err(Error::config("ablation needs at least one seed"));
    }
    let (variants, warnings) = variants(base, k_values)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    // Independent runs; spread them over the available cores.
    let mut jobs = Vec::new();
    for (name, cfg) in &variants {
        for &seed in seeds {
            let mut cfg = cfg.clone();
            cfg.seed = seed;
            cfg.mask.seed = seed;
            let run_dir = out_dir.join(format!("{name}_seed{seed}"));
            jobs.push((name.clone(), seed, cfg, run_dir));
        }
    }
    let results = run_parallel(jobs)?;

    let mut rows = Vec::new();
    for (name, cfg) in &variants {
        let mut dices = Vec::new();
        let mut assds = Vec::new();
        let mut row_seeds = Vec::new();
        for (n, seed, dice, assd) in &results {
            if n == name {
                row_seeds.push(*seed);
                dices.push(*dice);
                if let Some(a) = assd {
                    assds.push(*a);
                }
            }
        }
        rows.push(AblationRow {
            name: name.clone(),
            k: cfg.ablation.k_override,
            seeds: row_seeds,
            dice_avg: dices.iter().sum::<f64>() / dices.len() as f64,
            assd_avg: if assds.is_empty() {
                None
            } else {
                Some(assds.iter().sum::<f64>() / assds.len() as f64)
            },
            per_seed_dice: dices,
        });
    }

    let table = AblationTable { rows, warnings };
    fs::write(
        out_dir.join("ablation.json"),
        serde_json::to_string_pretty(&table).expect("table serializes"),
    )
    .map_err(|e| Error::io(out_dir, e))?;
    fs::write(out_dir.join("ablation.csv"), table.to_csv())
        .map_err(|e| Error::io(out_dir, e))?;
    fs::write(out_dir.join("ablation.txt"), table.render())
        .map_err(|e| Error::io(out_dir, e))?;
    Ok(table)
}

type JobResult = (String, u64, f64, Option<f64>);

/// Run training jobs on up to `available_parallelism` worker threads.
/// Each job is internally deterministic, so scheduling order cannot
/// change any result.
fn run_parallel(jobs: Vec<(String, u64, RunConfig, std::path::PathBuf)>) -> Result<Vec<JobResult>> {
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(jobs.len().max(1));
    let jobs = std::sync::Mutex::new(jobs.into_iter().enumerate().collect::<Vec<_>>());
    let results = std::sync::Mutex::new(Vec::<(usize, Result<JobResult>)>::new());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let job = { jobs.lock().unwrap().pop() };
                let Some((idx, (name, seed, cfg, dir))) = job else {
                    break;
                };
                let res = train(&cfg, &dir).map(|outcome| {
                    let assd = if outcome.final_report.assd_avg.is_finite() {
                        Some(outcome.final_report.assd_avg)
                    } else {
                        None
                    };
                    (name, seed, outcome.final_report.dice_avg, assd)
                });
                results.lock().unwrap().push((idx, res));
            });
        }
    });
    let mut results = results.into_inner().unwrap();
    results.sort_by_key(|(idx, _)| *idx);
    results.into_iter().map(|(_, r)| r).collect()
}
