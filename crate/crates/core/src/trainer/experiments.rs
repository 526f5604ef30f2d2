use super::synth::{domain_fixture, imbalance_fixture, Domain};
use super::{evaluate, train, TrainConfig};
use crate::dataio::Sample;
use crate::error::{Error, Result};
use crate::metrics::ScoreReport;
use crate::model::Enhancements;
use crate::numerics::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct ImbalanceConfig {
    pub seeds: Vec<u64>,
    /// Schedule shared by both variants; its flags and seed are replaced.
    pub train: TrainConfig,
    pub train_samples: usize,
    pub test_samples: usize,
}

impl Default for ImbalanceConfig {
    fn default() -> Self {
        ImbalanceConfig {
            seeds: (0..10).collect(),
            train: TrainConfig {
                iterations: 60,
                eval_every: 0,
                ..TrainConfig::toy()
            },
            train_samples: 16,
            test_samples: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImbalanceRow {
    pub seed: u64,
    /// Minority-level F1 of each variant on the held-out fixture.
    pub baseline: f64,
    pub focal: f64,
    pub baseline_report: ScoreReport,
    pub focal_report: ScoreReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImbalanceSummary {
    pub rows: Vec<ImbalanceRow>,
    /// Seeds where the focal variant's minority F1 is at least Baseline's.
    pub focal_wins: usize,
}

impl ImbalanceSummary {
    pub fn to_table(&self) -> String {
        let mut s = String::from("seed  baseline_minority_f1  focal_minority_f1\n");
        for r in &self.rows {
            s.push_str(&format!("{:<5} {:>20.4} {:>18.4}\n", r.seed, r.baseline, r.focal));
        }
        s.push_str(&format!("focal >= baseline in {} of {}\n", self.focal_wins, self.rows.len()));
        s
    }
}

const MINORITY_LEVEL: usize = 3;

/// Trains Baseline and FOCAL on the 20:1 fixture for each seed and
/// compares the minority level's F1 on a held-out fixture.
pub fn imbalance_experiment(cfg: &ImbalanceConfig) -> Result<ImbalanceSummary> {
    if cfg.seeds.is_empty() {
        return Err(Error::config("imbalance experiment needs at least one seed"));
    }
    let mut rows = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let train_set = imbalance_fixture("imb-train", cfg.train_samples, seed)?;
        let test_set = imbalance_fixture("imb-test", cfg.test_samples, Rng::derived(seed, "test").next_u64())?;
        let run = |focal: bool| -> Result<ScoreReport> {
            let mut tc = cfg.train.clone();
            tc.seed = seed;
            tc.model = tc.model.with_enhancements(Enhancements::new(focal, false, false, false));
            let out = train(&tc, &train_set, &[])?;
            Ok(evaluate(&out.best, &test_set)?.labeled(&out.best.variant_name(), "imbalance"))
        };
        let baseline_report = run(false)?;
        let focal_report = run(true)?;
        let row = ImbalanceRow {
            seed,
            baseline: baseline_report.f1_levels[MINORITY_LEVEL - 1],
            focal: focal_report.f1_levels[MINORITY_LEVEL - 1],
            baseline_report,
            focal_report,
        };
        log::info!("imbalance seed {seed}: baseline {:.4}, focal {:.4}", row.baseline, row.focal);
        rows.push(row);
    }
    let focal_wins = rows.iter().filter(|r| r.focal >= r.baseline).count();
    Ok(ImbalanceSummary { rows, focal_wins })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub variants: Vec<Enhancements>,
    /// Base schedule; flags are replaced per variant.
    pub train: TrainConfig,
    pub train_samples: usize,
    pub valid_samples: usize,
    pub test_samples: usize,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            variants: Enhancements::SWEEP.to_vec(),
            train: TrainConfig {
                iterations: 100,
                eval_every: 25,
                ..TrainConfig::toy()
            },
            train_samples: 12,
            valid_samples: 4,
            test_samples: 8,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub train_dataset: String,
    pub report: ScoreReport,
}

impl SweepRow {
    pub fn csv_header() -> String {
        format!("train_dataset,{}", ScoreReport::csv_header())
    }

    pub fn to_csv_row(&self) -> String {
        format!("{},{}", self.train_dataset, self.report.to_csv_row())
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = SweepRow::csv_header();
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv_row());
        s.push('\n');
    }
    s
}

/// Train, validation and test samples of one dataset in a sweep.
#[derive(Clone, Debug)]
pub struct SweepDataset {
    pub name: String,
    pub train: Vec<Sample>,
    pub valid: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Trains every variant on each dataset and scores it on every dataset's
/// test set, in-domain first and then in listed order.
pub fn sweep_datasets(variants: &[Enhancements], train_cfg: &TrainConfig, datasets: &[SweepDataset]) -> Result<Vec<SweepRow>> {
    if variants.is_empty() || datasets.is_empty() {
        return Err(Error::config("a sweep needs at least one variant and one dataset"));
    }
    let mut rows = Vec::new();
    for (i, d) in datasets.iter().enumerate() {
        for &v in variants {
            let mut tc = train_cfg.clone();
            tc.model = tc.model.with_enhancements(v);
            let out = train(&tc, &d.train, &d.valid)?;
            let order = std::iter::once(i).chain((0..datasets.len()).filter(|&j| j != i));
            for j in order {
                let e = &datasets[j];
                let report = evaluate(&out.best, &e.test)?.labeled(&v.name(), &e.name);
                log::info!("{} trained on {} scored on {}: f1_oa {:.4}", v.name(), d.name, e.name, report.f1_oa);
                rows.push(SweepRow {
                    train_dataset: d.name.clone(),
                    report,
                });
            }
        }
    }
    Ok(rows)
}

/// [`sweep_datasets`] over the two synthetic domains.
pub fn sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    let mut datasets = Vec::new();
    for d in [Domain::A, Domain::B] {
        let base = Rng::derived(cfg.seed, d.name()).next_u64();
        let mut all = domain_fixture(d, cfg.train_samples + cfg.valid_samples + cfg.test_samples, base)?;
        let test = all.split_off(cfg.train_samples + cfg.valid_samples);
        let valid = all.split_off(cfg.train_samples);
        datasets.push(SweepDataset {
            name: d.name().to_string(),
            train: all,
            valid,
            test,
        });
    }
    let mut tc = cfg.train.clone();
    tc.seed = cfg.seed;
    sweep_datasets(&cfg.variants, &tc, &datasets)
}
