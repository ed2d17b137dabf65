use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{evaluate_model, train, TrainConfig};
use crate::data::{derive_seed, generate_dataset, MemorySource, SyntheticParams, SyntheticSample};
use crate::evaluate::{mean_std, MetricsReport};
use crate::nnet::StemVariant;
use crate::Result;

/// Synthesise, train and evaluate every stem variant for each seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub seeds: Vec<u64>,
    pub variants: Vec<StemVariant>,
    /// Per-label counts, Good/Usable/Reject.
    pub train_counts: [usize; 3],
    pub test_counts: [usize; 3],
    pub synth: SyntheticParams,
    /// Shared schedule and model; `seed` and `variant` are set per cell.
    pub train: TrainConfig,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3, 4, 5],
            variants: StemVariant::ALL.to_vec(),
            train_counts: [200, 200, 200],
            test_counts: [100, 100, 100],
            synth: SyntheticParams::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub variant: StemVariant,
    pub seed: u64,
    pub final_loss: f64,
    pub report: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: StemVariant,
    pub mean_accuracy: f64,
    pub mean_f: f64,
    pub f_std: f64,
    pub runs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    /// Ordered by variant, then seed.
    pub cells: Vec<AblationCell>,
    pub summaries: Vec<VariantSummary>,
}

/// Images as they would come back from an 8-bit PNG.
fn to_source(samples: Vec<SyntheticSample>) -> Result<MemorySource> {
    let (images, labels) = samples
        .into_iter()
        .map(|s| (s.image.quantize_u8(), s.label))
        .unzip();
    MemorySource::new(images, labels)
}

/// Runs cells in (seed, variant) order, reporting each as it completes;
/// the result is ordered by (variant, seed). Each seed's data is shared by
/// all variants.
pub fn run_ablation(cfg: &AblationConfig, mut on_cell: impl FnMut(&AblationCell)) -> Result<AblationResult> {
    cfg.synth.validate()?;
    cfg.train.validate()?;
    let mut cells = Vec::new();
    for &seed in &cfg.seeds {
        let train_set = to_source(generate_dataset(cfg.train_counts, derive_seed(&[seed, 1]), &cfg.synth)?)?;
        let test_set = to_source(generate_dataset(cfg.test_counts, derive_seed(&[seed, 2]), &cfg.synth)?)?;
        for &variant in &cfg.variants {
            let tc = TrainConfig {
                seed,
                variant,
                ..cfg.train.clone()
            };
            let out = train(&tc, &train_set, None::<&MemorySource>, |_| {})?;
            let report = evaluate_model(out.checkpoint.model(), &test_set)?;
            let cell = AblationCell {
                variant,
                seed,
                final_loss: out.log.last().map_or(f64::NAN, |e| e.mean_loss),
                report,
            };
            on_cell(&cell);
            cells.push(cell);
        }
    }
    cells.sort_by_key(|c| {
        (
            cfg.variants.iter().position(|&v| v == c.variant),
            cfg.seeds.iter().position(|&s| s == c.seed),
        )
    });
    let summaries = cfg
        .variants
        .iter()
        .map(|&variant| {
            let mine: Vec<&AblationCell> = cells.iter().filter(|c| c.variant == variant).collect();
            let runs: Vec<f64> = mine.iter().map(|c| c.report.macro_avg.f).collect();
            let (mean_f, f_std) = mean_std(&runs);
            let accs: Vec<f64> = mine.iter().map(|c| c.report.accuracy).collect();
            VariantSummary {
                variant,
                mean_accuracy: mean_std(&accs).0,
                mean_f,
                f_std,
                runs,
            }
        })
        .collect();
    Ok(AblationResult { cells, summaries })
}

impl AblationResult {
    pub fn summary(&self, variant: StemVariant) -> Option<&VariantSummary> {
        self.summaries.iter().find(|s| s.variant == variant)
    }

    /// One row per (variant, seed), then mean and std rows per variant.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<12} {:>8} {:>9} {:>10} {:>8} {:>8}",
            "variant", "seed", "accuracy", "precision", "recall", "f"
        );
        for summary in &self.summaries {
            for c in self.cells.iter().filter(|c| c.variant == summary.variant) {
                let m = &c.report.macro_avg;
                let _ = writeln!(
                    s,
                    "{:<12} {:>8} {:>9.4} {:>10.4} {:>8.4} {:>8.4}",
                    c.variant.name(),
                    c.seed,
                    c.report.accuracy,
                    m.precision,
                    m.recall,
                    m.f
                );
            }
            let _ = writeln!(
                s,
                "{:<12} {:>8} {:>9.4} {:>10} {:>8} {:>8.4}",
                summary.variant.name(),
                "mean",
                summary.mean_accuracy,
                "",
                "",
                summary.mean_f
            );
            let _ = writeln!(
                s,
                "{:<12} {:>8} {:>9} {:>10} {:>8} {:>8.4}",
                summary.variant.name(),
                "std",
                "",
                "",
                "",
                summary.f_std
            );
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,seed,accuracy,macro_precision,macro_recall,macro_f\n");
        for c in &self.cells {
            let m = &c.report.macro_avg;
            let _ = writeln!(
                s,
                "{},{},{:.6},{:.6},{:.6},{:.6}",
                c.variant.name(),
                c.seed,
                c.report.accuracy,
                m.precision,
                m.recall,
                m.f
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{ConvBlockSpec, GuidedStemConfig, ModelConfig};

    #[test]
    fn tiny_ablation_shape() {
        let cfg = AblationConfig {
            seeds: vec![1, 2],
            variants: vec![StemVariant::Baseline, StemVariant::DarkBright],
            train_counts: [4, 4, 4],
            test_counts: [2, 2, 2],
            synth: SyntheticParams {
                image_size: 32,
                ..Default::default()
            },
            train: TrainConfig {
                epochs: 1,
                lr_decay_epoch: 1,
                batch_size: 4,
                model: ModelConfig {
                    stem: GuidedStemConfig {
                        total_channels: 8,
                        ..Default::default()
                    },
                    body: vec![ConvBlockSpec {
                        out_channels: 4,
                        stride: 2,
                    }],
                    class_count: 3,
                },
                ..Default::default()
            },
        };
        let mut order = Vec::new();
        let r = run_ablation(&cfg, |c| order.push((c.seed, c.variant))).unwrap();
        assert_eq!(order[1], (1, StemVariant::DarkBright));
        let keys: Vec<_> = r.cells.iter().map(|c| (c.variant, c.seed)).collect();
        assert_eq!(
            keys,
            vec![
                (StemVariant::Baseline, 1),
                (StemVariant::Baseline, 2),
                (StemVariant::DarkBright, 1),
                (StemVariant::DarkBright, 2)
            ]
        );
        let table = r.to_table();
        assert_eq!(table.lines().count(), 1 + 2 * (2 + 2));
        assert!(table.contains("mean") && table.contains("std"));
        assert_eq!(r, run_ablation(&cfg, |_| {}).unwrap());
    }
}
