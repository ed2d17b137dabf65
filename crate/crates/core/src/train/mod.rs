//! Training schedule and loop, evaluation, checkpoints and the stem ablation.

mod ablation;
mod checkpoint;

pub use ablation::{run_ablation, AblationCell, AblationConfig, AblationResult, VariantSummary};
pub use checkpoint::{peek_fingerprint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{batch_iter, derive_seed, SampleSource};
use crate::evaluate::{confusion_matrix, metrics_from_cm, MetricsReport};
use crate::imgproc::{AugmentFlags, RawImage};
use crate::nnet::{images_to_tensor, sgd_step, softmax_cross_entropy, Mode, Model, ModelConfig, StemVariant};
use crate::{Error, Result};

/// Batch size used when evaluating.
const EVAL_BATCH: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_initial: f64,
    pub lr_decay_epoch: usize,
    pub lr_after: f64,
    pub seed: u64,
    /// Overrides `model.stem.variant`.
    pub variant: StemVariant,
    pub model: ModelConfig,
    /// `None` disables augmentation.
    pub augment: Option<AugmentFlags>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            batch_size: 8,
            lr_initial: 0.01,
            lr_decay_epoch: 10,
            lr_after: 0.001,
            seed: 0,
            variant: StemVariant::DarkBright,
            model: ModelConfig::default(),
            augment: Some(AugmentFlags::default()),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.lr_initial > 0.0 && self.lr_after > 0.0) || !self.lr_initial.is_finite() || !self.lr_after.is_finite() {
            return bad("learning rates must be positive".into());
        }
        if self.lr_decay_epoch > self.epochs {
            return bad(format!(
                "lr_decay_epoch {} exceeds epochs {}",
                self.lr_decay_epoch, self.epochs
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        self.model_config().validate()
    }

    /// The model config with the selected stem variant applied.
    pub fn model_config(&self) -> ModelConfig {
        let mut m = self.model.clone();
        m.stem.variant = self.variant;
        m
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Step schedule over 1-based epochs.
pub fn learning_rate(epoch: usize, cfg: &TrainConfig) -> f64 {
    if epoch <= cfg.lr_decay_epoch {
        cfg.lr_initial
    } else {
        cfg.lr_after
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_macro_f: Option<f64>,
}

/// CSV with header `epoch,mean_loss,val_macro_f`; the last field is empty
/// without a validation set.
pub fn log_to_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,mean_loss,val_macro_f\n");
    for e in log {
        let _ = write!(s, "{},{:.6}", e.epoch, e.mean_loss);
        match e.val_macro_f {
            Some(f) => {
                let _ = writeln!(s, ",{f:.6}");
            }
            None => s.push_str(",\n"),
        }
    }
    s
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
}

/// Seeded Kaiming initialisation for `cfg`.
pub fn init_model(cfg: &TrainConfig) -> Result<Model<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, 0x1a17]));
    Model::new(cfg.model_config(), &mut rng)
}

/// Mini-batch SGD over `epochs`. Batches of a single sample are skipped,
/// since train-mode batch norm is undefined for them. `on_epoch` sees each
/// log line as it is produced.
pub fn train<S, V>(
    cfg: &TrainConfig,
    train_set: &S,
    val_set: Option<&V>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome>
where
    S: SampleSource + ?Sized,
    V: SampleSource + ?Sized,
{
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidConfig("training set is empty".into()));
    }
    let mut model = init_model(cfg)?;
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let lr = learning_rate(epoch, cfg) as f32;
        let mut loss_sum = 0.0f64;
        let mut seen = 0usize;
        for (b, batch) in batch_iter(train_set, cfg.batch_size, cfg.seed, epoch as u64, cfg.augment)?.enumerate() {
            let batch = batch?;
            if batch.len() < 2 {
                continue;
            }
            let refs: Vec<&RawImage> = batch.images.iter().collect();
            let input = images_to_tensor::<f32>(&refs)?;
            let labels: Vec<usize> = batch.labels.iter().map(|l| l.index()).collect();
            let pass = model.forward(&input, Mode::Train)?;
            let (loss, dlogits) = softmax_cross_entropy(&pass.logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b + 1 });
            }
            model.backward(&pass, &dlogits)?;
            model.commit_running_stats(&pass);
            sgd_step(model.params_mut(), lr);
            loss_sum += loss as f64 * batch.len() as f64;
            seen += batch.len();
        }
        let val_macro_f = match val_set {
            Some(v) if !v.is_empty() => Some(evaluate_model(&model, v)?.macro_avg.f),
            _ => None,
        };
        let entry = EpochLog {
            epoch,
            mean_loss: if seen > 0 { loss_sum / seen as f64 } else { f64::NAN },
            val_macro_f,
        };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(TrainOutcome {
        checkpoint: Checkpoint::new(model, cfg.epochs as u32, cfg.seed),
        log,
    })
}

/// Eval-mode predictions in source order.
pub fn predict_all<S: SampleSource + ?Sized>(model: &Model<f32>, source: &S) -> Result<Vec<usize>> {
    let mut preds = Vec::with_capacity(source.len());
    let mut start = 0;
    while start < source.len() {
        let end = (start + EVAL_BATCH).min(source.len());
        let images = (start..end).map(|i| source.load(i)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&RawImage> = images.iter().collect();
        preds.extend(model.predict(&images_to_tensor::<f32>(&refs)?)?);
        start = end;
    }
    Ok(preds)
}

pub fn evaluate_model<S: SampleSource + ?Sized>(model: &Model<f32>, source: &S) -> Result<MetricsReport> {
    let preds = predict_all(model, source)?;
    let truth: Vec<usize> = (0..source.len()).map(|i| source.label(i).index()).collect();
    metrics_from_cm(&confusion_matrix(&truth, &preds)?)
}
