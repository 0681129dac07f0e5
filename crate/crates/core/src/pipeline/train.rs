//! Joint contrastive pretraining of the encoder, projector and importance
//! vector.

use ndarray::{s, Array2, Axis};
use rand::distributions::{Bernoulli, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::eval::{extract_features, fit_probe, ProbeConfig};
use super::{BatchSampler, Dataset};
use crate::analysis::{baseline_augment, BaselineKind};
use crate::error::{Error, Result};
use crate::frera::{
    self, compute_distortion, CritMask, DistortionVector, ImportanceVector, ThresholdMode,
};
use crate::nn::{stack_batch, Adam, Encoder, ModelConfig, ModelState, Optimizer, Profile, Sgd};
use crate::objective;
use crate::spectral::{self, Spectrum, TimeSeries};

/// How views are produced from anchors.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Augmentation {
    /// Learned critical mask plus distortion of unimportant components.
    #[default]
    Frera,
    /// Critical mask replaced by independent Bernoulli(`proportion`) draws;
    /// the importance vector is not trained.
    RandomMask { proportion: f64 },
    /// Learned critical mask with the distortion vector fixed at zero.
    NoDistortion,
    /// A predefined augmentation; no importance vector is used.
    Baseline(BaselineKind),
}

impl Augmentation {
    pub fn name(&self) -> String {
        match self {
            Augmentation::Frera => "frera".into(),
            Augmentation::RandomMask { .. } => "random_mask".into(),
            Augmentation::NoDistortion => "no_distortion".into(),
            Augmentation::Baseline(kind) => kind.name().into(),
        }
    }

    /// Whether the importance vector receives gradients.
    pub fn trains_scores(&self) -> bool {
        matches!(self, Augmentation::Frera | Augmentation::NoDistortion)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_model: f64,
    pub lr_s: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// InfoNCE temperature.
    pub tau: f64,
    /// Mask temperature.
    pub tau_w: f64,
    pub lambda: f64,
    pub threshold: ThresholdMode,
    pub seed: u64,
    pub profile: Profile,
    pub balanced_sampling: bool,
    pub augmentation: Augmentation,
    /// Epoch interval of the validation probe used for model selection;
    /// 0 disables it.
    pub probe_every: usize,
    pub probe: ProbeConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            epochs: 100,
            lr_model: 0.03,
            lr_s: 0.01,
            momentum: 0.9,
            weight_decay: 0.0,
            tau: 0.2,
            tau_w: 0.2,
            lambda: 1.0,
            threshold: ThresholdMode::Mean,
            seed: 0,
            profile: Profile::Full,
            balanced_sampling: true,
            augmentation: Augmentation::Frera,
            probe_every: 10,
            probe: ProbeConfig {
                iterations: 200,
                ..ProbeConfig::default()
            },
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.batch_size < 2 {
            return bad(format!("batch size must be >= 2, got {}", self.batch_size));
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        for (name, v) in [
            ("lr_model", self.lr_model),
            ("lr_s", self.lr_s),
            ("tau", self.tau),
            ("tau_w", self.tau_w),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be > 0, got {v}"));
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        match self.augmentation {
            Augmentation::RandomMask { proportion } if !(0.0..=1.0).contains(&proportion) => {
                return bad(format!("random mask proportion must be in [0, 1], got {proportion}"));
            }
            Augmentation::Baseline(kind) => kind.validate()?,
            _ => {}
        }
        Ok(())
    }
}

/// Per-epoch averages over training steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub augmentation: String,
    pub contrastive: f64,
    pub regularizer: f64,
    pub total: f64,
    /// Mean critical-mask value; absent for predefined augmentations.
    pub mask_mean: Option<f64>,
    pub mi_lower_bound: f64,
    pub steps: usize,
    /// Validation accuracy of the selection probe, when it ran.
    pub probe_accuracy: Option<f64>,
}

/// Encoder snapshot chosen by validation accuracy.
#[derive(Debug, Clone)]
pub struct SelectedEncoder {
    pub epoch: usize,
    pub encoder: Encoder,
}

/// Everything needed to continue, evaluate or inspect a run.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: ModelState,
    pub scores: ImportanceVector,
    pub score_optimizer: Adam,
    pub length: usize,
    pub channels: usize,
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
    pub selected: Option<SelectedEncoder>,
}

impl Checkpoint {
    /// Untrained state for data of shape `length x channels`.
    pub fn fresh(config: TrainConfig, length: usize, channels: usize) -> Result<Self> {
        config.validate()?;
        let mut init_rng = stream(config.seed, Stream::Init);
        let model_config = ModelConfig::for_profile(config.profile, channels);
        let sgd = Sgd::new(config.lr_model, config.momentum, config.weight_decay)?;
        let model = ModelState::new(model_config, sgd, &mut init_rng);
        let scores = ImportanceVector::init(length, &mut init_rng);
        Ok(Self {
            score_optimizer: Adam::new(config.lr_s)?,
            config,
            model,
            scores,
            length,
            channels,
            epoch: 0,
            history: Vec::new(),
            selected: None,
        })
    }
}

#[derive(Debug, Clone, Copy)]
enum Stream {
    Init = 0,
    Sampler = 1,
    Augment = 2,
}

fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

/// Loss values and score gradient of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub loss: objective::LossBreakdown,
    pub mask_mean: Option<f64>,
    /// `dL/ds`; zero when the importance vector is not trained.
    pub grad_scores: Vec<f64>,
}

/// View generator state for one step.
#[derive(Debug, Clone)]
pub enum StepViews {
    /// Per-sample critical masks with a shared distortion vector. The masks
    /// contribute to the regularizer; `trainable` controls whether gradients
    /// flow to the scores.
    Masked {
        masks: Vec<CritMask>,
        distortion: DistortionVector,
        trainable: bool,
    },
    /// Views given directly.
    Fixed(Vec<Array2<f64>>),
}

/// Forward and backward pass of the full objective on one batch.
///
/// Anchors are embedded unaugmented. Anchors and views go through the
/// encoder as one batch, so batch normalization sees both. Parameter
/// gradients are accumulated into `model`; no parameter is updated.
pub fn objective_step(
    model: &mut ModelState,
    anchors: &[&TimeSeries],
    views: &StepViews,
    tau: f64,
    lambda: f64,
) -> Result<StepOutput> {
    let b = anchors.len();
    let spectra: Vec<Spectrum> = match views {
        StepViews::Masked { .. } => anchors.iter().map(|a| spectral::forward_rdft(a)).collect(),
        StepViews::Fixed(_) => Vec::new(),
    };
    let view_values: Vec<Array2<f64>> = match views {
        StepViews::Masked {
            masks, distortion, ..
        } => {
            if masks.len() != b {
                return Err(Error::shape("critical masks", b, masks.len()));
            }
            spectra
                .iter()
                .zip(masks)
                .map(|(spec, m)| frera::augment_spectrum(spec, m, distortion))
                .collect::<Result<_>>()?
        }
        StepViews::Fixed(v) => {
            if v.len() != b {
                return Err(Error::shape("views", b, v.len()));
            }
            v.clone()
        }
    };
    let mut inputs: Vec<&Array2<f64>> = anchors.iter().map(|a| a.values()).collect();
    inputs.extend(view_values.iter());
    let batch = stack_batch(&inputs)?;
    let z = model.embed(&batch, true)?;
    let za = z.slice(s![..b, ..]).to_owned();
    let zv = z.slice(s![b.., ..]).to_owned();
    let sim = objective::cosine_similarity_matrix(&za, &zv)?;
    let contrastive = objective::infonce_loss(&sim.values, tau)?;
    let (regularizer, mask_mean) = match views {
        StepViews::Masked { masks, .. } => {
            let r = masks
                .iter()
                .map(|m| objective::l1_regularizer(m.weights()))
                .sum::<f64>()
                / b as f64;
            (r, Some(r))
        }
        StepViews::Fixed(_) => (0.0, None),
    };
    let loss = objective::total_loss(contrastive, regularizer, lambda)?;

    let d_sim = objective::infonce_backward(&sim.values, tau)?;
    let (d_a, d_v) = sim.backward(&d_sim);
    let d_z = ndarray::concatenate(Axis(0), &[d_a.view(), d_v.view()]).expect("same width");
    let dx = model.backward(&d_z);

    let grad_scores = match views {
        StepViews::Masked {
            masks,
            trainable: true,
            ..
        } => {
            let f = masks[0].len();
            let reg_grad = lambda / (b * f) as f64;
            let mut ds = vec![0.0; f];
            for (i, (spec, mask)) in spectra.iter().zip(masks).enumerate() {
                let upstream = dx.index_axis(Axis(0), b + i).to_owned();
                let mut gw = frera::gain_gradient(&upstream, spec)?;
                gw.iter_mut().for_each(|g| *g += reg_grad);
                for (acc, g) in ds.iter_mut().zip(frera::mask_gradient_to_scores(&gw, mask)) {
                    *acc += g;
                }
            }
            ds
        }
        StepViews::Masked { masks, .. } => vec![0.0; masks.first().map_or(0, CritMask::len)],
        StepViews::Fixed(_) => Vec::new(),
    };
    Ok(StepOutput {
        loss,
        mask_mean,
        grad_scores,
    })
}

fn random_mask<R: Rng + ?Sized>(f: usize, proportion: f64, rng: &mut R) -> CritMask {
    let bern = Bernoulli::new(proportion).expect("proportion validated");
    CritMask::fixed((0..f).map(|_| f64::from(u8::from(bern.sample(rng)))).collect())
}

fn build_views<R: Rng + ?Sized>(
    ckpt: &Checkpoint,
    anchors: &[&TimeSeries],
    rng: &mut R,
) -> Result<StepViews> {
    let cfg = &ckpt.config;
    let f = ckpt.scores.len();
    Ok(match cfg.augmentation {
        Augmentation::Frera | Augmentation::NoDistortion => {
            let distortion = if cfg.augmentation == Augmentation::Frera {
                compute_distortion(&ckpt.scores, cfg.threshold)
            } else {
                DistortionVector::zeros(f, cfg.threshold)
            };
            let masks = anchors
                .iter()
                .map(|_| frera::sample_crit_mask(&ckpt.scores, cfg.tau_w, rng))
                .collect::<Result<_>>()?;
            StepViews::Masked {
                masks,
                distortion,
                trainable: true,
            }
        }
        Augmentation::RandomMask { proportion } => StepViews::Masked {
            masks: anchors.iter().map(|_| random_mask(f, proportion, rng)).collect(),
            distortion: compute_distortion(&ckpt.scores, cfg.threshold),
            trainable: false,
        },
        Augmentation::Baseline(kind) => StepViews::Fixed(
            anchors
                .iter()
                .map(|a| baseline_augment(a, &kind, rng).map(|v| v.values))
                .collect::<Result<_>>()?,
        ),
    })
}

fn describe_scores(s: &ImportanceVector) -> String {
    let v = s.scores();
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    format!("scores min {lo:.6e} max {hi:.6e}")
}

/// Validation accuracy of a short softmax probe on frozen features.
pub fn probe_accuracy(
    encoder: &Encoder,
    train: &Dataset,
    val: &Dataset,
    config: &ProbeConfig,
) -> Result<f64> {
    let classes = train.classes().max(val.classes());
    let tx = extract_features(encoder, train)?;
    let vx = extract_features(encoder, val)?;
    let ty = train.require_labels()?;
    let vy = val.require_labels()?;
    let (_, traces) = fit_probe(&tx, &ty, classes, config, &[(&vx, &vy)])?;
    Ok(traces
        .iter()
        .map(|t| t.scores[0].accuracy)
        .fold(0.0, f64::max))
}

/// Pretrains from scratch. See [`pretrain_with`].
pub fn pretrain(train: &Dataset, val: Option<&Dataset>, config: &TrainConfig) -> Result<Checkpoint> {
    pretrain_with(train, val, config, |_| Ok(()))
}

/// Runs `config.epochs` epochs of joint training and calls `on_epoch` after
/// each. Within a step all gradients come from the same forward pass, then
/// SGD updates the encoder and projector and Adam updates the scores.
///
/// Labels are read only by the balanced sampler and the validation probe.
/// The probe works on copies and draws no random numbers.
pub fn pretrain_with<F>(
    train: &Dataset,
    val: Option<&Dataset>,
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<Checkpoint>
where
    F: FnMut(&EpochRecord) -> Result<()>,
{
    let mut ckpt = Checkpoint::fresh(config.clone(), train.length(), train.channels())?;
    let sampler = BatchSampler::new(train, config.batch_size, config.balanced_sampling);
    let mut sampler_rng = stream(config.seed, Stream::Sampler);
    let mut aug_rng = stream(config.seed, Stream::Augment);
    let probe_data = match val {
        Some(v) if config.probe_every > 0 && train.is_labeled() && v.is_labeled() => Some(v),
        _ => None,
    };
    let mut best_probe = f64::NEG_INFINITY;

    for epoch in 1..=config.epochs {
        let batches = sampler.epoch(&mut sampler_rng);
        if batches.is_empty() {
            return Err(Error::Dataset(format!(
                "training split of {} samples yields no batch of size >= 2",
                train.len()
            )));
        }
        let (mut c_sum, mut r_sum, mut t_sum, mut mi_sum, mut m_sum) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (batch_id, idx) in batches.iter().enumerate() {
            let anchors: Vec<&TimeSeries> = idx.iter().map(|&i| &train.samples()[i]).collect();
            let views = build_views(&ckpt, &anchors, &mut aug_rng)?;
            ckpt.model.zero_grad();
            let out = objective_step(&mut ckpt.model, &anchors, &views, config.tau, config.lambda)?;
            if !out.loss.total.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite loss at epoch {epoch} batch {batch_id} (contrastive {}, regularizer {}); {}",
                    out.loss.contrastive,
                    out.loss.regularizer,
                    describe_scores(&ckpt.scores)
                )));
            }
            let fail = |e: Error| {
                Error::Numerical(format!("epoch {epoch} batch {batch_id}: {e}"))
            };
            // Both updates are validated before either is applied.
            if config.augmentation.trains_scores() {
                if let Some(i) = out.grad_scores.iter().position(|g| !g.is_finite()) {
                    return Err(fail(Error::Numerical(format!(
                        "non-finite score gradient at component {i}"
                    ))));
                }
            }
            ckpt.model.step().map_err(fail)?;
            if config.augmentation.trains_scores() {
                ckpt.score_optimizer
                    .step(&mut [ckpt.scores.scores_mut()], &[&out.grad_scores])
                    .map_err(fail)?;
            }
            c_sum += out.loss.contrastive;
            r_sum += out.loss.regularizer;
            t_sum += out.loss.total;
            mi_sum += objective::mi_lower_bound(idx.len(), out.loss.contrastive);
            m_sum += out.mask_mean.unwrap_or(0.0);
        }
        let n = batches.len() as f64;
        ckpt.epoch = epoch;
        let probe = match probe_data {
            Some(v) if epoch % config.probe_every == 0 || epoch == config.epochs => {
                let acc = probe_accuracy(&ckpt.model.encoder, train, v, &config.probe)?;
                if acc > best_probe {
                    best_probe = acc;
                    ckpt.selected = Some(SelectedEncoder {
                        epoch,
                        encoder: ckpt.model.encoder.clone(),
                    });
                }
                Some(acc)
            }
            _ => None,
        };
        let record = EpochRecord {
            epoch,
            augmentation: config.augmentation.name(),
            contrastive: c_sum / n,
            regularizer: r_sum / n,
            total: t_sum / n,
            mask_mean: match config.augmentation {
                Augmentation::Baseline(_) => None,
                _ => Some(m_sum / n),
            },
            mi_lower_bound: mi_sum / n,
            steps: batches.len(),
            probe_accuracy: probe,
        };
        on_epoch(&record)?;
        ckpt.history.push(record);
    }
    Ok(ckpt)
}

/// FreRA view of one sample with a freshly drawn critical mask.
pub fn frera_view<R: Rng + ?Sized>(
    x: &TimeSeries,
    scores: &ImportanceVector,
    tau_w: f64,
    threshold: ThresholdMode,
    hard: bool,
    rng: &mut R,
) -> Result<Array2<f64>> {
    let mut mask = frera::sample_crit_mask(scores, tau_w, rng)?;
    if hard {
        mask = CritMask::fixed(mask.hardened());
    }
    let dist = compute_distortion(scores, threshold);
    Ok(frera::augment(x, &mask, &dist)?.values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{generate_synthetic, SyntheticSpec};

    fn tiny_data(seed: u64) -> Dataset {
        let mut spec = SyntheticSpec::three_class();
        spec.length = 32;
        spec.samples_per_class = 12;
        spec.classes[2].bins = vec![9, 11];
        spec.nuisance_bins = vec![4, 13];
        generate_synthetic(&spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            batch_size: 8,
            epochs: 2,
            profile: Profile::Small,
            probe_every: 0,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn rejects_invalid_config() {
        for cfg in [
            TrainConfig { batch_size: 1, ..tiny_config() },
            TrainConfig { epochs: 0, ..tiny_config() },
            TrainConfig { lambda: -1.0, ..tiny_config() },
            TrainConfig { lr_s: 0.0, ..tiny_config() },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::InvalidArgument(_))));
        }
    }

    #[test]
    fn same_seed_same_history() {
        let d = tiny_data(0);
        let a = pretrain(&d, None, &tiny_config()).unwrap();
        let b = pretrain(&d, None, &tiny_config()).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.scores, b.scores);
        assert_eq!(a.history.len(), 2);
    }

    #[test]
    fn labels_do_not_reach_the_loss() {
        let d = tiny_data(1);
        let cfg = TrainConfig {
            balanced_sampling: false,
            ..tiny_config()
        };
        let a = pretrain(&d, None, &cfg).unwrap();
        let b = pretrain(&d.without_labels(), None, &cfg).unwrap();
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn baseline_leaves_scores_untouched() {
        let d = tiny_data(2);
        let cfg = TrainConfig {
            augmentation: Augmentation::Baseline(BaselineKind::Jitter { sigma: 0.8 }),
            ..tiny_config()
        };
        let ckpt = pretrain(&d, None, &cfg).unwrap();
        let fresh = Checkpoint::fresh(cfg, d.length(), d.channels()).unwrap();
        assert_eq!(ckpt.scores, fresh.scores);
        assert!(ckpt.history.iter().all(|r| r.mask_mean.is_none() && r.augmentation == "jitter"));
    }

    #[test]
    fn probe_selects_an_epoch() {
        let d = tiny_data(3);
        let v = tiny_data(4);
        let cfg = TrainConfig {
            probe_every: 1,
            ..tiny_config()
        };
        let ckpt = pretrain(&d, Some(&v), &cfg).unwrap();
        assert!(ckpt.selected.is_some());
        assert!(ckpt.history.iter().all(|r| r.probe_accuracy.is_some()));
    }
}
