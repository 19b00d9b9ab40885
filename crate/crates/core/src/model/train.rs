use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::arch::ArchitectureConfig;
use super::checkpoint::{ModelCheckpoint, TrainingMeta, CHECKPOINT_VERSION};
use super::network::Network;
use super::tensor::Scalar;
use crate::dataset::{splitmix64, stable_hash, Manifest, Split};
use crate::error::{Error, Result};
use crate::sampler::{next_batch, Batch, PatchSchedule, PatchSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// `sum((y - t)^2) / (2 * batch)`: squared error averaged over both outputs.
    Mse,
}

/// Stop once the epoch loss changes by less than `epsilon` for `patience`
/// consecutive epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub epsilon: f64,
    pub patience: usize,
}

impl Default for Convergence {
    fn default() -> Self {
        Convergence {
            epsilon: 1e-12,
            patience: 15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub schedule: PatchSchedule,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub loss: LossKind,
    pub convergence: Convergence,
    pub max_epochs: usize,
    pub seed: u64,
    /// Overrides `ceil(admissible records / batch_size)` batches per epoch.
    pub batches_per_epoch: Option<usize>,
    /// Validation batches scored after each epoch (0 disables validation).
    pub val_batches: usize,
}

impl TrainingConfig {
    pub fn new(schedule: PatchSchedule, seed: u64) -> Self {
        TrainingConfig {
            schedule,
            batch_size: 32,
            optimizer: OptimizerConfig::default(),
            loss: LossKind::Mse,
            convergence: Convergence::default(),
            max_epochs: 200,
            seed,
            batches_per_epoch: None,
            val_batches: 4,
        }
    }

    pub fn validate(&self, arch: &ArchitectureConfig) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.convergence.epsilon > 0.0) {
            return bad("convergence epsilon must be > 0".into());
        }
        if self.convergence.patience == 0 {
            return bad("patience must be >= 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1".into());
        }
        if self.batches_per_epoch == Some(0) {
            return bad("batches per epoch must be >= 1".into());
        }
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0 && o.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", o.learning_rate));
        }
        if !((0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.epsilon > 0.0) {
            return bad("Adam coefficients must satisfy 0 <= beta < 1 and epsilon > 0".into());
        }
        arch.validate()?;
        let min = arch.min_input();
        if let Some(s) = self.schedule.sizes().iter().find(|s| **s < min) {
            return bad(format!("patch size {s} below the architecture minimum {min}"));
        }
        Ok(())
    }
}

/// One completed epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub patch_size: usize,
    pub batches: usize,
    /// Mean training loss over the epoch's batches.
    pub loss: f64,
    pub val_loss: Option<f64>,
}

/// Adam with per-parameter first and second moment estimates.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    cfg: OptimizerConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: OptimizerConfig, lengths: &[usize]) -> Self {
        Adam {
            cfg,
            step: 0,
            m: lengths.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: lengths.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn update(&mut self, params: &mut [Vec<T>], grads: &[Vec<T>]) {
        self.step += 1;
        let c = &self.cfg;
        let t = self.step as i32;
        let step_size = T::lit(c.learning_rate * (1.0 - c.beta2.powi(t)).sqrt() / (1.0 - c.beta1.powi(t)));
        let (b1, b2, eps) = (T::lit(c.beta1), T::lit(c.beta2), T::lit(c.epsilon));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + one_b1 * g[i];
                v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
                p[i] -= step_size * m[i] / (v[i].sqrt() + eps);
            }
        }
    }
}

fn targets(batch: &Batch) -> Vec<[f32; 2]> {
    batch
        .labels
        .iter()
        .map(|l| [l.length as f32, l.angle as f32])
        .collect()
}

/// Trains on the manifest's train split (validating on its val split) with
/// image paths resolved against the manifest's directory.
pub fn train(
    manifest_path: &Path,
    arch: ArchitectureConfig,
    cfg: &TrainingConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<ModelCheckpoint> {
    let manifest = Manifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let train_src = PatchSource::from_manifest(&manifest, base, Split::Train)?;
    if train_src.is_empty() {
        return Err(Error::InvalidInput("manifest has no training records".into()));
    }
    let val_src = PatchSource::from_manifest(&manifest, base, Split::Val)?;
    let val = (!val_src.is_empty()).then_some(&val_src);
    train_on(&train_src, val, arch, cfg, on_epoch)
}

/// Runs epochs at `schedule[e mod len]` until the loss settles or
/// `max_epochs` is reached. Labels are re-expressed against the schedule's
/// largest size, which becomes the checkpoint's `N_max`.
pub fn train_on(
    train_src: &PatchSource,
    val_src: Option<&PatchSource>,
    arch: ArchitectureConfig,
    cfg: &TrainingConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<ModelCheckpoint> {
    cfg.validate(&arch)?;
    let n_max = cfg.schedule.n_max();
    let train_src = train_src.renormalized(n_max)?;
    let val_src = val_src.map(|v| v.renormalized(n_max)).transpose()?;
    for &n in cfg.schedule.sizes() {
        if train_src.admissible_count(n) == 0 {
            return Err(Error::Exhausted {
                patch_size: n,
                attempts: 0,
            });
        }
    }

    let mut net = Network::<f32>::new(arch, cfg.seed)?;
    let mut adam = Adam::new(cfg.optimizer, &net.param_lengths());
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(cfg.seed ^ 0x7472_6169_6e00));
    let mut history: Vec<EpochLog> = Vec::new();
    let mut streak = 0;
    let mut converged = false;

    for epoch in 0..cfg.max_epochs {
        let n = cfg.schedule.patch_size_for_epoch(epoch);
        let batches = cfg
            .batches_per_epoch
            .unwrap_or_else(|| train_src.batches_per_epoch(n, cfg.batch_size));
        let mut total = 0.0;
        for _ in 0..batches {
            let batch = next_batch(&train_src, n, cfg.batch_size, &mut rng)?;
            let x = net.input_tensor(&batch.patches)?;
            let (loss, grads) = net.loss_and_grad(x, &targets(&batch));
            let loss = f64::from(loss);
            if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch, loss });
            }
            adam.update(net.params_mut(), &grads);
            total += loss;
        }
        let loss = total / batches as f64;
        let val_loss = match &val_src {
            Some(v) if cfg.val_batches > 0 && v.admissible_count(n) > 0 => Some(validation_loss(&net, v, n, cfg, epoch)?),
            _ => None,
        };
        let log = EpochLog {
            epoch,
            patch_size: n,
            batches,
            loss,
            val_loss,
        };
        on_epoch(&log);
        if let Some(prev) = history.last() {
            if (loss - prev.loss).abs() < cfg.convergence.epsilon {
                streak += 1;
            } else {
                streak = 0;
            }
        }
        history.push(log);
        if streak >= cfg.convergence.patience {
            converged = true;
            break;
        }
    }

    let final_loss = history.last().map_or(f64::NAN, |h| h.loss);
    Ok(ModelCheckpoint {
        network: net,
        meta: TrainingMeta {
            format_version: CHECKPOINT_VERSION,
            arch,
            n_max,
            schedule: cfg.schedule.sizes().to_vec(),
            epochs_run: history.len(),
            final_loss,
            converged,
            seed: cfg.seed,
            config: Some(cfg.clone()),
            history,
        },
    })
}

// Validation draws come from their own stream so they never perturb training.
fn validation_loss(net: &Network<f32>, src: &PatchSource, n: usize, cfg: &TrainingConfig, epoch: usize) -> Result<f64> {
    let seed = stable_hash(&[&cfg.seed.to_le_bytes(), b"val", &(epoch as u64).to_le_bytes()]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..cfg.val_batches {
        let batch = next_batch(src, n, cfg.batch_size, &mut rng)?;
        total += f64::from(net.loss(net.input_tensor(&batch.patches)?, &targets(&batch)));
    }
    Ok(total / cfg.val_batches as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::normalize_labels;
    use crate::image::Image;
    use crate::kernel::BlurParams;
    use crate::sampler::LoadedRecord;
    use std::sync::Arc;

    fn source(params: &[(f64, f64)], n_max: usize) -> PatchSource {
        let recs = params
            .iter()
            .enumerate()
            .map(|(i, &(r, phi))| {
                let p = BlurParams::new(r, phi).unwrap();
                LoadedRecord {
                    source_id: format!("s{i}"),
                    params: p,
                    labels: normalize_labels(&p, n_max).unwrap(),
                    image: Arc::new(
                        Image::from_fn(24, 24, 3, |c, y, x| ((c * 5 + y * 7 + x * 3 + i) % 17) as f32 / 16.0).unwrap(),
                    ),
                }
            })
            .collect();
        PatchSource::new(n_max, recs)
    }

    fn small_cfg(sizes: Vec<usize>, max_epochs: usize) -> TrainingConfig {
        let mut cfg = TrainingConfig::new(PatchSchedule::new(sizes, 16).unwrap(), 5);
        cfg.batch_size = 4;
        cfg.max_epochs = max_epochs;
        cfg.batches_per_epoch = Some(2);
        cfg
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let cfg = OptimizerConfig {
            learning_rate: 0.1,
            ..Default::default()
        };
        let mut adam = Adam::<f64>::new(cfg, &[2]);
        let mut p = vec![vec![1.0, -1.0]];
        adam.update(&mut p, &[vec![3.0, -0.5]]);
        assert!((p[0][0] - 0.9).abs() < 1e-6);
        assert!((p[0][1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn epoch_cap_and_history() {
        let src = source(&[(1.0, 0.0), (5.0, 30.0)], 20);
        let arch = ArchitectureConfig::new(false, 32);
        let mut seen = Vec::new();
        let ck = train_on(&src, None, arch, &small_cfg(vec![16, 20], 3), &mut |l| seen.push(l.patch_size)).unwrap();
        assert_eq!(ck.meta.epochs_run, 3);
        assert_eq!(ck.meta.history.len(), 3);
        assert!(!ck.meta.converged);
        assert_eq!(ck.meta.n_max, 20);
        assert_eq!(seen, vec![16, 20, 16]);

        let one = train_on(&src, None, arch, &small_cfg(vec![16], 1), &mut |_| {}).unwrap();
        assert_eq!(one.meta.epochs_run, 1);
        assert!(!one.meta.converged);
    }

    #[test]
    fn training_is_reproducible() {
        let src = source(&[(1.0, 0.0), (9.0, -45.0), (4.0, 60.0)], 20);
        let arch = ArchitectureConfig::new(false, 32);
        let cfg = small_cfg(vec![16, 18], 2);
        let a = train_on(&src, Some(&src), arch, &cfg, &mut |_| {}).unwrap();
        let b = train_on(&src, Some(&src), arch, &cfg, &mut |_| {}).unwrap();
        assert_eq!(a, b);
        assert!(a.meta.history.iter().all(|h| h.val_loss.is_some()));
    }

    #[test]
    fn constant_target_is_learned() {
        let src = source(&[(1.0, 0.0)], 16);
        let arch = ArchitectureConfig::new(false, 32);
        let mut cfg = small_cfg(vec![16], 150);
        cfg.optimizer.learning_rate = 1e-2;
        let ck = train_on(&src, None, arch, &cfg, &mut |_| {}).unwrap();
        assert!(ck.meta.final_loss < 1e-4, "loss {}", ck.meta.final_loss);
        use crate::model::Predictor;
        let patch = src.records()[0].image.crop(0, 0, 16, 16).unwrap();
        let p = ck.predict_params(&[patch]).unwrap()[0];
        assert!((p.r - 1.0).abs() < 0.5, "r = {}", p.r);
        assert!(p.phi.abs() < 5.0, "phi = {}", p.phi);
    }

    #[test]
    fn convergence_stops_early() {
        let src = source(&[(1.0, 0.0)], 16);
        let arch = ArchitectureConfig::new(false, 32);
        let mut cfg = small_cfg(vec![16], 50);
        cfg.convergence = Convergence {
            epsilon: 1e9,
            patience: 3,
        };
        let ck = train_on(&src, None, arch, &cfg, &mut |_| {}).unwrap();
        assert!(ck.meta.converged);
        assert_eq!(ck.meta.epochs_run, 4);
    }

    #[test]
    fn config_and_exhaustion_errors() {
        let src = source(&[(30.0, 0.0)], 33);
        let arch = ArchitectureConfig::new(false, 32);
        let cfg = small_cfg(vec![16, 33], 2);
        assert!(matches!(
            train_on(&src, None, arch, &cfg, &mut |_| {}),
            Err(Error::Exhausted { patch_size: 16, .. })
        ));
        let mut bad = small_cfg(vec![16], 2);
        bad.convergence.patience = 0;
        assert!(train_on(&src, None, arch, &bad, &mut |_| {}).is_err());
        let mut bad = small_cfg(vec![16], 2);
        bad.optimizer.learning_rate = 0.0;
        assert!(train_on(&src, None, arch, &bad, &mut |_| {}).is_err());
        let with5 = ArchitectureConfig::new(true, 32);
        assert!(matches!(
            train_on(&src, None, with5, &small_cfg(vec![16], 1), &mut |_| {}),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn divergence_is_reported() {
        let src = source(&[(1.0, 0.0), (5.0, 10.0)], 16);
        let arch = ArchitectureConfig::new(false, 32);
        let mut cfg = small_cfg(vec![16], 3);
        cfg.optimizer.learning_rate = 1e300;
        match train_on(&src, None, arch, &cfg, &mut |_| {}) {
            Err(Error::Divergence { .. }) => {}
            other => panic!("expected divergence, got {:?}", other.map(|c| c.meta.history)),
        }
    }
}
