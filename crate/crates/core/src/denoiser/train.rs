use alloc::vec::Vec;

use super::{
    adam_step, denoiser_init, loss_and_grads, DenoiserParams, OptimizerState, TrainingExample,
};
use crate::diffusion::training_pair;
use crate::schedule::{alpha_schedule, build_bmap_stack, AlphaKind, BMapSpec};
use crate::{Error, ImageGrid, Result, RngStream};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub alpha_kind: AlphaKind,
    /// Number of diffusion steps `T`.
    pub steps: usize,
    /// B-map geometry; its height and width fix the image size.
    pub bmap: BMapSpec,
    pub hidden: usize,
    pub batch_size: usize,
    pub iterations: usize,
    pub lr: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// Desk-scale defaults: 32x32, T = 200, batch 4, lr 1e-4.
    pub fn desk(seed: u64) -> Self {
        Self {
            alpha_kind: AlphaKind::Cosine,
            steps: 200,
            bmap: BMapSpec::new(32, 32, 0.04),
            hidden: 8,
            batch_size: 4,
            iterations: 2000,
            lr: super::DEFAULT_LR,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: DenoiserParams,
    pub state: OptimizerState,
    /// One entry per iteration.
    pub losses: Vec<f64>,
}

/// Trains on `dataset` with the simplified epsilon-MSE objective.
///
/// Stream layout: weights from `(seed, [0])`, iteration `i` from
/// `(seed, [1, i])` with one substream per batch item.
pub fn train(config: &TrainConfig, dataset: &[ImageGrid]) -> Result<TrainOutput> {
    train_with_progress(config, dataset, |_, _| {})
}

/// [`train`] that reports `(iteration, loss)` after every update.
pub fn train_with_progress(
    config: &TrainConfig,
    dataset: &[ImageGrid],
    mut progress: impl FnMut(usize, f64),
) -> Result<TrainOutput> {
    if dataset.is_empty() {
        return Err(Error::Empty("training dataset is empty".into()));
    }
    if config.batch_size == 0 {
        return Err(crate::error::param_err!("batch size must be positive"));
    }
    let (h, w) = (config.bmap.height, config.bmap.width);
    for img in dataset {
        img.ensure_shape(h, w)?;
    }
    let sched = alpha_schedule(config.alpha_kind, config.steps)?;
    let stack = build_bmap_stack(&sched, &config.bmap)?;
    let mut params = denoiser_init(h, w, config.hidden, config.steps, config.seed)?;
    let mut state = OptimizerState::new(&params, config.lr);
    let mut losses = Vec::with_capacity(config.iterations);

    for it in 0..config.iterations {
        let iter_rng = RngStream::new(config.seed, &[1, it as u64]);
        let batch = (0..config.batch_size)
            .map(|b| {
                let mut rng = iter_rng.substream(b as u64);
                let pick = rng.below(dataset.len() as u64) as usize;
                let (t, x_t, target_eps) = training_pair(&dataset[pick], &sched, &stack, &mut rng)?;
                Ok(TrainingExample { t, x_t, target_eps })
            })
            .collect::<Result<Vec<_>>>()?;
        let (loss, grads) = loss_and_grads(&params, &batch)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite { iteration: it });
        }
        adam_step(&mut params, &grads, &mut state)?;
        losses.push(loss);
        progress(it, loss);
    }
    Ok(TrainOutput {
        params,
        state,
        losses,
    })
}
