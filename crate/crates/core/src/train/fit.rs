use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::adam::{adam_step, AdamHyper, AdamState};
use super::schedule::{Plateau, PlateauAction};
use crate::autodiff::{Graph, Tensor};
use crate::data::ImageDataset;
use crate::error::{Error, Result};
use crate::vae::{build_elbo, init_params, VaeConfig, VaeParams};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub plateau_factor: f64,
    pub patience_epochs: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub n_runs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            initial_lr: 1e-4,
            plateau_factor: 0.1,
            patience_epochs: 3,
            batch_size: 64,
            max_epochs: 200,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            n_runs: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return fail(format!("initial_lr must be positive, got {}", self.initial_lr));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return fail(format!("plateau_factor must lie in (0, 1), got {}", self.plateau_factor));
        }
        if self.patience_epochs == 0 {
            return fail("patience_epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return fail("max_epochs must be at least 1".into());
        }
        if self.n_runs == 0 {
            return fail("n_runs must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("Adam betas must lie in [0, 1)".into());
        }
        if self.eps_adam.is_nan() || self.eps_adam <= 0.0 {
            return fail("eps_adam must be positive".into());
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps_adam,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub params: VaeParams,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Training hit `max_epochs` before the stopping rule fired.
    pub truncated: bool,
}

/// Shuffled partition of `0..n` into consecutive batches; the last batch
/// holds the remainder.
pub fn batch_indices(n: usize, batch_size: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

fn grads_to_params(grads: &mut crate::autodiff::Gradients, vars: [crate::Var; 10]) -> Result<VaeParams> {
    let tensors = vars
        .iter()
        .map(|&v| grads.remove(v).ok_or(Error::UnknownNode(v.index())))
        .collect::<Result<Vec<Tensor>>>()?;
    VaeParams::from_tensors(tensors)
}

/// One shuffled pass over `data`. Returns the mean negative ELBO of the
/// training images, each estimated with a single reparameterized sample.
pub fn train_epoch(
    params: &mut VaeParams,
    state: &mut AdamState,
    data: &ImageDataset,
    tconf: &TrainConfig,
    lr: f64,
    c: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Dataset("cannot train on an empty dataset".into()));
    }
    let latent = params.latent_dim();
    let hyper = tconf.adam();
    let mut total = 0.0;
    for batch in batch_indices(data.len(), tconf.batch_size, rng) {
        let m = batch.len();
        let eps: Vec<f64> = (0..m * latent).map(|_| rng.sample(StandardNormal)).collect();

        let mut g = Graph::new();
        let x = g.constant(data.gather(&batch));
        let e = g.constant(Tensor::matrix(m, latent, eps)?);
        let vars = params.attach(&mut g, true);
        let nodes = build_elbo(&mut g, x, &vars, Some(e), c)?;
        total -= g.value(nodes.elbo).data()[0];
        let loss = g.scale(nodes.elbo, -1.0 / m as f64)?;
        let mut grads = g.backward(loss)?;
        let grads = grads_to_params(&mut grads, vars.vars())?;
        adam_step(params, &grads, state, lr, &hyper)?;
    }
    Ok(total / data.len() as f64)
}

/// Mean negative ELBO with the posterior mean as latent.
pub fn evaluate_loss(params: &VaeParams, data: &ImageDataset, c: f64, batch_size: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Dataset("cannot evaluate on an empty dataset".into()));
    }
    let mut total = 0.0;
    let indices: Vec<usize> = (0..data.len()).collect();
    for batch in indices.chunks(batch_size.max(1)) {
        let mut g = Graph::new();
        let x = g.constant(data.gather(batch));
        let vars = params.attach(&mut g, false);
        let nodes = build_elbo(&mut g, x, &vars, None, c)?;
        total -= g.value(nodes.elbo).data()[0];
    }
    Ok(total / data.len() as f64)
}

/// Trains a freshly initialized model. See [`fit_with_init`].
pub fn fit(
    config: &VaeConfig,
    tconf: &TrainConfig,
    train: &ImageDataset,
    val: &ImageDataset,
) -> Result<FitOutcome> {
    let params = init_params(config)?;
    fit_with_init(params, config, tconf, train, val)
}

/// Trains `params` until the validation loss plateaus twice (the first
/// plateau decays the learning rate) or `max_epochs` is reached, and
/// returns the parameters of the best validation epoch.
///
/// Randomness (shuffling and reparameterization noise) comes from stream 1
/// of a ChaCha8 generator seeded with `config.seed`; stream 0 is used by
/// initialization.
pub fn fit_with_init(
    mut params: VaeParams,
    config: &VaeConfig,
    tconf: &TrainConfig,
    train: &ImageDataset,
    val: &ImageDataset,
) -> Result<FitOutcome> {
    config.validate()?;
    tconf.validate()?;
    if train.pixels() != config.input_dim || val.pixels() != config.input_dim {
        return Err(Error::InvalidConfig(format!(
            "model expects {} pixels, train has {} and validation {}",
            config.input_dim,
            train.pixels(),
            val.pixels()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut state = AdamState::new(&params);
    let mut lr = tconf.initial_lr;
    let mut plateau = Plateau::new(tconf.patience_epochs);
    let mut history = Vec::new();
    let mut best = (params.clone(), 0usize);
    let mut truncated = true;

    for epoch in 0..tconf.max_epochs {
        let train_loss = train_epoch(&mut params, &mut state, train, tconf, lr, config.c, &mut rng)?;
        let val_loss = evaluate_loss(&params, val, config.c, tconf.batch_size.max(256))?;
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
        });
        log::debug!("epoch {epoch}: train {train_loss:.4} val {val_loss:.4} lr {lr:e}");
        match plateau.observe(val_loss) {
            PlateauAction::Improved => best = (params.clone(), epoch),
            PlateauAction::Wait => {}
            PlateauAction::Decay => lr *= tconf.plateau_factor,
            PlateauAction::Stop => {
                truncated = false;
                break;
            }
        }
    }

    Ok(FitOutcome {
        params: best.0,
        best_epoch: best.1,
        best_val_loss: plateau.best(),
        history,
        truncated,
    })
}
