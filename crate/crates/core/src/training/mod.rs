//! Adversarial training: the three-phase step, checkpoints, and the
//! resumable run loop.

mod checkpoint;
mod run;

pub use checkpoint::{load_model, model_version, LoadedModel, Progress, RngState};
pub use run::{checkpoint_name, run, RunOptions, RunSummary, LATEST_CHECKPOINT, LOSS_LOG};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::affect::EmotionLabel;
use crate::error::{Error, Result};
use crate::losses::{
    discriminator_loss, discriminator_loss_grad, generator_loss, generator_loss_grad, identity_loss, identity_loss_backward,
    l1_grad, reconstruction_loss, total_generator_loss, GeneratorObjective, LossReport, LossWeights,
};
use crate::networks::{Caae, NetworkConfig, PerceptualExtractor};
use crate::nn::{Adam, AdamConfig, Mode, Network};
use crate::tensor::{Real, Tensor};

const PRIOR_STREAM: u64 = 0x5052_494F_52;
const DATA_STREAM: u64 = 0x4441_5441;

/// How many optimizer steps each network takes per batch, in the order
/// D_z, D_img, E+G.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UpdateSchedule {
    pub dz: u32,
    pub dimg: u32,
    pub eg: u32,
}

impl Default for UpdateSchedule {
    fn default() -> Self {
        Self { dz: 1, dimg: 1, eg: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub network: NetworkConfig,
    pub adam: AdamConfig,
    pub batch_size: usize,
    /// The identity loss uses the first `identity_subset` images of each
    /// batch.
    pub identity_subset: usize,
    pub weights: LossWeights,
    pub objective: GeneratorObjective,
    pub schedule: UpdateSchedule,
    pub seed: u64,
    /// Total optimizer steps; ignored when `epochs` is set.
    pub steps: u64,
    pub epochs: Option<u64>,
    /// Steps between checkpoints; 0 disables periodic checkpoints.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            network: NetworkConfig::default(),
            adam: AdamConfig::default(),
            batch_size: 49,
            identity_subset: 16,
            weights: LossWeights::default(),
            objective: GeneratorObjective::default(),
            schedule: UpdateSchedule::default(),
            seed: 0,
            steps: 2000,
            epochs: None,
            checkpoint_every: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.weights.validate()?;
        let a = &self.adam;
        let rates_ok = a.learning_rate > 0.0
            && (0.0..1.0).contains(&a.beta1)
            && (0.0..1.0).contains(&a.beta2)
            && a.epsilon > 0.0;
        if !rates_ok {
            return Err(Error::Config("adam rates must be positive with betas in [0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.identity_subset == 0 || self.identity_subset > self.batch_size {
            return Err(Error::Config(format!(
                "identity_subset {} must be in 1..={}",
                self.identity_subset, self.batch_size
            )));
        }
        let s = &self.schedule;
        if s.dz == 0 || s.dimg == 0 || s.eg == 0 {
            return Err(Error::Config("every schedule entry must be at least 1".into()));
        }
        Ok(())
    }

    /// Total steps for a dataset with `batches_per_epoch` batches.
    pub fn total_steps(&self, batches_per_epoch: usize) -> u64 {
        match self.epochs {
            Some(e) => e * batches_per_epoch as u64,
            None => self.steps,
        }
    }

    /// Seed of the batch order.
    pub fn data_seed(&self) -> u64 {
        self.seed ^ DATA_STREAM
    }
}

/// I.i.d. uniform samples over `[-1, 1]^dim`.
pub fn sample_prior<T: Real>(rng: &mut impl Rng, n: usize, dim: usize) -> Tensor<T> {
    let data = (0..n * dim).map(|_| T::lit(rng.random_range(-1.0..=1.0))).collect();
    Tensor::from_vec(&[n, dim], data).expect("shape matches")
}

/// Values of the generator-side losses for one batch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GeneratorTerms {
    pub rec: f64,
    pub iden: f64,
    pub z_adv_g: f64,
    pub img_adv_g: f64,
    pub total: f64,
}

/// Options shared by the generator objective evaluations.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveOptions {
    pub weights: LossWeights,
    pub objective: GeneratorObjective,
    pub identity_subset: usize,
}

impl From<&TrainConfig> for ObjectiveOptions {
    fn from(c: &TrainConfig) -> Self {
        Self {
            weights: c.weights,
            objective: c.objective,
            identity_subset: c.identity_subset,
        }
    }
}

/// Generator-side losses given the encoder and generator outputs of the
/// current forward pass. With `backward`, accumulates the gradient of the
/// weighted total into E and G (the discriminators' grads are also touched
/// and must be cleared before their own updates).
pub fn generator_losses<T: Real>(
    model: &mut Caae<T>,
    extractor: &mut PerceptualExtractor<T>,
    x: &Tensor<T>,
    labels: &[EmotionLabel],
    z: &Tensor<T>,
    x_gen: &Tensor<T>,
    opts: &ObjectiveOptions,
    d_mode: Mode,
    backward: bool,
) -> Result<GeneratorTerms> {
    let w = opts.weights;
    let n = x.batch();
    let k = opts.identity_subset.min(n);

    let rec = reconstruction_loss(x, x_gen)?;
    let mut dx_gen = if backward && w.rec > 0.0 {
        l1_grad(x, x_gen, w.rec)
    } else {
        Tensor::zeros(x_gen.shape())
    };

    let x_sub = x.slice_batch(0, k);
    let gen_sub = x_gen.slice_batch(0, k);
    let iden = if backward && w.iden > 0.0 {
        let reference = extractor.features(&x_sub);
        let (iden, d_sub) = identity_loss_backward(extractor, &reference, &gen_sub, w.iden)?;
        for (d, s) in dx_gen.data_mut()[..d_sub.len()].iter_mut().zip(d_sub.data()) {
            *d += *s;
        }
        iden
    } else {
        identity_loss(extractor, &x_sub, &gen_sub)?
    };

    let p_img = model.dimg.forward(x_gen, labels, d_mode);
    let img_adv_g = generator_loss(&p_img, opts.objective)?;
    if backward && w.img_adv > 0.0 {
        let dp = generator_loss_grad(&p_img, opts.objective, w.img_adv);
        dx_gen.add_assign(&model.dimg.backward(&dp));
    }

    let p_z = model.dz.forward(z, d_mode);
    let z_adv_g = generator_loss(&p_z, opts.objective)?;
    if backward {
        let mut dz = model.generator.backward(&dx_gen);
        if w.z_adv > 0.0 {
            let dp = generator_loss_grad(&p_z, opts.objective, w.z_adv);
            dz.add_assign(&model.dz.backward(&dp));
        }
        model.encoder.backward(&dz);
    }

    Ok(GeneratorTerms {
        rec,
        iden,
        z_adv_g,
        img_adv_g,
        total: total_generator_loss(rec, iden, z_adv_g, img_adv_g, &w),
    })
}

/// Full generator objective `λ·[L_rec, L_iden, L_z, L_img]` on `x` edited
/// with its own labels, running E and G in `mode` and both discriminators
/// with batch statistics.
pub fn generator_objective<T: Real>(
    model: &mut Caae<T>,
    extractor: &mut PerceptualExtractor<T>,
    x: &Tensor<T>,
    labels: &[EmotionLabel],
    opts: &ObjectiveOptions,
    mode: Mode,
    backward: bool,
) -> Result<GeneratorTerms> {
    let z = model.encoder.forward(x, mode);
    let x_gen = model.generator.forward(&z, labels, mode);
    let d_mode = if mode == Mode::Eval { Mode::Eval } else { Mode::TrainFrozen };
    generator_losses(model, extractor, x, labels, &z, &x_gen, opts, d_mode, backward)
}

struct Optimizers<T> {
    encoder: Adam<T>,
    generator: Adam<T>,
    dz: Adam<T>,
    dimg: Adam<T>,
}

impl<T: Real> Optimizers<T> {
    fn new(c: AdamConfig) -> Self {
        Self {
            encoder: Adam::new(c),
            generator: Adam::new(c),
            dz: Adam::new(c),
            dimg: Adam::new(c),
        }
    }

    fn get_mut(&mut self, name: &str) -> &mut Adam<T> {
        match name {
            "encoder" => &mut self.encoder,
            "generator" => &mut self.generator,
            "dz" => &mut self.dz,
            "dimg" => &mut self.dimg,
            other => panic!("no optimizer for {other}"),
        }
    }
}

/// Which sub-update of a step just finished; passed to step observers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    LatentDiscriminator,
    ImageDiscriminator,
    EncoderGenerator,
}

/// Networks, optimizers, and progress of one training run.
pub struct Trainer<T> {
    pub config: TrainConfig,
    pub model: Caae<T>,
    pub extractor: PerceptualExtractor<T>,
    optimizers: Optimizers<T>,
    prior: ChaCha8Rng,
    pub step: u64,
    pub epoch: u64,
    pub batch_in_epoch: usize,
    /// Training-set size recorded in the checkpoint this trainer resumed.
    resumed_dataset_len: Option<usize>,
}

impl<T: Real> Trainer<T> {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = Caae::new(&config.network, config.seed)?;
        let extractor = PerceptualExtractor::from_config(&config.network.extractor)?;
        let mut prior = ChaCha8Rng::seed_from_u64(config.seed);
        prior.set_stream(PRIOR_STREAM);
        Ok(Self {
            optimizers: Optimizers::new(config.adam),
            config,
            model,
            extractor,
            prior,
            step: 0,
            epoch: 0,
            batch_in_epoch: 0,
            resumed_dataset_len: None,
        })
    }

    /// One training step on a batch; see [`Trainer::train_step_observed`].
    pub fn train_step(&mut self, x: &Tensor<T>, labels: &[EmotionLabel]) -> Result<LossReport> {
        self.train_step_observed(x, labels, |_, _| {})
    }

    /// Runs, in order, the D_z update(s), the D_img update(s), and the
    /// joint E+G update(s), calling `observe` after each phase. Each update
    /// is one Adam step on that network's parameters only.
    pub fn train_step_observed(
        &mut self,
        x: &Tensor<T>,
        labels: &[EmotionLabel],
        mut observe: impl FnMut(Phase, &mut Self),
    ) -> Result<LossReport> {
        if x.batch() != self.config.batch_size || labels.len() != x.batch() {
            return Err(Error::Shape(format!(
                "batch of {} images / {} labels, configured for {}",
                x.batch(),
                labels.len(),
                self.config.batch_size
            )));
        }
        let step = self.step + 1;
        let non_finite = |what: &str, report: &LossReport| Error::NonFinite {
            step,
            detail: format!("{what}; report {}", serde_json::to_string(report).unwrap_or_default()),
        };
        let mut report = LossReport {
            step,
            ..Default::default()
        };
        let n = x.batch();
        let z_dim = self.config.network.z_dim;

        // Encoder and generator outputs are shared by all three phases; the
        // discriminator phases treat them as constants.
        let mut z = self.model.encoder.forward(x, Mode::Train);
        let mut x_gen = self.model.generator.forward(&z, labels, Mode::Train);

        for i in 0..self.config.schedule.dz {
            let prior = sample_prior::<T>(&mut self.prior, n, z_dim);
            let dz = &mut self.model.dz;
            dz.zero_grad();
            let p_real = dz.forward(&prior, Mode::Train);
            let (g_real, _) = discriminator_loss_grad(&p_real, &p_real);
            dz.backward(&g_real);
            let p_fake = dz.forward(&z, Mode::Train);
            let (_, g_fake) = discriminator_loss_grad(&p_real, &p_fake);
            dz.backward(&g_fake);
            let loss = discriminator_loss(&p_real, &p_fake)?;
            if i == 0 {
                report.z_adv_d = loss;
            }
            if !loss.is_finite() {
                return Err(non_finite("latent discriminator loss", &report));
            }
            self.optimizers.dz.step(&mut self.model.dz);
            self.model.dz.commit_stats();
        }
        observe(Phase::LatentDiscriminator, self);

        for i in 0..self.config.schedule.dimg {
            let dimg = &mut self.model.dimg;
            dimg.zero_grad();
            let p_real = dimg.forward(x, labels, Mode::Train);
            let (g_real, _) = discriminator_loss_grad(&p_real, &p_real);
            dimg.backward(&g_real);
            let p_fake = dimg.forward(&x_gen, labels, Mode::Train);
            let (_, g_fake) = discriminator_loss_grad(&p_real, &p_fake);
            dimg.backward(&g_fake);
            let loss = discriminator_loss(&p_real, &p_fake)?;
            if i == 0 {
                report.img_adv_d = loss;
            }
            if !loss.is_finite() {
                return Err(non_finite("image discriminator loss", &report));
            }
            self.optimizers.dimg.step(&mut self.model.dimg);
            self.model.dimg.commit_stats();
        }
        observe(Phase::ImageDiscriminator, self);

        let opts = ObjectiveOptions::from(&self.config);
        for i in 0..self.config.schedule.eg {
            if i > 0 {
                z = self.model.encoder.forward(x, Mode::Train);
                x_gen = self.model.generator.forward(&z, labels, Mode::Train);
            }
            self.model.encoder.zero_grad();
            self.model.generator.zero_grad();
            let terms = generator_losses(
                &mut self.model,
                &mut self.extractor,
                x,
                labels,
                &z,
                &x_gen,
                &opts,
                Mode::TrainFrozen,
                true,
            )?;
            if i == 0 {
                report.rec = terms.rec;
                report.iden = terms.iden;
                report.z_adv_g = terms.z_adv_g;
                report.img_adv_g = terms.img_adv_g;
                report.total = terms.total;
            }
            if !report.is_finite() {
                return Err(non_finite("generator objective", &report));
            }
            self.optimizers.encoder.step(&mut self.model.encoder);
            self.optimizers.generator.step(&mut self.model.generator);
        }
        self.model.encoder.commit_stats();
        self.model.generator.commit_stats();
        // Discriminator grads were touched by the generator backward pass.
        self.model.dz.zero_grad();
        self.model.dimg.zero_grad();
        observe(Phase::EncoderGenerator, self);

        self.step = step;
        Ok(report)
    }

    pub fn optimizer_steps(&self) -> [u64; 4] {
        let o = &self.optimizers;
        [o.encoder.steps, o.generator.steps, o.dz.steps, o.dimg.steps]
    }
}
