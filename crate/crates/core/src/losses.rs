//! Reconstruction, identity, and adversarial losses with their gradients,
//! plus a finite-difference gradient checker.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::PerceptualExtractor;
use crate::nn::{Network, Slot};
use crate::tensor::{Real, Tensor};

/// Lower clamp for every logarithm argument; the upper clamp is `1 - LOG_EPS`.
pub const LOG_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub rec: f64,
    pub iden: f64,
    pub z_adv: f64,
    pub img_adv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            rec: 1.0,
            iden: 1.0 / 3.0,
            z_adv: 0.01,
            img_adv: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("rec", self.rec), ("iden", self.iden), ("z_adv", self.z_adv), ("img_adv", self.img_adv)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("loss weight {name} = {v} must be finite and nonnegative")));
            }
        }
        Ok(())
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            rec: self.rec * k,
            iden: self.iden * k,
            z_adv: self.z_adv * k,
            img_adv: self.img_adv * k,
        }
    }
}

/// Which generator-side adversarial objective is minimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorObjective {
    /// `-mean log D(fake)`.
    #[default]
    NonSaturating,
    /// `mean log(1 - D(fake))`.
    StrictMinimax,
}

/// Per-step loss values; the generator-side total is recomputable from the
/// components and weights.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub step: u64,
    pub rec: f64,
    pub iden: f64,
    pub z_adv_d: f64,
    pub z_adv_g: f64,
    pub img_adv_d: f64,
    pub img_adv_g: f64,
    pub total: f64,
}

impl LossReport {
    pub fn recompute_total(&self, w: &LossWeights) -> f64 {
        total_generator_loss(self.rec, self.iden, self.z_adv_g, self.img_adv_g, w)
    }

    pub fn is_finite(&self) -> bool {
        [self.rec, self.iden, self.z_adv_d, self.z_adv_g, self.img_adv_d, self.img_adv_g, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

pub fn total_generator_loss(rec: f64, iden: f64, z_adv_g: f64, img_adv_g: f64, w: &LossWeights) -> f64 {
    w.rec * rec + w.iden * iden + w.z_adv * z_adv_g + w.img_adv * img_adv_g
}

fn same_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    if a.is_empty() {
        return Err(Error::Shape("empty tensors".into()));
    }
    Ok(())
}

/// Mean absolute difference over all elements.
pub fn l1<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    same_shape(a, b)?;
    let sum: f64 = a.data().iter().zip(b.data()).map(|(p, q)| (p.f64() - q.f64()).abs()).sum();
    Ok(sum / a.len() as f64)
}

/// Gradient of `scale · l1(target, x)` with respect to `x`; zero where the
/// two agree exactly.
pub fn l1_grad<T: Real>(target: &Tensor<T>, x: &Tensor<T>, scale: f64) -> Tensor<T> {
    assert_eq!(target.shape(), x.shape());
    let k = T::lit(scale / x.len() as f64);
    let data = x
        .data()
        .iter()
        .zip(target.data())
        .map(|(&v, &t)| {
            if v > t {
                k
            } else if v < t {
                -k
            } else {
                T::zero()
            }
        })
        .collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

pub fn reconstruction_loss<T: Real>(x: &Tensor<T>, x_gen: &Tensor<T>) -> Result<f64> {
    l1(x, x_gen)
}

/// Sum over the five taps of the mean absolute feature difference.
pub fn identity_loss<T: Real>(extractor: &PerceptualExtractor<T>, x: &Tensor<T>, x_gen: &Tensor<T>) -> Result<f64> {
    same_shape(x, x_gen)?;
    let fa = extractor.features(x);
    let fb = extractor.features(x_gen);
    fa.iter().zip(&fb).map(|(a, b)| l1(a, b)).sum()
}

/// Identity loss and `scale ×` its gradient with respect to `x_gen`,
/// given precomputed features of the reference images.
pub fn identity_loss_backward<T: Real>(
    extractor: &mut PerceptualExtractor<T>,
    reference: &[Tensor<T>],
    x_gen: &Tensor<T>,
    scale: f64,
) -> Result<(f64, Tensor<T>)> {
    let feats = extractor.forward(x_gen);
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(feats.len());
    for (r, f) in reference.iter().zip(&feats) {
        loss += l1(r, f)?;
        grads.push(l1_grad(r, f, scale));
    }
    Ok((loss, extractor.backward(&grads)))
}

fn clamp_p(p: f64) -> f64 {
    p.clamp(LOG_EPS, 1.0 - LOG_EPS)
}

fn is_clamped(p: f64) -> bool {
    !(LOG_EPS..=1.0 - LOG_EPS).contains(&p)
}

fn probs<T: Real>(p: &Tensor<T>) -> Result<Vec<f64>> {
    if p.is_empty() {
        return Err(Error::Shape("empty discriminator batch".into()));
    }
    Ok(p.data().iter().map(|v| v.f64()).collect())
}

/// `-mean log D(real) - mean log(1 - D(fake))`.
pub fn discriminator_loss<T: Real>(p_real: &Tensor<T>, p_fake: &Tensor<T>) -> Result<f64> {
    let (r, f) = (probs(p_real)?, probs(p_fake)?);
    if r.len() != f.len() {
        return Err(Error::Shape(format!("{} real vs {} fake outputs", r.len(), f.len())));
    }
    let real = -r.iter().map(|&p| clamp_p(p).ln()).sum::<f64>() / r.len() as f64;
    let fake = -f.iter().map(|&p| (1.0 - clamp_p(p)).ln()).sum::<f64>() / f.len() as f64;
    Ok(real + fake)
}

/// Gradients of [`discriminator_loss`] with respect to both output batches.
pub fn discriminator_loss_grad<T: Real>(p_real: &Tensor<T>, p_fake: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let nr = p_real.len() as f64;
    let nf = p_fake.len() as f64;
    let gr = p_real.map(|p| {
        let p = p.f64();
        T::lit(if is_clamped(p) { 0.0 } else { -1.0 / (p * nr) })
    });
    let gf = p_fake.map(|p| {
        let p = p.f64();
        T::lit(if is_clamped(p) { 0.0 } else { 1.0 / ((1.0 - p) * nf) })
    });
    (gr, gf)
}

pub fn generator_loss<T: Real>(p_fake: &Tensor<T>, objective: GeneratorObjective) -> Result<f64> {
    let f = probs(p_fake)?;
    let n = f.len() as f64;
    Ok(match objective {
        GeneratorObjective::NonSaturating => -f.iter().map(|&p| clamp_p(p).ln()).sum::<f64>() / n,
        GeneratorObjective::StrictMinimax => f.iter().map(|&p| (1.0 - clamp_p(p)).ln()).sum::<f64>() / n,
    })
}

/// `scale ×` the gradient of [`generator_loss`] with respect to `p_fake`.
pub fn generator_loss_grad<T: Real>(p_fake: &Tensor<T>, objective: GeneratorObjective, scale: f64) -> Tensor<T> {
    let n = p_fake.len() as f64;
    p_fake.map(|p| {
        let p = p.f64();
        if is_clamped(p) {
            return T::zero();
        }
        T::lit(
            scale
                * match objective {
                    GeneratorObjective::NonSaturating => -1.0 / (p * n),
                    GeneratorObjective::StrictMinimax => -1.0 / ((1.0 - p) * n),
                },
        )
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub samples: usize,
    pub step: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Most sampled coordinates that may be skipped as non-differentiable,
    /// as a fraction of `samples`.
    pub max_kink_fraction: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            samples: 200,
            step: 1e-6,
            rel_tol: 1e-3,
            abs_tol: 1e-6,
            max_kink_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradMismatch {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub nonzero: usize,
    /// Coordinates skipped because the step straddles a kink (ReLU or L1
    /// at zero).
    pub kinks: usize,
    pub max_rel_error: f64,
    pub failures: Vec<GradMismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn into_result(self) -> Result<Self> {
        match self.failures.first() {
            None => Ok(self),
            Some(m) => Err(Error::GradientCheck(format!(
                "{}[{}]: analytic {:.6e}, numeric {:.6e} ({} of {} failed)",
                m.param,
                m.index,
                m.analytic,
                m.numeric,
                self.failures.len(),
                self.checked
            ))),
        }
    }
}

fn rel_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale > 0.0 {
        (a - b).abs() / scale
    } else {
        0.0
    }
}

/// Compares analytic and central-difference gradients on randomly sampled
/// parameters of `net` whose names satisfy `select`.
///
/// `loss(net, backward)` must evaluate the loss deterministically and, when
/// `backward` is true, accumulate its gradient into the parameter grads.
/// A mismatch is excused only where the forward and backward one-sided
/// differences also disagree, i.e. the step straddles a kink; such
/// coordinates are replaced by fresh samples, at most `max_kink_fraction`
/// of them.
pub fn check_gradients<N: Network<f64> + ?Sized>(
    net: &mut N,
    select: impl Fn(&str) -> bool,
    mut loss: impl FnMut(&mut N, bool) -> f64,
    cfg: &GradCheckConfig,
) -> GradCheckReport {
    net.zero_grad();
    let base = loss(net, true);
    let mut params: Vec<(String, Vec<f64>)> = Vec::new();
    net.visit_state(&mut |name, slot| {
        if let Slot::Param(p) = slot {
            if select(name) {
                params.push((name.to_string(), p.grad.data().to_vec()));
            }
        }
    });
    let total: usize = params.iter().map(|(_, g)| g.len()).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let max_kinks = (cfg.samples as f64 * cfg.max_kink_fraction).floor() as usize;
    let picks = index::sample(&mut rng, total, (cfg.samples + max_kinks).min(total)).into_vec();
    let mut report = GradCheckReport::default();
    for flat in picks {
        if report.checked == cfg.samples {
            break;
        }
        let (mut which, mut idx) = (0, flat);
        while idx >= params[which].1.len() {
            idx -= params[which].1.len();
            which += 1;
        }
        let name = params[which].0.clone();
        let analytic = params[which].1[idx];
        let mut eval = |delta: f64, net: &mut N| {
            nudge(net, &name, idx, delta);
            let v = loss(net, false);
            nudge(net, &name, idx, -delta);
            v
        };
        let plus = eval(cfg.step, net);
        let minus = eval(-cfg.step, net);
        let numeric = (plus - minus) / (2.0 * cfg.step);
        let diff = (analytic - numeric).abs();
        let rel = rel_error(analytic, numeric);
        let mismatch = diff > cfg.abs_tol && rel > cfg.rel_tol;
        if mismatch {
            let forward = (plus - base) / cfg.step;
            let backward = (base - minus) / cfg.step;
            let kink = (forward - backward).abs() > cfg.abs_tol && rel_error(forward, backward) > cfg.rel_tol;
            if kink && report.kinks < max_kinks {
                report.kinks += 1;
                continue;
            }
        }
        report.checked += 1;
        if analytic != 0.0 {
            report.nonzero += 1;
        }
        if diff > cfg.abs_tol {
            report.max_rel_error = report.max_rel_error.max(rel);
        }
        if mismatch {
            report.failures.push(GradMismatch {
                param: name,
                index: idx,
                analytic,
                numeric,
            });
        }
    }
    report
}

fn nudge<N: Network<f64> + ?Sized>(net: &mut N, name: &str, idx: usize, delta: f64) {
    net.visit_state(&mut |n, slot| {
        if let (true, Slot::Param(p)) = (n == name, slot) {
            p.value.data_mut()[idx] += delta;
        }
    });
}
