use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::AxisMetrics;
use super::Rater;
use crate::affect::ImageTensor;
use crate::archive::Archive;
use crate::data::{BatchPlan, Dataset};
use crate::error::{Error, Result};
use crate::networks::images_to_tensor;
use crate::nn::{Activation, Conv2d, Dropout, Flatten, Layer, Linear, MaxPool2d, Mode, Network, SgdMomentum, Slot, Sequential, Visitor};
use crate::tensor::{Real, Tensor};

const KIND: &str = "caae-classifier";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Valence,
    Arousal,
}

impl Axis {
    pub const BOTH: [Axis; 2] = [Axis::Valence, Axis::Arousal];

    pub fn index(self) -> usize {
        match self {
            Axis::Valence => 0,
            Axis::Arousal => 1,
        }
    }
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Axis::Valence => "valence",
            Axis::Arousal => "arousal",
        })
    }
}

/// Regressor for one affect axis: stages of 3×3 stride-1 convolutions with
/// rectifiers, each stage closed by 2×2 max pooling, then fully-connected
/// layers with rectifier and dropout, and a single tanh output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub image_size: usize,
    pub stages: Vec<Vec<usize>>,
    pub fc: Vec<usize>,
    pub dropout: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            image_size: 96,
            stages: vec![vec![64], vec![128], vec![256, 256], vec![512, 512]],
            fc: vec![4096, 2622, 2622],
            dropout: 0.5,
            learning_rate: 0.001,
            momentum: 0.9,
            batch_size: 32,
            steps: 3000,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    /// Same layer pattern with narrower layers, sized for CPU training.
    pub fn desk() -> Self {
        Self {
            stages: vec![vec![16], vec![32], vec![64, 64], vec![64, 64]],
            fc: vec![256, 128, 128],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        let down = 1usize << self.stages.len();
        if self.image_size == 0 || self.image_size % down != 0 {
            return fail(format!("image_size {} must be a positive multiple of {down}", self.image_size));
        }
        if self.stages.iter().any(|s| s.is_empty() || s.contains(&0)) || self.fc.contains(&0) {
            return fail("classifier layer widths must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} must be in [0, 1)", self.dropout));
        }
        if !(self.learning_rate > 0.0 && (0.0..1.0).contains(&self.momentum)) {
            return fail("learning_rate must be positive and momentum in [0, 1)".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        Ok(())
    }
}

pub struct Classifier<T> {
    pub config: ClassifierConfig,
    pub axis: Axis,
    net: Sequential<T>,
}

impl<T: Real> Classifier<T> {
    /// Fresh network with He-normal weights and zero biases.
    pub fn new(config: &ClassifierConfig, axis: Axis) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut net = Sequential::new();
        let mut ch = 3;
        for (s, stage) in config.stages.iter().enumerate() {
            for (l, &f) in stage.iter().enumerate() {
                let std = (2.0 / (ch * 9) as f64).sqrt();
                net.push(format!("conv{s}_{l}"), Conv2d::new(ch, f, 3, 1, std, &mut rng));
                net.push(format!("relu{s}_{l}"), Activation::relu());
                ch = f;
            }
            net.push(format!("pool{s}"), MaxPool2d::new());
        }
        net.push("flatten", Flatten::new());
        let side = config.image_size >> config.stages.len();
        let mut width = ch * side * side;
        for (i, &h) in config.fc.iter().enumerate() {
            net.push(format!("fc{i}"), Linear::new(width, h, (2.0 / width as f64).sqrt(), &mut rng));
            net.push(format!("fc_relu{i}"), Activation::relu());
            net.push(format!("dropout{i}"), Dropout::new(config.dropout, config.seed ^ (0xD0 + i as u64)));
            width = h;
        }
        net.push("out", Linear::new(width, 1, (1.0 / width as f64).sqrt(), &mut rng));
        net.push("tanh", Activation::tanh());
        Ok(Self {
            config: config.clone(),
            axis,
            net,
        })
    }

    fn check(&self, x: &Tensor<T>) -> Result<()> {
        let s = self.config.image_size;
        if x.shape() != [x.batch(), 3, s, s] {
            return Err(Error::Shape(format!("classifier expects N×3×{s}×{s}, got {:?}", x.shape())));
        }
        Ok(())
    }

    /// `N×1` predictions in `[-1, 1]`; dropout is active unless `Eval`.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.check(x)?;
        Ok(self.net.forward(x, mode))
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(x)?;
        Ok(self.net.infer(x))
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        self.net.backward(dy)
    }

    pub fn predict(&self, images: &[ImageTensor]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(64) {
            let refs: Vec<&ImageTensor> = chunk.iter().collect();
            let y = self.infer(&images_to_tensor(&refs)?)?;
            out.extend(y.data().iter().map(|v| v.f64()));
        }
        Ok(out)
    }

    pub fn save(&mut self, path: &Path) -> Result<()> {
        let header = serde_json::json!({ "kind": KIND, "axis": self.axis, "config": self.config });
        let mut archive = Archive::new(header);
        for (name, t) in self.export_state() {
            archive.insert(name, &t)?;
        }
        archive.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let archive = Archive::load(path)?;
        let h = &archive.header;
        if h.get("kind").and_then(|k| k.as_str()) != Some(KIND) {
            return Err(Error::Checkpoint(format!("{} is not a classifier archive", path.display())));
        }
        let axis: Axis = serde_json::from_value(h["axis"].clone())?;
        let config: ClassifierConfig = serde_json::from_value(h["config"].clone())?;
        let mut c = Self::new(&config, axis)?;
        let mut failure = None;
        let mut used = 0;
        c.visit_state(&mut |name, slot| {
            let Slot::Param(p) = slot else { return };
            match archive.tensors.get(name) {
                Some(t) if t.shape() == p.value.shape() => {
                    p.value = t.to();
                    used += 1;
                }
                _ => failure = failure.take().or(Some(format!("classifier tensor {name} missing or mis-shaped"))),
            }
        });
        if let Some(m) = failure {
            return Err(Error::Checkpoint(m));
        }
        if used != archive.tensors.len() {
            return Err(Error::Checkpoint("classifier archive has unexpected tensors".into()));
        }
        Ok(c)
    }
}

impl<T: Real> Network<T> for Classifier<T> {
    fn visit_state(&mut self, f: &mut Visitor<'_, T>) {
        self.net.visit("", f);
    }

    fn commit_stats(&mut self) {
        self.net.commit_stats();
    }
}

/// Mean absolute error and its gradient with respect to the predictions.
pub fn mae_loss<T: Real>(pred: &Tensor<T>, target: &[f64]) -> (f64, Tensor<T>) {
    let n = target.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .data()
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = p.f64() - t;
            loss += d.abs();
            T::lit(if d > 0.0 {
                1.0 / n
            } else if d < 0.0 {
                -1.0 / n
            } else {
                0.0
            })
        })
        .collect();
    (loss / n, Tensor::from_vec(pred.shape(), grad).expect("same shape"))
}

/// Trains one axis regressor with SGD and momentum on mean absolute error.
/// `on_step(step, loss)` observes every minibatch loss. Returns the
/// network and, given a validation set, its metrics there.
pub fn train_classifier(
    axis: Axis,
    train: &Dataset,
    val: Option<&Dataset>,
    config: &ClassifierConfig,
    mut on_step: impl FnMut(u64, f64),
) -> Result<(Classifier<f32>, Option<AxisMetrics>)> {
    if train.size != config.image_size {
        return Err(Error::Config(format!(
            "training images are {0}x{0}, classifier expects {1}x{1}",
            train.size, config.image_size
        )));
    }
    let mut model = Classifier::<f32>::new(config, axis)?;
    let mut opt = SgdMomentum::new(config.learning_rate, config.momentum);
    let plan = BatchPlan::new(train.len(), config.batch_size, config.seed)?;
    let mut step = 0;
    let mut epoch = 0;
    'outer: loop {
        for batch in plan.batches(epoch) {
            if step == config.steps {
                break 'outer;
            }
            let (x, labels) = train.batch::<f32>(&batch);
            let target: Vec<f64> = labels.iter().map(|l| label_axis(l, axis)).collect();
            model.zero_grad();
            let pred = model.forward(&x, Mode::Train)?;
            let (loss, grad) = mae_loss(&pred, &target);
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    step: step + 1,
                    detail: format!("{axis} classifier loss {loss}"),
                });
            }
            model.backward(&grad);
            opt.step(&mut model);
            step += 1;
            on_step(step, loss);
        }
        epoch += 1;
    }
    let metrics = match val {
        Some(v) => Some(evaluate_axis(&model, v)?),
        None => None,
    };
    Ok((model, metrics))
}

fn label_axis(l: &crate::affect::EmotionLabel, axis: Axis) -> f64 {
    match axis {
        Axis::Valence => l.valence() as f64,
        Axis::Arousal => l.arousal() as f64,
    }
}

/// Metrics of a classifier against a labeled dataset.
pub fn evaluate_axis(model: &Classifier<f32>, data: &Dataset) -> Result<AxisMetrics> {
    let images: Vec<ImageTensor> = (0..data.len()).map(|i| data.image(i)).collect();
    let pred = model.predict(&images)?;
    let target: Vec<f64> = data.labels.iter().map(|l| label_axis(l, model.axis)).collect();
    AxisMetrics::compute(&target, &pred)
}

/// A valence and an arousal classifier used together as a rater.
pub struct ClassifierPair {
    pub valence: Classifier<f32>,
    pub arousal: Classifier<f32>,
}

impl ClassifierPair {
    pub fn new(valence: Classifier<f32>, arousal: Classifier<f32>) -> Result<Self> {
        if valence.axis != Axis::Valence || arousal.axis != Axis::Arousal {
            return Err(Error::Config("classifier pair needs a valence and an arousal model".into()));
        }
        Ok(Self { valence, arousal })
    }
}

impl Rater for ClassifierPair {
    fn rate_batch(&self, images: &[ImageTensor]) -> Vec<Result<[f64; 2]>> {
        match (self.valence.predict(images), self.arousal.predict(images)) {
            (Ok(v), Ok(a)) => v.into_iter().zip(a).map(|(v, a)| Ok([v, a])).collect(),
            (Err(e), _) | (_, Err(e)) => {
                let msg = e.to_string();
                images.iter().map(|_| Err(Error::Shape(msg.clone()))).collect()
            }
        }
    }
}
