use std::collections::BTreeMap;
use std::path::Path;

use indexmap::IndexMap;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{TrainConfig, Trainer};
use crate::archive::{read_file, Archive, StoredTensor};
use crate::error::{Error, Result};
use crate::networks::{Caae, NETWORK_NAMES};
use crate::nn::{Network, Slot};
use crate::tensor::{DType, Real, Tensor};

const KIND: &str = "caae-checkpoint";
const ADAM_PREFIX: &str = "adam.";

/// Serializable position of a ChaCha8 stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    /// 32-byte key as lowercase hex.
    pub seed: String,
    pub stream: u64,
    /// 128-bit word position as a decimal string.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let bad = || Error::Checkpoint(format!("malformed rng state {self:?}"));
        if self.seed.len() != 64 || !self.seed.is_ascii() {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(rng)
    }
}

/// Where a run stands; everything besides tensors needed to resume it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub step: u64,
    pub epoch: u64,
    pub batch_in_epoch: usize,
    pub prior_rng: RngState,
    /// Optimizer step counts keyed by network name.
    pub adam_steps: BTreeMap<String, u64>,
    /// Records in the training set, checked on resume.
    pub dataset_len: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    kind: String,
    dtype: DType,
    config: TrainConfig,
    progress: Progress,
}

fn parse_header(archive: &Archive) -> Result<Header> {
    let header: Header = serde_json::from_value(archive.header.clone())
        .map_err(|e| Error::Checkpoint(format!("unreadable checkpoint header: {e}")))?;
    if header.kind != KIND {
        return Err(Error::Checkpoint(format!("expected a {KIND} archive, found {:?}", header.kind)));
    }
    header.config.validate()?;
    Ok(header)
}

/// Copies stored tensors named `<prefix><state name>` into `net`. Fails if
/// any entry is missing or mis-shaped; returns how many tensors were used.
fn import_state<T: Real>(
    net: &mut dyn Network<T>,
    prefix: &str,
    tensors: &IndexMap<String, StoredTensor>,
) -> Result<usize> {
    let mut used = 0;
    let mut failure = None;
    net.visit_state(&mut |name, slot| {
        if failure.is_some() {
            return;
        }
        let key = format!("{prefix}{name}");
        let Some(stored) = tensors.get(&key) else {
            failure = Some(format!("checkpoint is missing {key}"));
            return;
        };
        let target = match slot {
            Slot::Param(p) => &mut p.value,
            Slot::Buffer(b) => b,
        };
        if stored.shape() != target.shape() {
            failure = Some(format!(
                "{key}: stored shape {:?}, network expects {:?}",
                stored.shape(),
                target.shape()
            ));
            return;
        }
        *target = stored.to();
        used += 1;
    });
    match failure {
        Some(msg) => Err(Error::Checkpoint(msg)),
        None => Ok(used),
    }
}

fn import_model<T: Real>(model: &mut Caae<T>, tensors: &IndexMap<String, StoredTensor>) -> Result<()> {
    let used = import_state(model, "", tensors)?;
    let stored = tensors.keys().filter(|k| !k.starts_with(ADAM_PREFIX)).count();
    if used != stored {
        let mut known = Vec::new();
        model.visit_state(&mut |name, _| known.push(name.to_string()));
        let extra = tensors
            .keys()
            .find(|k| !k.starts_with(ADAM_PREFIX) && !known.contains(k))
            .cloned()
            .unwrap_or_default();
        return Err(Error::Checkpoint(format!("checkpoint has unexpected tensor {extra}")));
    }
    Ok(())
}

/// Short content hash of a checkpoint file, used as a model version.
pub fn model_version(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// A model restored for inference.
pub struct LoadedModel<T> {
    pub model: Caae<T>,
    pub config: TrainConfig,
    pub step: u64,
    pub version: String,
}

/// Loads the networks of a checkpoint, converting to `T` if needed.
pub fn load_model<T: Real>(path: &Path) -> Result<LoadedModel<T>> {
    let bytes = read_file(path)?;
    let archive = Archive::from_bytes(&bytes)?;
    let header = parse_header(&archive)?;
    let mut model = Caae::new(&header.config.network, header.config.seed)?;
    import_model(&mut model, &archive.tensors)?;
    Ok(LoadedModel {
        model,
        config: header.config,
        step: header.progress.step,
        version: model_version(&bytes),
    })
}

impl<T: Real> Trainer<T> {
    pub fn progress(&self, dataset_len: Option<usize>) -> Progress {
        let adam_steps = NETWORK_NAMES
            .iter()
            .zip(self.optimizer_steps())
            .map(|(n, s)| (n.to_string(), s))
            .collect();
        Progress {
            step: self.step,
            epoch: self.epoch,
            batch_in_epoch: self.batch_in_epoch,
            prior_rng: RngState::capture(&self.prior),
            adam_steps,
            dataset_len,
        }
    }

    /// Everything needed to continue this run bit-identically.
    pub fn to_archive(&mut self, dataset_len: Option<usize>) -> Result<Archive> {
        let header = Header {
            kind: KIND.into(),
            dtype: T::DTYPE,
            config: self.config.clone(),
            progress: self.progress(dataset_len),
        };
        let mut archive = Archive::new(serde_json::to_value(&header)?);
        for (name, t) in self.model.export_state() {
            archive.insert(name, &t)?;
        }
        for net in NETWORK_NAMES {
            for (name, t) in self.optimizers.get_mut(net).export() {
                archive.insert(format!("{ADAM_PREFIX}{net}.{name}"), &t)?;
            }
        }
        Ok(archive)
    }

    pub fn save_checkpoint(&mut self, path: &Path, dataset_len: Option<usize>) -> Result<()> {
        self.to_archive(dataset_len)?.save(path)
    }

    /// Rebuilds a trainer from a checkpoint written by
    /// [`Trainer::save_checkpoint`]. The stored dtype must be `T`.
    pub fn from_archive(archive: &Archive) -> Result<(Self, Progress)> {
        let header = parse_header(archive)?;
        if header.dtype != T::DTYPE {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {:?} state, cannot resume as {:?}",
                header.dtype,
                T::DTYPE
            )));
        }
        let mut trainer = Self::new(header.config)?;
        import_model(&mut trainer.model, &archive.tensors)?;
        let mut adam_used = 0;
        for net in NETWORK_NAMES {
            let prefix = format!("{ADAM_PREFIX}{net}.");
            let tensors: IndexMap<String, Tensor<T>> = archive
                .tensors
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(&prefix).map(|s| (s.to_string(), v.to())))
                .collect();
            adam_used += tensors.len();
            let steps = *header
                .progress
                .adam_steps
                .get(net)
                .ok_or_else(|| Error::Checkpoint(format!("no optimizer step count for {net}")))?;
            let network = trainer.model.network_mut(net).expect("known network");
            trainer.optimizers.get_mut(net).import(steps, &tensors, network)?;
        }
        let adam_total = archive.tensors.keys().filter(|k| k.starts_with(ADAM_PREFIX)).count();
        if adam_used != adam_total {
            return Err(Error::Checkpoint("optimizer state for an unknown network".into()));
        }
        let p = &header.progress;
        trainer.prior = p.prior_rng.restore()?;
        trainer.step = p.step;
        trainer.epoch = p.epoch;
        trainer.batch_in_epoch = p.batch_in_epoch;
        trainer.resumed_dataset_len = p.dataset_len;
        Ok((trainer, header.progress))
    }

    pub fn resume(path: &Path) -> Result<(Self, Progress)> {
        Self::from_archive(&Archive::load(path)?)
    }
}
