use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use super::Trainer;
use crate::data::{BatchPlan, Dataset};
use crate::error::{Error, Result};
use crate::losses::LossReport;
use crate::tensor::Real;

pub const LOSS_LOG: &str = "losses.jsonl";
pub const LATEST_CHECKPOINT: &str = "latest.caae";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Receives `losses.jsonl` and checkpoints.
    pub out_dir: PathBuf,
    /// Stop once this many total steps are done, as if interrupted.
    pub stop_after: Option<u64>,
}

/// Outcome of [`run`].
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub steps_run: u64,
    pub final_step: u64,
    pub total_steps: u64,
    pub last: Option<LossReport>,
    pub checkpoint: PathBuf,
}

pub fn checkpoint_name(step: u64) -> String {
    format!("step-{step:07}.caae")
}

/// Trains until the configured step budget (or `stop_after`), appending one
/// JSON line per step to `losses.jsonl` and checkpointing every
/// `checkpoint_every` steps and at the end. A resumed trainer continues the
/// same batch order and loss log.
pub fn run<T: Real>(
    trainer: &mut Trainer<T>,
    data: &Dataset,
    opts: &RunOptions,
    mut on_step: impl FnMut(&LossReport),
) -> Result<RunSummary> {
    if let Some(expected) = trainer.resumed_dataset_len {
        if expected != data.len() {
            return Err(Error::Config(format!(
                "checkpoint was trained on {expected} records, dataset has {}",
                data.len()
            )));
        }
    }
    if data.size != trainer.config.network.image_size {
        return Err(Error::Config(format!(
            "dataset images are {0}x{0}, network expects {1}x{1}",
            data.size, trainer.config.network.image_size
        )));
    }
    let dir = &opts.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let plan = BatchPlan::new(data.len(), trainer.config.batch_size, trainer.config.data_seed())?;
    let per_epoch = plan.batches_per_epoch();
    let total = trainer.config.total_steps(per_epoch);
    let stop = opts.stop_after.map_or(total, |s| s.min(total));

    let log_path = dir.join(LOSS_LOG);
    truncate_log(&log_path, trainer.step)?;
    let mut log = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| Error::io(format!("opening {}", log_path.display()), e))?;

    let start = trainer.step;
    let mut last = None;
    let mut batches = plan.batches(trainer.epoch);
    while trainer.step < stop {
        if trainer.batch_in_epoch >= per_epoch {
            trainer.epoch += 1;
            trainer.batch_in_epoch = 0;
            batches = plan.batches(trainer.epoch);
        }
        let (x, labels) = data.batch::<T>(&batches[trainer.batch_in_epoch]);
        let report = trainer.train_step(&x, &labels)?;
        trainer.batch_in_epoch += 1;
        writeln!(log, "{}", serde_json::to_string(&report)?)
            .map_err(|e| Error::io(format!("writing {}", log_path.display()), e))?;
        on_step(&report);
        last = Some(report);
        let every = trainer.config.checkpoint_every;
        if every > 0 && trainer.step % every == 0 && trainer.step < stop {
            save(trainer, dir, data.len())?;
        }
    }
    log.flush().map_err(|e| Error::io(format!("writing {}", log_path.display()), e))?;
    let checkpoint = save(trainer, dir, data.len())?;
    Ok(RunSummary {
        steps_run: trainer.step - start,
        final_step: trainer.step,
        total_steps: total,
        last,
        checkpoint,
    })
}

/// Writes `step-N.caae` and refreshes `latest.caae`.
fn save<T: Real>(trainer: &mut Trainer<T>, dir: &Path, dataset_len: usize) -> Result<PathBuf> {
    let archive = trainer.to_archive(Some(dataset_len))?;
    let path = dir.join(checkpoint_name(trainer.step));
    archive.save(&path)?;
    archive.save(&dir.join(LATEST_CHECKPOINT))?;
    Ok(path)
}

/// Drops log lines for steps after `step`, left behind by an interrupted run.
fn truncate_log(path: &Path, step: u64) -> Result<()> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(Error::io(format!("reading {}", path.display()), e)),
    };
    let mut kept = String::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let report: LossReport = serde_json::from_str(&line)?;
        if report.step <= step {
            kept.push_str(&line);
            kept.push('\n');
        }
    }
    std::fs::write(path, kept).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
