use std::path::Path;

use anyhow::{bail, Context, Result};
use caae_core::affect::write_png;
use caae_core::archive::Archive;
use caae_core::data::synth::{EYE_REGION, MOUTH_REGION};
use caae_core::data::{make_synthetic_dataset, Dataset, Split};
use caae_core::evalkit::{
    heatmap_montage, localization, qualitative_experiment, quantitative_experiment, train_classifier, Classifier,
    ClassifierConfig, ClassifierPair, LabelGrid, OracleRater, Rater,
};
use caae_core::networks::NetworkConfig;
use caae_core::training::{load_model, run, RunOptions, TrainConfig, Trainer};
use serde_json::json;

use crate::cli::{ClassifierPreset, Command, ManifestArgs, NetworkPreset};
use crate::pipeline::{edit_grid, edit_one, load_dataset, load_manifest, prepare_image};

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn dataset(args: &ManifestArgs, size: usize) -> Result<Dataset> {
    load_dataset(&args.manifest, args.root.as_deref(), args.split, size)
        .with_context(|| format!("loading {}", args.manifest.display()))
}

fn sources(args: &ManifestArgs, size: usize, limit: Option<usize>) -> Result<Vec<caae_core::ImageTensor>> {
    let data = dataset(args, size)?;
    let n = limit.map_or(data.len(), |l| l.min(data.len()));
    Ok((0..n).map(|i| data.image(i)).collect())
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::SynthData { count, seed, out } => {
            let manifest = make_synthetic_dataset(count, seed, &out)?;
            println!("wrote {} faces to {}", manifest.len(), out.join("manifest.tsv").display());
        }
        Command::Train {
            data,
            out,
            config,
            preset,
            steps,
            seed,
            resume,
            stop_after,
            log_every,
        } => {
            let mut trainer = match &resume {
                Some(path) => {
                    if config.is_some() || steps.is_some() || seed.is_some() {
                        bail!("--config, --steps and --seed cannot change a resumed run");
                    }
                    Trainer::<f32>::resume(path)?.0
                }
                None => {
                    let mut cfg: TrainConfig = match &config {
                        Some(path) => read_json(path)?,
                        None => TrainConfig {
                            network: match preset {
                                NetworkPreset::Full => NetworkConfig::default(),
                                NetworkPreset::Desk => NetworkConfig::desk(),
                                NetworkPreset::Probe => NetworkConfig::probe(),
                            },
                            ..TrainConfig::default()
                        },
                    };
                    if let Some(s) = steps {
                        cfg.steps = s;
                        cfg.epochs = None;
                    }
                    cfg.seed = seed.unwrap_or(cfg.seed);
                    Trainer::new(cfg)?
                }
            };
            let data = dataset(&data, trainer.config.network.image_size)?;
            let opts = RunOptions {
                out_dir: out,
                stop_after,
            };
            let summary = run(&mut trainer, &data, &opts, |r| {
                if log_every > 0 && r.step % log_every == 0 {
                    eprintln!(
                        "step {} rec {:.4} iden {:.4} dz {:.4} dimg {:.4} total {:.4}",
                        r.step, r.rec, r.iden, r.z_adv_d, r.img_adv_d, r.total
                    );
                }
            })?;
            println!(
                "trained {} steps ({} of {}); checkpoint {}",
                summary.steps_run,
                summary.final_step,
                summary.total_steps,
                summary.checkpoint.display()
            );
        }
        Command::Edit {
            image,
            valence,
            arousal,
            checkpoint,
            out,
            grid,
            grid_size,
        } => {
            let loaded = load_model::<f32>(&checkpoint)?;
            let bytes = std::fs::read(&image).with_context(|| format!("reading {}", image.display()))?;
            let src = prepare_image(&bytes, loaded.model.config.image_size)
                .with_context(|| format!("decoding {}", image.display()))?;
            if grid {
                let montage = edit_grid(&loaded.model, &src, &LabelGrid::full(grid_size)?)?;
                montage.save(&out).with_context(|| format!("writing {}", out.display()))?;
            } else {
                let label = caae_core::EmotionLabel::new(valence, arousal)?;
                write_png(&out, &edit_one(&loaded.model, &src, label)?)?;
            }
            println!("wrote {}", out.display());
        }
        Command::EvalQuant {
            checkpoint,
            data,
            oracle,
            valence_classifier,
            arousal_classifier,
            grid_size,
            threshold,
            limit,
            out,
        } => {
            let loaded = load_model::<f32>(&checkpoint)?;
            let (rater, rater_name): (Box<dyn Rater>, String) = match (valence_classifier, arousal_classifier) {
                (Some(v), Some(a)) => (
                    Box::new(ClassifierPair::new(Classifier::load(&v)?, Classifier::load(&a)?)?),
                    format!("classifiers {} {}", v.display(), a.display()),
                ),
                _ if oracle => (Box::new(OracleRater), "oracle".into()),
                _ => bail!("choose a rater: --oracle or --valence-classifier with --arousal-classifier"),
            };
            let srcs = sources(&data, loaded.model.config.image_size, limit)?;
            let labels = LabelGrid::full(grid_size)?.labels();
            let result = quantitative_experiment(&loaded.model, rater.as_ref(), &srcs, &labels, threshold, |i| {
                if i % 10 == 0 {
                    eprintln!("rated edits of {i}/{} sources", srcs.len());
                }
            })?;
            let report = json!({
                "model_version": loaded.version,
                "rater": rater_name,
                "result": result,
            });
            write_json(&out, &report)?;
            println!("{}", serde_json::to_string_pretty(&result)?);
        }
        Command::EvalQual {
            checkpoint,
            data,
            grid_size,
            limit,
            synthetic_regions,
            out_dir,
        } => {
            let loaded = load_model::<f32>(&checkpoint)?;
            let faces = sources(&data, loaded.model.config.image_size, Some(limit))?;
            let grid = LabelGrid::full(grid_size)?;
            let result = qualitative_experiment(&loaded.model, &faces, grid, |_| {})?;
            std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            let mut maps = Vec::new();
            for r in 0..grid.n {
                for c in 0..grid.n {
                    if let Some(m) = result.heatmap(r, c) {
                        let name = format!("heatmap-r{r}-c{c}.png");
                        m.to_gray().save(out_dir.join(&name))?;
                        maps.push(json!({ "file": name, "label": m.label, "total": m.total }));
                    }
                }
            }
            heatmap_montage(&result).save(out_dir.join("montage.png"))?;
            let loc = synthetic_regions.then(|| localization(&result, MOUTH_REGION, EYE_REGION));
            let summary = json!({
                "model_version": loaded.version,
                "faces": result.faces,
                "grid": grid,
                "heatmaps": maps,
                "localization": loc,
            });
            write_json(&out_dir.join("summary.json"), &summary)?;
            println!("wrote {} heatmaps and montage.png to {}", maps.len(), out_dir.display());
            if let Some(l) = loc {
                println!("valence change in mouth region {:.3}, arousal change in eye region {:.3}", l.valence, l.arousal);
            }
        }
        Command::TrainClassifier {
            axis,
            data,
            out,
            config,
            preset,
            steps,
            seed,
        } => {
            let mut cfg: ClassifierConfig = match &config {
                Some(path) => read_json(path)?,
                None => match preset {
                    ClassifierPreset::Reference => ClassifierConfig::default(),
                    ClassifierPreset::Desk => ClassifierConfig::desk(),
                },
            };
            cfg.steps = steps.unwrap_or(cfg.steps);
            cfg.seed = seed.unwrap_or(cfg.seed);
            let (train, val) = classifier_splits(&data, cfg.image_size)?;
            let (mut model, metrics) = train_classifier(axis.into(), &train, Some(&val), &cfg, |step, loss| {
                if step % 100 == 0 {
                    eprintln!("step {step} mae {loss:.4}");
                }
            })?;
            model.save(&out)?;
            let report = json!({ "axis": model.axis, "train": train.len(), "validation": val.len(), "metrics": metrics });
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Serve { checkpoint, bind } => {
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(crate::service::serve(&checkpoint, bind))?;
        }
        Command::InspectCheckpoint { path, json } => inspect(&path, json)?,
    }
    Ok(())
}

/// Validation records come from the manifest's `val` split; without one,
/// the last tenth of the records is held out.
fn classifier_splits(args: &ManifestArgs, size: usize) -> Result<(Dataset, Dataset)> {
    let manifest = load_manifest(&args.manifest, args.root.as_deref(), None)?;
    if args.split.is_none() && manifest.split_counts().get(&Split::Val).copied().unwrap_or(0) > 0 {
        let train = Dataset::load(&manifest.filter_split(Split::Train), size)?;
        let val = Dataset::load(&manifest.filter_split(Split::Val), size)?;
        return Ok((train, val));
    }
    let all = dataset(args, size)?;
    let cut = all.len() - all.len() / 10;
    if cut == 0 || cut == all.len() {
        bail!("need at least 10 records to hold out a validation set");
    }
    Ok((all.subset(0..cut), all.subset(cut..all.len())))
}

fn inspect(path: &Path, as_json: bool) -> Result<()> {
    let archive = Archive::load(path)?;
    let tensors: Vec<_> = archive
        .tensors
        .iter()
        .map(|(name, t)| json!({ "name": name, "shape": t.shape(), "dtype": t.dtype() }))
        .collect();
    if as_json {
        let out = json!({ "header": archive.header, "tensors": tensors });
        println!("{}", serde_json::to_string_pretty(&out)?);
        return Ok(());
    }
    let h = &archive.header;
    println!("kind: {}", h["kind"].as_str().unwrap_or("unknown"));
    if let Some(step) = h["progress"]["step"].as_u64() {
        println!("step: {step}");
    }
    for (name, t) in &archive.tensors {
        println!("{name}\t{:?}\t{:?}", t.shape(), t.dtype());
    }
    Ok(())
}
