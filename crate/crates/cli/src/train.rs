//! `train` and `ablate`.

use std::path::Path;

use denomamba::data::load_dataset;
use denomamba::training::{run_ablation, AblationStudy};
use denomamba::{Ablation, DenoMambaModel, Error, ImagePair, Result, Trainer};

use crate::args::{AblateArgs, TrainArgs};
use crate::resolve::{
    echo, preset_name, read_json, required, resolve, run_flags, write_file, RunConfig, RESOLVED_CONFIG,
};

pub const LAST_CHECKPOINT: &str = "last.dnmb";
pub const BEST_CHECKPOINT: &str = "best.dnmb";
pub const FINAL_CHECKPOINT: &str = "final.dnmb";
pub const TRAIN_STATE: &str = "state.dnts";
pub const HISTORY_CSV: &str = "history.csv";
pub const ABLATION_CSV: &str = "ablation.csv";

fn resolve_run(
    config: &Option<std::path::PathBuf>,
    flags: serde_json::Value,
    preset_flag: &Option<String>,
    resume_from: Option<&Path>,
) -> Result<RunConfig> {
    let file = config.as_deref().map(read_json).transpose()?;
    let base = match resume_from {
        Some(dir) => {
            let path = dir.join(RESOLVED_CONFIG);
            if !path.exists() {
                return Err(Error::Usage(format!("nothing to resume: {} is missing", path.display())));
            }
            serde_json::from_value(read_json(&path)?)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::preset(&preset_name(preset_flag, file.as_ref()))?,
    };
    resolve(&base, file.as_ref(), flags)?.finish()
}

/// Loads training and validation pairs; validation falls back to the
/// training set when no manifest is given.
fn load_data(cfg: &RunConfig) -> Result<(Vec<ImagePair>, Vec<ImagePair>)> {
    let train = load_dataset(required(&cfg.manifest, "manifest")?)?;
    if train.is_empty() {
        return Err(Error::Usage("the training manifest lists no images".into()));
    }
    let val = match &cfg.val_manifest {
        Some(p) => load_dataset(p)?,
        None => {
            log::warn!("no --val-manifest given; validating on the training set");
            train.clone()
        }
    };
    for p in train.iter().chain(&val) {
        let [_, _, h, w] = p.ldct.dims4()?;
        cfg.model.check_extents(h, w)?;
    }
    Ok((train, val))
}

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    required(&cfg.out, "out")
}

fn save_epoch(dir: &Path, trainer: &Trainer, model: &DenoMambaModel) -> Result<()> {
    model.save(&dir.join(LAST_CHECKPOINT))?;
    trainer.best_model(model)?.save(&dir.join(BEST_CHECKPOINT))?;
    trainer.save_state(model, &dir.join(TRAIN_STATE))?;
    write_file(&dir.join(HISTORY_CSV), trainer.history.to_csv())
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let flags = run_flags(&args.model, &args.manifest, &args.val_manifest, &args.out);
    let mut flags = flags;
    if !args.model.ablate.is_empty() {
        let names: Vec<String> = args.model.ablate.iter().map(|a| a.to_string()).collect();
        flags["ablations"] = serde_json::json!(names);
    }
    let resume_dir = if args.resume {
        let from_file = args.config.as_deref().map(read_json).transpose()?;
        let out = args
            .out
            .clone()
            .or_else(|| from_file.and_then(|f| f.get("out").and_then(|o| o.as_str()).map(Into::into)));
        Some(out.ok_or_else(|| Error::Usage("--resume needs --out".into()))?)
    } else {
        None
    };
    let cfg = resolve_run(&args.config, flags, &args.model.preset, resume_dir.as_deref())?;
    let dir = out_dir(&cfg)?.to_path_buf();
    echo(&dir, &cfg)?;
    let (train, val) = load_data(&cfg)?;

    let (mut model, mut trainer) = if args.resume {
        let model = DenoMambaModel::load(&dir.join(LAST_CHECKPOINT))?;
        if model.config() != &cfg.model {
            return Err(Error::Config("checkpoint architecture differs from the resolved configuration".into()));
        }
        let mut trainer = Trainer::load_state(&dir.join(TRAIN_STATE), &model)?;
        trainer.config = cfg.train;
        log::info!("resuming at epoch {} of {}", trainer.epoch, cfg.train.epochs);
        (model, trainer)
    } else {
        let model = DenoMambaModel::build(&cfg.model)?;
        let trainer = Trainer::new(&model, cfg.train)?;
        (model, trainer)
    };
    log::info!(
        "training {} params on {} pairs ({} validation) for {} epochs",
        model.param_count(),
        train.len(),
        val.len(),
        cfg.train.epochs
    );
    trainer.run(&mut model, &train, &val, |t, m| save_epoch(&dir, t, m))?;
    save_epoch(&dir, &trainer, &model)?;
    model.save(&dir.join(FINAL_CHECKPOINT))?;
    if let Some(b) = &trainer.best {
        log::info!("best epoch {} with val psnr {:.3} dB", b.epoch, b.val_psnr);
    }
    Ok(())
}

pub fn print_study(study: &AblationStudy) {
    println!("{:<12} {:>9} {:>14} {:>10}", "variant", "params", "best_val_psnr", "delta");
    for r in study.rows() {
        println!(
            "{:<12} {:>9} {:>14.3} {:>+10.3}",
            r.variant,
            r.params,
            r.best_val_psnr,
            r.best_val_psnr - study.full.best_val_psnr
        );
    }
}

/// Returns whether every variant built, trained, and is strictly smaller.
pub fn ablate(args: &AblateArgs) -> Result<bool> {
    let mut flags = run_flags(&args.model, &args.manifest, &args.val_manifest, &args.out);
    if !args.model.ablate.is_empty() {
        let names: Vec<String> = args.model.ablate.iter().map(|a| a.to_string()).collect();
        flags["ablations"] = serde_json::json!(names);
    }
    if !args.variants.is_empty() {
        let names: Vec<String> = args.variants.iter().map(|a| a.to_string()).collect();
        flags["variants"] = serde_json::json!(names);
    }
    let cfg = resolve_run(&args.config, flags, &args.model.preset, None)?;
    let dir = out_dir(&cfg)?.to_path_buf();
    echo(&dir, &cfg)?;
    let (train, val) = load_data(&cfg)?;
    let variants: Vec<Ablation> = if cfg.variants.is_empty() {
        Ablation::ALL.to_vec()
    } else {
        cfg.variants.iter().map(|v| v.parse()).collect::<Result<_>>()?
    };
    let study = run_ablation(&cfg.model, &variants, &train, &val, cfg.train)?;
    study.save_csv(&dir.join(ABLATION_CSV))?;
    print_study(&study);
    for v in study.out_of_order() {
        log::warn!(
            "{} beats the full model by {:.3} dB",
            v.variant,
            v.best_val_psnr - study.full.best_val_psnr
        );
    }
    let bad = study.not_smaller();
    for v in &bad {
        log::error!("{} has {} params, not fewer than the full model's {}", v.variant, v.params, study.full.params);
    }
    Ok(bad.is_empty())
}
