//! Component ablations: train the full model and each single-pathway variant
//! under the same seed, data, and budget.

use std::io::Write;
use std::path::Path;

use crate::blocks::Ablation;
use crate::data::ImagePair;
use crate::error::{Error, Result};
use crate::network::{DenoMambaModel, ModelConfig};
use crate::training::{TrainConfig, Trainer};

/// Shortfall in validation PSNR (dB) a variant may show before it counts as
/// beating the full model.
pub const ABLATION_TOLERANCE_DB: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    /// `"full"` or an [`Ablation`] name.
    pub variant: String,
    pub params: usize,
    /// Best validation PSNR over the run (the retained checkpoint).
    pub best_val_psnr: f64,
    pub final_val_psnr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationStudy {
    pub full: AblationRow,
    pub variants: Vec<AblationRow>,
}

impl AblationStudy {
    /// Variants with at least as many parameters as the full model.
    pub fn not_smaller(&self) -> Vec<&AblationRow> {
        self.variants.iter().filter(|v| v.params >= self.full.params).collect()
    }

    /// Variants whose best validation PSNR exceeds the full model's by more
    /// than [`ABLATION_TOLERANCE_DB`].
    pub fn out_of_order(&self) -> Vec<&AblationRow> {
        self.variants
            .iter()
            .filter(|v| v.best_val_psnr > self.full.best_val_psnr + ABLATION_TOLERANCE_DB)
            .collect()
    }

    pub fn rows(&self) -> impl Iterator<Item = &AblationRow> {
        std::iter::once(&self.full).chain(&self.variants)
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::Config(format!("writing ablation table: {e}"));
        w.write_record(["variant", "params", "best_val_psnr", "final_val_psnr", "delta_vs_full"])
            .map_err(csv_err)?;
        for r in self.rows() {
            w.write_record([
                r.variant.clone(),
                r.params.to_string(),
                format!("{:.6}", r.best_val_psnr),
                format!("{:.6}", r.final_val_psnr),
                format!("{:.6}", r.best_val_psnr - self.full.best_val_psnr),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Config(format!("writing ablation table: {e}")))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

fn train_variant(
    variant: String,
    config: &ModelConfig,
    train: &[ImagePair],
    val: &[ImagePair],
    train_config: TrainConfig,
) -> Result<AblationRow> {
    let mut model = DenoMambaModel::build(config)?;
    let mut trainer = Trainer::new(&model, train_config)?;
    trainer.run(&mut model, train, val, |_, _| Ok(()))?;
    let final_val_psnr = trainer.history.records.last().map_or(f64::NAN, |r| r.val_psnr_mean);
    let best_val_psnr = trainer.best.as_ref().map_or(final_val_psnr, |b| b.val_psnr);
    log::info!("ablation {variant}: {} params, best val psnr {best_val_psnr:.3} dB", model.param_count());
    Ok(AblationRow {
        variant,
        params: model.param_count(),
        best_val_psnr,
        final_val_psnr,
    })
}

/// Trains `base` and every variant in `ablations`, all from the same seed.
pub fn run_ablation(
    base: &ModelConfig,
    ablations: &[Ablation],
    train: &[ImagePair],
    val: &[ImagePair],
    train_config: TrainConfig,
) -> Result<AblationStudy> {
    let full = train_variant("full".to_string(), base, train, val, train_config)?;
    let variants = ablations
        .iter()
        .map(|&a| train_variant(a.to_string(), &base.clone().with_ablation(a), train, val, train_config))
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationStudy { full, variants })
}
