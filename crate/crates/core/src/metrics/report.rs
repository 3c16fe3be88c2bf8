//! Per-image metric reports.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::quality::{psnr, rmse_percent, ssim, SsimParams};
use crate::metrics::stats::{aggregate, Aggregate};
use crate::numerics::FeatureMap;

#[derive(Clone, Debug, PartialEq)]
pub struct ImageMetrics {
    pub id: String,
    pub psnr: f64,
    pub ssim: f64,
    pub rmse_pct: f64,
}

impl ImageMetrics {
    pub fn compute(id: impl Into<String>, pred: &FeatureMap, reference: &FeatureMap, data_range: f64) -> Result<Self> {
        Ok(ImageMetrics {
            id: id.into(),
            psnr: psnr(pred, reference, data_range)?,
            ssim: ssim(pred, reference, &SsimParams::with_range(data_range))?,
            rmse_pct: rmse_percent(pred, reference, data_range)?,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<ImageMetrics>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReportSummary {
    pub psnr: Aggregate,
    pub ssim: Aggregate,
    pub rmse_pct: Aggregate,
}

impl MetricReport {
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn psnr_values(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.psnr).collect()
    }

    pub fn summary(&self) -> Result<ReportSummary> {
        let col = |f: fn(&ImageMetrics) -> f64| aggregate(&self.rows.iter().map(f).collect::<Vec<_>>());
        Ok(ReportSummary {
            psnr: col(|r| r.psnr)?,
            ssim: col(|r| r.ssim)?,
            rmse_pct: col(|r| r.rmse_pct)?,
        })
    }

    /// CSV with columns `id,psnr,ssim,rmse_pct`, one row per image followed by
    /// `mean` and `std` rows.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let summary = self.summary()?;
        let mut w = csv::Writer::from_writer(out);
        let fail = |e: csv::Error| Error::Usage(format!("writing report: {e}"));
        w.write_record(["id", "psnr", "ssim", "rmse_pct"]).map_err(fail)?;
        let fmt = |v: f64| format!("{v:.6}");
        for r in &self.rows {
            w.write_record([r.id.clone(), fmt(r.psnr), fmt(r.ssim), fmt(r.rmse_pct)]).map_err(fail)?;
        }
        let s = &summary;
        w.write_record(["mean".into(), fmt(s.psnr.mean), fmt(s.ssim.mean), fmt(s.rmse_pct.mean)]).map_err(fail)?;
        w.write_record(["std".into(), fmt(s.psnr.std), fmt(s.ssim.std), fmt(s.rmse_pct.std)]).map_err(fail)?;
        w.flush().map_err(|e| Error::Usage(format!("writing report: {e}")))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    /// Reads the per-image rows of a report written by [`MetricReport::write_csv`].
    pub fn load_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format {
            path: path.into(),
            reason: e.to_string(),
        })?;
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::Format {
                path: path.into(),
                reason: e.to_string(),
            })?;
            let id = rec.get(0).unwrap_or_default().to_string();
            if id == "mean" || id == "std" {
                continue;
            }
            let num = |i: usize| -> Result<f64> {
                rec.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| Error::Format {
                    path: path.into(),
                    reason: format!("bad value in column {i} of row '{id}'"),
                })
            };
            rows.push(ImageMetrics {
                psnr: num(1)?,
                ssim: num(2)?,
                rmse_pct: num(3)?,
                id,
            });
        }
        Ok(MetricReport { rows })
    }
}
