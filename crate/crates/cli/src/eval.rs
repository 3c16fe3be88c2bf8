//! `eval`: per-image metrics and optional paired significance test.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use denomamba::data::read_image;
use denomamba::metrics::{wilcoxon_signed_rank, ImageMetrics, WilcoxonResult};
use denomamba::{Error, MetricReport, Result};
use rayon::prelude::*;

use crate::args::EvalArgs;
use crate::denoise::list_images;
use crate::resolve::{create_dir, write_file};

fn by_stem(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for p in list_images(dir)? {
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        if let Some(prev) = out.insert(stem.clone(), p.clone()) {
            return Err(Error::Usage(format!(
                "{} and {} share the stem '{stem}'",
                prev.display(),
                p.display()
            )));
        }
    }
    Ok(out)
}

/// Pairs predictions with references by file stem; orphans on either side are
/// a usage error that lists them.
pub fn pair_by_stem(pred: &Path, reference: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    let p = by_stem(pred)?;
    let r = by_stem(reference)?;
    let orphans: Vec<String> = p
        .keys()
        .filter(|k| !r.contains_key(*k))
        .map(|k| format!("{} (no reference)", p[k].display()))
        .chain(r.keys().filter(|k| !p.contains_key(*k)).map(|k| format!("{} (no prediction)", r[k].display())))
        .collect();
    if !orphans.is_empty() {
        return Err(Error::Usage(format!("unpaired images: {}", orphans.join(", "))));
    }
    if p.is_empty() {
        return Err(Error::Usage(format!("no images found in {}", pred.display())));
    }
    Ok(p.into_iter().map(|(k, pp)| (k.clone(), pp, r[&k].clone())).collect())
}

/// Paired PSNR differences `ours − theirs`, matched by image id.
pub fn psnr_differences(ours: &MetricReport, theirs: &MetricReport) -> Result<Vec<f64>> {
    let other: BTreeMap<&str, f64> = theirs.rows.iter().map(|r| (r.id.as_str(), r.psnr)).collect();
    let missing: Vec<&str> = ours.rows.iter().map(|r| r.id.as_str()).filter(|id| !other.contains_key(id)).collect();
    if !missing.is_empty() || other.len() != ours.rows.len() {
        return Err(Error::Usage(format!(
            "reports cover different images (unmatched ids: {})",
            missing.join(", ")
        )));
    }
    Ok(ours.rows.iter().map(|r| r.psnr - other[r.id.as_str()]).collect())
}

pub fn wilcoxon_csv(w: &WilcoxonResult) -> String {
    format!(
        "metric,n,w_plus,w_minus,statistic,p_value,exact,degenerate\npsnr,{},{},{},{},{:.6},{},{}\n",
        w.n, w.w_plus, w.w_minus, w.statistic, w.p_value, w.exact, w.degenerate
    )
}

pub fn run(args: &EvalArgs) -> Result<()> {
    if !(args.range > 0.0) {
        return Err(Error::Usage(format!("--range must be positive, got {}", args.range)));
    }
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let pairs = pair_by_stem(&args.pred, &args.reference)?;
    let rows = pairs
        .par_iter()
        .map(|(id, p, r)| ImageMetrics::compute(id.clone(), &read_image(p)?, &read_image(r)?, args.range))
        .collect::<Result<Vec<_>>>()?;
    let report = MetricReport { rows };
    report.save_csv(&args.out)?;
    let s = report.summary()?;
    println!(
        "n={} psnr {:.3}±{:.3} dB  ssim {:.4}±{:.4}  rmse {:.3}±{:.3} %",
        report.n(),
        s.psnr.mean,
        s.psnr.std,
        s.ssim.mean,
        s.ssim.std,
        s.rmse_pct.mean,
        s.rmse_pct.std
    );
    if let Some(other) = &args.compare {
        // Compare at report precision so a method matched against its own
        // saved report yields exactly zero differences.
        let ours = MetricReport::load_csv(&args.out)?;
        let theirs = MetricReport::load_csv(other)?;
        let w = wilcoxon_signed_rank(&psnr_differences(&ours, &theirs)?)?;
        let stem = args.out.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
        let path = args.out.with_file_name(format!("{stem}_wilcoxon.csv"));
        write_file(&path, wilcoxon_csv(&w))?;
        println!(
            "wilcoxon vs {}: n={} W={} p={:.6}{}",
            other.display(),
            w.n,
            w.statistic,
            w.p_value,
            if w.degenerate { " (degenerate: all differences zero)" } else { "" }
        );
    }
    Ok(())
}
