//! `denoise`: apply a checkpoint to images.

use std::path::{Path, PathBuf};

use denomamba::data::{read_image, read_manifest, write_image, ImageFormat};
use denomamba::training::denoise;
use denomamba::{DenoMambaModel, Error, FeatureMap, Result, Tensor};
use serde::Serialize;

use crate::args::DenoiseArgs;
use crate::resolve::{create_dir, echo, image_format};

/// Extensions recognised when scanning directories.
pub const IMAGE_EXTENSIONS: [&str; 2] = ["pgm", "dnim"];

#[derive(Debug, Serialize)]
struct DenoiseConfig<'a> {
    checkpoint: &'a Path,
    inputs: &'a [PathBuf],
    manifest: Option<&'a Path>,
    out: &'a Path,
    format: ImageFormat,
    montage: bool,
}

struct Job {
    stem: String,
    input: PathBuf,
    reference: Option<PathBuf>,
}

fn stem(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .ok_or_else(|| Error::Usage(format!("cannot name output for {}", path.display())))
}

/// Image files directly inside `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry
            .map_err(|e| Error::Io {
                path: dir.to_path_buf(),
                source: e,
            })?
            .path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if path.is_file() && IMAGE_EXTENSIONS.contains(&ext) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn jobs(args: &DenoiseArgs) -> Result<Vec<Job>> {
    if let Some(manifest) = &args.manifest {
        let base = manifest.parent().unwrap_or(Path::new("."));
        return read_manifest(manifest)?
            .into_iter()
            .map(|e| {
                let input = base.join(&e.ldct_path);
                Ok(Job {
                    stem: stem(&input)?,
                    input,
                    reference: Some(base.join(&e.ndct_path)),
                })
            })
            .collect();
    }
    if args.input.is_empty() {
        return Err(Error::Usage("give --input or --manifest".into()));
    }
    let mut out = Vec::new();
    for p in &args.input {
        let files = if p.is_dir() { list_images(p)? } else { vec![p.clone()] };
        for input in files {
            out.push(Job {
                stem: stem(&input)?,
                input,
                reference: None,
            });
        }
    }
    Ok(out)
}

/// Planes placed side by side, left to right.
pub fn montage(planes: &[&FeatureMap]) -> Result<FeatureMap> {
    let [_, _, h, _] = planes[0].dims4()?;
    let mut widths = Vec::with_capacity(planes.len());
    for p in planes {
        let [n, c, ph, pw] = p.dims4()?;
        if (n, c, ph) != (1, 1, h) {
            return Err(Error::ShapeMismatch {
                op: "montage",
                expected: format!("single planes of height {h}"),
                got: format!("({n}, {c}, {ph}, {pw})"),
            });
        }
        widths.push(pw);
    }
    let total: usize = widths.iter().sum();
    let mut data = Vec::with_capacity(h * total);
    for y in 0..h {
        for (p, &w) in planes.iter().zip(&widths) {
            data.extend_from_slice(&p.data()[y * w..(y + 1) * w]);
        }
    }
    Tensor::new(&[1, 1, h, total], data)
}

pub fn run(args: &DenoiseArgs) -> Result<()> {
    let format = image_format(&args.format)?;
    echo(
        &args.out,
        &DenoiseConfig {
            checkpoint: &args.checkpoint,
            inputs: &args.input,
            manifest: args.manifest.as_deref(),
            out: &args.out,
            format,
            montage: args.montage,
        },
    )?;
    let model = DenoMambaModel::load(&args.checkpoint)?;
    let jobs = jobs(args)?;
    let montage_dir = args.out.join("montage");
    if args.montage {
        create_dir(&montage_dir)?;
    }
    for job in &jobs {
        let ldct = read_image(&job.input)?;
        let [_, _, h, w] = ldct.dims4()?;
        model.config().check_extents(h, w)?;
        let out = denoise(&model, &ldct)?;
        write_image(&args.out.join(format!("{}.{}", job.stem, format.extension())), &out, format)?;
        if args.montage {
            let reference = job.reference.as_deref().map(read_image).transpose()?;
            let mut planes = vec![&ldct, &out];
            planes.extend(reference.as_ref());
            write_image(&montage_dir.join(format!("{}.pgm", job.stem)), &montage(&planes)?, ImageFormat::Pgm)?;
        }
        log::debug!("denoised {}", job.input.display());
    }
    log::info!("denoised {} images into {}", jobs.len(), args.out.display());
    Ok(())
}
