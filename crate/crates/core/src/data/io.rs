//! Image files and dataset manifests.
//!
//! * PGM: binary `P5`, maxval 65535, big-endian samples `round(v·65535)` of
//!   values clamped to `[0, 1]`.
//! * Raw: `"DNIM"`, height u32, width u32, reserved u32 (little-endian), then
//!   `height·width` little-endian f64 values. Lossless.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::dataset::ImagePair;
use crate::error::{Error, Result};
use crate::numerics::FeatureMap;

pub const RAW_MAGIC: &[u8; 4] = b"DNIM";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    Pgm,
    Raw,
}

impl ImageFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Pgm => "pgm",
            ImageFormat::Raw => "dnim",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pgm" => Ok(ImageFormat::Pgm),
            "raw" | "dnim" => Ok(ImageFormat::Raw),
            other => Err(Error::Usage(format!("unknown image format '{other}', expected 'pgm' or 'raw'"))),
        }
    }
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn plane(image: &FeatureMap) -> Result<(usize, usize)> {
    match image.dims4()? {
        [1, 1, h, w] => Ok((h, w)),
        _ => Err(Error::shape("image file", "(1, 1, H, W)", crate::numerics::shape_str(image.shape()))),
    }
}

pub fn encode_pgm(image: &FeatureMap) -> Result<Vec<u8>> {
    let (h, w) = plane(image)?;
    let mut out = format!("P5\n{w} {h}\n65535\n").into_bytes();
    out.reserve(h * w * 2);
    for v in image.data() {
        let q = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    Ok(out)
}

pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<FeatureMap> {
    // Header: magic, width, height, maxval separated by whitespace (comments allowed).
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(format_err(path, "truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" {
        return Err(format_err(path, format!("expected P5 magic, found '{}'", fields[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| format_err(path, format!("bad header field '{s}'")));
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval == 0 || maxval > 65535 {
        return Err(format_err(path, format!("unsupported maxval {maxval}")));
    }
    let wide = maxval > 255;
    let need = h * w * if wide { 2 } else { 1 };
    let body = bytes.get(pos..pos + need).ok_or_else(|| format_err(path, "truncated PGM data"))?;
    let data = if wide {
        body.chunks_exact(2).map(|c| f64::from(u16::from_be_bytes([c[0], c[1]])) / maxval as f64).collect()
    } else {
        body.iter().map(|&b| f64::from(b) / maxval as f64).collect()
    };
    FeatureMap::new(&[1, 1, h, w], data)
}

pub fn encode_raw(image: &FeatureMap) -> Result<Vec<u8>> {
    let (h, w) = plane(image)?;
    let mut out = Vec::with_capacity(16 + h * w * 8);
    out.extend_from_slice(RAW_MAGIC);
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for v in image.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_raw(bytes: &[u8], path: &Path) -> Result<FeatureMap> {
    if bytes.len() < 16 || &bytes[..4] != RAW_MAGIC {
        return Err(format_err(path, "missing DNIM header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    let (h, w) = (word(4), word(8));
    let body = &bytes[16..];
    if body.len() != h * w * 8 {
        return Err(format_err(path, format!("expected {} data bytes for {h}x{w}, found {}", h * w * 8, body.len())));
    }
    let data = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    FeatureMap::new(&[1, 1, h, w], data)
}

pub fn write_image(path: &Path, image: &FeatureMap, format: ImageFormat) -> Result<()> {
    let bytes = match format {
        ImageFormat::Pgm => encode_pgm(image)?,
        ImageFormat::Raw => encode_raw(image)?,
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a PGM or raw image, detected from its leading bytes.
pub fn read_image(path: &Path) -> Result<FeatureMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(RAW_MAGIC) {
        decode_raw(&bytes, path)
    } else if bytes.starts_with(b"P5") {
        decode_pgm(&bytes, path)
    } else {
        Err(format_err(path, "unrecognised image format"))
    }
}

/// One manifest row; paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub ndct_path: String,
    pub ldct_path: String,
    pub dose: f64,
    pub seed: u64,
}

pub const MANIFEST_NAME: &str = "manifest.csv";

/// Writes `ndct/NNNN.ext`, `ldct/NNNN.ext` and `manifest.csv` under `dir`;
/// returns the manifest path.
pub fn save_dataset(dir: &Path, pairs: &[ImagePair], format: ImageFormat) -> Result<PathBuf> {
    for sub in ["ndct", "ldct"] {
        let d = dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut entries = Vec::with_capacity(pairs.len());
    for (i, p) in pairs.iter().enumerate() {
        let name = format!("{i:04}.{}", format.extension());
        let (nd, ld) = (format!("ndct/{name}"), format!("ldct/{name}"));
        write_image(&dir.join(&nd), &p.ndct, format)?;
        write_image(&dir.join(&ld), &p.ldct, format)?;
        entries.push(ManifestEntry {
            index: i,
            ndct_path: nd,
            ldct_path: ld,
            dose: p.dose,
            seed: p.seed,
        });
    }
    let path = dir.join(MANIFEST_NAME);
    write_manifest(&path, &entries)?;
    Ok(path)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| format_err(path, e.to_string()))?;
    for e in entries {
        w.serialize(e).map_err(|e| format_err(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => format_err(path, format!("{other:?}")),
    })?;
    r.deserialize().map(|row| row.map_err(|e| format_err(path, e.to_string()))).collect()
}

/// Loads every pair listed in a manifest, in manifest order.
pub fn load_dataset(manifest: &Path) -> Result<Vec<ImagePair>> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    read_manifest(manifest)?
        .into_iter()
        .map(|e| {
            Ok(ImagePair {
                ndct: read_image(&base.join(&e.ndct_path))?,
                ldct: read_image(&base.join(&e.ldct_path))?,
                dose: e.dose,
                seed: e.seed,
                photons: f64::NAN,
                electronic: f64::NAN,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_dataset, NoiseParams};

    #[test]
    fn raw_round_trip_is_lossless() {
        let img = FeatureMap::from_fn4([1, 1, 3, 5], |_, _, y, x| (y as f64 - 1.3) * x as f64 / 7.0);
        let p = Path::new("mem");
        assert_eq!(decode_raw(&encode_raw(&img).unwrap(), p).unwrap(), img);
        assert!(decode_raw(&encode_raw(&img).unwrap()[..30], p).is_err());
    }

    #[test]
    fn pgm_round_trip_within_quantisation() {
        let img = FeatureMap::from_fn4([1, 1, 4, 6], |_, _, y, x| (y * 6 + x) as f64 / 23.0);
        let bytes = encode_pgm(&img).unwrap();
        assert!(bytes.starts_with(b"P5\n6 4\n65535\n"));
        let back = decode_pgm(&bytes, Path::new("mem")).unwrap();
        assert!(back.max_abs_diff(&img) <= 0.5 / 65535.0 + 1e-15);
    }

    #[test]
    fn dataset_round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let pairs = make_dataset(3, 16, &NoiseParams::default(), 1).unwrap();
        let manifest = save_dataset(dir.path(), &pairs, ImageFormat::Raw).unwrap();
        let entries = read_manifest(&manifest).unwrap();
        assert_eq!(entries[2].ldct_path, "ldct/0002.dnim");
        let back = load_dataset(&manifest).unwrap();
        for (a, b) in pairs.iter().zip(&back) {
            assert_eq!(a.ndct, b.ndct);
            assert_eq!(a.ldct, b.ldct);
            assert_eq!(a.seed, b.seed);
        }
    }
}
