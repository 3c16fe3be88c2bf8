//! Full-reference image quality: PSNR, SSIM and range-normalised RMSE.

use crate::error::{Error, Result};
use crate::numerics::{shape_str, FeatureMap};

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;

fn check_pair(op: &'static str, a: &FeatureMap, b: &FeatureMap, data_range: f64) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, shape_str(a.shape()), shape_str(b.shape())));
    }
    if a.numel() == 0 {
        return Err(Error::Usage(format!("{op}: empty images")));
    }
    if !(data_range > 0.0) {
        return Err(Error::Config(format!("{op}: data range must be positive, got {data_range}")));
    }
    Ok(())
}

pub fn mse(a: &FeatureMap, b: &FeatureMap) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("mse", shape_str(a.shape()), shape_str(b.shape())));
    }
    let n = a.numel().max(1) as f64;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n)
}

/// `10·log10(range² / MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &FeatureMap, b: &FeatureMap, data_range: f64) -> Result<f64> {
    check_pair("psnr", a, b, data_range)?;
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (data_range * data_range / m).log10()).min(PSNR_CAP_DB))
}

/// `100·sqrt(MSE) / range`.
pub fn rmse_percent(a: &FeatureMap, b: &FeatureMap, data_range: f64) -> Result<f64> {
    check_pair("rmse", a, b, data_range)?;
    Ok(100.0 * mse(a, b)?.sqrt() / data_range)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    /// Side of the uniform square window.
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
}

impl SsimParams {
    pub fn with_range(data_range: f64) -> Self {
        SsimParams {
            data_range,
            ..Self::default()
        }
    }
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 7,
            k1: 0.01,
            k2: 0.03,
            data_range: 1.0,
        }
    }
}

/// Mean local SSIM over all fully contained windows, averaged over planes.
/// Local moments use population (1/n) statistics.
pub fn ssim(a: &FeatureMap, b: &FeatureMap, params: &SsimParams) -> Result<f64> {
    check_pair("ssim", a, b, params.data_range)?;
    let [n, c, h, w] = a.dims4()?;
    let win = params.window;
    if win == 0 || h < win || w < win {
        return Err(Error::shape("ssim", format!("images at least {win}x{win}"), format!("{h}x{w}")));
    }
    let c1 = (params.k1 * params.data_range).powi(2);
    let c2 = (params.k2 * params.data_range).powi(2);
    let count = (win * win) as f64;
    let plane = h * w;
    let mut total = 0.0;
    for p in 0..n * c {
        let pa = &a.data()[p * plane..][..plane];
        let pb = &b.data()[p * plane..][..plane];
        let mut acc = 0.0;
        for y0 in 0..=h - win {
            for x0 in 0..=w - win {
                let (mut sa, mut sb) = (0.0, 0.0);
                for y in y0..y0 + win {
                    for x in x0..x0 + win {
                        sa += pa[y * w + x];
                        sb += pb[y * w + x];
                    }
                }
                let (ma, mb) = (sa / count, sb / count);
                let (mut vaa, mut vbb, mut vab) = (0.0, 0.0, 0.0);
                for y in y0..y0 + win {
                    for x in x0..x0 + win {
                        let da = pa[y * w + x] - ma;
                        let db = pb[y * w + x] - mb;
                        vaa += da * da;
                        vbb += db * db;
                        vab += da * db;
                    }
                }
                let (vaa, vbb, vab) = (vaa / count, vbb / count, vab / count);
                acc += ((2.0 * ma * mb + c1) * (2.0 * vab + c2)) / ((ma * ma + mb * mb + c1) * (vaa + vbb + c2));
            }
        }
        total += acc / ((h - win + 1) * (w - win + 1)) as f64;
    }
    Ok(total / (n * c) as f64)
}
