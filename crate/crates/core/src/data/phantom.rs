//! Synthetic normal-dose slices: a soft-edged body disk carrying 3–8 soft
//! ellipses of distinct intensities and one thin line structure.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::FeatureMap;

pub const MIN_PHANTOM_EXTENT: usize = 16;

/// RNG stream used for phantom geometry; noise uses another stream.
pub(crate) const PHANTOM_STREAM: u64 = 0;

/// Smooth 0→1 step across a band of about one pixel around `d = 0`.
fn soft_inside(d: f64, edge: f64) -> f64 {
    1.0 / (1.0 + (d / edge).exp())
}

pub fn generate_phantom(seed: u64, height: usize, width: usize) -> Result<FeatureMap> {
    if height < MIN_PHANTOM_EXTENT || width < MIN_PHANTOM_EXTENT {
        return Err(Error::Config(format!(
            "phantom extents must be at least {MIN_PHANTOM_EXTENT}, got {height}x{width}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(PHANTOM_STREAM);
    let (hf, wf) = (height as f64, width as f64);
    let (cy, cx) = (hf / 2.0, wf / 2.0);
    let scale = hf.min(wf) / 2.0;
    let edge = 0.6;

    let body_r = scale * rng.gen_range(0.78..0.9);
    let body_level = rng.gen_range(0.25..0.35);
    let mut img = vec![0.0; height * width];
    for y in 0..height {
        for x in 0..width {
            let (py, px) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
            let d = (py * py + px * px).sqrt() - body_r;
            img[y * width + x] = body_level * soft_inside(d, edge);
        }
    }

    let count = rng.gen_range(3..=8);
    for i in 0..count {
        // Alternate darker and brighter inserts so plateaus stay separated.
        let level = if i % 2 == 0 { rng.gen_range(0.6..0.95) } else { rng.gen_range(0.05..0.15) };
        let ry = scale * rng.gen_range(0.12..0.32);
        let rx = scale * rng.gen_range(0.12..0.32);
        let max_off = (body_r - ry.max(rx)).max(0.0) * 0.8;
        let oy = rng.gen_range(-max_off..=max_off);
        let ox = rng.gen_range(-max_off..=max_off);
        let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        let (s, c) = theta.sin_cos();
        for y in 0..height {
            for x in 0..width {
                let (py, px) = (y as f64 + 0.5 - cy - oy, x as f64 + 0.5 - cx - ox);
                let (u, v) = (c * px + s * py, -s * px + c * py);
                let rho = ((u / rx).powi(2) + (v / ry).powi(2)).sqrt();
                // Approximate distance to the boundary in pixels.
                let d = (rho - 1.0) * rx.min(ry);
                let m = soft_inside(d, edge);
                let p = &mut img[y * width + x];
                *p = *p * (1.0 - m) + level * m;
            }
        }
    }

    // Thin bright line segment (about 1.5 px wide) crossing the body.
    let half_width = rng.gen_range(0.6..0.9);
    let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
    let (s, c) = angle.sin_cos();
    let offset = rng.gen_range(-0.3..0.3) * scale;
    let half_len = body_r * 0.7;
    let line_level = rng.gen_range(0.85..1.0);
    for y in 0..height {
        for x in 0..width {
            let (py, px) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
            let across = -s * px + c * py - offset;
            let along = c * px + s * py;
            if along.abs() > half_len {
                continue;
            }
            let m = soft_inside(across.abs() - half_width, 0.25);
            let p = &mut img[y * width + x];
            *p = *p * (1.0 - m) + line_level * m;
        }
    }

    for v in img.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    FeatureMap::new(&[1, 1, height, width], img)
}
