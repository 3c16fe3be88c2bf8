//! Grouped 2-D convolution and stride-2 transposed convolution.
//!
//! Three kernels cover everything: the forward correlation, its adjoint with
//! respect to the input, and the weight gradient. A transposed convolution is
//! the input-adjoint of an ordinary convolution, so it reuses the same pair.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::tape::{Tape, Var};
use crate::numerics::tensor::{shape_str, Tensor};

/// Zero padding on each border.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub fn uniform(p: usize) -> Self {
        Padding {
            top: p,
            bottom: p,
            left: p,
            right: p,
        }
    }

    /// Padding that keeps extents unchanged at stride 1. Even kernels put the
    /// extra row/column on the bottom/right.
    pub fn same(kernel: usize) -> Self {
        let before = (kernel - 1) / 2;
        let after = kernel - 1 - before;
        Padding {
            top: before,
            bottom: after,
            left: before,
            right: after,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: Padding,
    pub groups: usize,
}

impl Conv2dSpec {
    pub fn new(stride: usize, padding: usize, groups: usize) -> Self {
        Conv2dSpec {
            stride,
            padding: Padding::uniform(padding),
            groups,
        }
    }

    pub fn same(kernel: usize, groups: usize) -> Self {
        Conv2dSpec {
            stride: 1,
            padding: Padding::same(kernel),
            groups,
        }
    }
}

/// Index geometry shared by the three kernels. `x` is the correlation input,
/// `y` its output; weights are `[y_ch, x_ch / groups, kh, kw]`.
#[derive(Clone, Copy, Debug)]
struct Geom {
    batch: usize,
    x_ch: usize,
    x_h: usize,
    x_w: usize,
    y_ch: usize,
    y_h: usize,
    y_w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad_top: usize,
    pad_left: usize,
    groups: usize,
}

impl Geom {
    fn x_per_group(&self) -> usize {
        self.x_ch / self.groups
    }

    fn y_per_group(&self) -> usize {
        self.y_ch / self.groups
    }
}

/// Output indices `o` with `0 <= o * stride + offset < in_len`.
fn valid_range(out_len: usize, in_len: usize, stride: usize, offset: isize) -> (usize, usize) {
    let s = stride as isize;
    let start = if offset >= 0 { 0 } else { ((-offset) + s - 1) / s };
    let last_ok = in_len as isize - 1 - offset;
    if last_ok < 0 {
        return (0, 0);
    }
    let end = (last_ok / s + 1).min(out_len as isize);
    let start = start.min(end);
    (start as usize, end as usize)
}

fn correlate(x: &[f64], w: &[f64], bias: Option<&[f64]>, g: &Geom) -> Vec<f64> {
    let y_plane = g.y_h * g.y_w;
    let x_plane = g.x_h * g.x_w;
    let mut y = vec![0.0; g.batch * g.y_ch * y_plane];
    let xg = g.x_per_group();
    let yg = g.y_per_group();
    y.par_chunks_mut(y_plane).enumerate().for_each(|(plane, out)| {
        let n = plane / g.y_ch;
        let co = plane % g.y_ch;
        if let Some(b) = bias {
            out.iter_mut().for_each(|v| *v = b[co]);
        }
        let group = co / yg;
        for cil in 0..xg {
            let ci = group * xg + cil;
            let xp = &x[(n * g.x_ch + ci) * x_plane..][..x_plane];
            for ky in 0..g.kh {
                let (oy0, oy1) = valid_range(g.y_h, g.x_h, g.stride, ky as isize - g.pad_top as isize);
                for kx in 0..g.kw {
                    let wv = w[((co * xg + cil) * g.kh + ky) * g.kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let off_x = kx as isize - g.pad_left as isize;
                    let (ox0, ox1) = valid_range(g.y_w, g.x_w, g.stride, off_x);
                    for oy in oy0..oy1 {
                        let iy = (oy * g.stride + ky) - g.pad_top;
                        let xrow = &xp[iy * g.x_w..][..g.x_w];
                        let orow = &mut out[oy * g.y_w..][..g.y_w];
                        if g.stride == 1 {
                            let ix0 = (ox0 as isize + off_x) as usize;
                            for (o, xi) in orow[ox0..ox1].iter_mut().zip(&xrow[ix0..]) {
                                *o += wv * xi;
                            }
                        } else {
                            for ox in ox0..ox1 {
                                let ix = (ox as isize * g.stride as isize + off_x) as usize;
                                orow[ox] += wv * xrow[ix];
                            }
                        }
                    }
                }
            }
        }
    });
    y
}

/// Adjoint of [`correlate`] with respect to `x`.
fn correlate_adjoint_input(dy: &[f64], w: &[f64], g: &Geom) -> Vec<f64> {
    let y_plane = g.y_h * g.y_w;
    let x_plane = g.x_h * g.x_w;
    let mut dx = vec![0.0; g.batch * g.x_ch * x_plane];
    let xg = g.x_per_group();
    let yg = g.y_per_group();
    dx.par_chunks_mut(x_plane).enumerate().for_each(|(plane, out)| {
        let n = plane / g.x_ch;
        let ci = plane % g.x_ch;
        let group = ci / xg;
        let cil = ci % xg;
        for co in group * yg..(group + 1) * yg {
            let dyp = &dy[(n * g.y_ch + co) * y_plane..][..y_plane];
            for ky in 0..g.kh {
                let (oy0, oy1) = valid_range(g.y_h, g.x_h, g.stride, ky as isize - g.pad_top as isize);
                for kx in 0..g.kw {
                    let wv = w[((co * xg + cil) * g.kh + ky) * g.kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let off_x = kx as isize - g.pad_left as isize;
                    let (ox0, ox1) = valid_range(g.y_w, g.x_w, g.stride, off_x);
                    for oy in oy0..oy1 {
                        let iy = (oy * g.stride + ky) - g.pad_top;
                        let drow = &dyp[oy * g.y_w..][..g.y_w];
                        let xrow = &mut out[iy * g.x_w..][..g.x_w];
                        if g.stride == 1 {
                            let ix0 = (ox0 as isize + off_x) as usize;
                            for (xi, d) in xrow[ix0..].iter_mut().zip(&drow[ox0..ox1]) {
                                *xi += wv * d;
                            }
                        } else {
                            for ox in ox0..ox1 {
                                let ix = (ox as isize * g.stride as isize + off_x) as usize;
                                xrow[ix] += wv * drow[ox];
                            }
                        }
                    }
                }
            }
        }
    });
    dx
}

/// Gradient of [`correlate`] with respect to the weights.
fn correlate_weight_grad(x: &[f64], dy: &[f64], g: &Geom) -> Vec<f64> {
    let y_plane = g.y_h * g.y_w;
    let x_plane = g.x_h * g.x_w;
    let xg = g.x_per_group();
    let yg = g.y_per_group();
    let per_out = xg * g.kh * g.kw;
    let mut dw = vec![0.0; g.y_ch * per_out];
    dw.par_chunks_mut(per_out).enumerate().for_each(|(co, out)| {
        let group = co / yg;
        for n in 0..g.batch {
            let dyp = &dy[(n * g.y_ch + co) * y_plane..][..y_plane];
            for cil in 0..xg {
                let ci = group * xg + cil;
                let xp = &x[(n * g.x_ch + ci) * x_plane..][..x_plane];
                for ky in 0..g.kh {
                    let (oy0, oy1) = valid_range(g.y_h, g.x_h, g.stride, ky as isize - g.pad_top as isize);
                    for kx in 0..g.kw {
                        let off_x = kx as isize - g.pad_left as isize;
                        let (ox0, ox1) = valid_range(g.y_w, g.x_w, g.stride, off_x);
                        let mut acc = 0.0;
                        for oy in oy0..oy1 {
                            let iy = (oy * g.stride + ky) - g.pad_top;
                            let xrow = &xp[iy * g.x_w..][..g.x_w];
                            let drow = &dyp[oy * g.y_w..][..g.y_w];
                            for ox in ox0..ox1 {
                                let ix = (ox as isize * g.stride as isize + off_x) as usize;
                                acc += drow[ox] * xrow[ix];
                            }
                        }
                        out[(cil * g.kh + ky) * g.kw + kx] += acc;
                    }
                }
            }
        }
    });
    dw
}

fn plane_sums(dy: &[f64], batch: usize, ch: usize, plane: usize) -> Vec<f64> {
    let mut db = vec![0.0; ch];
    for n in 0..batch {
        for (c, slot) in db.iter_mut().enumerate() {
            *slot += dy[(n * ch + c) * plane..][..plane].iter().sum::<f64>();
        }
    }
    db
}

fn conv_geom(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, spec: &Conv2dSpec) -> Result<Geom> {
    let [n, ci, h, wd] = x.dims4()?;
    let [co, cig, kh, kw] = w.dims4().map_err(|_| {
        Error::shape("conv2d", "rank-4 weight (out, in/groups, kh, kw)", shape_str(w.shape()))
    })?;
    let groups = spec.groups;
    if groups == 0 || spec.stride == 0 {
        return Err(Error::Config("conv2d: stride and groups must be positive".into()));
    }
    if ci % groups != 0 || co % groups != 0 || ci / groups != cig {
        return Err(Error::shape(
            "conv2d",
            format!("weight (_, {}, _, _) for input {:?} with groups {}", ci / groups.max(1), x.shape(), groups),
            format!("weight {:?}", w.shape()),
        ));
    }
    if let Some(b) = bias {
        if b.numel() != co {
            return Err(Error::shape("conv2d bias", format!("[{co}]"), shape_str(b.shape())));
        }
    }
    let p = spec.padding;
    if h + p.top + p.bottom < kh || wd + p.left + p.right < kw {
        return Err(Error::shape(
            "conv2d",
            format!("padded input at least {kh}x{kw}"),
            format!("{:?}", x.shape()),
        ));
    }
    Ok(Geom {
        batch: n,
        x_ch: ci,
        x_h: h,
        x_w: wd,
        y_ch: co,
        y_h: (h + p.top + p.bottom - kh) / spec.stride + 1,
        y_w: (wd + p.left + p.right - kw) / spec.stride + 1,
        kh,
        kw,
        stride: spec.stride,
        pad_top: p.top,
        pad_left: p.left,
        groups,
    })
}

/// Plain (untaped) grouped convolution.
pub fn conv2d_forward(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, spec: &Conv2dSpec) -> Result<Tensor> {
    let g = conv_geom(x, w, bias, spec)?;
    let y = correlate(x.data(), w.data(), bias.map(|b| b.data()), &g);
    Tensor::new(&[g.batch, g.y_ch, g.y_h, g.y_w], y)
}

/// Grouped 2-D cross-correlation with zero padding, recorded on the tape.
pub fn conv2d(tape: &Tape, x: Var, w: Var, bias: Option<Var>, spec: Conv2dSpec) -> Result<Var> {
    tape.check(x)?;
    tape.check(w)?;
    let xv = tape.value(x);
    let wv = tape.value(w);
    let bv = bias.map(|b| tape.value(b));
    let g = conv_geom(&xv, &wv, bv.as_deref(), &spec)?;
    let y = correlate(xv.data(), wv.data(), bv.as_ref().map(|b| b.data()), &g);
    let out = Tensor::new(&[g.batch, g.y_ch, g.y_h, g.y_w], y)?;
    let mut inputs = vec![x, w];
    inputs.extend(bias);
    Ok(tape.push(
        out,
        &inputs,
        Box::new(move |dy, sink| {
            if sink.wants(x) {
                let dx = correlate_adjoint_input(dy, wv.data(), &g);
                sink.add(x, &dx);
            }
            if sink.wants(w) {
                let dw = correlate_weight_grad(xv.data(), dy, &g);
                sink.add(w, &dw);
            }
            if let Some(b) = bias {
                if sink.wants(b) {
                    let db = plane_sums(dy, g.batch, g.y_ch, g.y_h * g.y_w);
                    sink.add(b, &db);
                }
            }
        }),
    ))
}

/// Geometry of a transposed convolution seen as the adjoint of a correlation
/// from its output (`y` side of the correlation is the transposed input).
fn transpose_geom(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, stride: usize, padding: usize, output_padding: usize) -> Result<Geom> {
    let [n, ci, h, wd] = x.dims4()?;
    let [wci, co, kh, kw] = w
        .dims4()
        .map_err(|_| Error::shape("conv_transpose2d", "rank-4 weight (in, out, kh, kw)", shape_str(w.shape())))?;
    if wci != ci {
        return Err(Error::shape(
            "conv_transpose2d",
            format!("weight ({ci}, _, _, _) for input {:?}", x.shape()),
            format!("weight {:?}", w.shape()),
        ));
    }
    if let Some(b) = bias {
        if b.numel() != co {
            return Err(Error::shape("conv_transpose2d bias", format!("[{co}]"), shape_str(b.shape())));
        }
    }
    if stride == 0 || output_padding >= stride {
        return Err(Error::Config("conv_transpose2d: need stride > output_padding".into()));
    }
    let oh = ((h - 1) * stride + kh + output_padding)
        .checked_sub(2 * padding)
        .ok_or_else(|| Error::Config("conv_transpose2d: padding too large".into()))?;
    let ow = ((wd - 1) * stride + kw + output_padding)
        .checked_sub(2 * padding)
        .ok_or_else(|| Error::Config("conv_transpose2d: padding too large".into()))?;
    // Correlation from the transposed output (x side) to the transposed input (y side).
    Ok(Geom {
        batch: n,
        x_ch: co,
        x_h: oh,
        x_w: ow,
        y_ch: ci,
        y_h: h,
        y_w: wd,
        kh,
        kw,
        stride,
        pad_top: padding,
        pad_left: padding,
        groups: 1,
    })
}

fn add_bias(out: &mut [f64], bias: &[f64], batch: usize, plane: usize) {
    let ch = bias.len();
    for n in 0..batch {
        for (c, b) in bias.iter().enumerate() {
            out[(n * ch + c) * plane..][..plane].iter_mut().for_each(|v| *v += b);
        }
    }
}

/// Untaped transposed convolution; weight layout `(in, out, kh, kw)`.
pub fn conv_transpose2d_forward(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Result<Tensor> {
    let g = transpose_geom(x, w, bias, stride, padding, output_padding)?;
    let mut y = correlate_adjoint_input(x.data(), w.data(), &g);
    if let Some(b) = bias {
        add_bias(&mut y, b.data(), g.batch, g.x_h * g.x_w);
    }
    Tensor::new(&[g.batch, g.x_ch, g.x_h, g.x_w], y)
}

/// Transposed convolution (learnable upsampling), recorded on the tape.
pub fn conv_transpose2d(
    tape: &Tape,
    x: Var,
    w: Var,
    bias: Option<Var>,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Result<Var> {
    tape.check(x)?;
    tape.check(w)?;
    let xv = tape.value(x);
    let wv = tape.value(w);
    let bv = bias.map(|b| tape.value(b));
    let g = transpose_geom(&xv, &wv, bv.as_deref(), stride, padding, output_padding)?;
    let mut y = correlate_adjoint_input(xv.data(), wv.data(), &g);
    if let Some(b) = &bv {
        add_bias(&mut y, b.data(), g.batch, g.x_h * g.x_w);
    }
    let out = Tensor::new(&[g.batch, g.x_ch, g.x_h, g.x_w], y)?;
    let mut inputs = vec![x, w];
    inputs.extend(bias);
    Ok(tape.push(
        out,
        &inputs,
        Box::new(move |dy, sink| {
            if sink.wants(x) {
                let dx = correlate(dy, wv.data(), None, &g);
                sink.add(x, &dx);
            }
            if sink.wants(w) {
                let dw = correlate_weight_grad(dy, xv.data(), &g);
                sink.add(w, &dw);
            }
            if let Some(b) = bias {
                if sink.wants(b) {
                    let db = plane_sums(dy, g.batch, g.x_ch, g.x_h * g.x_w);
                    sink.add(b, &db);
                }
            }
        }),
    ))
}
