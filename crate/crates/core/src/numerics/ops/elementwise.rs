use crate::error::{Error, Result};
use crate::numerics::tape::{Tape, Var};
use crate::numerics::tensor::{shape_str, Tensor};

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, shape_str(a.shape()), shape_str(b.shape())));
    }
    Ok(())
}

pub fn add(tape: &Tape, a: Var, b: Var) -> Result<Var> {
    tape.check(a)?;
    tape.check(b)?;
    let av = tape.value(a);
    let bv = tape.value(b);
    same_shape("add", &av, &bv)?;
    let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
    let out = Tensor::new(av.shape(), data)?;
    Ok(tape.push(
        out,
        &[a, b],
        Box::new(move |dy, sink| {
            sink.add(a, dy);
            sink.add(b, dy);
        }),
    ))
}

pub fn sub(tape: &Tape, a: Var, b: Var) -> Result<Var> {
    tape.check(a)?;
    tape.check(b)?;
    let av = tape.value(a);
    let bv = tape.value(b);
    same_shape("sub", &av, &bv)?;
    let data = av.data().iter().zip(bv.data()).map(|(x, y)| x - y).collect();
    let out = Tensor::new(av.shape(), data)?;
    Ok(tape.push(
        out,
        &[a, b],
        Box::new(move |dy, sink| {
            sink.add(a, dy);
            sink.accumulate(b, |db| db.iter_mut().zip(dy).for_each(|(d, g)| *d -= g));
        }),
    ))
}

/// Elementwise (Hadamard) product.
pub fn mul(tape: &Tape, a: Var, b: Var) -> Result<Var> {
    tape.check(a)?;
    tape.check(b)?;
    let av = tape.value(a);
    let bv = tape.value(b);
    same_shape("hadamard", &av, &bv)?;
    let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
    let out = Tensor::new(av.shape(), data)?;
    Ok(tape.push(
        out,
        &[a, b],
        Box::new(move |dy, sink| {
            sink.accumulate(a, |da| {
                for ((d, g), y) in da.iter_mut().zip(dy).zip(bv.data()) {
                    *d += g * y;
                }
            });
            sink.accumulate(b, |db| {
                for ((d, g), x) in db.iter_mut().zip(dy).zip(av.data()) {
                    *d += g * x;
                }
            });
        }),
    ))
}

pub fn scale(tape: &Tape, a: Var, factor: f64) -> Result<Var> {
    tape.check(a)?;
    let out = tape.value(a).map(|v| v * factor);
    Ok(tape.push(
        out,
        &[a],
        Box::new(move |dy, sink| {
            sink.accumulate(a, |da| da.iter_mut().zip(dy).for_each(|(d, g)| *d += factor * g));
        }),
    ))
}

/// Concatenation along the channel axis of rank-4 maps.
pub fn concat_channels(tape: &Tape, parts: &[Var]) -> Result<Var> {
    if parts.is_empty() {
        return Err(Error::Usage("concat_channels of zero maps".into()));
    }
    let mut dims = Vec::with_capacity(parts.len());
    for &p in parts {
        tape.check(p)?;
        dims.push(tape.value(p).dims4()?);
    }
    let [n, _, h, w] = dims[0];
    for d in &dims {
        if d[0] != n || d[2] != h || d[3] != w {
            return Err(Error::shape(
                "concat_channels",
                format!("[{n}, _, {h}, {w}]"),
                format!("{:?}", d),
            ));
        }
    }
    let chans: Vec<usize> = dims.iter().map(|d| d[1]).collect();
    let total: usize = chans.iter().sum();
    let plane = h * w;
    let values: Vec<_> = parts.iter().map(|&p| tape.value(p)).collect();
    let mut data = Vec::with_capacity(n * total * plane);
    for b in 0..n {
        for (v, &c) in values.iter().zip(&chans) {
            data.extend_from_slice(&v.data()[b * c * plane..(b + 1) * c * plane]);
        }
    }
    let out = Tensor::new(&[n, total, h, w], data)?;
    let inputs = parts.to_vec();
    Ok(tape.push(
        out,
        parts,
        Box::new(move |dy, sink| {
            let mut offset = 0;
            for (&part, &c) in inputs.iter().zip(&chans) {
                sink.accumulate(part, |dp| {
                    for b in 0..n {
                        let src = &dy[(b * total + offset) * plane..][..c * plane];
                        for (d, g) in dp[b * c * plane..][..c * plane].iter_mut().zip(src) {
                            *d += g;
                        }
                    }
                });
                offset += c;
            }
        }),
    ))
}

/// Channels `[start, start + len)` of a rank-4 map.
pub fn slice_channels(tape: &Tape, x: Var, start: usize, len: usize) -> Result<Var> {
    tape.check(x)?;
    let xv = tape.value(x);
    let [n, c, h, w] = xv.dims4()?;
    if start + len > c || len == 0 {
        return Err(Error::shape(
            "slice_channels",
            format!("channel range within 0..{c}"),
            format!("{start}..{}", start + len),
        ));
    }
    let plane = h * w;
    let mut data = Vec::with_capacity(n * len * plane);
    for b in 0..n {
        data.extend_from_slice(&xv.data()[(b * c + start) * plane..][..len * plane]);
    }
    let out = Tensor::new(&[n, len, h, w], data)?;
    Ok(tape.push(
        out,
        &[x],
        Box::new(move |dy, sink| {
            sink.accumulate(x, |dx| {
                for b in 0..n {
                    let dst = &mut dx[(b * c + start) * plane..][..len * plane];
                    for (d, g) in dst.iter_mut().zip(&dy[b * len * plane..][..len * plane]) {
                        *d += g;
                    }
                }
            });
        }),
    ))
}

/// Same values under a new shape (row-major order is kept).
pub fn reshape(tape: &Tape, x: Var, shape: &[usize]) -> Result<Var> {
    tape.check(x)?;
    let out = (*tape.value(x)).clone().reshape(shape)?;
    Ok(tape.push(out, &[x], Box::new(move |dy, sink| sink.add(x, dy))))
}

pub fn sum(tape: &Tape, x: Var) -> Result<Var> {
    tape.check(x)?;
    let out = Tensor::scalar(tape.value(x).sum());
    Ok(tape.push(
        out,
        &[x],
        Box::new(move |dy, sink| {
            let g = dy[0];
            sink.accumulate(x, |dx| dx.iter_mut().for_each(|d| *d += g));
        }),
    ))
}

pub fn mean(tape: &Tape, x: Var) -> Result<Var> {
    let n = tape.value(x).numel() as f64;
    let s = sum(tape, x)?;
    scale(tape, s, 1.0 / n)
}

/// Mean of |a - b|; the subgradient at a tie is zero.
pub fn mean_abs_diff(tape: &Tape, a: Var, b: Var) -> Result<Var> {
    tape.check(a)?;
    tape.check(b)?;
    let av = tape.value(a);
    let bv = tape.value(b);
    same_shape("mean_abs_diff", &av, &bv)?;
    let n = av.numel() as f64;
    let total: f64 = av.data().iter().zip(bv.data()).map(|(x, y)| (x - y).abs()).sum();
    let out = Tensor::scalar(total / n);
    Ok(tape.push(
        out,
        &[a, b],
        Box::new(move |dy, sink| {
            let g = dy[0] / n;
            let sign = |x: f64, y: f64| {
                if x > y {
                    1.0
                } else if x < y {
                    -1.0
                } else {
                    0.0
                }
            };
            sink.accumulate(a, |da| {
                for ((d, x), y) in da.iter_mut().zip(av.data()).zip(bv.data()) {
                    *d += g * sign(*x, *y);
                }
            });
            sink.accumulate(b, |db| {
                for ((d, x), y) in db.iter_mut().zip(av.data()).zip(bv.data()) {
                    *d -= g * sign(*x, *y);
                }
            });
        }),
    ))
}
