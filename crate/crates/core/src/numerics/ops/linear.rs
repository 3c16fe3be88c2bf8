use crate::error::{Error, Result};
use crate::numerics::tape::{Tape, Var};
use crate::numerics::tensor::{shape_str, Tensor};

fn check(x: &Tensor, w: &Tensor, bias: Option<&Tensor>) -> Result<([usize; 4], usize)> {
    let [n, c, h, wd] = x.dims4()?;
    let (out_f, in_f) = match w.shape() {
        [o, i] => (*o, *i),
        _ => return Err(Error::shape("linear", "rank-2 weight (out, in)", shape_str(w.shape()))),
    };
    if in_f != c {
        return Err(Error::shape(
            "linear",
            format!("input channels {in_f} for weight {:?}", w.shape()),
            format!("input {:?}", x.shape()),
        ));
    }
    if let Some(b) = bias {
        if b.numel() != out_f {
            return Err(Error::shape("linear bias", format!("[{out_f}]"), shape_str(b.shape())));
        }
    }
    Ok(([n, c, h, wd], out_f))
}

fn apply(x: &[f64], w: &[f64], bias: Option<&[f64]>, dims: [usize; 4], out_f: usize) -> Vec<f64> {
    let [n, c, h, wd] = dims;
    let plane = h * wd;
    let mut y = vec![0.0; n * out_f * plane];
    for b in 0..n {
        for o in 0..out_f {
            let out = &mut y[(b * out_f + o) * plane..][..plane];
            if let Some(bias) = bias {
                out.iter_mut().for_each(|v| *v = bias[o]);
            }
            for i in 0..c {
                let wv = w[o * c + i];
                if wv == 0.0 {
                    continue;
                }
                let xp = &x[(b * c + i) * plane..][..plane];
                for (v, xi) in out.iter_mut().zip(xp) {
                    *v += wv * xi;
                }
            }
        }
    }
    y
}

/// Channel-mixing map applied independently at every spatial position.
pub fn linear_forward(x: &Tensor, w: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let (dims, out_f) = check(x, w, bias)?;
    let y = apply(x.data(), w.data(), bias.map(|b| b.data()), dims, out_f);
    Tensor::new(&[dims[0], out_f, dims[2], dims[3]], y)
}

pub fn linear(tape: &Tape, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
    tape.check(x)?;
    tape.check(w)?;
    let xv = tape.value(x);
    let wv = tape.value(w);
    let bv = bias.map(|b| tape.value(b));
    let (dims, out_f) = check(&xv, &wv, bv.as_deref())?;
    let y = apply(xv.data(), wv.data(), bv.as_ref().map(|b| b.data()), dims, out_f);
    let out = Tensor::new(&[dims[0], out_f, dims[2], dims[3]], y)?;
    let mut inputs = vec![x, w];
    inputs.extend(bias);
    Ok(tape.push(
        out,
        &inputs,
        Box::new(move |dy, sink| {
            let [n, c, h, wd] = dims;
            let plane = h * wd;
            if sink.wants(x) {
                let wdata = wv.data();
                sink.accumulate(x, |dx| {
                    for b in 0..n {
                        for o in 0..out_f {
                            let dyp = &dy[(b * out_f + o) * plane..][..plane];
                            for i in 0..c {
                                let wgt = wdata[o * c + i];
                                let dxp = &mut dx[(b * c + i) * plane..][..plane];
                                for (d, g) in dxp.iter_mut().zip(dyp) {
                                    *d += wgt * g;
                                }
                            }
                        }
                    }
                });
            }
            if sink.wants(w) {
                let xdata = xv.data();
                sink.accumulate(w, |dw| {
                    for b in 0..n {
                        for o in 0..out_f {
                            let dyp = &dy[(b * out_f + o) * plane..][..plane];
                            for i in 0..c {
                                let xp = &xdata[(b * c + i) * plane..][..plane];
                                dw[o * c + i] += dyp.iter().zip(xp).map(|(g, v)| g * v).sum::<f64>();
                            }
                        }
                    }
                });
            }
            if let Some(bias) = bias {
                sink.accumulate(bias, |db| {
                    for b in 0..n {
                        for (o, slot) in db.iter_mut().enumerate() {
                            *slot += dy[(b * out_f + o) * plane..][..plane].iter().sum::<f64>();
                        }
                    }
                });
            }
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weight_passes_input() {
        let x = Tensor::from_fn4([1, 3, 2, 2], |_, c, y, x| (c * 4 + y * 2 + x) as f64);
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        let w = Tensor::new(&[3, 3], eye).unwrap();
        let y = linear_forward(&x, &w, Some(&Tensor::zeros(&[3]))).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_weight_gives_bias_map() {
        let x = Tensor::full(&[2, 2, 3, 3], 7.0);
        let w = Tensor::zeros(&[3, 2]);
        let b = Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let y = linear_forward(&x, &w, Some(&b)).unwrap();
        for n in 0..2 {
            for c in 0..3 {
                assert!((0..9).all(|p| y.at4(n, c, p / 3, p % 3) == b.data()[c]));
            }
        }
    }

    #[test]
    fn matches_naive_matmul() {
        let x = Tensor::from_fn4([2, 4, 3, 2], |n, c, y, x| ((n * 31 + c * 17 + y * 5 + x * 3) % 13) as f64 * 0.37 - 2.0);
        let w = Tensor::new(&[3, 4], (0..12).map(|i| (i as f64 * 0.71).sin()).collect()).unwrap();
        let b = Tensor::new(&[3], vec![0.1, -0.2, 0.3]).unwrap();
        let got = linear_forward(&x, &w, Some(&b)).unwrap();
        let expect = Tensor::from_fn4([2, 3, 3, 2], |n, o, y, xx| {
            let mut acc = b.data()[o];
            for i in 0..4 {
                acc += w.data()[o * 4 + i] * x.at4(n, i, y, xx);
            }
            acc
        });
        assert!(got.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn extent_mismatch_is_error() {
        let x = Tensor::zeros(&[1, 3, 2, 2]);
        let w = Tensor::zeros(&[2, 4]);
        assert!(matches!(linear_forward(&x, &w, None), Err(Error::ShapeMismatch { .. })));
    }
}
