use crate::error::Result;
use crate::numerics::tape::{Tape, Var};

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn silu_scalar(x: f64) -> f64 {
    x * logistic(x)
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// `x * logistic(x)`.
pub fn silu(tape: &Tape, x: Var) -> Result<Var> {
    tape.check(x)?;
    let xv = tape.value(x);
    let out = xv.map(silu_scalar);
    let scale = tape.fault_scale().unwrap_or(1.0);
    Ok(tape.push(
        out,
        &[x],
        Box::new(move |dy, sink| {
            sink.accumulate(x, |dx| {
                for ((d, g), &v) in dx.iter_mut().zip(dy).zip(xv.data()) {
                    let s = logistic(v);
                    *d += scale * g * s * (1.0 + v * (1.0 - s));
                }
            });
        }),
    ))
}

/// `max(x, 0)`; the derivative at exactly zero is taken as zero.
pub fn relu(tape: &Tape, x: Var) -> Result<Var> {
    tape.check(x)?;
    let xv = tape.value(x);
    let out = xv.map(|v| v.max(0.0));
    Ok(tape.push(
        out,
        &[x],
        Box::new(move |dy, sink| {
            sink.accumulate(x, |dx| {
                for ((d, g), &v) in dx.iter_mut().zip(dy).zip(xv.data()) {
                    if v > 0.0 {
                        *d += g;
                    }
                }
            });
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        assert_eq!(silu_scalar(0.0), 0.0);
        assert!((silu_scalar(20.0) - 20.0).abs() < 1e-6);
        // 1 / (1 + e^-1)
        assert!((silu_scalar(1.0) - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(softplus(-40.0) > 0.0);
    }

    #[test]
    fn relu_clamps_negative() {
        let tape = Tape::new();
        let x = tape.leaf(crate::Tensor::new(&[3], vec![-2.0, 0.0, 1.5]).unwrap());
        let y = relu(&tape, x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 1.5]);
    }
}
