//! Central finite differences, used as the independent oracle for every
//! hand-written backward rule.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::params::ParamStore;
use crate::numerics::tape::{Tape, Var};
use crate::numerics::tensor::Tensor;

/// Relative disagreement between step sizes above which a kink is assumed.
const SMOOTHNESS_TOLERANCE: f64 = 1e-6;

/// Fourth-order central difference for every coordinate `i`:
/// `(8·(f(θ+h) − f(θ−h)) − (f(θ+2h) − f(θ−2h))) / (12·h)` with `h = eps`.
pub fn finite_difference_grad(mut f: impl FnMut(&[f64]) -> Result<f64>, params: &[f64], eps: f64) -> Result<Vec<f64>> {
    let coords: Vec<usize> = (0..params.len()).collect();
    finite_difference_at(&mut f, params, &coords, eps)
}

/// Fourth-order central differences restricted to `coords`.
///
/// The two- and four-step central estimates must agree for a smooth objective;
/// when they do not, the stencil straddles a kink (ReLU, `|·|`) and the step is
/// shrunk before retrying.
pub fn finite_difference_at(
    mut f: impl FnMut(&[f64]) -> Result<f64>,
    params: &[f64],
    coords: &[usize],
    eps: f64,
) -> Result<Vec<f64>> {
    if !(eps > 0.0) {
        return Err(Error::Config(format!("finite difference step must be positive, got {eps}")));
    }
    let mut theta = params.to_vec();
    let mut out = Vec::with_capacity(coords.len());
    for &i in coords {
        let orig = theta[i];
        let mut estimate = 0.0;
        for h in [eps, eps * 1e-1, eps * 1e-2] {
            let mut at = |step: f64| -> Result<f64> {
                theta[i] = orig + step;
                let v = f(&theta)?;
                if !v.is_finite() {
                    return Err(Error::Oracle(format!(
                        "objective is not finite at coordinate {i} offset {step:e} (f = {v})"
                    )));
                }
                Ok(v)
            };
            let (p1, m1, p2, m2) = (at(h)?, at(-h)?, at(2.0 * h)?, at(-2.0 * h)?);
            let (d1, d2) = ((p1 - m1) / (2.0 * h), (p2 - m2) / (4.0 * h));
            estimate = (4.0 * d1 - d2) / 3.0;
            if (d1 - d2).abs() <= SMOOTHNESS_TOLERANCE * d1.abs().max(d2.abs()).max(1.0) {
                break;
            }
        }
        theta[i] = orig;
        out.push(estimate);
    }
    Ok(out)
}

/// Largest `|a − n| / max(|a|, |n|, floor)` over paired entries.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub label: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub floor: f64,
    /// Check at most this many randomly chosen coordinates (all when `None`).
    pub sample: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-4,
            floor: 1e-6,
            sample: None,
            seed: 0,
        }
    }
}

fn choose_coords(total: usize, opts: &GradCheckOptions) -> Vec<usize> {
    match opts.sample {
        Some(k) if k < total => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut idx = sample(&mut rng, total, k).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..total).collect(),
    }
}

/// Compares tape gradients of a scalar function of `inputs` against central
/// differences.
pub fn check_input_gradients(
    label: &str,
    inputs: &[Tensor],
    f: impl Fn(&Tape, &[Var]) -> Result<Var>,
    opts: GradCheckOptions,
) -> Result<GradCheckReport> {
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&tape, &vars)?;
    let grads = tape.backward(loss)?;
    let mut analytic = Vec::new();
    for (v, t) in vars.iter().zip(inputs) {
        match grads.get(*v) {
            Some(g) => analytic.extend_from_slice(g),
            None => analytic.extend(std::iter::repeat_n(0.0, t.numel())),
        }
    }

    let flat: Vec<f64> = inputs.iter().flat_map(|t| t.data().iter().copied()).collect();
    let coords = choose_coords(flat.len(), &opts);
    let eval = |theta: &[f64]| -> Result<f64> {
        let tape = Tape::inference();
        let mut offset = 0;
        let mut vars = Vec::with_capacity(inputs.len());
        for t in inputs {
            let n = t.numel();
            vars.push(tape.constant(Tensor::new(t.shape(), theta[offset..offset + n].to_vec())?));
            offset += n;
        }
        let out = f(&tape, &vars)?;
        let v = tape.value(out).data()[0];
        Ok(v)
    };
    let numeric = finite_difference_at(eval, &flat, &coords, opts.eps)?;
    let picked: Vec<f64> = coords.iter().map(|&i| analytic[i]).collect();
    Ok(GradCheckReport {
        label: label.to_string(),
        checked: coords.len(),
        max_rel_error: max_relative_error(&picked, &numeric, opts.floor),
    })
}

/// Compares parameter gradients accumulated into `store` against central
/// differences of the loss built by `loss_fn`.
pub fn check_param_gradients(
    label: &str,
    store: &mut ParamStore,
    loss_fn: impl Fn(&Tape, &ParamStore) -> Result<Var>,
    opts: GradCheckOptions,
    configure: impl Fn(&Tape),
) -> Result<GradCheckReport> {
    store.zero_grads();
    let tape = Tape::new();
    configure(&tape);
    let loss = loss_fn(&tape, store)?;
    tape.backward(loss)?.accumulate_into(store);
    drop(tape);
    let analytic = store.flatten_grads();
    let flat = store.flatten();
    let coords = choose_coords(flat.len(), &opts);

    let mut probe = store.clone();
    let eval = |theta: &[f64]| -> Result<f64> {
        probe.load_flat(theta)?;
        let tape = Tape::inference();
        let out = loss_fn(&tape, &probe)?;
        let v = tape.value(out).data()[0];
        Ok(v)
    };
    let numeric = finite_difference_at(eval, &flat, &coords, opts.eps)?;
    let picked: Vec<f64> = coords.iter().map(|&i| analytic[i]).collect();
    Ok(GradCheckReport {
        label: label.to_string(),
        checked: coords.len(),
        max_rel_error: max_relative_error(&picked, &numeric, opts.floor),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::ops;

    #[test]
    fn square_at_three() {
        let g = finite_difference_grad(|t| Ok(t[0] * t[0]), &[3.0], 1e-4).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn abs_sum_signs() {
        let g = finite_difference_grad(|t| Ok(t.iter().map(|v| v.abs()).sum()), &[2.0, -0.5, 1.0], 1e-4).unwrap();
        for (got, want) in g.iter().zip([1.0, -1.0, 1.0]) {
            assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn non_finite_objective_is_oracle_error() {
        let err = finite_difference_grad(|t| Ok(1.0 / t[0]), &[0.0], 1e-4);
        assert!(err.is_ok());
        let err = finite_difference_grad(|t| Ok(t[0].ln()), &[0.0], 1e-4).unwrap_err();
        assert!(matches!(err, Error::Oracle(_)));
    }

    #[test]
    fn sum_of_squares_backward_is_two_x() {
        let tape = Tape::new();
        let data = vec![1.5, -2.0, 0.25, 3.0];
        let x = tape.leaf(Tensor::new(&[4], data.clone()).unwrap());
        let sq = ops::mul(&tape, x, x).unwrap();
        let loss = ops::sum(&tape, sq).unwrap();
        let grads = tape.backward(loss).unwrap();
        let g = grads.get(x).unwrap();
        for (gi, xi) in g.iter().zip(&data) {
            assert_eq!(*gi, 2.0 * xi);
        }
    }

    #[test]
    fn silu_of_linear_matches_differences() {
        let x = Tensor::new(&[1, 2, 1, 2], vec![0.3, -0.7, 1.1, 0.4]).unwrap();
        let w = Tensor::new(&[2, 2], vec![0.5, -1.2, 0.8, 0.3]).unwrap();
        let report = check_input_gradients(
            "silu-linear",
            &[x, w],
            |tape, v| {
                let y = ops::linear(tape, v[0], v[1], None)?;
                let s = ops::silu(tape, y)?;
                ops::sum(tape, s)
            },
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-5, "{report:?}");
    }

    #[test]
    fn disconnected_parameter_gets_zero_gradient() {
        let mut store = ParamStore::new();
        let used = store.register("used", Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
        let unused = store.register("unused", Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap());
        let tape = Tape::new();
        let u = tape.param(&store, used);
        let _ = tape.param(&store, unused);
        let loss = ops::sum(&tape, u).unwrap();
        tape.backward(loss).unwrap().accumulate_into(&mut store);
        assert_eq!(store.grad(used), &[1.0, 1.0]);
        assert_eq!(store.grad(unused), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn backward_accumulates_across_calls() {
        let mut store = ParamStore::new();
        let p = store.register("p", Tensor::new(&[1], vec![2.0]).unwrap());
        for _ in 0..2 {
            let tape = Tape::new();
            let v = tape.param(&store, p);
            let sq = ops::mul(&tape, v, v).unwrap();
            let loss = ops::sum(&tape, sq).unwrap();
            tape.backward(loss).unwrap().accumulate_into(&mut store);
        }
        assert_eq!(store.grad(p), &[8.0]);
        store.zero_grads();
        assert_eq!(store.grad(p), &[0.0]);
    }

    #[test]
    fn backward_misuse_is_usage_error() {
        let tape = Tape::new();
        let other = Tape::new();
        let x = other.leaf(Tensor::scalar(1.0));
        assert!(matches!(tape.backward(x), Err(Error::Usage(_))));
        let v = tape.leaf(Tensor::zeros(&[3]));
        assert!(matches!(tape.backward(v), Err(Error::Usage(_))));
        let c = tape.constant(Tensor::scalar(2.0));
        assert!(matches!(tape.backward(c), Err(Error::Usage(_))));
        let inf = Tape::inference();
        let y = inf.leaf(Tensor::scalar(1.0));
        assert!(matches!(inf.backward(y), Err(Error::Usage(_))));
    }
}
