//! Diagonal linear recurrences `h[l] = a[l] ⊙ h[l-1] + x[l]`, `y[l] = <c[l], h[l]>`
//! with `h[-1] = 0`, on explicit per-step coefficients of one stream.
//!
//! All slices are `[len, state]` row-major. The chunked form splits the
//! sequence into blocks that are scanned independently from a zero state and
//! then stitched together with the associative combine
//! `(a1, b1) ∘ (a2, b2) = (a1·a2, a2·b1 + b2)`.

use rayon::prelude::*;

pub const DEFAULT_CHUNK: usize = 64;

/// Sequences at least this long scan their chunks in parallel.
const PARALLEL_LEN: usize = 4 * DEFAULT_CHUNK;

fn check_lengths(a: &[f64], x: &[f64], c: &[f64], state: usize) -> usize {
    assert!(state > 0, "state size must be positive");
    assert_eq!(a.len(), x.len(), "decay and input lengths differ");
    assert_eq!(a.len(), c.len(), "decay and readout lengths differ");
    assert_eq!(a.len() % state, 0, "length is not a multiple of the state size");
    a.len() / state
}

/// Step-by-step reference recurrence. Writes every state to `states` when given.
pub fn scan_sequential(a: &[f64], x: &[f64], c: &[f64], state: usize, mut states: Option<&mut [f64]>) -> Vec<f64> {
    let len = check_lengths(a, x, c, state);
    let mut h = vec![0.0; state];
    let mut y = Vec::with_capacity(len);
    for l in 0..len {
        let row = l * state;
        let mut acc = 0.0;
        for n in 0..state {
            h[n] = a[row + n] * h[n] + x[row + n];
            acc += c[row + n] * h[n];
        }
        if let Some(s) = states.as_deref_mut() {
            s[row..row + state].copy_from_slice(&h);
        }
        y.push(acc);
    }
    y
}

/// Local scan of one chunk from a zero state. Fills `local` with states and
/// `decay` with running products of `a` since the chunk start.
fn scan_chunk_local(a: &[f64], x: &[f64], state: usize, local: &mut [f64], decay: &mut [f64]) {
    let len = a.len() / state;
    for l in 0..len {
        let row = l * state;
        for n in 0..state {
            let (h_prev, p_prev) = if l == 0 {
                (0.0, 1.0)
            } else {
                (local[row - state + n], decay[row - state + n])
            };
            local[row + n] = a[row + n] * h_prev + x[row + n];
            decay[row + n] = a[row + n] * p_prev;
        }
    }
}

fn finish_chunk(local: &mut [f64], decay: &[f64], carry: &[f64], c: &[f64], state: usize, y: &mut [f64]) {
    for (l, out) in y.iter_mut().enumerate() {
        let row = l * state;
        let mut acc = 0.0;
        for n in 0..state {
            let h = local[row + n] + decay[row + n] * carry[n];
            local[row + n] = h;
            acc += c[row + n] * h;
        }
        *out = acc;
    }
}

/// Chunked scan; equals [`scan_sequential`] up to rounding.
pub fn scan_chunked(a: &[f64], x: &[f64], c: &[f64], state: usize, chunk: usize, states: Option<&mut [f64]>) -> Vec<f64> {
    let len = check_lengths(a, x, c, state);
    let chunk = chunk.max(1);
    let span = chunk * state;
    let mut local_buf;
    let local: &mut [f64] = match states {
        Some(s) => {
            assert_eq!(s.len(), a.len(), "state buffer has the wrong length");
            s
        }
        None => {
            local_buf = vec![0.0; a.len()];
            &mut local_buf
        }
    };
    let mut decay = vec![0.0; a.len()];

    let parallel = len >= PARALLEL_LEN;
    let pass_one = |((l, d), (ac, xc)): ((&mut [f64], &mut [f64]), (&[f64], &[f64]))| scan_chunk_local(ac, xc, state, l, d);
    if parallel {
        local
            .par_chunks_mut(span)
            .zip(decay.par_chunks_mut(span))
            .zip(a.par_chunks(span).zip(x.par_chunks(span)))
            .for_each(pass_one);
    } else {
        local
            .chunks_mut(span)
            .zip(decay.chunks_mut(span))
            .zip(a.chunks(span).zip(x.chunks(span)))
            .for_each(pass_one);
    }

    // Carry-in for every chunk: the true state just before it starts.
    let n_chunks = len.div_ceil(chunk);
    let mut carries = vec![0.0; n_chunks * state];
    for k in 1..n_chunks {
        let end = (k * chunk - 1) * state;
        for n in 0..state {
            carries[k * state + n] = local[end + n] + decay[end + n] * carries[(k - 1) * state + n];
        }
    }

    let mut y = vec![0.0; len];
    let pass_three = |(k, ((l, d), (cc, yc))): (usize, ((&mut [f64], &[f64]), (&[f64], &mut [f64])))| {
        finish_chunk(l, d, &carries[k * state..(k + 1) * state], cc, state, yc)
    };
    if parallel {
        local
            .par_chunks_mut(span)
            .zip(decay.par_chunks(span))
            .zip(c.par_chunks(span).zip(y.par_chunks_mut(chunk)))
            .enumerate()
            .for_each(pass_three);
    } else {
        local
            .chunks_mut(span)
            .zip(decay.chunks(span))
            .zip(c.chunks(span).zip(y.chunks_mut(chunk)))
            .enumerate()
            .for_each(pass_three);
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_coefficients_give_prefix_sum() {
        let s = [3.0, -1.0, 4.0, 1.0, -5.0, 9.0];
        let ones = vec![1.0; s.len()];
        let y = scan_sequential(&ones, &s, &ones, 1, None);
        assert_eq!(y, vec![3.0, 2.0, 6.0, 7.0, 2.0, 11.0]);
        let yc = scan_chunked(&ones, &s, &ones, 1, 4, None);
        assert_eq!(yc, y);
    }

    #[test]
    fn zero_decay_is_memoryless() {
        let x = [0.5, 2.0, -1.0, 0.25, 3.0, 1.0];
        let c = [2.0, 1.0, 0.5, -1.0, 1.0, 1.0];
        let a = [0.0; 6];
        let y = scan_sequential(&a, &x, &c, 2, None);
        for l in 0..3 {
            assert_eq!(y[l], c[2 * l] * x[2 * l] + c[2 * l + 1] * x[2 * l + 1]);
        }
    }

    #[test]
    fn chunk_boundaries_do_not_matter() {
        let len = 37;
        let state = 3;
        let a: Vec<f64> = (0..len * state).map(|i| 0.5 + 0.45 * ((i as f64) * 0.37).sin()).collect();
        let x: Vec<f64> = (0..len * state).map(|i| ((i as f64) * 1.3).cos()).collect();
        let c: Vec<f64> = (0..len * state).map(|i| ((i as f64) * 0.71).sin()).collect();
        let mut s_ref = vec![0.0; len * state];
        let y_ref = scan_sequential(&a, &x, &c, state, Some(&mut s_ref));
        for chunk in [1, 2, 5, 8, 36, 37, 100] {
            let mut s = vec![0.0; len * state];
            let y = scan_chunked(&a, &x, &c, state, chunk, Some(&mut s));
            for (p, q) in y.iter().zip(&y_ref) {
                assert!((p - q).abs() < 1e-12, "chunk {chunk}");
            }
            for (p, q) in s.iter().zip(&s_ref) {
                assert!((p - q).abs() < 1e-12, "chunk {chunk}");
            }
        }
    }
}
