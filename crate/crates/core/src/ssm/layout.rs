//! Conversions between feature maps and scan sequences.
//!
//! Sequences are `(batch, length, channels)` row-major. The 2-D cross scan
//! produces four traversals per image (row-major, column-major and both
//! reversals) stacked on the batch axis as `batch * 4 + direction`.

use crate::error::{Error, Result};
use crate::numerics::{FeatureMap, Tape, Tensor, Var};

/// Which traversal produced a sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScanOrigin {
    RowMajor,
    ColumnMajor,
    RowMajorReversed,
    ColumnMajorReversed,
    Channel,
    Raw,
}

impl ScanOrigin {
    pub const SPATIAL: [ScanOrigin; 4] = [
        ScanOrigin::RowMajor,
        ScanOrigin::ColumnMajor,
        ScanOrigin::RowMajorReversed,
        ScanOrigin::ColumnMajorReversed,
    ];
}

/// A batch of sequences `values[(b * length + l) * channels + c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanSequence {
    pub batch: usize,
    pub length: usize,
    pub channels: usize,
    pub values: Vec<f64>,
    pub origin: ScanOrigin,
}

impl ScanSequence {
    pub fn new(batch: usize, length: usize, channels: usize, values: Vec<f64>, origin: ScanOrigin) -> Result<Self> {
        if values.len() != batch * length * channels {
            return Err(Error::shape(
                "scan sequence",
                format!("{} values for ({batch}, {length}, {channels})", batch * length * channels),
                format!("{} values", values.len()),
            ));
        }
        Ok(ScanSequence {
            batch,
            length,
            channels,
            values,
            origin,
        })
    }

    pub fn zeros(batch: usize, length: usize, channels: usize) -> Self {
        ScanSequence {
            batch,
            length,
            channels,
            values: vec![0.0; batch * length * channels],
            origin: ScanOrigin::Raw,
        }
    }

    pub fn at(&self, b: usize, l: usize, c: usize) -> f64 {
        self.values[(b * self.length + l) * self.channels + c]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[self.batch, self.length, self.channels], self.values.clone()).expect("consistent sequence")
    }

    pub fn from_tensor(t: &Tensor, origin: ScanOrigin) -> Result<Self> {
        let [b, l, c] = t.dims3()?;
        ScanSequence::new(b, l, c, t.data().to_vec(), origin)
    }
}

/// Pixel index visited at step `t` of each of the four traversals.
fn traversal_orders(h: usize, w: usize) -> [Vec<usize>; 4] {
    let len = h * w;
    let row: Vec<usize> = (0..len).collect();
    let col: Vec<usize> = (0..len).map(|t| (t % h) * w + t / h).collect();
    let row_rev: Vec<usize> = row.iter().rev().copied().collect();
    let col_rev: Vec<usize> = col.iter().rev().copied().collect();
    [row, col, row_rev, col_rev]
}

fn gather_cross(x: &[f64], dims: [usize; 4]) -> Vec<f64> {
    let [n, d, h, w] = dims;
    let len = h * w;
    let orders = traversal_orders(h, w);
    let mut out = vec![0.0; n * 4 * len * d];
    for b in 0..n {
        for (dir, order) in orders.iter().enumerate() {
            let seq = &mut out[(b * 4 + dir) * len * d..][..len * d];
            for c in 0..d {
                let plane = &x[(b * d + c) * len..][..len];
                for (t, &p) in order.iter().enumerate() {
                    seq[t * d + c] = plane[p];
                }
            }
        }
    }
    out
}

fn scatter_cross(y: &[f64], dims: [usize; 4]) -> Vec<f64> {
    let [n, d, h, w] = dims;
    let len = h * w;
    let orders = traversal_orders(h, w);
    let mut out = vec![0.0; n * d * len];
    for b in 0..n {
        for (dir, order) in orders.iter().enumerate() {
            let seq = &y[(b * 4 + dir) * len * d..][..len * d];
            for c in 0..d {
                let plane = &mut out[(b * d + c) * len..][..len];
                for (t, &p) in order.iter().enumerate() {
                    plane[p] += seq[t * d + c];
                }
            }
        }
    }
    out
}

/// Expands a map into its four directional traversals.
pub fn cross_scan_2d(map: &FeatureMap) -> Result<[ScanSequence; 4]> {
    let dims = map.dims4()?;
    let [n, d, h, w] = dims;
    if h * w == 0 {
        return Err(Error::shape("cross_scan_2d", "non-empty spatial extent", format!("{:?}", map.shape())));
    }
    let all = gather_cross(map.data(), dims);
    let len = h * w;
    let mut seqs: [Vec<f64>; 4] = Default::default();
    for b in 0..n {
        for (dir, seq) in seqs.iter_mut().enumerate() {
            seq.extend_from_slice(&all[(b * 4 + dir) * len * d..][..len * d]);
        }
    }
    let [s0, s1, s2, s3] = seqs;
    let mk = |v, o| ScanSequence::new(n, len, d, v, o);
    Ok([
        mk(s0, ScanOrigin::RowMajor)?,
        mk(s1, ScanOrigin::ColumnMajor)?,
        mk(s2, ScanOrigin::RowMajorReversed)?,
        mk(s3, ScanOrigin::ColumnMajorReversed)?,
    ])
}

/// Undoes each traversal and sums the four maps.
pub fn cross_merge_2d(seqs: &[ScanSequence], dims: [usize; 4]) -> Result<FeatureMap> {
    let [n, d, h, w] = dims;
    let len = h * w;
    if seqs.len() != 4 {
        return Err(Error::shape("cross_merge_2d", "4 sequences", format!("{}", seqs.len())));
    }
    for s in seqs {
        if s.batch != n || s.length != len || s.channels != d {
            return Err(Error::shape(
                "cross_merge_2d",
                format!("({n}, {len}, {d})"),
                format!("({}, {}, {})", s.batch, s.length, s.channels),
            ));
        }
    }
    let mut stacked = vec![0.0; n * 4 * len * d];
    for b in 0..n {
        for (dir, s) in seqs.iter().enumerate() {
            stacked[(b * 4 + dir) * len * d..][..len * d].copy_from_slice(&s.values[b * len * d..][..len * d]);
        }
    }
    Tensor::new(&dims, scatter_cross(&stacked, dims))
}

/// Channel-axis sequence: length = channel count, features = flattened space.
pub fn channel_scan(map: &FeatureMap) -> Result<ScanSequence> {
    let [n, c, h, w] = map.dims4()?;
    ScanSequence::new(n, c, h * w, map.data().to_vec(), ScanOrigin::Channel)
}

pub fn channel_unscan(seq: &ScanSequence, dims: [usize; 4]) -> Result<FeatureMap> {
    let [n, c, h, w] = dims;
    if seq.batch != n || seq.length != c || seq.channels != h * w {
        return Err(Error::shape(
            "channel_unscan",
            format!("({n}, {c}, {})", h * w),
            format!("({}, {}, {})", seq.batch, seq.length, seq.channels),
        ));
    }
    Tensor::new(&dims, seq.values.clone())
}

/// Taped cross scan: `(B, D, H, W)` → `(4B, H·W, D)`.
pub fn cross_scan(tape: &Tape, x: Var) -> Result<Var> {
    tape.check(x)?;
    let xv = tape.value(x);
    let dims = xv.dims4()?;
    let [n, d, h, w] = dims;
    let out = Tensor::new(&[4 * n, h * w, d], gather_cross(xv.data(), dims))?;
    Ok(tape.push(
        out,
        &[x],
        Box::new(move |dy, sink| {
            if sink.wants(x) {
                sink.add(x, &scatter_cross(dy, dims));
            }
        }),
    ))
}

/// Taped cross merge: `(4B, H·W, D)` → `(B, D, H, W)`.
pub fn cross_merge(tape: &Tape, y: Var, height: usize, width: usize) -> Result<Var> {
    tape.check(y)?;
    let yv = tape.value(y);
    let [b4, len, d] = yv.dims3()?;
    if b4 % 4 != 0 || len != height * width {
        return Err(Error::shape(
            "cross_merge",
            format!("(4k, {}, _)", height * width),
            format!("{:?}", yv.shape()),
        ));
    }
    let dims = [b4 / 4, d, height, width];
    let out = Tensor::new(&dims, scatter_cross(yv.data(), dims))?;
    Ok(tape.push(
        out,
        &[y],
        Box::new(move |dy, sink| {
            if sink.wants(y) {
                sink.add(y, &gather_cross(dy, dims));
            }
        }),
    ))
}

/// Reverses `(B, L, F)` sequences along `L`.
pub fn reverse_sequence(tape: &Tape, x: Var) -> Result<Var> {
    tape.check(x)?;
    let xv = tape.value(x);
    let [b, l, f] = xv.dims3()?;
    let flip = move |src: &[f64]| {
        let mut out = vec![0.0; src.len()];
        for bi in 0..b {
            for t in 0..l {
                out[(bi * l + t) * f..][..f].copy_from_slice(&src[(bi * l + (l - 1 - t)) * f..][..f]);
            }
        }
        out
    };
    let out = Tensor::new(&[b, l, f], flip(xv.data()))?;
    Ok(tape.push(
        out,
        &[x],
        Box::new(move |dy, sink| {
            if sink.wants(x) {
                sink.add(x, &flip(dy));
            }
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_traversals() {
        // [[a, b], [c, d]] = [[1, 2], [3, 4]]
        let map = Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let seqs = cross_scan_2d(&map).unwrap();
        let vals: Vec<Vec<f64>> = seqs.iter().map(|s| s.values.clone()).collect();
        assert_eq!(vals[0], vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(vals[1], vec![1.0, 3.0, 2.0, 4.0]);
        assert_eq!(vals[2], vec![4.0, 3.0, 2.0, 1.0]);
        assert_eq!(vals[3], vec![4.0, 2.0, 3.0, 1.0]);
    }

    #[test]
    fn single_pixel_traversals_agree() {
        let map = Tensor::new(&[1, 2, 1, 1], vec![5.0, -1.0]).unwrap();
        let seqs = cross_scan_2d(&map).unwrap();
        for s in &seqs {
            assert_eq!(s.length, 1);
            assert_eq!(s.values, seqs[0].values);
        }
    }

    #[test]
    fn identity_merge_is_four_times_input() {
        let map = Tensor::from_fn4([2, 3, 3, 5], |n, c, y, x| (n * 50 + c * 17 + y * 5 + x) as f64);
        let seqs = cross_scan_2d(&map).unwrap();
        let merged = cross_merge_2d(&seqs, map.dims4().unwrap()).unwrap();
        assert_eq!(merged, map.map(|v| 4.0 * v));
    }

    #[test]
    fn merge_rejects_inconsistent_lengths() {
        let map = Tensor::zeros(&[1, 2, 2, 3]);
        let mut seqs = cross_scan_2d(&map).unwrap().to_vec();
        seqs[2] = ScanSequence::zeros(1, 5, 2);
        assert!(cross_merge_2d(&seqs, [1, 2, 2, 3]).is_err());
    }

    #[test]
    fn channel_scan_is_a_transpose() {
        // 2 channels over a 1x2 map: [[p, q], [r, s]] by channel.
        let map = Tensor::new(&[1, 2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let seq = channel_scan(&map).unwrap();
        assert_eq!((seq.length, seq.channels), (2, 2));
        // step = channel index, feature = pixel
        assert_eq!(seq.at(0, 0, 0), 1.0);
        assert_eq!(seq.at(0, 0, 1), 2.0);
        assert_eq!(seq.at(0, 1, 0), 3.0);
        assert_eq!(seq.at(0, 1, 1), 4.0);
        assert_eq!(channel_unscan(&seq, [1, 2, 1, 2]).unwrap(), map);

        let single = Tensor::zeros(&[1, 1, 3, 3]);
        assert_eq!(channel_scan(&single).unwrap().length, 1);
        assert!(channel_unscan(&seq, [1, 4, 1, 1]).is_err());
    }
}
