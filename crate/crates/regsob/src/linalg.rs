//! Dense symmetric positive definite solves.

use crate::{Error, Result};

/// Rows factored together; each earlier row is streamed once per block.
const BLOCK: usize = 64;

/// Lower Cholesky factor `A = L Lᵀ`, row-major, upper triangle unused.
#[derive(Clone, Debug)]
pub struct Cholesky {
    dim: usize,
    l: Vec<f64>,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators so the loop vectorizes
    let mut s = [0.0; 4];
    let (ca, ra) = a.split_at(a.len() / 4 * 4);
    let (cb, rb) = b.split_at(ca.len());
    for (x, y) in ca.chunks_exact(4).zip(cb.chunks_exact(4)) {
        for k in 0..4 {
            s[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (s[0] + s[1]) + (s[2] + s[3]) + tail
}

impl Cholesky {
    /// Factors the `dim × dim` row-major matrix `a`; only its lower triangle is read.
    pub fn new(mut a: Vec<f64>, dim: usize) -> Result<Self> {
        if a.len() != dim * dim {
            return Err(Error::InvalidParams(format!("{} entries for a {dim}x{dim} matrix", a.len())));
        }
        let n = dim;
        for start in (0..n).step_by(BLOCK) {
            let end = (start + BLOCK).min(n);
            let (done, rest) = a.split_at_mut(start * n);
            // rows of earlier blocks
            for j in 0..start {
                let lj = &done[j * n..j * n + j];
                let djj = done[j * n + j];
                for i in start..end {
                    let row = &mut rest[(i - start) * n..(i - start) * n + j + 1];
                    row[j] = (row[j] - dot(&row[..j], lj)) / djj;
                }
            }
            // the diagonal block
            for j in start..end {
                let below = &mut rest[(j - start) * n..];
                let d = below[j] - dot(&below[..j], &below[..j]);
                if !(d > 0.0) {
                    return Err(Error::InvalidParams(format!("matrix is not positive definite (pivot {j}: {d:e})")));
                }
                below[j] = d.sqrt();
                let (lj, lower) = below.split_at_mut(n);
                let lj = &lj[..=j];
                for i in j + 1..end {
                    let row = &mut lower[(i - j - 1) * n..(i - j - 1) * n + j + 1];
                    row[j] = (row[j] - dot(&row[..j], &lj[..j])) / lj[j];
                }
            }
        }
        Ok(Self { dim, l: a })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim;
        assert_eq!(b.len(), n, "right-hand side length");
        let l = &self.l;
        let mut y = b.to_vec();
        for i in 0..n {
            y[i] = (y[i] - dot(&l[i * n..i * n + i], &y[..i])) / l[i * n + i];
        }
        for i in (0..n).rev() {
            y[i] /= l[i * n + i];
            let xi = y[i];
            for (yk, lik) in y[..i].iter_mut().zip(&l[i * n..i * n + i]) {
                *yk -= lik * xi;
            }
        }
        y
    }

    /// `log det A`.
    pub fn log_det(&self) -> f64 {
        (0..self.dim).map(|i| 2.0 * self.l[i * self.dim + i].ln()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spd(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] = (0..n).map(|k| b[i * n + k] * b[j * n + k]).sum::<f64>() + if i == j { 0.5 } else { 0.0 };
            }
        }
        a
    }

    #[test]
    fn solves_across_block_boundaries() {
        for n in [1, 5, 64, 65, 150] {
            let a = spd(n, n as u64);
            let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
            let b: Vec<f64> = (0..n).map(|i| (0..n).map(|k| a[i * n + k] * x[k]).sum()).collect();
            let c = Cholesky::new(a, n).unwrap();
            let y = c.solve(&b);
            let err = x.iter().zip(&y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            assert!(err < 1e-8, "n={n}: {err:e}");
        }
    }

    #[test]
    fn log_det_of_diagonal() {
        let c = Cholesky::new(vec![4.0, 0.0, 0.0, 9.0], 2).unwrap();
        assert!((c.log_det() - 36f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn rejects_indefinite() {
        assert!(Cholesky::new(vec![1.0, 2.0, 2.0, 1.0], 2).is_err());
        assert!(Cholesky::new(vec![1.0; 3], 2).is_err());
    }
}
