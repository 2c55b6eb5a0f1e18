//! Small dense factorizations: one-sided Jacobi SVD and cyclic Jacobi
//! eigendecomposition of symmetric matrices.

use super::kernels::dot;
use super::{NumericsError, Tensor};

/// Maximum number of full sweeps before giving up.
pub const MAX_SWEEPS: usize = 100;
/// Relative off-diagonal tolerance for convergence.
pub const JACOBI_TOL: f64 = 1e-12;
/// Largest `min(rows, cols)` accepted by [`svd`].
pub const MAX_SVD_DIM: usize = 512;

/// Thin SVD `m = u · diag(s) · vᵀ` with `s` non-negative and descending.
#[derive(Debug, Clone)]
pub struct Svd {
    /// `[rows, k]` with `k = min(rows, cols)`.
    pub u: Tensor,
    pub s: Vec<f64>,
    /// `[cols, k]`.
    pub v: Tensor,
}

impl Svd {
    pub fn reconstruct(&self) -> Tensor {
        let (r, k) = (self.u.shape()[0], self.s.len());
        let c = self.v.shape()[0];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += self.u.at(i, p) * self.s[p] * self.v.at(j, p);
                }
                out[i * c + j] = acc;
            }
        }
        Tensor::new(vec![r, c], out).expect("consistent shape")
    }
}

pub fn svd(m: &Tensor) -> Result<Svd, NumericsError> {
    let (r, c) = m.dims2()?;
    if r.min(c) > MAX_SVD_DIM {
        return Err(NumericsError::InvalidArgument(format!(
            "svd of {}x{} exceeds the {} limit",
            r, c, MAX_SVD_DIM
        )));
    }
    if !m.all_finite() {
        return Err(NumericsError::NonFinite { op: "svd" });
    }
    if r >= c {
        let (u, s, v) = one_sided_jacobi(m.data(), r, c)?;
        Ok(Svd { u, s, v })
    } else {
        let t = m.transpose()?;
        let (u, s, v) = one_sided_jacobi(t.data(), c, r)?;
        Ok(Svd { u: v, s, v: u })
    }
}

/// Orthogonalizes the columns of a tall `rows × cols` matrix by plane
/// rotations, accumulating the rotations into `v`.
fn one_sided_jacobi(data: &[f64], rows: usize, cols: usize) -> Result<(Tensor, Vec<f64>, Tensor), NumericsError> {
    let mut a: Vec<Vec<f64>> = (0..cols).map(|j| (0..rows).map(|i| data[i * cols + j]).collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..cols)
        .map(|j| {
            let mut e = vec![0.0; cols];
            e[j] = 1.0;
            e
        })
        .collect();

    let mut converged = cols < 2;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha = dot(&a[p], &a[p]);
                let beta = dot(&a[q], &a[q]);
                let gamma = dot(&a[p], &a[q]);
                if gamma == 0.0 || gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                rotate_pair(&mut a, p, q, cs, sn);
                rotate_pair(&mut v, p, q, cs, sn);
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(NumericsError::NoConvergence {
            what: "svd",
            sweeps: MAX_SWEEPS,
        });
    }

    let mut order: Vec<(f64, usize)> = a.iter().enumerate().map(|(j, col)| (dot(col, col).sqrt(), j)).collect();
    order.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));

    let mut u = vec![0.0; rows * cols];
    let mut vt = vec![0.0; cols * cols];
    let mut s = Vec::with_capacity(cols);
    for (k, &(sigma, j)) in order.iter().enumerate() {
        s.push(sigma);
        if sigma > 0.0 {
            for i in 0..rows {
                u[i * cols + k] = a[j][i] / sigma;
            }
        }
        for i in 0..cols {
            vt[i * cols + k] = v[j][i];
        }
    }
    Ok((Tensor::new(vec![rows, cols], u)?, s, Tensor::new(vec![cols, cols], vt)?))
}

fn rotate_pair(cols: &mut [Vec<f64>], p: usize, q: usize, cs: f64, sn: f64) {
    let (left, right) = cols.split_at_mut(q);
    let (cp, cq) = (&mut left[p], &mut right[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = cs * xp - sn * xq;
        *y = sn * xp + cs * xq;
    }
}

/// Eigendecomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEigen {
    /// Descending.
    pub values: Vec<f64>,
    /// Eigenvectors as columns, `[n, n]`.
    pub vectors: Tensor,
}

pub fn sym_eigen(m: &Tensor) -> Result<SymEigen, NumericsError> {
    let (n, c) = m.dims2()?;
    if n != c {
        return Err(NumericsError::ShapeMismatch {
            op: "sym_eigen",
            detail: format!("non-square {:?}", m.shape()),
        });
    }
    if !m.all_finite() {
        return Err(NumericsError::NonFinite { op: "sym_eigen" });
    }
    let mut a = m.data().to_vec();
    for i in 0..n {
        for j in i + 1..n {
            let avg = 0.5 * (a[i * n + j] + a[j * n + i]);
            a[i * n + j] = avg;
            a[j * n + i] = avg;
        }
    }
    let mut v = Tensor::eye(n).into_data();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= JACOBI_TOL * scale {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = t * cs;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = cs * akp - sn * akq;
                    a[k * n + q] = sn * akp + cs * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = cs * apk - sn * aqk;
                    a[q * n + k] = sn * apk + cs * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = cs * vkp - sn * vkq;
                    v[k * n + q] = sn * vkp + cs * vkq;
                }
            }
        }
    }
    if !converged {
        return Err(NumericsError::NoConvergence {
            what: "sym_eigen",
            sweeps: MAX_SWEEPS,
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[y * n + y].total_cmp(&a[x * n + x]).then(x.cmp(&y)));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (k, &j) in order.iter().enumerate() {
        for i in 0..n {
            vectors[i * n + k] = v[i * n + j];
        }
    }
    Ok(SymEigen {
        values,
        vectors: Tensor::new(vec![n, n], vectors)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(r: usize, c: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(vec![r, c], (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn rel_frobenius(a: &Tensor, b: &Tensor) -> f64 {
        let diff: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
        diff.sqrt() / a.frobenius_norm()
    }

    #[test]
    fn identity_and_diagonal() {
        assert_eq!(svd(&Tensor::eye(3)).unwrap().s, vec![1.0, 1.0, 1.0]);
        let d = Tensor::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 3.0, 0.0], vec![0.0, 0.0, 2.0]]);
        assert_eq!(svd(&d).unwrap().s, vec![3.0, 2.0, 1.0]);
    }

    #[test]
    fn reconstructs_tall_and_wide() {
        for (r, c) in [(5, 3), (3, 5), (7, 7), (1, 4)] {
            let m = random(r, c, (r * 10 + c) as u64);
            let f = svd(&m).unwrap();
            assert!(rel_frobenius(&m, &f.reconstruct()) < 1e-8, "{}x{}", r, c);
            assert!(f.s.windows(2).all(|w| w[0] >= w[1]));
            assert!(f.s.iter().all(|s| *s >= 0.0));
        }
    }

    #[test]
    fn rank_deficient_input() {
        let m = Tensor::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]]);
        let f = svd(&m).unwrap();
        assert!(f.s[1] < 1e-12);
        assert!(rel_frobenius(&m, &f.reconstruct()) < 1e-12);
    }

    #[test]
    fn rejects_non_finite() {
        let m = Tensor::from_rows(&[vec![f64::NAN, 1.0]]);
        assert!(matches!(svd(&m), Err(NumericsError::NonFinite { .. })));
    }

    #[test]
    fn symmetric_eigen_matches_definition() {
        let a = random(6, 4, 3);
        let m = a.transpose().unwrap().matmul(&a).unwrap();
        let e = sym_eigen(&m).unwrap();
        let sv = svd(&a).unwrap();
        for (lambda, s) in e.values.iter().zip(&sv.s) {
            assert!((lambda - s * s).abs() < 1e-10);
        }
        // M v = λ v for each column
        let mv = m.matmul(&e.vectors).unwrap();
        for k in 0..4 {
            for i in 0..4 {
                assert!((mv.at(i, k) - e.values[k] * e.vectors.at(i, k)).abs() < 1e-10);
            }
        }
    }
}
