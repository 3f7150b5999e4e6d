//! Test-only oracles. None of these share code paths with the library.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn centered_cov(x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mx: Vec<f64> = x.column_iter().map(|c| c.sum() / n as f64).collect();
    let my: Vec<f64> = y.column_iter().map(|c| c.sum() / n as f64).collect();
    DMatrix::from_fn(x.ncols(), y.ncols(), |i, j| {
        (0..n).map(|r| (x[(r, i)] - mx[i]) * (y[(r, j)] - my[j])).sum::<f64>() / (n - 1) as f64
    })
}

/// Plain cyclic Jacobi eigendecomposition of a symmetric matrix.
/// Returns (eigenvalues ascending, eigenvectors as columns).
pub fn jacobi_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let mut a = m.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|(i, j)| i != j).map(|(i, j)| a[(i, j)].powi(2)).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    (values, vectors)
}

/// Lower-triangular Cholesky factor, written out longhand.
fn cholesky(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[(i, k)] * l[(j, k)]).sum();
            if i == j {
                l[(i, i)] = (m[(i, i)] - s).sqrt();
            } else {
                l[(i, j)] = (m[(i, j)] - s) / l[(j, j)];
            }
        }
    }
    l
}

fn solve_lower(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for c in 0..b.ncols() {
        for i in 0..n {
            let s: f64 = (0..i).map(|k| l[(i, k)] * x[(k, c)]).sum();
            x[(i, c)] = (b[(i, c)] - s) / l[(i, i)];
        }
    }
    x
}

/// Canonical correlations from the generalized eigenproblem
/// `S_ab S_bb^-1 S_ba u = rho^2 S_aa u`, reduced with Cholesky factors and solved
/// by Jacobi rotations. Descending, `min(p, q)` values.
pub fn cca_oracle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    let saa = centered_cov(a, a);
    let sbb = centered_cov(b, b);
    let sab = centered_cov(a, b);
    let la = cholesky(&saa);
    let lb = cholesky(&sbb);
    // K = La^-1 Sab Lb^-T ; the squared correlations are eigenvalues of K K^T.
    let x = solve_lower(&la, &sab);
    let k = solve_lower(&lb, &x.transpose()).transpose();
    let kkt = &k * k.transpose();
    let (values, _) = jacobi_eigen(&kkt);
    let mut rho: Vec<f64> = values.iter().map(|v| v.max(0.0).sqrt()).collect();
    rho.sort_by(|x, y| y.total_cmp(x));
    rho.truncate(a.ncols().min(b.ncols()));
    rho
}

/// Random invertible matrix: Gaussian plus a diagonal shift.
pub fn invertible(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    gaussian(rng, d, d) + DMatrix::<f64>::identity(d, d) * (d as f64).sqrt()
}
