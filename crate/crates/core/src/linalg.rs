//! Small dense linear algebra on square matrices.

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Threshold below which `|R_ii|` counts as rank deficient.
pub const RANK_TOL: f64 = 1e-12;

fn square(a: &Tensor, op: &'static str) -> Result<usize> {
    match a.shape() {
        &[n, m] if n == m && n > 0 => Ok(n),
        s => Err(shape_err(op, s, &[s.first().copied().unwrap_or(0); 2])),
    }
}

/// Householder QR of a square matrix, `A = Q·R`, normalized so that `R`
/// has a non-negative diagonal.
pub fn householder_qr(a: &Tensor) -> Result<(Tensor, Tensor)> {
    let n = square(a, "householder_qr")?;
    let mut r = a.data().to_vec();
    // Q accumulated as Qᵀ = H_{n-1}···H_1 applied to I.
    let mut qt = Tensor::eye(n).into_data();
    let mut v = vec![0.0; n];
    for k in 0..n.saturating_sub(1) {
        let norm = (k..n).map(|i| r[i * n + k] * r[i * n + k]).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let x0 = r[k * n + k];
        let alpha = if x0 >= 0.0 { -norm } else { norm };
        v[..k].iter_mut().for_each(|x| *x = 0.0);
        for i in k..n {
            v[i] = r[i * n + k];
        }
        v[k] -= alpha;
        let vnorm2: f64 = v[k..].iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for m in [&mut r, &mut qt] {
            for j in 0..n {
                let dot: f64 = (k..n).map(|i| v[i] * m[i * n + j]).sum();
                let f = 2.0 * dot / vnorm2;
                for i in k..n {
                    m[i * n + j] -= f * v[i];
                }
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            r[i * n + j] = 0.0;
        }
    }
    // Flip signs so that diag(R) ≥ 0: Q ← Q·D, R ← D·R.
    for i in 0..n {
        if r[i * n + i] < 0.0 {
            for j in 0..n {
                r[i * n + j] = -r[i * n + j];
                qt[i * n + j] = -qt[i * n + j];
            }
        }
    }
    for i in 0..n {
        let d = r[i * n + i];
        if d.abs() < RANK_TOL || !d.is_finite() {
            return Err(Error::RankDeficient { index: i, value: d });
        }
    }
    Ok((Tensor::from_vec([n, n], qt).transpose(), Tensor::from_vec([n, n], r)))
}

/// Adjoint of `A ↦ Q` for `A = QR` with `R` upper triangular and invertible:
/// `Ā = (Q̄ + Q·copyltu(M))·R⁻ᵀ` with `M = −Q̄ᵀQ`, where `copyltu` mirrors the
/// lower triangle onto the upper one.
pub fn qr_q_adjoint(q: &Tensor, r: &Tensor, q_bar: &Tensor) -> Tensor {
    let n = q.shape()[0];
    let m = q_bar.transpose().matmul(q).expect("square").map(|x| -x);
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            c[i * n + j] = if i >= j { m.at(i, j) } else { m.at(j, i) };
        }
    }
    let qc = q.matmul(&Tensor::from_vec([n, n], c)).expect("square");
    let b: Vec<f64> = q_bar.data().iter().zip(qc.data()).map(|(x, y)| x + y).collect();
    // X·Rᵀ = B  ⇔  R·Xᵀ = Bᵀ, solved column by column of Bᵀ (rows of B).
    let mut x = vec![0.0; n * n];
    for row in 0..n {
        let rhs = &b[row * n..(row + 1) * n];
        for i in (0..n).rev() {
            let mut s = rhs[i];
            for j in i + 1..n {
                s -= r.at(i, j) * x[row * n + j];
            }
            x[row * n + i] = s / r.at(i, i);
        }
    }
    Tensor::from_vec([n, n], x)
}

/// Largest singular value of `a` by power iteration on `aᵀa`.
pub fn spectral_norm(a: &Tensor, iters: usize) -> Result<f64> {
    let n = square(a, "spectral_norm")?;
    let ata = a.transpose().matmul(a)?;
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * i as f64).collect();
    let mut lambda = 0.0;
    for _ in 0..iters {
        let w: Vec<f64> = (0..n).map(|i| (0..n).map(|j| ata.at(i, j) * v[j]).sum()).collect();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(0.0);
        }
        lambda = norm / v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v = w.iter().map(|x| x / norm).collect();
    }
    Ok(lambda.sqrt())
}

/// `max |QᵀQ − I|`.
pub fn orthogonality_defect(q: &Tensor) -> f64 {
    let n = q.shape()[0];
    let qtq = q.transpose().matmul(q).expect("square");
    qtq.max_abs_diff(&Tensor::eye(n))
}
