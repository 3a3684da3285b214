use super::{Matrix, Vector};
use crate::error::{check_dim, Error, Result};

/// Pivots at or below this fraction of the largest diagonal entry are treated
/// as a failed Cholesky factorization.
pub const SPD_PIVOT_TOLERANCE: f64 = 1e-12;

pub fn matvec(a: &Matrix, v: &Vector) -> Result<Vector> {
    check_dim("matvec", a.cols(), v.len())?;
    Ok((0..a.rows())
        .map(|i| a.row(i).iter().zip(v.iter()).map(|(x, y)| x * y).sum())
        .collect::<Vec<f64>>()
        .into())
}

/// `aᵀ v` without materializing the transpose.
pub fn transpose_matvec(a: &Matrix, v: &Vector) -> Result<Vector> {
    check_dim("transpose_matvec", a.rows(), v.len())?;
    let mut out = vec![0.0; a.cols()];
    for (i, &vi) in v.iter().enumerate() {
        for (o, &x) in out.iter_mut().zip(a.row(i)) {
            *o += x * vi;
        }
    }
    Ok(out.into())
}

/// `aᵀ a`. Only the upper triangle is accumulated; the lower one is mirrored so
/// the result is exactly symmetric.
pub fn gram(a: &Matrix) -> Matrix {
    let p = a.cols();
    let mut g = Matrix::zeros(p, p);
    for r in 0..a.rows() {
        let row = a.row(r);
        for i in 0..p {
            for j in i..p {
                let v = g.get(i, j) + row[i] * row[j];
                g.set(i, j, v);
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            let v = g.get(j, i);
            g.set(i, j, v);
        }
    }
    g
}

/// Solves `a x = rhs` for symmetric positive definite `a` by Cholesky
/// factorization `a = L Lᵀ` followed by forward and back substitution.
pub fn solve_spd(a: &Matrix, rhs: &Vector) -> Result<Vector> {
    let n = a.rows();
    check_dim("solve_spd (square)", n, a.cols())?;
    check_dim("solve_spd", n, rhs.len())?;

    let scale = (0..n).map(|i| a.get(i, i).abs()).fold(0.0, f64::max);
    let tol = SPD_PIVOT_TOLERANCE * scale.max(f64::MIN_POSITIVE);

    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut pivot = a.get(j, j);
        for k in 0..j {
            pivot -= l.get(j, k) * l.get(j, k);
        }
        if !(pivot > tol) {
            return Err(Error::Singular { row: j, pivot });
        }
        let d = pivot.sqrt();
        l.set(j, j, d);
        for i in j + 1..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / d);
        }
    }

    // L z = rhs
    let mut z = vec![0.0; n];
    for i in 0..n {
        let s = (0..i).fold(rhs[i], |s, k| s - l.get(i, k) * z[k]);
        z[i] = s / l.get(i, i);
    }
    // Lᵀ x = z
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s = (i + 1..n).fold(z[i], |s, k| s - l.get(k, i) * x[k]);
        x[i] = s / l.get(i, i);
    }
    Ok(x.into())
}
