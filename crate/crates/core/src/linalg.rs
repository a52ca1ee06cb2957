//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::DMatrix;
use std::f64::consts::PI;

use crate::{CMatrix, CVector, Error, Result, C64};

/// Unitary IDFT matrix with entries `exp(j 2 pi m k / n) / sqrt(n)`.
pub fn unitary_idft(n: usize) -> CMatrix {
    let scale = 1.0 / (n as f64).sqrt();
    CMatrix::from_fn(n, n, |m, k| {
        let e = ((m * k) % n) as f64;
        C64::from_polar(scale, 2.0 * PI * e / n as f64)
    })
}

pub fn real_to_complex(a: &DMatrix<f64>) -> CMatrix {
    a.map(|x| C64::new(x, 0.0))
}

/// Squared Frobenius norm.
pub fn frob2(a: &CMatrix) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

/// `||a - b||_F / ||b||_F` (absolute when `b` is zero).
pub fn rel_frob_err(a: &CMatrix, b: &CMatrix) -> f64 {
    let num = frob2(&(a - b)).sqrt();
    let den = frob2(b).sqrt();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

/// `<a, b> = tr(a b^H) = sum a_ij conj(b_ij)`.
pub fn inner(a: &CMatrix, b: &CMatrix) -> C64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y.conj()).sum()
}

/// Upper-triangular factor of the economy QR of `g`.
pub fn qr_r(g: CMatrix) -> CMatrix {
    let n = g.ncols();
    let r = g.qr().r();
    debug_assert_eq!(r.nrows(), n);
    r
}

/// Inverse of an upper-triangular matrix by back substitution.
pub fn upper_tri_inverse(r: &CMatrix) -> Result<CMatrix> {
    let n = r.nrows();
    let mut inv = CMatrix::zeros(n, n);
    for j in 0..n {
        if r[(j, j)].norm() == 0.0 {
            return Err(Error::NumericalRank(format!("zero diagonal entry at {j}")));
        }
    }
    for j in 0..n {
        inv[(j, j)] = r[(j, j)].inv();
        for i in (0..j).rev() {
            let mut acc = C64::new(0.0, 0.0);
            for k in i + 1..=j {
                acc += r[(i, k)] * inv[(k, j)];
            }
            inv[(i, j)] = -acc / r[(i, i)];
        }
    }
    Ok(inv)
}

/// Solve `R^H x = b` (forward substitution).
pub fn solve_upper_adjoint(r: &CMatrix, b: &CVector) -> Result<CVector> {
    let n = r.nrows();
    let mut x = b.clone();
    for i in 0..n {
        let mut acc = x[i];
        for k in 0..i {
            acc -= r[(k, i)].conj() * x[k];
        }
        let d = r[(i, i)].conj();
        if d.norm() == 0.0 {
            return Err(Error::NumericalRank(format!("zero diagonal entry at {i}")));
        }
        x[i] = acc / d;
    }
    Ok(x)
}

/// Solve `R x = b` (back substitution).
pub fn solve_upper(r: &CMatrix, b: &CVector) -> Result<CVector> {
    let n = r.nrows();
    let mut x = b.clone();
    for i in (0..n).rev() {
        let mut acc = x[i];
        for k in i + 1..n {
            acc -= r[(i, k)] * x[k];
        }
        let d = r[(i, i)];
        if d.norm() == 0.0 {
            return Err(Error::NumericalRank(format!("zero diagonal entry at {i}")));
        }
        x[i] = acc / d;
    }
    Ok(x)
}

/// Remove column `col` from upper-triangular `r` and restore triangular
/// form with Givens rotations. The result is `(n-1) x (n-1)`.
pub fn downdate_column(r: &CMatrix, col: usize) -> CMatrix {
    let n = r.nrows();
    let mut h = r.clone().remove_column(col);
    for j in col..n - 1 {
        let a = h[(j, j)];
        let b = h[(j + 1, j)];
        let rr = (a.norm_sqr() + b.norm_sqr()).sqrt();
        if rr == 0.0 || b.norm() == 0.0 {
            continue;
        }
        let phase = if a.norm() == 0.0 { C64::new(1.0, 0.0) } else { a / a.norm() };
        let c = a.norm() / rr;
        let s = phase * b.conj() / rr;
        for k in j..n - 1 {
            let x = h[(j, k)];
            let y = h[(j + 1, k)];
            h[(j, k)] = x * c + s * y;
            h[(j + 1, k)] = -s.conj() * x + y * c;
        }
        h[(j + 1, j)] = C64::new(0.0, 0.0);
    }
    h.remove_row(n - 1)
}

/// Golden-section search for a maximum of `f` on `[a, b]`.
pub fn golden_max<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Kahan-compensated accumulator.
#[derive(Clone, Copy, Debug, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let y = x - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// Median of a slice (NaNs sorted last); `NaN` for an empty slice.
pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}
