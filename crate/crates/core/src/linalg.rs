//! Dense complex linear algebra helpers on top of nalgebra.
//!
//! Products of moderately large matrices go through `matrixmultiply` (via
//! ndarray), which is several times faster than nalgebra's generic kernel.

use nalgebra::{DMatrix, DVector};
use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ShapeBuilder};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const I: C64 = C64 { re: 0.0, im: 1.0 };

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[inline]
pub fn re(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// Matrix product `a * b`.
pub fn mul(a: &CMat, b: &CMat) -> CMat {
    assert_eq!(a.ncols(), b.nrows(), "inner dimensions differ");
    let (n, k, m) = (a.nrows(), a.ncols(), b.ncols());
    if n * k * m < 32 * 32 * 32 {
        return a * b;
    }
    let av = ArrayView2::from_shape((n, k).f(), a.as_slice()).expect("layout");
    let bv = ArrayView2::from_shape((k, m).f(), b.as_slice()).expect("layout");
    let mut out = Array2::<C64>::zeros((n, m).f());
    general_mat_mul(re(1.0), &av, &bv, re(0.0), &mut out);
    // column-major storage maps straight back into nalgebra
    let data = out.into_raw_vec_and_offset().0;
    CMat::from_vec(n, m, data)
}

/// Product of a chain of matrices, left to right.
pub fn mul3(a: &CMat, b: &CMat, c: &CMat) -> CMat {
    mul(&mul(a, b), c)
}

pub fn inverse(a: &CMat) -> Option<CMat> {
    a.clone().try_inverse()
}

pub fn max_abs(a: &CMat) -> f64 {
    a.iter().fold(0.0, |m, z| m.max(z.norm()))
}

pub fn frob(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn norm1(a: &CMat) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Spectral norm (largest singular value).
pub fn op_norm(a: &CMat) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    if a.nrows().min(a.ncols()) <= 200 {
        let sv = a.clone().singular_values();
        return sv.iter().cloned().fold(0.0, f64::max);
    }
    power_norm(a, 60)
}

/// Spectral norm estimate by power iteration on `a^* a`.
pub fn power_norm(a: &CMat, iters: usize) -> f64 {
    let n = a.ncols();
    let mut v = CVec::from_fn(n, |i, _| re(1.0 + 0.1 * ((i * 7919) % 13) as f64));
    let mut est = 0.0;
    for _ in 0..iters {
        let nv = v.norm();
        if nv == 0.0 {
            return 0.0;
        }
        v /= re(nv);
        let w = a * &v;
        est = w.norm();
        v = a.adjoint() * w;
    }
    est
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

/// Hermitian-part eigenvalues, ascending.
pub fn hermitian_eigenvalues(a: &CMat) -> Vec<f64> {
    let h = (a + a.adjoint()) * re(0.5);
    let mut ev: Vec<f64> = h.symmetric_eigenvalues().iter().cloned().collect();
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
    ev
}

/// Eigenvalues of a general complex matrix (Schur form).
pub fn eigenvalues(a: &CMat) -> Vec<C64> {
    let schur = a.clone().schur();
    let t = schur.unpack().1;
    (0..t.nrows()).map(|i| t[(i, i)]).collect()
}

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// Matrix exponential by scaling and squaring with a degree-13 Pade
/// approximant.
pub fn expm(a: &CMat) -> CMat {
    let n = a.nrows();
    let nrm = norm1(a);
    if nrm == 0.0 {
        return identity(n);
    }
    const THETA13: f64 = 5.371920351148152;
    let s = if nrm > THETA13 { (nrm / THETA13).log2().ceil() as i32 } else { 0 };
    let a = a * re(0.5f64.powi(s));
    let id = identity(n);
    let a2 = mul(&a, &a);
    let a4 = mul(&a2, &a2);
    let a6 = mul(&a4, &a2);
    let b = &PADE13;
    let u_in = &a6 * re(b[13]) + &a4 * re(b[11]) + &a2 * re(b[9]);
    let u = mul(&a6, &u_in) + &a6 * re(b[7]) + &a4 * re(b[5]) + &a2 * re(b[3]) + &id * re(b[1]);
    let u = mul(&a, &u);
    let v_in = &a6 * re(b[12]) + &a4 * re(b[10]) + &a2 * re(b[8]);
    let v = mul(&a6, &v_in) + &a6 * re(b[6]) + &a4 * re(b[4]) + &a2 * re(b[2]) + &id * re(b[0]);
    let num = &v + &u;
    let den = &v - &u;
    let mut r = den.lu().solve(&num).expect("Pade denominator singular");
    for _ in 0..s {
        r = mul(&r, &r);
    }
    r
}

/// Classical RK4 integration of `u' = a u` over `[0, t]` with `steps` steps,
/// applied to the identity.
pub fn rk4_propagator(a: &CMat, t: f64, steps: usize) -> CMat {
    let n = a.nrows();
    let h = re(t / steps as f64);
    let mut y = identity(n);
    for _ in 0..steps {
        let k1 = mul(a, &y);
        let y2 = &y + &k1 * (h * 0.5);
        let k2 = mul(a, &y2);
        let y3 = &y + &k2 * (h * 0.5);
        let k3 = mul(a, &y3);
        let y4 = &y + &k3 * h;
        let k4 = mul(a, &y4);
        y += (k1 + (k2 + k3) * re(2.0) + k4) * (h / 6.0);
    }
    y
}

/// Inverse of `I + x` by Neumann series; fails when `||x|| >= 1/2`.
pub fn neumann_inverse(x: &CMat, tol: f64) -> Result<CMat, f64> {
    let nx = op_norm(x);
    if nx >= 0.5 {
        return Err(nx);
    }
    let n = x.nrows();
    let mut sum = identity(n);
    let mut term = identity(n);
    let mut k = 0;
    loop {
        term = -mul(&term, x);
        sum += &term;
        k += 1;
        if max_abs(&term) < tol || k > 200 {
            break;
        }
    }
    Ok(sum)
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    linear_fit(&pts).0
}

/// Ordinary least squares `y = slope x + intercept`.
pub fn linear_fit(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return (f64::NAN, f64::NAN);
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_mul_matches_nalgebra() {
        let a = CMat::from_fn(40, 37, |i, j| c((i as f64).sin() + j as f64, (i * j) as f64 * 0.01));
        let b = CMat::from_fn(37, 45, |i, j| c((j as f64).cos(), i as f64 * 0.1));
        let d = mul(&a, &b) - &a * &b;
        assert!(max_abs(&d) < 1e-10);
    }

    #[test]
    fn expm_of_diagonal() {
        let a = CMat::from_diagonal(&CVec::from_vec(vec![c(0.0, 3.0), c(-1.0, 0.5), c(10.0, 0.0)]));
        let e = expm(&a);
        for i in 0..3 {
            let want = a[(i, i)].exp();
            assert!((e[(i, i)] - want).norm() / want.norm() < 1e-13);
        }
    }

    #[test]
    fn expm_agrees_with_rk4() {
        let a = CMat::from_fn(12, 12, |i, j| c(0.0, 1.0 / (1.0 + (i as f64 - j as f64).abs())));
        let e = expm(&a);
        let r = rk4_propagator(&a, 1.0, 400);
        assert!(max_abs(&(e - r)) < 1e-9);
    }
}
