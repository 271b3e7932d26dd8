//! Multi-dimensional FFT plumbing shared by fields, grids and operators.
//!
//! Arrays are row-major with the last axis fastest.  Forward transforms are
//! normalized so that coefficients are `(1/M) sum_m u(x_m) e^{-ikx_m}`.

use crate::linalg::C64;
use rustfft::FftPlanner;

/// In-place transform along every axis.  `inverse` gives the unnormalized
/// synthesis sum.
pub fn fft_nd(data: &mut [C64], shape: &[usize], inverse: bool) {
    let total: usize = shape.iter().product();
    assert_eq!(data.len(), total);
    let mut planner = FftPlanner::<f64>::new();
    let mut stride = 1usize;
    for ax in (0..shape.len()).rev() {
        let n = shape[ax];
        if n > 1 {
            let fft = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
            let outer = total / (n * stride);
            let mut buf = vec![C64::new(0.0, 0.0); n];
            for o in 0..outer {
                for s in 0..stride {
                    let base = o * n * stride + s;
                    for k in 0..n {
                        buf[k] = data[base + k * stride];
                    }
                    fft.process(&mut buf);
                    for k in 0..n {
                        data[base + k * stride] = buf[k];
                    }
                }
            }
        }
        stride *= n;
    }
}

/// Multi-index iterator over a box `[-cut_d, cut_d]` in lexicographic order.
pub fn box_modes(cut: &[usize]) -> Vec<Vec<i64>> {
    let mut out = vec![vec![]];
    for &c in cut {
        let mut next = Vec::with_capacity(out.len() * (2 * c + 1));
        for m in &out {
            for k in -(c as i64)..=(c as i64) {
                let mut v = m.clone();
                v.push(k);
                next.push(v);
            }
        }
        out = next;
    }
    out
}

#[inline]
fn wrap(k: i64, n: usize) -> usize {
    k.rem_euclid(n as i64) as usize
}

fn grid_offset(mode: &[i64], shape: &[usize]) -> usize {
    let mut off = 0usize;
    for (d, &k) in mode.iter().enumerate() {
        off = off * shape[d] + wrap(k, shape[d]);
    }
    off
}

/// Normalized Fourier coefficients on the box `|k_d| <= cut_d` from samples on
/// a uniform grid of the given shape.
pub fn samples_to_modes(samples: &[C64], shape: &[usize], cut: &[usize]) -> Vec<C64> {
    for (s, c) in shape.iter().zip(cut) {
        assert!(*s > 2 * c, "grid too coarse for requested modes");
    }
    let mut buf = samples.to_vec();
    fft_nd(&mut buf, shape, false);
    let norm = 1.0 / samples.len() as f64;
    box_modes(cut).iter().map(|m| buf[grid_offset(m, shape)] * norm).collect()
}

/// Synthesis of box coefficients onto a uniform grid.
pub fn modes_to_samples(coeffs: &[C64], cut: &[usize], shape: &[usize]) -> Vec<C64> {
    for (s, c) in shape.iter().zip(cut) {
        assert!(*s > 2 * c, "grid too coarse for requested modes");
    }
    let total: usize = shape.iter().product();
    let mut buf = vec![C64::new(0.0, 0.0); total];
    for (m, v) in box_modes(cut).iter().zip(coeffs) {
        buf[grid_offset(m, shape)] += *v;
    }
    fft_nd(&mut buf, shape, true);
    buf
}

/// Coefficients for modes `|k| <= cut` of a single periodic sample vector.
pub fn coeffs_1d(samples: &[C64], cut: usize) -> Vec<C64> {
    samples_to_modes(samples, &[samples.len()], &[cut])
}

/// Evaluate `sum_k c_k e^{ikx}` with `k` in `[-cut, cut]`.
pub fn eval_1d(coeffs: &[C64], x: f64) -> C64 {
    let cut = (coeffs.len() / 2) as i64;
    let e1 = C64::new(x.cos(), x.sin());
    let mut p = C64::new((-(cut as f64) * x).cos(), (-(cut as f64) * x).sin());
    let mut s = C64::new(0.0, 0.0);
    for c in coeffs {
        s += c * p;
        p *= e1;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_2d() {
        let cut = [2usize, 3];
        let shape = [7usize, 9];
        let n = 5 * 7;
        let coeffs: Vec<C64> = (0..n).map(|i| C64::new(i as f64 * 0.3 - 1.0, (i * i) as f64 * 0.01)).collect();
        let s = modes_to_samples(&coeffs, &cut, &shape);
        let back = samples_to_modes(&s, &shape, &cut);
        for (a, b) in coeffs.iter().zip(&back) {
            assert!((a - b).norm() < 1e-13);
        }
    }

    #[test]
    fn single_exponential() {
        let m = 8;
        let s: Vec<C64> = (0..m)
            .map(|i| {
                let x = 2.0 * std::f64::consts::PI * i as f64 / m as f64;
                C64::new((2.0 * x).cos(), (2.0 * x).sin())
            })
            .collect();
        let c = coeffs_1d(&s, 3);
        assert!((c[5] - C64::new(1.0, 0.0)).norm() < 1e-14);
        assert!((eval_1d(&c, 0.3) - C64::new(0.6f64.cos(), 0.6f64.sin())).norm() < 1e-14);
    }
}
