#![allow(dead_code)]
//! Independent reference implementations shared by the integration tests.

use floquet_dtc::dynamics::C64;
use floquet_dtc::model::{envelope, ProtocolParams};
use nalgebra::DMatrix;

pub fn sigma_x() -> DMatrix<C64> {
    DMatrix::from_row_slice(2, 2, &[C64::new(0.0, 0.0), C64::new(1.0, 0.0), C64::new(1.0, 0.0), C64::new(0.0, 0.0)])
}

// Single-qubit operator on `qubit` of an n-qubit register (bit i = qubit i).
pub fn embed(op: &DMatrix<C64>, qubit: usize, n: usize) -> DMatrix<C64> {
    let dim = 1 << n;
    DMatrix::from_fn(dim, dim, |r, c| {
        let rest = !(1usize << qubit);
        if r & rest != c & rest {
            return C64::new(0.0, 0.0);
        }
        op[((r >> qubit) & 1, (c >> qubit) & 1)]
    })
}

pub fn zz_diagonal(j: &[f64], n: usize) -> DMatrix<C64> {
    let dim = 1 << n;
    DMatrix::from_fn(dim, dim, |r, c| {
        if r != c {
            return C64::new(0.0, 0.0);
        }
        let e: f64 = j
            .iter()
            .enumerate()
            .map(|(i, ji)| if (r >> i & 1) == (r >> (i + 1) & 1) { *ji } else { -*ji })
            .sum();
        C64::new(e, 0.0)
    })
}

pub fn expm_i(h: &DMatrix<C64>, t: f64) -> DMatrix<C64> {
    (h * C64::new(0.0, -t)).exp()
}

/// Dense reference: fine midpoint steps of `exp(-i H(t) h)` over the drive
/// interval, exact exponentials for the rest.
pub fn dense_period(
    j: &[f64],
    params: &ProtocolParams,
    phases: &[f64],
    n: usize,
    fine: f64,
) -> DMatrix<C64> {
    let dim = 1 << n;
    let hzz = zz_diagonal(j, n);
    let sx: DMatrix<C64> = (0..n).map(|q| embed(&sigma_x(), q, n)).fold(DMatrix::zeros(dim, dim), |a, b| a + b);
    let steps = (params.t1() / fine).round() as usize;
    let h = params.t1() / steps as f64;
    let amp = params.g() * (1.0 - params.epsilon());
    let mut u = DMatrix::<C64>::identity(dim, dim);
    for k in 0..steps {
        let t = (k as f64 + 0.5) * h;
        let f = envelope(t, params).unwrap();
        let ht = &hzz + &sx * C64::new(amp * f, 0.0);
        u = expm_i(&ht, h) * u;
    }
    u = expm_i(&hzz, params.t2()) * u;
    let vz = DMatrix::from_fn(dim, dim, |r, c| {
        if r != c {
            return C64::new(0.0, 0.0);
        }
        let a: f64 = phases.iter().enumerate().map(|(i, p)| if r >> i & 1 == 0 { *p } else { -*p }).sum();
        C64::from_polar(1.0, -a)
    });
    vz * u
}

/// Adaptive Simpson quadrature.
pub fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let whole = (b - a) / 6.0 * (f(a) + 4.0 * f(m) + f(b));
    let left = (m - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + m)) + f(m));
    let right = (b - m) / 6.0 * (f(m) + 4.0 * f(0.5 * (m + b)) + f(b));
    if depth == 0 || (left + right - whole).abs() < 15.0 * tol {
        return left + right + (left + right - whole) / 15.0;
    }
    simpson(f, a, m, 0.5 * tol, depth - 1) + simpson(f, m, b, 0.5 * tol, depth - 1)
}

