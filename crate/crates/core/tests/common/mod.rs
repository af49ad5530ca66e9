//! Shared dense oracles for integration tests.

use ndarray::{Array1, Array2};
use ndarray_linalg::Inverse;
use num_complex::Complex64 as C64;

/// Dense matrix exponential by Pade-13 approximation with scaling and
/// squaring (Higham 2005). Exact to machine precision for the sizes used
/// in these tests.
pub fn expm(a: &Array2<C64>) -> Array2<C64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let norm = (0..n)
        .map(|j| a.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max);
    let theta13 = 5.371_920_351_148_152;
    let s = if norm > theta13 {
        (norm / theta13).log2().ceil() as i32
    } else {
        0
    };
    let a = a.mapv(|z| z / 2f64.powi(s));
    let b: [f64; 14] = [
        64_764_752_532_480_000.0,
        32_382_376_266_240_000.0,
        7_771_770_303_897_600.0,
        1_187_353_796_428_800.0,
        129_060_195_264_000.0,
        10_559_470_521_600.0,
        670_442_572_800.0,
        33_522_128_640.0,
        1_323_241_920.0,
        40_840_800.0,
        960_960.0,
        16_380.0,
        182.0,
        1.0,
    ];
    let eye = Array2::<C64>::eye(n);
    let a2 = a.dot(&a);
    let a4 = a2.dot(&a2);
    let a6 = a2.dot(&a4);
    let u_hi = a6.mapv(|z| z * b[13]) + &a4.mapv(|z| z * b[11]) + &a2.mapv(|z| z * b[9]);
    let u_lo = a6.mapv(|z| z * b[7])
        + &a4.mapv(|z| z * b[5])
        + &a2.mapv(|z| z * b[3])
        + &eye.mapv(|z| z * b[1]);
    let u = a.dot(&(a6.dot(&u_hi) + &u_lo));
    let v_hi = a6.mapv(|z| z * b[12]) + &a4.mapv(|z| z * b[10]) + &a2.mapv(|z| z * b[8]);
    let v = a6.dot(&v_hi)
        + &a6.mapv(|z| z * b[6])
        + &a4.mapv(|z| z * b[4])
        + &a2.mapv(|z| z * b[2])
        + &eye.mapv(|z| z * b[0]);
    let num = &v + &u;
    let den = &v - &u;
    let mut e = den.inv().expect("Pade denominator is invertible").dot(&num);
    for _ in 0..s {
        e = e.dot(&e);
    }
    e
}

/// Row-major vectorization matching the superoperator convention.
pub fn vec_row_major(m: &Array2<C64>) -> Array1<C64> {
    Array1::from_iter(m.iter().copied())
}

/// Inverse of [`vec_row_major`].
pub fn unvec_row_major(v: &Array1<C64>, dim: usize) -> Array2<C64> {
    Array2::from_shape_vec((dim, dim), v.to_vec()).expect("length is dim^2")
}

/// Largest entrywise modulus of the difference.
pub fn max_abs_diff(a: &Array2<C64>, b: &Array2<C64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}
