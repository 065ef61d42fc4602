//! Separable discrete Fourier sums between integer-indexed lattices.
//!
//! Both the forward visibility sum and the image reconstruction reduce to
//! `out[q] = sum_p in[p] * exp(sign * j 2 pi * p * q * step)` along each axis,
//! with `p`, `q` signed integer indices and `step = du * dalpha`. When
//! `1 / step` is an integer `M` the sum is periodic in `p` with period `M`
//! and is evaluated with a length-`M` FFT; otherwise a dense matrix product
//! is used.

use std::f64::consts::PI;

use ndarray::{Array2, Axis};
use num_complex::Complex64;
use rustfft::FftPlanner;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Sign {
    Plus,
    Minus,
}

/// Length of the FFT that evaluates the axis sum exactly, if one exists.
pub(crate) fn fft_period(step: f64) -> Option<usize> {
    let m = 1.0 / step;
    let r = m.round();
    if (1.0..=1e6).contains(&r) && (m - r).abs() <= 1e-9 * r {
        Some(r as usize)
    } else {
        None
    }
}

fn kernel(sign: Sign, p: i64, q: i64, step: f64) -> Complex64 {
    // reduce the phase before scaling by 2 pi to keep large products accurate
    let turns = ((p * q) as f64 * step).rem_euclid(1.0);
    let phi = 2.0 * PI * turns;
    match sign {
        Sign::Plus => Complex64::new(phi.cos(), phi.sin()),
        Sign::Minus => Complex64::new(phi.cos(), -phi.sin()),
    }
}

/// Transforms along axis 0 of `data` (rows indexed by `src`), producing rows
/// indexed by `dst`.
pub(crate) fn axis0(
    data: &Array2<Complex64>,
    src: &[i64],
    dst: &[i64],
    step: f64,
    sign: Sign,
    allow_fft: bool,
) -> Array2<Complex64> {
    let cols = data.ncols();
    let mut out = Array2::<Complex64>::zeros((dst.len(), cols));
    match fft_period(step).filter(|_| allow_fft) {
        Some(m) => {
            let mut planner = FftPlanner::new();
            let fft = match sign {
                Sign::Plus => planner.plan_fft_inverse(m),
                Sign::Minus => planner.plan_fft_forward(m),
            };
            let mut buf = vec![Complex64::new(0.0, 0.0); m];
            let mi = m as i64;
            for c in 0..cols {
                buf.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
                for (r, &p) in src.iter().enumerate() {
                    buf[p.rem_euclid(mi) as usize] += data[[r, c]];
                }
                fft.process(&mut buf);
                for (r, &q) in dst.iter().enumerate() {
                    out[[r, c]] = buf[q.rem_euclid(mi) as usize];
                }
            }
        }
        None => {
            let k = Array2::from_shape_fn((dst.len(), src.len()), |(i, j)| kernel(sign, src[j], dst[i], step));
            out = k.dot(data);
        }
    }
    out
}

/// Two-dimensional separable transform.
#[allow(clippy::too_many_arguments)]
pub(crate) fn separable(
    data: &Array2<Complex64>,
    src: (&[i64], &[i64]),
    dst: (&[i64], &[i64]),
    step: (f64, f64),
    sign: Sign,
    allow_fft: bool,
) -> Array2<Complex64> {
    let first = axis0(data, src.0, dst.0, step.0, sign, allow_fft);
    let t = first.reversed_axes().as_standard_layout().to_owned();
    let second = axis0(&t, src.1, dst.1, step.1, sign, allow_fft);
    let mut out = second.reversed_axes();
    out = out.as_standard_layout().to_owned();
    debug_assert_eq!(out.len_of(Axis(0)), dst.0.len());
    out
}
