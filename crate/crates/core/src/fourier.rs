//! Whole-trace FFT filtering helpers.

use num_complex::Complex64;
use rustfft::FftPlanner;

/// Frequency of bin `k` in an `n`-point transform at `sample_rate`.
pub fn bin_frequency(k: usize, n: usize, sample_rate: f64) -> f64 {
    k as f64 * sample_rate / n as f64
}

/// Forward FFT of a real sequence (full complex spectrum, unnormalized).
pub fn forward(values: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    if buf.is_empty() {
        return buf;
    }
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf
}

/// Inverse FFT returning the real part, normalized by 1/n.
pub fn inverse_real(mut spectrum: Vec<Complex64>) -> Vec<f64> {
    let n = spectrum.len();
    if n == 0 {
        return Vec::new();
    }
    FftPlanner::new().plan_fft_inverse(n).process(&mut spectrum);
    let scale = 1.0 / n as f64;
    spectrum.into_iter().map(|c| c.re * scale).collect()
}

/// Multiplies the spectrum of `values` by `transfer(f)` on the positive
/// frequencies, mirrors it onto the negative ones, and returns the real
/// result. The transform is circular over the trace length.
pub fn apply_transfer<F>(values: &[f64], sample_rate: f64, transfer: F) -> Vec<f64>
where
    F: Fn(f64) -> Complex64,
{
    let n = values.len();
    if n == 0 {
        return Vec::new();
    }
    let mut spec = forward(values);
    spec[0] *= transfer(0.0).re;
    for k in 1..=(n - 1) / 2 {
        let h = transfer(bin_frequency(k, n, sample_rate));
        spec[k] *= h;
        spec[n - k] *= h.conj();
    }
    if n % 2 == 0 {
        spec[n / 2] *= transfer(bin_frequency(n / 2, n, sample_rate)).re;
    }
    inverse_real(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn unit_transfer_is_identity() {
        let x: Vec<f64> = (0..37).map(|i| (i as f64 * 0.3).sin() + 0.1 * i as f64).collect();
        let y = apply_transfer(&x, 10.0, |_| Complex64::new(1.0, 0.0));
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn derivative_of_periodic_sine() {
        let n = 400;
        let sr = 100.0;
        let f = 3.0;
        let x: Vec<f64> = (0..n).map(|i| (2.0 * PI * f * i as f64 / sr).sin()).collect();
        let y = apply_transfer(&x, sr, |fr| Complex64::new(0.0, 2.0 * PI * fr));
        for (i, v) in y.iter().enumerate() {
            let want = 2.0 * PI * f * (2.0 * PI * f * i as f64 / sr).cos();
            assert!((v - want).abs() < 1e-9);
        }
    }
}
