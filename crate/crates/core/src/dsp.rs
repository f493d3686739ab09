//! Correlation and windowed-statistics kernels shared by the estimators.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population variance, two-pass.
pub fn variance(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
}

/// `out[t] = x[(t + shift) mod n]`.
pub fn rotate_left(x: &[f64], shift: usize) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let s = shift % n;
    let mut out = Vec::with_capacity(n);
    out.extend_from_slice(&x[s..]);
    out.extend_from_slice(&x[..s]);
    out
}

/// Rotate by a signed lag: `out[t] = x[(t + lag) mod n]`.
pub fn rotate_by_lag(x: &[f64], lag: isize) -> Vec<f64> {
    let n = x.len() as isize;
    if n == 0 {
        return Vec::new();
    }
    rotate_left(x, lag.rem_euclid(n) as usize)
}

/// Population variance of every length-`window` window, one pass.
///
/// Running sum and sum of squares are updated per step on mean-centred data;
/// `out[i]` is the variance of `x[i..i + window]`. Negative round-off is
/// clamped to zero.
pub fn sliding_variance(x: &[f64], window: usize) -> Vec<f64> {
    let n = x.len();
    if window == 0 || window > n {
        return Vec::new();
    }
    let centre = mean(x);
    let w = window as f64;
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    for &v in &x[..window] {
        let d = v - centre;
        s1 += d;
        s2 += d * d;
    }
    let mut out = Vec::with_capacity(n - window + 1);
    out.push((s2 / w - (s1 / w).powi(2)).max(0.0));
    for i in window..n {
        let add = x[i] - centre;
        let drop = x[i - window] - centre;
        s1 += add - drop;
        s2 += add * add - drop * drop;
        out.push((s2 / w - (s1 / w).powi(2)).max(0.0));
    }
    out
}

/// Mean-removed autocorrelation sums `r[l] = sum_t y[t] y[t+l]` for
/// `l = 0..=max_lag`, where `y = x - mean(x)`. Computed by FFT.
pub fn autocorrelation(x: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len();
    let max_lag = max_lag.min(n.saturating_sub(1));
    let size = (n + max_lag + 1).next_power_of_two();
    let m = mean(x);
    let mut buf: Vec<Complex<f64>> = x
        .iter()
        .map(|&v| Complex::new(v - m, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    let scale = 1.0 / size as f64;
    buf[..=max_lag].iter().map(|c| c.re * scale).collect()
}

/// Sliding dot product `out[o] = sum_i signal[o + i] * kernel[i]` for every
/// offset where the kernel fits entirely (`o = 0..=n-m`). Direct summation.
pub fn sliding_dot_direct(signal: &[f64], kernel: &[f64]) -> Vec<f64> {
    let (n, m) = (signal.len(), kernel.len());
    if m == 0 || m > n {
        return Vec::new();
    }
    (0..=n - m)
        .map(|o| {
            signal[o..o + m]
                .iter()
                .zip(kernel)
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect()
}

/// Same contract as [`sliding_dot_direct`], computed with one forward FFT per
/// operand and one inverse FFT.
pub fn sliding_dot_fft(signal: &[f64], kernel: &[f64]) -> Vec<f64> {
    let (n, m) = (signal.len(), kernel.len());
    if m == 0 || m > n {
        return Vec::new();
    }
    // circular correlation of length >= n never wraps for o + i < n
    let size = n.next_power_of_two();
    let zero = Complex::new(0.0, 0.0);
    let mut a: Vec<Complex<f64>> = signal.iter().map(|&v| Complex::new(v, 0.0)).collect();
    a.resize(size, zero);
    let mut b: Vec<Complex<f64>> = kernel.iter().map(|&v| Complex::new(v, 0.0)).collect();
    b.resize(size, zero);
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(size);
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y.conj();
    }
    planner.plan_fft_inverse(size).process(&mut a);
    let scale = 1.0 / size as f64;
    a[..=n - m].iter().map(|c| c.re * scale).collect()
}

/// Circular cross-correlation at signed lags `-max_lag..=max_lag`:
/// `out[j] = sum_t row[(t + lag) mod n] * reference[t]` with `lag = j - max_lag`.
pub fn circular_xcorr_direct(row: &[f64], reference: &[f64], max_lag: usize) -> Vec<f64> {
    let n = row.len();
    let lags = -(max_lag as isize)..=max_lag as isize;
    lags.map(|lag| {
        let s = lag.rem_euclid(n as isize) as usize;
        let (head, tail) = reference.split_at(n - s);
        let a: f64 = row[s..].iter().zip(head).map(|(x, y)| x * y).sum();
        let b: f64 = row[..s].iter().zip(tail).map(|(x, y)| x * y).sum();
        a + b
    })
    .collect()
}

/// Reusable FFT plan for full circular cross-correlation of fixed-length rows.
pub struct CircularCorrelator {
    len: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    a: Vec<Complex<f64>>,
    b: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl CircularCorrelator {
    pub fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(len);
        let inv = planner.plan_fft_inverse(len);
        let scratch_len = fwd
            .get_inplace_scratch_len()
            .max(inv.get_inplace_scratch_len());
        let zero = Complex::new(0.0, 0.0);
        CircularCorrelator {
            len,
            fwd,
            inv,
            a: vec![zero; len],
            b: vec![zero; len],
            scratch: vec![zero; scratch_len],
        }
    }

    /// Same contract as [`circular_xcorr_direct`].
    pub fn correlate(&mut self, row: &[f64], reference: &[f64], max_lag: usize) -> Vec<f64> {
        let n = self.len;
        assert_eq!(row.len(), n);
        assert_eq!(reference.len(), n);
        for (dst, &v) in self.a.iter_mut().zip(row) {
            *dst = Complex::new(v, 0.0);
        }
        for (dst, &v) in self.b.iter_mut().zip(reference) {
            *dst = Complex::new(v, 0.0);
        }
        self.fwd
            .process_with_scratch(&mut self.a, &mut self.scratch);
        self.fwd
            .process_with_scratch(&mut self.b, &mut self.scratch);
        for (x, y) in self.a.iter_mut().zip(&self.b) {
            *x *= y.conj();
        }
        self.inv
            .process_with_scratch(&mut self.a, &mut self.scratch);
        let scale = 1.0 / n as f64;
        (-(max_lag as isize)..=max_lag as isize)
            .map(|lag| self.a[lag.rem_euclid(n as isize) as usize].re * scale)
            .collect()
    }
}

/// Index of the first maximum; `None` on empty input.
pub fn argmax_first(x: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in x.iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Index of the first minimum; `None` on empty input.
pub fn argmin_first(x: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in x.iter().enumerate() {
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SimRng;
    use proptest::prelude::*;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = SimRng::new(seed);
        (0..n).map(|_| 10.0 + rng.normal(1.0)).collect()
    }

    #[test]
    fn sliding_variance_matches_two_pass() {
        let x = noise(3000, 1);
        for w in [1, 2, 17, 230, 3000] {
            let fast = sliding_variance(&x, w);
            assert_eq!(fast.len(), x.len() - w + 1);
            for (i, &v) in fast.iter().enumerate() {
                let want = variance(&x[i..i + w]);
                assert!((v - want).abs() < 1e-9, "w={w} i={i}: {v} vs {want}");
            }
        }
    }

    #[test]
    fn autocorrelation_matches_direct_sum() {
        let x = noise(500, 2);
        let r = autocorrelation(&x, 60);
        let m = mean(&x);
        for (lag, &got) in r.iter().enumerate() {
            let want: f64 = (0..x.len() - lag)
                .map(|t| (x[t] - m) * (x[t + lag] - m))
                .sum();
            assert!((got - want).abs() < 1e-8 * want.abs().max(1.0));
        }
    }

    #[test]
    fn sliding_dot_paths_agree() {
        let x = noise(1000, 3);
        let k = noise(37, 4);
        let d = sliding_dot_direct(&x, &k);
        let f = sliding_dot_fft(&x, &k);
        assert_eq!(d.len(), 964);
        for (a, b) in d.iter().zip(&f) {
            assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
        }
    }

    #[test]
    fn circular_paths_agree() {
        let row = noise(250, 5);
        let reference = noise(250, 6);
        let d = circular_xcorr_direct(&row, &reference, 30);
        let f = CircularCorrelator::new(250).correlate(&row, &reference, 30);
        for (a, b) in d.iter().zip(&f) {
            assert!((a - b).abs() < 1e-9 * a.abs());
        }
    }

    #[test]
    fn circular_xcorr_peaks_at_shift() {
        let wave = noise(300, 7);
        // row[t] = wave[t - 12]: aligning requires reading 12 ahead
        let row = rotate_by_lag(&wave, -12);
        let c = circular_xcorr_direct(&row, &wave, 20);
        assert_eq!(argmax_first(&c), Some(20 + 12));
    }

    #[test]
    fn first_extremum_wins_ties() {
        assert_eq!(argmax_first(&[1.0, 3.0, 3.0]), Some(1));
        assert_eq!(argmin_first(&[2.0, 0.0, 0.0, 1.0]), Some(1));
        assert_eq!(argmin_first(&[]), None);
    }

    proptest! {
        #[test]
        fn rotation_composes(xs in proptest::collection::vec(-5.0f64..5.0, 1..64), a in 0usize..200, b in 0usize..200) {
            let once = rotate_left(&rotate_left(&xs, a), b);
            prop_assert_eq!(once, rotate_left(&xs, a + b));
        }
    }
}
