//! Thread-local FFT plans and axis-wise complex transforms.
//!
//! Forward transforms are unnormalized. Inverse transforms divide by the
//! transform length, so `inverse(forward(x)) == x`.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{ArrayD, Axis};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

thread_local! {
    static PLANS: RefCell<(FftPlanner<f64>, HashMap<(usize, bool), Arc<dyn Fft<f64>>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|p| {
        let (planner, cache) = &mut *p.borrow_mut();
        cache
            .entry((n, inverse))
            .or_insert_with(|| {
                if inverse {
                    planner.plan_fft_inverse(n)
                } else {
                    planner.plan_fft_forward(n)
                }
            })
            .clone()
    })
}

/// Transforms `a` in place along `axis`. `inverse` applies the normalized inverse.
pub fn fft_axis(a: &mut ArrayD<Complex64>, axis: usize, inverse: bool) {
    let n = a.shape()[axis];
    if n <= 1 {
        return;
    }
    let fft = plan(n, inverse);
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let scale = if inverse { 1.0 / n as f64 } else { 1.0 };
    let last = axis + 1 == a.ndim();
    if last && a.is_standard_layout() {
        let data = a.as_slice_mut().expect("standard layout");
        fft.process_with_scratch(data, &mut scratch);
        if inverse {
            data.iter_mut().for_each(|v| *v *= scale);
        }
        return;
    }
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for mut lane in a.lanes_mut(Axis(axis)) {
        for (b, v) in buf.iter_mut().zip(lane.iter()) {
            *b = *v;
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (v, b) in lane.iter_mut().zip(buf.iter()) {
            *v = *b * scale;
        }
    }
}

/// Transforms along each listed axis.
pub fn fft_axes(a: &mut ArrayD<Complex64>, axes: &[usize], inverse: bool) {
    for &ax in axes {
        fft_axis(a, ax, inverse);
    }
}

/// Forward transform over the last two axes.
pub fn fft2(a: &mut ArrayD<Complex64>) {
    let d = a.ndim();
    fft_axes(a, &[d - 2, d - 1], false);
}

/// Normalized inverse transform over the last two axes.
pub fn ifft2(a: &mut ArrayD<Complex64>) {
    let d = a.ndim();
    fft_axes(a, &[d - 2, d - 1], true);
}

/// Signed integer frequency of FFT bin `j` for length `n` (Nyquist is negative).
pub fn signed_index(j: usize, n: usize) -> i64 {
    if j < n.div_ceil(2) {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

/// FFT bin of signed frequency `s` for length `n`.
pub fn bin_of(s: i64, n: usize) -> usize {
    s.rem_euclid(n as i64) as usize
}

/// Spectral resize along one axis from `a.shape()[axis]` to `m` bins.
///
/// Shared frequencies are copied. On padding the source Nyquist bin is split
/// evenly between the two new bins; on truncation modes with `|j| >= m/2` are
/// dropped. Values are multiplied by `scale`.
pub fn resize_axis(
    a: &ArrayD<Complex64>,
    axis: usize,
    m: usize,
    scale: f64,
) -> ArrayD<Complex64> {
    let n = a.shape()[axis];
    let mut shape = a.shape().to_vec();
    shape[axis] = m;
    let mut out = ArrayD::<Complex64>::zeros(shape);
    for (src, dst, w) in resize_map(n, m) {
        let s = a.index_axis(Axis(axis), src);
        let mut d = out.index_axis_mut(Axis(axis), dst);
        d.zip_mut_with(&s, |o, v| *o += *v * (w * scale));
    }
    out
}

/// Transpose of [`resize_axis`]: maps an `m`-bin array back to `n` bins.
pub fn resize_axis_adjoint(
    g: &ArrayD<Complex64>,
    axis: usize,
    n: usize,
    scale: f64,
) -> ArrayD<Complex64> {
    let m = g.shape()[axis];
    let mut shape = g.shape().to_vec();
    shape[axis] = n;
    let mut out = ArrayD::<Complex64>::zeros(shape);
    for (src, dst, w) in resize_map(n, m) {
        let s = g.index_axis(Axis(axis), dst);
        let mut d = out.index_axis_mut(Axis(axis), src);
        d.zip_mut_with(&s, |o, v| *o += *v * (w * scale));
    }
    out
}

/// Triples `(source bin, destination bin, weight)` of the resize map `n -> m`.
pub fn resize_map(n: usize, m: usize) -> Vec<(usize, usize, f64)> {
    let mut map = Vec::new();
    if m >= n {
        for j in 0..n {
            let s = signed_index(j, n);
            if n % 2 == 0 && s == -(n as i64 / 2) && m > n {
                map.push((j, bin_of(s, m), 0.5));
                map.push((j, bin_of(-s, m), 0.5));
            } else {
                map.push((j, bin_of(s, m), 1.0));
            }
        }
    } else {
        for j in 0..n {
            let s = signed_index(j, n);
            if 2 * s.unsigned_abs() < m as u64 {
                map.push((j, bin_of(s, m), 1.0));
            }
        }
    }
    map
}
