//! Centered 3D DFT on grids whose origin sits at index `n / 2` of every axis.

use ndarray::{Array3, Axis};
use rustfft::FftPlanner;

use crate::C64;

/// In-place centered transform `X[a] = sum_i x[i] exp(-+ 2 pi i (a - n/2)(i - n/2) / n)`.
/// The inverse direction uses the `+` sign and includes the `1 / N` factor.
pub fn fft3_centered(data: &mut Array3<C64>, inverse: bool) {
    let mut planner = FftPlanner::new();
    for axis in 0..3 {
        let n = data.len_of(Axis(axis));
        let fft = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
        let half = n / 2;
        let mut buf = vec![C64::new(0.0, 0.0); n];
        for mut lane in data.lanes_mut(Axis(axis)) {
            for (i, b) in buf.iter_mut().enumerate() {
                *b = lane[(i + half) % n];
            }
            fft.process(&mut buf);
            for a in 0..n {
                lane[a] = buf[(a + n - half) % n];
            }
        }
    }
    if inverse {
        let scale = 1.0 / data.len() as f64;
        data.mapv_inplace(|v| v * scale);
    }
}
