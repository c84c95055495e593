//! Multidimensional FFTs over a grid's row-major site layout.

use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

/// In-place unnormalized n-dimensional transform of `data` laid out with the
/// last axis contiguous.
pub fn fft_nd(data: &mut [Complex64], extents: &[usize], direction: FftDirection) {
    let total: usize = extents.iter().product();
    assert_eq!(data.len(), total, "buffer does not match extents");
    let mut planner = FftPlanner::<f64>::new();
    let mut stride = 1usize;
    let mut line = Vec::new();
    for axis in (0..extents.len()).rev() {
        let len = extents[axis];
        let fft = planner.plan_fft(len, direction);
        let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        if stride == 1 {
            for chunk in data.chunks_exact_mut(len) {
                fft.process_with_scratch(chunk, &mut scratch);
            }
        } else {
            line.resize(len, Complex64::new(0.0, 0.0));
            let block = len * stride;
            for base in (0..total).step_by(block) {
                for off in 0..stride {
                    for (i, v) in line.iter_mut().enumerate() {
                        *v = data[base + off + i * stride];
                    }
                    fft.process_with_scratch(&mut line, &mut scratch);
                    for (i, v) in line.iter().enumerate() {
                        data[base + off + i * stride] = *v;
                    }
                }
            }
        }
        stride *= len;
    }
}

/// Periodic convolution `(f * k)(x) = sum_y f(y) k(x - y)` of two real arrays.
pub fn convolve_periodic(f: &[f64], kernel: &[f64], extents: &[usize]) -> Vec<f64> {
    let mut a: Vec<Complex64> = f.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let mut b: Vec<Complex64> = kernel.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_nd(&mut a, extents, FftDirection::Forward);
    fft_nd(&mut b, extents, FftDirection::Forward);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y;
    }
    fft_nd(&mut a, extents, FftDirection::Inverse);
    let norm = 1.0 / a.len() as f64;
    a.iter().map(|z| z.re * norm).collect()
}
