//! Multi-dimensional discrete Fourier transforms on a [`GridSpec`].

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::grid::{GridSpec, ScalarField};

#[derive(Clone)]
pub(crate) struct FftN {
    grid: GridSpec,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl FftN {
    pub fn new(grid: GridSpec) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            grid,
            forward: planner.plan_fft_forward(grid.res()),
            inverse: planner.plan_fft_inverse(grid.res()),
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    fn along_axes(&self, data: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        let g = &self.grid;
        let n = g.res();
        let mut line = vec![Complex64::default(); n];
        for axis in 0..g.dim() {
            let stride = g.stride(axis);
            if stride == 1 {
                fft.process(data);
                continue;
            }
            // every line along `axis` starts at an index whose `axis` coordinate is 0
            let block = stride * n;
            for start_block in (0..data.len()).step_by(block) {
                for offset in 0..stride {
                    let start = start_block + offset;
                    for (i, c) in line.iter_mut().enumerate() {
                        *c = data[start + i * stride];
                    }
                    fft.process(&mut line);
                    for (i, c) in line.iter().enumerate() {
                        data[start + i * stride] = *c;
                    }
                }
            }
        }
    }

    /// Unnormalized forward transform `û_k = Σ_x u(x) e^{−2πi k·x}`.
    pub fn forward(&self, u: &ScalarField) -> Vec<Complex64> {
        let mut data: Vec<Complex64> = u.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.along_axes(&mut data, &self.forward);
        data
    }

    /// Inverse of [`FftN::forward`], returning the real part.
    pub fn inverse(&self, mut data: Vec<Complex64>) -> ScalarField {
        self.along_axes(&mut data, &self.inverse);
        let scale = 1.0 / self.grid.len() as f64;
        ScalarField::from_raw(self.grid, data.into_iter().map(|c| c.re * scale).collect())
    }

    /// Signed integer frequency of each flat spectral index, components in
    /// `(−N/2, N/2]`.
    pub fn wavenumbers(&self) -> Vec<Vec<i64>> {
        let g = &self.grid;
        let n = g.res() as i64;
        (0..g.len())
            .map(|idx| g.multi_index(idx).into_iter().map(|i| wrap(i as i64, n)).collect())
            .collect()
    }
}

#[inline]
pub(crate) fn wrap(i: i64, n: i64) -> i64 {
    let r = i.rem_euclid(n);
    if r > n / 2 {
        r - n
    } else {
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn roundtrip_and_single_mode() {
        let g = GridSpec::new(2, 8).unwrap();
        let fft = FftN::new(g);
        let u = ScalarField::from_fn(g, |x| (2.0 * PI * (x[0] + 2.0 * x[1])).cos() + 0.5);
        let spec = fft.forward(&u);
        let back = fft.inverse(spec.clone());
        assert!((&back - &u).linf() < 1e-13);
        let k = fft.wavenumbers();
        for (i, c) in spec.iter().enumerate() {
            let expect = match (k[i][0], k[i][1]) {
                (0, 0) => 32.0,
                (1, 2) | (-1, -2) => 32.0,
                _ => 0.0,
            };
            assert!((c.re - expect).abs() < 1e-10 && c.im.abs() < 1e-10, "{:?} {c}", k[i]);
        }
    }

    #[test]
    fn wrap_range() {
        assert_eq!(wrap(5, 8), -3);
        assert_eq!(wrap(4, 8), 4);
        assert_eq!(wrap(0, 8), 0);
    }
}
