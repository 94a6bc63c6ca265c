//! Real trigonometric basis of the grid, Galerkin truncation, the spectral
//! mollifier, and the variational form of the viscous drift.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::error::{Error, Result};
use crate::geometry::GeometryBundle;
use crate::grid::{self, norm2, GridSpec, ScalarField};
use crate::spectral::FftN;
use crate::stepper::{config_noise, explicit_drift, record_path, PathResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Parity {
    Cos,
    Sin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisMode {
    /// Frequency with components in `(−N/2, N/2]`.
    pub k: Vec<i64>,
    pub parity: Parity,
    /// `1 + 4π²|k|²`.
    pub lambda: f64,
    /// Flat spectral indices of `k` and `−k` (equal for self-conjugate `k`).
    index: usize,
    conj: usize,
}

impl BasisMode {
    /// `cos` and `sin` of a self-conjugate frequency: zero and the Nyquist
    /// combinations, where `sin` vanishes on the grid.
    pub fn is_self_conjugate(&self) -> bool {
        self.index == self.conj
    }

    fn norm_factor(&self) -> f64 {
        if self.is_self_conjugate() {
            1.0
        } else {
            std::f64::consts::SQRT_2
        }
    }
}

/// Discrete-L²-orthonormal real Fourier basis `{1, √2 cos 2πk·x, √2 sin 2πk·x}`
/// ordered by nondecreasing `λ`, ties by `k` then `cos` before `sin`.
#[derive(Clone)]
pub struct SpectralBasis {
    fft: FftN,
    modes: Vec<BasisMode>,
    /// `λ` per flat spectral index.
    lambda_flat: Vec<f64>,
}

impl std::fmt::Debug for SpectralBasis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralBasis").field("grid", self.fft.grid()).field("modes", &self.modes.len()).finish()
    }
}

impl SpectralBasis {
    pub fn new(grid: GridSpec) -> Self {
        let fft = FftN::new(grid);
        let n = grid.res() as i64;
        let ks = fft.wavenumbers();
        let lambda_of = |k: &[i64]| 1.0 + 4.0 * PI * PI * k.iter().map(|&x| (x * x) as f64).sum::<f64>();
        let lambda_flat = ks.iter().map(|k| lambda_of(k)).collect();
        let mut modes = Vec::with_capacity(grid.len());
        for (index, k) in ks.iter().enumerate() {
            let neg: Vec<usize> = k.iter().map(|&x| (-x).rem_euclid(n) as usize).collect();
            let conj = grid.flat_index(&neg);
            let negk = &ks[conj];
            // one representative per pair {k, −k}: the lexicographically larger
            if conj != index && k < negk {
                continue;
            }
            let lambda = lambda_of(k);
            modes.push(BasisMode { k: k.clone(), parity: Parity::Cos, lambda, index, conj });
            if conj != index {
                modes.push(BasisMode { k: k.clone(), parity: Parity::Sin, lambda, index, conj });
            }
        }
        modes.sort_by(|a, b| {
            a.lambda
                .total_cmp(&b.lambda)
                .then_with(|| a.k.cmp(&b.k))
                .then_with(|| (a.parity == Parity::Sin).cmp(&(b.parity == Parity::Sin)))
        });
        Self { fft, modes, lambda_flat }
    }

    pub fn grid(&self) -> &GridSpec {
        self.fft.grid()
    }

    pub fn modes(&self) -> &[BasisMode] {
        &self.modes
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Number of modes with `|k| ≤ kmax`; they are a prefix of the ordering.
    pub fn count_within(&self, kmax: i64) -> usize {
        self.modes.iter().filter(|m| m.k.iter().map(|x| x * x).sum::<i64>() <= kmax * kmax).count()
    }

    fn check_k(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.len() {
            return Err(Error::InvalidArgument(format!("K must be in 1..={} (got {k})", self.len())));
        }
        Ok(())
    }

    /// `⟨u, eᵏ⟩` for the first `count` modes.
    pub fn coefficients(&self, u: &ScalarField, count: usize) -> Result<Vec<f64>> {
        self.grid().ensure_same(u.grid())?;
        self.check_k(count)?;
        let spec = self.fft.forward(u);
        let vol = self.grid().cell_volume();
        Ok(self.modes[..count]
            .iter()
            .map(|m| {
                let c = spec[m.index];
                let part = match m.parity {
                    Parity::Cos => c.re,
                    Parity::Sin => -c.im,
                };
                m.norm_factor() * vol * part
            })
            .collect())
    }

    /// `Σ αₖ eᵏ` over the leading modes.
    pub fn synthesize(&self, alpha: &[f64]) -> Result<ScalarField> {
        self.check_k(alpha.len())?;
        let vol = self.grid().cell_volume();
        let mut spec = vec![Complex64::default(); self.grid().len()];
        for (m, &a) in self.modes.iter().zip(alpha) {
            let c = a / (m.norm_factor() * vol);
            let z = match m.parity {
                Parity::Cos => Complex64::new(c, 0.0),
                Parity::Sin => Complex64::new(0.0, -c),
            };
            spec[m.index] += z;
            if !m.is_self_conjugate() {
                spec[m.conj] += z.conj();
            }
        }
        Ok(self.fft.inverse(spec))
    }

    /// Orthogonal projection onto the span of the first `count` modes.
    pub fn project(&self, u: &ScalarField, count: usize) -> Result<ScalarField> {
        self.synthesize(&self.coefficients(u, count)?)
    }

    /// Largest `−` eigenvalue of the stencil Laplacian among the first
    /// `count` modes.
    pub fn max_stencil_eigenvalue(&self, count: usize) -> Result<f64> {
        self.check_k(count)?;
        let g = self.grid();
        let h = g.spacing();
        let n = g.res() as f64;
        Ok(self.modes[..count]
            .iter()
            .map(|m| m.k.iter().map(|&ki| 2.0 / (h * h) * (1.0 - (2.0 * PI * ki as f64 / n).cos())).sum::<f64>())
            .fold(0.0, f64::max))
    }

    /// The mollifier `Σ exp(−ε_s λₖ) ⟨u, eᵏ⟩ eᵏ`.
    pub fn smooth(&self, u: &ScalarField, eps_s: f64) -> Result<ScalarField> {
        self.grid().ensure_same(u.grid())?;
        if !(eps_s >= 0.0 && eps_s.is_finite()) {
            return Err(Error::InvalidArgument(format!("smoothing parameter must be ≥ 0 (got {eps_s})")));
        }
        if eps_s == 0.0 {
            return Ok(u.clone());
        }
        let mut spec = self.fft.forward(u);
        for (c, &l) in spec.iter_mut().zip(&self.lambda_flat) {
            *c *= (-eps_s * l).exp();
        }
        Ok(self.fft.inverse(spec))
    }
}

/// Projection of `u` onto the `count` lowest modes.
pub fn spectral_project(u: &ScalarField, count: usize) -> Result<ScalarField> {
    SpectralBasis::new(*u.grid()).project(u, count)
}

pub fn smooth(u: &ScalarField, eps_s: f64) -> Result<ScalarField> {
    SpectralBasis::new(*u.grid()).smooth(u, eps_s)
}

/// A potential `u` standing for the gradient `∇u`, with its viscosity.
#[derive(Clone, Debug, PartialEq)]
pub struct VariationalState {
    pub u: ScalarField,
    pub epsilon: f64,
}

impl VariationalState {
    pub fn new(u: ScalarField, epsilon: f64) -> Result<Self> {
        if !u.is_finite() {
            return Err(Error::InvalidArgument("state must be finite".into()));
        }
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!("epsilon must be ≥ 0 (got {epsilon})")));
        }
        Ok(Self { u, epsilon })
    }
}

/// `⟨A_ε(∇u), ∇w⟩ = −∫((1+ε)Δu − ½vᵀ(D²u)v) Δw`.
pub fn variational_pairing_a(state: &VariationalState, w: &ScalarField) -> Result<f64> {
    state.u.grid().ensure_same(w.grid())?;
    let b = GeometryBundle::new(&state.u, state.epsilon);
    Ok(-b.drift.dot(&grid::laplacian(w)))
}

/// The linear part `−(1+ε)∫Δu Δw` of [`variational_pairing_a`].
pub fn linear_pairing(state: &VariationalState, w: &ScalarField) -> Result<f64> {
    state.u.grid().ensure_same(w.grid())?;
    Ok(-(1.0 + state.epsilon) * grid::laplacian(&state.u).dot(&grid::laplacian(w)))
}

/// `‖(D²u)v‖²_{L²}`, the squared norm of the noise coefficient `∇Q`.
fn b_norm_sq(b: &GeometryBundle) -> f64 {
    let g = b.grid();
    let d = g.dim();
    let mut hv = vec![0.0; d];
    (0..g.len())
        .map(|k| {
            crate::geometry::mat_vec(b.hess.at(k), b.v.at(k), &mut hv);
            norm2(&hv)
        })
        .sum::<f64>()
        * g.cell_volume()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoercivityGap {
    /// `2⟨A_ε(∇u), ∇u⟩ + ‖B(∇u)‖² + 2ε‖Δu‖²`.
    pub gap: f64,
    /// Admissible positive part from discrete commutation errors.
    pub tol: f64,
}

impl CoercivityGap {
    pub fn within_tolerance(&self) -> bool {
        self.gap <= self.tol
    }
}

/// `Σ_k (4π²|k|²)³ |ûₖ|²`, the squared `Ḣ³` seminorm.
pub fn h3_seminorm_sq(u: &ScalarField) -> f64 {
    let fft = FftN::new(*u.grid());
    let scale = 1.0 / u.grid().len() as f64;
    fft.forward(u)
        .iter()
        .zip(fft.wavenumbers())
        .map(|(c, k)| {
            let l = 4.0 * PI * PI * k.iter().map(|&x| (x * x) as f64).sum::<f64>();
            l * l * l * (c * scale).norm_sqr()
        })
        .sum()
}

/// Multiple of `h²‖u‖²_{Ḣ³}` allowed as a positive coercivity gap.
pub const GAP_CONSTANT: f64 = 1.0;

pub fn coercivity_gap(state: &VariationalState) -> CoercivityGap {
    let u = &state.u;
    let eps = state.epsilon;
    let b = GeometryBundle::new(u, eps);
    let lap = b.hess.trace();
    let lap_sq = lap.dot(&lap);
    let pairing = -b.drift.dot(&lap);
    let gap = 2.0 * pairing + b_norm_sq(&b) + 2.0 * eps * lap_sq;
    let h = u.grid().spacing();
    CoercivityGap { gap, tol: GAP_CONSTANT * h * h * h3_seminorm_sq(u) }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthBound {
    /// `∫|(1+ε)Δu − ½vᵀ(D²u)v|² / ‖∇u‖²_{H¹}`.
    pub drift_ratio: f64,
    /// `‖(D²u)v‖² / ‖∇u‖²_{H¹}`.
    pub noise_ratio: f64,
    /// `2(1+ε)² + 1`.
    pub bound: f64,
}

impl GrowthBound {
    pub fn holds(&self) -> bool {
        self.drift_ratio <= self.bound && self.noise_ratio <= self.bound
    }
}

pub fn growth_bound_check(state: &VariationalState) -> GrowthBound {
    let eps = state.epsilon;
    let b = GeometryBundle::new(&state.u, eps);
    let vol = b.grid().cell_volume();
    let h1 = (norm2(b.grad.values()) + norm2(b.hess.values())) * vol;
    let bound = 2.0 * (1.0 + eps) * (1.0 + eps) + 1.0;
    if h1 == 0.0 {
        return GrowthBound { drift_ratio: 0.0, noise_ratio: 0.0, bound };
    }
    GrowthBound { drift_ratio: b.drift.dot(&b.drift) / h1, noise_ratio: b_norm_sq(&b) / h1, bound }
}

/// Explicit Euler–Maruyama for the coefficients of the first `count` modes:
/// `dαₖ = ⟨drift(u_α), eᵏ⟩dt + ⟨Q(∇u_α), eᵏ⟩dW`, with `u_α` rebuilt on the
/// grid every step. The configured scheme is ignored.
pub fn galerkin_simulate(config: &SimConfig, count: usize, path_id: u64) -> Result<PathResult> {
    let grid = config.grid()?;
    let basis = SpectralBasis::new(grid);
    let eps = config.epsilon;
    let mu = basis.max_stencil_eigenvalue(count)?;
    if mu > 0.0 {
        let bound = 1.0 / (mu * (1.0 + eps));
        if config.dt > bound {
            return Err(Error::Stability { dt: config.dt, bound });
        }
    }
    let u0 = config.initial.build(grid, config.base_seed, path_id)?;
    let mut alpha = basis.coefficients(&u0, count)?;
    let u0 = basis.synthesize(&alpha)?;
    let noise = config_noise(config, path_id)?;
    let with_correction = config.noise;
    record_path(u0, &noise, eps, config.stride(), path_id, |_, b, dt, dw| {
        let drift = explicit_drift(b, eps, with_correction);
        let incr = drift.zip_map(&b.q, |d, q| dt * d + dw * q);
        let d_alpha = basis.coefficients(&incr, count).expect("basis matches grid");
        for (a, da) in alpha.iter_mut().zip(d_alpha) {
            *a += da;
        }
        basis.synthesize(&alpha).expect("count checked")
    })
}
