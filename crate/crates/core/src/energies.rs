//! Gradient energies `𝓘(u) = ∫ g(Q(∇u))`, their dissipation integrands and
//! the Itô drift of `𝓘` along solutions.
//!
//! Two independent routes to the drift are kept side by side:
//! [`ito_drift_prediction`] evaluates the matrix form with the Hessian of
//! `f(p) = g(Q(p))`, while [`dissipation_terms`] evaluates the regrouped
//! scalar integrands. Their sum vanishes identically.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::GeometryBundle;
use crate::grid::{self, norm2, ScalarField, MAX_DIM};

/// Which convex integrand `g` defines the energy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum EnergyFunctional {
    /// `∫|∇u|²`, i.e. `g(r) = r²` minus the constant 1.
    Dirichlet,
    /// `g(r) = r`: the area of the graph.
    Area,
    /// `g(r) = r²`.
    GSquare,
    /// The C¹ ramp `g_M` that vanishes for `Q ≤ M`.
    MaxExcess(f64),
}

impl EnergyFunctional {
    pub fn description(&self) -> String {
        match self {
            Self::Dirichlet => "Dirichlet energy ∫|∇u|²".into(),
            Self::Area => "graph area ∫Q".into(),
            Self::GSquare => "∫Q² = 1 + ∫|∇u|²".into(),
            Self::MaxExcess(m) => format!("excess energy ∫g_M(Q), M = {m}"),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Self::MaxExcess(m) if !(m >= 1.0) => Err(Error::InvalidExcessLevel(m)),
            _ => Ok(()),
        }
    }

    pub fn g(&self, r: f64) -> f64 {
        match *self {
            Self::Dirichlet | Self::GSquare => r * r,
            Self::Area => r,
            Self::MaxExcess(m) => g_max_excess(m, r),
        }
    }

    pub fn g_prime(&self, r: f64) -> f64 {
        match *self {
            Self::Dirichlet | Self::GSquare => 2.0 * r,
            Self::Area => 1.0,
            Self::MaxExcess(m) => {
                if r <= m {
                    0.0
                } else if r < m + 1.0 {
                    2.0 * (r - m)
                } else {
                    2.0
                }
            }
        }
    }

    pub fn g_second(&self, r: f64) -> f64 {
        match *self {
            Self::Dirichlet | Self::GSquare => 2.0,
            Self::Area => 0.0,
            Self::MaxExcess(m) => {
                if r > m && r < m + 1.0 {
                    2.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// `g_M(σ)`: 0 for `σ ≤ M`, `(σ−M)²` on `(M, M+1)`, `2σ − 2M − 1` beyond.
pub fn g_max_excess(m: f64, r: f64) -> f64 {
    if r <= m {
        0.0
    } else if r < m + 1.0 {
        (r - m) * (r - m)
    } else {
        2.0 * r - 2.0 * m - 1.0
    }
}

/// Quadrature of `g(Q(∇u))`; the Dirichlet variant subtracts the constant.
pub fn evaluate(func: EnergyFunctional, u: &ScalarField) -> Result<f64> {
    func.validate()?;
    let grad = grid::gradient(u);
    Ok(evaluate_grad(func, grad.values(), u.grid().dim(), u.grid().cell_volume()))
}

pub(crate) fn evaluate_grad(func: EnergyFunctional, grad: &[f64], dim: usize, vol: f64) -> f64 {
    let sum: f64 = grad
        .chunks(dim)
        .map(|p| {
            let p2 = norm2(p);
            match func {
                EnergyFunctional::Dirichlet => p2,
                _ => func.g((1.0 + p2).sqrt()),
            }
        })
        .sum();
    sum * vol
}

/// Nonnegative dissipation integrals for one energy (first moment).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DissipationTerms {
    /// `ε ∫ [g″(Q)|D²u v|² + (g′(Q)/Q)(|D²u|² − |D²u v|²)]`
    pub viscous: f64,
    /// `½ ∫ g(Q)|div v|²`
    pub mcf: f64,
    /// `∫ (g′(Q)/Q − g(Q)/(2Q²)) (|D²u|² − 2|D²u v|² + |vᵀD²u v|²)`
    pub tangential: f64,
    /// `∫ g″(Q)(|D²u v|² − |vᵀD²u v|²)`
    pub curvature: f64,
    /// Largest nodal magnitude of the weighted squares, for sign tolerances.
    pub scale: f64,
}

impl DissipationTerms {
    pub fn total(&self) -> f64 {
        self.viscous + self.mcf + self.tangential + self.curvature
    }

    /// Every term is ≥ −1e−10·scale.
    pub fn all_nonnegative(&self) -> bool {
        let tol = -1e-10 * self.scale;
        [self.viscous, self.mcf, self.tangential, self.curvature].iter().all(|&t| t >= tol)
    }
}

pub fn dissipation_terms(u: &ScalarField, epsilon: f64, func: EnergyFunctional) -> Result<DissipationTerms> {
    func.validate()?;
    Ok(dissipation_from(&GeometryBundle::new(u, epsilon), epsilon, func))
}

pub(crate) fn dissipation_from(b: &GeometryBundle, epsilon: f64, func: EnergyFunctional) -> DissipationTerms {
    let g = b.grid();
    let mut t = DissipationTerms::default();
    for k in 0..g.len() {
        let q = b.q.values()[k];
        let c = b.contractions(k);
        let (g0, g1, g2) = (func.g(q), func.g_prime(q), func.g_second(q));
        let dv = b.divv.values()[k];
        t.viscous += epsilon * (g2 * c.hess_v_sq + g1 / q * (c.hess_sq - c.hess_v_sq));
        t.mcf += 0.5 * g0 * dv * dv;
        t.tangential += (g1 / q - g0 / (2.0 * q * q)) * c.tangential();
        t.curvature += g2 * (c.hess_v_sq - c.v_hess_v * c.v_hess_v);
        let weight = g0.abs() + g1.abs() / q + g2.abs();
        t.scale = t.scale.max(weight * (c.hess_sq + dv * dv) * (1.0 + epsilon));
    }
    let vol = g.cell_volume();
    t.viscous *= vol;
    t.mcf *= vol;
    t.tangential *= vol;
    t.curvature *= vol;
    t
}

/// Dirichlet dissipation grouped as `½∫Q²|div v|² + ∫(3/2|D²u|² − |D²u v|² −
/// ½|vᵀD²u v|²) + 2ε∫|D²u|²`.
pub fn dirichlet_dissipation_grouped(u: &ScalarField, epsilon: f64) -> f64 {
    let b = GeometryBundle::new(u, epsilon);
    let mut s = 0.0;
    for k in 0..b.grid().len() {
        let q = b.q.values()[k];
        let dv = b.divv.values()[k];
        let c = b.contractions(k);
        s += 0.5 * q * q * dv * dv
            + (1.5 * c.hess_sq - c.hess_v_sq - 0.5 * c.v_hess_v * c.v_hess_v)
            + 2.0 * epsilon * c.hess_sq;
    }
    s * b.grid().cell_volume()
}

/// Area dissipation in geometric form: `½∫Q|div v|² + ½∫Q Dv:Dvᵀ` plus the
/// viscous term `ε∫(|D²u|² − |D²u v|²)/Q`.
pub fn area_dissipation_geometric(u: &ScalarField, epsilon: f64) -> f64 {
    area_geometric_from(&GeometryBundle::new(u, epsilon), epsilon)
}

pub(crate) fn area_geometric_from(b: &GeometryBundle, epsilon: f64) -> f64 {
    let g = b.grid();
    let d = g.dim();
    let dv = grid::jacobian(&b.v);
    let mut s = 0.0;
    for k in 0..g.len() {
        let q = b.q.values()[k];
        let div = b.divv.values()[k];
        let j = dv.at(k);
        let mut ddt = 0.0;
        for a in 0..d {
            for c in 0..d {
                ddt += j[a * d + c] * j[c * d + a];
            }
        }
        let mut term = 0.5 * q * div * div + 0.5 * q * ddt;
        if epsilon != 0.0 {
            let c = b.contractions(k);
            term += epsilon * (c.hess_sq - c.hess_v_sq) / q;
        }
        s += term;
    }
    s * g.cell_volume()
}

/// Predicted instantaneous drift of `𝓘`:
/// `−ε∫ Hf D²u : D²u − ½∫ f |div v|² + ∫ D²u(I−v⊗v) : (f/(2Q²)(I−v⊗v) − Hf) D²u`
/// with `f(p) = g(Q(p))` and `Hf = g″ v⊗v + g′(I − v⊗v)/Q`.
pub fn ito_drift_prediction(u: &ScalarField, epsilon: f64, func: EnergyFunctional) -> Result<f64> {
    func.validate()?;
    Ok(drift_prediction_from(&GeometryBundle::new(u, epsilon), epsilon, func))
}

pub(crate) fn drift_prediction_from(b: &GeometryBundle, epsilon: f64, func: EnergyFunctional) -> f64 {
    let g = b.grid();
    let d = g.dim();
    let mut hf = [0.0; MAX_DIM * MAX_DIM];
    let mut proj = [0.0; MAX_DIM * MAX_DIM];
    let mut left = [0.0; MAX_DIM * MAX_DIM];
    let mut right = [0.0; MAX_DIM * MAX_DIM];
    let mut mid = [0.0; MAX_DIM * MAX_DIM];
    let mut total = 0.0;
    for k in 0..g.len() {
        let q = b.q.values()[k];
        let v = b.v.at(k);
        let h = b.hess.at(k);
        let (g0, g1, g2) = (func.g(q), func.g_prime(q), func.g_second(q));
        for i in 0..d {
            for j in 0..d {
                let vv = v[i] * v[j];
                let id = if i == j { 1.0 } else { 0.0 };
                proj[i * d + j] = id - vv;
                hf[i * d + j] = g2 * vv + g1 * (id - vv) / q;
            }
        }
        // −ε (Hf D²u) : D²u
        let mut viscous = 0.0;
        matmul(&hf[..d * d], h, &mut left[..d * d], d);
        for i in 0..d * d {
            viscous += left[i] * h[i];
        }
        // (D²u P) : ((f/(2Q²)) P − Hf) D²u
        for i in 0..d * d {
            mid[i] = g0 / (2.0 * q * q) * proj[i] - hf[i];
        }
        matmul(h, &proj[..d * d], &mut left[..d * d], d);
        matmul(&mid[..d * d], h, &mut right[..d * d], d);
        let mut third = 0.0;
        for i in 0..d * d {
            third += left[i] * right[i];
        }
        let dv = b.divv.values()[k];
        total += -epsilon * viscous - 0.5 * g0 * dv * dv + third;
    }
    total * g.cell_volume()
}

fn matmul(a: &[f64], b: &[f64], out: &mut [f64], d: usize) {
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = (0..d).map(|l| a[i * d + l] * b[l * d + j]).sum();
        }
    }
}

/// Coefficient of `dW` in `d𝓘`: `−∫ g(Q) div v`.
pub fn martingale_coefficient(u: &ScalarField, func: EnergyFunctional) -> Result<f64> {
    func.validate()?;
    let b = GeometryBundle::new(u, 0.0);
    let s: f64 = b.q.values().iter().zip(b.divv.values()).map(|(&q, &dv)| -func.g(q) * dv).sum();
    Ok(s * u.grid().cell_volume())
}
