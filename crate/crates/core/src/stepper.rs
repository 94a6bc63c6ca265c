//! Time integration of the viscous flow in Itô form, plus a Stratonovich
//! Heun scheme used to cross-check the Itô correction.

use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::energies::{area_geometric_from, drift_prediction_from, evaluate_grad, EnergyFunctional};
use crate::error::{Error, Result};
use crate::geometry::{correction_field, GeometryBundle};
use crate::grid::{self, norm2, GridSpec, ScalarField};
use crate::noise::NoisePath;
use crate::spectral::FftN;
use crate::trace::{AuxSample, EnergyTrace, TraceSample};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SchemeKind {
    ExplicitEM,
    #[default]
    SemiImplicitSpectral,
    StratonovichHeun,
}

impl SchemeKind {
    /// Whether the scheme is subject to the explicit stability bound.
    pub fn is_explicit(self) -> bool {
        !matches!(self, SchemeKind::SemiImplicitSpectral)
    }
}

/// Largest admissible step of the explicit schemes, `0.5·h²/(2n(1+ε))`.
pub fn explicit_stability_bound(grid: &GridSpec, epsilon: f64) -> f64 {
    let h = grid.spacing();
    0.5 * h * h / (2.0 * grid.dim() as f64 * (1.0 + epsilon))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathState {
    pub u: ScalarField,
    pub t_index: usize,
    pub dt: f64,
}

impl PathState {
    pub fn new(u: ScalarField, dt: f64) -> Self {
        Self { u, t_index: 0, dt }
    }

    pub fn time(&self) -> f64 {
        self.t_index as f64 * self.dt
    }

    fn advance(&self, u: ScalarField) -> Self {
        Self { u, t_index: self.t_index + 1, dt: self.dt }
    }
}

/// Solver for `(I − aΔ_h) x = rhs` in the discrete Fourier basis.
#[derive(Clone)]
pub(crate) struct SemiImplicitSolver {
    fft: FftN,
    /// `−` eigenvalues of the stencil Laplacian, `(2/h²)Σ(1 − cos(2πkᵢ/N))`.
    mu: Vec<f64>,
}

impl SemiImplicitSolver {
    pub fn new(grid: GridSpec) -> Self {
        let fft = FftN::new(grid);
        let n = grid.res() as f64;
        let h = grid.spacing();
        let mu = fft
            .wavenumbers()
            .iter()
            .map(|k| k.iter().map(|&ki| 2.0 / (h * h) * (1.0 - (std::f64::consts::TAU * ki as f64 / n).cos())).sum())
            .collect();
        Self { fft, mu }
    }

    /// Written as `rhs + aΔ_h(I − aΔ_h)⁻¹ rhs` so that the zero mode (and
    /// with it every constant) passes through without rounding.
    pub fn solve(&self, rhs: &ScalarField, a: f64) -> ScalarField {
        let mut spec = self.fft.forward(&grid::laplacian(rhs));
        for (c, &m) in spec.iter_mut().zip(&self.mu) {
            *c *= a / (1.0 + a * m);
        }
        let update = self.fft.inverse(spec);
        rhs + &update
    }
}

/// A configured one-step map.
#[derive(Clone)]
pub struct Integrator {
    scheme: SchemeKind,
    epsilon: f64,
    with_correction: bool,
    solver: Option<SemiImplicitSolver>,
}

impl Integrator {
    pub fn new(scheme: SchemeKind, grid: GridSpec, epsilon: f64) -> Self {
        let solver = (scheme == SchemeKind::SemiImplicitSpectral).then(|| SemiImplicitSolver::new(grid));
        Self { scheme, epsilon, with_correction: true, solver }
    }

    /// Drops the Itô correction `½vᵀ(D²u)v`, leaving the Stratonovich drift
    /// `(1+ε)Δu − vᵀ(D²u)v` in the Itô-form schemes. This is the right drift
    /// when the noise is off, and a deliberate inconsistency otherwise. The
    /// Heun scheme has no correction and is unaffected.
    pub fn without_correction(mut self) -> Self {
        self.with_correction = false;
        self
    }

    pub fn scheme(&self) -> SchemeKind {
        self.scheme
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn step(&self, state: &PathState, dw: f64) -> PathState {
        let b = GeometryBundle::new(&state.u, self.epsilon);
        state.advance(self.step_with(&state.u, &b, state.dt, dw))
    }

    /// One step from `u`, reusing its precomputed geometry.
    pub(crate) fn step_with(&self, u: &ScalarField, b: &GeometryBundle, dt: f64, dw: f64) -> ScalarField {
        let eps = self.epsilon;
        match self.scheme {
            SchemeKind::ExplicitEM => {
                let drift = explicit_drift(b, eps, self.with_correction);
                let mut out = u.clone().into_values();
                for ((o, d), q) in out.iter_mut().zip(drift.values()).zip(b.q.values()) {
                    *o += dt * d + dw * q;
                }
                ScalarField::from_raw(*u.grid(), out)
            }
            SchemeKind::SemiImplicitSpectral => {
                let mut rhs = u.clone().into_values();
                let weight = if self.with_correction { -0.5 } else { -1.0 };
                let corr = correction_field(&b.hess, &b.v);
                for ((r, c), q) in rhs.iter_mut().zip(corr.values()).zip(b.q.values()) {
                    *r += weight * dt * c + dw * q;
                }
                let rhs = ScalarField::from_raw(*u.grid(), rhs);
                let solver = self.solver.as_ref().expect("semi-implicit integrator owns a solver");
                solver.solve(&rhs, dt * (1.0 + eps))
            }
            SchemeKind::StratonovichHeun => {
                let (a0, b0) = stratonovich_coefficients_from(b, eps);
                let pred = combine(u, dt, &a0, dw, &b0);
                let (a1, b1) = stratonovich_coefficients(&pred, eps);
                let g = *u.grid();
                let values = (0..g.len())
                    .map(|k| {
                        u.values()[k]
                            + dt * 0.5 * (a0.values()[k] + a1.values()[k])
                            + dw * 0.5 * (b0.values()[k] + b1.values()[k])
                    })
                    .collect();
                ScalarField::from_raw(g, values)
            }
        }
    }

    /// Integrates from `u0` through every increment, calling `observe` with
    /// the step index and the state after it (index 0 is the initial datum).
    /// Stops with an error at the first non-finite state.
    pub fn run(&self, u0: &ScalarField, increments: &[f64], dt: f64, mut observe: impl FnMut(usize, &ScalarField)) -> Result<ScalarField> {
        let mut u = u0.clone();
        observe(0, &u);
        for (k, &dw) in increments.iter().enumerate() {
            let b = GeometryBundle::new(&u, self.epsilon);
            u = self.step_with(&u, &b, dt, dw);
            if !u.is_finite() {
                return Err(Error::InvalidArgument(format!("non-finite state at step {}", k + 1)));
            }
            observe(k + 1, &u);
        }
        Ok(u)
    }
}

/// Itô drift of the explicit scheme; the Stratonovich drift
/// `(1+ε)Δu − vᵀ(D²u)v` without the correction.
pub(crate) fn explicit_drift(b: &GeometryBundle, epsilon: f64, with_correction: bool) -> ScalarField {
    if with_correction {
        b.drift.clone()
    } else {
        let corr = correction_field(&b.hess, &b.v);
        b.hess.trace().zip_map(&corr, |l, c| (1.0 + epsilon) * l - c)
    }
}

fn combine(u: &ScalarField, dt: f64, a: &ScalarField, dw: f64, b: &ScalarField) -> ScalarField {
    let values = u
        .values()
        .iter()
        .zip(a.values())
        .zip(b.values())
        .map(|((x, a), b)| x + dt * a + dw * b)
        .collect();
    ScalarField::from_raw(*u.grid(), values)
}

/// Stratonovich drift `εΔu + Q div v` (direct form) and diffusion `Q`.
pub fn stratonovich_coefficients(u: &ScalarField, epsilon: f64) -> (ScalarField, ScalarField) {
    stratonovich_coefficients_from(&GeometryBundle::new(u, epsilon), epsilon)
}

fn stratonovich_coefficients_from(b: &GeometryBundle, epsilon: f64) -> (ScalarField, ScalarField) {
    let lap = b.hess.trace();
    let mcf = b.q.zip_map(&b.divv, |q, d| q * d);
    let drift = lap.zip_map(&mcf, |l, m| epsilon * l + m);
    (drift, b.q.clone())
}

/// `u⁺ = u + dt·[(1+ε)Δu − ½vᵀ(D²u)v] + dW·Q(∇u)`.
pub fn step_explicit_em(state: &PathState, epsilon: f64, dw: f64) -> PathState {
    Integrator::new(SchemeKind::ExplicitEM, *state.u.grid(), epsilon).step(state, dw)
}

/// Solves `(I − dt(1+ε)Δ_h)u⁺ = u − ½dt·vᵀ(D²u)v + dW·Q(∇u)` spectrally.
pub fn step_semi_implicit(state: &PathState, epsilon: f64, dw: f64) -> PathState {
    Integrator::new(SchemeKind::SemiImplicitSpectral, *state.u.grid(), epsilon).step(state, dw)
}

/// Heun predictor–corrector on the Stratonovich form, without correction.
pub fn step_stratonovich_heun(state: &PathState, epsilon: f64, dw: f64) -> PathState {
    Integrator::new(SchemeKind::StratonovichHeun, *state.u.grid(), epsilon).step(state, dw)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub step: usize,
    pub time: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathResult {
    pub path_id: u64,
    pub trace: EnergyTrace,
    /// Last finite state (the state before blow-up for diverged paths).
    pub final_state: PathState,
    pub initial_grad_linf: f64,
    /// Largest `Linf(∇u)` over every time step.
    pub max_grad_linf: f64,
    pub diverged: Option<Divergence>,
}

/// Settings for [`simulate_with_noise`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunSpec {
    pub scheme: SchemeKind,
    pub epsilon: f64,
    pub stride: usize,
    /// Include the Itô correction; `false` for deterministic runs.
    pub with_correction: bool,
}

impl RunSpec {
    pub fn from_config(config: &SimConfig) -> Self {
        Self { scheme: config.scheme, epsilon: config.epsilon, stride: config.stride(), with_correction: config.noise }
    }
}

/// Per-step integrands that feed the cumulative columns.
#[derive(Clone, Copy, Default)]
struct Rates {
    hess_l2sq: f64,
    area_diss: f64,
    dirichlet_drift: f64,
}

fn rates(b: &GeometryBundle, epsilon: f64) -> Rates {
    Rates {
        hess_l2sq: norm2(b.hess.values()) * b.grid().cell_volume(),
        area_diss: area_geometric_from(b, epsilon),
        dirichlet_drift: drift_prediction_from(b, epsilon, EnergyFunctional::Dirichlet),
    }
}

fn grad_linf(b: &GeometryBundle) -> f64 {
    b.grad.values().chunks(b.grid().dim()).map(norm2).fold(0.0, f64::max).sqrt()
}

fn sample(u: &ScalarField, b: &GeometryBundle, t: f64, w: f64, level: f64, cum: &Rates) -> (TraceSample, AuxSample) {
    let g = u.grid();
    let d = g.dim();
    let vol = g.cell_volume();
    let grad = b.grad.values();
    let dirichlet = evaluate_grad(EnergyFunctional::Dirichlet, grad, d, vol);
    let mean = u.mean();
    let fluct = u.values().iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() * vol;
    let semi = fluct + dirichlet;
    let mean_dev = mean - w;
    let ts = TraceSample {
        t,
        w,
        dirichlet,
        area: evaluate_grad(EnergyFunctional::Area, grad, d, vol),
        maxexcess: evaluate_grad(EnergyFunctional::MaxExcess(level), grad, d, vol),
        hess_l2sq_cum: cum.hess_l2sq,
        grad_linf: grad_linf(b),
        h1_dev_from_w: (semi + mean_dev * mean_dev).sqrt(),
    };
    let aux = AuxSample {
        mean_dev,
        h1_semi_dev: semi.sqrt(),
        area_diss_cum: cum.area_diss,
        dirichlet_drift_cum: cum.dirichlet_drift,
    };
    (ts, aux)
}

/// Runs one path from `u0` with a given noise path, recording the trace at
/// every `stride` steps and at the final step.
pub fn simulate_with_noise(u0: ScalarField, noise: &NoisePath, spec: &RunSpec, path_id: u64) -> Result<PathResult> {
    let mut integrator = Integrator::new(spec.scheme, *u0.grid(), spec.epsilon);
    if !spec.with_correction {
        integrator = integrator.without_correction();
    }
    record_path(u0, noise, spec.epsilon, spec.stride, path_id, |u, b, dt, dw| integrator.step_with(u, b, dt, dw))
}

/// Drives `step` through every increment of `noise` and records the trace.
pub(crate) fn record_path(
    u0: ScalarField,
    noise: &NoisePath,
    epsilon: f64,
    stride: usize,
    path_id: u64,
    mut step: impl FnMut(&ScalarField, &GeometryBundle, f64, f64) -> ScalarField,
) -> Result<PathResult> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be ≥ 1".into()));
    }
    let dt = noise.dt();
    let wiener = noise.wiener();
    let steps = noise.steps();

    let mut u = u0;
    let mut b = GeometryBundle::new(&u, epsilon);
    let l0 = grad_linf(&b);
    let level = (1.0 + l0 * l0).sqrt();
    let mut cum = Rates::default();
    let mut rate = rates(&b, epsilon);
    let mut trace = EnergyTrace { path_id, excess_level: level, samples: Vec::new(), aux: Vec::new() };
    let (s, a) = sample(&u, &b, 0.0, 0.0, level, &cum);
    trace.samples.push(s);
    trace.aux.push(a);
    let mut max_grad = l0;
    let mut diverged = None;
    let mut t_index = 0;

    for k in 1..=steps {
        let next = step(&u, &b, dt, noise.increments()[k - 1]);
        if !next.is_finite() {
            diverged = Some(Divergence { step: k, time: k as f64 * dt });
            break;
        }
        let nb = GeometryBundle::new(&next, epsilon);
        let nrate = rates(&nb, epsilon);
        if ![nrate.hess_l2sq, nrate.area_diss, nrate.dirichlet_drift].iter().all(|x| x.is_finite()) {
            diverged = Some(Divergence { step: k, time: k as f64 * dt });
            break;
        }
        cum.hess_l2sq += 0.5 * dt * (rate.hess_l2sq + nrate.hess_l2sq);
        cum.area_diss += 0.5 * dt * (rate.area_diss + nrate.area_diss);
        cum.dirichlet_drift += 0.5 * dt * (rate.dirichlet_drift + nrate.dirichlet_drift);
        u = next;
        b = nb;
        rate = nrate;
        t_index = k;
        max_grad = max_grad.max(grad_linf(&b));
        if k % stride == 0 || k == steps {
            let (s, a) = sample(&u, &b, k as f64 * dt, wiener[k], level, &cum);
            trace.samples.push(s);
            trace.aux.push(a);
        }
    }

    Ok(PathResult {
        path_id,
        trace,
        final_state: PathState { u, t_index, dt },
        initial_grad_linf: l0,
        max_grad_linf: max_grad,
        diverged,
    })
}

/// The noise path a configuration assigns to `path_id`.
pub fn config_noise(config: &SimConfig, path_id: u64) -> Result<NoisePath> {
    let steps = config.steps()?;
    if !config.noise || steps == 0 {
        return Ok(NoisePath::zero(steps, config.dt));
    }
    NoisePath::sample(config.base_seed, path_id, steps, config.dt, config.max_refine_level)
}

/// The configured scheme at viscosity `epsilon`, without the Itô correction
/// when the noise is switched off.
pub fn config_integrator(config: &SimConfig, epsilon: f64) -> Result<Integrator> {
    let it = Integrator::new(config.scheme, config.grid()?, epsilon);
    Ok(if config.noise { it } else { it.without_correction() })
}

/// Runs the configured scheme from the configured initial datum.
pub fn simulate_path(config: &SimConfig, path_id: u64) -> Result<PathResult> {
    let u0 = config.initial.build(config.grid()?, config.base_seed, path_id)?;
    let noise = config_noise(config, path_id)?;
    simulate_with_noise(u0, &noise, &RunSpec::from_config(config), path_id)
}
