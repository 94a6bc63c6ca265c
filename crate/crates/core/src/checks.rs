//! Deterministic verification sweeps that do not need an ensemble, plus the
//! Galerkin comparison. Each returns its verdicts and a table for reports.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::config::{InitialDatum, SimConfig};
use crate::energies::{dissipation_terms, ito_drift_prediction, EnergyFunctional};
use crate::ensemble::{mean_var_se, Verdict};
use crate::error::Result;
use crate::galerkin::{coercivity_gap, galerkin_simulate, growth_bound_check, SpectralBasis, VariationalState};
use crate::geometry::{identity_residuals, symmetric_product_check};
use crate::grid::{GridSpec, NormKind, Normed, ScalarField};
use crate::noise::keyed_rng;
use crate::stepper::{config_noise, simulate_with_noise, RunSpec, SchemeKind};

/// Key domain for random test fields and matrices.
const CHECK_DOMAIN: u64 = 0x6368_6563_6b73_0000;

/// Random trigonometric polynomial with frequencies `|kᵢ| ≤ 4` and
/// `Linf(∇u) = L` drawn uniformly from `(0, 2]`.
pub fn random_trig_field(grid: GridSpec, seed: u64, index: u64) -> Result<ScalarField> {
    let mut rng = keyed_rng(seed, CHECK_DOMAIN, index);
    let l = 2.0 * (1.0 - rng.random::<f64>());
    InitialDatum::RandomLipschitz { lipschitz: l, modes: 4 }.build(grid, seed, index)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub res: usize,
    pub mcf_identity: f64,
    pub second_fundamental_form: f64,
}

/// Identity residuals of `u` at `res` and `2·res`; each must shrink by a
/// factor in `[3.5, 4.5]`.
pub fn identity_convergence(dim: usize, res: usize, u: impl Fn(&[f64]) -> f64) -> Result<(Vec<ResidualRow>, Vec<Verdict>)> {
    let mut rows = Vec::new();
    for r in [res, 2 * res] {
        let g = GridSpec::new(dim, r)?;
        let ir = identity_residuals(&ScalarField::from_fn(g, &u));
        rows.push(ResidualRow { res: r, mcf_identity: ir.mcf_identity, second_fundamental_form: ir.second_fundamental_form });
    }
    let ratio = |a: f64, b: f64| if b == 0.0 { if a == 0.0 { 4.0 } else { f64::INFINITY } } else { a / b };
    let verdicts = [
        ("mcf_identity_order", ratio(rows[0].mcf_identity, rows[1].mcf_identity)),
        ("second_fundamental_form_order", ratio(rows[0].second_fundamental_form, rows[1].second_fundamental_form)),
    ]
    .into_iter()
    .map(|(name, q)| Verdict::new(name, (q - 4.0).abs(), 0.5, format!("residual ratio {q:.4} from N={res} to N={}", 2 * res)))
    .collect();
    Ok((rows, verdicts))
}

/// Predicted drift against minus the summed dissipation terms for every
/// functional on `count` random fields; relative mismatch at most 1e−9.
pub fn drift_identity_check(grid: GridSpec, seed: u64, count: u64, epsilon: f64) -> Result<Verdict> {
    let funcs = [
        EnergyFunctional::Dirichlet,
        EnergyFunctional::Area,
        EnergyFunctional::GSquare,
        EnergyFunctional::MaxExcess(1.2),
    ];
    let mut worst: f64 = 0.0;
    for i in 0..count {
        let u = random_trig_field(grid, seed, i)?;
        for f in funcs {
            let drift = ito_drift_prediction(&u, epsilon, f)?;
            let total = dissipation_terms(&u, epsilon, f)?.total();
            let scale = drift.abs().max(total.abs());
            if scale > 0.0 {
                worst = worst.max((drift + total).abs() / scale);
            }
        }
    }
    Ok(Verdict::new("drift_identity", worst, 1e-9, format!("{count} random fields, largest relative mismatch {worst:.3e}")))
}

fn random_symmetric(rng: &mut ChaCha12Rng, n: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    (&m + m.transpose()) * 0.5
}

fn random_psd(rng: &mut ChaCha12Rng, n: usize) -> DMatrix<f64> {
    // rank-deficient draws exercise the boundary of the cone
    let r = rng.random_range(1..=n);
    let x = DMatrix::from_fn(n, r, |_, _| rng.random_range(-1.0..1.0));
    &x * x.transpose()
}

/// `AB : CA ≥ −1e−10·‖A‖²‖B‖‖C‖` over `draws` random triples per size.
pub fn matrix_positivity_check(seed: u64, draws: usize, sizes: &[usize]) -> Result<Verdict> {
    let mut rng = keyed_rng(seed, CHECK_DOMAIN, u64::MAX);
    let mut worst = f64::NEG_INFINITY;
    let mut total = 0;
    for &n in sizes {
        for _ in 0..draws {
            let a = random_symmetric(&mut rng, n);
            let b = random_psd(&mut rng, n);
            let c = random_psd(&mut rng, n);
            let scale = a.norm().powi(2) * b.norm() * c.norm();
            let v = symmetric_product_check(&a, &b, &c)?;
            if scale > 0.0 {
                worst = worst.max(-v / scale);
            }
            total += 1;
        }
    }
    Ok(Verdict::new("matrix_positivity", worst, 1e-10, format!("{total} draws, largest relative negative part {worst:.3e}")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoercivityRow {
    pub res: usize,
    pub epsilon: f64,
    pub max_gap: f64,
    pub max_excess_over_tol: f64,
    pub mean_tol: f64,
}

/// Coercivity gaps and growth ratios of `count` random fields at `res` and
/// `2·res` for every viscosity.
pub fn coercivity_sweep(dim: usize, res: usize, seed: u64, count: u64, epsilons: &[f64]) -> Result<(Vec<CoercivityRow>, Vec<Verdict>)> {
    let mut rows = Vec::new();
    let mut growth_worst: f64 = 0.0;
    for r in [res, 2 * res] {
        let g = GridSpec::new(dim, r)?;
        let fields: Vec<ScalarField> = (0..count).map(|i| random_trig_field(g, seed, i)).collect::<Result<_>>()?;
        for &e in epsilons {
            let mut max_gap = f64::NEG_INFINITY;
            let mut excess = f64::NEG_INFINITY;
            let mut tols = Vec::with_capacity(fields.len());
            for u in &fields {
                let s = VariationalState::new(u.clone(), e)?;
                let c = coercivity_gap(&s);
                max_gap = max_gap.max(c.gap);
                excess = excess.max(c.gap - c.tol);
                tols.push(c.tol);
                let gb = growth_bound_check(&s);
                growth_worst = growth_worst.max(gb.drift_ratio.max(gb.noise_ratio) / gb.bound);
            }
            rows.push(CoercivityRow { res: r, epsilon: e, max_gap, max_excess_over_tol: excess, mean_tol: mean_var_se(&tols).0 });
        }
    }
    let excess = rows.iter().map(|r| r.max_excess_over_tol).fold(f64::NEG_INFINITY, f64::max);
    let k = epsilons.len();
    let shrink = rows[0].mean_tol / rows[k].mean_tol;
    let verdicts = vec![
        Verdict::new("coercivity_gap", excess, 0.0, format!("{} fields × {k} viscosities at N={res},{}; largest gap − tol_G", count, 2 * res)),
        Verdict::new("coercivity_tol_order", (shrink - 4.0).abs(), 0.5, format!("tol_G shrinks by {shrink:.4} from N={res} to N={}", 2 * res)),
        Verdict::new("growth_bound", growth_worst, 1.0, "largest growth ratio over its bound 2(1+ε)²+1"),
    ];
    Ok((rows, verdicts))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationRow {
    pub modes: usize,
    pub mean_distance: f64,
    pub se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GalerkinComparison {
    /// Largest Linf distance between the full Galerkin path and the nodal
    /// explicit path at the final time.
    pub full_distance: f64,
    pub truncation: Vec<TruncationRow>,
}

/// Full Galerkin against nodal explicit stepping on shared noise, and the
/// final-time `L²` distance of truncations with `|k| ≤ 1, 4, 8` to the full
/// run, averaged over the ensemble.
pub fn galerkin_comparison(config: &SimConfig) -> Result<(GalerkinComparison, Vec<Verdict>)> {
    let grid = config.grid()?;
    let basis = SpectralBasis::new(grid);
    let all = basis.len();
    let counts: Vec<usize> = [1, 4, 8].iter().map(|&k| basis.count_within(k)).filter(|&c| c < all).collect();
    let spec = RunSpec { scheme: SchemeKind::ExplicitEM, epsilon: config.epsilon, stride: config.stride(), with_correction: config.noise };
    let mut full_distance: f64 = 0.0;
    let mut dists = vec![Vec::new(); counts.len()];
    for id in 0..config.ensemble_size as u64 {
        let full = galerkin_simulate(config, all, id)?;
        let u0 = config.initial.build(grid, config.base_seed, id)?;
        let nodal = simulate_with_noise(u0, &config_noise(config, id)?, &spec, id)?;
        full_distance = full_distance.max((&full.final_state.u - &nodal.final_state.u).linf());
        for (d, &c) in dists.iter_mut().zip(&counts) {
            let trunc = galerkin_simulate(config, c, id)?;
            d.push((&trunc.final_state.u - &full.final_state.u).norm(NormKind::L2)?);
        }
    }
    let truncation: Vec<TruncationRow> = counts
        .iter()
        .zip(&dists)
        .map(|(&modes, d)| {
            let (mean_distance, _, se) = mean_var_se(d);
            TruncationRow { modes, mean_distance, se }
        })
        .collect();
    let increase = truncation.windows(2).map(|w| w[1].mean_distance - w[0].mean_distance).fold(f64::NEG_INFINITY, f64::max);
    let verdicts = vec![
        Verdict::new("galerkin_full_matches_nodal", full_distance, 1e-8, format!("{all} modes, largest final-time Linf distance")),
        Verdict::new(
            "galerkin_truncation_monotone",
            if truncation.len() < 2 { 0.0 } else { increase },
            0.0,
            truncation.iter().map(|r| format!("K={}:{:.3e}", r.modes, r.mean_distance)).collect::<Vec<_>>().join(" "),
        ),
    ];
    Ok((GalerkinComparison { full_distance, truncation }, verdicts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn random_fields_are_reproducible_and_bounded() {
        let g = GridSpec::new(1, 64).unwrap();
        let a = random_trig_field(g, 3, 5).unwrap();
        assert_eq!(a, random_trig_field(g, 3, 5).unwrap());
        assert_ne!(a, random_trig_field(g, 3, 6).unwrap());
        let l = crate::grid::gradient(&a).norm(NormKind::Linf).unwrap();
        assert!(l > 0.0 && l <= 2.0 + 1e-12);
    }

    #[test]
    fn identity_order_verdicts() {
        let (rows, v) = identity_convergence(1, 128, |x| 0.3 * (2.0 * PI * x[0]).sin() + 0.1 * (4.0 * PI * x[0]).cos()).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(v.iter().all(|v| v.pass), "{v:?}");
    }

    #[test]
    fn small_positivity_and_drift_sweeps_pass() {
        assert!(matrix_positivity_check(1, 50, &[2, 3]).unwrap().pass);
        assert!(drift_identity_check(GridSpec::new(1, 64).unwrap(), 1, 5, 0.5).unwrap().pass);
    }
}
