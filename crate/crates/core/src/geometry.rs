//! Pointwise geometry of the graph `x ↦ (x, u(x))`: area element
//! `Q = √(1+|∇u|²)`, horizontal normal projection `v = ∇u/Q`, the mean
//! curvature term and the Itô drift.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::{self, norm2, GridSpec, ScalarField, TensorField, VectorField};

/// Pointwise `√(1+|p|²)`.
pub fn area_element(grad: &VectorField) -> ScalarField {
    let g = *grad.grid();
    let values = (0..g.len()).map(|k| (1.0 + norm2(grad.at(k))).sqrt()).collect();
    ScalarField::from_raw(g, values)
}

/// Pointwise `p/√(1+|p|²)`.
pub fn normal_projection(grad: &VectorField) -> VectorField {
    let g = *grad.grid();
    let mut out = Vec::with_capacity(grad.values().len());
    for k in 0..g.len() {
        let p = grad.at(k);
        let q = (1.0 + norm2(p)).sqrt();
        out.extend(p.iter().map(|x| x / q));
    }
    VectorField::from_raw(g, out)
}

/// `H v` for a row-major symmetric matrix.
#[inline]
pub(crate) fn mat_vec(h: &[f64], v: &[f64], out: &mut [f64]) {
    let d = v.len();
    for i in 0..d {
        out[i] = (0..d).map(|j| h[i * d + j] * v[j]).sum();
    }
}

/// `vᵀ H v`.
#[inline]
pub(crate) fn quad_form(h: &[f64], v: &[f64]) -> f64 {
    let d = v.len();
    let mut s = 0.0;
    for i in 0..d {
        for j in 0..d {
            s += v[i] * h[i * d + j] * v[j];
        }
    }
    s
}

/// The Hessian contractions that recur in every energy identity.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Contractions {
    /// `|D²u|²`
    pub hess_sq: f64,
    /// `|D²u v|²`
    pub hess_v_sq: f64,
    /// `vᵀ D²u v`
    pub v_hess_v: f64,
}

impl Contractions {
    #[inline]
    pub fn at(h: &[f64], v: &[f64]) -> Self {
        let d = v.len();
        let mut hv = [0.0; grid::MAX_DIM];
        let hv = &mut hv[..d];
        mat_vec(h, v, hv);
        Self {
            hess_sq: norm2(h),
            hess_v_sq: norm2(hv),
            v_hess_v: hv.iter().zip(v).map(|(a, b)| a * b).sum(),
        }
    }

    /// `|D²u|² − 2|D²u v|² + |vᵀD²u v|²`, which equals `Q² Dv : Dvᵀ`.
    pub fn tangential(&self) -> f64 {
        self.hess_sq - 2.0 * self.hess_v_sq + self.v_hess_v * self.v_hess_v
    }
}

/// All derived fields of one snapshot `u`.
#[derive(Clone, Debug)]
pub struct GeometryBundle {
    pub grad: VectorField,
    pub hess: TensorField,
    pub q: ScalarField,
    pub v: VectorField,
    pub divv: ScalarField,
    pub drift: ScalarField,
}

impl GeometryBundle {
    pub fn new(u: &ScalarField, epsilon: f64) -> Self {
        let grad = grid::gradient(u);
        let hess = grid::hessian(u);
        let q = area_element(&grad);
        let v = normal_projection(&grad);
        let divv = grid::divergence(&v);
        let drift = drift_from(&hess, &v, epsilon);
        Self { grad, hess, q, v, divv, drift }
    }

    pub fn grid(&self) -> &GridSpec {
        self.q.grid()
    }

    pub fn contractions(&self, node: usize) -> Contractions {
        Contractions::at(self.hess.at(node), self.v.at(node))
    }
}

pub(crate) fn correction_field(hess: &TensorField, v: &VectorField) -> ScalarField {
    let g = *v.grid();
    let values = (0..g.len()).map(|k| quad_form(hess.at(k), v.at(k))).collect();
    ScalarField::from_raw(g, values)
}

fn drift_from(hess: &TensorField, v: &VectorField, epsilon: f64) -> ScalarField {
    let lap = hess.trace();
    let corr = correction_field(hess, v);
    lap.zip_map(&corr, |l, c| (1.0 + epsilon) * l - 0.5 * c)
}

/// Itô drift `(1+ε)Δu − ½ vᵀ(D²u)v` with exact pointwise `v` and the
/// discrete Laplacian and Hessian.
pub fn ito_drift(u: &ScalarField, epsilon: f64) -> ScalarField {
    let hess = grid::hessian(u);
    let v = normal_projection(&grid::gradient(u));
    drift_from(&hess, &v, epsilon)
}

/// `Q div v` two ways: directly from the discrete divergence of `v`, and via
/// the identity `Δu − vᵀ(D²u)v`.
pub fn mean_curvature_term(u: &ScalarField) -> (ScalarField, ScalarField) {
    let grad = grid::gradient(u);
    let v = normal_projection(&grad);
    let q = area_element(&grad);
    let direct = q.zip_map(&grid::divergence(&v), |a, b| a * b);
    let hess = grid::hessian(u);
    let via = hess.trace().zip_map(&correction_field(&hess, &v), |l, c| l - c);
    (direct, via)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IdentityResiduals {
    pub mcf_identity: f64,
    pub second_fundamental_form: f64,
}

/// Linf residuals of `Q div v = Δu − vᵀD²u v` and of
/// `|D²u|² − 2|D²u v|² + |vᵀD²u v|² = Q² Dv : Dvᵀ` on the grid.
pub fn identity_residuals(u: &ScalarField) -> IdentityResiduals {
    let (direct, via) = mean_curvature_term(u);
    let mcf_identity = (&direct - &via).linf();

    let g = *u.grid();
    let d = g.dim();
    let grad = grid::gradient(u);
    let v = normal_projection(&grad);
    let hess = grid::hessian(u);
    let dv = grid::jacobian(&v);
    let mut sff: f64 = 0.0;
    for k in 0..g.len() {
        let c = Contractions::at(hess.at(k), v.at(k));
        let q2 = 1.0 + norm2(grad.at(k));
        let j = dv.at(k);
        let dd: f64 = (0..d).flat_map(|a| (0..d).map(move |b| (a, b))).map(|(a, b)| j[a * d + b] * j[b * d + a]).sum();
        sff = sff.max((c.tangential() - q2 * dd).abs());
    }
    IdentityResiduals { mcf_identity, second_fundamental_form: sff }
}

/// `AB : CA` for symmetric `A` and positive semidefinite `B`, `C`.
pub fn symmetric_product_check(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<f64> {
    let n = a.nrows();
    for m in [a, b, c] {
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::InvalidArgument("matrices must be square of equal size".into()));
        }
        let asym = (m - m.transpose()).abs().max();
        if asym > 1e-12 * m.abs().max().max(f64::MIN_POSITIVE) {
            return Err(Error::NotSymmetric(asym));
        }
    }
    for m in [b, c] {
        let scale = m.norm();
        let lo = m.clone().symmetric_eigenvalues().min();
        if lo < -1e-10 * scale {
            return Err(Error::NotPositiveSemidefinite(lo));
        }
    }
    Ok((a * b).component_mul(&(c * a)).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GridSpec, NormKind, Normed};
    use std::f64::consts::PI;

    fn grid1(res: usize) -> GridSpec {
        GridSpec::new(1, res).unwrap()
    }

    fn vec_field(grid: GridSpec, p: &[f64]) -> VectorField {
        VectorField::new(grid, p.repeat(grid.len())).unwrap()
    }

    #[test]
    fn area_element_examples() {
        let g1 = grid1(8);
        assert!(area_element(&vec_field(g1, &[0.0])).values().iter().all(|&q| q == 1.0));
        assert!((area_element(&vec_field(g1, &[1.0])).values()[0] - std::f64::consts::SQRT_2).abs() < 1e-10);
        let g2 = GridSpec::new(2, 8).unwrap();
        assert!((area_element(&vec_field(g2, &[3.0, 4.0])).values()[3] - 5.0990195136).abs() < 1e-10);
    }

    #[test]
    fn normal_projection_examples() {
        let g1 = grid1(8);
        assert_eq!(normal_projection(&vec_field(g1, &[0.0])).at(0), &[0.0]);
        assert!((normal_projection(&vec_field(g1, &[1.0])).at(0)[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-10);
        assert!((normal_projection(&vec_field(g1, &[100.0])).at(0)[0] - 0.99995).abs() < 1e-6);
        let mut last = 0.0;
        for i in 1..2000 {
            let p = i as f64 * 0.05;
            let v = normal_projection(&vec_field(g1, &[p])).at(0)[0];
            assert!(v > last && v < 1.0);
            last = v;
        }
    }

    #[test]
    fn bundle_invariants() {
        let g = GridSpec::new(2, 16).unwrap();
        let u = ScalarField::from_fn(g, |x| 0.7 * (2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).cos() + 0.2 * (4.0 * PI * x[1]).sin());
        let b = GeometryBundle::new(&u, 0.3);
        let l = b.grad.norm(NormKind::Linf).unwrap();
        for k in 0..g.len() {
            let p = b.grad.at(k);
            let q = b.q.values()[k];
            assert!(q >= 1.0);
            assert!(((q * q) - (1.0 + norm2(p))).abs() <= 1e-12 * q * q);
            for (vi, pi) in b.v.at(k).iter().zip(p) {
                assert!((vi * q - pi).abs() <= 1e-12 * pi.abs().max(1.0));
            }
            let vn = norm2(b.v.at(k)).sqrt();
            assert!(vn < 1.0);
            assert!(vn <= l / (1.0 + l * l).sqrt() * (1.0 + 1e-14));
            assert!((vn - norm2(p).sqrt() / q).abs() <= 1e-12 * vn.max(1e-300));
            let c = b.contractions(k);
            let tol = 1e-10 * c.hess_sq.max(1e-300);
            assert!(1.5 * c.hess_sq - c.hess_v_sq - 0.5 * c.v_hess_v.powi(2) >= -tol);
            assert!(c.tangential() >= -tol);
        }
    }

    #[test]
    fn decay_coefficient_identity() {
        for l in [0.0, 1.0, PI] {
            let s2 = l * l / (1.0 + l * l);
            let lhs = (3.0 + 4.0 * l * l) / (1.0 + l * l).powi(2);
            let rhs = 3.0 - 2.0 * s2 - s2 * s2;
            assert!((lhs - rhs).abs() < 1e-14);
        }
    }

    #[test]
    fn ito_drift_examples() {
        let g = grid1(128);
        let c = ScalarField::constant(g, 2.5);
        assert!(ito_drift(&c, 0.7).values().iter().all(|&d| d == 0.0));
        let u = ScalarField::from_fn(g, |x| (2.0 * PI * x[0]).sin());
        let d = ito_drift(&u, 0.0);
        let h = g.spacing();
        let quarter = g.flat_index(&[32]);
        let bound = 4.0 * PI * PI * (2.0 * PI * h).powi(2) / 12.0 * 2.0;
        assert!((d.values()[quarter] + 4.0 * PI * PI).abs() <= bound);
        // continuum drift at x=0 is u''(0)(1 − ½ v²) = 0
        assert!(d.values()[0].abs() <= 1e-9);
    }

    #[test]
    fn mean_curvature_term_examples() {
        let g = grid1(128);
        let c = ScalarField::constant(g, -1.0);
        let (a, b) = mean_curvature_term(&c);
        assert_eq!(a.linf(), 0.0);
        assert_eq!(b.linf(), 0.0);

        let u = ScalarField::from_fn(g, |x| (2.0 * PI * x[0]).sin());
        let (direct, via) = mean_curvature_term(&u);
        let quarter = g.flat_index(&[32]);
        let h = g.spacing();
        // u''/(1+u'²) at x = 1/4 is −4π²; discrete oracles at that node
        let uf = |x: f64| (2.0 * PI * x).sin();
        let p = |x: f64| (uf(x + h) - uf(x - h)) / (2.0 * h);
        let vf = |x: f64| p(x) / (1.0 + p(x) * p(x)).sqrt();
        let direct_oracle = (vf(0.25 + h) - vf(0.25 - h)) / (2.0 * h);
        let via_oracle = (uf(0.25 + h) - 2.0 * uf(0.25) + uf(0.25 - h)) / (h * h);
        assert!((direct.values()[quarter] - direct_oracle).abs() <= 1e-9);
        assert!((via.values()[quarter] - via_oracle).abs() <= 1e-9);
        let theta = 2.0 * PI * h;
        assert!((via_oracle + 4.0 * PI * PI).abs() <= 4.0 * PI * PI * theta * theta / 12.0 * 1.01);
        assert!((direct_oracle + 4.0 * PI * PI).abs() <= 4.0 * PI * PI * theta * theta * (1.0 / 3.0 + 2.0 * PI * PI));

        let f = |x: &[f64]| 0.3 * (2.0 * PI * x[0]).sin() + 0.1 * (4.0 * PI * x[0]).cos();
        let r = |res| {
            let (d, v) = mean_curvature_term(&ScalarField::from_fn(grid1(res), f));
            (&d - &v).linf()
        };
        let ratio = r(128) / r(256);
        assert!((3.5..=4.5).contains(&ratio), "{ratio}");
    }

    #[test]
    fn identity_residuals_converge_second_order() {
        let c = identity_residuals(&ScalarField::constant(grid1(64), 4.0));
        assert_eq!((c.mcf_identity, c.second_fundamental_form), (0.0, 0.0));

        let f = |x: &[f64]| 0.5 * (2.0 * PI * x[0]).sin();
        let a = identity_residuals(&ScalarField::from_fn(grid1(128), f));
        let b = identity_residuals(&ScalarField::from_fn(grid1(256), f));
        let r1 = a.mcf_identity / b.mcf_identity;
        let r2 = a.second_fundamental_form / b.second_fundamental_form;
        assert!((3.5..=4.5).contains(&r1), "{r1}");
        assert!((3.5..=4.5).contains(&r2), "{r2}");
    }

    #[test]
    fn symmetric_product_examples() {
        let i2 = DMatrix::<f64>::identity(2, 2);
        assert!((symmetric_product_check(&i2, &i2, &i2).unwrap() - 2.0).abs() < 1e-15);
        let a = DMatrix::from_row_slice(2, 2, &[1.0, -3.0, -3.0, 2.0]);
        let z = DMatrix::<f64>::zeros(2, 2);
        assert_eq!(symmetric_product_check(&a, &z, &i2).unwrap(), 0.0);
        let ns = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(symmetric_product_check(&ns, &i2, &i2), Err(Error::NotSymmetric(_))));
        let neg = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(symmetric_product_check(&i2, &neg, &i2), Err(Error::NotPositiveSemidefinite(_))));
    }
}
