//! Simulation configuration: strict JSON parsing, defaults and validation.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{self, GridSpec, Normed, NormKind, ScalarField};
use crate::noise::keyed_rng;
use crate::stepper::{explicit_stability_bound, SchemeKind};

/// Key domain for random initial data, disjoint from the noise stream.
const INITIAL_DOMAIN: u64 = 0x696e_6974_5f64_6174;

/// Largest number of recorded samples per trace when `sampleStride` is left
/// to its default.
pub const MAX_DEFAULT_SAMPLES: usize = 2048;

pub const DEFAULT_DT: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierTerm {
    /// Integer wave vector, one entry per axis.
    pub k: Vec<i64>,
    /// Coefficient of `sin(2πk·x)`.
    #[serde(default)]
    pub a: f64,
    /// Coefficient of `cos(2πk·x)`.
    #[serde(default)]
    pub b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", deny_unknown_fields)]
pub enum InitialDatum {
    /// `offset + Σⱼ sin[j]·sin(2π(j+1)x₀) + Σⱼ cos[j]·cos(2π(j+1)x₀) + Σ terms`.
    #[serde(rename = "fourier")]
    Fourier {
        #[serde(default)]
        offset: f64,
        #[serde(default)]
        sin: Vec<f64>,
        #[serde(default)]
        cos: Vec<f64>,
        #[serde(default)]
        terms: Vec<FourierTerm>,
    },
    /// Random trigonometric polynomial with wave numbers `|kᵢ| ≤ modes`,
    /// rescaled so that the discrete `Linf(∇u₀)` equals `L`. Drawn per path.
    #[serde(rename = "randomLipschitz")]
    RandomLipschitz {
        #[serde(rename = "L")]
        lipschitz: f64,
        #[serde(default = "default_modes")]
        modes: u32,
    },
}

fn default_modes() -> u32 {
    3
}

impl InitialDatum {
    /// Pointwise value of a Fourier datum; `None` for random families.
    pub fn value_at(&self, x: &[f64]) -> Option<f64> {
        let InitialDatum::Fourier { offset, sin, cos, terms } = self else {
            return None;
        };
        let mut s = *offset;
        for (j, a) in sin.iter().enumerate() {
            s += a * (2.0 * PI * (j + 1) as f64 * x[0]).sin();
        }
        for (j, b) in cos.iter().enumerate() {
            s += b * (2.0 * PI * (j + 1) as f64 * x[0]).cos();
        }
        for t in terms {
            let phase = 2.0 * PI * t.k.iter().zip(x).map(|(&k, &xi)| k as f64 * xi).sum::<f64>();
            s += t.a * phase.sin() + t.b * phase.cos();
        }
        Some(s)
    }

    /// Initial field for one path. Deterministic families ignore the seed.
    pub fn build(&self, grid: GridSpec, base_seed: u64, path_id: u64) -> Result<ScalarField> {
        match self {
            InitialDatum::Fourier { terms, .. } => {
                for t in terms {
                    if t.k.len() != grid.dim() {
                        return Err(Error::Config(format!("wave vector {:?} does not match dim {}", t.k, grid.dim())));
                    }
                }
                Ok(ScalarField::from_fn(grid, |x| self.value_at(x).expect("fourier datum")))
            }
            InitialDatum::RandomLipschitz { lipschitz, modes } => {
                let mut rng = keyed_rng(base_seed, INITIAL_DOMAIN, path_id);
                let m = *modes as i64;
                let d = grid.dim();
                let raw: Vec<(Vec<f64>, f64, f64)> = (0..6)
                    .map(|_| {
                        let mut k: Vec<f64> = (0..d).map(|_| rng.random_range(-m..=m) as f64).collect();
                        if k.iter().all(|&x| x == 0.0) {
                            k[0] = 1.0;
                        }
                        (k, rng.random_range(-1.0..1.0), rng.random_range(0.0..1.0))
                    })
                    .collect();
                let u = ScalarField::from_fn(grid, |x| {
                    raw.iter()
                        .map(|(k, a, ph)| a * (2.0 * PI * (k.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + ph)).sin())
                        .sum()
                });
                let l = grid::gradient(&u).norm(NormKind::Linf)?;
                if !(l > 0.0) {
                    return Err(Error::Config("random initial datum has zero gradient".into()));
                }
                Ok(u.map(|v| v * lipschitz / l))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Relative slack of the pathwise gradient bound.
    #[serde(rename = "tolMP", default = "default_tol_mp")]
    pub tol_mp: f64,
    /// Discretization-bias allowance as a fraction of `Ê[F(0)]`.
    #[serde(rename = "tolBias", default = "default_tol_bias")]
    pub tol_bias: f64,
    /// Admissible ratio in the structural moment bound.
    #[serde(rename = "K_moment", default = "default_k_moment")]
    pub k_moment: f64,
}

fn default_tol_mp() -> f64 {
    0.02
}
fn default_tol_bias() -> f64 {
    0.01
}
fn default_k_moment() -> f64 {
    10.0
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { tol_mp: default_tol_mp(), tol_bias: default_tol_bias(), k_moment: default_k_moment() }
    }
}

fn default_dt() -> f64 {
    DEFAULT_DT
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "camelCase")]
pub struct SimConfig {
    pub dim: usize,
    pub res: usize,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(default)]
    pub scheme: SchemeKind,
    #[serde(default)]
    pub sample_stride: Option<usize>,
    pub initial: InitialDatum,
    #[serde(rename = "M")]
    pub ensemble_size: usize,
    pub base_seed: u64,
    #[serde(default)]
    pub max_refine_level: u32,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub worker_count: Option<usize>,
    /// `false` switches the Wiener process off (deterministic flow).
    #[serde(default = "default_true")]
    pub noise: bool,
}

impl SimConfig {
    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.dim, self.res)
    }

    /// Number of time steps, `T/dt`, which must be an integer.
    pub fn steps(&self) -> Result<usize> {
        let ratio = self.horizon / self.dt;
        let steps = ratio.round();
        if (ratio - steps).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::Config(format!("T = {} is not an integer multiple of dt = {}", self.horizon, self.dt)));
        }
        Ok(steps as usize)
    }

    pub fn stride(&self) -> usize {
        self.sample_stride.unwrap_or_else(|| {
            let steps = self.steps().unwrap_or(0);
            steps.div_ceil(MAX_DEFAULT_SAMPLES - 2).max(1)
        })
    }

    pub fn workers(&self) -> usize {
        self.worker_count
            .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
            .max(1)
    }

    /// Checks every invariant and fills defaults. With `force`, the explicit
    /// stability bound is not enforced.
    pub fn validate(mut self, force: bool) -> Result<Self> {
        let grid = self.grid()?;
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be ≥ 0 (got {})", self.epsilon)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be > 0 (got {})", self.dt)));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config(format!("T must be ≥ 0 (got {})", self.horizon)));
        }
        self.steps()?;
        if self.ensemble_size == 0 {
            return Err(Error::Config("M must be ≥ 1".into()));
        }
        if self.sample_stride == Some(0) {
            return Err(Error::Config("sampleStride must be ≥ 1".into()));
        }
        if let Some(0) = self.worker_count {
            return Err(Error::Config("workerCount must be ≥ 1".into()));
        }
        if self.max_refine_level > 20 {
            return Err(Error::Config("maxRefineLevel must be ≤ 20".into()));
        }
        let t = &self.tolerances;
        if !(t.tol_mp >= 0.0 && t.tol_bias >= 0.0 && t.k_moment > 0.0) {
            return Err(Error::Config("tolerances must be nonnegative (K_moment positive)".into()));
        }
        match &self.initial {
            InitialDatum::RandomLipschitz { lipschitz, modes } => {
                if !(*lipschitz > 0.0 && lipschitz.is_finite()) {
                    return Err(Error::Config("randomLipschitz requires L > 0".into()));
                }
                if *modes == 0 || *modes as usize >= grid.res() / 2 {
                    return Err(Error::Config(format!("modes must be in 1..{}", grid.res() / 2)));
                }
            }
            InitialDatum::Fourier { offset, sin, cos, terms } => {
                let finite = offset.is_finite()
                    && sin.iter().chain(cos).all(|x| x.is_finite())
                    && terms.iter().all(|t| t.a.is_finite() && t.b.is_finite());
                if !finite {
                    return Err(Error::Config("initial coefficients must be finite".into()));
                }
                if let Some(t) = terms.iter().find(|t| t.k.len() != grid.dim()) {
                    return Err(Error::Config(format!("wave vector {:?} does not match dim {}", t.k, grid.dim())));
                }
            }
        }
        if self.scheme.is_explicit() && !force {
            let bound = explicit_stability_bound(&grid, self.epsilon);
            if self.dt > bound {
                return Err(Error::Stability { dt: self.dt, bound });
            }
        }
        if self.sample_stride.is_none() {
            self.sample_stride = Some(self.stride());
        }
        Ok(self)
    }

    /// The config without execution settings (the worker count), so that
    /// anything derived from it is independent of parallelism.
    pub fn echo(&self) -> SimConfig {
        SimConfig { worker_count: None, ..self.clone() }
    }

    /// Pretty JSON echo; parsing it yields an identical config.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Parses and validates a JSON config (unknown keys rejected).
pub fn parse_config(text: &str) -> Result<SimConfig> {
    parse_config_with(text, false)
}

pub fn parse_config_with(text: &str, force: bool) -> Result<SimConfig> {
    let cfg: SimConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate(force)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"dim":1,"res":128,"T":1,"M":100,"baseSeed":42,"initial":{"family":"fourier","sin":[0.5]}}"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.epsilon, 0.0);
        assert_eq!(c.scheme, SchemeKind::SemiImplicitSpectral);
        assert_eq!(c.dt, DEFAULT_DT);
        assert_eq!(c.steps().unwrap(), 1000);
        assert_eq!(c.sample_stride, Some(1));
        assert_eq!(c.tolerances, Tolerances::default());
        assert!(c.noise);
        assert_eq!(c.max_refine_level, 0);
    }

    #[test]
    fn default_stride_caps_samples() {
        let c = parse_config(r#"{"dim":1,"res":128,"T":16,"dt":0.002,"M":1,"baseSeed":1,"initial":{"family":"fourier","sin":[0.5]}}"#).unwrap();
        let steps = c.steps().unwrap();
        let stride = c.sample_stride.unwrap();
        let samples = steps / stride + 1 + usize::from(!steps.is_multiple_of(stride));
        assert!(samples <= MAX_DEFAULT_SAMPLES, "{samples}");
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = MINIMAL.replace("\"M\":100", "\"M\":100,\"bogus\":1");
        assert!(matches!(parse_config(&bad), Err(Error::Config(_))));
        let bad = MINIMAL.replace("\"sin\":[0.5]", "\"sin\":[0.5],\"tan\":[1]");
        assert!(parse_config(&bad).is_err());
    }

    #[test]
    fn explicit_cfl_violation_names_bound() {
        let text = MINIMAL.replace("\"T\":1", "\"T\":1,\"dt\":0.001,\"scheme\":\"ExplicitEM\"");
        let err = parse_config(&text).unwrap_err();
        let h = 1.0 / 128.0;
        let bound = 0.5 * h * h / 2.0;
        match err {
            Error::Stability { bound: b, .. } => assert!((b - bound).abs() < 1e-18),
            other => panic!("{other}"),
        }
        assert!(parse_config_with(&text, true).is_ok());
    }

    #[test]
    fn echo_roundtrip() {
        let c = parse_config(MINIMAL).unwrap();
        let again = parse_config(&c.to_json()).unwrap();
        assert_eq!(c, again);
        let full = r#"{"dim":2,"res":16,"epsilon":0.25,"dt":0.0001,"T":0.01,"scheme":"StratonovichHeun","M":3,"baseSeed":9,
            "initial":{"family":"randomLipschitz","L":1.5},"tolerances":{"tolMP":0.05},"workerCount":2,"noise":false}"#;
        let c = parse_config(full).unwrap();
        assert_eq!(c, parse_config(&c.to_json()).unwrap());
    }

    #[test]
    fn invalid_values_rejected() {
        for (from, to) in [
            ("\"res\":128", "\"res\":7"),
            ("\"M\":100", "\"M\":0"),
            ("\"T\":1", "\"T\":1,\"dt\":0.3"),
            ("\"T\":1", "\"T\":1,\"epsilon\":-1"),
        ] {
            assert!(parse_config(&MINIMAL.replace(from, to)).is_err(), "{to}");
        }
        let rl = MINIMAL.replace(r#"{"family":"fourier","sin":[0.5]}"#, r#"{"family":"randomLipschitz","L":0}"#);
        assert!(parse_config(&rl).is_err());
    }

    #[test]
    fn random_lipschitz_hits_target_exactly() {
        let g = GridSpec::new(2, 32).unwrap();
        let datum = InitialDatum::RandomLipschitz { lipschitz: 1.25, modes: 3 };
        for id in 0..5 {
            let u = datum.build(g, 42, id).unwrap();
            let l = grid::gradient(&u).norm(NormKind::Linf).unwrap();
            assert!((l - 1.25).abs() < 1e-12);
        }
        assert_ne!(datum.build(g, 42, 0).unwrap(), datum.build(g, 42, 1).unwrap());
        assert_eq!(datum.build(g, 42, 3).unwrap(), datum.build(g, 42, 3).unwrap());
    }
}
