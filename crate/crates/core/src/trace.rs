//! Time series of energies recorded along one sample path.

use serde::{Deserialize, Serialize};

/// Column names of the trace CSV, in order.
pub const TRACE_COLUMNS: [&str; 8] = ["t", "W", "dirichlet", "area", "maxexcess", "hess_l2sq_cum", "grad_linf", "h1_dev_from_W"];

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub t: f64,
    /// `W(t)`, the driving Wiener process.
    pub w: f64,
    pub dirichlet: f64,
    pub area: f64,
    /// `∫g_M(Q)` at the path's excess level.
    pub maxexcess: f64,
    /// Time trapezoid of `∫|D²u|²` over `[0, t]`, accumulated every step.
    pub hess_l2sq_cum: f64,
    pub grad_linf: f64,
    /// `‖u − W‖_{H¹}`.
    pub h1_dev_from_w: f64,
}

impl TraceSample {
    pub fn to_row(&self) -> [f64; 8] {
        [self.t, self.w, self.dirichlet, self.area, self.maxexcess, self.hess_l2sq_cum, self.grad_linf, self.h1_dev_from_w]
    }

    pub fn from_row(r: [f64; 8]) -> Self {
        Self {
            t: r[0],
            w: r[1],
            dirichlet: r[2],
            area: r[3],
            maxexcess: r[4],
            hess_l2sq_cum: r[5],
            grad_linf: r[6],
            h1_dev_from_w: r[7],
        }
    }
}

/// Quantities recorded alongside each sample that are not part of the CSV
/// layout.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AuxSample {
    /// `mean(u) − W`.
    pub mean_dev: f64,
    /// `(‖u − mean u‖²_{L²} + ‖∇u‖²_{L²})^{1/2}`.
    pub h1_semi_dev: f64,
    /// Time trapezoid of the geometric area dissipation.
    pub area_diss_cum: f64,
    /// Time trapezoid of the predicted Dirichlet drift. The prediction
    /// includes the noise-induced terms, so it only applies to noisy runs.
    pub dirichlet_drift_cum: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyTrace {
    pub path_id: u64,
    /// Level `M` of the MaxExcess column, `√(1 + Linf(∇u₀)²)`.
    pub excess_level: f64,
    pub samples: Vec<TraceSample>,
    /// Parallel to `samples` when produced by a simulation; empty when read
    /// back from CSV.
    pub aux: Vec<AuxSample>,
}

impl EnergyTrace {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn column(&self, f: impl Fn(&TraceSample) -> f64) -> Vec<f64> {
        self.samples.iter().map(f).collect()
    }

    pub fn last(&self) -> Option<&TraceSample> {
        self.samples.last()
    }

    pub fn is_finite(&self) -> bool {
        self.samples.iter().all(|s| s.to_row().iter().all(|x| x.is_finite()))
    }
}
