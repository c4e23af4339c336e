//! Model parameters, background state and variable conversions.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Physical and scheme parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    /// Adiabatic exponent, `> 1`.
    pub gamma: f64,
    /// Velocity damping coefficient.
    pub beta: f64,
    pub kappa0: f64,
    /// Initial steepness: the initial slope minimum is `-1/epsilon`.
    pub epsilon: f64,
    /// Bootstrap constant.
    #[serde(rename = "M")]
    pub m: f64,
    /// Domain half-width.
    #[serde(rename = "L")]
    pub half_width: f64,
    /// Grid cells.
    #[serde(rename = "N")]
    pub cells: usize,
    pub cfl: f64,
    /// Allows amplitudes below the admissible minimum and `8 M epsilon > 1`.
    pub override_regime: bool,
}

impl Default for ModelParams {
    fn default() -> Self {
        let gamma: f64 = 2.0;
        let alpha = (gamma - 1.0) / 2.0;
        Self {
            gamma,
            beta: 0.0,
            kappa0: 5.0 * (1.0 + alpha) / alpha,
            epsilon: 0.01,
            m: 12.5,
            half_width: 16.0,
            cells: 16384,
            cfl: 0.4,
            override_regime: false,
        }
    }
}

/// Coefficients of the rescaled Riemann system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficients {
    pub alpha: f64,
    /// Cross-coupling of the transport speeds, `(1-alpha)/(1+alpha)`.
    pub cross: f64,
    /// Speed offset, `kappa0/(1+alpha)`.
    pub shift: f64,
    /// Damping, `beta/(1+alpha)`.
    pub damping: f64,
    /// Diffusion rate and chemotactic coupling, `2/(1+alpha)`.
    pub diffusion: f64,
    pub kappa0: f64,
}

impl Coefficients {
    /// Transport speed of `w`.
    #[inline]
    pub fn speed_w(&self, w: f64, z: f64) -> f64 {
        w + self.cross * z - self.shift
    }

    /// Transport speed of `z`.
    #[inline]
    pub fn speed_z(&self, w: f64, z: f64) -> f64 {
        self.cross * w + z - self.shift
    }

    /// Source shared by both Riemann variables: damping of the velocity plus
    /// the chemotactic drift. Vanishes exactly at the background.
    #[inline]
    pub fn forcing(&self, w: f64, z: f64, phi_x: f64) -> f64 {
        self.damping * (self.kappa0 - w - z) + self.diffusion * phi_x
    }

    /// Density as a function of the Riemann variables.
    #[inline]
    pub fn density(&self, w: f64, z: f64) -> f64 {
        (self.alpha * (0.5 * (w - z))).powf(1.0 / self.alpha)
    }
}

impl ModelParams {
    pub fn alpha(&self) -> f64 {
        (self.gamma - 1.0) / 2.0
    }

    pub fn coefficients(&self) -> Coefficients {
        let alpha = self.alpha();
        Coefficients {
            alpha,
            cross: (1.0 - alpha) / (1.0 + alpha),
            shift: self.kappa0 / (1.0 + alpha),
            damping: self.beta / (1.0 + alpha),
            diffusion: 2.0 / (1.0 + alpha),
            kappa0: self.kappa0,
        }
    }

    /// Smallest admissible amplitude, `5(1+alpha)/alpha`.
    pub fn min_kappa0(&self) -> f64 {
        let alpha = self.alpha();
        5.0 * (1.0 + alpha) / alpha
    }

    /// Speed of the background `w` characteristic, `alpha kappa0/(1+alpha)`.
    pub fn background_speed(&self) -> f64 {
        let alpha = self.alpha();
        alpha * self.kappa0 / (1.0 + alpha)
    }

    /// Original clock from the rescaled one.
    pub fn original_time(&self, t: f64) -> f64 {
        0.5 * (1.0 + self.alpha()) * t
    }

    /// Structural checks, then the admissible-regime checks unless overridden.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.gamma > 1.0) || !self.gamma.is_finite() {
            return bad(format!("gamma must exceed 1, got {}", self.gamma));
        }
        if !(self.beta >= 0.0) {
            return bad(format!("beta must be nonnegative, got {}", self.beta));
        }
        if !(self.kappa0 > 0.0) {
            return bad(format!("kappa0 must be positive, got {}", self.kappa0));
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.m > 0.0) {
            return bad(format!("M must be positive, got {}", self.m));
        }
        if !(self.half_width > 0.0) {
            return bad(format!("L must be positive, got {}", self.half_width));
        }
        if self.cells < 16 {
            return bad(format!("N must be at least 16, got {}", self.cells));
        }
        if !(self.cfl > 0.0 && self.cfl < 1.0) {
            return bad(format!("cfl must lie in (0, 1), got {}", self.cfl));
        }
        if !self.override_regime {
            if self.kappa0 < self.min_kappa0() * (1.0 - 1e-12) {
                return bad(format!(
                    "kappa0 = {} is below the admissible minimum {} (set override_regime to run anyway)",
                    self.kappa0,
                    self.min_kappa0()
                ));
            }
            if 8.0 * self.m * self.epsilon > 1.0 {
                return bad(format!(
                    "8 M epsilon = {} exceeds 1 (set override_regime to run anyway)",
                    8.0 * self.m * self.epsilon
                ));
            }
        }
        Ok(())
    }
}

/// Constant state `(rho_bar, phi_bar, q_bar)` with `w = kappa0`, `z = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Background {
    pub rho: f64,
    pub phi: f64,
    pub q: f64,
}

pub fn background(params: &ModelParams) -> Background {
    let q = params.kappa0 / 2.0;
    let rho = params.coefficients().density(params.kappa0, 0.0);
    Background { rho, phi: rho, q }
}

pub fn riemann_from_primitive(rho: &[f64], u: &[f64], params: &ModelParams) -> Result<(Vec<f64>, Vec<f64>)> {
    if rho.len() != u.len() {
        return Err(Error::Input("density and velocity lengths differ".into()));
    }
    let alpha = params.alpha();
    let half = params.kappa0 / 2.0;
    let mut w = Vec::with_capacity(rho.len());
    let mut z = Vec::with_capacity(rho.len());
    for (&r, &v) in rho.iter().zip(u) {
        if !(r > 0.0) {
            return Err(Error::Domain(format!("nonpositive density {r}")));
        }
        let q = r.powf(alpha) / alpha;
        w.push(v + q + half);
        z.push(v - q + half);
    }
    Ok((w, z))
}

/// Density, velocity and sound variable `q = (w - z)/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Primitive {
    pub rho: Vec<f64>,
    pub u: Vec<f64>,
    pub q: Vec<f64>,
}

pub fn primitive_from_riemann(w: &[f64], z: &[f64], params: &ModelParams) -> Result<Primitive> {
    if w.len() != z.len() {
        return Err(Error::Input("w and z lengths differ".into()));
    }
    let coef = params.coefficients();
    let mut out = Primitive {
        rho: Vec::with_capacity(w.len()),
        u: Vec::with_capacity(w.len()),
        q: Vec::with_capacity(w.len()),
    };
    for (i, (&wi, &zi)) in w.iter().zip(z).enumerate() {
        if !(wi > zi) {
            return Err(Error::Vacuum { x: i as f64, w: wi, z: zi });
        }
        out.q.push(0.5 * (wi - zi));
        out.u.push(0.5 * (wi + zi - params.kappa0));
        out.rho.push(coef.density(wi, zi));
    }
    Ok(out)
}

/// Fields on a grid at one instant.
#[derive(Debug, Clone)]
pub struct PhysicalState {
    /// Rescaled model time.
    pub t: f64,
    /// Original time, `(1+alpha)/2 * t`.
    pub t_orig: f64,
    pub grid: Arc<Grid>,
    /// Velocity of the grid frame: lab position is `grid.x[i] + frame_speed * t`.
    pub frame_speed: f64,
    pub w: Vec<f64>,
    pub z: Vec<f64>,
    pub phi: Vec<f64>,
}

impl PhysicalState {
    pub fn background(grid: Arc<Grid>, params: &ModelParams) -> Self {
        let n = grid.len();
        let bg = background(params);
        Self {
            t: 0.0,
            t_orig: 0.0,
            grid,
            frame_speed: 0.0,
            w: vec![params.kappa0; n],
            z: vec![0.0; n],
            phi: vec![bg.phi; n],
        }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    /// Lab-frame offset of the grid.
    pub fn frame_offset(&self) -> f64 {
        self.frame_speed * self.t
    }

    pub fn lab_x(&self, i: usize) -> f64 {
        self.grid.x[i] + self.frame_offset()
    }

    pub fn primitive(&self, params: &ModelParams) -> Result<Primitive> {
        primitive_from_riemann(&self.w, &self.z, params).map_err(|e| match e {
            Error::Vacuum { x, w, z } => Error::Vacuum { x: self.lab_x(x as usize), w, z },
            other => other,
        })
    }

    /// Largest deviation from the background over the `edge` outermost nodes per side.
    pub fn far_field_deviation(&self, params: &ModelParams, edge: usize) -> f64 {
        let bg = background(params);
        let n = self.len();
        let edge = edge.min(n / 2);
        (0..edge)
            .chain(n - edge..n)
            .map(|i| {
                (self.w[i] - params.kappa0)
                    .abs()
                    .max(self.z[i].abs())
                    .max((self.phi[i] - bg.phi).abs())
            })
            .fold(0.0, f64::max)
    }
}
