//! Far-field predictors for a screw dislocation: the linear elastic solution
//! `û = (b/2π) arg(x - x̂)` and the two nonlinear corrections `u₁`, `u₂` that
//! appear when the Cauchy–Born energy has a cubic term.
//!
//! The branch cut Γ runs from the core along `+x₁`; `arg` takes values in
//! `[0, 2π)`, so `û` jumps by `-b` when crossing Γ from below to above.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{wrap_period, Vec2};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Predictor {
    pub burgers: f64,
    pub core: Vec2,
    /// Number of corrections included: 0, 1 or 2.
    pub order: u8,
    pub c_lin: f64,
    pub c_quad: f64,
    /// Slip period of the site potential.
    pub period: f64,
}

impl Predictor {
    pub fn new(burgers: f64, core: Vec2, order: u8, c_lin: f64, c_quad: f64, period: f64) -> Result<Self> {
        if order > 2 {
            return Err(Error::Predictor(format!("predictor order {order} is not available (0, 1 or 2)")));
        }
        if order >= 1 && !(c_lin > 0.0) {
            return Err(Error::Predictor(format!("corrections need c_lin > 0, got {c_lin}")));
        }
        if !(period > 0.0) || !burgers.is_finite() {
            return Err(Error::Predictor(format!("invalid burgers vector {burgers} or period {period}")));
        }
        Ok(Predictor { burgers, core, order, c_lin, c_quad, period })
    }

    /// Linear predictor only.
    pub fn linear(burgers: f64, core: Vec2, period: f64) -> Result<Self> {
        Predictor::new(burgers, core, 0, 0.0, 0.0, period)
    }

    fn rel(&self, x: Vec2) -> Result<Vec2> {
        let d = [x[0] - self.core[0], x[1] - self.core[1]];
        if d[0] == 0.0 && d[1] == 0.0 {
            return Err(Error::Predictor(format!("predictor evaluated at the core {x:?}")));
        }
        Ok(d)
    }

    /// `(b/2π) arg(x - x̂)` with `arg ∈ [0, 2π)`.
    pub fn uhat(&self, x: Vec2) -> Result<f64> {
        let d = self.rel(x)?;
        let mut t = d[1].atan2(d[0]);
        if t < 0.0 {
            t += 2.0 * PI;
        }
        if t >= 2.0 * PI {
            t = 0.0;
        }
        Ok(self.burgers / (2.0 * PI) * t)
    }

    pub fn k1(&self) -> f64 {
        self.c_quad * self.burgers.powi(2) / (16.0 * PI * PI * self.c_lin)
    }

    /// Amplitude of `u₂ = K₂ sin(6φ)/r²`. With `u₁ = K₁ cos(3φ)/r` the
    /// right-hand side of the `u₂` equation is `-c_quad² b³/(2π³ c_lin²) sin(6φ)/r⁴`
    /// and `Δ(sin(6φ)/r²) = -32 sin(6φ)/r⁴`, which fixes `K₂`.
    pub fn k2(&self) -> f64 {
        -self.c_quad.powi(2) * self.burgers.powi(3) / (64.0 * PI.powi(3) * self.c_lin.powi(2))
    }

    /// `u₁` (level 1) or `u₂` (level 2).
    pub fn correction(&self, x: Vec2, level: u8) -> Result<f64> {
        let [x1, x2] = self.rel(x)?;
        let r2 = x1 * x1 + x2 * x2;
        match level {
            1 => Ok(self.k1() * (x1.powi(3) - 3.0 * x1 * x2 * x2) / (r2 * r2)),
            2 => {
                let num = 6.0 * x1.powi(5) * x2 - 20.0 * x1.powi(3) * x2.powi(3) + 6.0 * x1 * x2.powi(5);
                Ok(self.k2() * num / (r2 * r2 * r2 * r2))
            }
            _ => Err(Error::Predictor(format!("no correction of level {level}"))),
        }
    }

    /// `û + Σ_{l ≤ order} u_l`.
    pub fn value(&self, x: Vec2) -> Result<f64> {
        let mut v = self.uhat(x)?;
        for level in 1..=self.order {
            v += self.correction(x, level)?;
        }
        Ok(v)
    }

    /// Smooth part of the predictor, i.e. everything except `û`.
    pub fn corrections(&self, x: Vec2) -> Result<f64> {
        let mut v = 0.0;
        for level in 1..=self.order {
            v += self.correction(x, level)?;
        }
        Ok(v)
    }

    /// `∇û`.
    pub fn grad_uhat(&self, x: Vec2) -> Result<Vec2> {
        let [x1, x2] = self.rel(x)?;
        let c = self.burgers / (2.0 * PI) / (x1 * x1 + x2 * x2);
        Ok([-c * x2, c * x1])
    }

    /// `(∂₁₁û, ∂₁₂û, ∂₂₂û)`.
    pub fn hess_uhat(&self, x: Vec2) -> Result<[f64; 3]> {
        let [x1, x2] = self.rel(x)?;
        let r2 = x1 * x1 + x2 * x2;
        let c = self.burgers / (2.0 * PI) / (r2 * r2);
        Ok([2.0 * c * x1 * x2, c * (x2 * x2 - x1 * x1), -2.0 * c * x1 * x2])
    }

    /// Gradient of `K r^α g(φ)` with `g ∈ {cos 3φ, sin 6φ}` written in
    /// Cartesian form.
    fn grad_correction(&self, x: Vec2, level: u8) -> Result<Vec2> {
        let [x1, x2] = self.rel(x)?;
        let r = (x1 * x1 + x2 * x2).sqrt();
        let (c, s) = (x1 / r, x2 / r);
        let c3 = c * c * c - 3.0 * c * s * s;
        let s3 = 3.0 * c * c * s - s * s * s;
        let (k, alpha, g, dg) = match level {
            1 => (self.k1(), -1.0, c3, -3.0 * s3),
            2 => (self.k2(), -2.0, 2.0 * s3 * c3, 6.0 * (c3 * c3 - s3 * s3)),
            _ => return Err(Error::Predictor(format!("no correction of level {level}"))),
        };
        let f = k * r.powf(alpha - 1.0);
        Ok([f * (alpha * g * c - dg * s), f * (alpha * g * s + dg * c)])
    }

    /// Gradient of the full predictor (smooth across Γ).
    pub fn gradient(&self, x: Vec2) -> Result<Vec2> {
        let mut g = self.grad_uhat(x)?;
        for level in 1..=self.order {
            let h = self.grad_correction(x, level)?;
            g[0] += h[0];
            g[1] += h[1];
        }
        Ok(g)
    }

    /// Whether the segment `[x, y]` crosses the branch cut.
    pub fn crosses_cut(&self, x: Vec2, y: Vec2) -> bool {
        let sx = x[1] - self.core[1];
        let sy = y[1] - self.core[1];
        let upper = |s: f64| s >= 0.0;
        if upper(sx) == upper(sy) {
            return false;
        }
        let t = sx / (sx - sy);
        let x1 = x[0] + t * (y[0] - x[0]);
        x1 >= self.core[0]
    }

    /// `u_pred(y) - u_pred(x)`, reduced modulo the slip period into
    /// `(-p/2, p/2]` when the bond crosses the branch cut.
    pub fn bond_difference(&self, x: Vec2, y: Vec2) -> Result<f64> {
        let d = self.value(y)? - self.value(x)?;
        if self.crosses_cut(x, y) {
            Ok(wrap_period(d, self.period))
        } else {
            Ok(d)
        }
    }

    /// Mean curvature of the graph of `û`, from its analytic derivatives.
    pub fn mean_curvature_uhat(&self, x: Vec2) -> Result<f64> {
        let [ux, uy] = self.grad_uhat(x)?;
        let [uxx, uxy, uyy] = self.hess_uhat(x)?;
        let num = (1.0 + uy * uy) * uxx + (1.0 + ux * ux) * uyy - 2.0 * ux * uy * uxy;
        Ok(num / (2.0 * (1.0 + ux * ux + uy * uy).powf(1.5)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdeReport {
    /// Maximum relative residual of the `u₁` and `u₂` equations.
    pub max_rel_residual: [f64; 2],
    pub samples: usize,
    pub passed: bool,
}

const PDE_TOL: f64 = 1e-3;

fn laplacian_fd(f: impl Fn(Vec2) -> Result<f64>, x: Vec2, h: f64) -> Result<f64> {
    let c = f(x)?;
    let s = f([x[0] + h, x[1]])? + f([x[0] - h, x[1]])? + f([x[0], x[1] + h])? + f([x[0], x[1] - h])?;
    Ok((s - 4.0 * c) / (h * h))
}

fn hessian_fd(f: impl Fn(Vec2) -> Result<f64>, x: Vec2, h: f64) -> Result<[f64; 3]> {
    let e = |a: f64, b: f64| f([x[0] + a * h, x[1] + b * h]);
    let c = f(x)?;
    let fxx = (e(1.0, 0.0)? + e(-1.0, 0.0)? - 2.0 * c) / (h * h);
    let fyy = (e(0.0, 1.0)? + e(0.0, -1.0)? - 2.0 * c) / (h * h);
    let fxy = (e(1.0, 1.0)? - e(1.0, -1.0)? - e(-1.0, 1.0)? + e(-1.0, -1.0)?) / (4.0 * h * h);
    Ok([fxx, fxy, fyy])
}

/// `(∂₁₁w - ∂₂₂w, -2∂₁₂w) · a`.
fn cubic_form(h: [f64; 3], a: Vec2) -> f64 {
    (h[0] - h[2]) * a[0] - 2.0 * h[1] * a[1]
}

/// Checks by finite differences that `u₁`, `u₂` solve their defining
/// equations
/// `-c_lin Δu₁ = c_quad (∂₁₁û - ∂₂₂û, -2∂₁₂û)·∇û` and
/// `-c_lin Δu₂ = c_quad [(∂₁₁u₁ - ∂₂₂u₁, -2∂₁₂u₁)·∇û + (∂₁₁û - ∂₂₂û, -2∂₁₂û)·∇u₁]`
/// at points on circles of the given radii about the core.
pub fn verify_corrector_pdes(pred: &Predictor, sample_radii: &[f64]) -> Result<PdeReport> {
    if pred.order < 1 {
        return Err(Error::Predictor("corrector equations need a predictor of order at least 1".into()));
    }
    const ANGLES: usize = 16;
    let u1 = |x: Vec2| pred.correction(x, 1);
    let u2 = |x: Vec2| pred.correction(x, 2);
    let mut worst = [0.0f64; 2];
    let mut samples = 0;
    for &r in sample_radii {
        let h = r * 1e-3;
        let mut rows = Vec::with_capacity(ANGLES);
        for k in 0..ANGLES {
            let phi = 0.1 + 2.0 * PI * k as f64 / ANGLES as f64;
            let x = [pred.core[0] + r * phi.cos(), pred.core[1] + r * phi.sin()];
            let gu = pred.grad_uhat(x)?;
            let hu = pred.hess_uhat(x)?;
            let rhs1 = pred.c_quad * cubic_form(hu, gu);
            let lhs1 = -pred.c_lin * laplacian_fd(u1, x, h)?;
            let g1 = pred.grad_correction(x, 1)?;
            let h1 = hessian_fd(u1, x, h)?;
            let rhs2 = pred.c_quad * (cubic_form(h1, gu) + cubic_form(hu, g1));
            let lhs2 = -pred.c_lin * laplacian_fd(u2, x, h)?;
            rows.push((lhs1, rhs1, lhs2, rhs2));
        }
        let s1 = rows.iter().fold(0.0f64, |m, r| m.max(r.1.abs()));
        let s2 = rows.iter().fold(0.0f64, |m, r| m.max(r.3.abs()));
        for (lhs1, rhs1, lhs2, rhs2) in rows {
            if s1 > 0.0 {
                worst[0] = worst[0].max((lhs1 - rhs1).abs() / s1);
            }
            if s2 > 0.0 {
                worst[1] = worst[1].max((lhs2 - rhs2).abs() / s2);
            }
            samples += 1;
        }
    }
    Ok(PdeReport { max_rel_residual: worst, samples, passed: worst[0] <= PDE_TOL && worst[1] <= PDE_TOL })
}
