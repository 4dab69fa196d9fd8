//! Restitution-coefficient families and the derived collision quantities.
//!
//! A restitution model supplies `e(z)` for impact speed `z = |u.n| >= 0`,
//! the map `theta(z) = z*e(z)` with its inverse, and the collision Jacobian
//! `theta'(z) = e(z) + z*e_z(z)`. The admissibility checks verify:
//!
//! * continuity of `e` (sampled),
//! * strict monotonicity of `theta` (sampled), which makes collisions
//!   invertible,
//! * boundedness of the angular integrability function `phi_beta`, which is
//!   what the gain-operator envelope bound needs.

use crate::error::{Error, Result};
use crate::quad::{adaptive_gl, sphere_surface};
use serde::{Deserialize, Serialize};

const FRAC_PI_2: f64 = std::f64::consts::FRAC_PI_2;

/// Restitution coefficient as a function of impact speed.
///
/// Every variant maps `[0, inf)` into `(0, 1]`; `Elastic` is `e == 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RestitutionModel {
    /// `e(z) = 1`.
    Elastic,
    /// `e(z) = e0` with `e0` in (0, 1].
    Constant { e0: f64 },
    /// `e(z) = 1 / (1 + a z^gamma)` with `a > 0`, `gamma` in (0, 1].
    MonotoneDecreasing { a: f64, gamma: f64 },
    /// Elastic below the speed threshold `z0`, inner model at or above it.
    PiecewiseElastic {
        z0: f64,
        inner: Box<RestitutionModel>,
    },
    /// Viscoelastic hard spheres: `e` solves `e + a z^{1/5} e^{3/5} = 1`,
    /// `a >= 0` (`a = 0` is the elastic case).
    Viscoelastic { a: f64 },
}

impl RestitutionModel {
    /// Check parameter ranges. Call once after construction or deserialization.
    pub fn validate(&self) -> Result<()> {
        match self {
            RestitutionModel::Elastic => Ok(()),
            RestitutionModel::Constant { e0 } => {
                if !(*e0 > 0.0 && *e0 <= 1.0) {
                    return Err(Error::config("restitution.e0", "must lie in (0, 1]"));
                }
                Ok(())
            }
            RestitutionModel::MonotoneDecreasing { a, gamma } => {
                if !(*a > 0.0) {
                    return Err(Error::config("restitution.a", "must be > 0"));
                }
                if !(*gamma > 0.0 && *gamma <= 1.0) {
                    return Err(Error::config("restitution.gamma", "must lie in (0, 1]"));
                }
                Ok(())
            }
            RestitutionModel::PiecewiseElastic { z0, inner } => {
                if !(*z0 > 0.0) {
                    return Err(Error::config("restitution.z0", "must be > 0"));
                }
                inner.validate()
            }
            RestitutionModel::Viscoelastic { a } => {
                if !(*a >= 0.0) {
                    return Err(Error::config("restitution.a", "must be >= 0"));
                }
                Ok(())
            }
        }
    }

    /// Restitution coefficient `e(z)` for impact speed `z >= 0`.
    pub fn eval_e(&self, z: f64) -> f64 {
        debug_assert!(z >= 0.0, "impact speed must be nonnegative");
        match self {
            RestitutionModel::Elastic => 1.0,
            RestitutionModel::Constant { e0 } => *e0,
            RestitutionModel::MonotoneDecreasing { a, gamma } => 1.0 / (1.0 + a * z.powf(*gamma)),
            RestitutionModel::PiecewiseElastic { z0, inner } => {
                if z < *z0 {
                    1.0
                } else {
                    inner.eval_e(z)
                }
            }
            RestitutionModel::Viscoelastic { a } => viscoelastic_e(*a, z),
        }
    }

    /// `theta(z) = z * e(z)`, the post-collision normal speed map.
    pub fn theta(&self, z: f64) -> f64 {
        z * self.eval_e(z)
    }

    /// Collision Jacobian `theta'(z) = e(z) + z e_z(z)`, from the closed form
    /// of each family.
    pub fn jacobian(&self, z: f64) -> f64 {
        match self {
            RestitutionModel::Elastic => 1.0,
            RestitutionModel::Constant { e0 } => *e0,
            RestitutionModel::MonotoneDecreasing { a, gamma } => {
                let zg = z.powf(*gamma);
                let denom = 1.0 + a * zg;
                (1.0 + a * (1.0 - gamma) * zg) / (denom * denom)
            }
            RestitutionModel::PiecewiseElastic { z0, inner } => {
                if z < *z0 {
                    1.0
                } else {
                    inner.jacobian(z)
                }
            }
            RestitutionModel::Viscoelastic { a } => {
                let e = viscoelastic_e(*a, z);
                // Quotient form obtained by differentiating the implicit law.
                let s = a / 5.0 * z.powf(0.2) * e.powf(-0.4);
                e * (1.0 + 2.0 * s) / (1.0 + 3.0 * s)
            }
        }
    }

    /// Inverse of `theta`: the pre-collision impact speed producing post
    /// speed `y`. Errors when `y` exceeds the range of `theta` (which is
    /// bounded for some models, e.g. monotone-decreasing with `gamma = 1`).
    pub fn theta_inv(&self, y: f64) -> Result<f64> {
        debug_assert!(y >= 0.0);
        match self {
            RestitutionModel::Elastic => Ok(y),
            RestitutionModel::Constant { e0 } => Ok(y / e0),
            _ => {
                if y == 0.0 {
                    return Ok(0.0);
                }
                // Grow the bracket geometrically; theta is strictly increasing
                // for admissible models.
                let mut hi = 1.0_f64.max(y);
                let mut th_hi = self.theta(hi);
                let mut growth = 0;
                while th_hi < y {
                    hi *= 2.0;
                    let next = self.theta(hi);
                    growth += 1;
                    if growth > 200 || next <= th_hi * (1.0 + 1e-14) && next < y {
                        return Err(Error::ThetaInverseDomain {
                            y,
                            max_speed: next.max(th_hi),
                        });
                    }
                    th_hi = next;
                }
                let mut lo = 0.0;
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if self.theta(mid) < y {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo < 1e-14 * hi.max(1.0) {
                        break;
                    }
                }
                Ok(0.5 * (lo + hi))
            }
        }
    }

    /// Integrability ratio `psi_beta(z) = z / (theta theta') *
    /// exp(-beta/2 (z^2 - theta^2))`, written in the equivalent cusp-free
    /// form `exp(-beta/2 z^2 (1 - e^2)) / (e theta')`.
    pub fn psi_beta(&self, z: f64, beta: f64) -> f64 {
        let e = self.eval_e(z);
        let tz = self.jacobian(z);
        (-0.5 * beta * z * z * (1.0 - e * e)).exp() / (e * tz)
    }

    /// Alternate normalization `z / theta' * exp(...)` (no `theta` factor),
    /// reported alongside `psi_beta` for comparison; it differs from
    /// `psi_beta` by a factor `theta(z)`.
    pub fn psi_beta_alt(&self, z: f64, beta: f64) -> f64 {
        let e = self.eval_e(z);
        let tz = self.jacobian(z);
        z / tz * (-0.5 * beta * z * z * (1.0 - e * e)).exp()
    }

    /// Angular integrability function
    /// `phi_beta(x) = 2 |S^{n-2}| int_0^1 psi_beta(x z) (1 - z^2)^{(n-3)/2} dz`.
    ///
    /// For `n = 2` the endpoint singularity is removed with `z = sin s`.
    pub fn phi_beta(&self, x: f64, beta: f64, n: usize) -> Result<f64> {
        let fast = FastRestitution::new(self, (x * 1.0001).max(1.0));
        self.phi_beta_with(&fast, x, beta, n)
    }

    fn phi_beta_with(&self, fast: &FastRestitution, x: f64, beta: f64, n: usize) -> Result<f64> {
        let front = 2.0 * sphere_surface(n - 1);
        let ctx = "phi_beta";
        match n {
            3 => {
                let mut f = |z: f64| fast.psi_beta(x * z, beta);
                Ok(front * adaptive_gl(&mut f, 0.0, 1.0, 1e-11, ctx)?)
            }
            2 => {
                let mut f = |s: f64| fast.psi_beta(x * s.sin(), beta);
                Ok(front * adaptive_gl(&mut f, 0.0, FRAC_PI_2, 1e-11, ctx)?)
            }
            _ => Err(Error::UnsupportedDimension(n)),
        }
    }

    /// Estimate `sup_x phi_beta(x)` over `{0}` and a log-spaced grid in
    /// `[1e-3, 1e3]`, refusing to certify boundedness when the last decade
    /// is still increasing.
    pub fn phi_beta_sup(&self, beta: f64, n: usize) -> Result<PhiSup> {
        let x_max = 1e3;
        let fast = FastRestitution::new(self, x_max * 1.0001);
        let count = 2000usize;
        let mut xs = Vec::with_capacity(count + 1);
        xs.push(0.0);
        let lo: f64 = 1e-3;
        for k in 0..count {
            let t = k as f64 / (count - 1) as f64;
            xs.push(lo * (x_max / lo).powf(t));
        }
        let mut sup = f64::NEG_INFINITY;
        let mut argmax = 0.0;
        let mut values = Vec::with_capacity(xs.len());
        for &x in &xs {
            let v = self.phi_beta_with(&fast, x, beta, n)?;
            if !v.is_finite() {
                return Err(Error::IntegrabilityFailure {
                    detail: format!("phi_beta({x:.3e}) is not finite"),
                });
            }
            if v > sup {
                sup = v;
                argmax = x;
            }
            values.push(v);
        }
        // Tail inspection: the estimate is only trusted when the last decade
        // has stopped growing.
        let tail_start = xs.iter().position(|&x| x >= x_max / 10.0).unwrap_or(0);
        let tail = &values[tail_start..];
        let still_rising = tail
            .last()
            .zip(tail.get(tail.len().saturating_sub(6)))
            .map(|(last, earlier)| *last > *earlier + 1e-10 * sup.abs())
            .unwrap_or(false);
        let tail_certified = !(still_rising || argmax >= x_max / 10.0 && still_rising);
        Ok(PhiSup {
            sup,
            argmax,
            tail_certified: tail_certified && !still_rising,
        })
    }

    /// Run the admissibility checks for this model at the given `beta` and
    /// dimension. Failures are reported, not raised.
    pub fn check_assumptions(&self, beta: f64, n: usize) -> AssumptionReport {
        let z_max = 100.0;
        let continuity = check_continuity(self, z_max);
        let theta_increasing = check_theta_increasing(self, z_max);
        let decay_bound = check_decay_bound(self, z_max);

        let integrability = match self.phi_beta_sup(beta, n) {
            Ok(phi) => {
                let psi_sup = sample_sup(|z| self.psi_beta(z, beta), z_max);
                let psi_sup_alt = sample_sup(|z| self.psi_beta_alt(z, beta), z_max);
                IntegrabilityCheck {
                    passed: phi.tail_certified && phi.sup.is_finite(),
                    phi_sup: phi.sup,
                    phi_argmax: phi.argmax,
                    tail_certified: phi.tail_certified,
                    psi_sup,
                    psi_sup_alt,
                    detail: String::new(),
                }
            }
            Err(e) => IntegrabilityCheck {
                passed: false,
                phi_sup: f64::NAN,
                phi_argmax: f64::NAN,
                tail_certified: false,
                psi_sup: f64::NAN,
                psi_sup_alt: f64::NAN,
                detail: e.to_string(),
            },
        };

        AssumptionReport {
            beta,
            dimension: n,
            continuity,
            theta_strictly_increasing: theta_increasing,
            integrability,
            decay_bound,
        }
    }
}

/// Result of the `sup_x phi_beta` scan.
#[derive(Debug, Clone, Copy)]
pub struct PhiSup {
    pub sup: f64,
    pub argmax: f64,
    /// False when the scan could not rule out growth beyond the probed range.
    pub tail_certified: bool,
}

/// One named admissibility check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub passed: bool,
    pub detail: String,
}

/// Outcome of the integrability (envelope-bound) check.
#[derive(Debug, Clone)]
pub struct IntegrabilityCheck {
    pub passed: bool,
    pub phi_sup: f64,
    pub phi_argmax: f64,
    pub tail_certified: bool,
    /// Sampled sup of the integrability ratio in the convention used here.
    pub psi_sup: f64,
    /// Sampled sup of the alternate (theta-free) normalization, for comparison.
    pub psi_sup_alt: f64,
    pub detail: String,
}

/// Full admissibility report for a restitution model.
#[derive(Debug, Clone)]
pub struct AssumptionReport {
    pub beta: f64,
    pub dimension: usize,
    pub continuity: CheckResult,
    pub theta_strictly_increasing: CheckResult,
    pub integrability: IntegrabilityCheck,
    pub decay_bound: CheckResult,
}

impl AssumptionReport {
    pub fn all_passed(&self) -> bool {
        self.continuity.passed
            && self.theta_strictly_increasing.passed
            && self.integrability.passed
            && self.decay_bound.passed
    }

    /// Plain-text rendering used by the command line and run reports.
    pub fn render(&self) -> String {
        let mark = |b: bool| if b { "pass" } else { "FAIL" };
        let mut s = String::new();
        s.push_str(&format!(
            "restitution admissibility report (beta = {}, n = {})\n",
            self.beta, self.dimension
        ));
        s.push_str(&format!(
            "  continuity of e:            {} {}\n",
            mark(self.continuity.passed),
            self.continuity.detail
        ));
        s.push_str(&format!(
            "  theta strictly increasing:  {} {}\n",
            mark(self.theta_strictly_increasing.passed),
            self.theta_strictly_increasing.detail
        ));
        s.push_str(&format!(
            "  angular integrability:      {} phi_sup = {:.9e} at x = {:.3e} (tail certified: {})\n",
            mark(self.integrability.passed),
            self.integrability.phi_sup,
            self.integrability.phi_argmax,
            self.integrability.tail_certified
        ));
        s.push_str(&format!(
            "    psi_sup = {:.9e}, psi_sup_alt (theta-free variant) = {:.9e}\n",
            self.integrability.psi_sup, self.integrability.psi_sup_alt
        ));
        if !self.integrability.detail.is_empty() {
            s.push_str(&format!("    detail: {}\n", self.integrability.detail));
        }
        s.push_str(&format!(
            "  decay bound e(z) >= e(1)/z: {} {}\n",
            mark(self.decay_bound.passed),
            self.decay_bound.detail
        ));
        s
    }
}

/// Solve `e + a z^{1/5} e^{3/5} = 1` for `e` in `(0, 1]` by bisection.
///
/// The left side is strictly increasing in `e`, so the root is unique;
/// absolute tolerance 1e-12 honours the accuracy the collision quadratures
/// assume.
fn viscoelastic_e(a: f64, z: f64) -> f64 {
    if a == 0.0 || z == 0.0 {
        return 1.0;
    }
    let s = a * z.powf(0.2);
    let f = |e: f64| e + s * e.powf(0.6) - 1.0;
    let mut lo = 0.0_f64;
    let mut hi = 1.0_f64;
    if f(hi) <= 0.0 {
        return 1.0;
    }
    while hi - lo > 1e-13 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Memoized restitution evaluator for quadrature hot paths.
///
/// The viscoelastic law is tabulated on a uniform grid in `w = z^{1/5}`
/// (where it is smooth) and read back with Catmull-Rom interpolation;
/// closed-form families evaluate directly.
pub(crate) struct FastRestitution<'m> {
    model: &'m RestitutionModel,
    table: Option<ViscoTable>,
}

struct ViscoTable {
    w_max: f64,
    step: f64,
    values: Vec<f64>,
}

impl<'m> FastRestitution<'m> {
    pub fn new(model: &'m RestitutionModel, z_max: f64) -> Self {
        let table = match model {
            RestitutionModel::Viscoelastic { a } if *a > 0.0 => {
                let w_max = z_max.max(1e-6).powf(0.2);
                let count = 4096usize;
                let step = w_max / (count - 1) as f64;
                let values = (0..count)
                    .map(|k| {
                        let w = k as f64 * step;
                        viscoelastic_e(*a, w.powi(5))
                    })
                    .collect();
                Some(ViscoTable {
                    w_max,
                    step,
                    values,
                })
            }
            _ => None,
        };
        FastRestitution { model, table }
    }

    pub fn eval_e(&self, z: f64) -> f64 {
        match &self.table {
            None => self.model.eval_e(z),
            Some(t) => {
                let w = z.max(0.0).powf(0.2);
                if w >= t.w_max {
                    return self.model.eval_e(z);
                }
                let q = w / t.step;
                let i = (q as usize).min(t.values.len() - 2);
                let frac = q - i as f64;
                let p1 = t.values[i];
                let p2 = t.values[i + 1];
                let p0 = if i > 0 { t.values[i - 1] } else { 2.0 * p1 - p2 };
                let p3 = if i + 2 < t.values.len() {
                    t.values[i + 2]
                } else {
                    2.0 * p2 - p1
                };
                catmull_rom(p0, p1, p2, p3, frac)
            }
        }
    }

    pub fn jacobian(&self, z: f64) -> f64 {
        match self.model {
            RestitutionModel::Viscoelastic { a } if *a > 0.0 => {
                let e = self.eval_e(z);
                let s = a / 5.0 * z.powf(0.2) * e.powf(-0.4);
                e * (1.0 + 2.0 * s) / (1.0 + 3.0 * s)
            }
            m => m.jacobian(z),
        }
    }

    pub fn psi_beta(&self, z: f64, beta: f64) -> f64 {
        let e = self.eval_e(z);
        let tz = self.jacobian(z);
        (-0.5 * beta * z * z * (1.0 - e * e)).exp() / (e * tz)
    }
}

fn catmull_rom(p0: f64, p1: f64, p2: f64, p3: f64, t: f64) -> f64 {
    let t2 = t * t;
    let t3 = t2 * t;
    0.5 * ((2.0 * p1)
        + (-p0 + p2) * t
        + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t2
        + (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t3)
}

/// Sampling grid used by the continuity/monotonicity checks: log-spaced near
/// zero plus a uniform sweep.
fn check_grid(z_max: f64) -> Vec<f64> {
    let mut g = vec![0.0];
    let lo: f64 = 1e-6;
    for k in 0..400 {
        g.push(lo * (z_max / lo).powf(k as f64 / 399.0));
    }
    for k in 1..=4000 {
        g.push(z_max * k as f64 / 4000.0);
    }
    g.sort_by(|a, b| a.partial_cmp(b).unwrap());
    g.dedup();
    g
}

fn sample_sup(f: impl Fn(f64) -> f64, z_max: f64) -> f64 {
    check_grid(z_max)
        .iter()
        .map(|&z| f(z))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn check_continuity(model: &RestitutionModel, z_max: f64) -> CheckResult {
    let grid = check_grid(z_max);
    for pair in grid.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let gap = (model.eval_e(b) - model.eval_e(a)).abs();
        if gap > 1e-3 {
            // Bisect: a genuine jump keeps a finite gap, a steep continuous
            // ramp (e.g. the z^{1/5} cusp at the origin) does not.
            let (mut lo, mut hi) = (a, b);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if (model.eval_e(mid) - model.eval_e(lo)).abs()
                    > (model.eval_e(hi) - model.eval_e(mid)).abs()
                {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let jump = (model.eval_e(hi) - model.eval_e(lo)).abs();
            if jump > 1e-6 {
                return CheckResult {
                    passed: false,
                    detail: format!("jump of {jump:.3e} detected near z = {:.6e}", 0.5 * (lo + hi)),
                };
            }
        }
    }
    CheckResult {
        passed: true,
        detail: format!("sampled on [0, {z_max}]"),
    }
}

fn check_theta_increasing(model: &RestitutionModel, z_max: f64) -> CheckResult {
    let grid = check_grid(z_max);
    for pair in grid.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let (ta, tb) = (model.theta(a), model.theta(b));
        if tb <= ta + 1e-14 * ta.abs() {
            return CheckResult {
                passed: false,
                detail: format!(
                    "theta({b:.6e}) = {tb:.6e} does not exceed theta({a:.6e}) = {ta:.6e}"
                ),
            };
        }
    }
    CheckResult {
        passed: true,
        detail: format!("strict on sampled [0, {z_max}]"),
    }
}

fn check_decay_bound(model: &RestitutionModel, z_max: f64) -> CheckResult {
    let e1 = model.eval_e(1.0);
    for k in 0..2000 {
        let z = 1.0 + (z_max - 1.0) * k as f64 / 1999.0;
        let bound = e1 / z;
        if model.eval_e(z) < bound - 1e-12 {
            return CheckResult {
                passed: false,
                detail: format!("e({z:.4}) = {:.6e} below e(1)/z = {bound:.6e}", model.eval_e(z)),
            };
        }
    }
    CheckResult {
        passed: true,
        detail: "holds on sampled z in [1, 100]".to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn models() -> Vec<RestitutionModel> {
        vec![
            RestitutionModel::Elastic,
            RestitutionModel::Constant { e0: 0.5 },
            RestitutionModel::Constant { e0: 0.8 },
            RestitutionModel::MonotoneDecreasing { a: 1.0, gamma: 1.0 },
            RestitutionModel::MonotoneDecreasing { a: 0.3, gamma: 0.5 },
            RestitutionModel::Viscoelastic { a: 0.5 },
            RestitutionModel::Viscoelastic { a: 1.0 },
        ]
    }

    #[test]
    fn elastic_identities_are_exact() {
        let m = RestitutionModel::Elastic;
        for z in [0.0, 0.3, 1.0, 7.5, 40.0] {
            assert_eq!(m.eval_e(z), 1.0);
            assert_eq!(m.jacobian(z), 1.0);
            assert_eq!(m.psi_beta(z, 1.7), 1.0);
        }
    }

    #[test]
    fn viscoelastic_limits() {
        // a = 0 is elastic for any impact speed.
        let m = RestitutionModel::Viscoelastic { a: 0.0 };
        for z in [0.0, 0.1, 3.0, 100.0] {
            assert_eq!(m.eval_e(z), 1.0);
        }
    }

    #[test]
    fn viscoelastic_matches_bisection_oracle() {
        // Independent oracle: bisection on e + 0.5 e^{3/5} = 1 over (0, 1].
        let mut lo = 0.0_f64;
        let mut hi = 1.0_f64;
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if mid + 0.5 * mid.powf(0.6) - 1.0 < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let oracle = 0.5 * (lo + hi);
        let m = RestitutionModel::Viscoelastic { a: 0.5 };
        assert!(
            (m.eval_e(1.0) - oracle).abs() < 1e-12,
            "eval_e(1) = {}, oracle = {}",
            m.eval_e(1.0),
            oracle
        );
        // And the implicit law itself is satisfied.
        for z in [0.2, 1.0, 4.0, 25.0] {
            let e = m.eval_e(z);
            let resid = e + 0.5 * z.powf(0.2) * e.powf(0.6) - 1.0;
            assert!(resid.abs() < 1e-11, "implicit law residual {resid} at z={z}");
        }
    }

    #[test]
    fn monotone_decreasing_closed_form() {
        let m = RestitutionModel::MonotoneDecreasing { a: 1.0, gamma: 1.0 };
        assert!((m.eval_e(1.0) - 0.5).abs() < 1e-15);
        assert!((m.eval_e(3.0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn constant_theta_inverse_is_linear() {
        let m = RestitutionModel::Constant { e0: 0.5 };
        assert!((m.theta_inv(1.0).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn theta_inverse_round_trips() {
        for m in models() {
            for z in [0.0, 1e-3, 0.37, 1.3, 2.0, 9.0, 31.0] {
                let y = m.theta(z);
                let back = m.theta_inv(y).unwrap();
                assert!(
                    (back - z).abs() <= 1e-10 * z.max(1.0),
                    "{m:?}: theta_inv(theta({z})) = {back}"
                );
            }
        }
    }

    #[test]
    fn theta_inverse_domain_error_reports_max_speed() {
        // theta(z) = z / (1 + z) saturates at 1, so y = 2 is unreachable.
        let m = RestitutionModel::MonotoneDecreasing { a: 1.0, gamma: 1.0 };
        match m.theta_inv(2.0) {
            Err(Error::ThetaInverseDomain { y, max_speed }) => {
                assert_eq!(y, 2.0);
                assert!(max_speed <= 1.0 + 1e-9, "saturation level is 1, got {max_speed}");
            }
            other => panic!("expected domain error, got {other:?}"),
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let h = 1e-5;
        for m in models() {
            for z in [0.4, 1.0, 2.0, 5.0, 17.0] {
                let fd = (m.theta(z + h) - m.theta(z - h)) / (2.0 * h);
                let j = m.jacobian(z);
                assert!(
                    (fd - j).abs() <= 1e-6 * j.abs().max(1.0),
                    "{m:?} at z={z}: jacobian {j}, finite difference {fd}"
                );
                assert!(j > 0.0);
            }
        }
    }

    #[test]
    fn fast_restitution_tracks_exact_values() {
        let m = RestitutionModel::Viscoelastic { a: 0.7 };
        let fast = FastRestitution::new(&m, 30.0);
        for k in 0..500 {
            let z = 30.0 * k as f64 / 499.0;
            let exact = m.eval_e(z);
            let approx = fast.eval_e(z);
            assert!(
                (exact - approx).abs() < 1e-9,
                "memo error {:.3e} at z = {z}",
                (exact - approx).abs()
            );
        }
    }

    #[test]
    fn phi_beta_elastic_equals_sphere_surface() {
        let m = RestitutionModel::Elastic;
        for (n, want) in [(2, 2.0 * std::f64::consts::PI), (3, 4.0 * std::f64::consts::PI)] {
            for x in [0.0, 0.5, 3.0, 100.0] {
                let got = m.phi_beta(x, 1.0, n).unwrap();
                assert!(
                    (got - want).abs() < 1e-10,
                    "n={n}, x={x}: phi = {got}, want {want}"
                );
            }
        }
    }

    #[test]
    fn phi_beta_sup_finite_for_admissible_models() {
        for m in models() {
            let sup = m.phi_beta_sup(1.0, 3).unwrap();
            assert!(sup.sup.is_finite() && sup.sup > 0.0, "{m:?}: {sup:?}");
            assert!(sup.tail_certified, "{m:?} tail not certified: {sup:?}");
        }
    }

    #[test]
    fn constant_model_phi_sup_at_origin() {
        // psi(0) = 1/e0^2, attained at x = 0 where phi = |S^{n-1}| / e0^2.
        let e0 = 0.8;
        let m = RestitutionModel::Constant { e0 };
        let sup = m.phi_beta_sup(1.0, 2).unwrap();
        let want = 2.0 * std::f64::consts::PI / (e0 * e0);
        assert!(
            (sup.sup - want).abs() < 1e-8 * want,
            "sup {} want {want}",
            sup.sup
        );
    }

    #[test]
    fn assumptions_pass_for_standard_models() {
        for m in models() {
            let report = m.check_assumptions(1.0, 3);
            assert!(report.all_passed(), "{m:?} failed:\n{}", report.render());
        }
    }

    #[test]
    fn assumptions_detect_non_monotone_theta() {
        // Jump model: e drops from 1 to 0.5 at z0 = 2, so theta falls from 2
        // to 1 across the threshold.
        let m = RestitutionModel::PiecewiseElastic {
            z0: 2.0,
            inner: Box::new(RestitutionModel::Constant { e0: 0.5 }),
        };
        let report = m.check_assumptions(1.0, 3);
        assert!(!report.theta_strictly_increasing.passed);
        assert!(!report.continuity.passed);
        assert!(!report.all_passed());
    }

    #[test]
    fn decay_bound_holds_when_theta_monotone() {
        for m in models() {
            let report = m.check_assumptions(0.5, 2);
            assert!(report.decay_bound.passed, "{m:?}");
        }
    }

    #[test]
    fn validation_rejects_bad_parameters() {
        assert!(RestitutionModel::Constant { e0: 0.0 }.validate().is_err());
        assert!(RestitutionModel::Constant { e0: 1.2 }.validate().is_err());
        assert!(RestitutionModel::Viscoelastic { a: -0.1 }.validate().is_err());
        assert!(RestitutionModel::MonotoneDecreasing { a: 1.0, gamma: 1.4 }
            .validate()
            .is_err());
        assert!(RestitutionModel::MonotoneDecreasing { a: -1.0, gamma: 0.5 }
            .validate()
            .is_err());
    }
}
