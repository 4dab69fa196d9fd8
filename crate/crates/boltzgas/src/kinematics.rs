//! Pointwise collision transforms for a pair of particles.
//!
//! The post-collision map is
//! `xi' = xi - (1+e)/2 (u.n) n`, `xi*' = xi* + (1+e)/2 (u.n) n`
//! with `u = xi - xi*` and `e = e(|u.n|)`; the pre-collision map inverts it
//! through `theta^{-1}`. Momentum and the tangential velocity components are
//! conserved exactly; the normal relative velocity reflects and shrinks by
//! the restitution factor.

use crate::error::Result;
use crate::restitution::RestitutionModel;

/// Velocities of the two colliding particles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityPair<const N: usize> {
    pub xi: [f64; N],
    pub xi_star: [f64; N],
}

impl<const N: usize> VelocityPair<N> {
    pub fn new(xi: [f64; N], xi_star: [f64; N]) -> Self {
        debug_assert!(xi.iter().chain(&xi_star).all(|c| c.is_finite()));
        VelocityPair { xi, xi_star }
    }

    /// Relative velocity `u = xi - xi*`.
    pub fn relative(&self) -> [f64; N] {
        sub(self.xi, self.xi_star)
    }

    /// Total momentum (unit masses).
    pub fn momentum(&self) -> [f64; N] {
        add(self.xi, self.xi_star)
    }

    /// Total kinetic energy `|xi|^2 + |xi*|^2` (unit masses, no 1/2).
    pub fn energy(&self) -> f64 {
        norm_sq(self.xi) + norm_sq(self.xi_star)
    }
}

/// Unit vector from the first particle's center to the second at contact.
#[derive(Debug, Clone, Copy)]
pub struct ImpactDirection<const N: usize> {
    n: [f64; N],
}

impl<const N: usize> ImpactDirection<N> {
    /// Normalizes the given vector; panics on a zero vector.
    pub fn new(v: [f64; N]) -> Self {
        let len = norm_sq(v).sqrt();
        assert!(len > 0.0, "impact direction must be nonzero");
        ImpactDirection {
            n: scale(v, 1.0 / len),
        }
    }

    /// Wraps a vector that is already unit length (within 1e-12).
    pub fn from_unit(v: [f64; N]) -> Self {
        debug_assert!((norm_sq(v).sqrt() - 1.0).abs() < 1e-12, "not a unit vector");
        ImpactDirection { n: v }
    }

    pub fn as_array(&self) -> [f64; N] {
        self.n
    }
}

/// Post-collision velocities for the given pair and impact direction.
pub fn post_collide<const N: usize>(
    pair: &VelocityPair<N>,
    dir: &ImpactDirection<N>,
    model: &RestitutionModel,
) -> VelocityPair<N> {
    let n = dir.n;
    let w = dot(pair.relative(), n);
    let e = model.eval_e(w.abs());
    let c = 0.5 * (1.0 + e) * w;
    VelocityPair {
        xi: sub(pair.xi, scale(n, c)),
        xi_star: add(pair.xi_star, scale(n, c)),
    }
}

/// Pre-collision velocities: the unique pair that `post_collide` maps onto
/// the given one. Fails when the normal relative speed exceeds the range of
/// `theta` for this model.
pub fn pre_collide<const N: usize>(
    pair: &VelocityPair<N>,
    dir: &ImpactDirection<N>,
    model: &RestitutionModel,
) -> Result<VelocityPair<N>> {
    let n = dir.n;
    let w = dot(pair.relative(), n);
    let w_pre_mag = model.theta_inv(w.abs())?;
    let e_pre = model.eval_e(w_pre_mag);
    // sgn(0) = 0: grazing collisions map to the identity.
    let w_pre = -w.signum() * w_pre_mag * if w == 0.0 { 0.0 } else { 1.0 };
    let c = 0.5 * (1.0 + e_pre) * w_pre;
    Ok(VelocityPair {
        xi: add(pair.xi, scale(n, c)),
        xi_star: sub(pair.xi_star, scale(n, c)),
    })
}

/// Kinetic-energy change of a collision: `|xi'|^2 + |xi*'|^2 - |xi|^2 - |xi*|^2`.
///
/// Always `<= 0`; equals `-(1 - e^2)/2 (u.n)^2` in closed form, which this
/// function cross-checks against the direct evaluation to 1e-10.
pub fn energy_deficit<const N: usize>(
    pair: &VelocityPair<N>,
    dir: &ImpactDirection<N>,
    model: &RestitutionModel,
) -> f64 {
    let post = post_collide(pair, dir, model);
    let direct = post.energy() - pair.energy();
    let w = dot(pair.relative(), dir.n);
    let e = model.eval_e(w.abs());
    let closed = -0.5 * (1.0 - e * e) * w * w;
    assert!(
        (direct - closed).abs() <= 1e-10 * (1.0 + pair.energy()),
        "energy deficit mismatch: direct {direct:.15e}, closed form {closed:.15e}"
    );
    direct
}

#[inline]
pub fn dot<const N: usize>(a: [f64; N], b: [f64; N]) -> f64 {
    let mut s = 0.0;
    for i in 0..N {
        s += a[i] * b[i];
    }
    s
}

#[inline]
pub fn norm_sq<const N: usize>(a: [f64; N]) -> f64 {
    dot(a, a)
}

#[inline]
pub fn add<const N: usize>(a: [f64; N], b: [f64; N]) -> [f64; N] {
    std::array::from_fn(|i| a[i] + b[i])
}

#[inline]
pub fn sub<const N: usize>(a: [f64; N], b: [f64; N]) -> [f64; N] {
    std::array::from_fn(|i| a[i] - b[i])
}

#[inline]
pub fn scale<const N: usize>(a: [f64; N], s: f64) -> [f64; N] {
    std::array::from_fn(|i| a[i] * s)
}
