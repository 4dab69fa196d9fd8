//! Hard-sphere collision operator on a velocity grid: loss rate `R(g)`,
//! loss part `Q-(f,g) = f R(g)`, gain part `Q+(f,g)`, the dimensional and
//! envelope constants, and numeric verification of the time-integral and
//! gain-envelope bounds.
//!
//! Two discretizations of the gain part are provided.
//!
//! * [`CollisionOperator::gain`] redistributes the collision measure
//!   `f(xi) g(xi*) |u.n|` to the post-collision velocities with a
//!   nonnegative splat. A per-pair contraction of the deposit points toward
//!   the pair's center of mass makes mass, momentum and pair kinetic energy
//!   exact (up to the angular quadrature, which is exponentially accurate),
//!   so the discrete operator inherits the conservation and dissipation
//!   identities of the continuum one. Pairs whose post-collision relative
//!   speed is below the lattice floor cannot absorb the splat spread and
//!   fall back to an exact no-op deposit.
//! * [`CollisionOperator::gain_sampled`] evaluates the gain integral
//!   pointwise by resampling `f, g` at the pre-collision velocities with
//!   multilinear interpolation (zero extension off the grid), weighting by
//!   `1/('e 'J)`. Impact speeds outside the invertible range of `theta` are
//!   skipped and accounted.
//!
//! The redistribution form drives the solver; the sampled form serves the
//! envelope checks and acts as an independent quadrature route in tests.
//!
//! Angular integrals use Gauss-Legendre panels aligned per pair so that the
//! `|u.n|` kink always sits on a panel boundary; a uniform rule on the
//! sphere would lose five to six digits there.

use crate::error::{Error, Result};
use crate::grid::{DistributionField, PhaseGrid, Representation};
use crate::kinematics::{dot, norm_sq, sub};
use crate::quad::{gauss_legendre, simpson};
use crate::restitution::{FastRestitution, RestitutionModel};
use std::sync::Arc;

/// Dimensional constant `C_n = 2/(n-1) |S^{n-2}|` of the loss-rate
/// convolution; `C_3 = 2 pi`, `C_2 = 4`.
pub fn dimensional_constant(n: usize) -> Result<f64> {
    match n {
        2 => Ok(4.0),
        3 => Ok(2.0 * std::f64::consts::PI),
        _ => Err(Error::UnsupportedDimension(n)),
    }
}

/// Envelope constant of the time-integrated gain bound,
/// `k = pi^{(n+1)/2} ||phi_beta||_inf / (alpha^{1/2} beta^{n/2})`.
///
/// The prefactor follows the proof chain: `sqrt(pi)/alpha^{1/2}` from the
/// free-streaming Gaussian time integral and `(pi/beta)^{n/2}` from the
/// Gaussian velocity integral. Any larger constant would also certify the
/// bound; this is the value the checks pin.
#[derive(Debug, Clone, Copy)]
pub struct CollisionConstants {
    pub c_n: f64,
    pub k_alpha_beta: f64,
    pub phi_sup: f64,
}

pub fn envelope_constant(
    alpha: f64,
    beta: f64,
    model: &RestitutionModel,
    n: usize,
) -> Result<CollisionConstants> {
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(Error::config("envelope", "alpha and beta must be positive"));
    }
    let c_n = dimensional_constant(n)?;
    let phi = model.phi_beta_sup(beta, n)?;
    if !phi.tail_certified || !phi.sup.is_finite() {
        return Err(Error::IntegrabilityFailure {
            detail: format!(
                "phi_beta sup estimate {:.6e} not certified (argmax {:.3e})",
                phi.sup, phi.argmax
            ),
        });
    }
    let prefactor = std::f64::consts::PI.powf((n as f64 + 1.0) / 2.0);
    let k = prefactor * phi.sup / (alpha.sqrt() * beta.powf(n as f64 / 2.0));
    Ok(CollisionConstants {
        c_n,
        k_alpha_beta: k,
        phi_sup: phi.sup,
    })
}

/// Quadrature nodes over the impact sphere, stored in frame coordinates
/// relative to the pair direction: `n_hat = axial*u_hat + ortho . frame`.
///
/// Nodes cover the half-sphere `u.n > 0` with weights doubled, which is
/// exact for the collision integrands (they are even in `n`). The axial
/// coordinate is a Gauss-Legendre node of `|cos|` panels split at the kink,
/// so `sum_k w_k axial_k = C_n` to machine precision.
#[derive(Debug, Clone)]
pub struct AngularQuadrature<const N: usize> {
    order: usize,
    /// `(frame coordinates, folded weight)`; coordinates[0] is axial.
    nodes: Vec<([f64; N], f64)>,
}

impl<const N: usize> AngularQuadrature<N> {
    /// Build a rule of the given order. For `n = 2` the order counts
    /// full-circle nodes (folded to order/2 stored nodes, split into two
    /// panels); for `n = 3` it is the azimuth count, with order/4 polar
    /// nodes.
    pub fn new(order: usize) -> Result<Self> {
        let mut nodes = Vec::new();
        match N {
            2 => {
                // At least 6 nodes per quarter panel: the pair-measure mass
                // identity needs the panel integral of cos to 1e-13.
                let per_panel = (order / 4).max(6);
                let (gn, gw) = gauss_legendre(per_panel);
                // psi in (-pi/2, 0) and (0, pi/2); weight folded x2.
                for (lo, hi) in [(-std::f64::consts::FRAC_PI_2, 0.0), (0.0, std::f64::consts::FRAC_PI_2)] {
                    let mid = 0.5 * (lo + hi);
                    let half = 0.5 * (hi - lo);
                    for (x, w) in gn.iter().zip(&gw) {
                        let psi = mid + half * x;
                        let mut coords = [0.0; N];
                        coords[0] = psi.cos();
                        coords[1] = psi.sin();
                        nodes.push((coords, 2.0 * w * half));
                    }
                }
            }
            3 => {
                let polar = (order / 4).max(6);
                let azimuth = order.max(8);
                let (gn, gw) = gauss_legendre(polar);
                let dphi = 2.0 * std::f64::consts::PI / azimuth as f64;
                let last = N - 1;
                for (zx, zw) in gn.iter().zip(&gw) {
                    // z = cos(theta) on (0, 1), folded.
                    let z = 0.5 * (zx + 1.0);
                    let r = (1.0 - z * z).max(0.0).sqrt();
                    for m in 0..azimuth {
                        let phi = (m as f64 + 0.5) * dphi;
                        let mut coords = [0.0; N];
                        coords[0] = z;
                        coords[1] = r * phi.cos();
                        coords[last] = r * phi.sin();
                        nodes.push((coords, 2.0 * (0.5 * zw) * dphi));
                    }
                }
            }
            _ => return Err(Error::UnsupportedDimension(N)),
        }
        Ok(AngularQuadrature { order, nodes })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn nodes(&self) -> &[([f64; N], f64)] {
        &self.nodes
    }

    /// Sum of folded weights; equals `|S^{n-1}|` for a valid rule.
    pub fn weight_sum(&self) -> f64 {
        self.nodes.iter().map(|(_, w)| w).sum()
    }

    /// Integral over the sphere of an even integrand `F(n) = F(-n)`,
    /// evaluated in the frame of `axis`.
    pub fn integrate_even(&self, axis: [f64; N], f: impl Fn([f64; N]) -> f64) -> f64 {
        let frame = orthonormal_frame(axis);
        let mut sum = 0.0;
        for (coords, w) in &self.nodes {
            let n_hat = frame_vector(&frame, *coords);
            sum += w * f(n_hat);
        }
        sum
    }
}

/// Deterministic orthonormal frame with the given first axis.
pub(crate) fn orthonormal_frame<const N: usize>(axis: [f64; N]) -> [[f64; N]; N] {
    let len = norm_sq(axis).sqrt();
    debug_assert!(len > 0.0);
    let u: [f64; N] = std::array::from_fn(|k| axis[k] / len);
    let mut frame = [[0.0; N]; N];
    frame[0] = u;
    if N == 2 {
        frame[1] = {
            let mut t = [0.0; N];
            t[0] = -u[1];
            t[1] = u[0];
            t
        };
    } else {
        // Pick the coordinate axis least aligned with u, orthogonalize.
        let mut least = 0;
        let mut least_val = f64::INFINITY;
        for k in 0..N {
            if u[k].abs() < least_val {
                least_val = u[k].abs();
                least = k;
            }
        }
        let mut e = [0.0; N];
        e[least] = 1.0;
        let proj = dot(e, u);
        let mut t1: [f64; N] = std::array::from_fn(|k| e[k] - proj * u[k]);
        let t1_len = norm_sq(t1).sqrt();
        for c in &mut t1 {
            *c /= t1_len;
        }
        frame[1] = t1;
        // t2 = u x t1 (this branch only runs for N = 3).
        let mut t2 = [0.0; N];
        for (k, slot) in t2.iter_mut().enumerate() {
            let a = (k + 1) % N;
            let b = (k + 2) % N;
            *slot = u[a] * t1[b] - u[b] * t1[a];
        }
        frame[N - 1] = t2;
    }
    frame
}

#[inline]
pub(crate) fn frame_vector<const N: usize>(frame: &[[f64; N]; N], coords: [f64; N]) -> [f64; N] {
    std::array::from_fn(|k| {
        let mut s = 0.0;
        for (row, c) in frame.iter().zip(coords) {
            s += c * row[k];
        }
        s
    })
}

/// Corner splat of a point onto the velocity lattice: up to `2^N` cells and
/// multilinear weights. Out-of-box corners are dropped and their weight
/// reported as clipped.
#[derive(Debug, Clone, Copy)]
struct Splat {
    cells: [u32; 8],
    weights: [f64; 8],
    count: usize,
    clipped: f64,
}

/// Counters for quadrature pathologies, reported per run.
#[derive(Debug, Clone, Copy, Default)]
pub struct QuadratureDiagnostics {
    /// Collision-measure weight whose deposit fell outside the velocity box.
    pub clipped_weight: f64,
    /// Gain-sample weight skipped because `theta^{-1}` was undefined.
    pub skipped_weight: f64,
    /// Total processed weight, for normalizing the two above.
    pub total_weight: f64,
    /// Entries that used the exact no-op fallback (sub-lattice relative speed).
    pub noop_entries: usize,
}

impl QuadratureDiagnostics {
    pub fn merge(&mut self, other: &QuadratureDiagnostics) {
        self.clipped_weight += other.clipped_weight;
        self.skipped_weight += other.skipped_weight;
        self.total_weight += other.total_weight;
        self.noop_entries += other.noop_entries;
    }

    /// Runs above this skipped/clipped fraction are not trustworthy.
    pub fn flagged(&self) -> bool {
        let t = self.total_weight.max(1e-300);
        (self.skipped_weight + self.clipped_weight) / t > 1e-3
    }
}

/// Precomputed redistribution stencil: one record per unordered velocity
/// pair and angular node, with the twin deposit splats.
struct ConservativeStencil {
    src_i: Vec<u32>,
    src_j: Vec<u32>,
    weight: Vec<f64>,
    /// `2 * 2^N` (cell, weight) slots per entry: first the deposit near the
    /// first particle's post velocity, then its twin.
    dep_cells: Vec<u32>,
    dep_weights: Vec<f64>,
    corners: usize,
    diagnostics: QuadratureDiagnostics,
}

/// Precomputed pre-collision sampling stencil for the interpolation route.
struct SampledStencil {
    out_cell: Vec<u32>,
    weight: Vec<f64>,
    /// `2 * 2^N` (cell, weight) slots per entry: interpolation corners of
    /// `'xi` then `'xi*`.
    src_cells: Vec<u32>,
    src_weights: Vec<f64>,
    corners: usize,
    diagnostics: QuadratureDiagnostics,
}

/// Collision operator bound to a grid, restitution model and angular rule.
pub struct CollisionOperator<const N: usize> {
    grid: Arc<PhaseGrid<N>>,
    model: RestitutionModel,
    quad: AngularQuadrature<N>,
    c_n: f64,
    /// Loss kernel `C_n |xi_i - xi_j| dxi^n`, dense over velocity cells.
    kernel: Vec<f64>,
    conservative: ConservativeStencil,
    sampled: Option<SampledStencil>,
}

impl<const N: usize> CollisionOperator<N> {
    /// Build the operator and its redistribution stencil. Set
    /// `with_sampling_stencil` when the interpolation route will be applied
    /// over full fields (it is memory-heavy and not needed by the solver).
    pub fn new(
        grid: &Arc<PhaseGrid<N>>,
        model: &RestitutionModel,
        quad: AngularQuadrature<N>,
        with_sampling_stencil: bool,
    ) -> Result<Self> {
        model.validate()?;
        let c_n = dimensional_constant(N)?;
        let xi_count = grid.xi_count();
        let centers = grid.xi_centers();
        let dv = grid.xi_cell_volume();

        let mut kernel = vec![0.0; xi_count * xi_count];
        for i in 0..xi_count {
            for j in 0..xi_count {
                kernel[i * xi_count + j] = c_n * norm_sq(sub(centers[i], centers[j])).sqrt() * dv;
            }
        }

        let fast = FastRestitution::new(model, 4.0 * grid.xi_extent() * (N as f64).sqrt());
        let conservative = build_conservative_stencil(grid, &fast, &quad);
        let sampled = if with_sampling_stencil {
            Some(build_sampled_stencil(grid, model, &fast, &quad))
        } else {
            None
        };

        Ok(CollisionOperator {
            grid: Arc::clone(grid),
            model: model.clone(),
            quad,
            c_n,
            kernel,
            conservative,
            sampled,
        })
    }

    pub fn grid(&self) -> &Arc<PhaseGrid<N>> {
        &self.grid
    }
    pub fn model(&self) -> &RestitutionModel {
        &self.model
    }
    pub fn angular(&self) -> &AngularQuadrature<N> {
        &self.quad
    }
    pub fn dimensional(&self) -> f64 {
        self.c_n
    }

    /// Build-time quadrature diagnostics of the redistribution stencil.
    pub fn stencil_diagnostics(&self) -> QuadratureDiagnostics {
        self.conservative.diagnostics
    }

    /// Loss rate `R(g)(xi) = C_n sum_j g_j |xi - xi_j| dxi^n` on one
    /// velocity slice.
    pub fn loss_rate(&self, g: &[f64]) -> Vec<f64> {
        let n = self.grid.xi_count();
        assert_eq!(g.len(), n);
        let mut out = vec![0.0; n];
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.kernel[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for (k, gv) in row.iter().zip(g) {
                acc += k * gv;
            }
            *o = acc;
        }
        out
    }

    /// Gain part `Q+(f,g)` on one velocity slice via conservative
    /// redistribution.
    pub fn gain(&self, f: &[f64], g: &[f64]) -> Vec<f64> {
        let n = self.grid.xi_count();
        assert_eq!(f.len(), n);
        assert_eq!(g.len(), n);
        let mut out = vec![0.0; n];
        let st = &self.conservative;
        let c = st.corners;
        let inv_dv = 1.0 / self.grid.xi_cell_volume();
        for e in 0..st.src_i.len() {
            let (i, j) = (st.src_i[e] as usize, st.src_j[e] as usize);
            let w = st.weight[e];
            let m_fwd = w * f[i] * g[j];
            let m_twin = w * f[j] * g[i];
            let base = e * 2 * c;
            for (slot, m) in [(0, m_fwd), (c, m_twin)] {
                for k in 0..c {
                    let idx = base + slot + k;
                    out[st.dep_cells[idx] as usize] += st.dep_weights[idx] * m;
                }
            }
        }
        for v in &mut out {
            *v *= inv_dv;
        }
        out
    }

    /// Gain part by pre-collision interpolation on one velocity slice,
    /// together with the skipped-weight accounting.
    pub fn gain_sampled(&self, f: &[f64], g: &[f64]) -> (Vec<f64>, QuadratureDiagnostics) {
        let n = self.grid.xi_count();
        assert_eq!(f.len(), n);
        assert_eq!(g.len(), n);
        let mut out = vec![0.0; n];
        let mut diag = QuadratureDiagnostics::default();
        let fast = FastRestitution::new(&self.model, 4.0 * self.grid.xi_extent() * (N as f64).sqrt());
        stream_sampled_entries(&self.grid, &self.model, &fast, &self.quad, &mut diag, |entry| {
            let fs = interp_value(f, &entry.src_a);
            let gs = interp_value(g, &entry.src_b);
            out[entry.out_cell] += entry.weight * fs * gs;
        });
        (out, diag)
    }

    /// Loss rate over a full lab-frame field: `R(g)(x, xi_i)` for every
    /// phase cell, computed as a dense kernel-matrix product with the
    /// position index streaming innermost.
    pub fn loss_rate_diag_batched(
        &self,
        g: &DistributionField<N>,
        out: &mut [f64],
        workers: usize,
    ) {
        assert_eq!(g.representation(), Representation::Lab);
        let x_count = self.grid.x_count();
        let xi_count = self.grid.xi_count();
        assert_eq!(out.len(), x_count * xi_count);
        let values = g.values();
        let kernel = &self.kernel;
        let rows = xi_count.div_ceil(workers.max(1));
        std::thread::scope(|scope| {
            for (t, out_chunk) in out.chunks_mut(rows * x_count).enumerate() {
                let lo = t * rows;
                scope.spawn(move || {
                    for (r, row_out) in out_chunk.chunks_mut(x_count).enumerate() {
                        let i = lo + r;
                        let krow = &kernel[i * xi_count..(i + 1) * xi_count];
                        row_out.iter_mut().for_each(|v| *v = 0.0);
                        for (j, &kv) in krow.iter().enumerate() {
                            if kv == 0.0 {
                                continue;
                            }
                            let src = &values[j * x_count..(j + 1) * x_count];
                            for (o, s) in row_out.iter_mut().zip(src) {
                                *o += kv * s;
                            }
                        }
                    }
                });
            }
        });
    }

    /// Apply the diagonal gain `Q+(h, h)` to a lab-frame field, batched over
    /// position cells. `out` must hold `xi_count * x_count` zeros.
    pub fn gain_diag_batched(&self, h: &DistributionField<N>, out: &mut [f64], workers: usize) {
        assert_eq!(h.representation(), Representation::Lab);
        let x_count = self.grid.x_count();
        assert_eq!(out.len(), x_count * self.grid.xi_count());
        let st = &self.conservative;
        let c = st.corners;
        let inv_dv = 1.0 / self.grid.xi_cell_volume();
        let values = h.values();

        // Threads own disjoint x-ranges; every output cell is accumulated in
        // stencil order, so results are identical for any worker count.
        let chunk = x_count.div_ceil(workers.max(1));
        let out_ptr = SendPtr(out.as_mut_ptr());
        std::thread::scope(|scope| {
            for t in 0..workers.max(1) {
                let lo = t * chunk;
                let hi = ((t + 1) * chunk).min(x_count);
                if lo >= hi {
                    continue;
                }
                let out_ptr = out_ptr;
                scope.spawn(move || {
                    let width = hi - lo;
                    let mut m_buf = vec![0.0; width];
                    for e in 0..st.src_i.len() {
                        let (i, j) = (st.src_i[e] as usize, st.src_j[e] as usize);
                        let w = st.weight[e];
                        let fi = &values[i * x_count + lo..i * x_count + hi];
                        let fj = &values[j * x_count + lo..j * x_count + hi];
                        for x in 0..width {
                            m_buf[x] = w * fi[x] * fj[x];
                        }
                        // Diagonal application: both twin deposits carry the
                        // same measure f_i f_j w.
                        let base = e * 2 * c;
                        for k in 0..2 * c {
                            let idx = base + k;
                            let dw = st.dep_weights[idx];
                            if dw == 0.0 {
                                continue;
                            }
                            let cell = st.dep_cells[idx] as usize;
                            // Safety: this thread exclusively owns columns
                            // [lo, hi) of every output row.
                            let dst = unsafe {
                                std::slice::from_raw_parts_mut(
                                    out_ptr.get().add(cell * x_count + lo),
                                    width,
                                )
                            };
                            for x in 0..width {
                                dst[x] += dw * m_buf[x];
                            }
                        }
                    }
                });
            }
        });
        for v in out.iter_mut() {
            *v *= inv_dv;
        }
    }

    /// Apply the interpolation-route diagonal gain to a lab-frame field,
    /// batched over position cells. Requires the sampling stencil.
    pub fn gain_sampled_diag_batched(
        &self,
        h: &DistributionField<N>,
        out: &mut [f64],
        workers: usize,
    ) -> QuadratureDiagnostics {
        let st = self
            .sampled
            .as_ref()
            .expect("operator built without the sampling stencil");
        assert_eq!(h.representation(), Representation::Lab);
        let x_count = self.grid.x_count();
        assert_eq!(out.len(), x_count * self.grid.xi_count());
        let c = st.corners;
        let values = h.values();
        let chunk = x_count.div_ceil(workers.max(1));
        let out_ptr = SendPtr(out.as_mut_ptr());
        std::thread::scope(|scope| {
            for t in 0..workers.max(1) {
                let lo = t * chunk;
                let hi = ((t + 1) * chunk).min(x_count);
                if lo >= hi {
                    continue;
                }
                let out_ptr = out_ptr;
                scope.spawn(move || {
                    let width = hi - lo;
                    let mut fa = vec![0.0; width];
                    let mut fb = vec![0.0; width];
                    for e in 0..st.out_cell.len() {
                        let w = st.weight[e];
                        let base = e * 2 * c;
                        fa.iter_mut().for_each(|v| *v = 0.0);
                        fb.iter_mut().for_each(|v| *v = 0.0);
                        for k in 0..c {
                            let ia = base + k;
                            let wa = st.src_weights[ia];
                            if wa != 0.0 {
                                let row =
                                    &values[st.src_cells[ia] as usize * x_count + lo..][..width];
                                for x in 0..width {
                                    fa[x] += wa * row[x];
                                }
                            }
                            let ib = base + c + k;
                            let wb = st.src_weights[ib];
                            if wb != 0.0 {
                                let row =
                                    &values[st.src_cells[ib] as usize * x_count + lo..][..width];
                                for x in 0..width {
                                    fb[x] += wb * row[x];
                                }
                            }
                        }
                        let cell = st.out_cell[e] as usize;
                        let dst = unsafe {
                            std::slice::from_raw_parts_mut(out_ptr.get().add(cell * x_count + lo), width)
                        };
                        for x in 0..width {
                            dst[x] += w * fa[x] * fb[x];
                        }
                    }
                });
            }
        });
        st.diagnostics
    }

    pub fn has_sampling_stencil(&self) -> bool {
        self.sampled.is_some()
    }
}

#[derive(Clone, Copy)]
struct SendPtr(*mut f64);
unsafe impl Send for SendPtr {}
unsafe impl Sync for SendPtr {}

impl SendPtr {
    /// Method access keeps closures capturing the wrapper, not the raw field.
    fn get(self) -> *mut f64 {
        self.0
    }
}

/// One streamed interpolation-route entry.
struct SampledEntry {
    out_cell: usize,
    weight: f64,
    src_a: Splat,
    src_b: Splat,
}

fn splat<const N: usize>(grid: &PhaseGrid<N>, p: [f64; N]) -> Splat {
    let nxi = grid.xi_cells_per_axis();
    let d = grid.dxi();
    let l = grid.xi_extent();
    let mut base = [0isize; N];
    let mut frac = [0.0; N];
    for k in 0..N {
        let q = (p[k] + l) / d - 0.5;
        let fl = q.floor();
        base[k] = fl as isize;
        frac[k] = q - fl;
    }
    let corners = 1usize << N;
    let mut out = Splat {
        cells: [0; 8],
        weights: [0.0; 8],
        count: corners,
        clipped: 0.0,
    };
    for corner in 0..corners {
        let mut w = 1.0;
        let mut flat = 0usize;
        let mut valid = true;
        for k in 0..N {
            let up = (corner >> (N - 1 - k)) & 1;
            let idx = base[k] + up as isize;
            if idx < 0 || idx >= nxi as isize {
                valid = false;
            }
            w *= if up == 1 { frac[k] } else { 1.0 - frac[k] };
            flat = flat * nxi + idx.clamp(0, nxi as isize - 1) as usize;
        }
        if valid {
            out.cells[corner] = flat as u32;
            out.weights[corner] = w;
        } else {
            out.clipped += w;
        }
    }
    out
}

#[inline]
fn interp_value(slice: &[f64], s: &Splat) -> f64 {
    let mut acc = 0.0;
    for k in 0..s.count {
        acc += s.weights[k] * slice[s.cells[k] as usize];
    }
    acc
}

/// Splat second moment about its own point: `sum_k delta_k(1-delta_k) d^2`
/// per axis, the minimum for any nonnegative lattice deposit reproducing
/// the point.
fn splat_spread<const N: usize>(grid: &PhaseGrid<N>, p: [f64; N]) -> f64 {
    let d = grid.dxi();
    let l = grid.xi_extent();
    let mut s = 0.0;
    for pk in p.iter().take(N) {
        let q = (pk + l) / d - 0.5;
        let frac = q - q.floor();
        s += frac * (1.0 - frac) * d * d;
    }
    s
}

fn build_conservative_stencil<const N: usize>(
    grid: &Arc<PhaseGrid<N>>,
    fast: &FastRestitution,
    quad: &AngularQuadrature<N>,
) -> ConservativeStencil {
    let centers = grid.xi_centers();
    let xi_count = centers.len();
    let dv = grid.xi_cell_volume();
    let corners = 1usize << N;
    let mut st = ConservativeStencil {
        src_i: Vec::new(),
        src_j: Vec::new(),
        weight: Vec::new(),
        dep_cells: Vec::new(),
        dep_weights: Vec::new(),
        corners,
        diagnostics: QuadratureDiagnostics::default(),
    };
    for i in 0..xi_count {
        for j in (i + 1)..xi_count {
            let u = sub(centers[i], centers[j]);
            let u_norm = norm_sq(u).sqrt();
            let frame = orthonormal_frame(u);
            let cm: [f64; N] = std::array::from_fn(|k| 0.5 * (centers[i][k] + centers[j][k]));
            for (coords, aw) in quad.nodes() {
                let n_hat = frame_vector(&frame, *coords);
                let un = u_norm * coords[0];
                let e = fast.eval_e(un);
                let c = 0.5 * (1.0 + e) * un;
                let xi_post: [f64; N] = std::array::from_fn(|k| centers[i][k] - c * n_hat[k]);
                // Half post-collision relative velocity.
                let h: [f64; N] = std::array::from_fn(|k| xi_post[k] - cm[k]);
                let rel_energy = 2.0 * norm_sq(h);
                let weight = aw * un * dv * dv;
                st.diagnostics.total_weight += 2.0 * weight;

                let g_at = |s: f64| {
                    let p: [f64; N] = std::array::from_fn(|k| cm[k] + s * h[k]);
                    let q: [f64; N] = std::array::from_fn(|k| cm[k] - s * h[k]);
                    s * s * rel_energy + splat_spread(grid, p) + splat_spread(grid, q) - rel_energy
                };

                let entry = st.src_i.len();
                st.src_i.push(i as u32);
                st.src_j.push(j as u32);
                st.weight.push(weight);
                st.dep_cells.resize((entry + 1) * 2 * corners, 0);
                st.dep_weights.resize((entry + 1) * 2 * corners, 0.0);

                let g1 = g_at(1.0);
                let feasible = g_at(0.0) <= 0.0;
                if !feasible {
                    // Sub-lattice relative speed: exact no-op deposit back at
                    // the source cells.
                    st.diagnostics.noop_entries += 1;
                    let base = entry * 2 * corners;
                    st.dep_cells[base] = i as u32;
                    st.dep_weights[base] = 1.0;
                    st.dep_cells[base + corners] = j as u32;
                    st.dep_weights[base + corners] = 1.0;
                    continue;
                }
                let s_fix = if g1 <= 0.0 {
                    1.0
                } else {
                    let (mut lo, mut hi) = (0.0, 1.0);
                    for _ in 0..70 {
                        let mid = 0.5 * (lo + hi);
                        if g_at(mid) <= 0.0 {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    0.5 * (lo + hi)
                };
                let p: [f64; N] = std::array::from_fn(|k| cm[k] + s_fix * h[k]);
                let q: [f64; N] = std::array::from_fn(|k| cm[k] - s_fix * h[k]);
                let sp = splat(grid, p);
                let sq = splat(grid, q);
                st.diagnostics.clipped_weight += (sp.clipped + sq.clipped) * weight;
                let base = entry * 2 * corners;
                for k in 0..corners {
                    st.dep_cells[base + k] = sp.cells[k];
                    st.dep_weights[base + k] = sp.weights[k];
                    st.dep_cells[base + corners + k] = sq.cells[k];
                    st.dep_weights[base + corners + k] = sq.weights[k];
                }
            }
        }
    }
    st
}

fn stream_sampled_entries<const N: usize>(
    grid: &Arc<PhaseGrid<N>>,
    model: &RestitutionModel,
    fast: &FastRestitution,
    quad: &AngularQuadrature<N>,
    diag: &mut QuadratureDiagnostics,
    mut sink: impl FnMut(SampledEntry),
) {
    let centers = grid.xi_centers();
    let xi_count = centers.len();
    let dv = grid.xi_cell_volume();
    for o in 0..xi_count {
        for j in 0..xi_count {
            if o == j {
                continue;
            }
            let u = sub(centers[o], centers[j]);
            let u_norm = norm_sq(u).sqrt();
            let frame = orthonormal_frame(u);
            for (coords, aw) in quad.nodes() {
                let n_hat = frame_vector(&frame, *coords);
                let un = u_norm * coords[0];
                let raw_weight = aw * un * dv;
                diag.total_weight += raw_weight;
                // Invert theta; out-of-range impact speeds are skipped and
                // accounted.
                let w_pre = match model.theta_inv(un) {
                    Ok(w) => w,
                    Err(_) => {
                        diag.skipped_weight += raw_weight;
                        continue;
                    }
                };
                let e_pre = fast.eval_e(w_pre);
                let j_pre = fast.jacobian(w_pre);
                let c = 0.5 * (1.0 + e_pre) * w_pre;
                let xi_pre: [f64; N] = std::array::from_fn(|k| centers[o][k] - c * n_hat[k]);
                let xi_star_pre: [f64; N] = std::array::from_fn(|k| centers[j][k] + c * n_hat[k]);
                let src_a = splat(grid, xi_pre);
                let src_b = splat(grid, xi_star_pre);
                diag.clipped_weight += (src_a.clipped.min(1.0) + src_b.clipped.min(1.0)) * raw_weight;
                sink(SampledEntry {
                    out_cell: o,
                    weight: raw_weight / (e_pre * j_pre),
                    src_a,
                    src_b,
                });
            }
        }
    }
}

fn build_sampled_stencil<const N: usize>(
    grid: &Arc<PhaseGrid<N>>,
    model: &RestitutionModel,
    fast: &FastRestitution,
    quad: &AngularQuadrature<N>,
) -> SampledStencil {
    let corners = 1usize << N;
    let mut st = SampledStencil {
        out_cell: Vec::new(),
        weight: Vec::new(),
        src_cells: Vec::new(),
        src_weights: Vec::new(),
        corners,
        diagnostics: QuadratureDiagnostics::default(),
    };
    let mut diag = QuadratureDiagnostics::default();
    stream_sampled_entries(grid, model, fast, quad, &mut diag, |entry| {
        st.out_cell.push(entry.out_cell as u32);
        st.weight.push(entry.weight);
        for k in 0..corners {
            st.src_cells.push(entry.src_a.cells[k]);
            st.src_weights.push(entry.src_a.weights[k]);
        }
        for k in 0..corners {
            st.src_cells.push(entry.src_b.cells[k]);
            st.src_weights.push(entry.src_b.weights[k]);
        }
    });
    st.diagnostics = diag;
    st
}

/// One sample for the free-streaming Gaussian time-integral bound.
#[derive(Debug, Clone, Copy)]
pub struct TimeBoundSample<const N: usize> {
    pub x: [f64; N],
    pub xi: [f64; N],
    pub xi_star: [f64; N],
    pub n_hat: [f64; N],
    pub alpha: f64,
    pub t: f64,
}

/// Outcome of a bound sweep.
#[derive(Debug, Clone)]
pub struct BoundSweepReport {
    pub samples: usize,
    pub violations: usize,
    pub max_ratio: f64,
    pub details: Vec<String>,
}

/// Verify, sample by sample, that the time integral of the product of
/// free-streamed Gaussians at the pre-collision velocities stays below
/// `sqrt(pi) / (alpha^{1/2} |u|) exp(-alpha |x|^2)`.
///
/// The left side is integrated with composite Simpson quadrature (1e4
/// intervals); a violation would indicate a broken pre-collision inversion.
pub fn verify_time_gaussian_bound<const N: usize>(
    samples: &[TimeBoundSample<N>],
    model: &RestitutionModel,
) -> Result<BoundSweepReport> {
    let mut report = BoundSweepReport {
        samples: samples.len(),
        violations: 0,
        max_ratio: 0.0,
        details: Vec::new(),
    };
    for s in samples {
        let pair = crate::kinematics::VelocityPair::new(s.xi, s.xi_star);
        let dir = crate::kinematics::ImpactDirection::new(s.n_hat);
        let pre = crate::kinematics::pre_collide(&pair, &dir, model)?;
        let b: [f64; N] = sub(s.xi, pre.xi);
        let b_star: [f64; N] = sub(s.xi, pre.xi_star);
        let u = sub(s.xi, s.xi_star);
        let u_norm = norm_sq(u).sqrt();
        let alpha = s.alpha;
        let mut integrand = |tau: f64| {
            let p: [f64; N] = std::array::from_fn(|k| s.x[k] + tau * b[k]);
            let q: [f64; N] = std::array::from_fn(|k| s.x[k] + tau * b_star[k]);
            (-alpha * norm_sq(p) - alpha * norm_sq(q)).exp()
        };
        let lhs = simpson(&mut integrand, 0.0, s.t, 10_000);
        let rhs =
            std::f64::consts::PI.sqrt() / (alpha.sqrt() * u_norm) * (-alpha * norm_sq(s.x)).exp();
        let ratio = lhs / rhs;
        if ratio > report.max_ratio {
            report.max_ratio = ratio;
        }
        if lhs > rhs * (1.0 + 1e-9) {
            report.violations += 1;
            if report.details.len() < 8 {
                report
                    .details
                    .push(format!("lhs {lhs:.6e} > rhs {rhs:.6e} at x={:?}", s.x));
            }
        }
    }
    Ok(report)
}

/// Report of the cellwise gain-envelope verification.
#[derive(Debug, Clone)]
pub struct EnvelopeBoundReport {
    pub k_alpha_beta: f64,
    pub norm: f64,
    pub max_ratio: f64,
    pub violations: usize,
    pub cells: usize,
    pub diagnostics: QuadratureDiagnostics,
}

/// Verify the time-integrated gain envelope: for a time-constant sharp field
/// `f`, check cellwise that `int_0^T |Q+^#(f,f)| dtau` stays below
/// `slack * k_{alpha,beta} * exp(-alpha|x|^2 - beta|xi|^2) * ||f||^2`.
///
/// The `tau` integral uses composite Simpson on `tau_intervals` panels; the
/// gain at each node is evaluated on the freely-streamed field with the
/// pre-collision interpolation route.
#[allow(clippy::too_many_arguments)]
pub fn verify_gain_envelope<const N: usize>(
    f_sharp: &DistributionField<N>,
    alpha: f64,
    beta: f64,
    horizon: f64,
    op: &CollisionOperator<N>,
    tau_intervals: usize,
    slack: f64,
    workers: usize,
) -> Result<EnvelopeBoundReport> {
    assert_eq!(f_sharp.representation(), Representation::Sharp);
    let grid = op.grid();
    let consts = envelope_constant(alpha, beta, op.model(), N)?;
    let norm = f_sharp.maxwellian_norm(alpha, beta);
    let n_tau = tau_intervals.max(2).next_multiple_of(2);
    let dtau = horizon / n_tau as f64;
    let cell_total = grid.cell_count();
    let mut integral = vec![0.0; cell_total];
    let mut diag = QuadratureDiagnostics::default();
    let mut scratch = vec![0.0; cell_total];
    for node in 0..=n_tau {
        let tau = node as f64 * dtau;
        let lab = f_sharp.unsharp_transform(tau);
        scratch.iter_mut().for_each(|v| *v = 0.0);
        let d = op.gain_sampled_diag_batched(&lab, &mut scratch, workers);
        diag.merge(&d);
        // Back to sharp coordinates before accumulating.
        let mut q_lab = DistributionField::zeros(grid, tau, Representation::Lab);
        q_lab.values_mut().copy_from_slice(&scratch);
        let q_sharp = q_lab.sharp_transform(tau);
        let w = simpson_weight(node, n_tau) * dtau;
        for (acc, v) in integral.iter_mut().zip(q_sharp.values()) {
            *acc += w * v;
        }
    }

    let x_count = grid.x_count();
    let mut max_ratio = 0.0f64;
    let mut violations = 0usize;
    for xi_flat in 0..grid.xi_count() {
        let xi_sq = norm_sq(grid.xi_center(xi_flat));
        for x_flat in 0..x_count {
            let x_sq = norm_sq(grid.x_center(x_flat));
            let bound =
                consts.k_alpha_beta * (-alpha * x_sq - beta * xi_sq).exp() * norm * norm;
            let lhs = integral[xi_flat * x_count + x_flat];
            let ratio = lhs / bound;
            if ratio > max_ratio {
                max_ratio = ratio;
            }
            if lhs > slack * bound {
                violations += 1;
            }
        }
    }
    Ok(EnvelopeBoundReport {
        k_alpha_beta: consts.k_alpha_beta,
        norm,
        max_ratio,
        violations,
        cells: cell_total,
        diagnostics: diag,
    })
}

fn simpson_weight(node: usize, n: usize) -> f64 {
    if node == 0 || node == n {
        1.0 / 3.0
    } else if node % 2 == 1 {
        4.0 / 3.0
    } else {
        2.0 / 3.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{DistributionField, PhaseGrid, Representation};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn op2(
        nxi: usize,
        model: RestitutionModel,
        order: usize,
        sampled: bool,
    ) -> CollisionOperator<2> {
        let grid = PhaseGrid::<2>::new(5.3, 5.3, 4, nxi).unwrap();
        CollisionOperator::new(&grid, &model, AngularQuadrature::<2>::new(order).unwrap(), sampled)
            .unwrap()
    }

    fn maxwellian_slice(grid: &PhaseGrid<2>, amp: f64, beta: f64) -> Vec<f64> {
        (0..grid.xi_count())
            .map(|i| amp * (-beta * norm_sq(grid.xi_center(i))).exp())
            .collect()
    }

    #[test]
    fn dimensional_constants() {
        assert_eq!(dimensional_constant(2).unwrap(), 4.0);
        assert_eq!(dimensional_constant(3).unwrap(), 2.0 * PI);
        assert!(dimensional_constant(4).is_err());
    }

    #[test]
    fn angular_weights_sum_to_sphere_surface() {
        let q2 = AngularQuadrature::<2>::new(24).unwrap();
        assert!((q2.weight_sum() - 2.0 * PI).abs() < 1e-10);
        let q3 = AngularQuadrature::<3>::new(32).unwrap();
        assert!((q3.weight_sum() - 4.0 * PI).abs() < 1e-10);
    }

    #[test]
    fn angular_rule_reproduces_dimensional_constant() {
        // int_{S^{n-1}} |u_hat . n| dn = C_n, with the kink on a panel edge.
        let q2 = AngularQuadrature::<2>::new(16).unwrap();
        let u = [0.3, -0.9];
        let norm = norm_sq(u).sqrt();
        let got2 = q2.integrate_even(u, |n| (u[0] * n[0] + u[1] * n[1]).abs() / norm);
        assert!((got2 - 4.0).abs() < 1e-8, "C_2 quadrature: {got2}");

        let q3 = AngularQuadrature::<3>::new(32).unwrap();
        let v = [0.2, 0.5, -0.8];
        let vn = norm_sq(v).sqrt();
        let got3 = q3.integrate_even(v, |n| (v[0] * n[0] + v[1] * n[1] + v[2] * n[2]).abs() / vn);
        assert!((got3 - 2.0 * PI).abs() < 1e-8, "C_3 quadrature: {got3}");
    }

    #[test]
    fn loss_rate_of_zero_is_zero() {
        let op = op2(8, RestitutionModel::Elastic, 8, false);
        let g = vec![0.0; op.grid().xi_count()];
        assert!(op.loss_rate(&g).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn loss_rate_single_cell_is_kernel_column() {
        let op = op2(8, RestitutionModel::Elastic, 8, false);
        let grid = op.grid().clone();
        let mut g = vec![0.0; grid.xi_count()];
        let j = 11;
        g[j] = 2.5;
        let r = op.loss_rate(&g);
        let dv = grid.xi_cell_volume();
        for i in 0..grid.xi_count() {
            let want = 4.0 * 2.5 * dv * norm_sq(sub(grid.xi_center(i), grid.xi_center(j))).sqrt();
            assert!((r[i] - want).abs() < 1e-12 * want.max(1.0), "cell {i}");
        }
    }

    #[test]
    fn loss_rate_maxwellian_matches_radial_oracle() {
        // R at the innermost cell against a fine two-dimensional quadrature
        // of C_2 int exp(-beta |xi*|^2) |xi_c - xi*| dxi*.
        let op = op2(32, RestitutionModel::Elastic, 8, false);
        let grid = op.grid().clone();
        let beta = 1.0;
        let g = maxwellian_slice(&grid, 1.0, beta);
        let r = op.loss_rate(&g);
        // Innermost cell.
        let target = (0..grid.xi_count())
            .min_by(|&a, &b| {
                norm_sq(grid.xi_center(a))
                    .partial_cmp(&norm_sq(grid.xi_center(b)))
                    .unwrap()
            })
            .unwrap();
        let xc = grid.xi_center(target);
        // Oracle: midpoint rule on a 4x finer grid over a wider box.
        let fine = 260;
        let ext = 6.5;
        let d = 2.0 * ext / fine as f64;
        let mut oracle = 0.0;
        for a in 0..fine {
            for b in 0..fine {
                let p = [-ext + (a as f64 + 0.5) * d, -ext + (b as f64 + 0.5) * d];
                oracle += (-beta * norm_sq(p)).exp() * norm_sq(sub(xc, p)).sqrt() * d * d;
            }
        }
        oracle *= 4.0;
        assert!(
            ((r[target] - oracle) / oracle).abs() < 1e-2,
            "R = {}, oracle = {oracle}",
            r[target]
        );
    }

    #[test]
    fn gain_mass_matches_loss_mass_exactly() {
        // The redistribution route conserves the collision measure, so
        // gain and loss masses agree to rounding for any model.
        for model in [
            RestitutionModel::Elastic,
            RestitutionModel::Constant { e0: 0.5 },
            RestitutionModel::Viscoelastic { a: 0.5 },
        ] {
            let op = op2(16, model.clone(), 16, false);
            let grid = op.grid().clone();
            let f = maxwellian_slice(&grid, 0.7, 1.0);
            let g: Vec<f64> = (0..grid.xi_count())
                .map(|i| {
                    let xi = grid.xi_center(i);
                    (-(norm_sq(xi)) - 0.3 * xi[0]).exp()
                })
                .collect();
            let dv = grid.xi_cell_volume();
            let gain_mass: f64 = op.gain(&f, &g).iter().sum::<f64>() * dv;
            let loss = op.loss_rate(&g);
            let loss_mass: f64 =
                f.iter().zip(&loss).map(|(fv, rv)| fv * rv).sum::<f64>() * dv;
            let rel = ((gain_mass - loss_mass) / loss_mass).abs();
            assert!(rel < 1e-12, "{model:?}: gain {gain_mass}, loss {loss_mass}");
        }
    }

    #[test]
    fn gain_momentum_and_energy_identities() {
        let grid = PhaseGrid::<2>::new(5.3, 5.3, 4, 16).unwrap();
        let f = maxwellian_slice(&grid, 0.9, 1.0);
        let dv = grid.xi_cell_volume();
        let moments = |q: &[f64]| {
            let mut mass = 0.0;
            let mut px = 0.0;
            let mut py = 0.0;
            let mut en = 0.0;
            for (i, v) in q.iter().enumerate() {
                let xi = grid.xi_center(i);
                mass += v;
                px += v * xi[0];
                py += v * xi[1];
                en += v * norm_sq(xi);
            }
            (mass * dv, px * dv, py * dv, en * dv)
        };
        for (model, elastic) in [
            (RestitutionModel::Elastic, true),
            (RestitutionModel::Constant { e0: 0.5 }, false),
        ] {
            let op = CollisionOperator::new(
                &grid,
                &model,
                AngularQuadrature::<2>::new(16).unwrap(),
                false,
            )
            .unwrap();
            let q_plus = op.gain(&f, &f);
            let r = op.loss_rate(&f);
            let q_minus: Vec<f64> = f.iter().zip(&r).map(|(a, b)| a * b).collect();
            let (mp, pxp, pyp, ep) = moments(&q_plus);
            let (mm, pxm, pym, em) = moments(&q_minus);
            let scale = mm.max(1e-300);
            assert!(((mp - mm) / scale).abs() < 1e-12, "{model:?} mass");
            assert!((pxp - pxm).abs() < 1e-12 * scale, "{model:?} px");
            assert!((pyp - pym).abs() < 1e-12 * scale, "{model:?} py");
            if elastic {
                assert!(
                    ((ep - em) / em).abs() < 1e-11,
                    "elastic energy moment: gain {ep}, loss {em}"
                );
            } else {
                assert!(
                    ep < em * (1.0 + 1e-12),
                    "inelastic gain energy {ep} must not exceed loss energy {em}"
                );
                assert!(em - ep > 1e-3 * em, "dissipation should be macroscopic");
            }
        }
    }

    #[test]
    fn gain_is_bilinear_and_nonnegative() {
        let op = op2(12, RestitutionModel::Constant { e0: 0.7 }, 12, false);
        let grid = op.grid().clone();
        let f = maxwellian_slice(&grid, 1.0, 0.8);
        let g = maxwellian_slice(&grid, 0.5, 1.3);
        let q = op.gain(&f, &g);
        assert!(q.iter().all(|&v| v >= 0.0));
        let fa: Vec<f64> = f.iter().map(|v| 2.0 * v).collect();
        let gb: Vec<f64> = g.iter().map(|v| 3.0 * v).collect();
        let q_scaled = op.gain(&fa, &gb);
        for (a, b) in q.iter().zip(&q_scaled) {
            assert!((6.0 * a - b).abs() <= 1e-13 * b.abs().max(1e-300), "{a} {b}");
        }
    }

    #[test]
    fn gain_is_monotone_in_its_arguments() {
        let op = op2(10, RestitutionModel::Constant { e0: 0.6 }, 12, false);
        let grid = op.grid().clone();
        let f = maxwellian_slice(&grid, 0.5, 1.0);
        let g: Vec<f64> = f.iter().map(|v| v * 1.25 + 1e-3).collect();
        let qf = op.gain(&f, &f);
        let qg = op.gain(&g, &g);
        for (a, b) in qf.iter().zip(&qg) {
            assert!(a <= b, "monotonicity violated: {a} > {b}");
        }
    }

    #[test]
    fn two_cell_gain_mass_matches_pair_rate() {
        let op = op2(16, RestitutionModel::Constant { e0: 0.5 }, 24, false);
        let grid = op.grid().clone();
        let mut f = vec![0.0; grid.xi_count()];
        // Two occupied cells, arbitrary values.
        let i = grid.xi_index([4, 8]);
        let j = grid.xi_index([11, 8]);
        f[i] = 1.7;
        f[j] = 0.9;
        let dv = grid.xi_cell_volume();
        let u = norm_sq(sub(grid.xi_center(i), grid.xi_center(j))).sqrt();
        // Ordered pairs (i,j) and (j,i), each with angular integral C_2 |u|.
        let want = 2.0 * f[i] * f[j] * dv * dv * 4.0 * u;
        let got: f64 = op.gain(&f, &f).iter().sum::<f64>() * dv;
        assert!(
            ((got - want) / want).abs() < 1e-10,
            "pair gain mass {got}, analytic {want}"
        );
    }

    #[test]
    fn sampled_gain_agrees_with_redistribution_within_discretization() {
        let op = op2(32, RestitutionModel::Elastic, 64, false);
        let grid = op.grid().clone();
        let f = maxwellian_slice(&grid, 1.0, 1.0);
        let dv = grid.xi_cell_volume();
        let q_cons = op.gain(&f, &f);
        let (q_samp, diag) = op.gain_sampled(&f, &f);
        assert!(!diag.flagged(), "skips {:?}", diag);
        let mass_cons: f64 = q_cons.iter().sum::<f64>() * dv;
        let mass_samp: f64 = q_samp.iter().sum::<f64>() * dv;
        assert!(
            ((mass_cons - mass_samp) / mass_cons).abs() < 0.02,
            "route masses differ: {mass_cons} vs {mass_samp}"
        );
        // L1 distance of the fields stays at the few-percent level.
        let l1: f64 = q_cons
            .iter()
            .zip(&q_samp)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            * dv;
        assert!(l1 / mass_cons < 0.15, "route L1 distance {l1} vs mass {mass_cons}");
    }

    #[test]
    fn sampled_gain_counts_skips_for_saturating_theta() {
        // theta saturates at 1 for this model, so most grid impact speeds
        // cannot be inverted and the run must be flagged.
        let op = op2(
            12,
            RestitutionModel::MonotoneDecreasing { a: 1.0, gamma: 1.0 },
            8,
            false,
        );
        let grid = op.grid().clone();
        let f = maxwellian_slice(&grid, 1.0, 1.0);
        let (_, diag) = op.gain_sampled(&f, &f);
        assert!(diag.skipped_weight > 0.0);
        assert!(diag.flagged());
    }

    #[test]
    fn envelope_constant_elastic_3d() {
        let c = envelope_constant(1.0, 1.0, &RestitutionModel::Elastic, 3).unwrap();
        let want = 4.0 * PI.powi(3);
        assert!(
            ((c.k_alpha_beta - want) / want).abs() < 1e-9,
            "k = {}, want 4 pi^3 = {want}",
            c.k_alpha_beta
        );
    }

    #[test]
    fn envelope_constant_alpha_scaling() {
        let m = RestitutionModel::Elastic;
        let k1 = envelope_constant(1.0, 1.0, &m, 2).unwrap().k_alpha_beta;
        let k4 = envelope_constant(4.0, 1.0, &m, 2).unwrap().k_alpha_beta;
        assert!((k4 - 0.5 * k1).abs() < 1e-12 * k1);
    }

    #[test]
    fn envelope_constant_grows_with_inelasticity() {
        let ke = envelope_constant(1.0, 1.0, &RestitutionModel::Elastic, 2)
            .unwrap()
            .k_alpha_beta;
        let kc = envelope_constant(1.0, 1.0, &RestitutionModel::Constant { e0: 0.8 }, 2)
            .unwrap()
            .k_alpha_beta;
        assert!(kc > ke, "k constant {kc} should exceed elastic {ke}");
    }

    #[test]
    fn time_gaussian_bound_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let models = [
            RestitutionModel::Elastic,
            RestitutionModel::Constant { e0: 0.5 },
            RestitutionModel::Viscoelastic { a: 0.5 },
        ];
        for model in &models {
            let mut samples = Vec::new();
            while samples.len() < 100 {
                let xi: [f64; 2] = std::array::from_fn(|_| rng.gen_range(-2.5..2.5));
                let xi_star: [f64; 2] = std::array::from_fn(|_| rng.gen_range(-2.5..2.5));
                if norm_sq(sub(xi, xi_star)) < 1e-2 {
                    continue;
                }
                let ang: f64 = rng.gen_range(0.0..2.0 * PI);
                samples.push(TimeBoundSample {
                    x: std::array::from_fn(|_| rng.gen_range(-2.0..2.0)),
                    xi,
                    xi_star,
                    n_hat: [ang.cos(), ang.sin()],
                    alpha: rng.gen_range(0.3..2.0),
                    t: rng.gen_range(0.5..10.0),
                });
            }
            let report = verify_time_gaussian_bound(&samples, model).unwrap();
            assert_eq!(report.violations, 0, "{model:?}: {:?}", report.details);
            assert!(report.max_ratio <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn head_on_time_bound_example() {
        let s = TimeBoundSample {
            x: [0.7, -0.2],
            xi: [1.0, 0.0],
            xi_star: [-1.0, 0.0],
            n_hat: [1.0, 0.0],
            alpha: 1.0,
            t: 10.0,
        };
        let r = verify_time_gaussian_bound(&[s], &RestitutionModel::Elastic).unwrap();
        assert_eq!(r.violations, 0);
    }

    #[test]
    fn gain_envelope_bound_small_grid() {
        // Desk-size version of the envelope criterion; the acceptance suite
        // runs the full grid.
        let grid = PhaseGrid::<2>::new(5.3, 5.3, 8, 8).unwrap();
        let model = RestitutionModel::Elastic;
        let op = CollisionOperator::new(
            &grid,
            &model,
            AngularQuadrature::<2>::new(16).unwrap(),
            true,
        )
        .unwrap();
        let f = DistributionField::maxwellian(&grid, 0.1, 1.0, 1.0, Representation::Sharp);
        let report = verify_gain_envelope(&f, 1.0, 1.0, 1.0, &op, 16, 1.1, 1).unwrap();
        assert_eq!(
            report.violations, 0,
            "max ratio {:.3} of bound",
            report.max_ratio
        );
        assert!(report.max_ratio < 1.0, "expected real margin, got {}", report.max_ratio);
    }

    #[test]
    fn batched_gain_matches_slice_gain() {
        let grid = PhaseGrid::<2>::new(5.3, 5.3, 4, 10).unwrap();
        let model = RestitutionModel::Constant { e0: 0.8 };
        let op = CollisionOperator::new(
            &grid,
            &model,
            AngularQuadrature::<2>::new(12).unwrap(),
            false,
        )
        .unwrap();
        let field = DistributionField::from_fn(&grid, 0.0, Representation::Lab, |x, xi| {
            (-norm_sq(x) - norm_sq(xi)).exp() * (1.0 + 0.2 * (x[0] + xi[1]).sin())
        });
        let mut out = vec![0.0; grid.cell_count()];
        op.gain_diag_batched(&field, &mut out, 1);
        // Compare one x-column against the slice API.
        let x_flat = 7;
        let slice: Vec<f64> = (0..grid.xi_count()).map(|v| field.at(x_flat, v)).collect();
        let q_slice = op.gain(&slice, &slice);
        for v in 0..grid.xi_count() {
            let a = out[v * grid.x_count() + x_flat];
            let b = q_slice[v];
            assert!(
                (a - b).abs() <= 1e-13 * b.abs().max(1e-300),
                "cell {v}: batched {a}, slice {b}"
            );
        }
        // Worker count must not change the result.
        let mut out2 = vec![0.0; grid.cell_count()];
        op.gain_diag_batched(&field, &mut out2, 3);
        assert_eq!(out, out2);
    }
}
