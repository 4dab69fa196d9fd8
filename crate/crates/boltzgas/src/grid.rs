//! Phase-space discretization: uniform Cartesian grids over position and
//! velocity, distribution fields, Maxwellian-weighted norms, the transform
//! to and from trajectory ("sharp") coordinates, and moment functionals.
//!
//! Storage layout is velocity-major with the position index contiguous:
//! `values[xi_flat * x_count + x_flat]`. The collision quadratures sweep
//! their velocity stencil once while streaming over the position block, so
//! the x-inner layout is what keeps them cache-friendly.

use crate::error::{Error, Result};
use crate::kinematics::norm_sq;
use std::io::{BufRead, Write};
use std::sync::Arc;

/// Default cap on field storage (bytes per field).
const DEFAULT_MEMORY_BUDGET: usize = 2 << 30;

/// Uniform Cartesian discretization of `[-L_x, L_x]^n x [-L_xi, L_xi]^n`
/// with cell-centered nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseGrid<const N: usize> {
    x_extent: f64,
    xi_extent: f64,
    x_cells_per_axis: usize,
    xi_cells_per_axis: usize,
}

impl<const N: usize> PhaseGrid<N> {
    pub fn new(
        x_extent: f64,
        xi_extent: f64,
        x_cells_per_axis: usize,
        xi_cells_per_axis: usize,
    ) -> Result<Arc<Self>> {
        if N != 2 && N != 3 {
            return Err(Error::UnsupportedDimension(N));
        }
        if !(x_extent > 0.0) || !(xi_extent > 0.0) {
            return Err(Error::config("grid.extent", "extents must be positive"));
        }
        if x_cells_per_axis < 4 || xi_cells_per_axis < 4 {
            return Err(Error::config("grid.cells", "need at least 4 cells per axis"));
        }
        let cells = (x_cells_per_axis * xi_cells_per_axis).pow(N as u32);
        if cells.checked_mul(8).map_or(true, |b| b > DEFAULT_MEMORY_BUDGET) {
            return Err(Error::config(
                "grid.cells",
                format!("{cells} phase cells exceed the memory budget"),
            ));
        }
        Ok(Arc::new(PhaseGrid {
            x_extent,
            xi_extent,
            x_cells_per_axis,
            xi_cells_per_axis,
        }))
    }

    pub fn x_extent(&self) -> f64 {
        self.x_extent
    }
    pub fn xi_extent(&self) -> f64 {
        self.xi_extent
    }
    pub fn x_cells_per_axis(&self) -> usize {
        self.x_cells_per_axis
    }
    pub fn xi_cells_per_axis(&self) -> usize {
        self.xi_cells_per_axis
    }
    pub fn dx(&self) -> f64 {
        2.0 * self.x_extent / self.x_cells_per_axis as f64
    }
    pub fn dxi(&self) -> f64 {
        2.0 * self.xi_extent / self.xi_cells_per_axis as f64
    }
    /// Number of position cells (`N_x^n`).
    pub fn x_count(&self) -> usize {
        self.x_cells_per_axis.pow(N as u32)
    }
    /// Number of velocity cells (`N_xi^n`).
    pub fn xi_count(&self) -> usize {
        self.xi_cells_per_axis.pow(N as u32)
    }
    pub fn cell_count(&self) -> usize {
        self.x_count() * self.xi_count()
    }
    /// Position-cell volume `dx^n`.
    pub fn x_cell_volume(&self) -> f64 {
        self.dx().powi(N as i32)
    }
    /// Velocity-cell volume `dxi^n`.
    pub fn xi_cell_volume(&self) -> f64 {
        self.dxi().powi(N as i32)
    }
    pub fn phase_cell_volume(&self) -> f64 {
        self.x_cell_volume() * self.xi_cell_volume()
    }

    #[inline]
    pub fn x_index(&self, multi: [usize; N]) -> usize {
        let mut flat = 0;
        for m in multi {
            debug_assert!(m < self.x_cells_per_axis);
            flat = flat * self.x_cells_per_axis + m;
        }
        flat
    }

    #[inline]
    pub fn xi_index(&self, multi: [usize; N]) -> usize {
        let mut flat = 0;
        for m in multi {
            debug_assert!(m < self.xi_cells_per_axis);
            flat = flat * self.xi_cells_per_axis + m;
        }
        flat
    }

    #[inline]
    pub fn x_multi(&self, mut flat: usize) -> [usize; N] {
        let mut multi = [0; N];
        for k in (0..N).rev() {
            multi[k] = flat % self.x_cells_per_axis;
            flat /= self.x_cells_per_axis;
        }
        multi
    }

    #[inline]
    pub fn xi_multi(&self, mut flat: usize) -> [usize; N] {
        let mut multi = [0; N];
        for k in (0..N).rev() {
            multi[k] = flat % self.xi_cells_per_axis;
            flat /= self.xi_cells_per_axis;
        }
        multi
    }

    #[inline]
    pub fn x_center(&self, flat: usize) -> [f64; N] {
        let multi = self.x_multi(flat);
        let d = self.dx();
        std::array::from_fn(|k| -self.x_extent + (multi[k] as f64 + 0.5) * d)
    }

    #[inline]
    pub fn xi_center(&self, flat: usize) -> [f64; N] {
        let multi = self.xi_multi(flat);
        let d = self.dxi();
        std::array::from_fn(|k| -self.xi_extent + (multi[k] as f64 + 0.5) * d)
    }

    /// All velocity-cell centers in index order.
    pub fn xi_centers(&self) -> Vec<[f64; N]> {
        (0..self.xi_count()).map(|i| self.xi_center(i)).collect()
    }
}

/// Whether field values are stored along trajectories (`Sharp`) or in the
/// laboratory frame (`Lab`). The two agree at `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Representation {
    Sharp,
    Lab,
}

/// Pair `(alpha, beta, c)` describing the bound `c exp(-alpha|x|^2 - beta|xi|^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxwellianEnvelope {
    pub alpha: f64,
    pub beta: f64,
    pub c: f64,
}

impl MaxwellianEnvelope {
    pub fn new(alpha: f64, beta: f64, c: f64) -> Result<Self> {
        if !(alpha > 0.0) || !(beta > 0.0) {
            return Err(Error::config("envelope", "alpha and beta must be positive"));
        }
        if !(c >= 0.0) {
            return Err(Error::config("envelope.c", "must be nonnegative"));
        }
        Ok(MaxwellianEnvelope { alpha, beta, c })
    }

    /// Envelope value in sharp coordinates: `c exp(-alpha|x|^2 - beta|xi|^2)`.
    pub fn value_sharp<const N: usize>(&self, x: [f64; N], xi: [f64; N]) -> f64 {
        self.c * (-self.alpha * norm_sq(x) - self.beta * norm_sq(xi)).exp()
    }

    /// Envelope transported to the lab frame at time `t`:
    /// `c exp(-alpha|x - t xi|^2 - beta|xi|^2)`.
    pub fn value_lab<const N: usize>(&self, t: f64, x: [f64; N], xi: [f64; N]) -> f64 {
        let shifted: [f64; N] = std::array::from_fn(|k| x[k] - t * xi[k]);
        self.c * (-self.alpha * norm_sq(shifted) - self.beta * norm_sq(xi)).exp()
    }
}

/// Nonnegative scalar field over a phase grid at one time instant.
#[derive(Debug, Clone)]
pub struct DistributionField<const N: usize> {
    grid: Arc<PhaseGrid<N>>,
    values: Vec<f64>,
    time: f64,
    repr: Representation,
}

impl<const N: usize> DistributionField<N> {
    pub fn zeros(grid: &Arc<PhaseGrid<N>>, time: f64, repr: Representation) -> Self {
        DistributionField {
            grid: Arc::clone(grid),
            values: vec![0.0; grid.cell_count()],
            time,
            repr,
        }
    }

    /// Sample `f(x, xi)` at cell centers, clamped at zero.
    pub fn from_fn(
        grid: &Arc<PhaseGrid<N>>,
        time: f64,
        repr: Representation,
        f: impl Fn([f64; N], [f64; N]) -> f64,
    ) -> Self {
        let x_count = grid.x_count();
        let mut values = vec![0.0; grid.cell_count()];
        let x_centers: Vec<[f64; N]> = (0..x_count).map(|i| grid.x_center(i)).collect();
        for (xi_flat, chunk) in values.chunks_mut(x_count).enumerate() {
            let xi = grid.xi_center(xi_flat);
            for (x_flat, v) in chunk.iter_mut().enumerate() {
                *v = f(x_centers[x_flat], xi).max(0.0);
            }
        }
        DistributionField {
            grid: Arc::clone(grid),
            values,
            time,
            repr,
        }
    }

    /// Wrap an existing value buffer (length `cell_count`) as a field.
    pub(crate) fn from_values(
        grid: &Arc<PhaseGrid<N>>,
        values: Vec<f64>,
        time: f64,
        repr: Representation,
    ) -> Self {
        assert_eq!(values.len(), grid.cell_count());
        DistributionField {
            grid: Arc::clone(grid),
            values,
            time,
            repr,
        }
    }

    /// `amplitude * exp(-alpha|x|^2 - beta|xi|^2)` sampled at cell centers.
    pub fn maxwellian(
        grid: &Arc<PhaseGrid<N>>,
        amplitude: f64,
        alpha: f64,
        beta: f64,
        repr: Representation,
    ) -> Self {
        Self::from_fn(grid, 0.0, repr, |x, xi| {
            amplitude * (-alpha * norm_sq(x) - beta * norm_sq(xi)).exp()
        })
    }

    pub fn grid(&self) -> &Arc<PhaseGrid<N>> {
        &self.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
    pub fn time(&self) -> f64 {
        self.time
    }
    pub fn set_time(&mut self, t: f64) {
        self.time = t;
    }
    pub fn representation(&self) -> Representation {
        self.repr
    }

    /// Contiguous position block for one velocity cell.
    #[inline]
    pub fn x_block(&self, xi_flat: usize) -> &[f64] {
        let n = self.grid.x_count();
        &self.values[xi_flat * n..(xi_flat + 1) * n]
    }

    #[inline]
    pub fn at(&self, x_flat: usize, xi_flat: usize) -> f64 {
        self.values[xi_flat * self.grid.x_count() + x_flat]
    }

    #[inline]
    pub fn at_mut(&mut self, x_flat: usize, xi_flat: usize) -> &mut f64 {
        let n = self.grid.x_count();
        &mut self.values[xi_flat * n + x_flat]
    }

    /// Checks nonnegativity and finiteness of every cell value.
    pub fn validate(&self) -> Result<()> {
        for (i, v) in self.values.iter().enumerate() {
            if !v.is_finite() || *v < 0.0 {
                return Err(Error::config(
                    "field.values",
                    format!("cell {i} holds inadmissible value {v}"),
                ));
            }
        }
        Ok(())
    }

    /// Maxwellian-weighted sup norm: the least `c` with
    /// `f <= c exp(-alpha|x|^2 - beta|xi|^2)` on the grid, evaluated in log
    /// space to dodge overflow of the weights.
    pub fn maxwellian_norm(&self, alpha: f64, beta: f64) -> f64 {
        let x_count = self.grid.x_count();
        let x_sq: Vec<f64> = (0..x_count)
            .map(|i| norm_sq(self.grid.x_center(i)))
            .collect();
        let mut max_log = f64::NEG_INFINITY;
        for (xi_flat, chunk) in self.values.chunks(x_count).enumerate() {
            let xi_sq = norm_sq(self.grid.xi_center(xi_flat));
            for (x_flat, &v) in chunk.iter().enumerate() {
                if v > 0.0 {
                    let log_w = v.abs().ln() + alpha * x_sq[x_flat] + beta * xi_sq;
                    if log_w > max_log {
                        max_log = log_w;
                    }
                }
            }
        }
        if max_log == f64::NEG_INFINITY {
            0.0
        } else {
            max_log.exp()
        }
    }

    /// Total mass by the midpoint rule.
    pub fn l1_norm(&self) -> f64 {
        let vol = self.grid.phase_cell_volume();
        self.values.iter().map(|v| v.abs()).sum::<f64>() * vol
    }

    /// Midpoint-rule mass, momentum and energy.
    pub fn moments(&self) -> Moments<N> {
        let vol = self.grid.phase_cell_volume();
        let x_count = self.grid.x_count();
        let mut mass = 0.0;
        let mut momentum = [0.0; N];
        let mut energy = 0.0;
        for (xi_flat, chunk) in self.values.chunks(x_count).enumerate() {
            let xi = self.grid.xi_center(xi_flat);
            let slice_sum: f64 = chunk.iter().sum();
            mass += slice_sum;
            for k in 0..N {
                momentum[k] += slice_sum * xi[k];
            }
            energy += slice_sum * norm_sq(xi);
        }
        Moments {
            mass: mass * vol,
            momentum: momentum.map(|p| p * vol),
            energy: energy * vol,
        }
    }

    /// Spatial density `rho(x) = int f dxi` for every position cell.
    pub fn spatial_density(&self) -> Vec<f64> {
        let x_count = self.grid.x_count();
        let vol = self.grid.xi_cell_volume();
        let mut rho = vec![0.0; x_count];
        for chunk in self.values.chunks(x_count) {
            for (r, v) in rho.iter_mut().zip(chunk) {
                *r += v;
            }
        }
        for r in &mut rho {
            *r *= vol;
        }
        rho
    }

    /// True when `f <= envelope + slack * c` cellwise, in whichever
    /// representation the field is stored. The slack is absolute relative
    /// to the envelope amplitude; comparisons against resampled fields need
    /// room for the `O(dx^2)` interpolation overshoot of a sampled Gaussian.
    pub fn bounded_by(&self, env: &MaxwellianEnvelope, slack: f64) -> bool {
        let x_count = self.grid.x_count();
        let allowance = slack * env.c + 1e-300;
        for (xi_flat, chunk) in self.values.chunks(x_count).enumerate() {
            let xi = self.grid.xi_center(xi_flat);
            for (x_flat, &v) in chunk.iter().enumerate() {
                let x = self.grid.x_center(x_flat);
                let bound = match self.repr {
                    Representation::Sharp => env.value_sharp(x, xi),
                    Representation::Lab => env.value_lab(self.time, x, xi),
                };
                if v > bound + allowance {
                    return false;
                }
            }
        }
        true
    }

    /// Trajectory transform `f^#(t, x, xi) = f(t, x + t xi, xi)` of a lab
    /// field. Positions outside the box use the zero extension.
    pub fn sharp_transform(&self, t: f64) -> DistributionField<N> {
        assert_eq!(self.repr, Representation::Lab, "sharp_transform expects a lab field");
        let mut out = self.resample_shifted(t);
        out.repr = Representation::Sharp;
        out
    }

    /// Inverse trajectory transform `f(t, x, xi) = f^#(t, x - t xi, xi)`.
    pub fn unsharp_transform(&self, t: f64) -> DistributionField<N> {
        assert_eq!(self.repr, Representation::Sharp, "unsharp_transform expects a sharp field");
        let mut out = self.resample_shifted(-t);
        out.repr = Representation::Lab;
        out
    }

    /// Resample every velocity row of the position block at `x + sign*t*xi`
    /// with multilinear interpolation and zero extension. The shift is
    /// constant within a row, so interpolation weights form a partition of
    /// unity and row mass is conserved up to boundary leakage.
    fn resample_shifted(&self, t_signed: f64) -> DistributionField<N> {
        let grid = &self.grid;
        let nx = grid.x_cells_per_axis;
        let x_count = grid.x_count();
        let dx = grid.dx();
        let mut out = DistributionField {
            grid: Arc::clone(grid),
            values: vec![0.0; self.values.len()],
            time: self.time,
            repr: self.repr,
        };
        let corners = 1usize << N;
        for xi_flat in 0..grid.xi_count() {
            let xi = grid.xi_center(xi_flat);
            // Per-axis integer offset and interpolation fraction.
            let mut base = [0isize; N];
            let mut frac = [0.0f64; N];
            for k in 0..N {
                let off = t_signed * xi[k] / dx;
                let fl = off.floor();
                base[k] = fl as isize;
                frac[k] = off - fl;
            }
            let src = self.x_block(xi_flat);
            let dst = &mut out.values[xi_flat * x_count..(xi_flat + 1) * x_count];
            for x_flat in 0..x_count {
                let multi = grid.x_multi(x_flat);
                let mut acc = 0.0;
                for corner in 0..corners {
                    let mut w = 1.0;
                    let mut src_flat = 0usize;
                    let mut valid = true;
                    for k in 0..N {
                        let up = (corner >> (N - 1 - k)) & 1;
                        let idx = multi[k] as isize + base[k] + up as isize;
                        if idx < 0 || idx >= nx as isize {
                            valid = false;
                            break;
                        }
                        w *= if up == 1 { frac[k] } else { 1.0 - frac[k] };
                        src_flat = src_flat * nx + idx as usize;
                    }
                    if valid && w != 0.0 {
                        acc += w * src[src_flat];
                    }
                }
                dst[x_flat] = acc.max(0.0);
            }
        }
        out
    }

    /// Write the snapshot in the flat CSV layout: a header row followed by
    /// one value per line in storage order.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(
            w,
            "n,x_cells,xi_cells,x_extent,xi_extent,t,repr"
        )?;
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            N,
            self.grid.x_cells_per_axis,
            self.grid.xi_cells_per_axis,
            self.grid.x_extent,
            self.grid.xi_extent,
            self.time,
            match self.repr {
                Representation::Sharp => "sharp",
                Representation::Lab => "lab",
            }
        )?;
        for v in &self.values {
            writeln!(w, "{v:.17e}")?;
        }
        Ok(())
    }

    /// Read a snapshot produced by [`write_csv`](Self::write_csv).
    pub fn read_csv(r: impl BufRead) -> Result<DistributionField<N>> {
        let mut lines = r.lines();
        let _header = lines
            .next()
            .ok_or_else(|| Error::config("snapshot", "empty file"))??;
        let meta = lines
            .next()
            .ok_or_else(|| Error::config("snapshot", "missing metadata row"))??;
        let parts: Vec<&str> = meta.split(',').collect();
        if parts.len() != 7 {
            return Err(Error::config("snapshot", "malformed metadata row"));
        }
        let n: usize = parts[0]
            .parse()
            .map_err(|_| Error::config("snapshot.n", "not an integer"))?;
        if n != N {
            return Err(Error::config(
                "snapshot.n",
                format!("dimension {n} does not match expected {N}"),
            ));
        }
        let parse_f = |s: &str, path: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::config(path, "not a number"))
        };
        let x_cells: usize = parts[1]
            .parse()
            .map_err(|_| Error::config("snapshot.x_cells", "not an integer"))?;
        let xi_cells: usize = parts[2]
            .parse()
            .map_err(|_| Error::config("snapshot.xi_cells", "not an integer"))?;
        let grid = PhaseGrid::<N>::new(
            parse_f(parts[3], "snapshot.x_extent")?,
            parse_f(parts[4], "snapshot.xi_extent")?,
            x_cells,
            xi_cells,
        )?;
        let time = parse_f(parts[5], "snapshot.t")?;
        let repr = match parts[6] {
            "sharp" => Representation::Sharp,
            "lab" => Representation::Lab,
            other => {
                return Err(Error::config(
                    "snapshot.repr",
                    format!("unknown representation `{other}`"),
                ))
            }
        };
        let mut values = Vec::with_capacity(grid.cell_count());
        for line in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            values.push(parse_f(&line, "snapshot.values")?);
        }
        if values.len() != grid.cell_count() {
            return Err(Error::config(
                "snapshot.values",
                format!("expected {} values, found {}", grid.cell_count(), values.len()),
            ));
        }
        let field = DistributionField {
            grid,
            values,
            time,
            repr,
        };
        field.validate()?;
        Ok(field)
    }
}

/// Midpoint-rule integrals of a field.
#[derive(Debug, Clone, Copy)]
pub struct Moments<const N: usize> {
    pub mass: f64,
    pub momentum: [f64; N],
    pub energy: f64,
}
