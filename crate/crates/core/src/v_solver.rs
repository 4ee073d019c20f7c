//! The decoupled velocity equation `∂ₜv = −Lv` on the mass interval `(0, 1)`.
//!
//! Bounded purely topological protocols are integrated with classical RK4
//! on a uniform grid of `N` mass cells. The singular power law
//! `φ(r) = C_s r^{-1-2s}` turns `L` into the regional fractional Laplacian;
//! its discrete Dirichlet form is assembled from exact cell-pair integrals
//! and the semigroup is applied through a dense symmetric eigendecomposition.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{Kernel, Singularity};

/// Tolerance of the runtime maximum-principle check.
pub const MAX_PRINCIPLE_TOL: f64 = 1e-10;

/// Largest grid accepted by the dense spectral path.
pub const MAX_SPECTRAL_CELLS: usize = 2048;

/// Cell averages of `v` on `N` uniform mass cells at time `time`.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityGrid {
    pub values: Vec<f64>,
    pub time: f64,
}

impl VelocityGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Config("velocity grid needs at least one cell".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("velocity values must be finite".into()));
        }
        Ok(VelocityGrid { values, time: 0.0 })
    }

    /// Cell averages of `f` computed by Simpson quadrature on each cell.
    pub fn from_fn<F: Fn(f64) -> f64>(n_cells: usize, f: F) -> Result<Self> {
        let h = 1.0 / n_cells as f64;
        let values = (0..n_cells)
            .map(|i| {
                let a = i as f64 * h;
                crate::quadrature::simpson(&f, a, a + h, 1e-12) / h
            })
            .collect();
        Self::new(values)
    }

    /// Midpoint samples `f((i − ½)/N)`.
    pub fn from_midpoints<F: Fn(f64) -> f64>(n_cells: usize, f: F) -> Result<Self> {
        Self::new(midpoints(n_cells).into_iter().map(f).collect())
    }

    pub fn n_cells(&self) -> usize {
        self.values.len()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// `sup |v − v̄|`.
    pub fn sup_deviation(&self) -> f64 {
        let mean = self.mean();
        self.values.iter().fold(0.0, |a, v| a.max((v - mean).abs()))
    }

    /// Value of the cell containing `m`.
    pub fn eval_cell(&self, m: f64) -> f64 {
        let n = self.values.len();
        let k = ((m.clamp(0.0, 1.0) * n as f64) as usize).min(n - 1);
        self.values[k]
    }

    /// Continuous representative: piecewise-linear interpolation of the
    /// midpoint values, constant on the two outer half cells.
    pub fn eval_continuous(&self, m: f64) -> f64 {
        let n = self.values.len();
        let pos = m.clamp(0.0, 1.0) * n as f64 - 0.5;
        if pos <= 0.0 {
            return self.values[0];
        }
        if pos >= (n - 1) as f64 {
            return self.values[n - 1];
        }
        let k = pos as usize;
        let t = pos - k as f64;
        self.values[k] + t * (self.values[k + 1] - self.values[k])
    }
}

/// Mass-cell midpoints `(i − ½)/N`, `i = 1..N`.
pub fn midpoints(n_cells: usize) -> Vec<f64> {
    (1..=n_cells).map(|i| (i as f64 - 0.5) / n_cells as f64).collect()
}

/// `(‖v‖², v̄)` with the cell-average quadrature.
pub fn energy_and_mean(values: &[f64]) -> (f64, f64) {
    let h = 1.0 / values.len() as f64;
    let energy = h * values.iter().map(|v| v * v).sum::<f64>();
    let mean = h * values.iter().sum::<f64>();
    (energy, mean)
}

/// `‖v − v̄‖²`.
pub fn deviation_energy(values: &[f64]) -> f64 {
    let (_, mean) = energy_and_mean(values);
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64
}

/// Anything that can supply the mass-cell velocity at arbitrary times.
pub trait VelocitySource {
    fn n_cells(&self) -> usize;
    fn velocity_at(&self, t: f64) -> Vec<f64>;
    /// Upper bound on `‖v(t)‖_∞` over all times served.
    fn speed_bound(&self) -> f64;
}

/// Stored snapshots, linearly interpolated in time.
#[derive(Clone, Debug, Default)]
pub struct VelocityTrajectory {
    pub times: Vec<f64>,
    pub snapshots: Vec<Vec<f64>>,
}

impl VelocityTrajectory {
    pub fn push(&mut self, t: f64, values: Vec<f64>) {
        self.times.push(t);
        self.snapshots.push(values);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<(f64, &[f64])> {
        self.times.last().map(|&t| (t, self.snapshots.last().unwrap().as_slice()))
    }
}

impl VelocitySource for VelocityTrajectory {
    fn n_cells(&self) -> usize {
        self.snapshots.first().map_or(0, Vec::len)
    }

    fn velocity_at(&self, t: f64) -> Vec<f64> {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.snapshots[0].clone();
        }
        if t >= self.times[n - 1] {
            return self.snapshots[n - 1].clone();
        }
        let k = self.times.partition_point(|&s| s <= t) - 1;
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        if t == t0 {
            return self.snapshots[k].clone();
        }
        let w = (t - t0) / (t1 - t0);
        self.snapshots[k]
            .iter()
            .zip(&self.snapshots[k + 1])
            .map(|(a, b)| a + w * (b - a))
            .collect()
    }

    fn speed_bound(&self) -> f64 {
        self.snapshots
            .iter()
            .flat_map(|s| s.iter())
            .fold(0.0, |a, v| a.max(v.abs()))
    }
}

/// The alignment operator of a bounded pure protocol on `N` mass cells,
/// `(Lv)ᵢ = (1/N) Σⱼ φ(|mᵢ − mⱼ|)(vᵢ − vⱼ)`.
#[derive(Clone, Debug)]
pub struct BoundedOperator {
    n: usize,
    weights: Vec<f64>,
    sup: f64,
}

impl BoundedOperator {
    pub fn new(kernel: &Kernel, n_cells: usize) -> Result<Self> {
        if !kernel.is_pure() {
            return Err(Error::Unsupported(
                "the mass-coordinate velocity equation needs a purely topological kernel".into(),
            ));
        }
        let sup = match kernel.singularity() {
            Singularity::Bounded { sup } => sup,
            Singularity::PowerLaw { .. } => {
                return Err(Error::Unsupported(
                    "singular kernels use the spectral path".into(),
                ))
            }
        };
        if n_cells == 0 {
            return Err(Error::Config("need at least one mass cell".into()));
        }
        let n = n_cells;
        let mut weights = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let w = kernel.eval_pure((j - i) as f64 / n as f64)?;
                weights[i * n + j] = w;
                weights[j * n + i] = w;
            }
        }
        Ok(BoundedOperator { n, weights, sup })
    }

    pub fn n_cells(&self) -> usize {
        self.n
    }

    pub fn sup_norm(&self) -> f64 {
        self.sup
    }

    /// Tendency `Lv` (the right-hand side is `−Lv`).
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = self.n;
        let inv_n = 1.0 / n as f64;
        (0..n)
            .map(|i| {
                let row = &self.weights[i * n..(i + 1) * n];
                let vi = v[i];
                let s: f64 = row.iter().zip(v).map(|(w, vj)| w * (vi - vj)).sum();
                s * inv_n
            })
            .collect()
    }

    /// `E(v, w) = ½ ∫∫ φ(|m − m′|)(v(m) − v(m′))(w(m) − w(m′))` on cell
    /// functions; `d/dt ‖v‖² = −2E(v, v)`.
    pub fn dirichlet_form(&self, v: &[f64], w: &[f64]) -> f64 {
        let n = self.n;
        let h = 1.0 / n as f64;
        let mut acc = 0.0;
        for i in 0..n {
            let row = &self.weights[i * n..(i + 1) * n];
            for j in (i + 1)..n {
                acc += row[j] * (v[i] - v[j]) * (w[i] - w[j]);
            }
        }
        h * h * acc
    }

    /// Dense matrix `G` with `dv/dt = G v`.
    pub fn generator_matrix(&self) -> DMatrix<f64> {
        let n = self.n;
        let inv_n = 1.0 / n as f64;
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                -inv_n * self.weights[i * n..(i + 1) * n].iter().sum::<f64>()
            } else {
                inv_n * self.weights[i * n + j]
            }
        })
    }

    /// One classical RK4 step of `dv/dt = −Lv`. Requires `dt·‖φ‖_∞ ≤ 1`.
    pub fn step(&self, v: &VelocityGrid, dt: f64) -> Result<VelocityGrid> {
        if !(dt > 0.0) || dt * self.sup > 1.0 + 1e-12 {
            return Err(Error::Stability(format!(
                "RK4 step dt = {dt} violates dt·‖φ‖_∞ ≤ 1 (‖φ‖_∞ = {})",
                self.sup
            )));
        }
        if v.n_cells() != self.n {
            return Err(Error::Config("velocity grid size does not match the operator".into()));
        }
        let x = &v.values;
        let k1 = self.apply(x);
        let y: Vec<f64> = x.iter().zip(&k1).map(|(a, k)| a - 0.5 * dt * k).collect();
        let k2 = self.apply(&y);
        let y: Vec<f64> = x.iter().zip(&k2).map(|(a, k)| a - 0.5 * dt * k).collect();
        let k3 = self.apply(&y);
        let y: Vec<f64> = x.iter().zip(&k3).map(|(a, k)| a - dt * k).collect();
        let k4 = self.apply(&y);
        let values = (0..self.n)
            .map(|i| x[i] - dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect();
        Ok(VelocityGrid { values, time: v.time + dt })
    }

    /// Integrates to `t_final` with uniform steps no larger than `dt`,
    /// storing every step. Enforces the maximum principle at each step.
    pub fn run(&self, v0: &VelocityGrid, dt: f64, t_final: f64) -> Result<VelocityTrajectory> {
        if !(t_final >= 0.0) {
            return Err(Error::Config("final time must be nonnegative".into()));
        }
        let steps = (t_final / dt - 1e-9).ceil().max(0.0) as usize;
        let dt_eff = if steps == 0 { dt } else { t_final / steps as f64 };
        let lo = v0.values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v0.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut traj = VelocityTrajectory::default();
        let mut v = VelocityGrid { values: v0.values.clone(), time: 0.0 };
        traj.push(0.0, v.values.clone());
        for k in 1..=steps {
            v = self.step(&v, dt_eff)?;
            v.time = k as f64 * dt_eff;
            if v.values.iter().any(|&x| x < lo - MAX_PRINCIPLE_TOL || x > hi + MAX_PRINCIPLE_TOL) {
                return Err(Error::Stability(format!(
                    "maximum principle violated at t = {}",
                    v.time
                )));
            }
            traj.push(v.time, v.values.clone());
        }
        Ok(traj)
    }
}

/// Largest residual of the discrete energy identity
/// `(‖v^{n+1}‖² − ‖vⁿ‖²)/Δt + E(vⁿ) + E(v^{n+1}) = 0` along a stored
/// trajectory (trapezoidal in time).
pub fn energy_identity_residual(op: &BoundedOperator, traj: &VelocityTrajectory) -> f64 {
    let mut worst: f64 = 0.0;
    let mut prev_energy = energy_and_mean(&traj.snapshots[0]).0;
    let mut prev_form = op.dirichlet_form(&traj.snapshots[0], &traj.snapshots[0]);
    for k in 1..traj.len() {
        let s = &traj.snapshots[k];
        let energy = energy_and_mean(s).0;
        let form = op.dirichlet_form(s, s);
        let dt = traj.times[k] - traj.times[k - 1];
        let r = (energy - prev_energy) / dt + prev_form + form;
        worst = worst.max(r.abs());
        prev_energy = energy;
        prev_form = form;
    }
    worst
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryCondition {
    Neumann,
    /// First and last cells pinned to zero.
    Dirichlet,
}

/// Second difference `G(k+1) − 2G(k) + G(k−1)` of the double antiderivative
/// `G'' = r^{-1-2s}`, i.e. `∫∫ |m − m′|^{-1-2s}` over two unit cells whose
/// left ends are `k ≥ 1` apart. Finite for `k ≥ 2`, and for `k = 1` when
/// `s < ½`.
fn unit_pair_integral(s: f64, k: usize) -> f64 {
    debug_assert!(k >= 1);
    let p = -1.0 - 2.0 * s;
    if k >= 16 {
        // Even-derivative series of the second difference.
        let kf = k as f64;
        let mut term = kf.powf(p);
        let mut sum = term;
        let mut falling = 1.0;
        let mut fact = 2.0;
        for n in 1..7 {
            let a = p - (2 * n - 2) as f64;
            falling *= a * (a - 1.0);
            fact *= ((2 * n + 1) * (2 * n + 2)) as f64;
            term = 2.0 * falling / fact * kf.powf(p - 2.0 * n as f64);
            sum += term;
        }
        let _ = term;
        return sum;
    }
    let g = |r: f64| -> f64 {
        if r == 0.0 {
            return 0.0;
        }
        if (s - 0.5).abs() < 1e-15 {
            -r.ln()
        } else {
            r.powf(p + 2.0) / ((p + 1.0) * (p + 2.0))
        }
    };
    let kf = k as f64;
    g(kf + 1.0) - 2.0 * g(kf) + g(kf - 1.0)
}

/// `∫_{cellᵢ}∫_{cellⱼ} |m − m′|^{-1-2s} dm dm′` for cells of width `h`
/// whose indices differ by `k = |i − j|`.
pub fn cell_pair_weight(s: f64, k: usize, h: f64) -> Result<f64> {
    if k == 0 || (k == 1 && s >= 0.5) {
        return Err(Error::Domain(format!(
            "pair integral diverges for cell offset {k} at s = {s}"
        )));
    }
    Ok(h.powf(1.0 - 2.0 * s) * unit_pair_integral(s, k))
}

/// Weight of an adjacent-cell link when `s ≥ ½`: the near-diagonal blocks
/// `∫∫ |m − m′|^{1−2s}` (one adjacent block plus half a self block per link)
/// divided by `h²`, so that `w·(vᵢ₊₁ − vᵢ)²` matches the near-field energy
/// of a smooth function.
pub fn near_field_weight(s: f64, h: f64) -> f64 {
    let q = 3.0 - 2.0 * s;
    h.powf(1.0 - 2.0 * s) * (2f64.powf(q) - 1.0) / ((2.0 - 2.0 * s) * q)
}

/// Discrete regional fractional Laplacian with its eigenpairs.
#[derive(Clone, Debug)]
pub struct SpectralOperator {
    s: f64,
    c_s: f64,
    bc: BoundaryCondition,
    n: usize,
    form_matrix: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    /// Columns are eigenvectors normalised to `(1/N) Σ e² = 1`.
    eigenvectors: DMatrix<f64>,
}

impl SpectralOperator {
    /// Assembles the discrete Dirichlet form `Q(v, v) = C_s Σ_{i<j} w_{ij}(vᵢ − vⱼ)²`
    /// and diagonalises it in the `(1/N)`-weighted inner product.
    pub fn assemble(s: f64, bc: BoundaryCondition, n_cells: usize) -> Result<Self> {
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::Config(format!("fractional order s = {s} must lie in (0, 1)")));
        }
        if !(2..=MAX_SPECTRAL_CELLS).contains(&n_cells) {
            return Err(Error::Config(format!(
                "spectral grid size {n_cells} outside [2, {MAX_SPECTRAL_CELLS}]"
            )));
        }
        if bc == BoundaryCondition::Dirichlet && n_cells < 3 {
            return Err(Error::Config("pinned Dirichlet variant needs N ≥ 3".into()));
        }
        let n = n_cells;
        let h = 1.0 / n as f64;
        let c_s = crate::kernels::power_law_constant(s);
        let by_offset: Vec<f64> = (0..n)
            .map(|k| match k {
                0 => 0.0,
                1 if s >= 0.5 => near_field_weight(s, h),
                _ => h.powf(1.0 - 2.0 * s) * unit_pair_integral(s, k),
            })
            .collect();
        let mut q = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            let mut diag = 0.0;
            for j in 0..n {
                if i != j {
                    let w = c_s * by_offset[i.abs_diff(j)];
                    q[(i, j)] = -w;
                    diag += w;
                }
            }
            q[(i, i)] = diag;
        }

        let active: Vec<usize> = match bc {
            BoundaryCondition::Neumann => (0..n).collect(),
            BoundaryCondition::Dirichlet => (1..n - 1).collect(),
        };
        let na = active.len();
        let a = DMatrix::from_fn(na, na, |i, j| q[(active[i], active[j])] / h);
        let eig = SymmetricEigen::new(a);
        let mut order: Vec<usize> = (0..na).collect();
        order.sort_by(|&x, &y| eig.eigenvalues[x].partial_cmp(&eig.eigenvalues[y]).unwrap());
        let scale = (n as f64).sqrt();
        let mut vectors = DMatrix::<f64>::zeros(n, na);
        let mut values = Vec::with_capacity(na);
        for (col, &k) in order.iter().enumerate() {
            values.push(eig.eigenvalues[k]);
            let e = eig.eigenvectors.column(k);
            // Fix the sign so the first nonnegligible entry is positive.
            let sign = e.iter().find(|x| x.abs() > 1e-8).map_or(1.0, |x| x.signum());
            for (r, &idx) in active.iter().enumerate() {
                vectors[(idx, col)] = sign * scale * e[r];
            }
        }
        Ok(SpectralOperator { s, c_s, bc, n, form_matrix: q, eigenvalues: values, eigenvectors: vectors })
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn c_s(&self) -> f64 {
        self.c_s
    }

    pub fn boundary_condition(&self) -> BoundaryCondition {
        self.bc
    }

    pub fn n_cells(&self) -> usize {
        self.n
    }

    pub fn form_matrix(&self) -> &DMatrix<f64> {
        &self.form_matrix
    }

    /// Ascending eigenvalues `λ₀ ≤ λ₁ ≤ …`.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvector(&self, i: usize) -> Vec<f64> {
        self.eigenvectors.column(i).iter().copied().collect()
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    /// `vᵀ Q w`.
    pub fn dirichlet_form(&self, v: &[f64], w: &[f64]) -> f64 {
        let n = self.n;
        let mut acc = 0.0;
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                row += self.form_matrix[(i, j)] * w[j];
            }
            acc += v[i] * row;
        }
        acc
    }

    /// Smallest nonzero eigenvalue of the Neumann operator.
    pub fn rayleigh_lambda1(&self) -> Result<f64> {
        match self.bc {
            BoundaryCondition::Neumann => Ok(self.eigenvalues[1]),
            BoundaryCondition::Dirichlet => Err(Error::Unsupported(
                "λ₁ as a mean-zero Rayleigh infimum is defined for the Neumann operator".into(),
            )),
        }
    }

    /// `sqrt(‖v‖² + Q(v, v))`.
    pub fn sobolev_norm(&self, v: &[f64]) -> f64 {
        (energy_and_mean(v).0 + self.dirichlet_form(v, v)).sqrt()
    }

    /// Expansion coefficients `cᵢ = (1/N) Σₖ eᵢ[k] v[k]`.
    pub fn coefficients(&self, v: &[f64]) -> Vec<f64> {
        let inv_n = 1.0 / self.n as f64;
        (0..self.eigenvalues.len())
            .map(|i| inv_n * self.eigenvectors.column(i).iter().zip(v).map(|(e, x)| e * x).sum::<f64>())
            .collect()
    }

    fn reconstruct(&self, coeffs: &[f64], t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (i, c) in coeffs.iter().enumerate() {
            let a = c * (-self.eigenvalues[i].max(0.0) * t).exp();
            if a == 0.0 {
                continue;
            }
            for (o, e) in out.iter_mut().zip(self.eigenvectors.column(i).iter()) {
                *o += a * e;
            }
        }
        out
    }

    /// `v(t) = Σ e^{−λᵢt} cᵢ eᵢ`.
    pub fn evolve(&self, v0: &VelocityGrid, t: f64) -> Result<VelocityGrid> {
        if !(t >= 0.0) {
            return Err(Error::Domain(format!("evolution time {t} is negative")));
        }
        if v0.n_cells() != self.n {
            return Err(Error::Config("velocity grid size does not match the operator".into()));
        }
        let c = self.coefficients(&v0.values);
        Ok(VelocityGrid { values: self.reconstruct(&c, t), time: v0.time + t })
    }

    /// Semigroup bound to an initial state for repeated evaluation.
    pub fn evolution(&self, v0: &VelocityGrid) -> SpectralEvolution<'_> {
        let coeffs = self.coefficients(&v0.values);
        let bound = v0.sup_norm();
        SpectralEvolution { op: self, coeffs, bound }
    }
}

/// Exact-in-time spectral solution from fixed initial data.
#[derive(Clone, Debug)]
pub struct SpectralEvolution<'a> {
    op: &'a SpectralOperator,
    coeffs: Vec<f64>,
    bound: f64,
}

impl SpectralEvolution<'_> {
    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }
}

impl VelocitySource for SpectralEvolution<'_> {
    fn n_cells(&self) -> usize {
        self.op.n
    }

    fn velocity_at(&self, t: f64) -> Vec<f64> {
        self.op.reconstruct(&self.coeffs, t.max(0.0))
    }

    fn speed_bound(&self) -> f64 {
        // The discrete generator is a weighted graph Laplacian, so the
        // semigroup is a Markov operator and preserves the sup norm bound.
        self.bound * (1.0 + 1e-12)
    }
}
