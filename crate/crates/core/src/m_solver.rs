//! Finite-volume entropy solver for `∂ₜM + ∂ₓA(M, t) = 0`.
//!
//! The flux primitive `A(·, t) = ∫₀^· v(·, t)` comes from a velocity
//! solution on the mass grid. The scheme is first-order Engquist–Osher with
//! fixed ghost states `M = 0` on the left and `M = 1` on the right.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mass_coords::{FluxTable, MassProfile};
use crate::v_solver::VelocitySource;

/// Largest Courant number `dt·‖v‖_∞/dx` accepted by [`step`].
pub const MAX_CFL: f64 = 0.5;

/// Default multiple of the initial maximum slope that flags an atom.
pub const DEFAULT_MONITOR_FACTOR: f64 = 50.0;

/// Cell values of `M` on a uniform spatial grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialGrid {
    pub x_lo: f64,
    pub x_hi: f64,
    pub dx: f64,
    pub values: Vec<f64>,
    pub time: f64,
    /// `∫₀ᵗ (F_left − F_right) dt`, the net inflow through the buffers.
    pub boundary_flux_integral: f64,
}

impl SpatialGrid {
    /// Samples `f` at the cell centres.
    pub fn from_fn<F: Fn(f64) -> f64>(x_lo: f64, x_hi: f64, n_x: usize, f: F) -> Result<Self> {
        if !(x_hi > x_lo) || n_x == 0 {
            return Err(Error::Config(format!("invalid spatial grid [{x_lo}, {x_hi}] with {n_x} cells")));
        }
        let dx = (x_hi - x_lo) / n_x as f64;
        let values: Vec<f64> = (0..n_x).map(|i| f(x_lo + (i as f64 + 0.5) * dx)).collect();
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Domain("initial CDF values must lie in [0, 1]".into()));
        }
        if values.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Domain("initial CDF values must be nondecreasing".into()));
        }
        Ok(SpatialGrid { x_lo, x_hi, dx, values, time: 0.0, boundary_flux_integral: 0.0 })
    }

    /// Samples an atom-free profile at the cell centres.
    pub fn from_profile(profile: &MassProfile, x_lo: f64, x_hi: f64, n_x: usize) -> Result<Self> {
        if !profile.is_continuous() {
            return Err(Error::Admissibility(
                "the conservation-law solver only accepts atom-free initial data".into(),
            ));
        }
        Self::from_fn(x_lo, x_hi, n_x, |x| profile.cdf(x))
    }

    pub fn n_x(&self) -> usize {
        self.values.len()
    }

    pub fn centre(&self, i: usize) -> f64 {
        self.x_lo + (i as f64 + 0.5) * self.dx
    }

    pub fn centres(&self) -> Vec<f64> {
        (0..self.n_x()).map(|i| self.centre(i)).collect()
    }

    /// `Σ Mᵢ dx`.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.dx
    }

    /// Density at the cell centres by centred differences, with the ghost
    /// states 0 and 1 beyond the ends.
    pub fn density(&self) -> Vec<f64> {
        let n = self.n_x();
        (0..n)
            .map(|i| {
                let l = if i == 0 { 0.0 } else { self.values[i - 1] };
                let r = if i + 1 == n { 1.0 } else { self.values[i + 1] };
                (r - l) / (2.0 * self.dx)
            })
            .collect()
    }

    /// Mass of each cell, `M_{i+½} − M_{i−½}` with interface values taken as
    /// averages of neighbouring cells; sums to one.
    pub fn cell_masses(&self) -> Vec<f64> {
        let n = self.n_x();
        let at = |i: isize| -> f64 {
            if i < 0 {
                0.0
            } else if i as usize >= n {
                1.0
            } else {
                self.values[i as usize]
            }
        };
        (0..n as isize)
            .map(|i| 0.5 * (at(i) + at(i + 1)) - 0.5 * (at(i - 1) + at(i)))
            .collect()
    }

    /// Piecewise-linear CDF through the cell centres, pinned to 0 and 1 at
    /// the domain ends.
    pub fn to_profile(&self) -> Result<MassProfile> {
        let mut nodes = Vec::with_capacity(self.n_x() + 2);
        let mut values = Vec::with_capacity(self.n_x() + 2);
        nodes.push(self.x_lo);
        values.push(0.0);
        let mut running = 0.0f64;
        for (i, &m) in self.values.iter().enumerate() {
            running = running.max(m.clamp(0.0, 1.0));
            nodes.push(self.centre(i));
            values.push(running);
        }
        nodes.push(self.x_hi);
        values.push(1.0);
        MassProfile::new(nodes, values, vec![])
    }
}

/// Engquist–Osher flux `A(0) + ∫₀^{M_l} max(v, 0) + ∫₀^{M_r} min(v, 0)`.
pub fn numerical_flux(m_left: f64, m_right: f64, table: &FluxTable) -> f64 {
    table.positive_part(m_left) + table.negative_part(m_right)
}

/// Spatial domain containing `support` after transport at speed `v_max` for
/// time `t_final`, widened by 10% on each side.
pub fn domain_for(support: (f64, f64), v_max: f64, t_final: f64) -> (f64, f64) {
    let lo = support.0 - v_max * t_final;
    let hi = support.1 + v_max * t_final;
    let margin = 0.1 * (hi - lo).max(1e-12);
    (lo - margin, hi + margin)
}

/// Explicit conservative update `Mᵢ ← Mᵢ − (dt/dx)(F_{i+½} − F_{i−½})`.
pub fn step(grid: &SpatialGrid, table: &FluxTable, dt: f64) -> Result<SpatialGrid> {
    let courant = dt * table.max_speed() / grid.dx;
    if !(dt > 0.0) || courant > MAX_CFL * (1.0 + 1e-12) {
        return Err(Error::Stability(format!(
            "CFL number {courant} exceeds {MAX_CFL} (dt = {dt}, dx = {})",
            grid.dx
        )));
    }
    let n = grid.n_x();
    let m = &grid.values;
    let ratio = dt / grid.dx;
    // Interface fluxes F_{i−½}, i = 0..=n.
    let mut fluxes = Vec::with_capacity(n + 1);
    fluxes.push(numerical_flux(0.0, m[0], table));
    for i in 1..n {
        fluxes.push(numerical_flux(m[i - 1], m[i], table));
    }
    fluxes.push(numerical_flux(m[n - 1], 1.0, table));
    let values = (0..n).map(|i| m[i] - ratio * (fluxes[i + 1] - fluxes[i])).collect();
    Ok(SpatialGrid {
        x_lo: grid.x_lo,
        x_hi: grid.x_hi,
        dx: grid.dx,
        values,
        time: grid.time + dt,
        boundary_flux_integral: grid.boundary_flux_integral + dt * (fluxes[0] - fluxes[n]),
    })
}

/// Verdict of [`admissibility_monitor`].
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Admissibility {
    Admissible,
    AtomSuspected {
        location: f64,
        /// Largest slope divided by the reference slope.
        steepness: f64,
    },
}

/// Largest discrete slope `(M_{i+1} − Mᵢ)/dx` and where it occurs.
pub fn max_slope(grid: &SpatialGrid) -> (f64, f64) {
    let mut best = (0.0, grid.centre(0));
    for i in 0..grid.n_x().saturating_sub(1) {
        let s = (grid.values[i + 1] - grid.values[i]) / grid.dx;
        if s > best.0 {
            best = (s, 0.5 * (grid.centre(i) + grid.centre(i + 1)));
        }
    }
    best
}

/// Flags a slope above `factor × reference_slope` as a suspected atom.
pub fn admissibility_monitor(grid: &SpatialGrid, reference_slope: f64, factor: f64) -> Admissibility {
    let (slope, location) = max_slope(grid);
    if reference_slope > 0.0 && slope > factor * reference_slope {
        Admissibility::AtomSuspected { location, steepness: slope / reference_slope }
    } else {
        Admissibility::Admissible
    }
}

/// First monitor event of a run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdmissibilityEvent {
    pub time: f64,
    pub location: f64,
    pub steepness: f64,
}

#[derive(Clone, Debug)]
pub struct MassRunOptions {
    /// Courant number used to pick the step, at most [`MAX_CFL`].
    pub cfl: f64,
    pub monitor_factor: f64,
    /// Keep every step (needed by [`entropy_residual`]).
    pub record_steps: bool,
}

impl Default for MassRunOptions {
    fn default() -> Self {
        MassRunOptions { cfl: MAX_CFL, monitor_factor: DEFAULT_MONITOR_FACTOR, record_steps: false }
    }
}

/// Output of [`couple_and_run`].
#[derive(Clone, Debug)]
pub struct MassTrajectory {
    pub outputs: Vec<SpatialGrid>,
    /// Every step including the initial grid, when requested.
    pub steps: Vec<SpatialGrid>,
    pub dt_max: f64,
    pub n_steps: usize,
    pub admissibility: Option<AdmissibilityEvent>,
    pub monotonicity_violations: usize,
    pub range_violations: usize,
    /// Largest `|Σ(Mᵢ(t) − Mᵢ(0))dx − boundary flux integral|`.
    pub conservation_error: f64,
}

impl MassTrajectory {
    /// The run stayed in the absolutely continuous class.
    pub fn is_admissible(&self) -> bool {
        self.admissibility.is_none()
    }
}

fn count_violations(values: &[f64]) -> (usize, usize) {
    let tol = 1e-14;
    let mono = values.windows(2).filter(|w| w[1] < w[0] - tol).count();
    let range = values.iter().filter(|&&v| v < -tol || v > 1.0 + tol).count();
    (mono, range)
}

/// Drives the conservation law with the velocity served by `source`.
///
/// Steps between consecutive output times are uniform and no larger than
/// `cfl·dx/‖v‖_∞`; the velocity is read at the start of each step.
pub fn couple_and_run(
    source: &dyn VelocitySource,
    initial: &SpatialGrid,
    t_final: f64,
    output_times: &[f64],
    options: &MassRunOptions,
) -> Result<MassTrajectory> {
    if !(options.cfl > 0.0 && options.cfl <= MAX_CFL) {
        return Err(Error::Config(format!("CFL number {} must lie in (0, {MAX_CFL}]", options.cfl)));
    }
    if output_times.windows(2).any(|w| w[1] < w[0])
        || output_times.iter().any(|&t| t < 0.0 || t > t_final)
    {
        return Err(Error::Config("output times must be sorted within [0, t_final]".into()));
    }
    let v_max = source.speed_bound();
    let dt_max = if v_max > 0.0 { options.cfl * initial.dx / v_max } else { f64::INFINITY };
    let reference_slope = max_slope(initial).0;
    let base = initial.integral();

    let mut targets: Vec<f64> = output_times.to_vec();
    if targets.last().is_none_or(|&t| t < t_final) {
        targets.push(t_final);
    }

    let mut traj = MassTrajectory {
        outputs: Vec::new(),
        steps: Vec::new(),
        dt_max,
        n_steps: 0,
        admissibility: None,
        monotonicity_violations: 0,
        range_violations: 0,
        conservation_error: 0.0,
    };
    let mut grid = initial.clone();
    if options.record_steps {
        traj.steps.push(grid.clone());
    }
    let mut next_output = 0;
    let emit = |grid: &SpatialGrid, traj: &mut MassTrajectory, next_output: &mut usize| {
        while *next_output < output_times.len() && output_times[*next_output] <= grid.time + 1e-12 {
            traj.outputs.push(grid.clone());
            *next_output += 1;
        }
    };
    emit(&grid, &mut traj, &mut next_output);

    let mut t_start = 0.0;
    for &target in &targets {
        let span = target - t_start;
        if span <= 0.0 {
            continue;
        }
        let n = if dt_max.is_finite() { (span / dt_max - 1e-9).ceil().max(1.0) as usize } else { 1 };
        let dt = span / n as f64;
        for k in 0..n {
            let t = t_start + k as f64 * dt;
            let table = FluxTable::new(&source.velocity_at(t));
            let mut next = step(&grid, &table, dt)?;
            next.time = if k + 1 == n { target } else { t + dt };
            let (mono, range) = count_violations(&next.values);
            traj.monotonicity_violations += mono;
            traj.range_violations += range;
            let err = ((next.integral() - base) - next.boundary_flux_integral).abs();
            traj.conservation_error = traj.conservation_error.max(err);
            if traj.admissibility.is_none() {
                if let Admissibility::AtomSuspected { location, steepness } =
                    admissibility_monitor(&next, reference_slope, options.monitor_factor)
                {
                    traj.admissibility = Some(AdmissibilityEvent { time: next.time, location, steepness });
                }
            }
            grid = next;
            traj.n_steps += 1;
            if options.record_steps {
                traj.steps.push(grid.clone());
            }
        }
        emit(&grid, &mut traj, &mut next_output);
        t_start = target;
    }
    Ok(traj)
}

/// Smooth nonnegative space-time bump `b((x−x_c)/x_w)·b((t−t_c)/t_w)` with
/// `b(z) = exp(1 − 1/(1 − z²))` on `|z| < 1`.
#[derive(Clone, Copy, Debug)]
pub struct Bump {
    pub x_centre: f64,
    pub x_half_width: f64,
    pub t_centre: f64,
    pub t_half_width: f64,
}

impl Bump {
    fn profile(z: f64) -> f64 {
        if z.abs() >= 1.0 {
            0.0
        } else {
            (1.0 - 1.0 / (1.0 - z * z)).exp()
        }
    }

    pub fn eval(&self, x: f64, t: f64) -> f64 {
        Self::profile((x - self.x_centre) / self.x_half_width)
            * Self::profile((t - self.t_centre) / self.t_half_width)
    }
}

/// Per-level values of the discrete Kruzhkov functional.
#[derive(Clone, Debug)]
pub struct EntropyResidual {
    pub levels: Vec<f64>,
    pub residuals: Vec<f64>,
}

impl EntropyResidual {
    /// Largest positive part over the levels.
    pub fn max_positive(&self) -> f64 {
        self.residuals.iter().fold(0.0, |a, &r| a.max(r))
    }
}

/// Discrete weak form of `∂ₜ|M − k| + ∂ₓ[sgn(M − k)(A(M) − A(k))] ≤ 0`
/// tested against `bump`:
/// `R(k) = −Σₙ Δtₙ Σᵢ dx [ηᵢⁿ ∂ₜφ + qᵢⁿ ∂ₓφ]` with forward differences in
/// time and centred differences in space. Entropy solutions give `R ≤ 0`
/// up to discretisation error. `steps` must hold every step of the run.
pub fn entropy_residual(
    steps: &[SpatialGrid],
    source: &dyn VelocitySource,
    levels: &[f64],
    bump: &Bump,
) -> EntropyResidual {
    let mut residuals = vec![0.0; levels.len()];
    if steps.len() < 2 {
        return EntropyResidual { levels: levels.to_vec(), residuals };
    }
    let xs = steps[0].centres();
    let dx = steps[0].dx;
    for w in steps.windows(2) {
        let (now, next) = (&w[0], &w[1]);
        let dt = next.time - now.time;
        let table = FluxTable::new(&source.velocity_at(now.time));
        let phi_now: Vec<f64> = xs.iter().map(|&x| bump.eval(x, now.time)).collect();
        let phi_next: Vec<f64> = xs.iter().map(|&x| bump.eval(x, next.time)).collect();
        for (slot, &k) in residuals.iter_mut().zip(levels) {
            let a_k = table.primitive(k);
            let mut acc = 0.0;
            for i in 0..xs.len() {
                let m = now.values[i];
                let eta = (m - k).abs();
                let q = (m - k).signum() * (table.primitive(m) - a_k);
                let phi_t = (phi_next[i] - phi_now[i]) / dt;
                let phi_x = if i == 0 || i + 1 == xs.len() {
                    0.0
                } else {
                    (phi_now[i + 1] - phi_now[i - 1]) / (2.0 * dx)
                };
                acc += eta * phi_t + q * phi_x;
            }
            *slot -= dt * dx * acc;
        }
    }
    EntropyResidual { levels: levels.to_vec(), residuals }
}
