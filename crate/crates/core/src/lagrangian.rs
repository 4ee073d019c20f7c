//! Flow-map pipeline for bounded protocols.
//!
//! Agents are labelled by their initial positions `α`, taken at the
//! quantiles `M₀⁻¹((k − ½)/P)` so every particle carries mass `1/P` and the
//! mass between labels `j` and `k` is `|j − k|/P` for all time. The
//! conserved quantity `ψ₀(α) = u₀(α) + Σ_γ Φ(d(α, γ), α − γ)/P` closes the
//! dynamics into the first-order system
//! `Ẋ_k = ψ₀(α_k) − Σ_j Φ(|j − k|/P, X_k − X_j)/P`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::{Kernel, KernelFamily};
use crate::mass_coords::MassProfile;
use crate::v_solver::{midpoints, VelocityGrid};

/// Blow-up is declared when an adjacent gap falls below this fraction of
/// its initial value.
pub const COLLAPSE_FRACTION: f64 = 1e-8;

/// How the pairwise alignment sum is evaluated.
#[derive(Clone, Debug)]
enum Pairwise {
    /// `φ` is a constant `c`: the sum is `c(X_k − X̄)`.
    Constant(f64),
    /// `Φ(d, z) = φ_{|j−k|} z` with rates tabulated by label offset.
    ByOffset(Vec<f64>),
    /// General protocol, `Φ` evaluated per pair.
    General,
}

/// The closed particle system for a bounded protocol.
#[derive(Clone, Debug)]
pub struct FlowSystem {
    kernel: Kernel,
    radial: bool,
    n: usize,
    pairwise: Pairwise,
}

impl FlowSystem {
    /// `radial` forces the topological argument to 0, so only the spatial
    /// offset enters the protocol.
    pub fn new(kernel: &Kernel, n_particles: usize, radial: bool) -> Result<Self> {
        if !kernel.is_bounded() {
            return Err(Error::Unsupported(
                "the flow-map pipeline needs a bounded protocol".into(),
            ));
        }
        if n_particles < 2 {
            return Err(Error::Config("need at least two particles".into()));
        }
        let n = n_particles;
        let pairwise = if kernel.ignores_offset() {
            if radial || matches!(kernel.family(), KernelFamily::Constant { .. }) {
                Pairwise::Constant(kernel.eval(0.0, 0.0)?)
            } else {
                let rates = (0..n)
                    .map(|k| kernel.eval(k as f64 / n as f64, 0.0))
                    .collect::<Result<Vec<_>>>()?;
                Pairwise::ByOffset(rates)
            }
        } else {
            Pairwise::General
        };
        Ok(FlowSystem { kernel: kernel.clone(), radial, n, pairwise })
    }

    pub fn n_particles(&self) -> usize {
        self.n
    }

    pub fn is_radial(&self) -> bool {
        self.radial
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    fn distance(&self, j: usize, k: usize) -> f64 {
        if self.radial {
            0.0
        } else {
            j.abs_diff(k) as f64 / self.n as f64
        }
    }

    /// `S_k = (1/P) Σ_j Φ(d_{jk}, X_k − X_j)`.
    pub fn alignment_sum(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n;
        let w = 1.0 / n as f64;
        match &self.pairwise {
            Pairwise::Constant(c) => {
                let mean = x.iter().sum::<f64>() * w;
                x.iter().map(|xk| c * (xk - mean)).collect()
            }
            Pairwise::ByOffset(rates) => (0..n)
                .map(|k| {
                    let xk = x[k];
                    let s: f64 = x.iter().enumerate().map(|(j, xj)| rates[j.abs_diff(k)] * (xk - xj)).sum();
                    w * s
                })
                .collect(),
            Pairwise::General => (0..n)
                .map(|k| {
                    let s: f64 = (0..n)
                        .filter(|&j| j != k)
                        .map(|j| {
                            self.kernel
                                .eval_antiderivative(self.distance(j, k), x[k] - x[j])
                                .expect("distances lie in [0, 1]")
                        })
                        .sum();
                    w * s
                })
                .collect(),
        }
    }

    /// `(1/P) Σ_j φ(d_{jk}, X_k − X_j)(V_k − V_j)`, the alignment force of
    /// the second-order system.
    fn alignment_force(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        let n = self.n;
        let w = 1.0 / n as f64;
        match &self.pairwise {
            Pairwise::Constant(c) => {
                let mean = v.iter().sum::<f64>() * w;
                v.iter().map(|vk| c * (vk - mean)).collect()
            }
            Pairwise::ByOffset(rates) => (0..n)
                .map(|k| {
                    let vk = v[k];
                    w * v.iter().enumerate().map(|(j, vj)| rates[j.abs_diff(k)] * (vk - vj)).sum::<f64>()
                })
                .collect(),
            Pairwise::General => (0..n)
                .map(|k| {
                    w * (0..n)
                        .filter(|&j| j != k)
                        .map(|j| {
                            self.kernel.eval(self.distance(j, k), x[k] - x[j]).expect("distances lie in [0, 1]")
                                * (v[k] - v[j])
                        })
                        .sum::<f64>()
                })
                .collect(),
        }
    }

    fn velocity(&self, psi0: &[f64], x: &[f64]) -> Vec<f64> {
        psi0.iter().zip(self.alignment_sum(x)).map(|(p, s)| p - s).collect()
    }
}

/// `ψ₀(α_k) = u₀(α_k) + (1/P) Σ_j Φ(d_{ρ₀}(α_k, α_j), α_k − α_j)`, with the
/// topological distance read off the initial CDF (forced to 0 in radial
/// mode).
pub fn compute_psi0(
    profile: &MassProfile,
    labels: &[f64],
    u0: &[f64],
    kernel: &Kernel,
    radial: bool,
) -> Result<Vec<f64>> {
    if !kernel.is_bounded() {
        return Err(Error::Unsupported("ψ₀ needs a bounded protocol".into()));
    }
    let p = labels.len();
    let w = 1.0 / p as f64;
    let mass: Vec<f64> = labels.iter().map(|&a| profile.cdf(a)).collect();
    (0..p)
        .map(|k| {
            let mut s = 0.0;
            for j in 0..p {
                if j == k {
                    continue;
                }
                let d = if radial { 0.0 } else { (mass[k] - mass[j]).abs() };
                s += kernel.eval_antiderivative(d, labels[k] - labels[j])?;
            }
            Ok(u0[k] + w * s)
        })
        .collect()
}

/// Particle state of the flow map.
#[derive(Clone, Debug, PartialEq)]
pub struct LagrangianState {
    pub labels: Vec<f64>,
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
    pub psi0: Vec<f64>,
    pub time: f64,
}

impl LagrangianState {
    /// Particles at the quantiles of an atom-free `ρ₀`, with `u₀` sampled at
    /// the labels.
    pub fn new<U: Fn(f64) -> f64>(profile: &MassProfile, u0: U, system: &FlowSystem) -> Result<Self> {
        if !profile.is_continuous() {
            return Err(Error::Admissibility("particle labels need an atom-free initial density".into()));
        }
        let p = system.n_particles();
        let labels: Vec<f64> = (1..=p)
            .map(|k| profile.quantile((k as f64 - 0.5) / p as f64))
            .collect::<Result<_>>()?;
        if labels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Admissibility("particle labels are not strictly increasing".into()));
        }
        let u: Vec<f64> = labels.iter().map(|&a| u0(a)).collect();
        let psi0 = compute_psi0(profile, &labels, &u, system.kernel(), system.is_radial())?;
        Ok(LagrangianState { positions: labels.clone(), labels, velocities: u, psi0, time: 0.0 })
    }

    /// Particles at given labels with a prescribed `ψ₀`; velocities follow
    /// from the flow equation.
    pub fn from_psi0(labels: Vec<f64>, psi0: Vec<f64>, system: &FlowSystem) -> Result<Self> {
        if labels.len() != system.n_particles() || psi0.len() != labels.len() {
            return Err(Error::Config("labels and ψ₀ must have one entry per particle".into()));
        }
        let velocities = system.velocity(&psi0, &labels);
        Ok(LagrangianState { positions: labels.clone(), labels, velocities, psi0, time: 0.0 })
    }

    pub fn n_particles(&self) -> usize {
        self.labels.len()
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.labels.len() as f64
    }

    /// `Σ w_k V_k`.
    pub fn momentum(&self) -> f64 {
        self.velocities.iter().sum::<f64>() * self.weight()
    }

    /// Adjacent difference quotients `(X_{k+1} − X_k)/(α_{k+1} − α_k)`.
    pub fn difference_quotients(&self) -> Vec<f64> {
        (0..self.n_particles() - 1)
            .map(|k| (self.positions[k + 1] - self.positions[k]) / (self.labels[k + 1] - self.labels[k]))
            .collect()
    }

    /// `ψ_k = V_k + (1/P) Σ_j Φ(d_{jk}, X_k − X_j)`; equals `ψ₀` along exact
    /// solutions of the second-order system.
    pub fn psi(&self, system: &FlowSystem) -> Vec<f64> {
        self.velocities.iter().zip(system.alignment_sum(&self.positions)).map(|(v, s)| v + s).collect()
    }
}

/// One RK4 step of the reduced system `Ẋ = ψ₀ − S(X)`.
pub fn integrate_flow(state: &LagrangianState, system: &FlowSystem, dt: f64) -> LagrangianState {
    let x = &state.positions;
    let psi = &state.psi0;
    let stage = |y: &[f64]| system.velocity(psi, y);
    let k1 = stage(x);
    let y: Vec<f64> = x.iter().zip(&k1).map(|(a, k)| a + 0.5 * dt * k).collect();
    let k2 = stage(&y);
    let y: Vec<f64> = x.iter().zip(&k2).map(|(a, k)| a + 0.5 * dt * k).collect();
    let k3 = stage(&y);
    let y: Vec<f64> = x.iter().zip(&k3).map(|(a, k)| a + dt * k).collect();
    let k4 = stage(&y);
    let positions: Vec<f64> = (0..x.len())
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    let velocities = system.velocity(psi, &positions);
    LagrangianState {
        labels: state.labels.clone(),
        positions,
        velocities,
        psi0: state.psi0.clone(),
        time: state.time + dt,
    }
}

/// One RK4 step of the second-order system
/// `Ẋ = V`, `V̇_k = −(1/P) Σ_j φ(d_{jk}, X_k − X_j)(V_k − V_j)`, which does
/// not use `ψ₀`. Used to check that `ψ` is conserved.
pub fn integrate_second_order(state: &LagrangianState, system: &FlowSystem, dt: f64) -> LagrangianState {
    let n = state.n_particles();
    let rhs = |x: &[f64], v: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let f = system.alignment_force(x, v);
        (v.to_vec(), f.into_iter().map(|a| -a).collect())
    };
    let axpy = |a: &[f64], b: &[f64], h: f64| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| p + h * q).collect() };
    let (x, v) = (&state.positions, &state.velocities);
    let (kx1, kv1) = rhs(x, v);
    let (kx2, kv2) = rhs(&axpy(x, &kx1, 0.5 * dt), &axpy(v, &kv1, 0.5 * dt));
    let (kx3, kv3) = rhs(&axpy(x, &kx2, 0.5 * dt), &axpy(v, &kv2, 0.5 * dt));
    let (kx4, kv4) = rhs(&axpy(x, &kx3, dt), &axpy(v, &kv3, dt));
    let comb = |y: &[f64], a: &[f64], b: &[f64], c: &[f64], d: &[f64]| -> Vec<f64> {
        (0..n).map(|i| y[i] + dt / 6.0 * (a[i] + 2.0 * b[i] + 2.0 * c[i] + d[i])).collect()
    };
    LagrangianState {
        labels: state.labels.clone(),
        positions: comb(x, &kx1, &kx2, &kx3, &kx4),
        velocities: comb(v, &kv1, &kv2, &kv3, &kv4),
        psi0: state.psi0.clone(),
        time: state.time + dt,
    }
}

/// Loss of ordering or collapse of an adjacent gap.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlowUpEvent {
    pub time: f64,
    /// Left particle of the collapsing pair.
    pub index: usize,
    pub gap_ratio: f64,
}

/// Output of [`run_flow`].
#[derive(Clone, Debug)]
pub struct FlowRun {
    pub outputs: Vec<LagrangianState>,
    /// `(t, min_k gap_k(t)/gap_k(0))` at every step.
    pub gap_history: Vec<(f64, f64)>,
    pub blowup: Option<BlowUpEvent>,
    pub n_steps: usize,
}

impl FlowRun {
    pub fn is_classical(&self) -> bool {
        self.blowup.is_none()
    }

    /// First time the smallest gap ratio reaches `fraction`, linearly
    /// interpolated between steps.
    pub fn first_time_below(&self, fraction: f64) -> Option<f64> {
        let h = &self.gap_history;
        let k = h.iter().position(|&(_, r)| r <= fraction)?;
        if k == 0 {
            return Some(h[0].0);
        }
        let (t0, r0) = h[k - 1];
        let (t1, r1) = h[k];
        Some(t0 + (r0 - fraction) / (r0 - r1) * (t1 - t0))
    }
}

fn min_gap_ratio(state: &LagrangianState, initial_gaps: &[f64]) -> (f64, usize) {
    let mut best = (f64::INFINITY, 0);
    for (k, g0) in initial_gaps.iter().enumerate() {
        let r = (state.positions[k + 1] - state.positions[k]) / g0;
        if r < best.0 {
            best = (r, k);
        }
    }
    best
}

/// Integrates the reduced system to `t_final` with steps no larger than
/// `dt`, landing on every output time. Stops at the first blow-up event.
pub fn run_flow(
    initial: &LagrangianState,
    system: &FlowSystem,
    dt: f64,
    t_final: f64,
    output_times: &[f64],
) -> Result<FlowRun> {
    if !(dt > 0.0) || !(t_final >= 0.0) {
        return Err(Error::Config("time step must be positive and final time nonnegative".into()));
    }
    if output_times.windows(2).any(|w| w[1] < w[0]) || output_times.iter().any(|&t| t < 0.0 || t > t_final) {
        return Err(Error::Config("output times must be sorted within [0, t_final]".into()));
    }
    let initial_gaps: Vec<f64> = initial.positions.windows(2).map(|w| w[1] - w[0]).collect();
    if initial_gaps.iter().any(|&g| g <= 0.0) {
        return Err(Error::Admissibility("initial particle positions are not ordered".into()));
    }
    let mut run = FlowRun { outputs: Vec::new(), gap_history: vec![(0.0, 1.0)], blowup: None, n_steps: 0 };
    let mut state = initial.clone();
    let mut next_output = 0;
    while next_output < output_times.len() && output_times[next_output] <= 0.0 {
        run.outputs.push(state.clone());
        next_output += 1;
    }
    let mut targets = output_times.to_vec();
    if targets.last().is_none_or(|&t| t < t_final) {
        targets.push(t_final);
    }
    let mut t_start = 0.0;
    'outer: for &target in &targets {
        let span = target - t_start;
        if span <= 0.0 {
            continue;
        }
        let n = (span / dt - 1e-9).ceil().max(1.0) as usize;
        let h = span / n as f64;
        for k in 0..n {
            let mut next = integrate_flow(&state, system, h);
            next.time = if k + 1 == n { target } else { t_start + (k + 1) as f64 * h };
            let (ratio, index) = min_gap_ratio(&next, &initial_gaps);
            run.gap_history.push((next.time, ratio));
            run.n_steps += 1;
            state = next;
            if ratio < COLLAPSE_FRACTION {
                run.blowup = Some(BlowUpEvent { time: state.time, index, gap_ratio: ratio });
                break 'outer;
            }
        }
        while next_output < output_times.len() && output_times[next_output] <= state.time + 1e-12 {
            run.outputs.push(state.clone());
            next_output += 1;
        }
        t_start = target;
    }
    Ok(run)
}

/// Verdict of a monotonicity scan.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Threshold {
    Satisfied,
    Violated {
        alpha: f64,
        beta: f64,
        /// `ψ(α) − ψ(β) > 0` for the worst pair `α < β`.
        gap: f64,
    },
}

impl Threshold {
    pub fn is_satisfied(&self) -> bool {
        matches!(self, Threshold::Satisfied)
    }
}

/// Finds the pair `α < β` maximising `ψ(α) − ψ(β)`; nondecreasing samples
/// (including flat stretches) are satisfied.
pub fn threshold_check(labels: &[f64], psi: &[f64]) -> Threshold {
    let mut best = (0.0, 0, 0);
    let mut arg_max = 0;
    for k in 1..psi.len() {
        if psi[k - 1] > psi[arg_max] {
            arg_max = k - 1;
        }
        let gap = psi[arg_max] - psi[k];
        if gap > best.0 {
            best = (gap, arg_max, k);
        }
    }
    if best.0 > 0.0 {
        Threshold::Violated { alpha: labels[best.1], beta: labels[best.2], gap: best.0 }
    } else {
        Threshold::Satisfied
    }
}

/// `a(m_i) = v₀(m_i) + (1/N) Σ_j φ(|m_i − m_j|)(m_i − m_j)` and its verdict.
pub fn mass_threshold(v0: &VelocityGrid, kernel: &Kernel) -> Result<(Vec<f64>, Threshold)> {
    if !kernel.is_pure() || !kernel.is_bounded() {
        return Err(Error::Unsupported("the mass threshold needs a bounded pure protocol".into()));
    }
    let n = v0.n_cells();
    let m = midpoints(n);
    let rates = (0..n).map(|k| kernel.eval_pure(k as f64 / n as f64)).collect::<Result<Vec<_>>>()?;
    let a: Vec<f64> = (0..n)
        .map(|i| {
            let s: f64 = (0..n).map(|j| rates[i.abs_diff(j)] * (m[i] - m[j])).sum();
            v0.values[i] + s / n as f64
        })
        .collect();
    let verdict = threshold_check(&m, &a);
    Ok((a, verdict))
}

/// `e^{−‖φ‖t} + q(1 − e^{−‖φ‖t})/‖φ‖` with `q` the ψ₀ difference quotient;
/// the `‖φ‖ → 0` limit is `1 + q t`.
pub fn flow_lower_bound(psi_quotient: f64, sup_norm: f64, t: f64) -> f64 {
    if sup_norm * t < 1e-12 {
        return 1.0 + psi_quotient * t;
    }
    let decay = (-sup_norm * t).exp();
    decay + psi_quotient * (1.0 - decay) / sup_norm
}

/// `min_k [quotient_k(t) − bound_k(t)]` over adjacent pairs.
pub fn gronwall_margin(state: &LagrangianState, sup_norm: f64) -> f64 {
    let q = state.difference_quotients();
    (0..q.len())
        .map(|k| {
            let psi_q = (state.psi0[k + 1] - state.psi0[k]) / (state.labels[k + 1] - state.labels[k]);
            q[k] - flow_lower_bound(psi_q, sup_norm, state.time)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Latest classical time predicted for a violating pair in radial mode.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RadialPrediction {
    pub alpha: f64,
    pub beta: f64,
    /// `(β − α)/(ψ₀(α) − ψ₀(β))`, where the linear upper bound on the gap
    /// reaches zero.
    pub crossing_time: f64,
    /// `(ψ₀(α) − ψ₀(β))/(β − α)`, the reciprocal expression, reported for
    /// comparison.
    pub reciprocal_expression: f64,
}

/// Prediction for the pair `(i, j)`, `None` if `ψ₀` does not decrease there.
pub fn radial_blowup_bound(labels: &[f64], psi0: &[f64], i: usize, j: usize) -> Option<RadialPrediction> {
    let (i, j) = if i < j { (i, j) } else { (j, i) };
    let drop = psi0[i] - psi0[j];
    if i == j || drop <= 0.0 {
        return None;
    }
    let width = labels[j] - labels[i];
    Some(RadialPrediction {
        alpha: labels[i],
        beta: labels[j],
        crossing_time: width / drop,
        reciprocal_expression: drop / width,
    })
}

/// Earliest crossing time over all pairs.
pub fn earliest_radial_blowup(labels: &[f64], psi0: &[f64]) -> Option<RadialPrediction> {
    let mut best: Option<RadialPrediction> = None;
    for i in 0..labels.len() {
        for j in (i + 1)..labels.len() {
            if let Some(p) = radial_blowup_bound(labels, psi0, i, j) {
                if best.as_ref().is_none_or(|b| p.crossing_time < b.crossing_time) {
                    best = Some(p);
                }
            }
        }
    }
    best
}

/// Density and velocity between consecutive particles.
#[derive(Clone, Debug, PartialEq)]
pub struct EulerianField {
    /// Particle positions; `rho[k]` and `u[k]` live on `(X_k, X_{k+1})`.
    pub edges: Vec<f64>,
    pub rho: Vec<f64>,
    /// Velocity at the interval midpoints.
    pub u: Vec<f64>,
}

impl EulerianField {
    pub fn midpoints(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Piecewise-constant density, zero outside the particle hull.
    pub fn density_at(&self, x: f64) -> f64 {
        let n = self.edges.len();
        if x < self.edges[0] || x >= self.edges[n - 1] {
            return 0.0;
        }
        self.rho[self.edges.partition_point(|&e| e <= x) - 1]
    }
}

/// `ρ = w/(X_{k+1} − X_k)` and `u` by linear interpolation of `V`.
pub fn eulerian_reconstruct(state: &LagrangianState) -> Result<EulerianField> {
    let w = state.weight();
    let x = &state.positions;
    if x.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::Admissibility(format!("particle ordering lost at t = {}", state.time)));
    }
    let rho = x.windows(2).map(|p| w / (p[1] - p[0])).collect();
    let u = state.velocities.windows(2).map(|v| 0.5 * (v[0] + v[1])).collect();
    Ok(EulerianField { edges: x.clone(), rho, u })
}

/// `e = ∂ₓψ` and `q = e/ρ` between consecutive particles; `q` is `None`
/// where the reconstructed density is negligible.
#[derive(Clone, Debug, PartialEq)]
pub struct EqDiagnostics {
    pub x: Vec<f64>,
    pub e: Vec<f64>,
    pub q: Vec<Option<f64>>,
}

pub fn e_q_diagnostics(state: &LagrangianState, field: &EulerianField) -> EqDiagnostics {
    let xs = field.midpoints();
    let mut e = Vec::with_capacity(xs.len());
    let mut q = Vec::with_capacity(xs.len());
    for k in 0..xs.len() {
        let gap = state.positions[k + 1] - state.positions[k];
        let ek = (state.psi0[k + 1] - state.psi0[k]) / gap;
        e.push(ek);
        q.push(if field.rho[k] > 1e-300 { Some(ek / field.rho[k]) } else { None });
    }
    EqDiagnostics { x: xs, e, q }
}

/// Post-hoc check of `min q₀ < −‖∂_d φ‖_∞·D` with `D` the observed support
/// diameter.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RefinedNegativeDiagnostic {
    pub q0_min: f64,
    pub d_derivative_sup: f64,
    pub diameter: f64,
    pub threshold: f64,
    pub triggered: bool,
}

pub fn refined_negative_diagnostic(
    initial: &LagrangianState,
    kernel: &Kernel,
    observed_diameter: f64,
) -> Result<RefinedNegativeDiagnostic> {
    let field = eulerian_reconstruct(initial)?;
    let q0_min = e_q_diagnostics(initial, &field).q.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let d_derivative_sup = kernel.d_derivative_sup(1001)?;
    let threshold = -d_derivative_sup * observed_diameter;
    Ok(RefinedNegativeDiagnostic {
        q0_min,
        d_derivative_sup,
        diameter: observed_diameter,
        threshold,
        triggered: q0_min < threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_state(p: usize, kernel: &Kernel, u0: impl Fn(f64) -> f64) -> (FlowSystem, LagrangianState) {
        let sys = FlowSystem::new(kernel, p, false).unwrap();
        let st = LagrangianState::new(&MassProfile::uniform(0.0, 1.0).unwrap(), u0, &sys).unwrap();
        (sys, st)
    }

    #[test]
    fn test_psi0_constant_kernel_uniform() {
        let (_, st) = uniform_state(10_000, &Kernel::constant(1.0).unwrap(), |_| 0.0);
        for (a, p) in st.labels.iter().zip(&st.psi0) {
            assert!((p - (a - 0.5)).abs() < 1e-4);
        }
    }

    #[test]
    fn test_psi0_shift_is_additive() {
        let k = Kernel::general(KernelFamily::AffineDecay { a: 1.0, b: 0.5, z_cut: Some(0.3) }).unwrap();
        let (_, a) = uniform_state(200, &k, |x| x.sin());
        let (_, b) = uniform_state(200, &k, |x| x.sin() + 2.5);
        for (x, y) in a.psi0.iter().zip(&b.psi0) {
            assert!((y - x - 2.5).abs() < 1e-13);
        }
    }

    #[test]
    fn test_psi0_odd_for_symmetric_data() {
        let k = Kernel::constant(1.0).unwrap();
        let sys = FlowSystem::new(&k, 400, false).unwrap();
        let p = MassProfile::from_blocks(&[-2.0, -1.0, 1.0, 2.0], &[0.25, 0.5, 0.25]).unwrap();
        let st = LagrangianState::new(&p, |x| x.powi(3), &sys).unwrap();
        let n = st.psi0.len();
        for k in 0..n {
            assert!((st.psi0[k] + st.psi0[n - 1 - k]).abs() < 1e-12);
        }
    }

    #[test]
    fn test_singular_kernel_rejected() {
        assert!(matches!(
            FlowSystem::new(&Kernel::power_law(0.5).unwrap(), 10, false),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn test_threshold_examples() {
        let labels: Vec<f64> = (0..11).map(|k| k as f64 / 10.0).collect();
        let inc: Vec<f64> = labels.iter().map(|a| a - 0.5).collect();
        assert!(threshold_check(&labels, &inc).is_satisfied());
        assert!(threshold_check(&labels, &[0.3; 11]).is_satisfied());
        let mut dip = inc.clone();
        dip[5] -= 0.2; // ψ[4] − ψ[5] = −0.1 + 0.2 = 0.1
        match threshold_check(&labels, &dip) {
            Threshold::Violated { alpha, beta, gap } => {
                assert_eq!((alpha, beta), (0.4, 0.5));
                assert!((gap - 0.1).abs() < 1e-12);
            }
            t => panic!("{t:?}"),
        }
    }

    #[test]
    fn test_mass_threshold_examples() {
        let k = Kernel::constant(1.0).unwrap();
        let v0 = VelocityGrid::from_midpoints(64, |m| (3.0 * m).sin()).unwrap();
        let (a, _) = mass_threshold(&v0, &k).unwrap();
        for (i, m) in midpoints(64).iter().enumerate() {
            assert!((a[i] - (v0.values[i] + m - 0.5)).abs() < 1e-13);
        }
        let zero = VelocityGrid::new(vec![0.0; 32]).unwrap();
        assert!(mass_threshold(&zero, &k).unwrap().1.is_satisfied());
        let neg = VelocityGrid::from_midpoints(32, |m| -2.0 * m).unwrap();
        let (a, verdict) = mass_threshold(&neg, &k).unwrap();
        for (i, m) in midpoints(32).iter().enumerate() {
            assert!((a[i] - (-m - 0.5)).abs() < 1e-13);
        }
        assert!(!verdict.is_satisfied());
    }

    #[test]
    fn test_uniform_translation() {
        let k = Kernel::general(KernelFamily::AffineDecay { a: 2.0, b: 1.0, z_cut: Some(0.4) }).unwrap();
        let (sys, st) = uniform_state(40, &k, |_| 0.7);
        let run = run_flow(&st, &sys, 0.05, 1.0, &[1.0]).unwrap();
        let out = &run.outputs[0];
        for (x, a) in out.positions.iter().zip(&out.labels) {
            assert!((x - (a + 0.7)).abs() < 1e-12);
        }
    }

    #[test]
    fn test_two_body_closed_form() {
        // Φ(d, z) = z and w = ½: ṙ = Δψ − r.
        let k = Kernel::constant(1.0).unwrap();
        let sys = FlowSystem::new(&k, 2, false).unwrap();
        let st = LagrangianState::from_psi0(vec![0.0, 1.0], vec![0.2, 0.5], &sys).unwrap();
        let run = run_flow(&st, &sys, 0.01, 3.0, &[1.0, 3.0]).unwrap();
        // Oracle: scalar ODE integrated with a fine explicit midpoint rule.
        let mut r = 1.0;
        let h = 1e-5;
        let mut oracle = Vec::new();
        for step in 1..=300_000 {
            let mid = r + 0.5 * h * (0.3 - r);
            r += h * (0.3 - mid);
            if step == 100_000 || step == 300_000 {
                oracle.push(r);
            }
        }
        for (out, o) in run.outputs.iter().zip(oracle) {
            let gap = out.positions[1] - out.positions[0];
            let exact = 0.3 + 0.7 * (-out.time).exp();
            assert!((gap - exact).abs() < 1e-9);
            assert!((gap - o).abs() < 1e-9);
        }
    }

    #[test]
    fn test_momentum_and_psi_conservation() {
        let k = Kernel::pure(KernelFamily::AlgebraicDecay { exponent: 0.5 }).unwrap();
        let (sys, st) = uniform_state(60, &k, |x| 0.3 * (5.0 * x).sin() + x);
        let p0 = st.momentum();
        let mut s2 = st.clone();
        for _ in 0..2000 {
            s2 = integrate_second_order(&s2, &sys, 1e-3);
        }
        assert!((s2.momentum() - p0).abs() < 1e-10);
        let psi = s2.psi(&sys);
        let drift = psi.iter().zip(&st.psi0).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        assert!(drift < 1e-8, "{drift}");
        let reduced = run_flow(&st, &sys, 1e-3, 2.0, &[2.0]).unwrap();
        let xr = &reduced.outputs[0].positions;
        for (a, b) in xr.iter().zip(&s2.positions) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn test_gronwall_bound_holds() {
        let k = Kernel::pure(KernelFamily::AffineDecay { a: 1.0, b: 0.5, z_cut: None }).unwrap();
        let (sys, st) = uniform_state(120, &k, |x| 0.1 * (6.0 * x).sin());
        let times: Vec<f64> = (1..=5).map(f64::from).collect();
        let run = run_flow(&st, &sys, 1e-2, 5.0, &times).unwrap();
        assert!(run.is_classical());
        for out in &run.outputs {
            assert!(gronwall_margin(out, k.sup_norm()) >= -1e-6);
        }
    }

    #[test]
    fn test_flow_lower_bound_limits() {
        assert_eq!(flow_lower_bound(0.3, 1.0, 0.0), 1.0);
        assert!((flow_lower_bound(0.3, 1.0, 50.0) - 0.3).abs() < 1e-12);
        assert!((flow_lower_bound(0.3, 0.0, 2.0) - 1.6).abs() < 1e-12);
    }

    #[test]
    fn test_radial_prediction() {
        let labels = [0.0, 0.25, 0.75, 1.0];
        let psi = [0.0, 0.25, -0.25, 0.0];
        let p = radial_blowup_bound(&labels, &psi, 1, 2).unwrap();
        assert!((p.crossing_time - 1.0).abs() < 1e-15);
        assert!(radial_blowup_bound(&labels, &psi, 0, 1).is_none());
        let e = earliest_radial_blowup(&labels, &psi).unwrap();
        assert!((e.crossing_time - 1.0).abs() < 1e-15);
        let p = radial_blowup_bound(&[0.0, 0.5], &[1.0, 0.0], 0, 1).unwrap();
        assert!((p.crossing_time - 0.5).abs() < 1e-15);
        assert!((p.reciprocal_expression - 2.0).abs() < 1e-15);
    }

    #[test]
    fn test_collapse_detected() {
        let k = Kernel::constant(1.0).unwrap();
        let sys = FlowSystem::new(&k, 2, true).unwrap();
        let st = LagrangianState::from_psi0(vec![0.0, 1.0], vec![1.0, 0.0], &sys).unwrap();
        // r = −1 + 2e^{−t} vanishes at ln 2.
        let run = run_flow(&st, &sys, 1e-3, 2.0, &[2.0]).unwrap();
        let ev = run.blowup.clone().unwrap();
        assert!((ev.time - 2f64.ln()).abs() < 2e-3);
        let t10 = run.first_time_below(0.1).unwrap();
        assert!((t10 - (2.0 / 1.1f64).ln()).abs() < 1e-6);
    }

    #[test]
    fn test_eulerian_and_q_transport() {
        let k = Kernel::constant(1.0).unwrap();
        let (sys, st) = uniform_state(50, &k, |x| 0.2 * x);
        let f0 = eulerian_reconstruct(&st).unwrap();
        assert!(f0.rho.iter().all(|r| (r - 1.0).abs() < 1e-12));
        let q0 = e_q_diagnostics(&st, &f0).q;
        let run = run_flow(&st, &sys, 1e-2, 1.0, &[1.0]).unwrap();
        let f1 = eulerian_reconstruct(&run.outputs[0]).unwrap();
        let q1 = e_q_diagnostics(&run.outputs[0], &f1).q;
        for (a, b) in q0.iter().zip(&q1) {
            assert!((a.unwrap() - b.unwrap()).abs() < 1e-9);
        }
        let mass: f64 = f1.rho.iter().zip(f1.edges.windows(2)).map(|(r, e)| r * (e[1] - e[0])).sum();
        assert!((mass - 49.0 / 50.0).abs() < 1e-12);
    }

    #[test]
    fn test_refined_diagnostic() {
        let k = Kernel::pure(KernelFamily::AffineDecay { a: 1.0, b: 0.5, z_cut: None }).unwrap();
        let (_, st) = uniform_state(100, &k, |x| -3.0 * x);
        let d = refined_negative_diagnostic(&st, &k, 1.0).unwrap();
        assert!((d.d_derivative_sup - 0.5).abs() < 1e-9);
        assert!(d.triggered);
    }
}
