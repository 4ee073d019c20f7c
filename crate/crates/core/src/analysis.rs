//! Long-time diagnostics: exponential rate fits, decay-bound margins,
//! coupled distances between solutions, flocking detection, and
//! cross-pipeline comparison.

use serde::Serialize;

use crate::lagrangian::EulerianField;
use crate::m_solver::SpatialGrid;
use crate::mass_coords::MassProfile;
use crate::v_solver::{deviation_energy, SpectralOperator, VelocityGrid};

/// Default L¹ threshold for declaring flocking.
pub const FLOCKING_THRESHOLD: f64 = 1e-3;

/// Which samples enter a rate fit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FitWindow {
    /// Samples whose value lies in `[lo, hi]·values[0]`.
    Relative { lo: f64, hi: f64 },
    /// Samples with `t ∈ [t0, t1]`.
    Time { t0: f64, t1: f64 },
}

impl Default for FitWindow {
    fn default() -> Self {
        FitWindow::Relative { lo: 1e-10, hi: 1e-1 }
    }
}

/// Least-squares fit of `log y = c − rate·t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RateFit {
    pub rate: f64,
    /// Root-mean-square residual of the log fit.
    pub residual: f64,
    pub n_points: usize,
}

pub fn fit_rate(times: &[f64], values: &[f64], window: FitWindow) -> Option<RateFit> {
    let v0 = *values.first()?;
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(t, v)| {
            **v > 0.0
                && match window {
                    FitWindow::Relative { lo, hi } => **v >= lo * v0 && **v <= hi * v0,
                    FitWindow::Time { t0, t1 } => **t >= t0 && **t <= t1,
                }
        })
        .map(|(t, v)| (*t, v.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let residual = (pts.iter().map(|p| (p.1 - my - slope * (p.0 - mt)).powi(2)).sum::<f64>() / n).sqrt();
    let rate = -slope;
    rate.is_finite().then_some(RateFit { rate, residual, n_points: pts.len() })
}

/// Energy, Dirichlet form and sup deviation along a velocity trajectory.
#[derive(Clone, Debug, Serialize)]
pub struct DecayRecord {
    pub times: Vec<f64>,
    /// `‖v − v̄‖²`.
    pub energy: Vec<f64>,
    pub dirichlet: Vec<f64>,
    /// `sup |v − v̄|`.
    pub sup_deviation: Vec<f64>,
    pub fit: Option<RateFit>,
}

impl DecayRecord {
    pub fn from_snapshots(times: &[f64], snapshots: &[Vec<f64>], form: &dyn Fn(&[f64]) -> f64) -> Self {
        let energy: Vec<f64> = snapshots.iter().map(|s| deviation_energy(s)).collect();
        let dirichlet = snapshots.iter().map(|s| form(s)).collect();
        let sup_deviation = snapshots
            .iter()
            .map(|s| {
                let g = VelocityGrid { values: s.clone(), time: 0.0 };
                g.sup_deviation()
            })
            .collect();
        let fit = fit_rate(times, &energy, FitWindow::default());
        DecayRecord { times: times.to_vec(), energy, dirichlet, sup_deviation, fit }
    }

    /// Largest increase of the energy between consecutive samples, relative
    /// to the initial energy.
    pub fn max_energy_increase(&self) -> f64 {
        let e0 = self.energy.first().copied().unwrap_or(0.0).max(f64::MIN_POSITIVE);
        self.energy.windows(2).map(|w| (w[1] - w[0]) / e0).fold(0.0, f64::max)
    }

    /// The energy rate lies in `[lower·(1 − eps), upper]`.
    pub fn rate_within(&self, lower: f64, upper: f64, eps: f64) -> Option<bool> {
        self.fit.map(|f| f.rate >= lower * (1.0 - eps) && f.rate <= upper * (1.0 + eps))
    }
}

fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64).sqrt()
}

/// Ratios `‖Δv(t)‖ / (e^{−t/c_φ}‖Δv(0)‖)`.
#[derive(Clone, Debug, Serialize)]
pub struct PoincareReport {
    pub times: Vec<f64>,
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
    pub min_ratio: f64,
}

/// Compares two trajectories sampled at the same times; with `other = None`
/// the reference is the constant mean of the first trajectory.
pub fn poincare_decay_check(
    times: &[f64],
    snapshots: &[Vec<f64>],
    other: Option<&[Vec<f64>]>,
    c_phi: f64,
) -> PoincareReport {
    let mean = snapshots[0].iter().sum::<f64>() / snapshots[0].len() as f64;
    let reference = |k: usize| -> Vec<f64> {
        match other {
            Some(o) => o[k].clone(),
            None => vec![mean; snapshots[k].len()],
        }
    };
    let d0 = l2_distance(&snapshots[0], &reference(0));
    let ratios: Vec<f64> = times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let d = l2_distance(&snapshots[k], &reference(k));
            if d0 == 0.0 {
                0.0
            } else {
                d / ((-t / c_phi).exp() * d0)
            }
        })
        .collect();
    let max_ratio = ratios.iter().copied().fold(0.0, f64::max);
    let min_ratio = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    PoincareReport { times: times.to_vec(), ratios, max_ratio, min_ratio }
}

/// `∫₀¹ |v₁ − v₂|² dm`, computed on the mass grid and through the coupling
/// `π = (M₁⁻¹, M₂⁻¹)♯λ` by quantile sampling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CouplingReport {
    pub mass_side: f64,
    pub eulerian_side: f64,
    pub n_samples: usize,
}

pub fn coupling_distance(
    v1: &VelocityGrid,
    m1: &MassProfile,
    v2: &VelocityGrid,
    m2: &MassProfile,
    n_samples: usize,
) -> crate::Result<CouplingReport> {
    if v1.n_cells() != v2.n_cells() {
        return Err(crate::Error::Config("coupled velocities need a common mass grid".into()));
    }
    let mass_side = l2_distance(&v1.values, &v2.values).powi(2);
    let u1 = crate::mass_coords::velocity_to_space(|m| v1.eval_cell(m), m1);
    let u2 = crate::mass_coords::velocity_to_space(|m| v2.eval_cell(m), m2);
    let n = n_samples.max(1);
    let mut acc = 0.0;
    for k in 1..=n {
        let m = (k as f64 - 0.5) / n as f64;
        let d = u1(m1.quantile(m)?) - u2(m2.quantile(m)?);
        acc += d * d;
    }
    Ok(CouplingReport { mass_side, eulerian_side: acc / n as f64, n_samples: n })
}

/// Check of `sup|v − v̄|(t) ≤ C e^{−λ₁(t−τ)} ‖v(τ) − v̄‖_{W^{s,2}}` with `C`
/// fitted at `t = τ`.
#[derive(Clone, Debug, Serialize)]
pub struct SupDecayReport {
    pub tau: f64,
    pub lambda1: f64,
    pub constant: f64,
    /// `max_{t ≥ τ} ratio(t)/C`; the check passes when this is at most 2.
    pub max_growth: f64,
    pub passed: bool,
    pub rate_fit: Option<RateFit>,
}

pub fn sup_decay_check(
    times: &[f64],
    snapshots: &[Vec<f64>],
    op: &SpectralOperator,
    lambda1: f64,
    tau: f64,
    fit_window: FitWindow,
) -> SupDecayReport {
    let sup_dev: Vec<f64> = snapshots
        .iter()
        .map(|s| VelocityGrid { values: s.clone(), time: 0.0 }.sup_deviation())
        .collect();
    let k_tau = times.iter().position(|&t| t >= tau).unwrap_or(times.len() - 1);
    let centred = |s: &[f64]| -> Vec<f64> {
        let m = s.iter().sum::<f64>() / s.len() as f64;
        s.iter().map(|x| x - m).collect()
    };
    let norm_tau = op.sobolev_norm(&centred(&snapshots[k_tau]));
    let tau = times[k_tau];
    let ratio = |k: usize| sup_dev[k] / ((-lambda1 * (times[k] - tau)).exp() * norm_tau);
    let constant = ratio(k_tau);
    let max_growth = (k_tau..times.len()).map(|k| ratio(k) / constant).fold(0.0, f64::max);
    SupDecayReport {
        tau,
        lambda1,
        constant,
        max_growth,
        passed: max_growth <= 2.0,
        rate_fit: fit_rate(times, &sup_dev, fit_window),
    }
}

/// L¹ distances between consecutive drift-compensated density snapshots.
#[derive(Clone, Debug, Serialize)]
pub struct FlockingReport {
    pub momentum: f64,
    pub times: Vec<f64>,
    pub distances: Vec<f64>,
    pub threshold: f64,
    pub declared: bool,
    /// Reporting convention, not a proven statement.
    pub heuristic: bool,
}

fn interpolate_density(grid: &SpatialGrid, rho: &[f64], x: f64) -> f64 {
    let pos = (x - grid.x_lo) / grid.dx - 0.5;
    if pos < -0.5 || pos > grid.n_x() as f64 - 0.5 {
        return 0.0;
    }
    let pos = pos.clamp(0.0, (grid.n_x() - 1) as f64);
    let k = (pos as usize).min(grid.n_x().saturating_sub(2));
    let t = pos - k as f64;
    if grid.n_x() == 1 {
        return rho[0];
    }
    rho[k] + t * (rho[k + 1] - rho[k])
}

/// Compares `ρ(· + ūtₙ, tₙ)` with `ρ(· + ūtₙ₋₁, tₙ₋₁)` on the co-moving
/// cell centres of the first snapshot. Flocking is declared when the last
/// three distances are nonincreasing and the final one is below
/// `threshold`.
pub fn flocking_diagnostic(snapshots: &[SpatialGrid], momentum: f64, threshold: f64) -> FlockingReport {
    let base = &snapshots[0];
    let xi = base.centres();
    let densities: Vec<Vec<f64>> = snapshots.iter().map(|g| g.density()).collect();
    let mut times = Vec::new();
    let mut distances = Vec::new();
    for n in 1..snapshots.len() {
        let (a, b) = (&snapshots[n - 1], &snapshots[n]);
        let d: f64 = xi
            .iter()
            .map(|&x| {
                let ra = interpolate_density(a, &densities[n - 1], x + momentum * a.time);
                let rb = interpolate_density(b, &densities[n], x + momentum * b.time);
                (ra - rb).abs()
            })
            .sum::<f64>()
            * base.dx;
        times.push(b.time);
        distances.push(d);
    }
    let tail = &distances[distances.len().saturating_sub(3)..];
    // Nonincreasing up to a slack far below the threshold, so that
    // roundoff-level distances still count as settled.
    let slack = 1e-6 * threshold;
    let declared = !tail.is_empty()
        && tail.windows(2).all(|w| w[1] <= w[0] + slack)
        && tail.last().is_some_and(|&d| d < threshold);
    FlockingReport { momentum, times, distances, threshold, declared, heuristic: true }
}

/// `(L¹, L∞)` distance between the particle density and the finite-volume
/// density at the finite-volume cell centres.
pub fn rho_discrepancy(field: &EulerianField, grid: &SpatialGrid) -> (f64, f64) {
    let rho = grid.density();
    let mut l1 = 0.0;
    let mut linf: f64 = 0.0;
    for (i, r) in rho.iter().enumerate() {
        let d = (field.density_at(grid.centre(i)) - r).abs();
        l1 += d * grid.dx;
        linf = linf.max(d);
    }
    (l1, linf)
}

/// One refinement level of a cross-pipeline comparison.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CrossLevel {
    pub particles: usize,
    pub n_x: usize,
    pub l1: f64,
    pub linf: f64,
    /// `log₂(previous L¹ / this L¹)`, scaled by the refinement ratio.
    pub l1_order: Option<f64>,
    pub l1_ratio: Option<f64>,
}

/// Discrepancies at successive refinements with observed orders.
pub fn cross_validate(levels: &[(usize, usize, f64, f64)]) -> Vec<CrossLevel> {
    let mut out: Vec<CrossLevel> = Vec::with_capacity(levels.len());
    for (k, &(p, n_x, l1, linf)) in levels.iter().enumerate() {
        let (order, ratio) = if k == 0 {
            (None, None)
        } else {
            let prev = &out[k - 1];
            let refine = n_x as f64 / prev.n_x as f64;
            let ratio = prev.l1 / l1;
            (Some(ratio.ln() / refine.ln()), Some(ratio))
        };
        out.push(CrossLevel { particles: p, n_x, l1, linf, l1_order: order, l1_ratio: ratio });
    }
    out
}

/// Summary written next to run outputs.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Report {
    pub rate_fit: Option<f64>,
    pub rate_bound_2_over_cphi: Option<f64>,
    pub lambda1: Option<f64>,
    pub max_ratio: Option<f64>,
    pub flocking_declared: Option<bool>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mass_coords::MassProfile;

    #[test]
    fn test_fit_rate_exact_exponential() {
        let t: Vec<f64> = (0..200).map(|k| k as f64 * 0.1).collect();
        let y: Vec<f64> = t.iter().map(|t| 3.0 * (-2.0 * t).exp()).collect();
        let f = fit_rate(&t, &y, FitWindow::default()).unwrap();
        assert!((f.rate - 2.0).abs() < 1e-10);
        assert!(f.residual < 1e-10);
        // Window keeps y/y0 in [1e-10, 1e-1]: t from ln(10)/2 to ln(1e10)/2.
        assert!(f.n_points > 90 && f.n_points < 110);
        let g = fit_rate(&t, &y, FitWindow::Time { t0: 1.0, t1: 2.0 }).unwrap();
        assert_eq!(g.n_points, 11);
        assert!(fit_rate(&t[..1], &y[..1], FitWindow::default()).is_none());
    }

    #[test]
    fn test_poincare_ratio_identical_trajectories() {
        let s = vec![vec![1.0, 2.0], vec![1.2, 1.8]];
        let r = poincare_decay_check(&[0.0, 1.0], &s, Some(&s), 1.0);
        assert_eq!(r.max_ratio, 0.0);
    }

    #[test]
    fn test_poincare_ratio_saturated() {
        let v0 = [1.0, -1.0, 0.5, -0.5];
        let times = [0.0, 0.5, 1.0, 2.0];
        let snaps: Vec<Vec<f64>> = times.iter().map(|&t: &f64| v0.iter().map(|x| x * (-t).exp()).collect()).collect();
        let r = poincare_decay_check(&times, &snaps, None, 1.0);
        assert!((r.max_ratio - 1.0).abs() < 1e-14);
        assert!((r.min_ratio - 1.0).abs() < 1e-14);
    }

    #[test]
    fn test_coupling_sides_agree() {
        let m1 = MassProfile::uniform(0.0, 1.0).unwrap();
        let m2 = MassProfile::from_blocks(&[0.0, 1.0, 2.0, 3.0], &[0.3, 0.0, 0.7]).unwrap();
        let v1 = VelocityGrid::from_midpoints(50, |m| (4.0 * m).sin()).unwrap();
        let v2 = VelocityGrid::from_midpoints(50, |m| m * m).unwrap();
        let r = coupling_distance(&v1, &m1, &v2, &m2, 10_000).unwrap();
        assert!((r.mass_side - r.eulerian_side).abs() < 1e-12, "{r:?}");
    }

    #[test]
    fn test_flocking_on_pure_translation() {
        let p = MassProfile::uniform(0.0, 1.0).unwrap();
        let snaps: Vec<SpatialGrid> = (0..5)
            .map(|k| {
                let t = k as f64 * 0.5;
                let mut g = SpatialGrid::from_fn(-1.0, 5.0, 600, |x| p.cdf(x - 0.8 * t)).unwrap();
                g.time = t;
                g
            })
            .collect();
        let r = flocking_diagnostic(&snaps, 0.8, FLOCKING_THRESHOLD);
        assert!(r.distances.iter().all(|&d| d < 1e-9), "{:?}", r.distances);
        assert!(r.declared);
        let wrong = flocking_diagnostic(&snaps, 0.0, FLOCKING_THRESHOLD);
        assert!(!wrong.declared);
    }

    #[test]
    fn test_cross_validate_orders() {
        let t = cross_validate(&[(100, 100, 4e-2, 1.0), (200, 200, 2e-2, 0.5), (400, 400, 1e-2, 0.25)]);
        assert!(t[0].l1_order.is_none());
        assert!((t[1].l1_order.unwrap() - 1.0).abs() < 1e-12);
        assert!((t[2].l1_ratio.unwrap() - 2.0).abs() < 1e-12);
    }
}
