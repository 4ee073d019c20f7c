//! Cumulative mass distributions and the change to mass coordinates.
//!
//! A [`MassProfile`] is a right-continuous nondecreasing CDF `M` made of a
//! piecewise-linear continuous part on a node grid plus an explicit list of
//! atoms. Its left-continuous generalized inverse `M⁻¹(m) = inf{x : M(x) ≥ m}`
//! relabels agents by the mass to their left.

use crate::error::{Error, Result};

const MASS_TOL: f64 = 1e-12;

/// Right-continuous CDF: piecewise-linear part plus atoms.
#[derive(Clone, Debug, PartialEq)]
pub struct MassProfile {
    nodes: Vec<f64>,
    /// Continuous part of `M` at the nodes; starts at 0.
    values: Vec<f64>,
    atoms: Vec<(f64, f64)>,
    // Merged breakpoints with left and right limits of the full CDF,
    // interleaved as [M(b₀−), M(b₀), M(b₁−), M(b₁), …].
    breaks: Vec<f64>,
    limits: Vec<f64>,
}

/// Result of a topological distance query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TopoDistance {
    pub value: f64,
    /// An atom lies in the closed interval between the two points.
    pub crosses_atom: bool,
}

/// Piecewise-constant density on `edges`.
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseDensity {
    pub edges: Vec<f64>,
    pub values: Vec<f64>,
}

impl PiecewiseDensity {
    pub fn eval(&self, x: f64) -> f64 {
        if self.edges.len() < 2 || x < self.edges[0] || x >= self.edges[self.edges.len() - 1] {
            return 0.0;
        }
        let k = self.edges.partition_point(|&e| e <= x) - 1;
        self.values[k]
    }
}

impl MassProfile {
    /// Builds a profile from a continuous part and atoms.
    ///
    /// `values` must be nondecreasing, start at 0 and end at the continuous
    /// mass `1 − Σ jumps`. A profile consisting only of atoms may pass empty
    /// `nodes` and `values`.
    pub fn new(nodes: Vec<f64>, values: Vec<f64>, atoms: Vec<(f64, f64)>) -> Result<Self> {
        if nodes.len() != values.len() {
            return Err(Error::Config("CDF nodes and values differ in length".into()));
        }
        if nodes.len() == 1 {
            return Err(Error::Config("a continuous CDF part needs at least two nodes".into()));
        }
        if nodes.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Config("CDF nodes must be strictly increasing".into()));
        }
        if values.iter().any(|v| !v.is_finite()) || values.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config("CDF values must be finite and nondecreasing".into()));
        }
        if let Some(&first) = values.first() {
            if first.abs() > MASS_TOL {
                return Err(Error::Config("continuous CDF part must start at 0".into()));
            }
        }
        let mut atoms = atoms;
        if atoms.iter().any(|&(p, j)| !p.is_finite() || !(j > 0.0)) {
            return Err(Error::Config("atoms need finite positions and positive jumps".into()));
        }
        atoms.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let atom_mass: f64 = atoms.iter().map(|a| a.1).sum();
        let cont_mass = values.last().copied().unwrap_or(0.0);
        if (atom_mass + cont_mass - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "total mass {} differs from 1",
                atom_mass + cont_mass
            )));
        }
        let mut p = MassProfile { nodes, values, atoms, breaks: Vec::new(), limits: Vec::new() };
        p.index();
        Ok(p)
    }

    fn index(&mut self) {
        let mut breaks: Vec<f64> = self.nodes.iter().copied().chain(self.atoms.iter().map(|a| a.0)).collect();
        breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
        breaks.dedup();
        let mut limits = Vec::with_capacity(2 * breaks.len());
        for &b in &breaks {
            let cont = self.continuous_part(b);
            let below: f64 = self.atoms.iter().filter(|a| a.0 < b).map(|a| a.1).sum();
            let at: f64 = self.atoms.iter().filter(|a| a.0 == b).map(|a| a.1).sum();
            limits.push((cont + below).min(1.0));
            limits.push((cont + below + at).min(1.0));
        }
        self.breaks = breaks;
        self.limits = limits;
    }

    /// Uniform density on `[a, b]`.
    pub fn uniform(a: f64, b: f64) -> Result<Self> {
        if !(a < b) {
            return Err(Error::Config(format!("uniform support [{a}, {b}] is empty")));
        }
        Self::new(vec![a, b], vec![0.0, 1.0], Vec::new())
    }

    /// Single atom of unit mass.
    pub fn dirac(position: f64) -> Result<Self> {
        Self::new(Vec::new(), Vec::new(), vec![(position, 1.0)])
    }

    /// Piecewise-constant density with block `k` on `[edges[k], edges[k+1]]`
    /// carrying `masses[k]`. Masses are renormalised to sum to one.
    pub fn from_blocks(edges: &[f64], masses: &[f64]) -> Result<Self> {
        if edges.len() != masses.len() + 1 {
            return Err(Error::Config("blocks need one more edge than masses".into()));
        }
        if masses.iter().any(|m| !(*m >= 0.0)) {
            return Err(Error::Config("block masses must be nonnegative".into()));
        }
        let total: f64 = masses.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Config("blocks carry no mass".into()));
        }
        let mut values = vec![0.0];
        let mut acc = 0.0;
        for m in masses {
            acc += m / total;
            values.push(acc);
        }
        *values.last_mut().unwrap() = 1.0;
        Self::new(edges.to_vec(), values, Vec::new())
    }

    /// Integrates sampled density values with the trapezoid rule and
    /// renormalises to unit mass. Returns the profile and the factor the raw
    /// integral was divided by.
    pub fn from_density_samples(xs: &[f64], rho: &[f64]) -> Result<(Self, f64)> {
        if xs.len() != rho.len() || xs.len() < 2 {
            return Err(Error::Config("density samples need at least two matching x, rho rows".into()));
        }
        if rho.iter().any(|r| !(*r >= 0.0)) {
            return Err(Error::Config("density samples must be nonnegative".into()));
        }
        let mut acc = vec![0.0];
        for k in 1..xs.len() {
            let prev = acc[k - 1];
            acc.push(prev + 0.5 * (rho[k] + rho[k - 1]) * (xs[k] - xs[k - 1]));
        }
        let total = *acc.last().unwrap();
        if !(total > 0.0) {
            return Err(Error::Config("density samples carry no mass".into()));
        }
        let mut values: Vec<f64> = acc.iter().map(|a| a / total).collect();
        *values.last_mut().unwrap() = 1.0;
        Ok((Self::new(xs.to_vec(), values, Vec::new())?, total))
    }

    /// Samples a CDF-like function at the given nodes and normalises it to
    /// run from 0 to 1.
    pub fn from_cdf_fn<F: Fn(f64) -> f64>(nodes: Vec<f64>, f: F) -> Result<Self> {
        let raw: Vec<f64> = nodes.iter().map(|&x| f(x)).collect();
        let lo = raw[0];
        let hi = *raw.last().unwrap();
        if !(hi > lo) {
            return Err(Error::Config("CDF function is constant on the node range".into()));
        }
        let mut values: Vec<f64> = raw.iter().map(|v| (v - lo) / (hi - lo)).collect();
        values[0] = 0.0;
        *values.last_mut().unwrap() = 1.0;
        Self::new(nodes, values, Vec::new())
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn is_continuous(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Smallest and largest breakpoint (support hull).
    pub fn support(&self) -> (f64, f64) {
        (self.breaks[0], self.breaks[self.breaks.len() - 1])
    }

    fn continuous_part(&self, x: f64) -> f64 {
        let n = self.nodes.len();
        if n == 0 || x < self.nodes[0] {
            return 0.0;
        }
        if x >= self.nodes[n - 1] {
            return self.values[n - 1];
        }
        let k = self.nodes.partition_point(|&p| p <= x) - 1;
        let t = (x - self.nodes[k]) / (self.nodes[k + 1] - self.nodes[k]);
        self.values[k] + t * (self.values[k + 1] - self.values[k])
    }

    /// Right-continuous evaluation `M(x)`.
    pub fn cdf(&self, x: f64) -> f64 {
        let jumps: f64 = self.atoms.iter().take_while(|a| a.0 <= x).map(|a| a.1).sum();
        (self.continuous_part(x) + jumps).clamp(0.0, 1.0)
    }

    /// Left-continuous generalized inverse `inf{x : M(x) ≥ m}` for
    /// `m ∈ (0, 1]`.
    pub fn quantile(&self, m: f64) -> Result<f64> {
        if !(m > 0.0 && m <= 1.0) {
            return Err(Error::Domain(format!("quantile level {m} outside (0, 1]")));
        }
        Ok(self.quantile_unchecked(m))
    }

    fn quantile_unchecked(&self, m: f64) -> f64 {
        let idx = self.limits.partition_point(|&v| v < m);
        if idx >= self.limits.len() {
            // Roundoff below 1 at the top of the support.
            return self.breaks[self.breaks.len() - 1];
        }
        let k = idx / 2;
        if idx % 2 == 1 || self.limits[idx] == m || k == 0 {
            return self.breaks[k];
        }
        // Inside the linear segment (b_{k−1}, b_k).
        let lo = self.limits[2 * k - 1];
        let hi = self.limits[2 * k];
        let (a, b) = (self.breaks[k - 1], self.breaks[k]);
        a + (m - lo) / (hi - lo) * (b - a)
    }

    /// Quantiles at the midpoint levels `(i − ½)/n`, the pushforward of the
    /// uniform measure on `(0, 1)` under `M⁻¹`.
    pub fn pushforward_uniform(&self, n_samples: usize) -> Vec<f64> {
        let n = n_samples.max(1);
        (1..=n)
            .map(|i| self.quantile_unchecked((i as f64 - 0.5) / n as f64))
            .collect()
    }

    /// `d_ρ(x, y) = |M(y) − M(x)|`, flagging atoms inside `[min, max]`.
    pub fn topo_distance(&self, x: f64, y: f64) -> TopoDistance {
        let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
        let crosses_atom = x != y && self.atoms.iter().any(|a| a.0 >= lo && a.0 <= hi);
        TopoDistance { value: (self.cdf(y) - self.cdf(x)).abs(), crosses_atom }
    }

    /// Density `ρ = ∂ₓM` as slopes of the linear segments.
    pub fn density(&self) -> Result<PiecewiseDensity> {
        if !self.is_continuous() {
            return Err(Error::Admissibility(
                "profile has atoms; its density is not a function".into(),
            ));
        }
        let values = self
            .nodes
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(x, v)| (v[1] - v[0]) / (x[1] - x[0]))
            .collect();
        Ok(PiecewiseDensity { edges: self.nodes.clone(), values })
    }

    /// `∫_{(−∞, x]} f dρ` for `f` piecewise constant on `f_edges`
    /// (`f_values[k]` on `[f_edges[k], f_edges[k+1])`, zero outside).
    pub fn integrate_piecewise_constant(&self, f_edges: &[f64], f_values: &[f64], x: f64) -> f64 {
        let f = |p: f64| -> f64 {
            if p < f_edges[0] || p >= f_edges[f_edges.len() - 1] {
                return 0.0;
            }
            f_values[f_edges.partition_point(|&e| e <= p) - 1]
        };
        let mut pts: Vec<f64> = self.nodes.iter().chain(f_edges.iter()).copied().filter(|&p| p <= x).collect();
        pts.push(x);
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        pts.dedup();
        let mut total = 0.0;
        for w in pts.windows(2) {
            let mass = self.continuous_part(w[1]) - self.continuous_part(w[0]);
            if mass > 0.0 {
                total += f(0.5 * (w[0] + w[1])) * mass;
            }
        }
        total + self.atoms.iter().filter(|a| a.0 <= x).map(|a| f(a.0) * a.1).sum::<f64>()
    }

    /// `M(x−)`, the mass strictly to the left of `x`.
    pub fn cdf_left(&self, x: f64) -> f64 {
        let jumps: f64 = self.atoms.iter().take_while(|a| a.0 < x).map(|a| a.1).sum();
        (self.continuous_part(x) + jumps).clamp(0.0, 1.0)
    }

    /// `∫₀^{m_upper} f(M⁻¹(m)) dm` for `f` piecewise constant on `f_edges`.
    /// `f ∘ M⁻¹` is constant between the levels `M(e−)`, so the integral is
    /// a finite sum.
    pub fn integrate_in_mass(&self, f_edges: &[f64], f_values: &[f64], m_upper: f64) -> f64 {
        let f = |p: f64| -> f64 {
            if p < f_edges[0] || p >= f_edges[f_edges.len() - 1] {
                return 0.0;
            }
            f_values[f_edges.partition_point(|&e| e <= p) - 1]
        };
        let top = m_upper.clamp(0.0, 1.0);
        let mut levels: Vec<f64> = f_edges.iter().map(|&e| self.cdf_left(e)).filter(|&m| m > 0.0 && m < top).collect();
        levels.push(0.0);
        levels.push(top);
        levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
        levels.dedup();
        levels
            .windows(2)
            .map(|w| f(self.quantile_unchecked(0.5 * (w[0] + w[1]))) * (w[1] - w[0]))
            .sum()
    }
}

/// `v = u ∘ M⁻¹` as a function of mass.
pub fn velocity_to_mass<'a, U: Fn(f64) -> f64 + 'a>(u: U, profile: &'a MassProfile) -> impl Fn(f64) -> f64 + 'a {
    move |m| u(profile.quantile_unchecked(m.clamp(f64::MIN_POSITIVE, 1.0)))
}

/// `u = v ∘ M` as a function of position.
pub fn velocity_to_space<'a, V: Fn(f64) -> f64 + 'a>(v: V, profile: &'a MassProfile) -> impl Fn(f64) -> f64 + 'a {
    move |x| v(profile.cdf(x))
}

/// Samples `u ∘ M⁻¹` at the mass-cell midpoints `(i − ½)/N`.
pub fn sample_velocity_on_mass_grid<U: Fn(f64) -> f64>(u: U, profile: &MassProfile, n_cells: usize) -> Vec<f64> {
    (1..=n_cells)
        .map(|i| u(profile.quantile_unchecked((i as f64 - 0.5) / n_cells as f64)))
        .collect()
}

/// Histogram of `samples` over consecutive `edges`, as mass fractions.
pub fn histogram(samples: &[f64], edges: &[f64]) -> Vec<f64> {
    let mut counts = vec![0usize; edges.len().saturating_sub(1)];
    for &s in samples {
        if s < edges[0] || s > edges[edges.len() - 1] {
            continue;
        }
        let k = edges.partition_point(|&e| e <= s).saturating_sub(1).min(counts.len() - 1);
        counts[k] += 1;
    }
    let n = samples.len().max(1) as f64;
    counts.into_iter().map(|c| c as f64 / n).collect()
}

/// Exact primitive `A(m) = ∫₀ᵐ v` of a piecewise-constant mass-cell
/// velocity, together with the positive- and negative-part primitives used
/// by the Engquist–Osher flux.
#[derive(Clone, Debug)]
pub struct FluxTable {
    v: Vec<f64>,
    h: f64,
    prefix: Vec<f64>,
    prefix_pos: Vec<f64>,
    prefix_neg: Vec<f64>,
    max_speed: f64,
}

impl FluxTable {
    pub fn new(cell_values: &[f64]) -> Self {
        let n = cell_values.len();
        let h = 1.0 / n as f64;
        let mut prefix = Vec::with_capacity(n + 1);
        let mut prefix_pos = Vec::with_capacity(n + 1);
        let mut prefix_neg = Vec::with_capacity(n + 1);
        prefix.push(0.0);
        prefix_pos.push(0.0);
        prefix_neg.push(0.0);
        for (i, &v) in cell_values.iter().enumerate() {
            prefix.push(prefix[i] + h * v);
            prefix_pos.push(prefix_pos[i] + h * v.max(0.0));
            prefix_neg.push(prefix_neg[i] + h * v.min(0.0));
        }
        let max_speed = cell_values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        FluxTable { v: cell_values.to_vec(), h, prefix, prefix_pos, prefix_neg, max_speed }
    }

    pub fn n_cells(&self) -> usize {
        self.v.len()
    }

    /// `‖v‖_∞`, the Lipschitz constant of `A`.
    pub fn max_speed(&self) -> f64 {
        self.max_speed
    }

    fn split(&self, m: f64) -> (usize, f64) {
        let m = m.clamp(0.0, 1.0);
        let k = ((m / self.h) as usize).min(self.v.len() - 1);
        (k, m - k as f64 * self.h)
    }

    /// `A(m) = ∫₀ᵐ v`.
    pub fn primitive(&self, m: f64) -> f64 {
        let (k, r) = self.split(m);
        self.prefix[k] + r * self.v[k]
    }

    /// `∫₀ᵐ max(v, 0)`.
    pub fn positive_part(&self, m: f64) -> f64 {
        let (k, r) = self.split(m);
        self.prefix_pos[k] + r * self.v[k].max(0.0)
    }

    /// `∫₀ᵐ min(v, 0)`.
    pub fn negative_part(&self, m: f64) -> f64 {
        let (k, r) = self.split(m);
        self.prefix_neg[k] + r * self.v[k].min(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_block() -> MassProfile {
        MassProfile::from_blocks(&[0.0, 1.0, 2.0, 3.0], &[0.5, 0.0, 0.5]).unwrap()
    }

    /// Bisection on the CDF for `inf{x : M(x) ≥ m}`.
    fn quantile_by_bisection(p: &MassProfile, m: f64, lo: f64, hi: f64) -> f64 {
        let (mut a, mut b) = (lo, hi);
        for _ in 0..200 {
            let c = 0.5 * (a + b);
            if p.cdf(c) >= m {
                b = c;
            } else {
                a = c;
            }
        }
        b
    }

    #[test]
    fn test_cdf_examples() {
        let h = MassProfile::dirac(0.0).unwrap();
        assert_eq!(h.cdf(-0.1), 0.0);
        assert_eq!(h.cdf(0.0), 1.0);
        assert_eq!(MassProfile::uniform(0.0, 1.0).unwrap().cdf(0.25), 0.25);
        assert_eq!(MassProfile::uniform(0.0, 2.0).unwrap().cdf(0.5), 0.25);
        let u = MassProfile::uniform(0.0, 1.0).unwrap();
        assert_eq!(u.cdf(-5.0), 0.0);
        assert_eq!(u.cdf(5.0), 1.0);
    }

    #[test]
    fn test_quantile_examples() {
        let h = MassProfile::dirac(0.0).unwrap();
        for &m in &[1e-9, 0.3, 1.0] {
            assert_eq!(h.quantile(m).unwrap(), 0.0);
        }
        assert_eq!(MassProfile::uniform(0.0, 1.0).unwrap().quantile(0.25).unwrap(), 0.25);

        let p = two_block();
        assert_eq!(p.quantile(0.5).unwrap(), 1.0);
        for &eps in &[1e-3, 1e-2, 0.1] {
            let q = p.quantile(0.5 + eps).unwrap();
            assert!((q - (2.0 + 2.0 * eps)).abs() < 1e-12);
            let oracle = quantile_by_bisection(&p, 0.5 + eps, -1.0, 4.0);
            assert!((q - oracle).abs() < 1e-12);
        }
        assert!(p.quantile(0.0).is_err());
        assert!(p.quantile(1.5).is_err());
    }

    #[test]
    fn test_quantile_matches_bisection_on_mixed_profile() {
        let p = MassProfile::new(vec![0.0, 1.0, 3.0], vec![0.0, 0.2, 0.6], vec![(0.5, 0.1), (2.0, 0.3)]).unwrap();
        for i in 1..=97 {
            let m = i as f64 / 97.0;
            let q = p.quantile(m).unwrap();
            let oracle = quantile_by_bisection(&p, m, -1.0, 4.0);
            assert!((q - oracle).abs() < 1e-10, "m={m}: {q} vs {oracle}");
        }
    }

    #[test]
    fn test_pushforward_examples() {
        let s = MassProfile::uniform(0.0, 1.0).unwrap().pushforward_uniform(4);
        assert_eq!(s, vec![0.125, 0.375, 0.625, 0.875]);
        assert_eq!(MassProfile::dirac(0.0).unwrap().pushforward_uniform(4), vec![0.0; 4]);
        let s = two_block().pushforward_uniform(1000);
        let h = histogram(&s, &[0.0, 1.0, 2.0, 3.0]);
        assert!((h[0] - 0.5).abs() < 1e-2 && (h[2] - 0.5).abs() < 1e-2 && h[1] < 1e-2);
    }

    #[test]
    fn test_topo_distance_examples() {
        let u = MassProfile::uniform(0.0, 1.0).unwrap();
        assert!((u.topo_distance(0.2, 0.7).value - 0.5).abs() < 1e-15);
        assert_eq!(two_block().topo_distance(1.0, 2.0).value, 0.0);
        assert_eq!(u.topo_distance(0.4, 0.4).value, 0.0);
        let h = MassProfile::dirac(0.0).unwrap();
        assert!(h.topo_distance(-1.0, 1.0).crosses_atom);
        assert!(!u.topo_distance(0.1, 0.2).crosses_atom);
    }

    #[test]
    fn test_velocity_transfer_examples() {
        let u = MassProfile::uniform(0.0, 1.0).unwrap();
        let v = velocity_to_mass(|x| x, &u);
        assert!((v(0.3) - 0.3).abs() < 1e-15);
        let back = velocity_to_space(&v, &u);
        assert!((back(0.7) - 0.7).abs() < 1e-15);

        let p = two_block();
        let uu = velocity_to_space(|_m| 1.0, &p);
        assert_eq!(uu(2.5), 1.0);

        let w = MassProfile::uniform(0.0, 2.0).unwrap();
        let v = velocity_to_mass(|x| x * x, &w);
        for &m in &[0.1, 0.5, 0.9] {
            assert!((v(m) - (2.0 * m) * (2.0 * m)).abs() < 1e-14);
        }
    }

    #[test]
    fn test_flux_primitive_examples() {
        let ones = FluxTable::new(&vec![1.0; 64]);
        for &m in &[0.0, 0.3, 1.0] {
            assert!((ones.primitive(m) - m).abs() < 1e-15);
        }
        // Cell averages of v(m) = m: A(½) = ⅛ exactly at a cell boundary.
        let n = 128;
        let avg: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        assert!((FluxTable::new(&avg).primitive(0.5) - 0.125).abs() < 1e-15);

        let n = 256;
        let tau = 2.0 * std::f64::consts::PI;
        let avg: Vec<f64> = (0..n)
            .map(|i| {
                let (a, b) = (i as f64 / n as f64, (i + 1) as f64 / n as f64);
                ((tau * a).cos() - (tau * b).cos()) / (tau * (b - a))
            })
            .collect();
        let t = FluxTable::new(&avg);
        assert!(t.primitive(1.0).abs() < 1e-12);
        assert_eq!(t.primitive(0.0), 0.0);
    }

    #[test]
    fn test_density_from_cdf() {
        let d = two_block().density().unwrap();
        assert_eq!(d.values, vec![0.5, 0.0, 0.5]);
        assert!(MassProfile::dirac(0.0).unwrap().density().is_err());
    }

    #[test]
    fn test_density_samples_renormalised() {
        let xs = [0.0, 1.0, 2.0];
        let (p, factor) = MassProfile::from_density_samples(&xs, &[2.0, 2.0, 2.0]).unwrap();
        assert!((factor - 4.0).abs() < 1e-15);
        assert!((p.cdf(1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn test_invalid_profiles() {
        assert!(MassProfile::new(vec![0.0, 1.0], vec![0.0, 0.9], vec![]).is_err());
        assert!(MassProfile::new(vec![0.0, 1.0], vec![0.0, 1.0], vec![(0.5, 0.5)]).is_err());
        assert!(MassProfile::new(vec![1.0, 0.0], vec![0.0, 1.0], vec![]).is_err());
        assert!(MassProfile::uniform(1.0, 1.0).is_err());
    }

    #[test]
    fn test_change_of_variables() {
        let p = MassProfile::new(vec![0.0, 1.0, 3.0], vec![0.0, 0.2, 0.6], vec![(0.5, 0.1), (2.0, 0.3)]).unwrap();
        let edges = [-0.5, 0.25, 0.5, 1.7, 2.0, 2.5];
        let vals = [1.0, -2.0, 0.5, 3.0, 4.0];
        for x in [-1.0, 0.0, 0.3, 0.5, 0.9, 2.0, 2.2, 2.7, 4.0] {
            let space = p.integrate_piecewise_constant(&edges, &vals, x);
            let mass = p.integrate_in_mass(&edges, &vals, p.cdf(x));
            assert!((space - mass).abs() < 1e-12, "x={x}: {space} vs {mass}");
        }
        let b = two_block();
        let mass = b.integrate_in_mass(&[0.0, 0.5, 2.5, 3.0], &[1.0, 2.0, 3.0], 1.0);
        assert!((mass - (0.25 + 2.0 * 0.5 + 3.0 * 0.25)).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn profile() -> impl Strategy<Value = MassProfile> {
            (proptest::collection::vec((0.01f64..1.0, 0.0f64..1.0), 2..12)).prop_map(|cells| {
                let mut edges = vec![0.0];
                for (w, _) in &cells {
                    let last = *edges.last().unwrap();
                    edges.push(last + w);
                }
                let masses: Vec<f64> = cells.iter().map(|c| c.1).collect();
                let masses = if masses.iter().sum::<f64>() > 0.0 { masses } else { vec![1.0; cells.len()] };
                MassProfile::from_blocks(&edges, &masses).unwrap()
            })
        }

        proptest! {
            #[test]
            fn cdf_of_quantile_is_identity(p in profile(), m in 1e-6f64..1.0) {
                let q = p.quantile(m).unwrap();
                prop_assert!((p.cdf(q) - m).abs() < 1e-12);
            }

            #[test]
            fn quantile_of_cdf_below_identity(p in profile(), t in 0.0f64..1.0) {
                let (lo, hi) = p.support();
                let x = lo + t * (hi - lo);
                let m = p.cdf(x);
                if m > 0.0 {
                    prop_assert!(p.quantile(m).unwrap() <= x + 1e-12);
                }
            }

            #[test]
            fn topo_distance_is_pseudometric(p in profile(), a in -1.0f64..12.0, b in -1.0f64..12.0, c in -1.0f64..12.0) {
                let d = |x, y| p.topo_distance(x, y).value;
                prop_assert!((d(a, b) - d(b, a)).abs() < 1e-15);
                prop_assert!(d(a, c) <= d(a, b) + d(b, c) + 1e-15);
            }

            #[test]
            fn quantile_nondecreasing(p in profile(), m1 in 1e-6f64..1.0, m2 in 1e-6f64..1.0) {
                let (lo, hi) = if m1 <= m2 { (m1, m2) } else { (m2, m1) };
                prop_assert!(p.quantile(lo).unwrap() <= p.quantile(hi).unwrap());
            }
        }
    }
}
