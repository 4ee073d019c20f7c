//! Communication protocols.
//!
//! A protocol assigns a nonnegative alignment rate to a pair of agents from
//! their topological distance `d ∈ [0, 1]` (the mass between them) and,
//! for the general kind, their spatial offset `z`. Purely topological
//! protocols ignore `z`.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::quadrature;

/// Rates below this are treated as vanishing when estimating `c_φ`.
pub const VANISHING_RATE: f64 = 1e-300;

/// Slack allowed on topological distances produced by CDF arithmetic.
const DISTANCE_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    /// `φ(d, z)`: depends on topological distance and spatial offset.
    General,
    /// `φ(d)`: depends on topological distance only.
    Pure,
}

/// Named protocol families.
#[derive(Clone, Debug, PartialEq)]
pub enum KernelFamily {
    /// `φ ≡ value`.
    Constant { value: f64 },
    /// `φ(d) = C_s d^{-1-2s}`; pure kind only.
    PowerLaw { s: f64 },
    /// `φ(d, z) = max(a − b·d, 0) · 1_{|z| ≤ z_cut}`; `z_cut = None` means no cutoff.
    AffineDecay { a: f64, b: f64, z_cut: Option<f64> },
    /// `φ(d) = (1 − d)^exponent`.
    AlgebraicDecay { exponent: f64 },
    /// `φ(d) = 1_{d ≤ radius}`.
    ShortRange { radius: f64 },
    /// Linearly interpolated table.
    Table(KernelTable),
}

/// Tabulated protocol. For the pure kind `z_nodes` is empty and `values[i]`
/// is the rate at `d_nodes[i]`. For the general kind values are stored
/// row-major as `values[i * z_nodes.len() + j]` at `(d_nodes[i], z_nodes[j])`
/// with `z_nodes ≥ 0`; evaluation uses `|z|`. Queries outside the table are
/// clamped to the edge.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelTable {
    pub d_nodes: Vec<f64>,
    pub z_nodes: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Singularity {
    Bounded { sup: f64 },
    PowerLaw { s: f64, c_s: f64 },
}

/// A communication protocol. Immutable after construction.
#[derive(Clone, Debug)]
pub struct Kernel {
    kind: KernelKind,
    family: KernelFamily,
    singularity: Singularity,
    monotone_in_d: bool,
}

/// Derived constants of a protocol.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KernelConstants {
    /// `‖φ‖_∞`, infinite for singular kernels.
    pub sup_norm: f64,
    /// Poincaré constant `c_φ`; `None` for the general kind, `+∞` when the
    /// protocol vanishes on a set of positive measure.
    pub c_phi: Option<f64>,
    pub quad_points: usize,
}

/// Grid estimate of `c_φ = esssup_m ∫₀¹ 1/φ(|m − m′|) dm′`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PoincareEstimate {
    pub value: f64,
    pub grid_points: usize,
    /// Grid location of the maximum (NaN for the infinite marker).
    pub argmax: f64,
}

impl PoincareEstimate {
    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
    }
}

/// Normalising constant `C_s = s·4^s·Γ(½ + s) / (√π·Γ(1 − s))`.
pub fn power_law_constant(s: f64) -> f64 {
    s * 4f64.powf(s) * gamma(0.5 + s) / (std::f64::consts::PI.sqrt() * gamma(1.0 - s))
}

impl KernelTable {
    pub fn pure(d_nodes: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let t = KernelTable { d_nodes, z_nodes: Vec::new(), values };
        t.validate()?;
        Ok(t)
    }

    pub fn general(d_nodes: Vec<f64>, z_nodes: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if z_nodes.is_empty() {
            return Err(Error::Config("general kernel table needs z nodes".into()));
        }
        let t = KernelTable { d_nodes, z_nodes, values };
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<()> {
        let strictly_increasing = |v: &[f64]| v.windows(2).all(|w| w[0] < w[1]);
        if self.d_nodes.len() < 2 || !strictly_increasing(&self.d_nodes) {
            return Err(Error::Config(
                "kernel table needs at least two strictly increasing d nodes".into(),
            ));
        }
        if !self.z_nodes.is_empty()
            && (!strictly_increasing(&self.z_nodes) || self.z_nodes[0] < 0.0)
        {
            return Err(Error::Config(
                "kernel table z nodes must be nonnegative and strictly increasing".into(),
            ));
        }
        let expected = self.d_nodes.len() * self.z_nodes.len().max(1);
        if self.values.len() != expected {
            return Err(Error::Config(format!(
                "kernel table has {} values, expected {expected}",
                self.values.len()
            )));
        }
        if self.values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config("kernel table values must be finite and nonnegative".into()));
        }
        Ok(())
    }

    fn is_pure(&self) -> bool {
        self.z_nodes.is_empty()
    }

    fn eval(&self, d: f64, z: f64) -> f64 {
        let (i, td) = locate(&self.d_nodes, d);
        if self.is_pure() {
            return lerp(self.values[i], self.values[i + 1], td);
        }
        let nz = self.z_nodes.len();
        if nz == 1 {
            return lerp(self.values[i], self.values[i + 1], td);
        }
        let (j, tz) = locate(&self.z_nodes, z.abs());
        let at = |a: usize, b: usize| self.values[a * nz + b];
        let lo = lerp(at(i, j), at(i, j + 1), tz);
        let hi = lerp(at(i + 1, j), at(i + 1, j + 1), tz);
        lerp(lo, hi, td)
    }

    fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Index of the left node of the bracketing interval and the local
/// coordinate in `[0, 1]`, clamped at both ends.
fn locate(nodes: &[f64], x: f64) -> (usize, f64) {
    let n = nodes.len();
    if x <= nodes[0] {
        return (0, 0.0);
    }
    if x >= nodes[n - 1] {
        return (n - 2, 1.0);
    }
    let k = nodes.partition_point(|&p| p <= x).saturating_sub(1).min(n - 2);
    (k, (x - nodes[k]) / (nodes[k + 1] - nodes[k]))
}

impl Kernel {
    /// Purely topological protocol `φ(d)`.
    pub fn pure(family: KernelFamily) -> Result<Self> {
        if let KernelFamily::Table(t) = &family {
            if !t.is_pure() {
                return Err(Error::Config("pure kernel table must not have z nodes".into()));
            }
        }
        Self::build(KernelKind::Pure, family)
    }

    /// General protocol `φ(d, z)`, even and bounded in `z`.
    pub fn general(family: KernelFamily) -> Result<Self> {
        if matches!(family, KernelFamily::PowerLaw { .. }) {
            return Err(Error::Config(
                "the power-law family is purely topological".into(),
            ));
        }
        Self::build(KernelKind::General, family)
    }

    pub fn constant(value: f64) -> Result<Self> {
        Self::pure(KernelFamily::Constant { value })
    }

    pub fn power_law(s: f64) -> Result<Self> {
        Self::pure(KernelFamily::PowerLaw { s })
    }

    fn build(kind: KernelKind, family: KernelFamily) -> Result<Self> {
        let singularity = match &family {
            KernelFamily::Constant { value } => {
                if !(value.is_finite() && *value >= 0.0) {
                    return Err(Error::Config(format!("constant kernel value {value} must be >= 0")));
                }
                Singularity::Bounded { sup: *value }
            }
            KernelFamily::PowerLaw { s } => {
                if !(*s > 0.0 && *s < 1.0) {
                    return Err(Error::Config(format!("power-law order s = {s} must lie in (0, 1)")));
                }
                Singularity::PowerLaw { s: *s, c_s: power_law_constant(*s) }
            }
            KernelFamily::AffineDecay { a, b, z_cut } => {
                if !(a.is_finite() && b.is_finite()) || a.max(a - b) < 0.0 {
                    return Err(Error::Config("affine kernel must be finite and somewhere positive".into()));
                }
                if let Some(c) = z_cut {
                    if !(*c > 0.0) {
                        return Err(Error::Config("affine kernel z_cut must be positive".into()));
                    }
                }
                Singularity::Bounded { sup: a.max(a - b).max(0.0) }
            }
            KernelFamily::AlgebraicDecay { exponent } => {
                if !(exponent.is_finite() && *exponent >= 0.0) {
                    return Err(Error::Config("algebraic decay exponent must be >= 0".into()));
                }
                Singularity::Bounded { sup: 1.0 }
            }
            KernelFamily::ShortRange { radius } => {
                if !(*radius > 0.0) {
                    return Err(Error::Config("short-range radius must be positive".into()));
                }
                Singularity::Bounded { sup: 1.0 }
            }
            KernelFamily::Table(t) => {
                t.validate()?;
                Singularity::Bounded { sup: t.max_value() }
            }
        };
        let mut k = Kernel { kind, family, singularity, monotone_in_d: false };
        k.monotone_in_d = k.spot_check_monotone();
        Ok(k)
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn family(&self) -> &KernelFamily {
        &self.family
    }

    pub fn singularity(&self) -> Singularity {
        self.singularity
    }

    pub fn monotone_in_d(&self) -> bool {
        self.monotone_in_d
    }

    pub fn is_bounded(&self) -> bool {
        matches!(self.singularity, Singularity::Bounded { .. })
    }

    pub fn is_pure(&self) -> bool {
        self.kind == KernelKind::Pure
    }

    /// The rate does not depend on the offset `z`, so `Φ(d, z) = φ(d, 0)·z`.
    pub fn ignores_offset(&self) -> bool {
        self.kind == KernelKind::Pure
            || matches!(
                self.family,
                KernelFamily::Constant { .. }
                    | KernelFamily::AlgebraicDecay { .. }
                    | KernelFamily::ShortRange { .. }
                    | KernelFamily::AffineDecay { z_cut: None, .. }
            )
            || matches!(&self.family, KernelFamily::Table(t) if t.z_nodes.len() <= 1)
    }

    /// Raw evaluator without argument checks; `d` must lie in `[0, 1]`.
    fn rate(&self, d: f64, z: f64) -> f64 {
        match &self.family {
            KernelFamily::Constant { value } => *value,
            KernelFamily::PowerLaw { s } => {
                let c_s = match self.singularity {
                    Singularity::PowerLaw { c_s, .. } => c_s,
                    Singularity::Bounded { .. } => unreachable!(),
                };
                c_s * d.powf(-1.0 - 2.0 * s)
            }
            KernelFamily::AffineDecay { a, b, z_cut } => {
                let inside = match (self.kind, z_cut) {
                    (KernelKind::General, Some(c)) => z.abs() <= *c,
                    _ => true,
                };
                if inside {
                    (a - b * d).max(0.0)
                } else {
                    0.0
                }
            }
            KernelFamily::AlgebraicDecay { exponent } => (1.0 - d).max(0.0).powf(*exponent),
            KernelFamily::ShortRange { radius } => {
                if d <= *radius {
                    1.0
                } else {
                    0.0
                }
            }
            KernelFamily::Table(t) => t.eval(d, z),
        }
    }

    fn check_distance(&self, d: f64) -> Result<f64> {
        if !d.is_finite() || !(-DISTANCE_SLACK..=1.0 + DISTANCE_SLACK).contains(&d) {
            return Err(Error::Domain(format!("topological distance {d} outside [0, 1]")));
        }
        let d = d.clamp(0.0, 1.0);
        if d == 0.0 && matches!(self.singularity, Singularity::PowerLaw { .. }) {
            return Err(Error::Domain("power-law kernel is singular at d = 0".into()));
        }
        Ok(d)
    }

    /// Communication rate `φ(d, z)`; `z` is ignored for pure kernels.
    pub fn eval(&self, d: f64, z: f64) -> Result<f64> {
        let d = self.check_distance(d)?;
        Ok(self.rate(d, z))
    }

    /// `φ(d)` for the pure kind.
    pub fn eval_pure(&self, d: f64) -> Result<f64> {
        self.eval(d, 0.0)
    }

    /// Closed form of `Φ(d, z)` when one is registered for the family.
    fn closed_form_antiderivative(&self, d: f64, z: f64) -> Option<f64> {
        if self.kind == KernelKind::Pure {
            return Some(self.rate(d, z) * z);
        }
        match &self.family {
            KernelFamily::Constant { value } => Some(value * z),
            KernelFamily::AffineDecay { a, b, z_cut } => {
                let zc = match z_cut {
                    Some(c) => z.clamp(-c, *c),
                    None => z,
                };
                Some((a - b * d).max(0.0) * zc)
            }
            KernelFamily::AlgebraicDecay { .. } | KernelFamily::ShortRange { .. } => {
                Some(self.rate(d, 0.0) * z)
            }
            KernelFamily::PowerLaw { .. } | KernelFamily::Table(_) => None,
        }
    }

    /// `Φ(d, z) = ∫₀ᶻ φ(d, ζ) dζ`. Uses a closed form when available and
    /// composite Simpson with the table's `z` nodes as breakpoints otherwise.
    pub fn eval_antiderivative(&self, d: f64, z: f64) -> Result<f64> {
        if !self.is_bounded() {
            return Err(Error::Unsupported(
                "Φ is only defined for bounded protocols".into(),
            ));
        }
        let d = self.check_distance(d)?;
        if z == 0.0 {
            return Ok(0.0);
        }
        if let Some(v) = self.closed_form_antiderivative(d, z) {
            return Ok(v);
        }
        let breaks: Vec<f64> = match &self.family {
            KernelFamily::Table(t) => t.z_nodes.iter().flat_map(|&p| [p, -p]).collect(),
            _ => Vec::new(),
        };
        Ok(quadrature::simpson_piecewise(
            |zeta| self.rate(d, zeta),
            0.0,
            z,
            &breaks,
            quadrature::DEFAULT_REL_TOL,
        ))
    }

    /// `‖φ‖_∞`; `+∞` for the power law.
    pub fn sup_norm(&self) -> f64 {
        match self.singularity {
            Singularity::Bounded { sup } => sup,
            Singularity::PowerLaw { .. } => f64::INFINITY,
        }
    }

    /// Points in `d` where the protocol has a kink, jump or zero crossing.
    fn d_breakpoints(&self) -> Vec<f64> {
        match &self.family {
            KernelFamily::ShortRange { radius } => vec![*radius],
            KernelFamily::AffineDecay { a, b, .. } if *b != 0.0 => vec![a / b],
            KernelFamily::Table(t) => t.d_nodes.clone(),
            _ => Vec::new(),
        }
    }

    /// Grid estimate of the Poincaré constant for a pure kernel.
    ///
    /// The maximum of `m ↦ ∫₀ᵐ 1/φ + ∫₀^{1−m} 1/φ` is taken over `n_quad`
    /// equispaced points of `[0, 1]` (endpoints included). If `φ` vanishes at
    /// any of `n_quad` cell midpoints of `[0, 1]` the infinite marker is
    /// returned.
    pub fn poincare_constant(&self, n_quad: usize) -> Result<PoincareEstimate> {
        if self.kind != KernelKind::Pure {
            return Err(Error::Unsupported(
                "the Poincaré constant is defined for purely topological kernels".into(),
            ));
        }
        let n = n_quad.max(2);
        let vanishes = (0..n).any(|k| {
            let r = (k as f64 + 0.5) / n as f64;
            self.rate(r, 0.0) < VANISHING_RATE
        });
        if vanishes {
            return Ok(PoincareEstimate { value: f64::INFINITY, grid_points: n, argmax: f64::NAN });
        }
        let breaks = self.d_breakpoints();
        let inv = |r: f64| 1.0 / self.rate(r, 0.0);
        // Cumulative F(m_j) = ∫₀^{m_j} 1/φ on the symmetric grid m_j = j/(n−1).
        let mut cumulative = vec![0.0; n];
        for j in 1..n {
            let a = (j - 1) as f64 / (n - 1) as f64;
            let b = j as f64 / (n - 1) as f64;
            cumulative[j] = cumulative[j - 1]
                + quadrature::tanh_sinh_piecewise(inv, a, b, &breaks, 1e-12);
        }
        let mut best = f64::NEG_INFINITY;
        let mut argmax = 0.0;
        for j in 0..n {
            let g = cumulative[j] + cumulative[n - 1 - j];
            if g > best {
                best = g;
                argmax = j as f64 / (n - 1) as f64;
            }
        }
        Ok(PoincareEstimate { value: best, grid_points: n, argmax })
    }

    pub fn constants(&self, n_quad: usize) -> Result<KernelConstants> {
        let c_phi = match self.kind {
            KernelKind::Pure => Some(self.poincare_constant(n_quad)?.value),
            KernelKind::General => None,
        };
        Ok(KernelConstants { sup_norm: self.sup_norm(), c_phi, quad_points: n_quad })
    }

    /// Finite-difference estimate of `‖∂_d φ‖_∞` on an `n`-point grid in `d`
    /// and a fixed set of offsets.
    pub fn d_derivative_sup(&self, n: usize) -> Result<f64> {
        if !self.is_bounded() {
            return Err(Error::Unsupported("∂_d φ of a singular kernel".into()));
        }
        let n = n.max(2);
        let h = 1.0 / (n - 1) as f64;
        let mut sup: f64 = 0.0;
        for &z in &[0.0, 0.25, 0.5, 1.0, 2.0] {
            for i in 0..n - 1 {
                let d0 = i as f64 * h;
                let slope = (self.rate(d0 + h, z) - self.rate(d0, z)) / h;
                sup = sup.max(slope.abs());
            }
        }
        Ok(sup)
    }

    fn spot_check_monotone(&self) -> bool {
        let zs = [0.0, 0.5, 1.0, 2.0];
        let n = 41;
        zs.iter().all(|&z| {
            let vals: Vec<f64> = (0..n)
                .map(|i| {
                    let d = i as f64 / (n - 1) as f64;
                    let d = if self.is_bounded() { d } else { d.max(1e-3) };
                    self.rate(d, z)
                })
                .collect();
            vals.windows(2).all(|w| w[1] <= w[0] + 1e-14)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Γ(x) from its integral definition, for `x ∈ (0, 2)`:
    /// `Γ(x) = ∫₀¹ t^{x−1} e^{−t} dt + ∫₁^∞ t^{x−1} e^{−t} dt`.
    fn gamma_by_quadrature(x: f64) -> f64 {
        let head = quadrature::tanh_sinh(|t| t.powf(x - 1.0) * (-t).exp(), 0.0, 1.0, 1e-14);
        let tail = quadrature::simpson(|t| t.powf(x - 1.0) * (-t).exp(), 1.0, 60.0, 1e-14);
        head + tail
    }

    fn c_s_oracle(s: f64) -> f64 {
        s * 4f64.powf(s) * gamma_by_quadrature(0.5 + s)
            / (std::f64::consts::PI.sqrt() * gamma_by_quadrature(1.0 - s))
    }

    #[test]
    fn test_power_law_constant_against_gamma_integral() {
        for &s in &[0.1, 0.25, 0.5, 0.75, 0.9] {
            let a = power_law_constant(s);
            let b = c_s_oracle(s);
            assert!((a - b).abs() < 1e-9 * b, "s={s}: {a} vs {b}");
        }
        // s = 1/2: C = ½·2·Γ(1)/(√π·Γ(½)) = 1/π.
        assert!((power_law_constant(0.5) - 1.0 / std::f64::consts::PI).abs() < 1e-14);
    }

    #[test]
    fn test_eval_examples() {
        let k = Kernel::constant(1.0).unwrap();
        assert_eq!(k.eval(0.3, 5.0).unwrap(), 1.0);

        let k = Kernel::power_law(0.75).unwrap();
        let expected = c_s_oracle(0.75) * 0.5f64.powf(-2.5);
        let got = k.eval(0.5, 0.0).unwrap();
        assert!((got - expected).abs() < 1e-9 * expected);
        assert!(matches!(k.eval(0.0, 0.0), Err(Error::Domain(_))));

        let k = Kernel::general(KernelFamily::AffineDecay { a: 2.0, b: 1.0, z_cut: Some(1.0) }).unwrap();
        assert_eq!(k.eval(1.0, 0.5).unwrap(), 1.0);
        assert_eq!(k.eval(1.0, 1.5).unwrap(), 0.0);
        assert!(k.eval(1.5, 0.0).is_err());
    }

    #[test]
    fn test_power_law_scaling_invariant() {
        let s = 0.3;
        let k = Kernel::power_law(s).unwrap();
        let c = power_law_constant(s);
        for i in 1..=20 {
            let r = i as f64 / 20.0;
            let v = k.eval_pure(r).unwrap() * r.powf(1.0 + 2.0 * s);
            assert!((v - c).abs() < 1e-12 * c);
        }
    }

    #[test]
    fn test_antiderivative_examples() {
        let k = Kernel::constant(1.0).unwrap();
        assert_eq!(k.eval_antiderivative(0.4, 0.7).unwrap(), 0.7);
        assert_eq!(k.eval_antiderivative(0.4, 0.0).unwrap(), 0.0);

        let k = Kernel::general(KernelFamily::AffineDecay { a: 2.0, b: 1.0, z_cut: Some(1.0) }).unwrap();
        let closed = k.eval_antiderivative(0.0, 2.0).unwrap();
        assert_eq!(closed, 2.0);
        let oracle = quadrature::simpson_piecewise(|z| k.eval(0.0, z).unwrap(), 0.0, 2.0, &[1.0], 1e-12);
        assert!((closed - oracle).abs() < 1e-12);

        assert!(matches!(
            Kernel::power_law(0.5).unwrap().eval_antiderivative(0.5, 1.0),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn test_table_antiderivative_by_quadrature() {
        let t = KernelTable::general(
            vec![0.0, 1.0],
            vec![0.0, 1.0, 2.0],
            vec![2.0, 1.0, 0.0, 1.0, 0.5, 0.0],
        )
        .unwrap();
        let k = Kernel::general(KernelFamily::Table(t)).unwrap();
        // At d = 0: φ(0, z) = 2 − |z| on [0, 2] → Φ(0, 2) = 2.
        assert!((k.eval_antiderivative(0.0, 2.0).unwrap() - 2.0).abs() < 1e-10);
        assert!((k.eval_antiderivative(0.0, -2.0).unwrap() + 2.0).abs() < 1e-10);
        // At d = 1/2: φ = 1.5 − 0.75|z|; Φ(½, 1) = 1.5 − 0.375.
        assert!((k.eval_antiderivative(0.5, 1.0).unwrap() - 1.125).abs() < 1e-10);
        assert!(k.monotone_in_d());
    }

    #[test]
    fn test_fundamental_theorem_first_order() {
        let t = KernelTable::general(
            vec![0.0, 1.0],
            vec![0.0, 1.0, 3.0],
            vec![2.0, 1.5, 0.0, 1.0, 0.5, 0.0],
        )
        .unwrap();
        let k = Kernel::general(KernelFamily::Table(t)).unwrap();
        let (d, z) = (0.3, 1.7);
        let phi = k.eval(d, z).unwrap();
        let errs: Vec<f64> = [1e-2, 1e-3, 1e-4]
            .iter()
            .map(|&h| {
                let dq = (k.eval_antiderivative(d, z + h).unwrap() - k.eval_antiderivative(d, z).unwrap()) / h;
                (dq - phi).abs()
            })
            .collect();
        assert!(errs[1] < errs[0] / 5.0 && errs[2] < errs[1] / 5.0, "{errs:?}");
    }

    #[test]
    fn test_poincare_examples() {
        let c = Kernel::constant(1.0).unwrap().poincare_constant(101).unwrap();
        assert!((c.value - 1.0).abs() < 1e-12);

        let k = Kernel::pure(KernelFamily::AlgebraicDecay { exponent: 0.5 }).unwrap();
        let c = k.poincare_constant(10_001).unwrap();
        assert!((c.value - 2.0).abs() < 1e-6, "{}", c.value);
        assert!(c.argmax == 0.0 || c.argmax == 1.0);

        let k = Kernel::pure(KernelFamily::ShortRange { radius: 0.5 }).unwrap();
        assert!(!k.poincare_constant(1000).unwrap().is_finite());

        assert!(Kernel::general(KernelFamily::Constant { value: 1.0 })
            .unwrap()
            .poincare_constant(10)
            .is_err());
    }

    #[test]
    fn test_poincare_of_scaled_constant() {
        for &c in &[0.25, 2.0, 7.5] {
            let est = Kernel::constant(c).unwrap().poincare_constant(51).unwrap();
            assert!((est.value - 1.0 / c).abs() < 1e-12);
        }
    }

    #[test]
    fn test_poincare_power_law_refinement() {
        let s = 0.75;
        let k = Kernel::power_law(s).unwrap();
        // Closed form at m = 0: ∫₀¹ r^{1+2s}/C_s dr.
        let exact = 1.0 / ((2.0 + 2.0 * s) * power_law_constant(s));
        let mut prev = f64::INFINITY;
        for &n in &[11, 41, 161, 641] {
            let est = k.poincare_constant(n).unwrap();
            assert!(est.value.is_finite());
            assert!(est.value <= prev + 1e-12);
            assert!((est.value - exact).abs() < 1e-10);
            prev = est.value;
        }
    }

    #[test]
    fn test_sup_norms() {
        assert_eq!(Kernel::constant(1.0).unwrap().sup_norm(), 1.0);
        let k = Kernel::pure(KernelFamily::AlgebraicDecay { exponent: 0.5 }).unwrap();
        assert_eq!(k.sup_norm(), 1.0);
        let k = Kernel::general(KernelFamily::AffineDecay { a: 2.0, b: 1.0, z_cut: Some(1.0) }).unwrap();
        assert_eq!(k.sup_norm(), 2.0);
        assert!(Kernel::power_law(0.4).unwrap().sup_norm().is_infinite());
    }

    #[test]
    fn test_monotone_flags() {
        assert!(Kernel::constant(1.0).unwrap().monotone_in_d());
        assert!(Kernel::power_law(0.6).unwrap().monotone_in_d());
        let t = KernelTable::pure(vec![0.0, 0.5, 1.0], vec![1.0, 2.0, 1.0]).unwrap();
        assert!(!Kernel::pure(KernelFamily::Table(t)).unwrap().monotone_in_d());
    }

    #[test]
    fn test_invalid_parameters() {
        assert!(Kernel::power_law(1.0).is_err());
        assert!(Kernel::general(KernelFamily::PowerLaw { s: 0.5 }).is_err());
        assert!(Kernel::constant(-1.0).is_err());
        assert!(KernelTable::pure(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn affine() -> Kernel {
            Kernel::general(KernelFamily::AffineDecay { a: 2.0, b: 1.0, z_cut: Some(1.0) }).unwrap()
        }

        proptest! {
            #[test]
            fn evenness_in_z(d in 0.0f64..=1.0, z in -5.0f64..5.0) {
                let k = affine();
                prop_assert_eq!(k.eval(d, z).unwrap(), k.eval(d, -z).unwrap());
                prop_assert!(k.eval(d, z).unwrap() >= 0.0);
            }

            #[test]
            fn antiderivative_is_odd(d in 0.0f64..=1.0, z in -5.0f64..5.0) {
                let k = affine();
                let s = k.eval_antiderivative(d, z).unwrap() + k.eval_antiderivative(d, -z).unwrap();
                prop_assert!(s.abs() < 1e-12);
            }

            #[test]
            fn monotone_in_distance(d in 0.0f64..0.99, z in -3.0f64..3.0) {
                let k = affine();
                prop_assert!(k.eval(d + 0.01, z).unwrap() <= k.eval(d, z).unwrap());
            }
        }
    }
}
