//! Turns a validated configuration into solver inputs.

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use topoflock_core::io::{self, Coordinate};
use topoflock_core::kernels::KernelTable;
use topoflock_core::{Kernel, KernelFamily, KernelKind, MassProfile};

use crate::config::{CoordinateSpec, FamilySpec, Issue, KernelSpec, LoadedConfig, Mode, Params, VelocitySpec};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Initial velocity in either coordinate.
#[derive(Clone)]
pub struct VelocityInit {
    pub coordinate: Coordinate,
    pub f: ScalarFn,
}

impl VelocityInit {
    /// `u₀(x)`: converted through `M₀` when given in mass coordinates.
    pub fn in_space(&self, profile: &MassProfile) -> ScalarFn {
        match self.coordinate {
            Coordinate::Space => self.f.clone(),
            Coordinate::Mass => {
                let f = self.f.clone();
                let p = profile.clone();
                Arc::new(move |x| f(p.cdf(x)))
            }
        }
    }

    /// `v₀` at the mass-cell midpoints.
    pub fn on_mass_grid(&self, profile: Option<&MassProfile>, n_cells: usize) -> Vec<f64> {
        match (self.coordinate, profile) {
            (Coordinate::Space, Some(p)) => {
                topoflock_core::mass_coords::sample_velocity_on_mass_grid(|x| (self.f)(x), p, n_cells)
            }
            _ => topoflock_core::v_solver::midpoints(n_cells).into_iter().map(|m| (self.f)(m)).collect(),
        }
    }
}

pub struct Setup {
    pub kernel: Kernel,
    pub profile: Option<MassProfile>,
    /// Factor applied when a density table was renormalised on load.
    pub renormalisation: Option<f64>,
    pub velocity: VelocityInit,
}

fn resolve(base: &Path, p: &str) -> std::path::PathBuf {
    let path = Path::new(p);
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

pub fn build_kernel(spec: &KernelSpec, base: &Path) -> Result<Kernel, String> {
    let p = Params { owner: "kernel", map: &spec.params };
    let family = match spec.family.as_str() {
        "constant" => {
            p.only(&["value"])?;
            KernelFamily::Constant { value: p.f64_or("value", 1.0)? }
        }
        "power_law" => {
            p.only(&["s"])?;
            KernelFamily::PowerLaw { s: p.f64("s")? }
        }
        "affine_decay" => {
            p.only(&["a", "b", "z_cut"])?;
            KernelFamily::AffineDecay { a: p.f64("a")?, b: p.f64("b")?, z_cut: p.opt_f64("z_cut")? }
        }
        "algebraic_decay" => {
            p.only(&["exponent"])?;
            KernelFamily::AlgebraicDecay { exponent: p.f64("exponent")? }
        }
        "short_range" => {
            p.only(&["radius"])?;
            KernelFamily::ShortRange { radius: p.f64("radius")? }
        }
        "custom_table" => {
            p.only(&["path"])?;
            let t: KernelTable = io::read_kernel_table(&resolve(base, p.str("path")?)).map_err(|e| e.to_string())?;
            KernelFamily::Table(t)
        }
        other => return Err(format!("unknown kernel family '{other}'")),
    };
    match spec.kind {
        KernelKind::Pure => Kernel::pure(family),
        KernelKind::General => Kernel::general(family),
    }
    .map_err(|e| e.to_string())
}

/// `ρ = cos²(π(x − c)/(2w))/w` on `[c − w, c + w]`.
fn smooth_bump(centre: f64, half_width: f64, nodes: usize) -> topoflock_core::Result<MassProfile> {
    let (a, b) = (centre - half_width, centre + half_width);
    let n = nodes.max(3);
    let xs: Vec<f64> = (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect();
    MassProfile::from_cdf_fn(xs, |x| {
        let y = (x - centre) / half_width;
        (0.5 * (y + 1.0) + (std::f64::consts::PI * y).sin() / (2.0 * std::f64::consts::PI)).clamp(0.0, 1.0)
    })
}

pub fn build_profile(spec: &FamilySpec, base: &Path) -> Result<(MassProfile, Option<f64>), String> {
    let p = Params { owner: "rho0", map: &spec.params };
    let err = |e: topoflock_core::Error| e.to_string();
    match spec.family.as_str() {
        "uniform" => {
            p.only(&["a", "b"])?;
            Ok((MassProfile::uniform(p.f64_or("a", 0.0)?, p.f64_or("b", 1.0)?).map_err(err)?, None))
        }
        "blocks" => {
            p.only(&["edges", "masses"])?;
            Ok((MassProfile::from_blocks(&p.f64_list("edges")?, &p.f64_list("masses")?).map_err(err)?, None))
        }
        "smooth_bump" => {
            p.only(&["centre", "half_width", "nodes"])?;
            let w = p.f64_or("half_width", 0.5)?;
            if !(w > 0.0) {
                return Err("rho0.params.half_width must be positive".into());
            }
            Ok((smooth_bump(p.f64_or("centre", 0.5)?, w, p.usize_or("nodes", 4001)?).map_err(err)?, None))
        }
        "csv_cdf" => {
            p.only(&["path"])?;
            Ok((io::read_cdf_csv(&resolve(base, p.str("path")?)).map_err(err)?, None))
        }
        "csv_density" => {
            p.only(&["path"])?;
            let (prof, factor) = io::read_density_csv(&resolve(base, p.str("path")?)).map_err(err)?;
            Ok((prof, Some(factor)))
        }
        other => Err(format!("unknown rho0 family '{other}'")),
    }
}

/// Random Fourier series `A Σ_{k≤K} (a_k sin 2πkp + b_k cos 2πkp)/k` with
/// coefficients uniform in `[−1, 1]` drawn from a seeded ChaCha8 stream.
pub fn random_series(seed: u64, modes: usize, amplitude: f64) -> ScalarFn {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coeffs: Vec<(f64, f64)> =
        (0..modes).map(|_| (rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0))).collect();
    Arc::new(move |p| {
        let tau = 2.0 * std::f64::consts::PI;
        amplitude
            * coeffs
                .iter()
                .enumerate()
                .map(|(k, (a, b))| {
                    let kf = (k + 1) as f64;
                    (a * (tau * kf * p).sin() + b * (tau * kf * p).cos()) / kf
                })
                .sum::<f64>()
    })
}

pub fn build_velocity(spec: &VelocitySpec, seed: u64, base: &Path) -> Result<VelocityInit, String> {
    let p = Params { owner: "velocity", map: &spec.params };
    let coordinate = match spec.coordinate {
        CoordinateSpec::Mass => Coordinate::Mass,
        CoordinateSpec::Space => Coordinate::Space,
    };
    let f: ScalarFn = match spec.family.as_str() {
        "constant" => {
            p.only(&["value"])?;
            let c = p.f64("value")?;
            Arc::new(move |_| c)
        }
        "linear" => {
            p.only(&["slope", "intercept"])?;
            let (s, c) = (p.f64("slope")?, p.f64_or("intercept", 0.0)?);
            Arc::new(move |x| s * x + c)
        }
        "sine" => {
            p.only(&["amplitude", "frequency", "phase", "offset"])?;
            let (a, k, ph, off) = (
                p.f64_or("amplitude", 1.0)?,
                p.f64_or("frequency", 1.0)?,
                p.f64_or("phase", 0.0)?,
                p.f64_or("offset", 0.0)?,
            );
            Arc::new(move |x| off + a * (2.0 * std::f64::consts::PI * k * x + ph).sin())
        }
        "step" => {
            p.only(&["left", "right", "at"])?;
            let (l, r, at) = (p.f64("left")?, p.f64("right")?, p.f64("at")?);
            Arc::new(move |x| if x < at { l } else { r })
        }
        "custom_csv" => {
            p.only(&["path"])?;
            let table = io::read_velocity_csv(&resolve(base, p.str("path")?)).map_err(|e| e.to_string())?;
            if table.coordinate != coordinate {
                return Err("velocity table header does not match velocity.coordinate".into());
            }
            Arc::new(move |x| table.eval(x))
        }
        "random" => {
            p.only(&["modes", "amplitude"])?;
            random_series(seed, p.usize_or("modes", 8)?, p.f64_or("amplitude", 1.0)?)
        }
        other => return Err(format!("unknown velocity family '{other}'")),
    };
    Ok(VelocityInit { coordinate, f })
}

fn positive(issues: &mut Vec<Issue>, lc: &LoadedConfig, key: &str, v: Option<usize>, needed: bool) {
    match v {
        Some(0) => issues.push(lc.issue(key, format!("resolution.{key} must be positive"))),
        None if needed => issues.push(lc.issue("resolution", format!("mode needs resolution.{key}"))),
        _ => {}
    }
}

/// Full semantic validation; returns the built inputs when there are no
/// issues.
pub fn validate(lc: &LoadedConfig) -> Result<Setup, Vec<Issue>> {
    let c = &lc.config;
    let mut issues = Vec::new();
    let mode = c.mode;

    if mode == Mode::Sweep {
        match &c.sweep {
            None => issues.push(lc.issue("mode", "sweep mode needs a 'sweep' section")),
            Some(s) => {
                if s.mode == Mode::Sweep {
                    issues.push(lc.issue("sweep", "sweep.mode cannot itself be 'sweep'"));
                }
                if s.values.is_empty() {
                    issues.push(lc.issue("values", "sweep.values must not be empty"));
                }
                if s.parameter.is_empty() || s.parameter.starts_with("sweep") || s.parameter == "mode" {
                    issues.push(lc.issue("parameter", format!("cannot sweep over '{}'", s.parameter)));
                }
            }
        }
    } else if c.sweep.is_some() {
        issues.push(lc.issue("sweep", "'sweep' section is only allowed in sweep mode"));
    }

    let effective = match (&c.sweep, mode) {
        (Some(s), Mode::Sweep) => s.mode,
        _ => mode,
    };

    if !(c.t_final.is_finite() && c.t_final > 0.0) {
        issues.push(lc.issue("t_final", "t_final must be positive"));
    }
    if c.output_times.windows(2).any(|w| w[1] < w[0]) {
        issues.push(lc.issue("output_times", "output_times must be sorted"));
    }
    if c.output_times.iter().any(|&t| !(t >= 0.0 && t <= c.t_final)) {
        issues.push(lc.issue("output_times", "output_times must lie within [0, t_final]"));
    }
    if !(c.cfl > 0.0 && c.cfl <= topoflock_core::m_solver::MAX_CFL) {
        issues.push(lc.issue("cfl", format!("cfl must lie in (0, {}]", topoflock_core::m_solver::MAX_CFL)));
    }
    if c.tolerances.poincare_quad < 2 {
        issues.push(lc.issue("poincare_quad", "tolerances.poincare_quad must be at least 2"));
    }
    if !(c.tolerances.monitor_factor > 1.0) {
        issues.push(lc.issue("monitor_factor", "tolerances.monitor_factor must exceed 1"));
    }
    if !(c.tolerances.flocking_threshold > 0.0) {
        issues.push(lc.issue("flocking_threshold", "tolerances.flocking_threshold must be positive"));
    }

    let r = &c.resolution;
    let needs_dt = matches!(effective, Mode::Mass | Mode::Lagrangian | Mode::Compare);
    positive(&mut issues, lc, "particles", r.particles, effective == Mode::Lagrangian);
    positive(&mut issues, lc, "mass_cells", r.mass_cells, matches!(effective, Mode::Mass | Mode::Spectral));
    positive(&mut issues, lc, "space_cells", r.space_cells, effective == Mode::Mass);
    if effective == Mode::Spectral {
        if let Some(n) = r.mass_cells {
            if !(2..=topoflock_core::v_solver::MAX_SPECTRAL_CELLS).contains(&n) {
                issues.push(lc.issue(
                    "mass_cells",
                    format!("spectral mode needs 2 ≤ mass_cells ≤ {}", topoflock_core::v_solver::MAX_SPECTRAL_CELLS),
                ));
            }
        }
    }
    if needs_dt {
        match c.dt {
            Some(dt) if dt > 0.0 && dt.is_finite() => {}
            Some(_) => issues.push(lc.issue("dt", "dt must be positive")),
            None => issues.push(lc.issue("mode", format!("mode '{}' needs dt", effective.name()))),
        }
    }
    if effective == Mode::Compare {
        match &c.compare {
            None => issues.push(lc.issue("mode", "compare mode needs a 'compare' section")),
            Some(cmp) => {
                if cmp.levels.is_empty() || cmp.levels.iter().any(|l| l[0] < 2 || l[1] == 0) {
                    issues.push(lc.issue("levels", "compare.levels must be nonempty with particles ≥ 2 and cells ≥ 1"));
                }
            }
        }
    }
    if c.radial && effective != Mode::Lagrangian {
        issues.push(lc.issue("radial", "radial mode applies to lagrangian runs only"));
    }

    let kernel = match build_kernel(&c.kernel, &c.base_dir) {
        Ok(k) => Some(k),
        Err(e) => {
            issues.push(lc.issue("kernel", e));
            None
        }
    };
    if let Some(k) = &kernel {
        match effective {
            Mode::Spectral if !matches!(k.family(), KernelFamily::PowerLaw { .. }) => {
                issues.push(lc.issue("family", "spectral mode requires the power_law kernel"))
            }
            Mode::Lagrangian | Mode::Mass | Mode::Compare if !k.is_bounded() => issues.push(lc.issue(
                "family",
                format!("{} mode requires a bounded kernel", effective.name()),
            )),
            Mode::Mass | Mode::Compare if !k.is_pure() => issues.push(lc.issue(
                "kind",
                format!("{} mode requires a purely topological kernel", effective.name()),
            )),
            _ => {}
        }
    }

    let profile = match &c.rho0 {
        Some(spec) => match build_profile(spec, &c.base_dir) {
            Ok(p) => Some(p),
            Err(e) => {
                issues.push(lc.issue("rho0", e));
                None
            }
        },
        None => {
            if effective != Mode::Spectral {
                issues.push(lc.issue("mode", format!("mode '{}' needs rho0", effective.name())));
            }
            None
        }
    };
    if let Some((p, _)) = &profile {
        if !p.is_continuous() && effective != Mode::Spectral {
            issues.push(lc.issue("rho0", "initial density must be atom-free (no atoms in the CDF)"));
        }
    }
    let velocity = match build_velocity(&c.velocity, c.seed, &c.base_dir) {
        Ok(v) => Some(v),
        Err(e) => {
            issues.push(lc.issue("velocity", e));
            None
        }
    };
    if let Some(v) = &velocity {
        if v.coordinate == Coordinate::Space && c.rho0.is_none() {
            issues.push(lc.issue("coordinate", "a velocity in space coordinates needs rho0"));
        }
    }

    if !issues.is_empty() {
        return Err(issues);
    }
    let (profile, renormalisation) = match profile {
        Some((p, f)) => (Some(p), f),
        None => (None, None),
    };
    Ok(Setup { kernel: kernel.unwrap(), profile, renormalisation, velocity: velocity.unwrap() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_text;

    fn config(mode: &str, kernel: &str, extra: &str) -> String {
        format!(
            r#"{{
  "mode": "{mode}",
  "kernel": {kernel},
  "rho0": {{"family": "uniform", "params": {{}}}},
  "velocity": {{"coordinate": "mass", "family": "sine", "params": {{}}}},
  "resolution": {{"particles": 16, "mass_cells": 16, "space_cells": 32}},
  "t_final": 1.0,
  "output_times": [0.0, 1.0],
  "dt": 0.01{extra}
}}"#
        )
    }

    fn check(text: &str) -> Result<Setup, Vec<Issue>> {
        validate(&parse_text(text, Path::new(".")).unwrap())
    }

    fn issues(text: &str) -> Vec<Issue> {
        check(text).err().expect("expected validation issues")
    }

    const CONST: &str = r#"{"family": "constant", "params": {"value": 1.0}}"#;
    const POWER: &str = r#"{"family": "power_law", "params": {"s": 0.75}}"#;

    #[test]
    fn test_mode_kernel_compatibility() {
        assert!(check(&config("mass", CONST, "")).is_ok());
        assert!(check(&config("lagrangian", CONST, "")).is_ok());
        assert!(check(&config("spectral", POWER, "")).is_ok());
        let e = issues(&config("spectral", CONST, ""));
        assert!(e[0].message.contains("power_law"), "{:?}", e);
        assert!(check(&config("mass", POWER, "")).is_err());
        assert!(check(&config("lagrangian", POWER, "")).is_err());
    }

    #[test]
    fn test_general_kernel_rejected_in_mass_mode() {
        let general = r#"{"kind": "general", "family": "affine_decay", "params": {"a": 1.0, "b": 0.5}}"#;
        assert!(check(&config("lagrangian", general, "")).is_ok());
        assert!(check(&config("mass", general, "")).is_err());
    }

    #[test]
    fn test_radial_only_in_lagrangian() {
        assert!(check(&config("lagrangian", CONST, ",\n  \"radial\": true")).is_ok());
        assert!(check(&config("mass", CONST, ",\n  \"radial\": true")).is_err());
    }

    #[test]
    fn test_unknown_family_reported_at_kernel_line() {
        let e = issues(&config("mass", r#"{"family": "gaussian", "params": {}}"#, ""));
        assert_eq!(e[0].line, Some(3));
        assert!(e[0].message.contains("gaussian"));
    }

    #[test]
    fn test_smooth_bump_cdf() {
        let p = smooth_bump(0.0, 1.0, 2001).unwrap();
        assert_eq!(p.cdf(-1.0), 0.0);
        assert!((p.cdf(0.0) - 0.5).abs() < 1e-12);
        assert!((p.cdf(1.0) - 1.0).abs() < 1e-12);
        // ρ(0) = 1 for the unit-width bump.
        let d = p.density().unwrap();
        assert!((d.eval(0.0) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn test_random_series_is_seeded() {
        let (a, b, c) = (random_series(5, 8, 1.0), random_series(5, 8, 1.0), random_series(6, 8, 1.0));
        for k in 0..10 {
            let m = k as f64 / 10.0;
            assert_eq!(a(m).to_bits(), b(m).to_bits());
        }
        assert_ne!(a(0.3), c(0.3));
    }

    #[test]
    fn test_space_velocity_transfer() {
        let text = config("mass", CONST, "")
            .replace(r#""coordinate": "mass", "family": "sine", "params": {}"#, r#""coordinate": "space", "family": "linear", "params": {"slope": 2.0}"#)
            .replace(r#""params": {}}"#, r#""params": {"a": 0.0, "b": 2.0}}"#);
        let s = check(&text).unwrap();
        let v = s.velocity.on_mass_grid(s.profile.as_ref(), 4);
        // x = M⁻¹(m) = 2m, u = 2x.
        assert_eq!(v, vec![0.5, 1.5, 2.5, 3.5]);
    }
}
