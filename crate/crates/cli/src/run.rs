//! The five run modes.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::{json, Value};
use topoflock_core::analysis::{
    self, cross_validate, fit_rate, flocking_diagnostic, poincare_decay_check, sup_decay_check, CrossLevel,
    DecayRecord, FitWindow, Report,
};
use topoflock_core::io::{write_columns, write_text};
use topoflock_core::lagrangian::{
    earliest_radial_blowup, eulerian_reconstruct, gronwall_margin, refined_negative_diagnostic, run_flow,
    threshold_check, FlowSystem, LagrangianState,
};
use topoflock_core::m_solver::{couple_and_run, domain_for, MassRunOptions, MassTrajectory, SpatialGrid};
use topoflock_core::v_solver::{energy_and_mean, VelocitySource};
use topoflock_core::{BoundaryCondition, BoundedOperator, KernelFamily, MassProfile, SpectralOperator, VelocityGrid};

use crate::config::{get_path, parse_text, set_path, LoadedConfig, Mode, RunConfig};
use crate::setup::{validate, Setup};
use crate::CliError;

/// What a run produced, besides its files.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub report: Report,
    pub manifest: Value,
    pub compare: Option<Vec<CrossLevel>>,
}

struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Outputs { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn columns(&mut self, name: &str, headers: &[&str], cols: &[&[f64]]) -> Result<(), CliError> {
        write_columns(&self.dir.join(name), headers, cols)?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn json(&mut self, name: &str, value: &Value) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value)? + "\n";
        write_text(&self.dir.join(name), &text)?;
        self.files.push(name.to_string());
        Ok(())
    }
}

fn indexed(prefix: &str, k: usize) -> String {
    format!("{prefix}_{k:04}.csv")
}

/// Up to `max` evenly strided entries, always keeping the last.
fn stride<T: Clone>(items: &[T], max: usize) -> Vec<usize> {
    let n = items.len();
    let step = n.div_ceil(max.max(1)).max(1);
    let mut idx: Vec<usize> = (0..n).step_by(step).collect();
    if idx.last() != Some(&(n - 1)) {
        idx.push(n - 1);
    }
    idx
}

fn write_density(
    out: &mut Outputs,
    name: &str,
    grid: &SpatialGrid,
    velocity: Option<&VelocityGrid>,
) -> Result<(), CliError> {
    let x = grid.centres();
    let rho = grid.density();
    let u: Vec<f64> = match velocity {
        Some(v) => grid.values.iter().map(|&m| v.eval_cell(m)).collect(),
        None => vec![f64::NAN; x.len()],
    };
    if velocity.is_some() {
        out.columns(name, &["x", "M", "rho", "u"], &[&x, &grid.values, &rho, &u])
    } else {
        out.columns(name, &["x", "M", "rho"], &[&x, &grid.values, &rho])
    }
}

fn mass_flags(run: &MassTrajectory, flags: &mut Vec<String>) -> Value {
    if let Some(ev) = &run.admissibility {
        flags.push(format!(
            "admissibility: suspected atom at x = {} (t = {}, steepness {}); output is mass-distributional only",
            ev.location, ev.time, ev.steepness
        ));
    }
    json!({
        "dt_max": run.dt_max,
        "steps": run.n_steps,
        "admissibility_event": run.admissibility,
        "monotonicity_violations": run.monotonicity_violations,
        "range_violations": run.range_violations,
        "conservation_error": run.conservation_error,
    })
}

fn run_conservation(
    source: &dyn VelocitySource,
    profile: &MassProfile,
    cfg: &RunConfig,
    n_x: usize,
) -> Result<(SpatialGrid, MassTrajectory), CliError> {
    let (lo, hi) = domain_for(profile.support(), source.speed_bound(), cfg.t_final);
    let grid = SpatialGrid::from_profile(profile, lo, hi, n_x)?;
    let opts = MassRunOptions { cfl: cfg.cfl, monitor_factor: cfg.tolerances.monitor_factor, record_steps: false };
    let run = couple_and_run(source, &grid, cfg.t_final, &cfg.output_times, &opts)?;
    Ok((grid, run))
}

fn base_manifest(lc: &LoadedConfig, mode: Mode) -> Value {
    json!({
        "program": "topoflock",
        "version": env!("CARGO_PKG_VERSION"),
        "mode": mode.name(),
        "config": lc.raw,
    })
}

fn run_mass(lc: &LoadedConfig, setup: &Setup, out: &mut Outputs) -> Result<RunSummary, CliError> {
    let cfg = &lc.config;
    let n = cfg.resolution.mass_cells.unwrap();
    let n_x = cfg.resolution.space_cells.unwrap();
    let dt = cfg.dt.unwrap();
    let profile = setup.profile.as_ref().unwrap();
    let mut flags = Vec::new();

    let op = BoundedOperator::new(&setup.kernel, n)?;
    let v0 = VelocityGrid::new(setup.velocity.on_mass_grid(Some(profile), n))?;
    let traj = op.run(&v0, dt, cfg.t_final)?;

    for (k, &t) in cfg.output_times.iter().enumerate() {
        let v = traj.velocity_at(t);
        let m = topoflock_core::v_solver::midpoints(n);
        out.columns(&indexed("velocity", k), &["m", "v"], &[&m, &v])?;
    }
    let idx = stride(&traj.times, 1000);
    let times: Vec<f64> = idx.iter().map(|&i| traj.times[i]).collect();
    let snaps: Vec<Vec<f64>> = idx.iter().map(|&i| traj.snapshots[i].clone()).collect();
    let record = DecayRecord::from_snapshots(&times, &snaps, &|v| op.dirichlet_form(v, v));
    let means: Vec<f64> = snaps.iter().map(|s| energy_and_mean(s).1).collect();
    out.columns(
        "energy.csv",
        &["t", "energy", "mean", "dirichlet", "sup_deviation"],
        &[&times, &record.energy, &means, &record.dirichlet, &record.sup_deviation],
    )?;
    let c_phi = setup.kernel.poincare_constant(cfg.tolerances.poincare_quad)?.value;
    let max_ratio = c_phi.is_finite().then(|| poincare_decay_check(&times, &snaps, None, c_phi).max_ratio);
    if !c_phi.is_finite() {
        flags.push("poincare: protocol vanishes on a set of positive measure, c_phi is infinite".into());
    }
    let mean_drift = means.iter().map(|m| (m - means[0]).abs()).fold(0.0, f64::max);

    let (grid, run) = run_conservation(&traj, profile, cfg, n_x)?;
    for (k, g) in run.outputs.iter().enumerate() {
        let v = VelocityGrid { values: traj.velocity_at(g.time), time: g.time };
        write_density(out, &indexed("density", k), g, Some(&v))?;
    }
    let solver = mass_flags(&run, &mut flags);
    let mut snapshots = vec![grid.clone()];
    snapshots.extend(run.outputs.iter().filter(|g| g.time > 0.0).cloned());
    let flocking = (snapshots.len() >= 2)
        .then(|| flocking_diagnostic(&snapshots, v0.mean(), cfg.tolerances.flocking_threshold));
    if flocking.is_some() {
        flags.push("flocking: declaration uses a heuristic L1 threshold".into());
    }

    let report = Report {
        rate_fit: record.fit.map(|f| f.rate),
        rate_bound_2_over_cphi: c_phi.is_finite().then(|| 2.0 / c_phi),
        lambda1: None,
        max_ratio,
        flocking_declared: flocking.as_ref().map(|f| f.declared),
    };
    let mut manifest = base_manifest(lc, Mode::Mass);
    manifest["velocity"] = json!({
        "cells": n, "dt_requested": dt, "steps": traj.len() - 1, "mean_drift": mean_drift,
        "c_phi": c_phi, "sup_norm": setup.kernel.sup_norm(),
        "output_interpolation": "linear in time between steps",
    });
    manifest["conservation_law"] = json!({
        "x_lo": grid.x_lo, "x_hi": grid.x_hi, "dx": grid.dx, "cells": n_x, "cfl": cfg.cfl, "solver": solver,
    });
    manifest["flocking"] = json!(flocking);
    manifest["flags"] = json!(flags);
    Ok(RunSummary { report, manifest, compare: None })
}

fn run_spectral(lc: &LoadedConfig, setup: &Setup, out: &mut Outputs) -> Result<RunSummary, CliError> {
    let cfg = &lc.config;
    let n = cfg.resolution.mass_cells.unwrap();
    let s = match setup.kernel.family() {
        KernelFamily::PowerLaw { s } => *s,
        _ => unreachable!("validated"),
    };
    let bc = cfg.spectral.bc;
    let mut flags = Vec::new();
    if bc == BoundaryCondition::Dirichlet {
        flags.push("dirichlet: realised by pinning the first and last cells to zero (regional form, no exterior term)".into());
    }
    let op = SpectralOperator::assemble(s, bc, n)?;
    let v0 = VelocityGrid::new(setup.velocity.on_mass_grid(setup.profile.as_ref(), n))?;
    let evo = op.evolution(&v0);
    let m = topoflock_core::v_solver::midpoints(n);
    for (k, &t) in cfg.output_times.iter().enumerate() {
        out.columns(&indexed("velocity", k), &["m", "v"], &[&m, &evo.velocity_at(t)])?;
    }
    let idx: Vec<f64> = (0..op.eigenvalues().len()).map(|i| i as f64).collect();
    out.columns("spectrum.csv", &["index", "lambda"], &[&idx, op.eigenvalues()])?;

    let times: Vec<f64> = (0..=400).map(|k| cfg.t_final * k as f64 / 400.0).collect();
    let snaps: Vec<Vec<f64>> = times.iter().map(|&t| evo.velocity_at(t)).collect();
    let record = DecayRecord::from_snapshots(&times, &snaps, &|v| op.dirichlet_form(v, v));
    out.columns(
        "energy.csv",
        &["t", "energy", "dirichlet", "sup_deviation"],
        &[&times, &record.energy, &record.dirichlet, &record.sup_deviation],
    )?;
    let lambda1 = op.rayleigh_lambda1().ok();
    let sup = match lambda1 {
        Some(l1) if s > 0.5 => {
            let tau = (1.0 / l1).min(0.25 * cfg.t_final);
            Some(sup_decay_check(&times, &snaps, &op, l1, tau, FitWindow::Time { t0: tau, t1: cfg.t_final }))
        }
        _ => None,
    };
    if let Some(r) = &sup {
        if !r.passed {
            flags.push(format!("sup_decay: constant grew by a factor {} after tau", r.max_growth));
        }
    }
    let mut manifest = base_manifest(lc, Mode::Spectral);
    manifest["spectral"] = json!({
        "s": s, "c_s": op.c_s(), "bc": bc, "cells": n, "lambda1": lambda1,
        "lambda0": op.eigenvalues()[0], "sup_decay": sup,
    });
    if let Some(profile) = &setup.profile {
        if let (Some(n_x), true) = (cfg.resolution.space_cells, profile.is_continuous()) {
            let (grid, run) = run_conservation(&evo, profile, cfg, n_x)?;
            for (k, g) in run.outputs.iter().enumerate() {
                let v = VelocityGrid { values: evo.velocity_at(g.time), time: g.time };
                write_density(out, &indexed("density", k), g, Some(&v))?;
            }
            let solver = mass_flags(&run, &mut flags);
            manifest["conservation_law"] = json!({
                "x_lo": grid.x_lo, "x_hi": grid.x_hi, "dx": grid.dx, "cells": n_x, "cfl": cfg.cfl, "solver": solver,
            });
        }
    }
    manifest["flags"] = json!(flags);
    let report = Report {
        rate_fit: record.fit.map(|f| f.rate),
        rate_bound_2_over_cphi: None,
        lambda1,
        max_ratio: None,
        flocking_declared: None,
    };
    Ok(RunSummary { report, manifest, compare: None })
}

fn run_lagrangian(lc: &LoadedConfig, setup: &Setup, out: &mut Outputs) -> Result<RunSummary, CliError> {
    let cfg = &lc.config;
    let p = cfg.resolution.particles.unwrap();
    let dt = cfg.dt.unwrap();
    let profile = setup.profile.as_ref().unwrap();
    let mut flags = Vec::new();
    let sys = FlowSystem::new(&setup.kernel, p, cfg.radial)?;
    let u0 = setup.velocity.in_space(profile);
    let state = LagrangianState::new(profile, |x| u0(x), &sys)?;
    let verdict = threshold_check(&state.labels, &state.psi0);
    let run = run_flow(&state, &sys, dt, cfg.t_final, &cfg.output_times)?;
    let sup = setup.kernel.sup_norm();

    let mut margins = Vec::new();
    let mut energies = Vec::new();
    let mut times = Vec::new();
    for (k, st) in run.outputs.iter().enumerate() {
        out.columns(
            &indexed("particles", k),
            &["alpha", "X", "V", "psi"],
            &[&st.labels, &st.positions, &st.velocities, &st.psi0],
        )?;
        if let Ok(field) = eulerian_reconstruct(st) {
            out.columns(&indexed("eulerian", k), &["x", "rho", "u"], &[&field.midpoints(), &field.rho, &field.u])?;
        }
        let mean = st.momentum();
        energies.push(st.velocities.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() * st.weight());
        times.push(st.time);
        if verdict.is_satisfied() {
            margins.push(gronwall_margin(st, sup));
        }
    }
    let last = run.outputs.last().cloned().unwrap_or_else(|| state.clone());
    let momentum_drift = run.outputs.iter().map(|s| (s.momentum() - state.momentum()).abs()).fold(0.0, f64::max);

    let mut manifest = base_manifest(lc, Mode::Lagrangian);
    if let Some(ev) = &run.blowup {
        flags.push(format!(
            "blow_up: adjacent gap {} collapsed at t = {}; classical run halted",
            ev.index, ev.time
        ));
    }
    if !verdict.is_satisfied() {
        flags.push("threshold: psi0 is not nondecreasing".into());
        let diameter = last.positions[p - 1] - last.positions[0];
        manifest["refined_negative_diagnostic"] = json!(refined_negative_diagnostic(&state, &setup.kernel, diameter).ok());
        if cfg.radial {
            let pred = earliest_radial_blowup(&state.labels, &state.psi0);
            flags.push(
                "radial_formula: the predicted latest classical time is the crossing time (beta - alpha)/(psi0(alpha) - psi0(beta)); the reciprocal expression is reported alongside"
                    .into(),
            );
            manifest["radial_prediction"] = json!(pred);
        }
    }
    manifest["lagrangian"] = json!({
        "particles": p, "dt": dt, "steps": run.n_steps, "radial": cfg.radial, "sup_norm": sup,
        "threshold": verdict, "blow_up": run.blowup,
        "time_gap_below_10_percent": run.first_time_below(0.1),
        "min_gronwall_margin": margins.iter().copied().reduce(f64::min),
        "momentum_drift": momentum_drift,
    });
    manifest["flags"] = json!(flags);
    let report = Report {
        rate_fit: fit_rate(&times, &energies, FitWindow::default()).map(|f| f.rate),
        rate_bound_2_over_cphi: None,
        lambda1: None,
        max_ratio: None,
        flocking_declared: None,
    };
    Ok(RunSummary { report, manifest, compare: None })
}

/// ρ discrepancy between the two pipelines at one level.
pub fn compare_level(
    setup: &Setup,
    cfg: &RunConfig,
    particles: usize,
    n_x: usize,
) -> Result<(f64, f64, bool), CliError> {
    let profile = setup.profile.as_ref().unwrap();
    let dt = cfg.dt.unwrap();
    let sys = FlowSystem::new(&setup.kernel, particles, false)?;
    let u0 = setup.velocity.in_space(profile);
    let state = LagrangianState::new(profile, |x| u0(x), &sys)?;
    let satisfied = threshold_check(&state.labels, &state.psi0).is_satisfied();
    let flow = run_flow(&state, &sys, dt, cfg.t_final, &[cfg.t_final])?;
    let field = eulerian_reconstruct(flow.outputs.last().unwrap())?;

    let op = BoundedOperator::new(&setup.kernel, particles)?;
    let v0 = VelocityGrid::new(setup.velocity.on_mass_grid(Some(profile), particles))?;
    let traj = op.run(&v0, dt, cfg.t_final)?;
    let (_, run) = run_conservation(&traj, profile, &RunConfig { output_times: vec![cfg.t_final], ..cfg.clone() }, n_x)?;
    let (l1, linf) = analysis::rho_discrepancy(&field, run.outputs.last().unwrap());
    Ok((l1, linf, satisfied))
}

fn run_compare(lc: &LoadedConfig, setup: &Setup, out: &mut Outputs) -> Result<RunSummary, CliError> {
    let cfg = &lc.config;
    let levels = &cfg.compare.as_ref().unwrap().levels;
    let results = levels
        .iter()
        .map(|l| compare_level(setup, cfg, l[0], l[1]))
        .collect::<Result<Vec<_>, _>>()?;
    let mut flags: Vec<String> = Vec::new();
    if results.iter().any(|r| !r.2) {
        flags.push("threshold: psi0 is not nondecreasing; pipeline equivalence is not expected".into());
    }
    let table = cross_validate(
        &levels.iter().zip(&results).map(|(l, r)| (l[0], l[1], r.0, r.1)).collect::<Vec<_>>(),
    );
    let col = |f: &dyn Fn(&CrossLevel) -> f64| table.iter().map(f).collect::<Vec<f64>>();
    out.columns(
        "compare.csv",
        &["particles", "space_cells", "l1", "linf", "l1_ratio", "l1_order"],
        &[
            &col(&|c| c.particles as f64),
            &col(&|c| c.n_x as f64),
            &col(&|c| c.l1),
            &col(&|c| c.linf),
            &col(&|c| c.l1_ratio.unwrap_or(f64::NAN)),
            &col(&|c| c.l1_order.unwrap_or(f64::NAN)),
        ],
    )?;
    let mut manifest = base_manifest(lc, Mode::Compare);
    manifest["compare"] = json!(table);
    manifest["flags"] = json!(flags);
    Ok(RunSummary { report: Report::default(), manifest, compare: Some(table) })
}

fn run_sweep(lc: &LoadedConfig, out: &mut Outputs) -> Result<RunSummary, CliError> {
    let sweep = lc.config.sweep.clone().unwrap();
    let base_dir = lc.config.base_dir.clone();
    let points: Vec<(usize, Value, Result<LoadedConfig, CliError>)> = sweep
        .values
        .iter()
        .enumerate()
        .map(|(k, value)| {
            let mut raw = lc.raw.clone();
            let obj = raw.as_object_mut().unwrap();
            obj.remove("sweep");
            obj.insert("mode".into(), json!(sweep.mode.name()));
            let built = set_path(&mut raw, &sweep.parameter, value.clone())
                .map_err(|m| CliError::Validation(vec![lc.issue("parameter", m)]))
                .and_then(|_| {
                    let text = serde_json::to_string_pretty(&raw)?;
                    parse_text(&text, &base_dir).map_err(|i| CliError::Validation(vec![i]))
                });
            (k, value.clone(), built)
        })
        .collect();
    if get_path(&lc.raw, &sweep.parameter).is_none() {
        return Err(CliError::Validation(vec![lc.issue(
            "parameter",
            format!("sweep parameter '{}' does not exist in the configuration", sweep.parameter),
        )]));
    }
    let dir = out.dir.clone();
    let results: Vec<(usize, Value, Result<RunSummary, CliError>)> = points
        .into_par_iter()
        .map(|(k, value, built)| {
            let res = built.and_then(|point| {
                let point_dir = dir.join(format!("point_{k:04}"));
                run_loaded(&point, &point_dir)
            });
            (k, value, res)
        })
        .collect();
    let mut rows = Vec::new();
    let mut any_ok = false;
    for (k, value, res) in &results {
        let (status, code, report) = match res {
            Ok(s) => {
                any_ok = true;
                ("ok".to_string(), 0, s.report.clone())
            }
            Err(e) => (e.to_string().replace(['\n', ','], " "), e.exit_code(), Report::default()),
        };
        let opt = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v}"));
        rows.push(vec![
            k.to_string(),
            value.to_string().replace(',', ";"),
            status,
            code.to_string(),
            opt(report.rate_fit),
            opt(report.max_ratio),
            opt(report.lambda1),
            report.flocking_declared.map_or(String::new(), |b| b.to_string()),
        ]);
    }
    let path = out.dir.join("summary.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["index", "value", "status", "exit_code", "rate_fit", "max_ratio", "lambda1", "flocking_declared"])
        .map_err(topoflock_core::Error::from)?;
    for r in &rows {
        w.write_record(r).map_err(topoflock_core::Error::from)?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    out.files.push("summary.csv".into());
    let mut manifest = base_manifest(lc, Mode::Sweep);
    manifest["sweep"] = json!({
        "mode": sweep.mode.name(), "parameter": sweep.parameter, "points": results.len(),
        "failed": results.iter().filter(|r| r.2.is_err()).count(),
    });
    manifest["flags"] = json!(Vec::<String>::new());
    if !any_ok {
        if let Some((_, _, Err(_))) = results.into_iter().next() {
            manifest["flags"] = json!(["sweep: every point failed"]);
        }
    }
    Ok(RunSummary { report: Report::default(), manifest, compare: None })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::Core(e.into()))
}

/// Validates and runs a parsed configuration into `out_dir`.
pub fn run_loaded(lc: &LoadedConfig, out_dir: &Path) -> Result<RunSummary, CliError> {
    let mut out = Outputs::new(out_dir)?;
    let summary = if lc.config.mode == Mode::Sweep {
        validate(lc).map_err(CliError::Validation)?;
        run_sweep(lc, &mut out)?
    } else {
        let setup = validate(lc).map_err(CliError::Validation)?;
        match lc.config.mode {
            Mode::Mass => run_mass(lc, &setup, &mut out)?,
            Mode::Spectral => run_spectral(lc, &setup, &mut out)?,
            Mode::Lagrangian => run_lagrangian(lc, &setup, &mut out)?,
            Mode::Compare => run_compare(lc, &setup, &mut out)?,
            Mode::Sweep => unreachable!(),
        }
    };
    let mut manifest = summary.manifest.clone();
    if let Some(f) = validate(lc).ok().and_then(|s| s.renormalisation) {
        manifest["rho0_renormalisation_factor"] = json!(f);
    }
    out.json("report.json", &json!(summary.report))?;
    let mut files = out.files.clone();
    files.push("manifest.json".into());
    manifest["outputs"] = json!(files);
    out.json("manifest.json", &manifest)?;
    Ok(RunSummary { manifest, ..summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_stride_keeps_ends() {
        let items: Vec<usize> = (0..10).collect();
        assert_eq!(stride(&items, 4), vec![0, 3, 6, 9]);
        assert_eq!(stride(&items, 100), items);
        assert_eq!(stride(&items[..1], 3), vec![0]);
        assert_eq!(stride(&items, 3), vec![0, 4, 8, 9]);
    }

    #[test]
    fn test_indexed_names_sort() {
        assert_eq!(indexed("density", 3), "density_0003.csv");
        assert!(indexed("v", 9) < indexed("v", 10));
    }
}
