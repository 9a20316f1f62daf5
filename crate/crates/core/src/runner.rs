//! Manifest-driven orchestration: dispatch an experiment, write its
//! artifacts deterministically, and keep timestamps confined to run.log.

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::carleman::{
    carleman_ratio_sweep, energy_identity, midpoint_times, mode_case, CarlemanWeightSet,
    SweepVariant,
};
use crate::error::{LabError, Result};
use crate::fbi::{fbi_kernel_bound_check, fbi_transform, FbiConfig};
use crate::field::{time_samples, ComplexField, Trajectory};
use crate::forward::{solve_nonlinear, SolveConfig};
use crate::inverse::{
    gamma0_selection, partial_data_experiment, shrink_selection, sine_bump_family,
    stability_experiment, CoefficientBase, StabilityHypotheses, StabilityMode,
};
use crate::linearization::convergence_study;
use crate::manifest::Manifest;
use crate::report::{
    fmt_float, observability_lines, write_convergence_csv, write_csv, write_failed_marker,
    write_ratio_csv, write_stability_csv, write_trajectory_csv, Summary,
};
use crate::spectral::{eigendecompose, estimate_banach_constant, fit_c1, SpectralOperator};

/// Append-only log; the only artifact allowed to carry timestamps.
pub struct RunLog {
    file: fs::File,
}

impl RunLog {
    pub fn create(path: &Path) -> Result<RunLog> {
        Ok(RunLog {
            file: fs::File::create(path)?,
        })
    }

    pub fn line(&mut self, msg: &str) {
        let stamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0);
        let _ = writeln!(self.file, "[{stamp}] {msg}");
    }
}

/// Run a manifest end to end. Validation failures surface as
/// `ManifestInvalid`; runtime failures leave partial outputs plus a FAILED
/// marker in the output directory.
pub fn run_manifest(manifest_path: &Path, out: &Path, threads: Option<usize>) -> Result<()> {
    let manifest = Manifest::load(manifest_path)?;
    fs::create_dir_all(out)?;
    let mut log = RunLog::create(&out.join("run.log"))?;
    log.line(&format!("nlse-lab {}", env!("CARGO_PKG_VERSION")));
    log.line(&format!(
        "manifest {} kind {} seed {}",
        manifest_path.display(),
        manifest.experiment.kind,
        manifest.seed
    ));
    log.line(&format!(
        "threads {}",
        threads
            .map(|t| t.to_string())
            .unwrap_or_else(|| "auto".into())
    ));

    let started = Instant::now();
    let result = dispatch(&manifest, out, &mut log);
    log.line(&format!("wall time {:.3}s", started.elapsed().as_secs_f64()));
    match result {
        Ok(summary) => {
            summary.write(&out.join("summary.txt"))?;
            if summary.failed() {
                log.line("finished with failed checks");
                write_failed_marker(out, "one or more checks failed; see summary.txt")?;
            } else {
                log.line("finished ok");
            }
            Ok(())
        }
        Err(e) => {
            log.line(&format!("runtime failure: {e}"));
            let _ = write_failed_marker(out, &e.to_string());
            Err(e)
        }
    }
}

struct Prepared {
    op: SpectralOperator,
    spec: crate::nonlinearity::NonlinearitySpec,
    q: crate::grid::PotentialField,
    f: ComplexField,
    cfg: SolveConfig,
    k_star: f64,
    c1: f64,
}

fn prepare(manifest: &Manifest, log: &mut RunLog) -> Result<Prepared> {
    let grid = manifest.build_grid()?;
    let p = manifest.coefficients.p.build_potential(&grid, "p");
    let q = manifest.coefficients.q.build_potential(&grid, "q");
    let op = eigendecompose(grid.clone(), &p)?;
    let spec = manifest.nonlinearity_spec();
    let f = manifest.experiment.data.build_field(&grid);
    let cfg = SolveConfig {
        t_max: manifest.solver.t_max,
        dt: manifest.solver.dt,
        tolerance: manifest.solver.tolerance,
        max_iterations: manifest.solver.max_iterations,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(manifest.seed);
    let k_star = estimate_banach_constant(&grid, &mut rng, 32);
    let probe_times = time_samples(0.0, cfg.t_max.abs(), cfg.t_max.abs() / 8.0);
    let c1 = fit_c1(&op, &mut rng, 16, &probe_times)?;
    log.line(&format!("fitted K* {k_star:.6} C1 {c1:.6}"));
    Ok(Prepared {
        op,
        spec,
        q,
        f,
        cfg,
        k_star,
        c1,
    })
}

fn dispatch(manifest: &Manifest, out: &Path, log: &mut RunLog) -> Result<Summary> {
    match manifest.experiment.kind.as_str() {
        "solve" => run_solve(manifest, out, log),
        "linearize" => run_linearize(manifest, out, log),
        "carleman-check" => run_carleman(manifest, out, log),
        "fbi-check" => run_fbi(manifest, out, log),
        "recover-p" | "recover-q" => run_recover(manifest, out, log),
        "partial-data" => run_partial(manifest, out, log),
        other => Err(LabError::ManifestInvalid(format!(
            "experiment.kind: unknown kind '{other}'"
        ))),
    }
}

fn run_solve(manifest: &Manifest, out: &Path, log: &mut RunLog) -> Result<Summary> {
    let prep = prepare(manifest, log)?;
    let (traj, cert) = solve_nonlinear(
        &prep.op,
        &prep.spec,
        &prep.q,
        &prep.f,
        &prep.cfg,
        prep.k_star,
        prep.c1,
    )?;
    write_trajectory_csv(&out.join("trajectory.csv"), &traj)?;
    log.line(&format!(
        "picard iterations {} residual {:.3e}",
        cert.iterations, cert.final_residual
    ));
    let mut summary = Summary::new();
    summary.push("kind", "solve");
    summary.push("radius", fmt_float(cert.radius));
    summary.push("iterations", cert.iterations);
    summary.push("final residual", fmt_float(cert.final_residual));
    summary.push_check("certified contraction", cert.certified);
    Ok(summary)
}

fn run_linearize(manifest: &Manifest, out: &Path, log: &mut RunLog) -> Result<Summary> {
    let prep = prepare(manifest, log)?;
    let order = manifest.experiment.order.unwrap();
    let epsilons = manifest.experiment.epsilons.clone().unwrap();
    let report = convergence_study(
        &prep.op,
        &prep.spec,
        &prep.q,
        &prep.f,
        order,
        &epsilons,
        &prep.cfg,
        prep.k_star,
        prep.c1,
    )?;
    write_convergence_csv(&out.join("convergence.csv"), &report)?;
    let mut summary = Summary::new();
    summary.push("kind", "linearize");
    summary.push("order", order);
    summary.push("fitted order", format!("{:.6}", report.fitted_order));
    summary.push_check("ladder monotone", report.monotone);
    Ok(summary)
}

fn run_carleman(manifest: &Manifest, out: &Path, log: &mut RunLog) -> Result<Summary> {
    let prep = prepare(manifest, log)?;
    let e = &manifest.experiment;
    let t1 = e.t1.unwrap_or(prep.cfg.t_max.abs());
    let ws = CarlemanWeightSet::new(prep.op.grid.clone(), manifest.x0(), e.lambda.unwrap(), t1)?;
    log.line(&format!("Lambda0 {:.6} s0 {:.6}", ws.lambda0, e.s0.unwrap()));

    let slices = 64;
    let times = midpoint_times(t1, slices);
    let suite = vec![
        mode_case(&prep.op, "mode1", &[(0, Complex64::new(1.0, 0.0))], &times),
        mode_case(
            &prep.op,
            "mix",
            &[(0, Complex64::new(0.7, 0.0)), (2, Complex64::new(0.0, 0.4))],
            &times,
        ),
    ];
    let s0 = e.s0.unwrap();
    let ladder: Vec<f64> = (0..e.s_rungs.unwrap_or(4))
        .map(|j| s0 * (1 << j) as f64)
        .collect();
    let mut rows = carleman_ratio_sweep(
        &prep.op,
        &ws,
        &ladder,
        &suite,
        SweepVariant::FullBoundary,
        slices,
    )?;
    rows.extend(carleman_ratio_sweep(
        &prep.op,
        &ws,
        &ladder,
        &suite,
        SweepVariant::Interior,
        slices,
    )?);
    write_ratio_csv(&out.join("ratios.csv"), &rows)?;

    // Energy identity on a fine exact-mode trajectory at s0 and 2 s0.
    let dt_e = t1 / (t1 / 2.5e-4).round();
    let e_times = time_samples(-t1, 0.0, dt_e);
    let mu = prep.op.eigenvalues[0];
    let n = prep.op.grid.len();
    let e0 = ComplexField {
        grid: prep.op.grid.clone(),
        values: (0..n)
            .map(|i| Complex64::new(prep.op.eigenvectors[(i, 0)], 0.0))
            .collect(),
    };
    let fields = e_times
        .iter()
        .map(|&tj| e0.scaled(Complex64::new(0.0, -mu * tj).exp()))
        .collect();
    let traj = Trajectory::new(e_times, fields);

    let mut summary = Summary::new();
    summary.push("kind", "carleman-check");
    summary.push("Lambda0", fmt_float(ws.lambda0));
    summary.push("s0", fmt_float(s0));
    for &s in &[s0, 2.0 * s0] {
        let id = energy_identity(&prep.op, &ws, s, &traj)?;
        summary.push(
            &format!("energy identity rel err (s={s})"),
            fmt_float(id.rel_err),
        );
        summary.push_check(&format!("energy identity (s={s})"), id.rel_err < 1e-4);
    }
    let bounded = rows
        .iter()
        .all(|r| r.ratio.map_or(true, |v| v.is_finite() && v >= 0.0));
    summary.push_check("ratios finite", bounded);
    Ok(summary)
}

fn run_fbi(manifest: &Manifest, out: &Path, log: &mut RunLog) -> Result<Summary> {
    let prep = prepare(manifest, log)?;
    let gammas = manifest.experiment.gammas.clone().unwrap();
    let t = prep.cfg.t_max.abs();
    let mut rows = Vec::new();
    let mut summary = Summary::new();
    summary.push("kind", "fbi-check");
    let mut all_hold = true;
    for &gamma in &gammas {
        let rep = fbi_kernel_bound_check(gamma, 4000);
        all_hold &= rep.holds;
        // Mollification error of a constant-in-time profile at the plateau
        // center.
        let dt = (1.0 / (16.0 * gamma.sqrt()) * t / 3.0).min(t / 64.0);
        let steps = (t / dt).ceil();
        let dt = t / steps;
        let times = time_samples(-t, t, dt);
        let fields = times.iter().map(|_| prep.f.clone()).collect();
        let traj = Trajectory::new(times, fields);
        let cfg = FbiConfig {
            gamma,
            t0: 1.0,
            t_max: t,
        };
        let transformed = fbi_transform(&traj, &cfg, 0.0, 0.0)?;
        let err = transformed
            .iter()
            .zip(&prep.f.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0f64, f64::max);
        rows.push(vec![
            fmt_float(gamma),
            fmt_float(rep.max_ratio),
            rep.holds.to_string(),
            fmt_float(err),
        ]);
        log.line(&format!(
            "gamma {gamma} kernel ratio {:.4} transform err {err:.3e}",
            rep.max_ratio
        ));
    }
    write_csv(
        &out.join("fbi.csv"),
        "fbi-kernel",
        "gamma,max_ratio,holds,constant_profile_err",
        &rows,
    )?;
    summary.push_check("kernel bound C=1/4", all_hold);
    Ok(summary)
}

fn recover_context(manifest: &Manifest, log: &mut RunLog) -> Result<(Prepared, Vec<crate::grid::PotentialField>)> {
    let prep = prepare(manifest, log)?;
    let family = sine_bump_family(
        &prep.op.grid,
        manifest.experiment.family_count.unwrap(),
        manifest.experiment.family_amplitude.unwrap_or(0.3),
    );
    Ok((prep, family))
}

fn run_recover(manifest: &Manifest, out: &Path, log: &mut RunLog) -> Result<Summary> {
    let (prep, family) = recover_context(manifest, log)?;
    let p = prep.op.potential.clone();
    let base = CoefficientBase {
        p: &p,
        q: &prep.q,
        spec: &prep.spec,
    };
    let mode = if manifest.experiment.kind == "recover-p" {
        StabilityMode::RecoverP
    } else {
        StabilityMode::RecoverQ
    };
    let sel = gamma0_selection(&prep.op.grid, manifest.x0());
    let report = stability_experiment(
        &prep.op,
        &base,
        mode,
        &family,
        &prep.f,
        &sel,
        &prep.cfg,
        &StabilityHypotheses::default(),
    )?;
    write_stability_csv(&out.join("stability.csv"), &report)?;
    log.line(&format!("fitted C {:.6}", report.fitted_c));
    let mut summary = Summary::new();
    summary.push("kind", mode.as_str());
    summary.push("fitted C", fmt_float(report.fitted_c));
    summary.push_check("homogeneity", report.homogeneity_pass);
    summary.push_check("fast/full agreement", report.fast_full_pass);
    summary.push_check("all members", report.entries.iter().all(|e| e.pass));
    Ok(summary)
}

fn run_partial(manifest: &Manifest, out: &Path, log: &mut RunLog) -> Result<Summary> {
    let (prep, family) = recover_context(manifest, log)?;
    let p = prep.op.potential.clone();
    let base = CoefficientBase {
        p: &p,
        q: &prep.q,
        spec: &prep.spec,
    };
    let full = gamma0_selection(&prep.op.grid, manifest.x0());
    let gamma = shrink_selection(&full, manifest.experiment.gamma_fraction.unwrap());
    let ladder = manifest.experiment.gammas.clone().unwrap();
    let (report, fit) = partial_data_experiment(
        &prep.op,
        &base,
        StabilityMode::PartialDataQ,
        &family,
        &prep.f,
        &gamma,
        &prep.cfg,
        &StabilityHypotheses::default(),
        &ladder,
    )?;
    write_stability_csv(&out.join("stability.csv"), &report)?;
    log.line(&format!(
        "log-law C {:.6} observability C {:.6} mu {:.6}",
        report.fitted_c, fit.c, fit.mu
    ));
    let mut summary = Summary::new();
    summary.push("kind", "partial-data");
    summary.push("gamma nodes", gamma.indices.len());
    summary.push("log-law C", fmt_float(report.fitted_c));
    observability_lines(&mut summary, &fit);
    summary.push_check("all members", report.entries.iter().all(|e| e.pass));
    Ok(summary)
}
