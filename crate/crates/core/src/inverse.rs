//! Boundary-measurement synthesis and the inverse-stability experiments:
//! Lipschitz laws for recovering p and q, the partial-data logarithmic law,
//! and the observability-style scaling.

use num_complex::Complex64;

use crate::carleman::{energy_identity, CarlemanWeightSet, EnergyIdentity};
use crate::error::{LabError, Result};
use crate::field::{ComplexField, Trajectory};
use crate::forward::SolveConfig;
use crate::grid::{Grid, PotentialField};
use crate::linearization::{
    kth_variation, time_derivative_solution, TimeDerivativeMode, TimeDerivativePair,
};
use crate::nonlinearity::NonlinearitySpec;
use crate::spectral::{eigendecompose, h4_norm, neumann_trace, SpectralOperator};

/// A subset of the boundary nodes of a grid, by index into `grid.boundary`.
#[derive(Debug, Clone)]
pub struct BoundarySelection {
    pub indices: Vec<usize>,
    pub label: String,
}

/// The gamma0 set of an exterior point: boundary nodes with
/// `(x - x0) . nu(x) >= 0`.
pub fn gamma0_selection(grid: &Grid, x0: [f64; 2]) -> BoundarySelection {
    let indices = grid
        .boundary
        .iter()
        .enumerate()
        .filter(|(_, b)| {
            let dot: f64 = (0..grid.dim)
                .map(|ax| (b.position[ax] - x0[ax]) * b.normal[ax])
                .sum();
            dot >= 0.0
        })
        .map(|(i, _)| i)
        .collect();
    BoundarySelection {
        indices,
        label: format!("gamma0({:?})", &x0[..grid.dim]),
    }
}

/// Explicit node list; must be nonempty and on the boundary.
pub fn explicit_selection(grid: &Grid, indices: &[usize]) -> Result<BoundarySelection> {
    let bad: Vec<usize> = indices
        .iter()
        .copied()
        .filter(|&i| i >= grid.boundary.len())
        .collect();
    if indices.is_empty() || !bad.is_empty() {
        return Err(LabError::BadBoundarySelection(bad));
    }
    Ok(BoundarySelection {
        indices: indices.to_vec(),
        label: format!("explicit({})", indices.len()),
    })
}

/// Keep the first `fraction` of the selection (by node order).
pub fn shrink_selection(sel: &BoundarySelection, fraction: f64) -> BoundarySelection {
    let keep = ((sel.indices.len() as f64 * fraction).ceil() as usize).max(1);
    BoundarySelection {
        indices: sel.indices[..keep.min(sel.indices.len())].to_vec(),
        label: format!("{}*{:.2}", sel.label, fraction),
    }
}

/// Neumann traces of a trajectory restricted to a selection and to the time
/// window `[0, t_end]`, with the scalar `delta = L2(S x (0,T))` norm.
#[derive(Debug, Clone)]
pub struct MeasurementSeries {
    pub label: String,
    pub times: Vec<f64>,
    /// `values[j][m]` = trace at time sample `j`, selected node `m`.
    pub values: Vec<Vec<Complex64>>,
    pub delta: f64,
}

pub fn measurement_series(
    traj: &Trajectory,
    sel: &BoundarySelection,
    t_end: f64,
) -> MeasurementSeries {
    let grid = &traj.fields[0].grid;
    let picked: Vec<usize> = traj
        .times
        .iter()
        .enumerate()
        .filter(|(_, &t)| t >= -1e-12 && t <= t_end + 1e-12)
        .map(|(j, _)| j)
        .collect();
    let mut times = Vec::with_capacity(picked.len());
    let mut values = Vec::with_capacity(picked.len());
    let mut sq = 0.0;
    for (row, &j) in picked.iter().enumerate() {
        let full = neumann_trace(&traj.fields[j]);
        let vals: Vec<Complex64> = sel.indices.iter().map(|&m| full[m]).collect();
        let wt = if row == 0 || row == picked.len() - 1 { 0.5 } else { 1.0 };
        for (&m, v) in sel.indices.iter().zip(&vals) {
            sq += v.norm_sqr() * grid.boundary[m].weight * wt * traj.dt;
        }
        times.push(traj.times[j]);
        values.push(vals);
    }
    MeasurementSeries {
        label: sel.label.clone(),
        times,
        values,
        delta: sq.sqrt(),
    }
}

/// Which coefficient a stability experiment perturbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StabilityMode {
    RecoverP,
    RecoverQ,
    PartialDataP,
    PartialDataQ,
}

impl StabilityMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            StabilityMode::RecoverP => "recover-p",
            StabilityMode::RecoverQ => "recover-q",
            StabilityMode::PartialDataP => "partial-data-p",
            StabilityMode::PartialDataQ => "partial-data-q",
        }
    }
}

#[derive(Debug, Clone)]
pub struct StabilityEntry {
    pub member_id: String,
    /// `L2(Omega \ omega)` norm of the perturbation.
    pub pert_norm: f64,
    pub delta: f64,
    /// `pert_norm / delta` (Lipschitz) or the log-law quotient; None when
    /// degenerate (zero perturbation or delta at grid zero).
    pub ratio: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub mode: StabilityMode,
    pub entries: Vec<StabilityEntry>,
    /// Fitted empirical constant: max finite ratio.
    pub fitted_c: f64,
    pub homogeneity_pass: bool,
    pub fast_full_pass: bool,
}

impl StabilityReport {
    /// Text table `member_id,pert_norm,delta,ratio,pass`.
    pub fn table(&self) -> String {
        let mut out = String::from("member_id,pert_norm,delta,ratio,pass\n");
        for e in &self.entries {
            let ratio = match e.ratio {
                Some(v) => format!("{v:.12e}"),
                None => "degenerate".to_string(),
            };
            out.push_str(&format!(
                "{},{:.12e},{:.12e},{ratio},{}\n",
                e.member_id, e.pert_norm, e.delta, e.pass
            ));
        }
        out
    }
}

/// Hypothesis bounds of Thms 1.4/1.5 checked on the supplied data.
#[derive(Debug, Clone, Copy)]
pub struct StabilityHypotheses {
    /// Lower bound `gamma_-` on `|f|` off the collar.
    pub gamma_minus: f64,
    /// Upper bound `gamma_+` on the discrete H4 norm of `f`.
    pub gamma_plus: f64,
    /// Relative tolerance of the fast-path vs quotient-path agreement.
    pub cross_check_tol: f64,
}

impl Default for StabilityHypotheses {
    fn default() -> Self {
        StabilityHypotheses {
            gamma_minus: 0.1,
            gamma_plus: 100.0,
            cross_check_tol: 0.05,
        }
    }
}

fn check_data_hypotheses(
    grid: &Grid,
    f: &ComplexField,
    hyp: &StabilityHypotheses,
) -> Result<()> {
    for i in 0..grid.len() {
        if !grid.collar[i] && f.values[i].norm() < hyp.gamma_minus {
            return Err(LabError::HypothesisViolated(format!(
                "|f| = {:.3e} < gamma_- = {} off the collar at node {i}",
                f.values[i].norm(),
                hyp.gamma_minus
            )));
        }
    }
    let h4 = h4_norm(f);
    if h4 > hyp.gamma_plus {
        return Err(LabError::HypothesisViolated(format!(
            "H4 norm {h4:.3e} exceeds gamma_+ = {}",
            hyp.gamma_plus
        )));
    }
    Ok(())
}

/// `L2` norm of a real field over the off-collar region.
pub fn off_collar_norm(grid: &Grid, values: &[f64]) -> f64 {
    let w = grid.cell_weight();
    ((0..grid.len())
        .filter(|&i| !grid.collar[i])
        .map(|i| values[i] * values[i])
        .sum::<f64>()
        * w)
        .sqrt()
}

/// The base coefficients of a twin experiment.
pub struct CoefficientBase<'a> {
    pub p: &'a PotentialField,
    pub q: &'a PotentialField,
    pub spec: &'a NonlinearitySpec,
}

/// Run the r-system for one perturbation and return the pair plus the order
/// `l` of the underlying variation (1 for p, k for q).
fn perturbed_r_system(
    op: &SpectralOperator,
    base: &CoefficientBase,
    mode: StabilityMode,
    pert: &PotentialField,
    f: &ComplexField,
    cfg: &SolveConfig,
) -> Result<(TimeDerivativePair, usize)> {
    match mode {
        StabilityMode::RecoverP | StabilityMode::PartialDataP => {
            let p2 = PotentialField {
                values: base
                    .p
                    .values
                    .iter()
                    .zip(&pert.values)
                    .map(|(a, b)| a + b)
                    .collect(),
                label: format!("{}+{}", base.p.label, pert.label),
            };
            let op2 = eigendecompose(op.grid.clone(), &p2)?;
            let pair =
                time_derivative_solution(op, TimeDerivativeMode::P { op2: &op2 }, f, cfg)?;
            Ok((pair, 1))
        }
        StabilityMode::RecoverQ | StabilityMode::PartialDataQ => {
            let q1 = PotentialField {
                values: base
                    .q
                    .values
                    .iter()
                    .zip(&pert.values)
                    .map(|(a, b)| a + b)
                    .collect(),
                label: format!("{}+{}", base.q.label, pert.label),
            };
            let pair = time_derivative_solution(
                op,
                TimeDerivativeMode::Q {
                    spec: base.spec,
                    q1: &q1,
                    q2: base.q,
                },
                f,
                cfg,
            )?;
            Ok((pair, base.spec.k))
        }
    }
}

/// Independent slow-path `delta`: build the variation difference without the
/// r-system and differentiate its trace in time by centered differences.
fn full_path_delta(
    op: &SpectralOperator,
    base: &CoefficientBase,
    mode: StabilityMode,
    pert: &PotentialField,
    f: &ComplexField,
    sel: &BoundarySelection,
    cfg: &SolveConfig,
) -> Result<f64> {
    let t = cfg.t_max.abs();
    let diff: Trajectory = match mode {
        StabilityMode::RecoverP | StabilityMode::PartialDataP => {
            // (1)u_j = e^{t A_j} f; the variation difference is their gap.
            let p2 = PotentialField {
                values: base
                    .p
                    .values
                    .iter()
                    .zip(&pert.values)
                    .map(|(a, b)| a + b)
                    .collect(),
                label: "p2".into(),
            };
            let op2 = eigendecompose(op.grid.clone(), &p2)?;
            let v1 = crate::linearization::first_variation(op, f, cfg)?;
            let v2 = crate::linearization::first_variation(&op2, f, cfg)?;
            v1.trajectory.sub(&v2.trajectory)
        }
        StabilityMode::RecoverQ | StabilityMode::PartialDataQ => {
            let q1 = PotentialField {
                values: base
                    .q
                    .values
                    .iter()
                    .zip(&pert.values)
                    .map(|(a, b)| a + b)
                    .collect(),
                label: "q1".into(),
            };
            let v1 = kth_variation(op, base.spec, &q1, f, cfg)?;
            let v2 = kth_variation(op, base.spec, base.q, f, cfg)?;
            v1.trajectory.sub(&v2.trajectory)
        }
    };
    // d_t by centered differences of the whole trajectory, then the trace.
    let dt = diff.dt;
    let m = diff.len();
    let d_fields: Vec<ComplexField> = (0..m)
        .map(|j| {
            let (a, b, s) = if j == 0 {
                (1, 0, 1.0)
            } else if j == m - 1 {
                (m - 1, m - 2, 1.0)
            } else {
                (j + 1, j - 1, 2.0)
            };
            diff.fields[a]
                .sub(&diff.fields[b])
                .scaled(Complex64::new(1.0 / (s * dt), 0.0))
        })
        .collect();
    let d_traj = Trajectory::new(diff.times.clone(), d_fields);
    Ok(measurement_series(&d_traj, sel, t).delta)
}

/// Lipschitz-law experiment over a family of perturbations (Thm 1.4 shape).
///
/// For each member, `delta^(l)` comes from the linearized r-system trace;
/// the first member is cross-checked against the slow path, and its doubled
/// copy checks degree-1 homogeneity. Members run concurrently.
pub fn stability_experiment(
    op: &SpectralOperator,
    base: &CoefficientBase,
    mode: StabilityMode,
    family: &[PotentialField],
    f: &ComplexField,
    sel: &BoundarySelection,
    cfg: &SolveConfig,
    hyp: &StabilityHypotheses,
) -> Result<StabilityReport> {
    check_data_hypotheses(&op.grid, f, hyp)?;
    let t = cfg.t_max.abs();

    let run_one = |pert: &PotentialField| -> Result<(f64, f64)> {
        let (pair, _l) = perturbed_r_system(op, base, mode, pert, f, cfg)?;
        let delta = measurement_series(&pair.r, sel, t).delta;
        Ok((off_collar_norm(&op.grid, &pert.values), delta))
    };

    let results: Vec<Result<(f64, f64)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = family
            .iter()
            .map(|pert| scope.spawn(move || run_one(pert)))
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });

    let mut entries = Vec::with_capacity(family.len());
    let mut fitted_c: f64 = 0.0;
    for (pert, result) in family.iter().zip(results) {
        let (pert_norm, delta) = result?;
        let degenerate = pert_norm < 1e-14 || delta < 1e-14;
        let ratio = if degenerate {
            None
        } else {
            Some(pert_norm / delta)
        };
        if let Some(r) = ratio {
            fitted_c = fitted_c.max(r);
        }
        entries.push(StabilityEntry {
            member_id: pert.label.clone(),
            pert_norm,
            delta,
            ratio,
            pass: degenerate || ratio.unwrap().is_finite(),
        });
    }

    // Homogeneity and the fast/full cross-check on the first nondegenerate
    // member.
    let mut homogeneity_pass = true;
    let mut fast_full_pass = true;
    if let Some((idx, _)) = entries
        .iter()
        .enumerate()
        .find(|(_, e)| e.ratio.is_some())
    {
        let pert = &family[idx];
        let doubled = PotentialField {
            values: pert.values.iter().map(|v| 2.0 * v).collect(),
            label: format!("{}-x2", pert.label),
        };
        let (_, d1) = (entries[idx].pert_norm, entries[idx].delta);
        let (_, d2) = run_one(&doubled)?;
        homogeneity_pass = (d2 / d1 - 2.0).abs() <= 0.02 * 2.0;

        let d_full = full_path_delta(op, base, mode, pert, f, sel, cfg)?;
        fast_full_pass = (d_full - d1).abs() <= hyp.cross_check_tol * d1.max(1e-14);
    }

    Ok(StabilityReport {
        mode,
        entries,
        fitted_c,
        homogeneity_pass,
        fast_full_pass,
    })
}

/// Fitted observability constants of the Prop 4.4-shaped bound
/// `E <= C (1/gamma + e^{-mu gamma} + e^{mu gamma} B)`.
#[derive(Debug, Clone)]
pub struct ObservabilityFit {
    pub gammas: Vec<f64>,
    pub c: f64,
    pub mu: f64,
    pub collar_energy: f64,
    pub boundary_term: f64,
    pub pass: bool,
}

/// Fit `(C, mu)` on a gamma ladder: for each trial `mu`, `C(mu)` is the max
/// over the ladder of `E / g(gamma, mu)`; keep the `mu` minimizing it.
pub fn fit_observability(
    collar_energy: f64,
    boundary_term: f64,
    gammas: &[f64],
) -> ObservabilityFit {
    assert!(!gammas.is_empty());
    let mut best = (f64::INFINITY, 0.0);
    let mut mu = 1e-3;
    while mu <= 10.0 {
        let c = gammas
            .iter()
            .map(|&g| {
                let bound = 1.0 / g + (-mu * g).exp() + (mu * g).exp() * boundary_term;
                collar_energy / bound
            })
            .fold(0.0f64, f64::max);
        if c < best.0 {
            best = (c, mu);
        }
        mu *= 1.25;
    }
    ObservabilityFit {
        gammas: gammas.to_vec(),
        c: best.0,
        mu: best.1,
        collar_energy,
        boundary_term,
        pass: best.0.is_finite(),
    }
}

/// Partial-data experiment (Thm 1.5 shape): the log-law quotient per member
/// on a strict subset of the gamma0 set, plus the observability fit of the
/// first member over a gamma ladder.
pub fn partial_data_experiment(
    op: &SpectralOperator,
    base: &CoefficientBase,
    mode: StabilityMode,
    family: &[PotentialField],
    f: &ComplexField,
    gamma_sel: &BoundarySelection,
    cfg: &SolveConfig,
    hyp: &StabilityHypotheses,
    gamma_ladder: &[f64],
) -> Result<(StabilityReport, ObservabilityFit)> {
    check_data_hypotheses(&op.grid, f, hyp)?;
    let t = cfg.t_max.abs();
    let g = &op.grid;
    let w_cell = g.cell_weight();

    let mut entries = Vec::with_capacity(family.len());
    let mut fitted_c: f64 = 0.0;
    let mut fit = None;
    for pert in family {
        let (pair, _l) = perturbed_r_system(op, base, mode, pert, f, cfg)?;
        let delta = measurement_series(&pair.r, gamma_sel, t).delta;
        let pert_norm = off_collar_norm(g, &pert.values);
        if delta < 1e-14 && pert_norm > 1e-14 {
            // Perturbation invisible on Gamma at grid precision: informative
            // failure, not a crash.
            entries.push(StabilityEntry {
                member_id: pert.label.clone(),
                pert_norm,
                delta,
                ratio: None,
                pass: false,
            });
            continue;
        }
        let ratio = if pert_norm < 1e-14 {
            None
        } else {
            // Log-law quotient: pert / [|ln delta|^{-1} + delta]^{1/2}.
            let bracket = 1.0 / delta.ln().abs().max(1e-300) + delta;
            Some(pert_norm / bracket.sqrt())
        };
        if let Some(r) = ratio {
            fitted_c = fitted_c.max(r);
        }
        if fit.is_none() && pert_norm > 1e-14 {
            // Observability scaling of Prop 4.4: collar energy of r over
            // (0, T) against the Gamma boundary term.
            let mut energy = 0.0;
            for (j, &tj) in pair.r.times.iter().enumerate() {
                if tj < -1e-12 {
                    continue;
                }
                for i in g.collar_nodes() {
                    energy += pair.r.fields[j].values[i].norm_sqr() * w_cell * pair.r.dt;
                }
            }
            let boundary = delta * delta;
            fit = Some(fit_observability(energy, boundary, gamma_ladder));
        }
        entries.push(StabilityEntry {
            member_id: pert.label.clone(),
            pert_norm,
            delta,
            ratio,
            pass: true,
        });
    }
    let report = StabilityReport {
        mode,
        entries,
        fitted_c,
        homogeneity_pass: true,
        fast_full_pass: true,
    };
    let fit = fit.unwrap_or_else(|| fit_observability(0.0, 0.0, gamma_ladder));
    Ok((report, fit))
}

/// Residuals of the q-recovery chain: (a) solved `r(.,0)` against the
/// closed-form initial data via the slow variation path, (b) the weighted
/// energy identity, (c) the off-collar coefficient norm against the fitted
/// multiple of the boundary term.
#[derive(Debug, Clone)]
pub struct InitialIdentityReport {
    /// Relative gap between the slow-path `d_t` difference at `t = 0` and the
    /// closed-form initial data.
    pub initial_residual: f64,
    pub energy: EnergyIdentity,
    /// `||q1 - q2||^2_{L2(Omega \ omega)} / boundary term` (the empirical
    /// constant of the recovery inequality); None when degenerate.
    pub recovery_constant: Option<f64>,
}

pub fn initial_identity_pipeline(
    op: &SpectralOperator,
    spec: &NonlinearitySpec,
    q1: &PotentialField,
    q2: &PotentialField,
    f: &ComplexField,
    cfg: &SolveConfig,
    weights: &CarlemanWeightSet,
    s: f64,
    gamma0: &BoundarySelection,
) -> Result<InitialIdentityReport> {
    let pair = time_derivative_solution(
        op,
        TimeDerivativeMode::Q { spec, q1, q2 },
        f,
        cfg,
    )?;
    let t = cfg.t_max.abs();

    // (a) Slow path: d_t((k)u_1 - (k)u_2) at t = 0 from the variation solves.
    let v1 = kth_variation(op, spec, q1, f, cfg)?;
    let v2 = kth_variation(op, spec, q2, f, cfg)?;
    let diff = v1.trajectory.sub(&v2.trajectory);
    let j0 = diff.index_of(0.0);
    let slow_dt = diff.fields[j0 + 1]
        .sub(&diff.fields[j0 - 1])
        .scaled(Complex64::new(1.0 / (2.0 * diff.dt), 0.0));
    let scale = pair.initial.l2_norm();
    let initial_residual = if scale > 1e-14 {
        slow_dt.sub(&pair.initial).l2_norm() / scale
    } else {
        slow_dt.l2_norm()
    };

    // (b) Weighted energy identity on [-T, 0].
    let half = {
        let last = pair.r.index_of(0.0);
        Trajectory::new(
            pair.r.times[..=last].to_vec(),
            pair.r.fields[..=last].to_vec(),
        )
    };
    let energy = energy_identity(op, weights, s, &half)?;

    // (c) Recovery inequality constant.
    let dq: Vec<f64> = q1
        .values
        .iter()
        .zip(&q2.values)
        .map(|(a, b)| a - b)
        .collect();
    let lhs = off_collar_norm(&op.grid, &dq).powi(2);
    let boundary = measurement_series(&pair.r, gamma0, t).delta.powi(2);
    let recovery_constant = if lhs < 1e-28 || boundary < 1e-28 {
        None
    } else {
        Some(lhs / boundary)
    };

    Ok(InitialIdentityReport {
        initial_residual,
        energy,
        recovery_constant,
    })
}

/// Deterministic family of interior sine bumps off the collar: member `j`
/// has frequency `j + 1` under a squared-parabola envelope supported
/// strictly inside the off-collar region.
pub fn sine_bump_family(grid: &Grid, count: usize, amplitude: f64) -> Vec<PotentialField> {
    let margin = |ax: usize| grid.collar_width + 2.0 * grid.spacing[ax];
    let profile = |x: f64, ax: usize, freq: usize| -> f64 {
        let lo = margin(ax);
        let hi = grid.extent[ax] - margin(ax);
        if x <= lo || x >= hi {
            return 0.0;
        }
        let sgm = (x - lo) / (hi - lo);
        let env = (4.0 * sgm * (1.0 - sgm)).powi(2);
        env * (freq as f64 * std::f64::consts::PI * sgm).sin()
    };
    (0..count)
        .map(|j| {
            let values = (0..grid.len())
                .map(|i| {
                    let p = grid.node(i);
                    let mut v = amplitude * profile(p[0], 0, j + 1);
                    if grid.dim == 2 {
                        v *= profile(p[1], 1, 1).abs();
                    }
                    v
                })
                .collect();
            PotentialField {
                values,
                label: format!("bump{}", j + 1),
            }
        })
        .collect()
}
