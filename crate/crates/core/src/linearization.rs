//! First- and k-th order epsilon-linearizations of the nonlinear flow,
//! computed both from the linearized IBVPs and from the finite difference
//! quotient, plus the time-derivative `r`-system whose initial data carries
//! the coefficient difference.

use num_complex::Complex64;

use crate::error::{LabError, Result};
use crate::field::{time_samples, ComplexField, Trajectory};
use crate::forward::{solve_linear, solve_nonlinear, SolveConfig};
use crate::grid::PotentialField;
use crate::nonlinearity::{binomial, NonlinearitySpec};
use crate::spectral::{sobolev_norm, h4_norm, SpectralOperator};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariationMethod {
    Pde,
    Quotient,
}

/// An order-`l` variation of the flow around zero data, sampled on `[-T, T]`.
#[derive(Debug, Clone)]
pub struct VariationSolution {
    pub order: usize,
    pub trajectory: Trajectory,
    pub method: VariationMethod,
}

/// Glue an ascending trajectory on `[-T, 0]` to one on `[0, T]`, dropping the
/// duplicated `t = 0` sample.
fn merge_halves(neg: Trajectory, pos: Trajectory) -> Trajectory {
    assert!((neg.times[neg.len() - 1] - pos.times[0]).abs() < 1e-9);
    let mut times = neg.times;
    let mut fields = neg.fields;
    times.extend_from_slice(&pos.times[1..]);
    fields.extend_from_slice(&pos.fields[1..]);
    Trajectory::new(times, fields)
}

/// `(1)u(t) = e^{tA} f` on `[-T, T]`: the first variation solves the
/// homogeneous linear system with data `f` in both time directions.
pub fn first_variation(
    op: &SpectralOperator,
    f: &ComplexField,
    cfg: &SolveConfig,
) -> Result<VariationSolution> {
    let steps = cfg.steps()?;
    let t = cfg.t_max.abs();
    let times = time_samples(-t, t, t / steps as f64);
    let fields = times
        .iter()
        .map(|&tj| op.propagate(f, tj))
        .collect::<Result<Vec<_>>>()?;
    Ok(VariationSolution {
        order: 1,
        trajectory: Trajectory::new(times, fields),
        method: VariationMethod::Pde,
    })
}

/// Solve a linear system with the given source on `[-T, T]` by one forward
/// and one backward Duhamel sweep from `t = 0`.
fn solve_linear_two_sided(
    op: &SpectralOperator,
    f: &ComplexField,
    source: &Trajectory,
    cfg: &SolveConfig,
) -> Result<Trajectory> {
    let t = cfg.t_max.abs();
    let fwd = solve_linear(op, f, Some(source), &SolveConfig { t_max: t, ..cfg.clone() })?;
    let bwd = solve_linear(op, f, Some(source), &SolveConfig { t_max: -t, ..cfg.clone() })?;
    Ok(merge_halves(bwd, fwd))
}

/// The k-th variation: zero data, source
/// `-q sum_m binom(k,m) c[m][k-m] ((1)u)^m (conj (1)u)^{k-m}`.
pub fn kth_variation(
    op: &SpectralOperator,
    spec: &NonlinearitySpec,
    q: &PotentialField,
    f: &ComplexField,
    cfg: &SolveConfig,
) -> Result<VariationSolution> {
    spec.validate()?;
    let first = first_variation(op, f, cfg)?;
    let source = Trajectory::new(
        first.trajectory.times.clone(),
        first
            .trajectory
            .fields
            .iter()
            .map(|u1| {
                spec.leading_term(u1)
                    .mul_real(&q.values)
                    .scaled(Complex64::new(-1.0, 0.0))
            })
            .collect(),
    );
    let zero = ComplexField::zeros(f.grid.clone());
    let trajectory = solve_linear_two_sided(op, &zero, &source, cfg)?;
    Ok(VariationSolution {
        order: spec.k,
        trajectory,
        method: VariationMethod::Pde,
    })
}

/// The l-th difference quotient
/// `(1/eps^l) sum_n binom(l,n) (-1)^n u_{(l-n) eps}` where `u_c` is the
/// nonlinear solve with data `c f`. The inner solves are independent and run
/// on their own threads; the reduction is in fixed `n` order.
pub fn difference_quotient_variation(
    op: &SpectralOperator,
    spec: &NonlinearitySpec,
    q: &PotentialField,
    f: &ComplexField,
    order: usize,
    eps: f64,
    cfg: &SolveConfig,
    k_star: f64,
    c1: f64,
) -> Result<VariationSolution> {
    spec.validate()?;
    let t = cfg.t_max.abs();
    let f_h2 = sobolev_norm(f, 2);

    let solve_one = |n: usize| -> Result<Trajectory> {
        let scale = (order - n) as f64 * eps;
        let data = f.scaled(Complex64::new(scale, 0.0));
        // Absolute tolerance scaled to the data so the quotient does not
        // amplify solver noise past the scheme error.
        let tolerance = (cfg.tolerance * (scale * f_h2).max(1e-30)).max(1e-300);
        let run = |t_max: f64| {
            let local = SolveConfig {
                t_max,
                tolerance,
                ..cfg.clone()
            };
            solve_nonlinear(op, spec, q, &data, &local, k_star, c1).map(|(u, _)| u)
        };
        Ok(merge_halves(run(-t)?, run(t)?))
    };

    let results: Vec<Result<Trajectory>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..=order)
            .map(|n| scope.spawn(move || solve_one(n)))
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });

    let mut total: Option<Trajectory> = None;
    for (n, result) in results.into_iter().enumerate() {
        let term = result.map_err(|e| LabError::QuotientSolveFailed {
            epsilon: (order - n) as f64 * eps,
            source: Box::new(e),
        })?;
        let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
        let coeff = Complex64::new(sign * binomial(order, n) as f64, 0.0);
        let scaled = term.scaled(coeff);
        total = Some(match total {
            None => scaled,
            Some(acc) => Trajectory::new(
                acc.times.clone(),
                acc.fields
                    .iter()
                    .zip(&scaled.fields)
                    .map(|(a, b)| a.add(b))
                    .collect(),
            ),
        });
    }
    let quotient = total
        .unwrap()
        .scaled(Complex64::new(1.0 / eps.powi(order as i32), 0.0));
    Ok(VariationSolution {
        order,
        trajectory: quotient,
        method: VariationMethod::Quotient,
    })
}

/// Errors of the quotient against the PDE-route variation over a geometric
/// epsilon ladder, with the least-squares order in log-log coordinates.
#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub order: usize,
    pub epsilons: Vec<f64>,
    pub errors: Vec<f64>,
    pub fitted_order: f64,
    /// False when the ladder is not monotone (discretization floor reached).
    pub monotone: bool,
}

impl ConvergenceReport {
    /// Text table `epsilon,error,fitted_order`.
    pub fn table(&self) -> String {
        let mut out = String::from("epsilon,error,fitted_order\n");
        for (e, err) in self.epsilons.iter().zip(&self.errors) {
            out.push_str(&format!("{e:.12e},{err:.12e},{:.6}\n", self.fitted_order));
        }
        out
    }
}

/// Run the quotient over the ladder and compare to the PDE-route reference:
/// `first_variation` for `l = 1`, `kth_variation` for `l = k`, zero in between.
pub fn convergence_study(
    op: &SpectralOperator,
    spec: &NonlinearitySpec,
    q: &PotentialField,
    f: &ComplexField,
    order: usize,
    epsilons: &[f64],
    cfg: &SolveConfig,
    k_star: f64,
    c1: f64,
) -> Result<ConvergenceReport> {
    assert!(epsilons.len() >= 4, "ladder needs at least 4 rungs");
    for w in epsilons.windows(2) {
        assert!(w[1] < w[0], "ladder must decrease");
    }
    let reference = if order == 1 {
        Some(first_variation(op, f, cfg)?.trajectory)
    } else if order == spec.k {
        Some(kth_variation(op, spec, q, f, cfg)?.trajectory)
    } else {
        None
    };

    let mut errors = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let quotient =
            difference_quotient_variation(op, spec, q, f, order, eps, cfg, k_star, c1)?;
        let err = match &reference {
            Some(r) => quotient.trajectory.sub(r).sup_l2(),
            None => quotient.trajectory.sup_l2(),
        };
        errors.push(err);
    }

    let monotone = errors.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9));
    // Least squares slope of ln(err) against ln(eps).
    let pts: Vec<(f64, f64)> = epsilons
        .iter()
        .zip(&errors)
        .filter(|(_, &e)| e > 0.0)
        .map(|(&x, &e)| (x.ln(), e.ln()))
        .collect();
    let fitted_order = fit_slope(&pts);
    Ok(ConvergenceReport {
        order,
        epsilons: epsilons.to_vec(),
        errors,
        fitted_order,
        monotone,
    })
}

pub fn fit_slope(pts: &[(f64, f64)]) -> f64 {
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

// ---------------------------------------------------------------------------
// The r-system of the time derivative (Lemma 4.1 and its first-order analog).
// ---------------------------------------------------------------------------

/// Which coefficient the r-system carries information about.
pub enum TimeDerivativeMode<'a> {
    /// `r = d_t((k)u_1 - (k)u_2)` with shared `p` and differing `q`.
    Q {
        spec: &'a NonlinearitySpec,
        q1: &'a PotentialField,
        q2: &'a PotentialField,
    },
    /// `r_1 = d_t((1)u_1 - (1)u_2)` with differing `p`; `op2` solves with `p2`.
    P { op2: &'a SpectralOperator },
}

/// `r`, its source `v`, and `d_t r`, all sampled on `[-T, T]`.
#[derive(Debug, Clone)]
pub struct TimeDerivativePair {
    pub r: Trajectory,
    pub v: Trajectory,
    pub r_dt: Trajectory,
    pub initial: ComplexField,
    /// Discrepancy between the reflected negative-time branch and an
    /// independent backward Duhamel solve, relative to `sup |r|`.
    pub reflection_residual: f64,
}

fn require_real(f: &ComplexField, what: &str) -> Result<()> {
    let worst = f.values.iter().map(|v| v.im.abs()).fold(0.0, f64::max);
    if worst > 1e-12 {
        return Err(LabError::HypothesisViolated(format!(
            "{what} must be real-valued (max |Im| = {worst:.3e})"
        )));
    }
    Ok(())
}

fn require_collar_zero(op: &SpectralOperator, diff: &[f64], what: &str) -> Result<()> {
    let bad: Vec<usize> = op
        .grid
        .collar_nodes()
        .into_iter()
        .filter(|&i| diff[i].abs() > 1e-12)
        .collect();
    if !bad.is_empty() {
        return Err(LabError::CollarMismatch {
            what: what.to_string(),
            nodes: bad.into_iter().take(8).collect(),
        });
    }
    Ok(())
}

/// Solve the r-system: forward Duhamel on `[0, T]`, negative branch by the
/// reflection `r(x, -t) = -conj r(x, t)`, residual-checked against an
/// independent backward solve. `d_t r` is recovered spectrally from the PDE
/// itself: `d_t r = A r - i v`.
pub fn time_derivative_solution(
    op: &SpectralOperator,
    mode: TimeDerivativeMode,
    f: &ComplexField,
    cfg: &SolveConfig,
) -> Result<TimeDerivativePair> {
    require_real(f, "initial data f")?;
    let t = cfg.t_max.abs();
    let steps = cfg.steps()?;
    let times = time_samples(-t, t, t / steps as f64);

    // The coefficient difference, its scalar structure, and the driving field.
    let (diff, initial, v_fields): (Vec<f64>, ComplexField, Vec<ComplexField>) = match mode {
        TimeDerivativeMode::Q { spec, q1, q2 } => {
            spec.validate()?;
            let dq: Vec<f64> = q1
                .values
                .iter()
                .zip(&q2.values)
                .map(|(a, b)| a - b)
                .collect();
            require_collar_zero(op, &dq, "q1 - q2 must vanish on the collar")?;
            // r(0) = i sum_m binom(k,m) c[m][k-m] (q1 - q2) f^k (real f).
            let bsum = spec.binomial_sum();
            let initial = ComplexField {
                grid: f.grid.clone(),
                values: f
                    .values
                    .iter()
                    .zip(&dq)
                    .map(|(&z, &d)| Complex64::new(0.0, bsum * d) * z.powu(spec.k as u32))
                    .collect(),
            };
            // v per Lemma 4.1 with (1)u = e^{tA} f and d_t (1)u = A (1)u.
            let k = spec.k;
            let mut fields = Vec::with_capacity(times.len());
            for &tj in &times {
                let u1 = op.propagate(f, tj)?;
                let u1_dt = op.apply_generator(&u1);
                let values: Vec<Complex64> = (0..f.len())
                    .map(|i| {
                        let z = u1.values[i];
                        let zb = z.conj();
                        let dz = u1_dt.values[i];
                        let dzb = dz.conj();
                        let mut total = Complex64::ZERO;
                        for m in 0..=k {
                            let c = spec
                                .coeffs
                                .get(m)
                                .and_then(|row| row.get(k - m))
                                .copied()
                                .unwrap_or(0.0);
                            if c == 0.0 {
                                continue;
                            }
                            let w = binomial(k, m) as f64 * c * dq[i];
                            let mut term = Complex64::ZERO;
                            if m > 0 {
                                term += m as f64
                                    * dz
                                    * z.powu((m - 1) as u32)
                                    * zb.powu((k - m) as u32);
                            }
                            if k - m > 0 {
                                term += (k - m) as f64
                                    * dzb
                                    * z.powu(m as u32)
                                    * zb.powu((k - m - 1) as u32);
                            }
                            total -= w * term;
                        }
                        total
                    })
                    .collect();
                fields.push(ComplexField {
                    grid: f.grid.clone(),
                    values,
                });
            }
            (dq, initial, fields)
        }
        TimeDerivativeMode::P { op2 } => {
            let dp: Vec<f64> = op2
                .potential
                .values
                .iter()
                .zip(&op.potential.values)
                .map(|(p2, p1)| p2 - p1)
                .collect();
            require_collar_zero(op, &dp, "p1 - p2 must vanish on the collar")?;
            // r1(0) = -i (p2 - p1) f.
            let initial = ComplexField {
                grid: f.grid.clone(),
                values: f
                    .values
                    .iter()
                    .zip(&dp)
                    .map(|(&z, &d)| Complex64::new(0.0, -d) * z)
                    .collect(),
            };
            // v = (p2 - p1) d_t (1)u_2 with (1)u_2 = e^{t A_2} f.
            let mut fields = Vec::with_capacity(times.len());
            for &tj in &times {
                let u2 = op2.propagate(f, tj)?;
                let u2_dt = op2.apply_generator(&u2);
                fields.push(u2_dt.mul_real(&dp));
            }
            (dp, initial, fields)
        }
    };
    let _ = diff;

    let v = Trajectory::new(times.clone(), v_fields);
    let dt = t / steps as f64;

    // Forward branch by Duhamel.
    let fwd_cfg = SolveConfig {
        t_max: t,
        dt,
        ..cfg.clone()
    };
    let fwd = solve_linear(op, &initial, Some(&v), &fwd_cfg)?;

    // Negative branch by the reflection r(x,-t) = -conj r(x,t).
    let mut neg_times = Vec::with_capacity(steps + 1);
    let mut neg_fields = Vec::with_capacity(steps + 1);
    for j in (0..=steps).rev() {
        let tj = fwd.times[j];
        neg_times.push(-tj);
        neg_fields.push(fwd.fields[j].conj().scaled(Complex64::new(-1.0, 0.0)));
    }
    let reflected = Trajectory::new(neg_times, neg_fields);

    // Residual check: an independent backward solve must reproduce it.
    let bwd_cfg = SolveConfig {
        t_max: -t,
        dt,
        ..cfg.clone()
    };
    let bwd = solve_linear(op, &initial, Some(&v), &bwd_cfg)?;
    let scale = fwd.sup_l2().max(1e-300);
    let reflection_residual = reflected.sub(&bwd).sup_l2() / scale;

    let r = merge_halves(reflected, fwd);
    let r_dt = Trajectory::new(
        r.times.clone(),
        r.fields
            .iter()
            .zip(&v.fields)
            .map(|(rf, vf)| {
                op.apply_generator(rf)
                    .add(&vf.scaled(Complex64::new(0.0, -1.0)))
            })
            .collect(),
    );
    Ok(TimeDerivativePair {
        r,
        v,
        r_dt,
        initial,
        reflection_residual,
    })
}

/// Fitted constants of the Lemma 4.2 estimates: for each quantity and each
/// `j`, the sup over time samples of `|.|_{H^{2j}} / (|dq|_* |f|_{H4}^k)`.
#[derive(Debug, Clone)]
pub struct EstimateSuite {
    pub c_v: [f64; 2],
    pub c_r: [f64; 2],
    pub c_r_dt: [f64; 2],
    pub uniform: bool,
}

pub fn estimate_suite(
    pair: &TimeDerivativePair,
    diff: &PotentialField,
    f: &ComplexField,
    k: usize,
) -> EstimateSuite {
    let diff_field = ComplexField {
        grid: f.grid.clone(),
        values: diff.values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
    };
    let dq_l2 = diff_field.l2_norm().max(1e-300);
    let dq_h2 = sobolev_norm(&diff_field, 2).max(1e-300);
    let dq_h4 = h4_norm(&diff_field).max(1e-300);
    let fk = h4_norm(f).powi(k as i32).max(1e-300);

    let sup_over = |traj: &Trajectory, j: usize| -> f64 {
        traj.fields
            .iter()
            .map(|g| if j == 0 { g.l2_norm() } else { sobolev_norm(g, 2) })
            .fold(0.0, f64::max)
    };
    let c_v = [sup_over(&pair.v, 0) / (dq_l2 * fk), sup_over(&pair.v, 1) / (dq_h2 * fk)];
    let c_r = [sup_over(&pair.r, 0) / (dq_l2 * fk), sup_over(&pair.r, 1) / (dq_h2 * fk)];
    let c_r_dt = [
        sup_over(&pair.r_dt, 0) / (dq_h2 * fk),
        sup_over(&pair.r_dt, 1) / (dq_h4 * fk),
    ];
    let uniform = c_v
        .iter()
        .chain(&c_r)
        .chain(&c_r_dt)
        .all(|c| c.is_finite());
    EstimateSuite {
        c_v,
        c_r,
        c_r_dt,
        uniform,
    }
}
