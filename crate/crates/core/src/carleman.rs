//! Carleman weight functions for the Schrodinger operator, LHS/RHS ratio
//! sweeps of the two Carleman estimates, the weighted energy identity, and
//! the parabolic weight construction on the boundary collar.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{LabError, Result};
use crate::field::{ComplexField, Trajectory};
use crate::grid::Grid;
use crate::spectral::{gradient, neumann_trace, SpectralOperator};

/// Largest admissible cell-to-cell factor of the weight before a sweep is
/// refused as under-resolved.
const WEIGHT_FACTOR_LIMIT: f64 = 1e6;

/// The weight family of the Schrodinger Carleman estimates:
/// `psi = |x - x0|^2`, `theta = e^{lambda psi}/(T1^2 - t^2)`,
/// `phi = (e^{2 lambda |psi|_inf} - e^{lambda psi})/(T1^2 - t^2)`.
#[derive(Debug, Clone)]
pub struct CarlemanWeightSet {
    pub grid: Arc<Grid>,
    pub x0: [f64; 2],
    pub lambda: f64,
    pub t1: f64,
    /// `psi` cached on the interior nodes.
    pub psi: Vec<f64>,
    /// Sup of `psi` over the closed domain (attained at a corner).
    pub psi_sup: f64,
    /// Min of `psi` over the closed domain (attained at the projection of x0).
    pub psi_min: f64,
    /// Smallest lambda with `e^{lambda psi} >= 2` everywhere on the closure.
    pub lambda0: f64,
}

impl CarlemanWeightSet {
    pub fn new(grid: Arc<Grid>, x0: [f64; 2], lambda: f64, t1: f64) -> Result<Self> {
        let dim = grid.dim;
        // x0 must lie strictly outside the closed domain.
        let outside = (0..dim).any(|ax| x0[ax] < -1e-12 || x0[ax] > grid.extent[ax] + 1e-12);
        if !outside {
            return Err(LabError::InteriorWeightPoint(x0[..dim].to_vec()));
        }
        if !(t1 > 0.0) || !(lambda > 0.0) {
            return Err(LabError::HypothesisViolated(format!(
                "need positive lambda and T1, got lambda = {lambda}, T1 = {t1}"
            )));
        }
        let psi_at = |p: [f64; 2]| -> f64 {
            (0..dim).map(|ax| (p[ax] - x0[ax]).powi(2)).sum()
        };
        let psi: Vec<f64> = (0..grid.len()).map(|i| psi_at(grid.node(i))).collect();
        // psi is convex: sup over the closed box sits at a corner, min at the
        // clamp of x0 onto the box.
        let mut psi_sup: f64 = 0.0;
        let corners: Vec<[f64; 2]> = if dim == 1 {
            vec![[0.0, 0.0], [grid.extent[0], 0.0]]
        } else {
            vec![
                [0.0, 0.0],
                [grid.extent[0], 0.0],
                [0.0, grid.extent[1]],
                [grid.extent[0], grid.extent[1]],
            ]
        };
        for c in corners {
            psi_sup = psi_sup.max(psi_at(c));
        }
        let mut clamp = [0.0; 2];
        for ax in 0..dim {
            clamp[ax] = x0[ax].clamp(0.0, grid.extent[ax]);
        }
        let psi_min = psi_at(clamp);
        let lambda0 = (2.0f64).ln() / psi_min;
        if lambda < lambda0 {
            return Err(LabError::HypothesisViolated(format!(
                "lambda = {lambda} below Lambda0 = {lambda0:.6} (e^(lambda psi) >= 2 fails)"
            )));
        }
        Ok(CarlemanWeightSet {
            grid,
            x0,
            lambda,
            t1,
            psi,
            psi_sup,
            psi_min,
            lambda0,
        })
    }

    fn time_factor(&self, t: f64) -> Result<f64> {
        let denom = self.t1 * self.t1 - t * t;
        if denom <= 0.0 {
            return Err(LabError::SingularTime { t, t1: self.t1 });
        }
        Ok(1.0 / denom)
    }

    /// `(psi, theta, phi)` at an arbitrary point; errors when `|t| >= T1`.
    pub fn evaluate(&self, x: [f64; 2], t: f64) -> Result<(f64, f64, f64)> {
        let tf = self.time_factor(t)?;
        let psi: f64 = (0..self.grid.dim)
            .map(|ax| (x[ax] - self.x0[ax]).powi(2))
            .sum();
        let e = (self.lambda * psi).exp();
        let theta = e * tf;
        let phi = ((2.0 * self.lambda * self.psi_sup).exp() - e) * tf;
        Ok((psi, theta, phi))
    }

    /// `phi` at interior node `i`.
    pub fn phi_node(&self, i: usize, t: f64) -> Result<f64> {
        let tf = self.time_factor(t)?;
        Ok(((2.0 * self.lambda * self.psi_sup).exp() - (self.lambda * self.psi[i]).exp()) * tf)
    }

    /// Log-weight exponent `-2 s phi` at node `i`; `-inf` at `|t| >= T1`
    /// (the weight extends by zero to the singular times).
    pub fn log_weight(&self, i: usize, s: f64, t: f64) -> f64 {
        match self.phi_node(i, t) {
            Ok(phi) => -2.0 * s * phi,
            Err(_) => f64::NEG_INFINITY,
        }
    }

    /// `|grad phi|^2` at node `i`: `grad phi = -lambda e^{lambda psi} grad psi
    /// / (T1^2 - t^2)` with `grad psi = 2 (x - x0)`.
    pub fn grad_phi_sq_node(&self, i: usize, t: f64) -> Result<f64> {
        let tf = self.time_factor(t)?;
        let x = self.grid.node(i);
        let coef = -self.lambda * (self.lambda * self.psi[i]).exp() * tf;
        let mut g2 = 0.0;
        for ax in 0..self.grid.dim {
            let g = coef * 2.0 * (x[ax] - self.x0[ax]);
            g2 += g * g;
        }
        Ok(g2)
    }

    /// `phi` and `theta` at a boundary node.
    fn boundary_phi_theta(&self, position: [f64; 2], t: f64) -> Result<(f64, f64)> {
        let (_, theta, phi) = self.evaluate(position, t)?;
        Ok((phi, theta))
    }

    /// `grad psi . nu` at a boundary node.
    pub fn grad_psi_dot_nu(&self, position: [f64; 2], normal: [f64; 2]) -> f64 {
        (0..self.grid.dim)
            .map(|ax| 2.0 * (position[ax] - self.x0[ax]) * normal[ax])
            .sum()
    }
}

/// One manufactured trajectory of a ratio sweep, with its exact time
/// derivative so `Lu` carries no differencing noise.
#[derive(Debug, Clone)]
pub struct SweepCase {
    pub id: String,
    pub times: Vec<f64>,
    pub u: Vec<ComplexField>,
    pub u_t: Vec<ComplexField>,
}

/// Exact homogeneous solution `sum_m a_m e^{-i mu_m t} e_m` of the discrete
/// operator, sampled on `times`; `L u = 0` to machine precision.
pub fn mode_case(
    op: &SpectralOperator,
    id: &str,
    amplitudes: &[(usize, Complex64)],
    times: &[f64],
) -> SweepCase {
    let n = op.grid.len();
    let mut u = Vec::with_capacity(times.len());
    let mut u_t = Vec::with_capacity(times.len());
    for &t in times {
        let mut vals = vec![Complex64::ZERO; n];
        let mut dvals = vec![Complex64::ZERO; n];
        for &(m, a) in amplitudes {
            let mu = op.eigenvalues[m];
            let phase = a * Complex64::new(0.0, -mu * t).exp();
            for i in 0..n {
                let e = op.eigenvectors[(i, m)];
                vals[i] += phase * e;
                dvals[i] += Complex64::new(0.0, -mu) * phase * e;
            }
        }
        u.push(ComplexField {
            grid: op.grid.clone(),
            values: vals,
        });
        u_t.push(ComplexField {
            grid: op.grid.clone(),
            values: dvals,
        });
    }
    SweepCase {
        id: id.to_string(),
        times: times.to_vec(),
        u,
        u_t,
    }
}

/// Separated profile `g(x) w(t)` with analytic `w`; `L u` is generally nonzero.
pub fn forced_case(
    id: &str,
    g: &ComplexField,
    times: &[f64],
    w: impl Fn(f64) -> Complex64,
    w_t: impl Fn(f64) -> Complex64,
) -> SweepCase {
    SweepCase {
        id: id.to_string(),
        times: times.to_vec(),
        u: times.iter().map(|&t| g.scaled(w(t))).collect(),
        u_t: times.iter().map(|&t| g.scaled(w_t(t))).collect(),
    }
}

/// Which Carleman estimate a sweep probes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVariant {
    /// Full-domain LHS against `Lu` plus the weighted boundary trace.
    FullBoundary,
    /// Interior LHS (away from the collar) against `Lu` plus the collar band.
    Interior,
}

#[derive(Debug, Clone)]
pub struct RatioRow {
    pub variant: SweepVariant,
    pub s: f64,
    pub lambda: f64,
    pub suite_id: String,
    pub lhs: f64,
    pub rhs: f64,
    /// None marks a degenerate 0/0 case.
    pub ratio: Option<f64>,
}

/// Text table `s,lambda,suite_id,lhs,rhs,ratio` (degenerate rows say so).
pub fn ratio_table(rows: &[RatioRow]) -> String {
    let mut out = String::from("s,lambda,suite_id,lhs,rhs,ratio\n");
    for r in rows {
        let ratio = match r.ratio {
            Some(v) => format!("{v:.12e}"),
            None => "degenerate".to_string(),
        };
        out.push_str(&format!(
            "{:.12e},{:.12e},{},{:.12e},{:.12e},{ratio}\n",
            r.s, r.lambda, r.suite_id, r.lhs, r.rhs
        ));
    }
    out
}

/// Midpoint time samples over `(-T1, T1)`, avoiding the singular endpoints.
pub fn midpoint_times(t1: f64, slices: usize) -> Vec<f64> {
    let dt = 2.0 * t1 / slices as f64;
    (0..slices).map(|j| -t1 + (j as f64 + 0.5) * dt).collect()
}

/// Refuse the sweep when the weight jumps by more than the admissible factor
/// across one spatial cell at non-negligible weight.
fn check_resolution(ws: &CarlemanWeightSet, s: f64, times: &[f64]) -> Result<()> {
    let limit = WEIGHT_FACTOR_LIMIT.ln();
    let g = &ws.grid;
    let n = g.len();
    // Global max exponent for the negligibility cutoff.
    let mut global_max = f64::NEG_INFINITY;
    let mut exps = vec![vec![0.0f64; n]; times.len()];
    for (j, &t) in times.iter().enumerate() {
        for i in 0..n {
            let e = ws.log_weight(i, s, t);
            exps[j][i] = e;
            global_max = global_max.max(e);
        }
    }
    let negligible = global_max - 400.0;
    let mut worst: f64 = 0.0;
    let mut check = |a: f64, b: f64| {
        if a.max(b) > negligible {
            worst = worst.max((a - b).abs());
        }
    };
    for j in 0..times.len() {
        if g.dim == 1 {
            for i in 1..n {
                check(exps[j][i - 1], exps[j][i]);
            }
        } else {
            let [nx, ny] = g.points;
            for iy in 0..ny {
                for ix in 0..nx {
                    let i = g.index2(ix, iy);
                    if ix + 1 < nx {
                        check(exps[j][i], exps[j][i + 1]);
                    }
                    if iy + 1 < ny {
                        check(exps[j][i], exps[j][i + nx]);
                    }
                }
            }
        }
    }
    if worst > limit {
        let needed = ((g.points[0] as f64) * worst / limit).ceil() as usize;
        return Err(LabError::UnderResolvedWeight {
            factor: worst.min(700.0).exp(),
            limit: WEIGHT_FACTOR_LIMIT,
            needed_points: needed,
        });
    }
    Ok(())
}

/// Run the LHS/RHS quadratures of the chosen Carleman estimate over an
/// s-ladder and a manufactured suite. Weighted quadratures are rescaled
/// globally (per `s`) in log space so `e^{-2 s phi}` never underflows.
pub fn carleman_ratio_sweep(
    op: &SpectralOperator,
    ws: &CarlemanWeightSet,
    s_ladder: &[f64],
    suite: &[SweepCase],
    variant: SweepVariant,
    time_slices: usize,
) -> Result<Vec<RatioRow>> {
    let g = &ws.grid;
    let n = g.len();
    let times = midpoint_times(ws.t1, time_slices);
    let dt = 2.0 * ws.t1 / time_slices as f64;
    let w_cell = g.cell_weight();
    let s_lam = ws.lambda;

    // Region masks for the interior variant: Omega_1 away from the collar,
    // the band Omega_2 \ Omega_1 in between.
    let cw = g.collar_width;
    let omega1_mask: Vec<bool> = (0..n)
        .map(|i| g.boundary_distance(i) >= 2.0 * cw / 3.0)
        .collect();
    let band_mask: Vec<bool> = (0..n)
        .map(|i| {
            let d = g.boundary_distance(i);
            (cw / 3.0..2.0 * cw / 3.0).contains(&d)
        })
        .collect();

    let mut rows = Vec::new();
    for &s in s_ladder {
        check_resolution(ws, s, &times)?;
        // Global rescale exponent.
        let mut shift = f64::NEG_INFINITY;
        for &t in &times {
            for i in 0..n {
                shift = shift.max(ws.log_weight(i, s, t));
            }
        }
        let node_weight = |i: usize, t: f64| (ws.log_weight(i, s, t) - shift).exp();

        for case in suite {
            assert_eq!(case.times.len(), times.len(), "case sampled off the sweep grid");
            let mut lhs = 0.0;
            let mut rhs_l = 0.0;
            let mut rhs_b = 0.0;
            for (j, &t) in times.iter().enumerate() {
                let u = &case.u[j];
                let grad = gradient(u);
                // Lu = i u_t + (Lap + p) u.
                let lap = op.apply_minus_lap_minus_p(u);
                let lu: Vec<Complex64> = (0..n)
                    .map(|i| Complex64::new(0.0, 1.0) * case.u_t[j].values[i] - lap.values[i])
                    .collect();
                for i in 0..n {
                    let w = node_weight(i, t);
                    if w == 0.0 {
                        continue;
                    }
                    let g2: f64 = (0..g.dim).map(|ax| grad[i][ax].norm_sqr()).sum();
                    let interior = s.powi(3) * s_lam.powi(4) * u.values[i].norm_sqr()
                        + s * s_lam * g2;
                    match variant {
                        SweepVariant::FullBoundary => {
                            lhs += w * interior * w_cell * dt;
                            rhs_l += w * lu[i].norm_sqr() * w_cell * dt;
                        }
                        SweepVariant::Interior => {
                            if omega1_mask[i] {
                                lhs += w * interior * w_cell * dt;
                            }
                            rhs_l += w * lu[i].norm_sqr() * w_cell * dt;
                            if band_mask[i] {
                                rhs_b += w * interior * w_cell * dt;
                            }
                        }
                    }
                }
                if variant == SweepVariant::FullBoundary {
                    let trace = neumann_trace(u);
                    for (b, tr) in g.boundary.iter().zip(&trace) {
                        let dot = ws.grad_psi_dot_nu(b.position, b.normal);
                        if dot < 0.0 {
                            continue;
                        }
                        let (phi_b, theta_b) = ws.boundary_phi_theta(b.position, t)?;
                        let w = (-2.0 * s * phi_b - shift).exp();
                        rhs_b += s * s_lam * theta_b * w * tr.norm_sqr() * dot * b.weight * dt;
                    }
                }
            }
            let rhs = rhs_l + rhs_b;
            let ratio = if lhs < 1e-280 && rhs < 1e-280 {
                None
            } else {
                Some(lhs / rhs)
            };
            rows.push(RatioRow {
                variant,
                s,
                lambda: s_lam,
                suite_id: case.id.clone(),
                lhs,
                rhs,
                ratio,
            });
        }
    }
    Ok(rows)
}

/// Both sides of the weighted energy identity
/// `Im int_{-T}^0 int [e^{-s phi} R_1(r)] e^{-s phi} conj r = (1/2) int
/// e^{-2 s phi(x,0)} |r(x,0)|^2`, computed by independent quadratures.
#[derive(Debug, Clone)]
pub struct EnergyIdentity {
    pub lhs: f64,
    pub rhs: f64,
    pub rel_err: f64,
}

/// Evaluate the identity on a trajectory covering `[-T, 0]` (extra positive
/// samples are ignored). `d_t` of the conjugated variable is formed by
/// second-order finite differences; the Laplacian and `s^2 |grad phi|^2`
/// terms are included literally even though their imaginary part cancels.
pub fn energy_identity(
    op: &SpectralOperator,
    ws: &CarlemanWeightSet,
    s: f64,
    r: &Trajectory,
) -> Result<EnergyIdentity> {
    let g = &ws.grid;
    let n = g.len();
    let last = r.index_of(0.0);
    let times = &r.times[..=last];
    let dt = r.dt;
    // Rescale by the weight max, which sits at t = 0.
    let shift = (0..n)
        .map(|i| ws.log_weight(i, s, 0.0))
        .fold(f64::NEG_INFINITY, f64::max);

    // y_j = e^{-s(phi - shift)} r_j.
    let y: Vec<ComplexField> = times
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let scale: Vec<f64> = (0..n)
                .map(|i| (0.5 * (ws.log_weight(i, s, t) - shift)).exp())
                .collect();
            r.fields[j].mul_real(&scale)
        })
        .collect();

    let w_cell = g.cell_weight();
    let mut lhs = 0.0;
    for (j, &t) in times.iter().enumerate() {
        // Second-order d_t y.
        let y_t: Vec<Complex64> = (0..n)
            .map(|i| {
                if j == 0 {
                    (-3.0 * y[0].values[i] + 4.0 * y[1].values[i] - y[2].values[i]) / (2.0 * dt)
                } else if j == times.len() - 1 {
                    (3.0 * y[j].values[i] - 4.0 * y[j - 1].values[i] + y[j - 2].values[i])
                        / (2.0 * dt)
                } else {
                    (y[j + 1].values[i] - y[j - 1].values[i]) / (2.0 * dt)
                }
            })
            .collect();
        let lap = op.apply_minus_lap_minus_p(&y[j]);
        let mut slice = 0.0;
        for i in 0..n {
            let pot = if ws.time_factor(t).is_ok() {
                s * s * ws.grad_phi_sq_node(i, t)?
            } else {
                0.0
            };
            // R_1-conjugated operator applied to y: i d_t y + (Lap + p) y
            // + s^2 |grad phi|^2 y, paired against conj y.
            let r1y = Complex64::new(0.0, 1.0) * y_t[i] - lap.values[i] + pot * y[j].values[i];
            slice += (r1y * y[j].values[i].conj()).im;
        }
        let wt = if j == 0 || j == times.len() - 1 { 0.5 } else { 1.0 };
        lhs += slice * w_cell * wt * dt;
    }

    let mut rhs = 0.0;
    let r0 = r.at(0.0);
    for i in 0..n {
        rhs += 0.5 * (ws.log_weight(i, s, 0.0) - shift).exp() * r0.values[i].norm_sqr() * w_cell;
    }
    let rel_err = (lhs - rhs).abs() / rhs.abs().max(1e-300);
    Ok(EnergyIdentity { lhs, rhs, rel_err })
}

// ---------------------------------------------------------------------------
// Parabolic weights on the collar (partial-data route).
// ---------------------------------------------------------------------------

/// Boundary faces forming the observation set Gamma: axis index plus which
/// side (false = coordinate 0, true = coordinate extent).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Face {
    pub axis: usize,
    pub upper: bool,
}

/// Weight data of the parabolic Carleman estimate on the collar omega.
#[derive(Debug, Clone)]
pub struct ParabolicWeightSet {
    pub grid: Arc<Grid>,
    pub gamma: Vec<Face>,
    /// Smoothed distance-to-(boundary of omega minus Gamma); zero off the collar.
    pub psi0: Vec<f64>,
    pub psi0_sup: f64,
    pub a: f64,
    pub b: f64,
    pub lambda: f64,
    /// `psi0 >= 2 kappa` on the band Omega_2 \ Omega_1.
    pub kappa: f64,
    /// Ridge nodes excluded from the gradient positivity check (the crest of
    /// the distance profile, where a 1D collar component forces a critical
    /// point).
    pub ridge: Vec<bool>,
}

fn face_distance(grid: &Grid, p: [f64; 2], face: Face) -> f64 {
    if face.upper {
        grid.extent[face.axis] - p[face.axis]
    } else {
        p[face.axis]
    }
}

impl ParabolicWeightSet {
    /// `theta_0(x, tau) = e^{lambda psi0}/(1 - tau^2)` at collar node `i`.
    pub fn theta0(&self, i: usize, tau: f64) -> Result<f64> {
        let denom = 1.0 - tau * tau;
        if denom <= 0.0 {
            return Err(LabError::SingularTime { t: tau, t1: 1.0 });
        }
        Ok((self.lambda * self.psi0[i]).exp() / denom)
    }

    /// `phi_0(x, tau) = (e^{lambda(|psi0|_inf + b)} - e^{lambda(psi0 + a)})
    /// / (1 - tau^2)`.
    pub fn phi0(&self, i: usize, tau: f64) -> Result<f64> {
        let denom = 1.0 - tau * tau;
        if denom <= 0.0 {
            return Err(LabError::SingularTime { t: tau, t1: 1.0 });
        }
        Ok(((self.lambda * (self.psi0_sup + self.b)).exp()
            - (self.lambda * (self.psi0[i] + self.a)).exp())
            / denom)
    }
}

/// Build the collar weight `psi0` as a smoothed distance to the non-observed
/// part of the collar boundary, and validate the Proposition's conditions
/// plus the `(a, b)` chain inequality.
pub fn build_parabolic_weights(
    grid: Arc<Grid>,
    gamma: &[Face],
    a: f64,
    b: f64,
    lambda: f64,
) -> Result<ParabolicWeightSet> {
    if gamma.is_empty() {
        return Err(LabError::HypothesisViolated(
            "Gamma must contain at least one boundary face".into(),
        ));
    }
    for f in gamma {
        if f.axis >= grid.dim {
            return Err(LabError::HypothesisViolated(format!(
                "face axis {} out of range for dim {}",
                f.axis, grid.dim
            )));
        }
    }
    let n = grid.len();
    let cw = grid.collar_width;
    let dim = grid.dim;
    // All faces of the box.
    let mut non_gamma = Vec::new();
    for axis in 0..dim {
        for upper in [false, true] {
            let f = Face { axis, upper };
            if !gamma.contains(&f) {
                non_gamma.push(f);
            }
        }
    }

    // Distance pieces at each collar node: each non-observed face, plus the
    // inner interface of the collar. Combined with a smooth p-min so the
    // crest is C^2; the p-min vanishes exactly where any piece vanishes.
    let mut psi0 = vec![0.0; n];
    for i in 0..n {
        if !grid.collar[i] {
            continue;
        }
        let p = grid.node(i);
        let mut pieces: Vec<f64> = non_gamma
            .iter()
            .map(|&f| face_distance(&grid, p, f))
            .collect();
        pieces.push(cw - grid.boundary_distance(i));
        let dmin = pieces.iter().cloned().fold(f64::INFINITY, f64::min);
        psi0[i] = if dmin <= 1e-14 {
            0.0
        } else {
            // p-norm soft minimum, exponent 6.
            let inv: f64 = pieces.iter().map(|d| d.powi(-6)).sum();
            inv.powf(-1.0 / 6.0)
        };
    }
    let psi0_sup = psi0.iter().cloned().fold(0.0, f64::max);
    if psi0_sup <= 0.0 {
        return Err(LabError::HypothesisViolated(
            "psi0 vanishes identically on the collar".into(),
        ));
    }
    // Chain inequality |psi0|_inf <= a < b < 2a - |psi0|_inf.
    if !(psi0_sup <= a && a < b && b < 2.0 * a - psi0_sup) {
        return Err(LabError::ParabolicParams { psi_max: psi0_sup });
    }

    // Gradient positivity on the collar, away from the crest. The crest of a
    // collar component enclosed by two zero boundaries is a genuine critical
    // point (Rolle), so those ridge nodes are flagged and excluded.
    let mut ridge = vec![false; n];
    let mut bad = Vec::new();
    let grad_tol = 0.1;
    for i in 0..n {
        if !grid.collar[i] {
            continue;
        }
        let mut g2 = 0.0;
        let p = grid.node(i);
        for ax in 0..dim {
            let h = grid.spacing[ax];
            let sample = |x: f64| -> f64 {
                // Re-evaluate psi0 off-node for one-sided safety.
                let mut q = p;
                q[ax] = x;
                let inside = q[ax] > 0.0 && q[ax] < grid.extent[ax];
                if !inside {
                    return 0.0;
                }
                let mut pieces: Vec<f64> = non_gamma
                    .iter()
                    .map(|&f| face_distance(&grid, q, f))
                    .collect();
                let mut d_bdry = q[0].min(grid.extent[0] - q[0]);
                if dim == 2 {
                    d_bdry = d_bdry.min(q[1]).min(grid.extent[1] - q[1]);
                }
                pieces.push(cw - d_bdry);
                let dmin = pieces.iter().cloned().fold(f64::INFINITY, f64::min);
                if dmin <= 1e-14 {
                    0.0
                } else {
                    pieces.iter().map(|d| d.powi(-6)).sum::<f64>().powf(-1.0 / 6.0)
                }
            };
            let d = (sample(p[ax] + 0.5 * h) - sample(p[ax] - 0.5 * h)) / h;
            g2 += d * d;
        }
        if g2.sqrt() < grad_tol {
            // Crest node: local max of the profile along its axis.
            ridge[i] = true;
        }
        if psi0[i] <= 0.0 && grid.boundary_distance(i) > grid.spacing[0] {
            bad.push(i);
        }
    }
    if !bad.is_empty() {
        return Err(LabError::HypothesisViolated(format!(
            "psi0 not positive inside omega at nodes {:?}",
            &bad[..bad.len().min(8)]
        )));
    }

    // kappa from the band Omega_2 \ Omega_1.
    let band: Vec<usize> = (0..n)
        .filter(|&i| {
            let d = grid.boundary_distance(i);
            (cw / 3.0..2.0 * cw / 3.0).contains(&d)
        })
        .collect();
    let kappa = if band.is_empty() {
        0.0
    } else {
        // The band sits inside Omega here (psi0 lives on the collar); use the
        // collar nodes adjacent to the band boundary instead.
        band.iter()
            .map(|&i| psi0[i])
            .fold(f64::INFINITY, f64::min)
            / 2.0
    };

    Ok(ParabolicWeightSet {
        grid,
        gamma: gamma.to_vec(),
        psi0,
        psi0_sup,
        a,
        b,
        lambda,
        kappa,
        ridge,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, PotentialField};
    use crate::spectral::eigendecompose;
    use std::f64::consts::PI;

    fn unit_interval(points: usize) -> Arc<Grid> {
        Arc::new(build_grid(1, [1.0, 0.0], [points, 0], 0.1).unwrap())
    }

    #[test]
    fn frozen_weight_example() {
        // Omega = (0,1), x0 = -1, lambda = 1, T1 = 1, x = 0, t = 0.
        let g = unit_interval(63);
        let ws = CarlemanWeightSet::new(g, [-1.0, 0.0], 1.0, 1.0).unwrap();
        let (psi, theta, phi) = ws.evaluate([0.0, 0.0], 0.0).unwrap();
        assert!((psi - 1.0).abs() < 1e-14);
        assert!((theta - std::f64::consts::E).abs() < 1e-12);
        assert!((ws.psi_sup - 4.0).abs() < 1e-14);
        let expect = (8.0f64).exp() - std::f64::consts::E;
        assert!((phi - expect).abs() < 1e-9, "phi = {phi}, expected {expect}");
        assert!((expect - 2978.24).abs() < 0.1);
    }

    #[test]
    fn weight_guards() {
        let g = unit_interval(63);
        // Interior x0 rejected.
        let err = CarlemanWeightSet::new(g.clone(), [0.5, 0.0], 1.0, 1.0).unwrap_err();
        assert!(matches!(err, LabError::InteriorWeightPoint(_)));
        // lambda below Lambda0 rejected: psi_min = 1 here, so Lambda0 = ln 2.
        let err = CarlemanWeightSet::new(g.clone(), [-1.0, 0.0], 0.5, 1.0).unwrap_err();
        assert!(matches!(err, LabError::HypothesisViolated(_)));
        let ws = CarlemanWeightSet::new(g, [-1.0, 0.0], 1.0, 1.0).unwrap();
        assert!((ws.lambda0 - (2.0f64).ln()).abs() < 1e-14);
        // Singular time rejected.
        assert!(matches!(
            ws.evaluate([0.5, 0.0], 1.0),
            Err(LabError::SingularTime { .. })
        ));
    }

    #[test]
    fn phi_dominates_theta_and_time_monotonicity() {
        let g = unit_interval(63);
        let ws = CarlemanWeightSet::new(g.clone(), [-1.0, 0.0], 1.0, 1.0).unwrap();
        for i in 0..g.len() {
            let x = g.node(i);
            let (_, theta, phi) = ws.evaluate(x, 0.3).unwrap();
            assert!(phi >= theta, "phi {phi} < theta {theta}");
        }
        // phi grows monotonically towards the singular times, so the weight
        // e^{-s phi} is maximized at t = 0.
        let x = g.node(10);
        let mut prev = 0.0;
        for &t in &[0.0, 0.3, 0.6, 0.9, 0.99] {
            let (_, _, phi) = ws.evaluate(x, t).unwrap();
            assert!(phi > prev);
            prev = phi;
        }
    }

    #[test]
    fn ratio_sweep_homogeneous_mode_bounded() {
        let g = Arc::new(build_grid(1, [PI, 0.0], [63, 0], 0.3).unwrap());
        let pot = PotentialField::zero(&g, "p");
        let op = eigendecompose(g.clone(), &pot).unwrap();
        let ws = CarlemanWeightSet::new(g, [-10.0, 0.0], 0.01, 0.5).unwrap();
        let times = midpoint_times(0.5, 64);
        let suite = vec![
            mode_case(&op, "mode1", &[(0, Complex64::new(1.0, 0.0))], &times),
            mode_case(
                &op,
                "mix",
                &[(0, Complex64::new(0.7, 0.0)), (2, Complex64::new(0.0, 0.4))],
                &times,
            ),
        ];
        let s0 = 0.02;
        let ladder = [s0, 2.0 * s0, 4.0 * s0];
        let rows = carleman_ratio_sweep(&op, &ws, &ladder, &suite, SweepVariant::FullBoundary, 64)
            .unwrap();
        assert_eq!(rows.len(), 6);
        for r in &rows {
            let ratio = r.ratio.expect("nondegenerate");
            assert!(ratio.is_finite() && ratio > 0.0, "{r:?}");
        }
        // Scaling u by 10 leaves ratios unchanged.
        let scaled_suite: Vec<SweepCase> = suite
            .iter()
            .map(|c| SweepCase {
                id: c.id.clone(),
                times: c.times.clone(),
                u: c.u.iter().map(|f| f.scaled(Complex64::new(10.0, 0.0))).collect(),
                u_t: c.u_t.iter().map(|f| f.scaled(Complex64::new(10.0, 0.0))).collect(),
            })
            .collect();
        let rows10 =
            carleman_ratio_sweep(&op, &ws, &ladder, &scaled_suite, SweepVariant::FullBoundary, 64)
                .unwrap();
        for (a, b) in rows.iter().zip(&rows10) {
            let (ra, rb) = (a.ratio.unwrap(), b.ratio.unwrap());
            assert!((ra - rb).abs() < 1e-9 * ra, "homogeneity broken");
        }
    }

    #[test]
    fn ratio_sweep_zero_case_degenerate_and_resolution_guard() {
        let g = Arc::new(build_grid(1, [PI, 0.0], [63, 0], 0.3).unwrap());
        let pot = PotentialField::zero(&g, "p");
        let op = eigendecompose(g.clone(), &pot).unwrap();
        let ws = CarlemanWeightSet::new(g.clone(), [-10.0, 0.0], 0.01, 0.5).unwrap();
        let times = midpoint_times(0.5, 32);
        let zero = ComplexField::zeros(g);
        let suite = vec![forced_case(
            "zero",
            &zero,
            &times,
            |_| Complex64::ZERO,
            |_| Complex64::ZERO,
        )];
        let rows =
            carleman_ratio_sweep(&op, &ws, &[0.02], &suite, SweepVariant::FullBoundary, 32)
                .unwrap();
        assert!(rows[0].ratio.is_none());

        // Huge s under-resolves the weight.
        let err = carleman_ratio_sweep(&op, &ws, &[1e6], &suite, SweepVariant::FullBoundary, 32)
            .unwrap_err();
        assert!(matches!(err, LabError::UnderResolvedWeight { .. }));
    }

    #[test]
    fn interior_variant_runs() {
        let g = Arc::new(build_grid(1, [PI, 0.0], [63, 0], 0.6).unwrap());
        let pot = PotentialField::zero(&g, "p");
        let op = eigendecompose(g.clone(), &pot).unwrap();
        let ws = CarlemanWeightSet::new(g, [-10.0, 0.0], 0.01, 0.5).unwrap();
        let times = midpoint_times(0.5, 32);
        let suite = vec![mode_case(&op, "mode1", &[(0, Complex64::new(1.0, 0.0))], &times)];
        let rows =
            carleman_ratio_sweep(&op, &ws, &[0.02, 0.04], &suite, SweepVariant::Interior, 32)
                .unwrap();
        for r in rows {
            assert!(r.ratio.unwrap().is_finite());
        }
    }

    #[test]
    fn parabolic_chain_inequality() {
        let g = Arc::new(build_grid(1, [1.0, 0.0], [127, 0], 0.24).unwrap());
        let gamma = [Face { axis: 0, upper: true }];
        // Frozen examples scaled to the actual |psi0|_inf on this collar.
        let err = build_parabolic_weights(g.clone(), &gamma, 0.0, 0.0, 1.0).unwrap_err();
        assert!(matches!(err, LabError::ParabolicParams { .. }));
        // Determine |psi0|_inf from the error payload, then pass/fail around it.
        let sup = match err {
            LabError::ParabolicParams { psi_max } => psi_max,
            _ => unreachable!(),
        };
        // a = sup, b = 1.5 sup: chain needs b < 2a - sup = sup; fails.
        assert!(matches!(
            build_parabolic_weights(g.clone(), &gamma, sup, 1.5 * sup, 1.0),
            Err(LabError::ParabolicParams { .. })
        ));
        // a = 1.2 sup, b = 1.3 sup: 1.3 sup < 1.4 sup; passes.
        let ws = build_parabolic_weights(g.clone(), &gamma, 1.2 * sup, 1.3 * sup, 1.0).unwrap();
        assert!(ws.kappa >= 0.0);
        // psi0 vanishes at the inner interface (x = 0.24) and at x = 0, and is
        // positive strictly inside the left collar component.
        for i in 0..g.len() {
            let x = g.node(i)[0];
            if !g.collar[i] {
                continue;
            }
            if (0.02..0.22).contains(&x) || x > 0.78 {
                assert!(ws.psi0[i] > 0.0, "psi0 zero at x = {x}");
            }
        }
        // theta0 and phi0 are finite and positive inside tau in (-1, 1).
        let some_collar = (0..g.len()).find(|&i| g.collar[i] && ws.psi0[i] > 0.0).unwrap();
        let th = ws.theta0(some_collar, 0.5).unwrap();
        let ph = ws.phi0(some_collar, 0.5).unwrap();
        assert!(th > 0.0 && ph > 0.0);
        assert!(matches!(
            ws.theta0(some_collar, 1.0),
            Err(LabError::SingularTime { .. })
        ));
    }

    #[test]
    fn energy_identity_single_mode() {
        let g = Arc::new(build_grid(1, [PI, 0.0], [63, 0], 0.3).unwrap());
        let pot = PotentialField::zero(&g, "p");
        let op = eigendecompose(g.clone(), &pot).unwrap();
        let t = 0.5;
        let ws = CarlemanWeightSet::new(g.clone(), [-10.0, 0.0], 0.01, t).unwrap();
        // r(t) = e^{-i mu t} e_1 homogeneous: R_1-pairing reduces to the pure
        // d_t(e^{-2 s phi}|r|^2)/2 telescoping.
        let n = g.len();
        let e1 = ComplexField {
            grid: g.clone(),
            values: (0..n)
                .map(|i| Complex64::new(op.eigenvectors[(i, 0)], 0.0))
                .collect(),
        };
        let dt = 2.5e-4;
        let times = crate::field::time_samples(-t, 0.0, dt);
        let mu = op.eigenvalues[0];
        let fields = times
            .iter()
            .map(|&tj| e1.scaled(Complex64::new(0.0, -mu * tj).exp()))
            .collect();
        let traj = Trajectory::new(times, fields);
        let s = 0.05;
        let out = energy_identity(&op, &ws, s, &traj).unwrap();
        assert!(
            out.rel_err < 1e-5,
            "energy identity rel err {} (lhs {}, rhs {})",
            out.rel_err,
            out.lhs,
            out.rhs
        );
    }
}
