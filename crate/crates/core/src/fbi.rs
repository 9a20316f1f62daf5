//! FBI transform in the time variable with a Gaussian kernel, the smooth
//! time cutoff, and the kernel bound underlying the observability argument.

use num_complex::Complex64;

use crate::error::{LabError, Result};
use crate::field::Trajectory;

/// Parameters of the FBI transform
/// `w_gamma(x, t - i tau) = sqrt(gamma / 2 pi) int e^{-(gamma/2)(z - eta)^2}
/// theta(eta) w(x, eta h) d eta` with `z = t/h - i tau/h` and `h = T/(3 T0)`.
#[derive(Debug, Clone, Copy)]
pub struct FbiConfig {
    /// Gaussian frequency parameter.
    pub gamma: f64,
    /// Cutoff plateau half-width (cutoff is 1 on `|eta| <= 2 T0`, 0 beyond `3 T0`).
    pub t0: f64,
    /// Physical half-width of the time window; `h = t_max / (3 T0)`.
    pub t_max: f64,
}

impl FbiConfig {
    pub fn scale(&self) -> f64 {
        self.t_max / (3.0 * self.t0)
    }
}

/// C^2 cutoff: 1 on `|eta| <= 2 t0`, 0 on `|eta| >= 3 t0`, quintic smoothstep
/// in between.
pub fn time_cutoff(eta: f64, t0: f64) -> f64 {
    let a = eta.abs();
    if a <= 2.0 * t0 {
        1.0
    } else if a >= 3.0 * t0 {
        0.0
    } else {
        let s = (a - 2.0 * t0) / t0;
        let s2 = s * s;
        1.0 - s2 * s * (10.0 - 15.0 * s + 6.0 * s2)
    }
}

/// Transform of one sample point `z = re_z - i im_z` (in the rescaled time
/// variable) against a trajectory covering `[-t_max, t_max]`.
///
/// Refuses when the trajectory's sampling cannot resolve the Gaussian:
/// the quadrature step in `eta` must satisfy `d_eta <= 1/(8 sqrt(gamma))`.
pub fn fbi_transform(
    w: &Trajectory,
    cfg: &FbiConfig,
    re_z: f64,
    im_z: f64,
) -> Result<Vec<Complex64>> {
    let h = cfg.scale();
    let d_eta = w.dt / h;
    let need = 1.0 / (8.0 * cfg.gamma.sqrt());
    if d_eta > need {
        let span = w.times[w.len() - 1] - w.times[0];
        let needed = (span / (h * need)).ceil() as usize + 1;
        return Err(LabError::UnderResolvedFbi {
            gamma: cfg.gamma,
            needed,
        });
    }
    let n = w.fields[0].len();
    let z = Complex64::new(re_z, -im_z);
    let norm = (cfg.gamma / (2.0 * std::f64::consts::PI)).sqrt();
    let mut out = vec![Complex64::ZERO; n];
    let m = w.len();
    for (j, &t) in w.times.iter().enumerate() {
        let eta = t / h;
        let cut = time_cutoff(eta, cfg.t0);
        if cut == 0.0 {
            continue;
        }
        let d = z - eta;
        let kernel = (-(0.5 * cfg.gamma) * d * d).exp() * cut;
        let wt = if j == 0 || j == m - 1 { 0.5 } else { 1.0 };
        let c = kernel * norm * d_eta * wt;
        for i in 0..n {
            out[i] += c * w.fields[j].values[i];
        }
    }
    Ok(out)
}

/// Cauchy-Riemann residual of the transform in `z = t - i tau`: compares
/// `d_re` and `-i d_im` by centered differences and returns the relative
/// discrepancy in the max norm.
pub fn cauchy_riemann_residual(
    w: &Trajectory,
    cfg: &FbiConfig,
    re_z: f64,
    im_z: f64,
    step: f64,
) -> Result<f64> {
    let fp = fbi_transform(w, cfg, re_z + step, im_z)?;
    let fm = fbi_transform(w, cfg, re_z - step, im_z)?;
    let gp = fbi_transform(w, cfg, re_z, im_z + step)?;
    let gm = fbi_transform(w, cfg, re_z, im_z - step)?;
    let mut num: f64 = 0.0;
    let mut den: f64 = 0.0;
    for i in 0..fp.len() {
        let d_re = (fp[i] - fm[i]) / (2.0 * step);
        let d_im = (gp[i] - gm[i]) / (2.0 * step);
        // Holomorphy in z = re - i im: d_im = -i d_re.
        num = num.max((d_im + Complex64::new(0.0, 1.0) * d_re).norm());
        den = den.max(d_re.norm());
    }
    Ok(num / den.max(1e-300))
}

/// Report of the Fourier-side kernel bound `|1 - K_hat_gamma(zeta)|^2
/// <= C zeta^2 / gamma` on `zeta^2 <= 4 gamma`, with the unit-mass
/// normalization `K_hat_gamma(zeta) = e^{-zeta^2 / (2 gamma)}` and `C = 1/4`.
#[derive(Debug, Clone)]
pub struct KernelBoundReport {
    pub gamma: f64,
    /// Max of `|1 - K_hat|^2 gamma / zeta^2` over the probed window.
    pub max_ratio: f64,
    /// The admissible constant.
    pub c: f64,
    pub holds: bool,
}

/// Probe the kernel bound on a fine `zeta` ladder over `zeta^2 <= 4 gamma`.
pub fn fbi_kernel_bound_check(gamma: f64, samples: usize) -> KernelBoundReport {
    assert!(gamma > 0.0 && samples >= 2);
    let zeta_max = 2.0 * gamma.sqrt();
    let mut max_ratio: f64 = 0.0;
    for j in 1..=samples {
        let zeta = zeta_max * j as f64 / samples as f64;
        let k_hat = (-zeta * zeta / (2.0 * gamma)).exp();
        let ratio = (1.0 - k_hat).powi(2) * gamma / (zeta * zeta);
        max_ratio = max_ratio.max(ratio);
    }
    KernelBoundReport {
        gamma,
        max_ratio,
        c: 0.25,
        holds: max_ratio <= 0.25,
    }
}
