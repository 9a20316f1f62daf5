//! Dirichlet eigendecomposition of `-Laplacian - p`, the exact-in-time unitary
//! propagator built on it, and discrete Sobolev norms.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;

use crate::error::{LabError, Result};
use crate::field::ComplexField;
use crate::grid::{Grid, PotentialField};

/// Full eigensystem of the symmetric discrete `-Laplacian - p` with Dirichlet
/// rows eliminated. Eigenvalues ascend; eigenvectors are orthonormal in the
/// weighted discrete L2 inner product.
pub struct SpectralOperator {
    pub grid: Arc<Grid>,
    pub potential: PotentialField,
    pub eigenvalues: Vec<f64>,
    /// Columns are eigenvectors, L2-orthonormalized with the grid quadrature weight.
    pub eigenvectors: DMatrix<f64>,
}

/// Assemble the dense symmetric matrix of `-Laplacian - p` on the interior nodes.
pub fn assemble_matrix(grid: &Grid, potential: &PotentialField) -> DMatrix<f64> {
    let n = grid.len();
    let mut m = DMatrix::<f64>::zeros(n, n);
    if grid.dim == 1 {
        let h2 = grid.spacing[0] * grid.spacing[0];
        for i in 0..n {
            m[(i, i)] = 2.0 / h2 - potential.values[i];
            if i + 1 < n {
                m[(i, i + 1)] = -1.0 / h2;
                m[(i + 1, i)] = -1.0 / h2;
            }
        }
    } else {
        let [nx, ny] = grid.points;
        let hx2 = grid.spacing[0] * grid.spacing[0];
        let hy2 = grid.spacing[1] * grid.spacing[1];
        for iy in 0..ny {
            for ix in 0..nx {
                let i = grid.index2(ix, iy);
                m[(i, i)] = 2.0 / hx2 + 2.0 / hy2 - potential.values[i];
                if ix + 1 < nx {
                    let j = grid.index2(ix + 1, iy);
                    m[(i, j)] = -1.0 / hx2;
                    m[(j, i)] = -1.0 / hx2;
                }
                if iy + 1 < ny {
                    let j = grid.index2(ix, iy + 1);
                    m[(i, j)] = -1.0 / hy2;
                    m[(j, i)] = -1.0 / hy2;
                }
            }
        }
    }
    m
}

/// Diagonalize `-Laplacian - p` on the grid.
pub fn eigendecompose(grid: Arc<Grid>, potential: &PotentialField) -> Result<SpectralOperator> {
    let m = assemble_matrix(&grid, potential);
    let eig = nalgebra::SymmetricEigen::try_new(m, 1.0e-13, 100_000)
        .ok_or(LabError::EigenFailure)?;

    let n = grid.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let w_sqrt = grid.cell_weight().sqrt();
    let mut eigenvalues = Vec::with_capacity(n);
    let mut eigenvectors = DMatrix::<f64>::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        eigenvalues.push(eig.eigenvalues[src]);
        let v = eig.eigenvectors.column(src);
        let scale = 1.0 / (v.norm() * w_sqrt);
        for i in 0..n {
            eigenvectors[(i, col)] = v[i] * scale;
        }
    }
    Ok(SpectralOperator {
        grid,
        potential: potential.clone(),
        eigenvalues,
        eigenvectors,
    })
}

impl SpectralOperator {
    /// Apply the assembled stencil `(-Laplacian - p)` to a complex field.
    pub fn apply_minus_lap_minus_p(&self, f: &ComplexField) -> ComplexField {
        let g = &self.grid;
        let n = g.len();
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        if g.dim == 1 {
            let h2 = g.spacing[0] * g.spacing[0];
            for i in 0..n {
                let left = if i > 0 { f.values[i - 1] } else { Complex64::ZERO };
                let right = if i + 1 < n { f.values[i + 1] } else { Complex64::ZERO };
                out[i] = (2.0 * f.values[i] - left - right) / h2
                    - self.potential.values[i] * f.values[i];
            }
        } else {
            let [nx, ny] = g.points;
            let hx2 = g.spacing[0] * g.spacing[0];
            let hy2 = g.spacing[1] * g.spacing[1];
            for iy in 0..ny {
                for ix in 0..nx {
                    let i = g.index2(ix, iy);
                    let xl = if ix > 0 { f.values[i - 1] } else { Complex64::ZERO };
                    let xr = if ix + 1 < nx { f.values[i + 1] } else { Complex64::ZERO };
                    let yl = if iy > 0 { f.values[i - nx] } else { Complex64::ZERO };
                    let yr = if iy + 1 < ny { f.values[i + nx] } else { Complex64::ZERO };
                    out[i] = (2.0 * f.values[i] - xl - xr) / hx2
                        + (2.0 * f.values[i] - yl - yr) / hy2
                        - self.potential.values[i] * f.values[i];
                }
            }
        }
        ComplexField {
            grid: f.grid.clone(),
            values: out,
        }
    }

    /// Apply the generator `A = i(Laplacian + p)`.
    pub fn apply_generator(&self, f: &ComplexField) -> ComplexField {
        let m = self.apply_minus_lap_minus_p(f);
        ComplexField {
            grid: f.grid.clone(),
            values: m.values.iter().map(|v| Complex64::new(0.0, -1.0) * v).collect(),
        }
    }

    /// Eigenbasis coefficients `c_m = (f, e_m)_L2` (real and imaginary parts).
    fn coefficients(&self, f: &ComplexField) -> (DVector<f64>, DVector<f64>) {
        let n = f.len();
        let w = self.grid.cell_weight();
        let re = DVector::from_iterator(n, f.values.iter().map(|v| v.re));
        let im = DVector::from_iterator(n, f.values.iter().map(|v| v.im));
        (
            self.eigenvectors.tr_mul(&re) * w,
            self.eigenvectors.tr_mul(&im) * w,
        )
    }

    /// `e^{tA} f` computed exactly in time through the eigenbasis; `t` may be
    /// negative (group, not semigroup).
    pub fn propagate(&self, f: &ComplexField, t: f64) -> Result<ComplexField> {
        if f.len() != self.grid.len() {
            return Err(LabError::GridMismatch {
                left: f.len(),
                right: self.grid.len(),
            });
        }
        let (a, b) = self.coefficients(f);
        let n = f.len();
        let mut re = DVector::<f64>::zeros(n);
        let mut im = DVector::<f64>::zeros(n);
        for m in 0..n {
            let phase = -self.eigenvalues[m] * t;
            let (s, c) = phase.sin_cos();
            // (a + ib) e^{i phase}
            re[m] = a[m] * c - b[m] * s;
            im[m] = a[m] * s + b[m] * c;
        }
        let out_re = &self.eigenvectors * re;
        let out_im = &self.eigenvectors * im;
        Ok(ComplexField {
            grid: f.grid.clone(),
            values: (0..n)
                .map(|i| Complex64::new(out_re[i], out_im[i]))
                .collect(),
        })
    }
}

// ---------------------------------------------------------------------------
// Discrete Sobolev norms on the closed grid (Dirichlet zeros on the boundary,
// centered differences inside, one-sided at the boundary nodes, trapezoid
// quadrature).
// ---------------------------------------------------------------------------

struct ClosedArray {
    values: Vec<Complex64>,
    shape: [usize; 2],
    spacing: [f64; 2],
    dim: usize,
}

fn to_closed(field: &ComplexField) -> ClosedArray {
    let g = &field.grid;
    if g.dim == 1 {
        let mx = g.points[0] + 2;
        let mut values = vec![Complex64::ZERO; mx];
        for i in 0..g.points[0] {
            values[i + 1] = field.values[i];
        }
        ClosedArray {
            values,
            shape: [mx, 1],
            spacing: g.spacing,
            dim: 1,
        }
    } else {
        let mx = g.points[0] + 2;
        let my = g.points[1] + 2;
        let mut values = vec![Complex64::ZERO; mx * my];
        for iy in 0..g.points[1] {
            for ix in 0..g.points[0] {
                values[(iy + 1) * mx + (ix + 1)] = field.values[g.index2(ix, iy)];
            }
        }
        ClosedArray {
            values,
            shape: [mx, my],
            spacing: g.spacing,
            dim: 2,
        }
    }
}

impl ClosedArray {
    fn derivative(&self, axis: usize) -> ClosedArray {
        let [mx, my] = self.shape;
        let h = self.spacing[axis];
        let mut out = vec![Complex64::ZERO; mx * my];
        let (len, stride, lines, line_stride) = if axis == 0 {
            (mx, 1usize, my, mx)
        } else {
            (my, mx, mx, 1usize)
        };
        for line in 0..lines {
            let base = line * line_stride;
            let at = |i: usize| self.values[base + i * stride];
            for i in 0..len {
                let d = if i == 0 {
                    (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h)
                } else if i == len - 1 {
                    (3.0 * at(len - 1) - 4.0 * at(len - 2) + at(len - 3)) / (2.0 * h)
                } else {
                    (at(i + 1) - at(i - 1)) / (2.0 * h)
                };
                out[base + i * stride] = d;
            }
        }
        ClosedArray {
            values: out,
            shape: self.shape,
            spacing: self.spacing,
            dim: self.dim,
        }
    }

    /// Trapezoid quadrature of `|values|^2` over the closed domain.
    fn quad_sq(&self) -> f64 {
        let [mx, my] = self.shape;
        let mut total = 0.0;
        for iy in 0..my {
            let wy = if self.dim == 2 && (iy == 0 || iy == my - 1) {
                0.5
            } else {
                1.0
            };
            for ix in 0..mx {
                let wx = if ix == 0 || ix == mx - 1 { 0.5 } else { 1.0 };
                total += wx * wy * self.values[iy * mx + ix].norm_sqr();
            }
        }
        let mut w = self.spacing[0];
        if self.dim == 2 {
            w *= self.spacing[1];
        }
        total * w
    }
}

fn sobolev_norm_sq_up_to(field: &ComplexField, k: usize) -> f64 {
    let dim = field.grid.dim;
    let closed = to_closed(field);
    let mut total = closed.quad_sq();
    if dim == 1 {
        let mut current = closed;
        for _ in 1..=k {
            current = current.derivative(0);
            total += current.quad_sq();
        }
    } else {
        for order in 1..=k {
            for ax in 0..=order {
                // alpha = (order - ax, ax)
                let mut current = to_closed(field);
                for _ in 0..(order - ax) {
                    current = current.derivative(0);
                }
                for _ in 0..ax {
                    current = current.derivative(1);
                }
                total += current.quad_sq();
            }
        }
    }
    total
}

/// Discrete Sobolev norm of order `k` (0, 1, or 2): the root of the summed
/// squared L2 norms of all difference-stencil derivatives up to order `k`.
pub fn sobolev_norm(field: &ComplexField, k: usize) -> f64 {
    assert!(k <= 2, "sobolev_norm supports k <= 2");
    sobolev_norm_sq_up_to(field, k).sqrt()
}

/// Fourth-order surrogate norm for smooth test profiles (sine sums); used only
/// as a normalizer when fitting stability constants.
pub fn h4_norm(field: &ComplexField) -> f64 {
    sobolev_norm_sq_up_to(field, 4).sqrt()
}

/// Gradient on interior nodes: centered differences with Dirichlet zero
/// extension one node beyond the boundary.
pub fn gradient(field: &ComplexField) -> Vec<[Complex64; 2]> {
    let g = &field.grid;
    let n = g.len();
    let mut out = vec![[Complex64::ZERO; 2]; n];
    if g.dim == 1 {
        let h = g.spacing[0];
        for i in 0..n {
            let left = if i > 0 { field.values[i - 1] } else { Complex64::ZERO };
            let right = if i + 1 < n { field.values[i + 1] } else { Complex64::ZERO };
            out[i][0] = (right - left) / (2.0 * h);
        }
    } else {
        let [nx, ny] = g.points;
        let [hx, hy] = g.spacing;
        for iy in 0..ny {
            for ix in 0..nx {
                let i = g.index2(ix, iy);
                let xl = if ix > 0 { field.values[i - 1] } else { Complex64::ZERO };
                let xr = if ix + 1 < nx { field.values[i + 1] } else { Complex64::ZERO };
                let yl = if iy > 0 { field.values[i - nx] } else { Complex64::ZERO };
                let yr = if iy + 1 < ny { field.values[i + nx] } else { Complex64::ZERO };
                out[i][0] = (xr - xl) / (2.0 * hx);
                out[i][1] = (yr - yl) / (2.0 * hy);
            }
        }
    }
    out
}

/// Outward normal derivative on each boundary node by the one-sided
/// second-order stencil; the Dirichlet zero on the boundary is built in.
/// Corner nodes have no interior line and report a zero trace.
pub fn neumann_trace(field: &ComplexField) -> Vec<Complex64> {
    field
        .grid
        .boundary
        .iter()
        .map(|b| match b.inner {
            [Some(i1), Some(i2)] => {
                -(4.0 * field.values[i1] - field.values[i2]) / (2.0 * b.normal_spacing)
            }
            [Some(i1), None] => -field.values[i1] / b.normal_spacing,
            _ => Complex64::ZERO,
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Empirically fitted model constants.
// ---------------------------------------------------------------------------

/// Random real sine-sum profile: smooth, vanishes on the boundary.
pub fn random_sine_field(grid: &Arc<Grid>, rng: &mut impl Rng, max_mode: usize) -> ComplexField {
    let mut amps = Vec::new();
    if grid.dim == 1 {
        for m in 1..=max_mode {
            amps.push((m, 0usize, rng.gen_range(-1.0..1.0) / (m * m) as f64));
        }
        let l = grid.extent[0];
        ComplexField::from_real_fn(grid.clone(), move |x, _| {
            amps.iter()
                .map(|&(m, _, a)| a * (m as f64 * std::f64::consts::PI * x / l).sin())
                .sum()
        })
    } else {
        for mx in 1..=max_mode {
            for my in 1..=max_mode {
                amps.push((mx, my, rng.gen_range(-1.0..1.0) / ((mx * mx + my * my) as f64)));
            }
        }
        let [lx, ly] = grid.extent;
        ComplexField::from_real_fn(grid.clone(), move |x, y| {
            amps.iter()
                .map(|&(mx, my, a)| {
                    a * (mx as f64 * std::f64::consts::PI * x / lx).sin()
                        * (my as f64 * std::f64::consts::PI * y / ly).sin()
                })
                .sum()
        })
    }
}

/// Random complex sine-sum profile.
pub fn random_complex_field(grid: &Arc<Grid>, rng: &mut impl Rng, max_mode: usize) -> ComplexField {
    let re = random_sine_field(grid, rng, max_mode);
    let im = random_sine_field(grid, rng, max_mode);
    ComplexField {
        grid: grid.clone(),
        values: re
            .values
            .iter()
            .zip(&im.values)
            .map(|(a, b)| Complex64::new(a.re, b.re))
            .collect(),
    }
}

/// Empirical Banach-algebra constant of the discrete H2 norm: the observed
/// maximum of `|h1 h2| / (|h1| |h2|)` over a random sample, inflated by 1.5.
pub fn estimate_banach_constant(grid: &Arc<Grid>, rng: &mut impl Rng, samples: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let h1 = random_complex_field(grid, rng, 4);
        let h2 = random_complex_field(grid, rng, 4);
        let n1 = sobolev_norm(&h1, 2);
        let n2 = sobolev_norm(&h2, 2);
        if n1 < 1e-12 || n2 < 1e-12 {
            continue;
        }
        let prod = sobolev_norm(&h1.mul_pointwise(&h2), 2);
        worst = worst.max(prod / (n1 * n2));
    }
    worst * 1.5
}

/// Fit the H2 propagator stability constant: the observed maximum of
/// `|e^{tA} f|_{H2} / |f|_{H2}` over random data and the given times, clamped
/// above 1 as the continuous theory requires.
pub fn fit_c1(
    op: &SpectralOperator,
    rng: &mut impl Rng,
    samples: usize,
    times: &[f64],
) -> Result<f64> {
    let mut worst: f64 = 1.0;
    for _ in 0..samples {
        let f = random_complex_field(&op.grid, rng, 4);
        let base = sobolev_norm(&f, 2);
        if base < 1e-12 {
            continue;
        }
        for &t in times {
            let u = op.propagate(&f, t)?;
            worst = worst.max(sobolev_norm(&u, 2) / base);
        }
    }
    Ok((worst * 1.05).max(1.01))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn interval_op(points: usize, p: f64) -> SpectralOperator {
        let g = Arc::new(build_grid(1, [PI, 0.0], [points, 0], 0.3).unwrap());
        let pot = PotentialField::constant(&g, "p", p);
        eigendecompose(g, &pot).unwrap()
    }

    #[test]
    fn interval_eigenvalues_near_squares() {
        let op = interval_op(127, 0.0);
        let h = op.grid.spacing[0];
        for (m, expect) in [(0usize, 1.0), (1, 4.0), (2, 9.0)] {
            let got = op.eigenvalues[m];
            // Discrete eigenvalue (2 - 2cos(k h))/h^2 differs from k^2 by O(h^2).
            assert!(
                (got - expect).abs() < 2.0 * expect * expect * h * h,
                "mu_{} = {got}, expected ~{expect}",
                m + 1
            );
        }
    }

    #[test]
    fn constant_potential_shifts_spectrum_exactly() {
        let base = interval_op(63, 0.0);
        let shifted = interval_op(63, 1.75);
        for m in 0..10 {
            assert!((shifted.eigenvalues[m] - (base.eigenvalues[m] - 1.75)).abs() < 1e-9);
        }
    }

    #[test]
    fn square_ground_state_near_two_pi_squared() {
        let g = Arc::new(build_grid(2, [1.0, 1.0], [21, 21], 0.1).unwrap());
        let pot = PotentialField::zero(&g, "p");
        let op = eigendecompose(g, &pot).unwrap();
        let expect = 2.0 * PI * PI;
        let h = op.grid.spacing[0];
        assert!(
            (op.eigenvalues[0] - expect).abs() < 0.5 * expect * h * h * PI * PI,
            "mu_11 = {}, expected ~{expect}",
            op.eigenvalues[0]
        );
    }

    #[test]
    fn eigenvectors_orthonormal_and_consistent() {
        let op = interval_op(63, 0.4);
        let n = op.grid.len();
        let w = op.grid.cell_weight();
        for a in 0..6 {
            for b in 0..6 {
                let dot: f64 = (0..n)
                    .map(|i| op.eigenvectors[(i, a)] * op.eigenvectors[(i, b)])
                    .sum::<f64>()
                    * w;
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-10);
            }
        }
        // M e_m = mu_m e_m within 1e-8 relative.
        for m in 0..6 {
            let e = ComplexField {
                grid: op.grid.clone(),
                values: (0..n)
                    .map(|i| Complex64::new(op.eigenvectors[(i, m)], 0.0))
                    .collect(),
            };
            let me = op.apply_minus_lap_minus_p(&e);
            let err: f64 = (0..n)
                .map(|i| (me.values[i] - op.eigenvalues[m] * e.values[i]).norm())
                .fold(0.0, f64::max);
            assert!(err < 1e-8 * op.eigenvalues[m].abs().max(1.0));
        }
    }

    #[test]
    fn eigenvalue_grid_convergence_second_order() {
        // Error in mu_1 vs the closed form 1 should shrink at order ~2.
        let errs: Vec<f64> = [31usize, 63, 127]
            .iter()
            .map(|&n| (interval_op(n, 0.0).eigenvalues[0] - 1.0).abs())
            .collect();
        let order1 = (errs[0] / errs[1]).ln() / ((63.0 + 1.0) / (31.0 + 1.0) as f64).ln();
        let order2 = (errs[1] / errs[2]).ln() / (2.0f64).ln();
        for order in [order1, order2] {
            assert!((1.8..=2.2).contains(&order), "measured order {order}");
        }
    }

    #[test]
    fn propagate_single_mode_and_identity() {
        let op = interval_op(127, 0.0);
        let f = ComplexField::from_real_fn(op.grid.clone(), |x, _| x.sin());
        let u = op.propagate(&f, 1.3).unwrap();
        let mu1 = op.eigenvalues[0];
        let phase = Complex64::new(0.0, -mu1 * 1.3).exp();
        for (i, v) in u.values.iter().enumerate() {
            let expect = phase * f.values[i];
            assert!((v - expect).norm() < 1e-10);
            assert!((v.norm() - f.values[i].norm()).abs() < 1e-10);
        }
        let id = op.propagate(&f, 0.0).unwrap();
        for (a, b) in id.values.iter().zip(&f.values) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn propagate_round_trip() {
        let op = interval_op(63, 0.7);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f = random_complex_field(&op.grid, &mut rng, 5);
        let fwd = op.propagate(&f, 0.9).unwrap();
        let back = op.propagate(&fwd, -0.9).unwrap();
        let err = back.sub(&f).l2_norm();
        assert!(err < 1e-11 * f.l2_norm().max(1.0));
    }

    #[test]
    fn generator_commutes_with_propagator() {
        let op = interval_op(63, 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = random_complex_field(&op.grid, &mut rng, 4);
        let af = op.apply_generator(&f);
        let lhs = op.apply_generator(&op.propagate(&f, 0.6).unwrap());
        let rhs = op.propagate(&af, 0.6).unwrap();
        assert!(lhs.sub(&rhs).l2_norm() <= 1e-9 * af.l2_norm());
    }

    #[test]
    fn sobolev_norms_of_sine() {
        let g = Arc::new(build_grid(1, [PI, 0.0], [127, 0], 0.3).unwrap());
        let f = ComplexField::from_real_fn(g, |x, _| x.sin());
        let h = f.grid.spacing[0];
        let n0 = sobolev_norm(&f, 0);
        let n1 = sobolev_norm(&f, 1);
        assert!((n0 - (PI / 2.0).sqrt()).abs() < 4.0 * h * h);
        assert!((n1 - PI.sqrt()).abs() < 8.0 * h * h, "H1 norm {n1}");
        assert!(n1 >= n0);
        assert!(sobolev_norm(&f, 2) >= n1);
    }

    #[test]
    fn zero_field_norms_vanish() {
        let g = Arc::new(build_grid(1, [1.0, 0.0], [31, 0], 0.05).unwrap());
        let z = ComplexField::zeros(g);
        for k in 0..=2 {
            assert_eq!(sobolev_norm(&z, k), 0.0);
        }
    }

    #[test]
    fn neumann_trace_of_sine() {
        let g = Arc::new(build_grid(1, [PI, 0.0], [127, 0], 0.3).unwrap());
        let f = ComplexField::from_real_fn(g, |x, _| x.sin());
        let h = f.grid.spacing[0];
        let trace = neumann_trace(&f);
        // Outward derivative of sin at both endpoints is -1.
        for v in &trace {
            assert!((v.re + 1.0).abs() < 2.0 * h * h, "trace {v}");
            assert!(v.im.abs() < 1e-14);
        }
    }

    #[test]
    fn banach_constant_positive() {
        let g = Arc::new(build_grid(1, [PI, 0.0], [63, 0], 0.3).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = estimate_banach_constant(&g, &mut rng, 20);
        assert!(k.is_finite() && k > 0.0);
    }

    #[test]
    fn c1_fit_uniform_in_time() {
        let op = interval_op(63, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c1 = fit_c1(&op, &mut rng, 10, &[0.25, 0.5, 1.0, -1.0]).unwrap();
        assert!(c1 >= 1.0 && c1 < 20.0, "C1 = {c1}");
    }
}
