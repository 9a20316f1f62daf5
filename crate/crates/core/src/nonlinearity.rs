//! Truncated-analytic nonlinearities `N(z1, z2)` given by a table of
//! mixed derivatives at the origin, with validation of the structural
//! hypotheses the solver and the inverse experiments rely on.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::field::ComplexField;

/// Truncated Taylor description of `N(z1, z2)`: `coeffs[a][b]` is the mixed
/// derivative `d^a_{z1} d^b_{z2} N(0, 0)`. Terms of total order below `k` must
/// vanish; terms above `truncation` are dropped.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NonlinearitySpec {
    /// Leading homogeneity order (k >= 2).
    pub k: usize,
    /// Highest total order retained in evaluation.
    pub truncation: usize,
    /// `coeffs[a][b] = d^a_{z1} d^b_{z2} N(0,0)` for `a + b <= truncation`.
    pub coeffs: Vec<Vec<f64>>,
    /// Radius of the bidisk of analyticity around the origin.
    pub delta: f64,
    /// Exponents of the single monomial used by the contraction radius
    /// (`m0 + n0 = k`, `m0 + n0 > 1`).
    pub m0: usize,
    pub n0: usize,
    /// Banach-algebra constant used in the contraction radius.
    pub c0: f64,
}

impl NonlinearitySpec {
    /// The pure power `z1^a z2^b` with coefficient giving `N = z1^a z2^b`.
    pub fn monomial(a: usize, b: usize, c0: f64) -> Self {
        let k = a + b;
        let truncation = k + 2;
        let mut coeffs = vec![vec![0.0; truncation + 1]; truncation + 1];
        // N = z1^a z2^b means the (a,b) mixed derivative at 0 is a! b!.
        coeffs[a][b] = (factorial(a) * factorial(b)) as f64;
        NonlinearitySpec {
            k,
            truncation,
            coeffs,
            delta: 1.0,
            m0: a.max(b),
            n0: a.min(b),
            c0,
        }
    }

    fn coeff(&self, a: usize, b: usize) -> f64 {
        self.coeffs
            .get(a)
            .and_then(|row| row.get(b))
            .copied()
            .unwrap_or(0.0)
    }

    /// Structural validation: vanishing orders below `k`, a real k-th block
    /// whose binomial contraction `sum_m binom(k,m) c[m][k-m]` is nonzero, and
    /// admissible monomial exponents.
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(LabError::InvalidNonlinearity(format!(
                "leading order k must be >= 2, got {}",
                self.k
            )));
        }
        if self.truncation < self.k {
            return Err(LabError::InvalidNonlinearity(format!(
                "truncation {} below leading order {}",
                self.truncation, self.k
            )));
        }
        if self.m0 + self.n0 != self.k || self.m0 + self.n0 < 2 {
            return Err(LabError::InvalidNonlinearity(format!(
                "monomial exponents m0 + n0 = {} must equal k = {}",
                self.m0 + self.n0,
                self.k
            )));
        }
        if !(self.delta > 0.0) {
            return Err(LabError::InvalidNonlinearity(format!(
                "analyticity radius delta must be positive, got {}",
                self.delta
            )));
        }
        if !(self.c0 > 0.0) {
            return Err(LabError::InvalidNonlinearity(format!(
                "algebra constant C0 must be positive, got {}",
                self.c0
            )));
        }
        for a in 0..self.k {
            for b in 0..self.k - a {
                if self.coeff(a, b) != 0.0 {
                    return Err(LabError::InvalidNonlinearity(format!(
                        "coefficient ({a},{b}) of total order {} below k = {} is nonzero",
                        a + b,
                        self.k
                    )));
                }
            }
        }
        let sum = self.binomial_sum();
        if sum.abs() < 1e-12 {
            return Err(LabError::InvalidNonlinearity(format!(
                "binomial contraction of the order-{} block vanishes ({sum:.3e}); the \
                 leading term carries no information",
                self.k
            )));
        }
        Ok(())
    }

    /// `sum_m binom(k, m) c[m][k-m]` — the scalar the initial-data identity
    /// multiplies `(q1 - q2) f^k` by.
    pub fn binomial_sum(&self) -> f64 {
        (0..=self.k)
            .map(|m| binomial(self.k, m) as f64 * self.coeff(m, self.k - m))
            .sum()
    }

    /// Evaluate the truncated series at `(z1, z2)`:
    /// `sum_{l=k}^{L} sum_{m<=l} c[l-m][m] / ((l-m)! m!) z1^{l-m} z2^m`.
    pub fn evaluate_point(&self, z1: Complex64, z2: Complex64) -> Complex64 {
        let mut total = Complex64::ZERO;
        for l in self.k..=self.truncation {
            for m in 0..=l {
                let c = self.coeff(l - m, m);
                if c == 0.0 {
                    continue;
                }
                let denom = (factorial(l - m) * factorial(m)) as f64;
                total += (c / denom) * z1.powu((l - m) as u32) * z2.powu(m as u32);
            }
        }
        total
    }

    /// Pointwise `N(u, conj u)` over a field.
    pub fn evaluate(&self, u: &ComplexField) -> ComplexField {
        ComplexField {
            grid: u.grid.clone(),
            values: u
                .values
                .iter()
                .map(|&z| self.evaluate_point(z, z.conj()))
                .collect(),
        }
    }

    /// The order-k leading block applied to `(w, conj w)` with the binomial
    /// weights of the k-th variation:
    /// `sum_m binom(k, m) c[m][k-m] w^m conj(w)^{k-m}`.
    /// For a pure monomial this equals `k!` times the k-homogeneous part of
    /// `evaluate`.
    pub fn leading_term(&self, w: &ComplexField) -> ComplexField {
        ComplexField {
            grid: w.grid.clone(),
            values: w
                .values
                .iter()
                .map(|&z| {
                    let mut total = Complex64::ZERO;
                    for m in 0..=self.k {
                        let c = self.coeff(m, self.k - m);
                        if c == 0.0 {
                            continue;
                        }
                        total += (binomial(self.k, m) as f64 * c)
                            * z.powu(m as u32)
                            * z.conj().powu((self.k - m) as u32);
                    }
                    total
                })
                .collect(),
        }
    }
}

pub fn factorial(n: usize) -> u64 {
    (1..=n as u64).product()
}

pub fn binomial(n: usize, m: usize) -> u64 {
    if m > n {
        return 0;
    }
    factorial(n) / (factorial(m) * factorial(n - m))
}
