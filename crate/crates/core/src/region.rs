//! Quadratic-Gaussian rate region for distributed source coding.
//!
//! For every nonempty subset `X` of the measuring nodes the rates must satisfy
//!
//! ```text
//! sum_{n in X} R_n >= g(X) - KAPPA * sum_{n in X} log D_n,
//! g(X) = KAPPA * log(det O / det O[X^c])
//! ```
//!
//! with `KAPPA = 1/2`. Subsets are bit masks over measuring positions, so the
//! constraint for mask `m` is stored at index `m - 1`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{exp, log, LOG_BASE};

/// Weight of the distortion term in the region bound.
pub const KAPPA: f64 = 0.5;

/// Determinants at or below this value are treated as singular.
pub const SINGULAR_DET: f64 = 1e-12;

/// Coefficient multiplying `ln D` in the linear form of the region constraints.
#[inline]
pub fn kappa_ln() -> f64 {
    KAPPA / LOG_BASE.ln()
}

/// Nonempty subsets as bit masks, in increasing order.
pub fn subsets(k: usize) -> impl Iterator<Item = u32> {
    1..(1u32 << k)
}

/// Members of a subset mask.
pub fn members(mask: u32) -> impl Iterator<Item = usize> {
    (0..32).filter(move |i| mask & (1 << i) != 0)
}

/// Log-determinant (in [`LOG_BASE`]) of a symmetric positive definite matrix.
pub fn log_det(m: &DMatrix<f64>) -> Result<f64> {
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    let chol = nalgebra::Cholesky::new(m.clone())
        .ok_or_else(|| Error::Singular(format!("{}x{} matrix is not positive definite", m.nrows(), m.ncols())))?;
    let ln_det: f64 = chol.l_dirty().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    if ln_det.exp() <= SINGULAR_DET {
        return Err(Error::Singular(format!("determinant {:e} below threshold", ln_det.exp())));
    }
    Ok(ln_det / LOG_BASE.ln())
}

fn principal_submatrix(o: &DMatrix<f64>, mask: u32) -> DMatrix<f64> {
    let idx: Vec<usize> = members(mask).filter(|&i| i < o.nrows()).collect();
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| o[(idx[i], idx[j])])
}

/// `KAPPA * log(det O / det O[X^c])`, the conditional entropy term of subset `X`.
pub fn conditional_entropy_gauss(mask: u32, o: &DMatrix<f64>) -> Result<f64> {
    let k = o.nrows();
    if mask == 0 || mask >= (1u32 << k) {
        return Err(Error::OutOfRange(format!("subset mask {mask:#b} invalid for {k} nodes")));
    }
    let full = (1u32 << k) - 1;
    let ld = log_det(o)?;
    let ld_c = log_det(&principal_submatrix(o, full & !mask))?;
    Ok(KAPPA * (ld - ld_c))
}

/// Correlation matrix with unit diagonal and constant off-diagonal `omega`.
pub fn exchangeable_correlation(k: usize, omega: f64) -> DMatrix<f64> {
    DMatrix::from_fn(k, k, |i, j| if i == j { 1.0 } else { omega })
}

/// `1 - 2^{-r_d}`, the fraction of the common component revealed by side
/// information acquired at rate `r_d`.
pub fn side_info_strength(r_d: f64) -> f64 {
    1.0 - 2f64.powf(-r_d)
}

/// Source correlation conditioned on side information acquired at rate `r_d`
/// for an exchangeable source with common-component weight `omega`.
pub fn side_info_correlation(k: usize, omega: f64, r_d: f64) -> DMatrix<f64> {
    let w = side_info_strength(r_d);
    DMatrix::from_fn(k, k, |i, j| if i == j { 1.0 - omega * w } else { omega * (1.0 - w) })
}

/// Rate bound that makes every source reachable at distortion `d_min`; the
/// default `R_max`.
pub fn full_set_rate(o: &DMatrix<f64>, d_min: f64) -> Result<f64> {
    Ok(KAPPA * (log_det(o)? - o.nrows() as f64 * log(d_min)))
}

/// The region for one correlation matrix, with `g(X)` cached per subset.
#[derive(Debug, Clone, PartialEq)]
pub struct RateRegion {
    k: usize,
    entropy: Vec<f64>,
}

impl RateRegion {
    pub fn new(o: &DMatrix<f64>) -> Result<Self> {
        let k = o.nrows();
        if k == 0 || k != o.ncols() {
            return Err(Error::OutOfRange("correlation must be square and nonempty".into()));
        }
        if k > 16 {
            return Err(Error::TooLarge(format!("{k} measuring nodes")));
        }
        let full = (1u32 << k) - 1;
        let ld = log_det(o)?;
        let mut cache = vec![0.0; 1 << k];
        for mask in 0..full {
            cache[mask as usize] = log_det(&principal_submatrix(o, mask))?;
        }
        let entropy = subsets(k).map(|m| KAPPA * (ld - cache[(full & !m) as usize])).collect();
        Ok(Self { k, entropy })
    }

    /// Closed form for the side-information-conditioned exchangeable source,
    /// avoiding matrix factorizations in the inner loop of the side-rate search.
    pub fn exchangeable(k: usize, omega: f64, r_d: f64) -> Result<Self> {
        if k == 0 || k > 16 {
            return Err(Error::OutOfRange(format!("{k} measuring nodes")));
        }
        let w = side_info_strength(r_d);
        let det = |j: usize| -> f64 {
            if j == 0 {
                1.0
            } else {
                (1.0 - omega).powi(j as i32 - 1) * (1.0 + (j as f64 - 1.0) * omega - j as f64 * omega * w)
            }
        };
        let full_det = det(k);
        if !(full_det > SINGULAR_DET) {
            return Err(Error::Singular(format!("determinant {full_det:e} below threshold")));
        }
        let entropy = subsets(k)
            .map(|m| KAPPA * (log(full_det) - log(det(k - m.count_ones() as usize))))
            .collect();
        Ok(Self { k, entropy })
    }

    /// Number of measuring nodes.
    pub fn size(&self) -> usize {
        self.k
    }

    pub fn num_constraints(&self) -> usize {
        self.entropy.len()
    }

    /// `g(X)` for a subset mask.
    #[inline]
    pub fn entropy(&self, mask: u32) -> f64 {
        self.entropy[mask as usize - 1]
    }

    pub fn entropies(&self) -> &[f64] {
        &self.entropy
    }

    /// Minimum sum rate of subset `X` at distortions `d` (clipped at zero).
    pub fn rate_bound(&self, mask: u32, d: &[f64]) -> Result<f64> {
        let mut s = self.entropy(mask);
        for n in members(mask) {
            if !(d[n] > 0.0) {
                return Err(Error::OutOfRange(format!("distortion {} must be positive", d[n])));
            }
            s -= KAPPA * log(d[n]);
        }
        Ok(s.max(0.0))
    }

    /// Deficit `bound - sum rate` of each subset; positive entries are violations.
    pub fn deficits(&self, r: &[f64], d: &[f64]) -> Vec<f64> {
        subsets(self.k)
            .map(|m| {
                let mut s = self.entropy(m);
                for n in members(m) {
                    s -= r[n] + KAPPA * log(d[n]);
                }
                s
            })
            .collect()
    }

    /// Largest deficit, zero when feasible.
    pub fn max_violation(&self, r: &[f64], d: &[f64]) -> f64 {
        self.deficits(r, d).into_iter().fold(0.0, f64::max)
    }

    /// Subsets whose constraint fails by more than a relative `1e-9`.
    pub fn violated(&self, r: &[f64], d: &[f64]) -> Vec<u32> {
        self.deficits(r, d)
            .into_iter()
            .zip(subsets(self.k))
            .filter(|(def, m)| *def > 1e-9 * self.entropy(*m).abs().max(1.0))
            .map(|(_, m)| m)
            .collect()
    }

    pub fn feasible(&self, r: &[f64], d: &[f64]) -> bool {
        self.violated(r, d).is_empty()
    }

    /// Distortion at which a single node's rate bound vanishes when every other
    /// node is perfectly known, `exp(g({n}) / KAPPA)`.
    pub fn conditional_variance(&self, node: usize) -> f64 {
        exp(self.entropy(1 << node) / KAPPA)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Cofactor-expansion determinant, independent of the Cholesky path.
    fn det_oracle(m: &DMatrix<f64>) -> f64 {
        let n = m.nrows();
        if n == 0 {
            return 1.0;
        }
        if n == 1 {
            return m[(0, 0)];
        }
        (0..n)
            .map(|j| {
                let minor = m.clone().remove_row(0).remove_column(j);
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                sign * m[(0, j)] * det_oracle(&minor)
            })
            .sum()
    }

    #[test]
    fn identity_entropy_is_zero() {
        let o = DMatrix::identity(3, 3);
        assert!(conditional_entropy_gauss(0b001, &o).unwrap().abs() < 1e-15);
        assert!(conditional_entropy_gauss(0b111, &o).unwrap().abs() < 1e-15);
    }

    #[test]
    fn exchangeable_half_matches_cofactor_oracle() {
        let o = exchangeable_correlation(3, 0.5);
        let det = det_oracle(&o);
        assert!((det - 0.5).abs() < 1e-12);
        let sub = det_oracle(&DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]));
        assert!((sub - 0.75).abs() < 1e-12);
        let g1 = conditional_entropy_gauss(0b001, &o).unwrap();
        assert!((g1 - 0.5 * (2.0f64 / 3.0).ln()).abs() < 1e-12);
        let gall = conditional_entropy_gauss(0b111, &o).unwrap();
        assert!((gall - 0.5 * 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn rate_bound_examples() {
        let id = RateRegion::new(&DMatrix::identity(3, 3)).unwrap();
        let d = [0.25, 1.0, 1.0];
        assert!((id.rate_bound(0b001, &d).unwrap() - 0.5 * 4f64.ln()).abs() < 1e-12);
        assert_eq!(id.rate_bound(0b010, &d).unwrap(), 0.0);
        let half = RateRegion::new(&exchangeable_correlation(3, 0.5)).unwrap();
        let d = [0.1; 3];
        assert!((half.rate_bound(0b111, &d).unwrap() - 0.5 * (0.5f64 / 0.001).ln()).abs() < 1e-12);
        assert!(half.rate_bound(0b001, &[0.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn feasibility_examples() {
        let id = RateRegion::new(&DMatrix::identity(3, 3)).unwrap();
        let d = [0.2, 0.5, 1.0];
        let r: Vec<f64> = (0..3).map(|n| id.rate_bound(1 << n, &d).unwrap()).collect();
        assert!(id.feasible(&r, &d));
        let half = RateRegion::new(&exchangeable_correlation(3, 0.5)).unwrap();
        let v = half.violated(&[0.0; 3], &[0.001; 3]);
        assert!(v.contains(&0b111));
        let d = [0.1; 3];
        let mut r = vec![0.0; 3];
        for n in 0..3 {
            r[n] = half.rate_bound(0b111, &d).unwrap() / 3.0 + 0.2;
        }
        assert!(half.feasible(&r, &d));
        r[0] -= 0.05;
        r[1] += 0.05;
        assert!(half.feasible(&r, &d));
    }

    #[test]
    fn closed_form_matches_factorization() {
        for &omega in &[0.0, 0.3, 0.9] {
            for &rd in &[0.0, 0.7, 3.0] {
                let a = RateRegion::new(&side_info_correlation(3, omega, rd)).unwrap();
                let b = RateRegion::exchangeable(3, omega, rd).unwrap();
                for (x, y) in a.entropies().iter().zip(b.entropies()) {
                    assert!((x - y).abs() < 1e-10, "{omega} {rd}: {x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn side_info_matrix_examples() {
        assert_eq!(side_info_correlation(3, 0.5, 0.0), exchangeable_correlation(3, 0.5));
        let m = side_info_correlation(3, 0.5, 1.0);
        assert!((m[(0, 0)] - 0.75).abs() < 1e-15 && (m[(0, 1)] - 0.25).abs() < 1e-15);
        let lim = side_info_correlation(3, 0.5, 200.0);
        assert!((lim[(1, 1)] - 0.5).abs() < 1e-15 && lim[(0, 2)].abs() < 1e-15);
    }

    #[test]
    fn singular_matrix_rejected() {
        assert!(RateRegion::new(&exchangeable_correlation(3, 1.0)).is_err());
        assert!(RateRegion::exchangeable(3, 1.0, 0.0).is_err());
    }

    #[test]
    fn default_rate_cap() {
        let r = full_set_rate(&exchangeable_correlation(3, 0.5), 0.001).unwrap();
        assert!((r - 0.5 * (0.5f64 / 1e-9).ln()).abs() < 1e-12);
    }
}
