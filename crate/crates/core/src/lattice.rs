//! Grid functions on a one-dimensional lattice with unit spacing and the
//! dense operators built on them: Laplacians, shifted differences,
//! periodicity covariances, disconnected filters, symmetry covariances and
//! the radial-basis-function covariance.
//!
//! Lattice sites are stored 0-based; site `j` corresponds to the physical
//! coordinate `x = j + 1`.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector};

use crate::error::{BiqmError, Result};
use crate::linalg::{max_abs, symmetric_eigen};

/// A finite real function on the lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    values: DVector<f64>,
}

impl GridFunction {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        Self::from_vector(DVector::from_vec(values))
    }

    pub fn from_vector(values: DVector<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(BiqmError::InvalidSize(values.len()));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(BiqmError::InvalidPotential { index });
        }
        Ok(Self { values })
    }

    /// Wraps a vector that is known to be finite (internal arithmetic results).
    pub(crate) fn from_vector_unchecked(values: DVector<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self { values }
    }

    pub fn zeros(n: usize) -> Self {
        Self { values: DVector::zeros(n) }
    }

    pub fn constant(n: usize, value: f64) -> Self {
        Self { values: DVector::from_element(n, value) }
    }

    /// Samples `f` at the physical coordinates `x = 1..=n`.
    pub fn from_positions(n: usize, f: impl Fn(f64) -> f64) -> Self {
        Self { values: DVector::from_iterator(n, (1..=n).map(|x| f(x as f64))) }
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.values
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.values.iter().copied().collect()
    }
}

impl Deref for GridFunction {
    type Target = DVector<f64>;

    fn deref(&self) -> &DVector<f64> {
        &self.values
    }
}

/// A dense square operator acting on grid functions.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMatrix {
    entries: DMatrix<f64>,
    symmetric: bool,
}

impl OperatorMatrix {
    /// Wraps a square matrix. When `symmetric` is set the matrix must be
    /// exactly symmetric.
    pub fn new(entries: DMatrix<f64>, symmetric: bool) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(BiqmError::ShapeMismatch { expected: entries.nrows(), found: entries.ncols() });
        }
        if symmetric && !is_exactly_symmetric(&entries) {
            return Err(BiqmError::InvalidParameter {
                name: "entries",
                reason: "matrix flagged symmetric is not exactly symmetric".into(),
            });
        }
        Ok(Self { entries, symmetric })
    }

    /// Builds a symmetric operator, averaging `m` with its transpose.
    pub fn symmetrized(m: DMatrix<f64>) -> Self {
        let entries = (&m + m.transpose()) * 0.5;
        Self { entries, symmetric: true }
    }

    pub fn identity(n: usize) -> Self {
        Self { entries: DMatrix::identity(n, n), symmetric: true }
    }

    pub fn zeros(n: usize) -> Self {
        Self { entries: DMatrix::zeros(n, n), symmetric: true }
    }

    pub fn size(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn transpose(&self) -> Self {
        Self { entries: self.entries.transpose(), symmetric: self.symmetric }
    }

    pub fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(v.len())?;
        Ok(&self.entries * v)
    }

    /// `⟨v|M|v⟩`.
    pub fn quadratic_form(&self, v: &DVector<f64>) -> Result<f64> {
        self.check_len(v.len())?;
        Ok(v.dot(&(&self.entries * v)))
    }

    /// `MᵀM`, always symmetric.
    pub fn gram(&self) -> Self {
        Self::symmetrized(self.entries.transpose() * &self.entries)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { entries: &self.entries * factor, symmetric: self.symmetric }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_len(other.size())?;
        Ok(Self { entries: &self.entries + &other.entries, symmetric: self.symmetric && other.symmetric })
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        self.check_len(other.size())?;
        Ok(Self { entries: &self.entries * &other.entries, symmetric: false })
    }

    /// Ascending eigenvalues of the symmetric part.
    pub fn eigenvalues(&self) -> Result<DVector<f64>> {
        let sym = (&self.entries + self.entries.transpose()) * 0.5;
        Ok(symmetric_eigen(&sym)?.0)
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(self.eigenvalues()?[0])
    }

    /// Checks positive semidefiniteness with tolerance `1e-10 * max|entry|`.
    pub fn check_psd(&self) -> Result<()> {
        let min = self.min_eigenvalue()?;
        if min < -1e-10 * max_abs(&self.entries).max(f64::MIN_POSITIVE) {
            return Err(BiqmError::NotPsd { min_eigenvalue: min });
        }
        Ok(())
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.size() {
            return Err(BiqmError::ShapeMismatch { expected: self.size(), found: len });
        }
        Ok(())
    }
}

fn is_exactly_symmetric(m: &DMatrix<f64>) -> bool {
    let n = m.nrows();
    (0..n).all(|i| (0..i).all(|j| m[(i, j)] == m[(j, i)]))
}

/// Boundary treatment for difference operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    /// Indices wrap modulo the lattice size.
    Periodic,
    /// Differences reaching past the last site are dropped.
    Open,
}

fn check_size(n: usize) -> Result<()> {
    if n < 2 {
        return Err(BiqmError::InvalidSize(n));
    }
    Ok(())
}

fn check_weight(name: &'static str, value: f64) -> Result<()> {
    if !value.is_finite() || value < 0.0 {
        return Err(BiqmError::InvalidWeight { name, value });
    }
    Ok(())
}

/// The positive operator `−Δ` with unit spacing.
///
/// Periodic: diagonal 2, nearest neighbours and wrap-around corners −1.
/// Open: the same without corners (zero outside the lattice).
pub fn build_laplacian(n: usize, periodic: bool) -> Result<OperatorMatrix> {
    check_size(n)?;
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = 2.0;
        if i + 1 < n {
            m[(i, i + 1)] -= 1.0;
            m[(i + 1, i)] -= 1.0;
        } else if periodic {
            m[(i, 0)] -= 1.0;
            m[(0, i)] -= 1.0;
        }
    }
    OperatorMatrix::new(m, true)
}

/// Right difference `(∇ᵣv)(x) = v(x+θ) − v(x)` with periodic wrap-around.
pub fn build_shift_difference(n: usize, theta: usize) -> Result<OperatorMatrix> {
    build_shift_difference_with(n, theta, Boundary::Periodic)
}

pub fn build_shift_difference_with(n: usize, theta: usize, boundary: Boundary) -> Result<OperatorMatrix> {
    check_size(n)?;
    if theta == 0 || theta >= n {
        return Err(BiqmError::InvalidShift { theta, size: n });
    }
    let mut m = DMatrix::zeros(n, n);
    for r in 0..n {
        let target = r + theta;
        if target < n {
            m[(r, r)] -= 1.0;
            m[(r, target)] += 1.0;
        } else if boundary == Boundary::Periodic {
            m[(r, r)] -= 1.0;
            m[(r, target - n)] += 1.0;
        }
    }
    OperatorMatrix::new(m, false)
}

/// Left difference `(∇ₗv)(x) = v(x) − v(x−θ)` with periodic wrap-around.
pub fn build_left_difference(n: usize, theta: usize) -> Result<OperatorMatrix> {
    check_size(n)?;
    if theta == 0 || theta >= n {
        return Err(BiqmError::InvalidShift { theta, size: n });
    }
    let mut m = DMatrix::zeros(n, n);
    for r in 0..n {
        m[(r, r)] += 1.0;
        m[(r, (r + n - theta) % n)] -= 1.0;
    }
    OperatorMatrix::new(m, false)
}

/// `−Δ_θ = (∇ᵣ_θ)ᵀ∇ᵣ_θ`.
pub fn build_shift_laplacian(n: usize, theta: usize, boundary: Boundary) -> Result<OperatorMatrix> {
    Ok(build_shift_difference_with(n, theta, boundary)?.gram())
}

/// Cyclic shift `(Sv)(x) = v(x+k)`.
pub fn build_cyclic_shift(n: usize, k: usize) -> Result<OperatorMatrix> {
    check_size(n)?;
    let mut m = DMatrix::zeros(n, n);
    for r in 0..n {
        m[(r, (r + k) % n)] = 1.0;
    }
    OperatorMatrix::new(m, false)
}

/// Approximate-periodicity inverse covariance `λ(−Δ − γΔ_θ)`.
pub fn build_periodic_invcov(n: usize, theta: usize, lambda: f64, gamma: f64) -> Result<OperatorMatrix> {
    check_weight("lambda", lambda)?;
    check_weight("gamma", gamma)?;
    let laplacian = build_laplacian(n, true)?;
    let shifted = build_shift_laplacian(n, theta, Boundary::Periodic)?;
    Ok(laplacian.add(&shifted.scaled(gamma))?.scaled(lambda))
}

/// `Σ_k w(k) (∇ᵣ_{kθ})ᵀ∇ᵣ_{kθ}` for `k = 1..=weights.len()`.
pub fn build_multiperiod_energy_matrix(n: usize, theta: usize, weights: &[f64]) -> Result<OperatorMatrix> {
    check_size(n)?;
    if theta == 0 || theta >= n {
        return Err(BiqmError::InvalidShift { theta, size: n });
    }
    let mut total = OperatorMatrix::zeros(n);
    for (i, &w) in weights.iter().enumerate() {
        check_weight("w(k)", w)?;
        let shift = (i + 1) * theta;
        if shift >= n {
            return Err(BiqmError::InvalidRange { shift, size: n });
        }
        let term = build_shift_laplacian(n, shift, Boundary::Periodic)?.scaled(w);
        total = total.add(&term)?;
    }
    Ok(total)
}

/// Zeroes every row of `w` that couples sites from different regions.
///
/// `regions` must partition `0..n`.
pub fn disconnect_filter(w: &OperatorMatrix, regions: &[Vec<usize>]) -> Result<OperatorMatrix> {
    let n = w.size();
    let mut label = vec![usize::MAX; n];
    for (r, region) in regions.iter().enumerate() {
        for &i in region {
            if i >= n {
                return Err(BiqmError::InvalidPartition(format!("index {i} outside lattice of size {n}")));
            }
            if label[i] != usize::MAX {
                return Err(BiqmError::InvalidPartition(format!("index {i} appears in more than one region")));
            }
            label[i] = r;
        }
    }
    if let Some(i) = label.iter().position(|&l| l == usize::MAX) {
        return Err(BiqmError::InvalidPartition(format!("index {i} is not covered by any region")));
    }

    let mut m = w.entries().clone();
    for r in 0..n {
        let mut seen = None;
        let mut crosses = false;
        for c in 0..n {
            if m[(r, c)] != 0.0 {
                match seen {
                    None => seen = Some(label[c]),
                    Some(l) if l != label[c] => crosses = true,
                    _ => {}
                }
            }
        }
        if crosses {
            m.row_mut(r).fill(0.0);
        }
    }
    OperatorMatrix::new(m, false)
}

/// `(I − S)ᵀ(I − S)`: vectors invariant under `S` lie in the null space.
pub fn build_symmetry_invcov(s: &OperatorMatrix) -> Result<OperatorMatrix> {
    let n = s.size();
    let diff = &DMatrix::<f64>::identity(n, n) - s.entries();
    Ok(OperatorMatrix::symmetrized(diff.transpose() * diff))
}

/// `exp(σ²(−Δ)/2)` through the eigendecomposition of the periodic `−Δ`.
pub fn build_rbf_invcov(n: usize, sigma_rbf: f64) -> Result<OperatorMatrix> {
    check_weight("sigma_rbf", sigma_rbf)?;
    let laplacian = build_laplacian(n, true)?;
    let (values, vectors) = symmetric_eigen(laplacian.entries())?;
    let scale = DVector::from_iterator(n, values.iter().map(|&l| (0.5 * sigma_rbf * sigma_rbf * l).exp()));
    let m = &vectors * DMatrix::from_diagonal(&scale) * vectors.transpose();
    Ok(OperatorMatrix::symmetrized(m))
}

/// Rounds a real period to the integer lattice shift used for operators.
///
/// Returns the shift and the signed rounding offset `shift − period`.
pub fn round_period(period: f64) -> Result<(usize, f64)> {
    if !period.is_finite() || period < 0.5 {
        return Err(BiqmError::InvalidParameter { name: "period", reason: format!("{period} does not round to a positive shift") });
    }
    let shift = period.round();
    Ok((shift as usize, shift - period))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[[f64; 6]; 6]) -> DMatrix<f64> {
        DMatrix::from_fn(6, 6, |i, j| rows[i][j])
    }

    #[test]
    fn laplacian_six_sites_matches_printed_matrix() {
        let expected = mat(&[
            [2., -1., 0., 0., 0., -1.],
            [-1., 2., -1., 0., 0., 0.],
            [0., -1., 2., -1., 0., 0.],
            [0., 0., -1., 2., -1., 0.],
            [0., 0., 0., -1., 2., -1.],
            [-1., 0., 0., 0., -1., 2.],
        ]);
        assert_eq!(build_laplacian(6, true).unwrap().entries(), &expected);
    }

    #[test]
    fn laplacian_rejects_tiny_lattice() {
        assert_eq!(build_laplacian(1, true), Err(BiqmError::InvalidSize(1)));
    }

    #[test]
    fn laplacian_four_sites_spectrum() {
        // Explicit 4x4 circulant: eigenvalues 2 - 2cos(2πk/4) = {0, 2, 4, 2}.
        let vals = build_laplacian(4, true).unwrap().eigenvalues().unwrap();
        let expected = [0.0, 2.0, 2.0, 4.0];
        for (v, e) in vals.iter().zip(expected) {
            assert!((v - e).abs() < 1e-12, "{v} vs {e}");
        }
    }

    #[test]
    fn laplacian_annihilates_constants() {
        for n in 2..20 {
            let l = build_laplacian(n, true).unwrap();
            let out = l.apply(&DVector::from_element(n, 3.7)).unwrap();
            assert!(out.iter().all(|x| *x == 0.0));
        }
    }

    #[test]
    fn open_laplacian_is_positive_definite() {
        let l = build_laplacian(10, false).unwrap();
        assert!(l.min_eigenvalue().unwrap() > 1e-3);
    }

    #[test]
    fn shift_difference_rows() {
        let d = build_shift_difference(6, 2).unwrap();
        let expected = mat(&[
            [-1., 0., 1., 0., 0., 0.],
            [0., -1., 0., 1., 0., 0.],
            [0., 0., -1., 0., 1., 0.],
            [0., 0., 0., -1., 0., 1.],
            [1., 0., 0., 0., -1., 0.],
            [0., 1., 0., 0., 0., -1.],
        ]);
        assert_eq!(d.entries(), &expected);
        let lap = build_shift_laplacian(6, 2, Boundary::Periodic).unwrap();
        let expected_lap = mat(&[
            [2., 0., -1., 0., -1., 0.],
            [0., 2., 0., -1., 0., -1.],
            [-1., 0., 2., 0., -1., 0.],
            [0., -1., 0., 2., 0., -1.],
            [-1., 0., -1., 0., 2., 0.],
            [0., -1., 0., -1., 0., 2.],
        ]);
        assert_eq!(lap.entries(), &expected_lap);
    }

    #[test]
    fn shift_difference_rejects_bad_shift() {
        assert!(matches!(build_shift_difference(6, 0), Err(BiqmError::InvalidShift { .. })));
        assert!(matches!(build_shift_difference(6, 6), Err(BiqmError::InvalidShift { .. })));
    }

    #[test]
    fn shift_difference_kills_periodic_functions() {
        let theta = 3;
        let v = GridFunction::from_positions(12, |x| (2.0 * std::f64::consts::PI * x / theta as f64).sin());
        let out = build_shift_difference(12, theta).unwrap().apply(&v).unwrap();
        assert!(out.amax() <= 1e-12);
    }

    #[test]
    fn left_transpose_is_negative_right() {
        for theta in 1..7 {
            let l = build_left_difference(7, theta).unwrap();
            let r = build_shift_difference(7, theta).unwrap();
            assert_eq!(l.entries().transpose(), -r.entries());
        }
    }

    #[test]
    fn open_shift_difference_drops_wrapping_rows() {
        let d = build_shift_difference_with(6, 2, Boundary::Open).unwrap();
        assert!(d.entries().row(4).iter().all(|x| *x == 0.0));
        assert!(d.entries().row(5).iter().all(|x| *x == 0.0));
        assert_eq!(d.entries()[(0, 2)], 1.0);
    }

    #[test]
    fn periodic_invcov_reduces_to_laplacian() {
        let k = build_periodic_invcov(8, 2, 0.5, 0.0).unwrap();
        assert_eq!(k, build_laplacian(8, true).unwrap().scaled(0.5));
        assert!(build_periodic_invcov(8, 2, -1.0, 0.0).is_err());
        assert!(build_periodic_invcov(8, 2, 1.0, -0.1).is_err());
    }

    #[test]
    fn periodic_invcov_reference_parameters_are_psd_with_constant_null_space() {
        let k = build_periodic_invcov(36, 6, 0.2, 1.0).unwrap();
        assert!(k.is_symmetric());
        k.check_psd().unwrap();
        let out = k.apply(&DVector::from_element(36, 1.0)).unwrap();
        assert!(out.amax() < 1e-14);
    }

    #[test]
    fn multiperiod_single_term_is_shift_laplacian() {
        let m = build_multiperiod_energy_matrix(12, 3, &[1.0]).unwrap();
        assert_eq!(m, build_shift_laplacian(12, 3, Boundary::Periodic).unwrap().add(&OperatorMatrix::zeros(12)).unwrap());
        assert!(matches!(
            build_multiperiod_energy_matrix(12, 3, &[1.0, 1.0, 1.0, 1.0]),
            Err(BiqmError::InvalidRange { shift: 12, size: 12 })
        ));
    }

    #[test]
    fn multiperiod_quadratic_form_matches_direct_sum() {
        let n = 12;
        let theta = 3;
        let weights = [1.0, 0.5];
        let v: Vec<f64> = (0..n).map(|i| ((i * 7 + 3) % 11) as f64 * 0.37 - 1.1).collect();
        let m = build_multiperiod_energy_matrix(n, theta, &weights).unwrap();
        let form = 0.5 * m.quadratic_form(&DVector::from_vec(v.clone())).unwrap();
        let mut direct = 0.0;
        for (k, w) in weights.iter().enumerate() {
            let shift = (k + 1) * theta;
            for x in 0..n {
                let d = v[x] - v[(x + shift) % n];
                direct += 0.5 * w * d * d;
            }
        }
        assert!((form - direct).abs() < 1e-12 * direct.abs().max(1.0));
    }

    #[test]
    fn disconnect_filter_printed_example() {
        let w = build_shift_difference(6, 1).unwrap();
        let wt = disconnect_filter(&w, &[vec![0, 1, 2], vec![3, 4, 5]]).unwrap();
        let expected = mat(&[
            [-1., 1., 0., 0., 0., 0.],
            [0., -1., 1., 0., 0., 0.],
            [0., 0., 0., 0., 0., 0.],
            [0., 0., 0., -1., 1., 0.],
            [0., 0., 0., 0., -1., 1.],
            [0., 0., 0., 0., 0., 0.],
        ]);
        assert_eq!(wt.entries(), &expected);
        let k = wt.gram();
        let expected_k = mat(&[
            [1., -1., 0., 0., 0., 0.],
            [-1., 2., -1., 0., 0., 0.],
            [0., -1., 1., 0., 0., 0.],
            [0., 0., 0., 1., -1., 0.],
            [0., 0., 0., -1., 2., -1.],
            [0., 0., 0., 0., -1., 1.],
        ]);
        assert_eq!(k.entries(), &expected_k);
    }

    #[test]
    fn disconnect_filter_single_region_is_identity_map() {
        let w = build_shift_difference(6, 1).unwrap();
        assert_eq!(disconnect_filter(&w, &[(0..6).collect()]).unwrap().entries(), w.entries());
    }

    #[test]
    fn disconnect_filter_rejects_bad_partitions() {
        let w = build_shift_difference(4, 1).unwrap();
        assert!(matches!(disconnect_filter(&w, &[vec![0, 1], vec![1, 2, 3]]), Err(BiqmError::InvalidPartition(_))));
        assert!(matches!(disconnect_filter(&w, &[vec![0, 1], vec![2]]), Err(BiqmError::InvalidPartition(_))));
    }

    #[test]
    fn symmetry_invcov_special_cases() {
        let n = 9;
        assert_eq!(build_symmetry_invcov(&OperatorMatrix::identity(n)).unwrap(), OperatorMatrix::zeros(n));
        let unit = build_symmetry_invcov(&build_cyclic_shift(n, 1).unwrap()).unwrap();
        assert_eq!(unit.entries(), build_laplacian(n, true).unwrap().entries());
        let by3 = build_symmetry_invcov(&build_cyclic_shift(n, 3).unwrap()).unwrap();
        assert_eq!(by3.entries(), build_shift_laplacian(n, 3, Boundary::Periodic).unwrap().entries());
    }

    #[test]
    fn rbf_invcov_spectrum() {
        assert!((build_rbf_invcov(10, 0.0).unwrap().entries() - DMatrix::<f64>::identity(10, 10)).amax() < 1e-12);
        let sigma = 0.8;
        let k = build_rbf_invcov(10, sigma).unwrap();
        let got = k.eigenvalues().unwrap();
        let lap = build_laplacian(10, true).unwrap().eigenvalues().unwrap();
        for (g, l) in got.iter().zip(lap.iter()) {
            let e = (0.5 * sigma * sigma * l).exp();
            assert!((g - e).abs() < 1e-10 * e, "{g} vs {e}");
        }
        assert!((k.entries() - k.entries().transpose()).amax() <= 1e-12);
    }

    #[test]
    fn rounding_periods() {
        assert_eq!(round_period(6.0).unwrap(), (6, 0.0));
        let (s, off) = round_period(5.7).unwrap();
        assert_eq!(s, 6);
        assert!((off - 0.3).abs() < 1e-12);
        assert!(round_period(0.2).is_err());
    }

    #[test]
    fn grid_function_rejects_nonfinite() {
        assert!(matches!(GridFunction::new(vec![0.0, f64::NAN]), Err(BiqmError::InvalidPotential { index: 1 })));
        assert!(matches!(GridFunction::new(vec![0.0]), Err(BiqmError::InvalidSize(1))));
    }
}
