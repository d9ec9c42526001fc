//! Lattice Hamiltonians, their canonical ensembles and the position
//! measurement likelihood.

use nalgebra::{DMatrix, DVector};

use crate::datagen::SampleSet;
use crate::error::{BiqmError, Result};
use crate::lattice::{build_laplacian, GridFunction, OperatorMatrix};
use crate::linalg::{max_abs, symmetric_eigen};

/// Relative gap (in units of the spectral range) below which two
/// eigenvalues are treated as degenerate.
pub const DEGENERACY_TOLERANCE: f64 = 1e-9;

/// `H = (1/2m)(−Δ) + diag(v)` with periodic wave-function boundary conditions.
pub fn build_hamiltonian(v: &GridFunction, mass: f64) -> Result<OperatorMatrix> {
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(BiqmError::InvalidParameter { name: "mass", reason: format!("{mass} must be positive") });
    }
    if let Some(index) = v.iter().position(|x| !x.is_finite()) {
        return Err(BiqmError::InvalidPotential { index });
    }
    let n = v.len();
    let mut h = build_laplacian(n, true)?.entries() * (0.5 / mass);
    for i in 0..n {
        h[(i, i)] += v[i];
    }
    OperatorMatrix::new(h, true)
}

/// Spectrum of a Hamiltonian together with its Boltzmann weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    weights: DVector<f64>,
    beta: f64,
    log_z: f64,
}

/// Full diagonalization of `h` and canonical weights at inverse temperature `beta`.
pub fn diagonalize(h: &OperatorMatrix, beta: f64) -> Result<Ensemble> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(BiqmError::InvalidParameter { name: "beta", reason: format!("{beta} must be finite and nonnegative") });
    }
    if !h.is_symmetric() {
        return Err(BiqmError::InvalidParameter { name: "hamiltonian", reason: "matrix is not flagged symmetric".into() });
    }
    let (eigenvalues, eigenvectors) = symmetric_eigen(h.entries())?;
    let ground = eigenvalues[0];
    // max-shifted exponentials: the largest weight is exp(0) = 1
    let shifted = eigenvalues.map(|e| (-beta * (e - ground)).exp());
    let z_shifted = shifted.sum();
    let weights = shifted / z_shifted;
    let log_z = -beta * ground + z_shifted.ln();
    Ok(Ensemble { eigenvalues, eigenvectors, weights, beta, log_z })
}

impl Ensemble {
    /// Convenience: build the Hamiltonian for `v` and diagonalize it.
    pub fn for_potential(v: &GridFunction, mass: f64, beta: f64) -> Result<Self> {
        diagonalize(&build_hamiltonian(v, mass)?, beta)
    }

    pub fn size(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Ascending eigenvalues `E_α`.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// Orthonormal eigenvectors as columns, `φ_α(x) = eigenvectors[(x, α)]`.
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    /// Boltzmann probabilities `p_α`.
    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn log_partition(&self) -> f64 {
        self.log_z
    }

    pub fn spectral_range(&self) -> f64 {
        self.eigenvalues[self.size() - 1] - self.eigenvalues[0]
    }

    /// Index pairs `(α, γ)`, `α < γ`, whose eigenvalues differ by less than
    /// [`DEGENERACY_TOLERANCE`] times the spectral range.
    pub fn degenerate_pairs(&self) -> Vec<(usize, usize)> {
        let tol = DEGENERACY_TOLERANCE * self.spectral_range().max(f64::MIN_POSITIVE);
        let n = self.size();
        let mut pairs = Vec::new();
        for a in 0..n {
            for g in a + 1..n {
                // eigenvalues are sorted, so the inner scan can stop early
                if self.eigenvalues[g] - self.eigenvalues[a] >= tol {
                    break;
                }
                pairs.push((a, g));
            }
        }
        pairs
    }

    /// Largest residual `‖Hφ_α − E_αφ_α‖` relative to `max|H|`.
    pub fn eigen_residual(&self, h: &OperatorMatrix) -> f64 {
        let hv = h.entries() * &self.eigenvectors;
        let mut worst: f64 = 0.0;
        for a in 0..self.size() {
            let r = hv.column(a) - self.eigenvectors.column(a) * self.eigenvalues[a];
            worst = worst.max(r.norm());
        }
        worst / max_abs(h.entries()).max(f64::MIN_POSITIVE)
    }

    /// Thermal expectation of a per-state quantity.
    pub fn thermal_average(&self, per_state: impl Fn(usize) -> f64) -> f64 {
        (0..self.size()).map(|a| self.weights[a] * per_state(a)).sum()
    }
}

/// `p(x) = Σ_α p_α |φ_α(x)|²`.
pub fn likelihood_density(e: &Ensemble) -> GridFunction {
    let phi = e.eigenvectors();
    let n = e.size();
    let density = DVector::from_fn(n, |x, _| (0..n).map(|a| e.weights()[a] * phi[(x, a)] * phi[(x, a)]).sum());
    GridFunction::from_vector_unchecked(density)
}

/// Log-likelihood of independent position measurements together with
/// flags for the degenerate outcomes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLikelihood {
    pub value: f64,
    /// Some datum sits where the density vanishes; `value` is `-inf`.
    pub zero_density: bool,
    /// The sample set was empty; `value` is 0.
    pub empty_data: bool,
}

/// `Σ_i ln p(x_i)`.
pub fn log_likelihood(data: &SampleSet, e: &Ensemble) -> Result<LogLikelihood> {
    let density = likelihood_density(e);
    log_likelihood_from_density(data, &density)
}

pub(crate) fn log_likelihood_from_density(data: &SampleSet, density: &GridFunction) -> Result<LogLikelihood> {
    data.check_lattice(density.len())?;
    if data.is_empty() {
        return Ok(LogLikelihood { value: 0.0, zero_density: false, empty_data: true });
    }
    let mut value = 0.0;
    for (x, count) in data.counts(density.len()).into_iter().enumerate() {
        if count == 0 {
            continue;
        }
        if density[x] <= 0.0 {
            return Ok(LogLikelihood { value: f64::NEG_INFINITY, zero_density: true, empty_data: false });
        }
        value += count as f64 * density[x].ln();
    }
    Ok(LogLikelihood { value, zero_density: false, empty_data: false })
}

/// `U = Σ_α p_α E_α`.
pub fn average_energy(e: &Ensemble) -> f64 {
    e.thermal_average(|a| e.eigenvalues()[a])
}
