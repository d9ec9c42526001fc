//! Lattice gradients of the log-likelihood, the average-energy penalty, the
//! partition function and every prior energy, plus a central finite-difference
//! harness for checking them.
//!
//! Functional derivatives are identified with partial derivatives on the unit
//! lattice, `δ/δv(x) ≡ ∂/∂v_x`.

use nalgebra::{DMatrix, DVector};

use crate::datagen::SampleSet;
use crate::ensemble::{average_energy, likelihood_density, Ensemble};
use crate::error::{BiqmError, Result};
use crate::lattice::GridFunction;
use crate::priors::{sigmoid_derivative, switching_field, AuxFieldPrior, HyperfieldPrior, MixMode, PriorModel, SwitchForm};

/// A gradient together with the spectral conditions under which it was computed.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub gradient: GridFunction,
    pub degenerate_pairs: Vec<(usize, usize)>,
    /// Degenerate pairs were handled through the divided-difference limit.
    pub regularization_applied: bool,
}

impl GradientReport {
    fn plain(gradient: DVector<f64>) -> Self {
        Self { gradient: GridFunction::from_vector_unchecked(gradient), degenerate_pairs: Vec::new(), regularization_applied: false }
    }
}

/// Boltzmann weight, relative to the ground state, above which a state
/// counts as thermally occupied for the strict degeneracy policy.
pub const OCCUPATION_THRESHOLD: f64 = 1e-6;

/// What to do when two eigenvalues are closer than the degeneracy tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DegeneracyPolicy {
    /// Fail with [`BiqmError::DegenerateSpectrum`] when a degenerate pair is
    /// thermally occupied and `β > 0`; unoccupied pairs use the limit.
    #[default]
    Strict,
    /// Use the limit `(p_α − p_γ)/(E_α − E_γ) → −βp_α`, which is the exact
    /// derivative of the thermal density inside a degenerate subspace.
    DividedDifferenceLimit,
}

/// The two contributions to `∇ Σ_i ln p(x_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodGradientTerms {
    /// Eigenfunction perturbation: `Σ_i (1/p(x_i)) Σ_{α≠γ} M_αγ φ_α(x_i)φ_γ(x_i)φ_α(x)φ_γ(x)`
    /// with `M_αγ = (p_α − p_γ)/(E_α − E_γ)`.
    pub perturbation: DVector<f64>,
    /// Weight perturbation: `−β Σ_i (1/p(x_i)) [⟨|φ(x_i)|²|φ(x)|²⟩ − p(x_i)p(x)]`.
    pub covariance: DVector<f64>,
    pub degenerate_pairs: Vec<(usize, usize)>,
    pub regularization_applied: bool,
}

impl LikelihoodGradientTerms {
    pub fn total(&self) -> DVector<f64> {
        &self.perturbation + &self.covariance
    }
}

/// `(p_α − p_γ)/(E_α − E_γ)` for `α < γ`, evaluated as
/// `p_α·expm1(−βδ)/δ`, `δ = E_γ − E_α ≥ 0`, with the limit `−βp_α` at `δ = 0`.
fn divided_difference(e: &Ensemble, a: usize, g: usize) -> f64 {
    let pa = e.weights()[a];
    let delta = e.eigenvalues()[g] - e.eigenvalues()[a];
    if delta == 0.0 {
        -e.beta() * pa
    } else {
        pa * (-e.beta() * delta).exp_m1() / delta
    }
}

/// The pair matrix `M` with the given handling of degenerate pairs; the
/// diagonal is left at zero.
fn pair_matrix(e: &Ensemble, degenerate: &[(usize, usize)]) -> DMatrix<f64> {
    let n = e.size();
    let mut m = DMatrix::zeros(n, n);
    for a in 0..n {
        for g in a + 1..n {
            let value = divided_difference(e, a, g);
            m[(a, g)] = value;
            m[(g, a)] = value;
        }
    }
    for &(a, g) in degenerate {
        let value = -e.beta() * e.weights()[a];
        m[(a, g)] = value;
        m[(g, a)] = value;
    }
    m
}

/// Both terms of the likelihood gradient.
///
/// Data are grouped by site: with `c_s` measurements at site `s`, the
/// coefficient matrix `C = Σ_s (c_s/p(s)) (φ(s)φ(s)ᵀ) ∘ M` is accumulated
/// once and the perturbation term is `diag(Φ C Φᵀ)`, so the cost is
/// `O(N³)` regardless of the number of measurements.
pub fn grad_log_likelihood_terms(e: &Ensemble, data: &SampleSet, policy: DegeneracyPolicy) -> Result<LikelihoodGradientTerms> {
    let n = e.size();
    data.check_lattice(n)?;
    let pairs = e.degenerate_pairs();
    if e.beta() > 0.0 && policy == DegeneracyPolicy::Strict {
        let floor = OCCUPATION_THRESHOLD * e.weights()[0];
        let occupied: Vec<_> = pairs.iter().copied().filter(|&(a, _)| e.weights()[a] >= floor).collect();
        if !occupied.is_empty() {
            return Err(BiqmError::DegenerateSpectrum { pairs: occupied });
        }
    }
    let regularization_applied = !pairs.is_empty() && e.beta() > 0.0;

    let phi = e.eigenvectors();
    let weights = e.weights();
    let density = likelihood_density(e);
    let m = pair_matrix(e, if regularization_applied { &pairs } else { &[] });

    let mut c = DMatrix::<f64>::zeros(n, n);
    // per-state accumulation for the covariance term: Σ_s w_s p_α φ_α(s)²
    let mut occupation = DVector::<f64>::zeros(n);
    let mut total_weight = 0.0;
    for (s, count) in data.counts(n).into_iter().enumerate() {
        if count == 0 {
            continue;
        }
        if density[s] <= 0.0 {
            return Err(BiqmError::NumericalFailure(format!("likelihood vanishes at measured site {s}")));
        }
        let w = count as f64 / density[s];
        let row = phi.row(s).transpose();
        c += (&row * row.transpose()).component_mul(&m) * w;
        for a in 0..n {
            occupation[a] += w * weights[a] * row[a] * row[a];
        }
        total_weight += count as f64;
    }

    let perturbation = DVector::from_fn(n, |x, _| {
        let b = phi.row(x);
        (b * &c * b.transpose())[(0, 0)]
    });
    let beta = e.beta();
    let covariance = DVector::from_fn(n, |x, _| {
        let mut s = 0.0;
        for a in 0..n {
            s += occupation[a] * phi[(x, a)] * phi[(x, a)];
        }
        // Σ_s w_s p(s) p(x) = (Σ_s c_s) p(x)
        -beta * (s - total_weight * density[x])
    });
    Ok(LikelihoodGradientTerms { perturbation, covariance, degenerate_pairs: pairs, regularization_applied })
}

/// `∇ Σ_i ln p(x_i)` under the strict degeneracy policy.
pub fn grad_log_likelihood(e: &Ensemble, data: &SampleSet) -> Result<GradientReport> {
    grad_log_likelihood_with(e, data, DegeneracyPolicy::Strict)
}

pub fn grad_log_likelihood_with(e: &Ensemble, data: &SampleSet, policy: DegeneracyPolicy) -> Result<GradientReport> {
    let terms = grad_log_likelihood_terms(e, data, policy)?;
    Ok(GradientReport {
        gradient: GridFunction::from_vector_unchecked(terms.total()),
        degenerate_pairs: terms.degenerate_pairs,
        regularization_applied: terms.regularization_applied,
    })
}

/// Per-measurement Fisher information `Σ_x p(x) ∇ln p(x) ∇ln p(x)ᵀ` of the
/// likelihood; the expected Hessian of `−ln p(x_i)` for one measurement.
pub fn fisher_information(e: &Ensemble, policy: DegeneracyPolicy) -> Result<DMatrix<f64>> {
    let n = e.size();
    let density = likelihood_density(e);
    let mut fisher = DMatrix::<f64>::zeros(n, n);
    for x in 0..n {
        if density[x] <= 0.0 {
            continue;
        }
        let single = SampleSet::new(vec![x], 0, n)?;
        let g = grad_log_likelihood_terms(e, &single, policy)?.total();
        fisher += &g * g.transpose() * density[x];
    }
    Ok(fisher)
}

/// `∂E_α/∂v(x) = |φ_α(x)|²`.
pub fn grad_eigenvalue(e: &Ensemble, alpha: usize) -> Result<GridFunction> {
    if alpha >= e.size() {
        return Err(BiqmError::InvalidParameter { name: "alpha", reason: format!("state {alpha} outside spectrum of size {}", e.size()) });
    }
    Ok(GridFunction::from_vector_unchecked(e.eigenvectors().column(alpha).map(|x| x * x)))
}

/// `∂U/∂v(x) = ⟨|φ(x)|²[1 − β(E − U)]⟩`.
pub fn grad_average_energy(e: &Ensemble) -> DVector<f64> {
    let u = average_energy(e);
    let phi = e.eigenvectors();
    let n = e.size();
    let factors = DVector::from_fn(n, |a, _| e.weights()[a] * (1.0 - e.beta() * (e.eigenvalues()[a] - u)));
    DVector::from_fn(n, |x, _| (0..n).map(|a| factors[a] * phi[(x, a)] * phi[(x, a)]).sum())
}

/// Gradient of `E_U = (μ/2)(U − κ)²`.
pub fn grad_energy_penalty(e: &Ensemble, mu: f64, kappa: f64) -> Result<GridFunction> {
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(BiqmError::InvalidWeight { name: "mu", value: mu });
    }
    let scale = mu * (average_energy(e) - kappa);
    Ok(GridFunction::from_vector_unchecked(grad_average_energy(e) * scale))
}

/// `(μ/2)(U − κ)²`.
pub fn energy_penalty(e: &Ensemble, mu: f64, kappa: f64) -> f64 {
    let d = average_energy(e) - kappa;
    0.5 * mu * d * d
}

/// `∂ ln Z/∂v(x) = −β p(x)`.
pub fn grad_log_partition(e: &Ensemble) -> GridFunction {
    let p = likelihood_density(e);
    GridFunction::from_vector_unchecked(p.into_vector() * -e.beta())
}

fn hyperfield_gradient(h: &HyperfieldPrior, v: &DVector<f64>) -> Result<DVector<f64>> {
    let w1 = h.first.apply(v)?;
    let w2 = h.second.apply(v)?;
    let th = &h.field.values;
    let n = v.len();
    let t1 = DVector::from_fn(n, |x, _| {
        let t = (1.0 - th[x]) * w1[x] + th[x] * w2[x];
        (1.0 - th[x]) * t
    });
    let t2 = DVector::from_fn(n, |x, _| {
        let t = (1.0 - th[x]) * w1[x] + th[x] * w2[x];
        th[x] * t
    });
    Ok(h.first.filter.entries().transpose() * t1 + h.second.filter.entries().transpose() * t2)
}

/// Chain rule through `B = σ(|ω₁|² − |ω₂|² − ϑ)`: the energy is collected as
/// `W₁ᵀc₁ + W₂ᵀc₂`.
fn aux_field_gradient(a: &AuxFieldPrior, v: &DVector<f64>) -> Result<DVector<f64>> {
    let w1 = a.first.apply(v)?;
    let w2 = a.second.apply(v)?;
    let (b, arg) = switching_field(v, &a.first, &a.second, a.steepness, a.threshold)?;
    let ds = arg.map(|u| sigmoid_derivative(u, a.steepness));
    let (l1, l2) = a.weights;
    let n = v.len();

    // ∂(energy)/∂B(x), collected over the local term and the field hyperprior
    let mut db = match &a.aux_energy {
        Some(aux) => aux.field_gradient(&b)?,
        None => DVector::zeros(n),
    };
    let mut c1 = DVector::zeros(n);
    let mut c2 = DVector::zeros(n);
    for x in 0..n {
        match a.form {
            SwitchForm::Switched => {
                c1[x] = l1 * (1.0 - b[x]) * w1[x];
                c2[x] = l2 * b[x] * w2[x];
                db[x] += 0.5 * (l2 * w2[x] * w2[x] - l1 * w1[x] * w1[x]);
            }
            SwitchForm::Mixed => {
                let (s1, s2) = (l1.sqrt(), l2.sqrt());
                let t = (1.0 - b[x]) * s1 * w1[x] + b[x] * s2 * w2[x];
                c1[x] = t * (1.0 - b[x]) * s1;
                c2[x] = t * b[x] * s2;
                db[x] += t * (s2 * w2[x] - s1 * w1[x]);
            }
        }
        // ∂B(x)/∂v = σ′·(2ω₁W₁(x,·) − 2ω₂W₂(x,·))
        c1[x] += 2.0 * db[x] * ds[x] * w1[x];
        c2[x] -= 2.0 * db[x] * ds[x] * w2[x];
    }
    Ok(a.first.filter.entries().transpose() * c1 + a.second.filter.entries().transpose() * c2)
}

fn prior_gradient(model: &PriorModel, v: &DVector<f64>) -> Result<DVector<f64>> {
    match model {
        PriorModel::Gaussian(g) => g.gradient(v),
        PriorModel::GlobalMix(m) => match m.mode {
            MixMode::Energy => Ok(m.first.gradient(v)? * (1.0 - m.theta) + m.second.gradient(v)? * m.theta),
            MixMode::Template => m.mixed_term()?.gradient(v),
        },
        PriorModel::Hyperfield(h) => hyperfield_gradient(h, v),
        PriorModel::AuxField(a) => aux_field_gradient(a, v),
        PriorModel::Cup(c) => {
            let w = c.difference.apply(v)?;
            Ok(c.difference.filter.entries().transpose() * w.map(|y| 0.5 * c.params.derivative(y)))
        }
        PriorModel::Composite(parts) => {
            let mut total = DVector::zeros(v.len());
            for p in parts {
                total += prior_gradient(p, v)?;
            }
            Ok(total)
        }
    }
}

/// Gradient of the prior energy with hyperfields held fixed. Step-mode
/// auxiliary fields are piecewise constant in `v` and contribute no chain
/// term (subgradient 0 at ties).
pub fn grad_prior(model: &PriorModel, v: &GridFunction) -> Result<GradientReport> {
    Ok(GradientReport::plain(prior_gradient(model, v)?))
}

/// Largest coordinate error of `gradient` against central differences of
/// `energy`, relative to the largest finite-difference component (floored
/// at 1e−12).
pub fn fd_check<F>(energy: F, gradient: &DVector<f64>, v: &DVector<f64>, h: f64) -> Result<f64>
where
    F: Fn(&DVector<f64>) -> Result<f64>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(BiqmError::InvalidParameter { name: "h", reason: format!("step {h} must be positive") });
    }
    if gradient.len() != v.len() {
        return Err(BiqmError::ShapeMismatch { expected: v.len(), found: gradient.len() });
    }
    let fd = finite_difference_gradient(energy, v, h)?;
    let scale = fd.amax().max(1e-12);
    Ok((gradient - &fd).amax() / scale)
}

/// Central-difference gradient of `energy` at `v`.
pub fn finite_difference_gradient<F>(energy: F, v: &DVector<f64>, h: f64) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> Result<f64>,
{
    let mut fd = DVector::zeros(v.len());
    let mut probe = v.clone();
    for j in 0..v.len() {
        probe[j] = v[j] + h;
        let plus = energy(&probe)?;
        probe[j] = v[j] - h;
        let minus = energy(&probe)?;
        probe[j] = v[j];
        fd[j] = (plus - minus) / (2.0 * h);
    }
    Ok(fd)
}
