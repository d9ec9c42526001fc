//! Prior energies over potentials.
//!
//! Every prior is expressed as an energy `E(v) = −ln p(v) + const`:
//! Gaussian priors, global template/covariance mixing, local hyperfields
//! with their normalization, non-Gaussian priors built on auxiliary
//! switching fields, and cup-function priors. Analytic gradients live in
//! [`crate::gradients`].

use nalgebra::{DMatrix, DVector};

use crate::error::{BiqmError, Result};
use crate::lattice::{build_laplacian, build_shift_difference, GridFunction, OperatorMatrix};
use crate::linalg::symmetric_eigen;

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(BiqmError::ShapeMismatch { expected, found });
    }
    Ok(())
}

/// Steepness of the sigmoid `σ(x) = 1/(1 + e^{−2νx})`, or its step limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Steepness {
    Finite(f64),
    /// `Θ(x)` with the tie convention `Θ(0) = 1`.
    Step,
}

impl Steepness {
    pub fn is_step(self) -> bool {
        matches!(self, Steepness::Step)
    }

    /// ν for finite steepness, `inf` in step mode.
    pub fn nu(self) -> f64 {
        match self {
            Steepness::Finite(nu) => nu,
            Steepness::Step => f64::INFINITY,
        }
    }
}

pub fn sigmoid(x: f64, steepness: Steepness) -> f64 {
    match steepness {
        Steepness::Finite(nu) => 0.5 * ((nu * x).tanh() + 1.0),
        Steepness::Step => {
            if x >= 0.0 {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// `dσ/dx`; identically zero in step mode (subgradient 0 at the jump).
pub fn sigmoid_derivative(x: f64, steepness: Steepness) -> f64 {
    match steepness {
        Steepness::Finite(nu) => {
            let t = (nu * x).tanh();
            0.5 * nu * (1.0 - t * t)
        }
        Steepness::Step => 0.0,
    }
}

/// A filter `W` and template `t` defining `ω = W(v − t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredDifference {
    pub filter: OperatorMatrix,
    pub template: GridFunction,
}

impl FilteredDifference {
    pub fn new(filter: OperatorMatrix, template: GridFunction) -> Result<Self> {
        check_len(filter.size(), template.len())?;
        Ok(Self { filter, template })
    }

    pub fn size(&self) -> usize {
        self.template.len()
    }

    pub fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(self.size(), v.len())?;
        Ok(self.filter.entries() * (v - self.template.as_vector()))
    }
}

/// `ω = W(v − v0)`.
pub fn filtered_difference(w: &OperatorMatrix, v: &GridFunction, v0: &GridFunction) -> Result<GridFunction> {
    check_len(w.size(), v.len())?;
    check_len(w.size(), v0.len())?;
    Ok(GridFunction::from_vector_unchecked(w.entries() * (v.as_vector() - v0.as_vector())))
}

/// A Gaussian energy `½⟨v − v0|K0|v − v0⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianTerm {
    pub template: GridFunction,
    pub invcov: OperatorMatrix,
}

impl GaussianTerm {
    pub fn new(template: GridFunction, invcov: OperatorMatrix) -> Result<Self> {
        check_len(invcov.size(), template.len())?;
        Ok(Self { template, invcov })
    }

    pub fn energy(&self, v: &DVector<f64>) -> Result<f64> {
        check_len(self.template.len(), v.len())?;
        let d = v - self.template.as_vector();
        Ok(0.5 * self.invcov.quadratic_form(&d)?)
    }

    pub fn gradient(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(self.template.len(), v.len())?;
        self.invcov.apply(&(v - self.template.as_vector()))
    }
}

pub fn gaussian_energy(v: &GridFunction, v0: &GridFunction, k0: &OperatorMatrix) -> Result<f64> {
    GaussianTerm::new(v0.clone(), k0.clone())?.energy(v)
}

pub fn gaussian_grad(v: &GridFunction, v0: &GridFunction, k0: &OperatorMatrix) -> Result<GridFunction> {
    Ok(GridFunction::from_vector_unchecked(GaussianTerm::new(v0.clone(), k0.clone())?.gradient(v)?))
}

/// `θ₁ sin(2πx/θ₂ + θ₃)` on `x = 1..=n`.
pub fn periodic_template(amplitude: f64, period: f64, phase: f64, n: usize) -> Result<GridFunction> {
    if period == 0.0 || !period.is_finite() {
        return Err(BiqmError::InvalidParameter { name: "period", reason: format!("{period} must be finite and nonzero") });
    }
    let tau = 2.0 * std::f64::consts::PI;
    GridFunction::new((1..=n).map(|x| amplitude * (tau * x as f64 / period + phase).sin()).collect())
}

/// `sin²(2πx/6)·sign(sin(2πx/6))`, the alternative template for impurity regions.
pub fn signed_square_template(period: f64, n: usize) -> Result<GridFunction> {
    let base = periodic_template(1.0, period, 0.0, n)?;
    GridFunction::new(base.iter().map(|s| s * s.abs()).collect())
}

/// How a global hyperparameter `θ ∈ [0, 1]` combines two Gaussian terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixMode {
    /// `(1−θ)E₁ + θE₂`.
    Energy,
    /// A single Gaussian with template `(1−θ)v₁ + θv₂` and inverse
    /// covariance `(1−θ)K₁ + θK₂`.
    Template,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalMix {
    pub theta: f64,
    pub mode: MixMode,
    pub first: GaussianTerm,
    pub second: GaussianTerm,
}

impl GlobalMix {
    pub fn new(theta: f64, mode: MixMode, first: GaussianTerm, second: GaussianTerm) -> Result<Self> {
        if !(0.0..=1.0).contains(&theta) {
            return Err(BiqmError::InvalidParameter { name: "theta", reason: format!("{theta} outside [0, 1]") });
        }
        check_len(first.template.len(), second.template.len())?;
        Ok(Self { theta, mode, first, second })
    }

    /// The combined Gaussian used in template mode.
    pub fn mixed_term(&self) -> Result<GaussianTerm> {
        let t = self.theta;
        let template =
            GridFunction::from_vector_unchecked(self.first.template.as_vector() * (1.0 - t) + self.second.template.as_vector() * t);
        let invcov = self.first.invcov.scaled(1.0 - t).add(&self.second.invcov.scaled(t))?;
        GaussianTerm::new(template, invcov)
    }

    pub fn energy(&self, v: &DVector<f64>) -> Result<f64> {
        match self.mode {
            MixMode::Energy => Ok((1.0 - self.theta) * self.first.energy(v)? + self.theta * self.second.energy(v)?),
            MixMode::Template => self.mixed_term()?.energy(v),
        }
    }
}

pub fn global_mix_energy(v: &GridFunction, theta: f64, first: &GaussianTerm, second: &GaussianTerm, mode: MixMode) -> Result<f64> {
    GlobalMix::new(theta, mode, first.clone(), second.clone())?.energy(v)
}

/// What a [`FieldState`] represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    BinaryHyperfield,
    RealHyperfield,
    /// `B(x; v)`, recomputed from the potential.
    Auxiliary,
}

/// A switching field over the lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    pub kind: FieldKind,
    pub values: GridFunction,
    pub steepness: Steepness,
}

impl FieldState {
    pub fn binary(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|&b| b != 0.0 && b != 1.0) {
            return Err(BiqmError::InvalidParameter { name: "field", reason: format!("value {} at site {i} is not binary", values[i]) });
        }
        Ok(Self { kind: FieldKind::BinaryHyperfield, values: GridFunction::new(values)?, steepness: Steepness::Step })
    }

    pub fn real(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|b| !(0.0..=1.0).contains(b)) {
            return Err(BiqmError::InvalidParameter { name: "field", reason: format!("value {} at site {i} outside [0, 1]", values[i]) });
        }
        Ok(Self { kind: FieldKind::RealHyperfield, values: GridFunction::new(values)?, steepness: Steepness::Finite(1.0) })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&b| b == 0.0 || b == 1.0)
    }
}

/// Number of adjacent, non-wrapping site pairs whose values differ.
pub fn discontinuity_count(values: &[f64]) -> usize {
    values.windows(2).filter(|w| w[0] != w[1]).count()
}

/// Rows of `(1−θ(x))W₁ + θ(x)W₂`.
fn mixed_filter(theta: &DVector<f64>, first: &OperatorMatrix, second: &OperatorMatrix) -> DMatrix<f64> {
    let n = theta.len();
    DMatrix::from_fn(n, n, |r, c| (1.0 - theta[r]) * first.entries()[(r, c)] + theta[r] * second.entries()[(r, c)])
}

/// `ln Z` of a degenerate Gaussian with inverse covariance `K`, summed over
/// the nonzero spectrum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogNormalization {
    pub value: f64,
    pub rank: usize,
    pub zero_modes: usize,
}

/// `−½ Σ_{λᵢ > ε} ln(λᵢ/2π)` with `ε = 1e−10 · spectral range`.
pub fn log_normalization(k: &OperatorMatrix) -> Result<LogNormalization> {
    let (values, _) = symmetric_eigen(k.entries())?;
    let n = values.len();
    let scale = (values[n - 1] - values[0]).max(values[n - 1].abs()).max(f64::MIN_POSITIVE);
    let eps = 1e-10 * scale;
    if values[0] < -eps {
        return Err(BiqmError::NotPsd { min_eigenvalue: values[0] });
    }
    let tau = 2.0 * std::f64::consts::PI;
    let mut value = 0.0;
    let mut rank = 0;
    for &l in values.iter().filter(|&&l| l > eps) {
        value -= 0.5 * (l / tau).ln();
        rank += 1;
    }
    Ok(LogNormalization { value, rank, zero_modes: n - rank })
}

/// A local hyperfield `θ(x)` mixing two filtered differences,
/// `ω(x; θ) = (1−θ(x))ω₁(x) + θ(x)ω₂(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperfieldPrior {
    pub field: FieldState,
    pub first: FilteredDifference,
    pub second: FilteredDifference,
    pub include_normalization: bool,
    /// Optional hyperprior on θ; it does not depend on `v`.
    pub hyperprior: Option<AuxEnergy>,
}

impl HyperfieldPrior {
    pub fn new(field: FieldState, first: FilteredDifference, second: FilteredDifference, include_normalization: bool) -> Result<Self> {
        check_len(field.len(), first.size())?;
        check_len(field.len(), second.size())?;
        if field.values.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(BiqmError::InvalidParameter { name: "theta", reason: "hyperfield values must lie in [0, 1]".into() });
        }
        Ok(Self { field, first, second, include_normalization, hyperprior: None })
    }

    pub fn with_hyperprior(mut self, hyperprior: AuxEnergy) -> Self {
        self.hyperprior = Some(hyperprior);
        self
    }

    /// `ln Z_V(θ)` for the mixed filter.
    pub fn log_normalization(&self, theta: &DVector<f64>) -> Result<LogNormalization> {
        let w = mixed_filter(theta, &self.first.filter, &self.second.filter);
        log_normalization(&OperatorMatrix::symmetrized(w.transpose() * w))
    }

    /// Energy for an arbitrary field `theta`, including the hyperprior.
    pub fn energy_with_field(&self, v: &DVector<f64>, theta: &DVector<f64>) -> Result<f64> {
        let w1 = self.first.apply(v)?;
        let w2 = self.second.apply(v)?;
        let mut energy = 0.0;
        for x in 0..theta.len() {
            let t = (1.0 - theta[x]) * w1[x] + theta[x] * w2[x];
            energy += t * t;
        }
        energy *= 0.5;
        if self.include_normalization {
            energy += self.log_normalization(theta)?.value;
        }
        if let Some(h) = &self.hyperprior {
            energy += h.energy(theta)?;
        }
        Ok(energy)
    }

    pub fn energy(&self, v: &DVector<f64>) -> Result<f64> {
        self.energy_with_field(v, &self.field.values)
    }
}

/// `½Σ|(1−θ)ω₁ + θω₂|² (+ ln Z_V(θ))`.
pub fn hyperfield_energy(
    v: &GridFunction,
    theta: &FieldState,
    first: &FilteredDifference,
    second: &FilteredDifference,
    include_normalization: bool,
) -> Result<f64> {
    HyperfieldPrior::new(theta.clone(), first.clone(), second.clone(), include_normalization)?.energy(v)
}

/// The switched form `½Σ[(1−θ)|ω₁|² + θ|ω₂|²] (+ ln Z_V(θ))`, identical to
/// [`hyperfield_energy`] for binary θ.
pub fn hyperfield_switched_energy(
    v: &GridFunction,
    theta: &FieldState,
    first: &FilteredDifference,
    second: &FilteredDifference,
    include_normalization: bool,
) -> Result<f64> {
    let prior = HyperfieldPrior::new(theta.clone(), first.clone(), second.clone(), include_normalization)?;
    let w1 = first.apply(v)?;
    let w2 = second.apply(v)?;
    let th = &theta.values;
    let mut energy = 0.0;
    for x in 0..th.len() {
        energy += (1.0 - th[x]) * (w1[x] * w1[x]) + th[x] * (w2[x] * w2[x]);
    }
    energy *= 0.5;
    if include_normalization {
        energy += prior.log_normalization(th)?.value;
    }
    Ok(energy)
}

/// Combines `½‖v − ṽ0‖² + ½⟨v|K|v⟩` into one Gaussian with template
/// `(I+K)⁻¹ṽ0` and inverse covariance `I+K`.
pub fn effective_template(v0_tilde: &GridFunction, k: &OperatorMatrix) -> Result<(GridFunction, OperatorMatrix)> {
    check_len(k.size(), v0_tilde.len())?;
    let n = k.size();
    let k0 = OperatorMatrix::identity(n).add(k)?;
    let lu = k0.entries().clone().lu();
    let v0 = lu.solve(v0_tilde.as_vector()).ok_or_else(|| BiqmError::Singular("I + K is not invertible".into()))?;
    Ok((GridFunction::from_vector(v0)?, k0))
}

/// Local templates `v_x(x′; θ) = (1−θ(x))v₁(x′) + θ(x)v₂(x′)` with local
/// filter rows `W_x(θ′) = (1−θ′(x))W₁(x,·) + θ′(x)W₂(x,·)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalTemplatePrior {
    pub first: FilteredDifference,
    pub second: FilteredDifference,
    /// Selects the template per filter row.
    pub template_field: DVector<f64>,
    /// Selects the filter per row.
    pub filter_field: DVector<f64>,
}

impl LocalTemplatePrior {
    fn row(&self, x: usize) -> DVector<f64> {
        let t = self.filter_field[x];
        let r1 = self.first.filter.entries().row(x).transpose();
        let r2 = self.second.filter.entries().row(x).transpose();
        r1 * (1.0 - t) + r2 * t
    }

    fn local_template(&self, x: usize) -> DVector<f64> {
        let t = self.template_field[x];
        self.first.template.as_vector() * (1.0 - t) + self.second.template.as_vector() * t
    }

    /// `½ Σ_x |W_x(θ′)·(v − v_x(θ))|²`.
    pub fn direct_energy(&self, v: &DVector<f64>) -> Result<f64> {
        check_len(self.first.size(), v.len())?;
        let mut e = 0.0;
        for x in 0..v.len() {
            let w = self.row(x).dot(&(v - self.local_template(x)));
            e += w * w;
        }
        Ok(0.5 * e)
    }

    /// Effective inverse covariance `Σ_x W_x W_xᵀ` and template
    /// `K0⁺ Σ_x W_x W_xᵀ v_x` (pseudo-inverse on the range of `K0`).
    pub fn effective(&self) -> Result<GaussianTerm> {
        let n = self.first.size();
        let mut k0 = DMatrix::zeros(n, n);
        let mut rhs = DVector::zeros(n);
        for x in 0..n {
            let w = self.row(x);
            let outer = &w * w.transpose();
            rhs += &outer * self.local_template(x);
            k0 += outer;
        }
        let k0 = OperatorMatrix::symmetrized(k0);
        let (values, vectors) = symmetric_eigen(k0.entries())?;
        let cutoff = 1e-12 * values[n - 1].abs().max(f64::MIN_POSITIVE);
        let coeffs = vectors.transpose() * rhs;
        let scaled = DVector::from_fn(n, |i, _| if values[i] > cutoff { coeffs[i] / values[i] } else { 0.0 });
        let template = GridFunction::from_vector(&vectors * scaled)?;
        GaussianTerm::new(template, k0)
    }
}

/// `B(x) = σ(|ω₁(x)|² − |ω₂(x)|² − ϑ)`.
pub fn auxiliary_field(
    v: &GridFunction,
    first: &FilteredDifference,
    second: &FilteredDifference,
    steepness: Steepness,
    threshold: f64,
) -> Result<FieldState> {
    let (b, _) = switching_field(v, first, second, steepness, threshold)?;
    Ok(FieldState { kind: FieldKind::Auxiliary, values: GridFunction::from_vector_unchecked(b), steepness })
}

/// Returns `B` and the switching argument `u − ϑ`.
pub(crate) fn switching_field(
    v: &DVector<f64>,
    first: &FilteredDifference,
    second: &FilteredDifference,
    steepness: Steepness,
    threshold: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let w1 = first.apply(v)?;
    let w2 = second.apply(v)?;
    let arg = DVector::from_fn(v.len(), |x, _| w1[x] * w1[x] - w2[x] * w2[x] - threshold);
    let b = arg.map(|a| sigmoid(a, steepness));
    Ok((b, arg))
}

/// Additional prior energies on a switching field.
#[derive(Debug, Clone, PartialEq)]
pub enum AuxEnergy {
    /// `(τ/2)·N_d`.
    Count { tau: f64 },
    /// `(τ/2)Σ|ω_B|²`, `ω_B = W_B(B − t_B)`.
    Quadratic { tau: f64, difference: FilteredDifference },
    /// `(τ/2)Σσ(|ω_B|² − ϑ_B)`.
    Sigmoid { tau: f64, difference: FilteredDifference, threshold: f64, steepness: Steepness },
}

impl AuxEnergy {
    pub fn energy(&self, field: &DVector<f64>) -> Result<f64> {
        match self {
            AuxEnergy::Count { tau } => Ok(0.5 * tau * discontinuity_count(field.as_slice()) as f64),
            AuxEnergy::Quadratic { tau, difference } => {
                let w = difference.apply(field)?;
                Ok(0.5 * tau * w.norm_squared())
            }
            AuxEnergy::Sigmoid { tau, difference, threshold, steepness } => {
                let w = difference.apply(field)?;
                Ok(0.5 * tau * w.iter().map(|x| sigmoid(x * x - threshold, *steepness)).sum::<f64>())
            }
        }
    }

    /// `∂E/∂B`; the count energy is piecewise constant and contributes zero.
    pub fn field_gradient(&self, field: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            AuxEnergy::Count { .. } => Ok(DVector::zeros(field.len())),
            AuxEnergy::Quadratic { tau, difference } => {
                let w = difference.apply(field)?;
                Ok(difference.filter.entries().transpose() * w * *tau)
            }
            AuxEnergy::Sigmoid { tau, difference, threshold, steepness } => {
                let w = difference.apply(field)?;
                let s = DVector::from_fn(w.len(), |x, _| sigmoid_derivative(w[x] * w[x] - threshold, *steepness) * w[x]);
                Ok(difference.filter.entries().transpose() * s * *tau)
            }
        }
    }
}

pub fn aux_prior_energy(field: &FieldState, energy: &AuxEnergy) -> Result<f64> {
    energy.energy(&field.values)
}

/// `(λ₁/2)Σ|v − v0|²(1 − B) + (λ₂/2)⟨v|−Δ|v⟩`.
pub fn switch_energy_fixed_reference(v: &GridFunction, v0: &GridFunction, b: &FieldState, lambda1: f64, lambda2: f64) -> Result<f64> {
    check_len(v.len(), v0.len())?;
    check_len(v.len(), b.len())?;
    let mut local = 0.0;
    for x in 0..v.len() {
        let d = v[x] - v0[x];
        local += d * d * (1.0 - b.values[x]);
    }
    let smooth = build_laplacian(v.len(), true)?.quadratic_form(v)?;
    Ok(0.5 * lambda1 * local + 0.5 * lambda2 * smooth)
}

/// `(λ₁/2)Σ(1 − B)|ω₁|² + (λ₂/2)ΣB|ω₂|²` with `ωᵢ = ∇(v − vᵢ)`.
pub fn switch_energy_two_references(
    v: &GridFunction,
    v1: &GridFunction,
    v2: &GridFunction,
    b: &FieldState,
    lambda1: f64,
    lambda2: f64,
) -> Result<f64> {
    check_len(v.len(), b.len())?;
    let d = build_shift_difference(v.len(), 1)?;
    let w1 = filtered_difference(&d, v, v1)?;
    let w2 = filtered_difference(&d, v, v2)?;
    let mut e = 0.0;
    for x in 0..v.len() {
        e += lambda1 * (1.0 - b.values[x]) * w1[x] * w1[x] + lambda2 * b.values[x] * w2[x] * w2[x];
    }
    Ok(0.5 * e)
}

/// How the auxiliary field combines the two filtered differences.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwitchForm {
    /// `½Σ[λ₁(1−B)|ω₁|² + λ₂B|ω₂|²]`.
    Switched,
    /// `½Σ|(1−B)√λ₁ω₁ + B√λ₂ω₂|²`.
    Mixed,
}

/// Non-Gaussian prior with auxiliary field `B(x; v) = σ(|ω₁|² − |ω₂|² − ϑ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxFieldPrior {
    pub first: FilteredDifference,
    pub second: FilteredDifference,
    pub weights: (f64, f64),
    pub threshold: f64,
    pub steepness: Steepness,
    pub form: SwitchForm,
    pub aux_energy: Option<AuxEnergy>,
}

impl AuxFieldPrior {
    pub fn field(&self, v: &DVector<f64>) -> Result<FieldState> {
        let (b, _) = switching_field(v, &self.first, &self.second, self.steepness, self.threshold)?;
        Ok(FieldState { kind: FieldKind::Auxiliary, values: GridFunction::from_vector_unchecked(b), steepness: self.steepness })
    }

    pub fn energy(&self, v: &DVector<f64>) -> Result<f64> {
        let w1 = self.first.apply(v)?;
        let w2 = self.second.apply(v)?;
        let (b, _) = switching_field(v, &self.first, &self.second, self.steepness, self.threshold)?;
        let (l1, l2) = self.weights;
        let mut e = 0.0;
        for x in 0..v.len() {
            e += match self.form {
                SwitchForm::Switched => l1 * (1.0 - b[x]) * w1[x] * w1[x] + l2 * b[x] * w2[x] * w2[x],
                SwitchForm::Mixed => {
                    let t = (1.0 - b[x]) * l1.sqrt() * w1[x] + b[x] * l2.sqrt() * w2[x];
                    t * t
                }
            };
        }
        let mut energy = 0.5 * e;
        if let Some(aux) = &self.aux_energy {
            energy += aux.energy(&b)?;
        }
        Ok(energy)
    }
}

/// Parameters of `ψ(y) = a(1 − 1/(1 + (|y − x0|/b)^γ))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CupParams {
    pub a: f64,
    pub b: f64,
    pub gamma: f64,
    pub x0: f64,
}

impl CupParams {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [("a", self.a), ("b", self.b), ("gamma", self.gamma)] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(BiqmError::InvalidParameter { name, reason: format!("{value} must be positive") });
            }
        }
        Ok(())
    }

    pub fn value(&self, y: f64) -> f64 {
        let r = ((y - self.x0).abs() / self.b).powf(self.gamma);
        self.a * (1.0 - 1.0 / (1.0 + r))
    }

    /// `ψ′(y)`, taken as 0 at `y = x0`.
    pub fn derivative(&self, y: f64) -> f64 {
        let d = y - self.x0;
        if d == 0.0 {
            return 0.0;
        }
        let s = d.abs() / self.b;
        let r = s.powf(self.gamma);
        self.a * self.gamma * r / (s * self.b) / ((1.0 + r) * (1.0 + r)) * d.signum()
    }
}

/// `½ Σ_x ψ(ω(x))`.
pub fn cup_energy(omega: &GridFunction, params: &CupParams) -> Result<f64> {
    params.validate()?;
    Ok(0.5 * omega.iter().map(|&w| params.value(w)).sum::<f64>())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CupPrior {
    pub difference: FilteredDifference,
    pub params: CupParams,
}

impl CupPrior {
    pub fn energy(&self, v: &DVector<f64>) -> Result<f64> {
        let w = self.difference.apply(v)?;
        Ok(0.5 * w.iter().map(|&y| self.params.value(y)).sum::<f64>())
    }
}

/// Every supported prior over potentials.
#[derive(Debug, Clone, PartialEq)]
pub enum PriorModel {
    Gaussian(GaussianTerm),
    GlobalMix(GlobalMix),
    Hyperfield(HyperfieldPrior),
    AuxField(AuxFieldPrior),
    Cup(CupPrior),
    Composite(Vec<PriorModel>),
}

impl PriorModel {
    pub fn variant_name(&self) -> &'static str {
        match self {
            PriorModel::Gaussian(_) => "gaussian",
            PriorModel::GlobalMix(_) => "global-mix",
            PriorModel::Hyperfield(_) => "hyperfield",
            PriorModel::AuxField(_) => "aux-field",
            PriorModel::Cup(_) => "cup",
            PriorModel::Composite(_) => "composite",
        }
    }

    pub fn energy(&self, v: &DVector<f64>) -> Result<f64> {
        match self {
            PriorModel::Gaussian(g) => g.energy(v),
            PriorModel::GlobalMix(m) => m.energy(v),
            PriorModel::Hyperfield(h) => h.energy(v),
            PriorModel::AuxField(a) => a.energy(v),
            PriorModel::Cup(c) => c.energy(v),
            PriorModel::Composite(parts) => parts.iter().map(|p| p.energy(v)).sum(),
        }
    }

    /// A fixed positive semidefinite curvature estimate used as preconditioner.
    pub fn curvature(&self, n: usize) -> Result<OperatorMatrix> {
        match self {
            PriorModel::Gaussian(g) => Ok(g.invcov.clone()),
            PriorModel::GlobalMix(m) => m.first.invcov.scaled(1.0 - m.theta).add(&m.second.invcov.scaled(m.theta)),
            PriorModel::Hyperfield(h) => Ok(h.first.filter.gram().add(&h.second.filter.gram())?.scaled(0.5)),
            PriorModel::AuxField(a) => {
                Ok(a.first.filter.gram().scaled(a.weights.0).add(&a.second.filter.gram().scaled(a.weights.1))?.scaled(0.5))
            }
            PriorModel::Cup(_) => Ok(OperatorMatrix::zeros(n)),
            PriorModel::Composite(parts) => {
                let mut total = OperatorMatrix::zeros(n);
                for p in parts {
                    total = total.add(&p.curvature(n)?)?;
                }
                Ok(total)
            }
        }
    }

    /// The first auxiliary-field component, if any.
    pub fn aux_component(&self) -> Option<&AuxFieldPrior> {
        match self {
            PriorModel::AuxField(a) => Some(a),
            PriorModel::Composite(parts) => parts.iter().find_map(|p| p.aux_component()),
            _ => None,
        }
    }

    pub fn aux_component_mut(&mut self) -> Option<&mut AuxFieldPrior> {
        match self {
            PriorModel::AuxField(a) => Some(a),
            PriorModel::Composite(parts) => parts.iter_mut().find_map(|p| p.aux_component_mut()),
            _ => None,
        }
    }

    pub fn hyperfield_component(&self) -> Option<&HyperfieldPrior> {
        match self {
            PriorModel::Hyperfield(h) => Some(h),
            PriorModel::Composite(parts) => parts.iter().find_map(|p| p.hyperfield_component()),
            _ => None,
        }
    }

    pub fn hyperfield_component_mut(&mut self) -> Option<&mut HyperfieldPrior> {
        match self {
            PriorModel::Hyperfield(h) => Some(h),
            PriorModel::Composite(parts) => parts.iter_mut().find_map(|p| p.hyperfield_component_mut()),
            _ => None,
        }
    }

    /// Locally switched fixed reference plus Laplacian smoothness:
    /// `(λ₁/2)Σ|v − v0|²(1 − B) + (λ₂/2)⟨v|−Δ|v⟩`, `B = σ(|v − v0|² − ϑ)`.
    pub fn switch_fixed_reference(v0: GridFunction, lambda1: f64, lambda2: f64, threshold: f64, steepness: Steepness) -> Result<Self> {
        let n = v0.len();
        let aux = AuxFieldPrior {
            first: FilteredDifference::new(OperatorMatrix::identity(n), v0)?,
            second: FilteredDifference::new(OperatorMatrix::zeros(n), GridFunction::zeros(n))?,
            weights: (lambda1, 0.0),
            threshold,
            steepness,
            form: SwitchForm::Switched,
            aux_energy: None,
        };
        let smooth = GaussianTerm::new(GridFunction::zeros(n), build_laplacian(n, true)?.scaled(lambda2))?;
        Ok(PriorModel::Composite(vec![PriorModel::AuxField(aux), PriorModel::Gaussian(smooth)]))
    }

    /// Switching between two first-difference references with
    /// `B = σ(|∇(v − v₁)|² − |∇(v − v₂)|² − ϑ)`.
    pub fn switch_two_references(
        v1: GridFunction,
        v2: GridFunction,
        lambda1: f64,
        lambda2: f64,
        threshold: f64,
        steepness: Steepness,
        aux_energy: Option<AuxEnergy>,
    ) -> Result<Self> {
        let d = build_shift_difference(v1.len(), 1)?;
        Ok(PriorModel::AuxField(AuxFieldPrior {
            first: FilteredDifference::new(d.clone(), v1)?,
            second: FilteredDifference::new(d, v2)?,
            weights: (lambda1, lambda2),
            threshold,
            steepness,
            form: SwitchForm::Switched,
            aux_energy,
        }))
    }

    /// Local hyperfield selecting between templates with identity covariance
    /// plus Laplacian smoothness:
    /// `(λ₁/2)‖v − v0(θ)‖² + (λ₂/2)⟨v|−Δ|v⟩ + (τ/2)N_d(θ)`.
    pub fn hyperfield_templates(
        v1: GridFunction,
        v2: GridFunction,
        theta: FieldState,
        lambda1: f64,
        lambda2: f64,
        tau: f64,
    ) -> Result<Self> {
        let n = v1.len();
        let w = OperatorMatrix::identity(n).scaled(lambda1.sqrt());
        let hyper = HyperfieldPrior::new(theta, FilteredDifference::new(w.clone(), v1)?, FilteredDifference::new(w, v2)?, false)?
            .with_hyperprior(AuxEnergy::Count { tau });
        let smooth = GaussianTerm::new(GridFunction::zeros(n), build_laplacian(n, true)?.scaled(lambda2))?;
        Ok(PriorModel::Composite(vec![PriorModel::Hyperfield(hyper), PriorModel::Gaussian(smooth)]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{true_potential, SplitMix64};

    fn random_vec(rng: &mut SplitMix64, n: usize, scale: f64) -> DVector<f64> {
        DVector::from_fn(n, |_, _| scale * (2.0 * rng.next_f64() - 1.0))
    }

    fn grid(v: DVector<f64>) -> GridFunction {
        GridFunction::from_vector(v).unwrap()
    }

    #[test]
    fn gaussian_energy_basics() {
        let n = 6;
        let v0 = GridFunction::from_positions(n, |x| x.sin());
        let k = build_laplacian(n, true).unwrap();
        assert_eq!(gaussian_energy(&v0, &v0, &k).unwrap(), 0.0);
        assert!(gaussian_grad(&v0, &v0, &k).unwrap().iter().all(|g| *g == 0.0));
        let mut unit = v0.to_vec();
        unit[2] += 1.0;
        let e = gaussian_energy(&GridFunction::new(unit).unwrap(), &v0, &OperatorMatrix::identity(n)).unwrap();
        assert!((e - 0.5).abs() < 1e-15);
        assert!(gaussian_energy(&GridFunction::zeros(5), &v0, &k).is_err());
    }

    #[test]
    fn filtered_difference_of_first_difference() {
        let v = GridFunction::from_positions(6, |x| x * x);
        let w = build_shift_difference(6, 1).unwrap();
        let omega = filtered_difference(&w, &v, &GridFunction::zeros(6)).unwrap();
        for x in 0..5 {
            assert_eq!(omega[x], v[x + 1] - v[x]);
        }
        assert_eq!(omega[5], v[0] - v[5]);
        assert!(filtered_difference(&w, &v, &v).unwrap().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn filtered_energy_identity() {
        let mut rng = SplitMix64::new(11);
        for _ in 0..20 {
            let n = 8;
            let w = OperatorMatrix::new(DMatrix::from_fn(n, n, |_, _| 2.0 * rng.next_f64() - 1.0), false).unwrap();
            let v = grid(random_vec(&mut rng, n, 2.0));
            let v0 = grid(random_vec(&mut rng, n, 2.0));
            let omega = filtered_difference(&w, &v, &v0).unwrap();
            let lhs = 0.5 * omega.norm_squared();
            let rhs = gaussian_energy(&v, &v0, &w.gram()).unwrap();
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.max(1.0), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn periodic_templates() {
        let t = periodic_template(1.0, 6.0, 0.0, 36).unwrap();
        assert_eq!(t[0], (2.0 * std::f64::consts::PI / 6.0).sin());
        assert!(periodic_template(0.0, 6.0, 0.3, 36).unwrap().iter().all(|x| *x == 0.0));
        let v1 = periodic_template(2.0 / 3.0, 6.0, 0.0, 36).unwrap();
        assert!((v1[0] - 2.0 / 3.0 * (std::f64::consts::PI / 3.0).sin()).abs() < 1e-15);
        assert!(periodic_template(1.0, 0.0, 0.0, 36).is_err());
    }

    #[test]
    fn signed_square_template_values() {
        let v2 = signed_square_template(6.0, 36).unwrap();
        let s = (std::f64::consts::PI / 3.0).sin();
        assert!((v2[0] - s * s).abs() < 1e-15);
        assert!((v2[3] + s * s).abs() < 1e-12); // x = 4: sin(4π/3) < 0
    }

    #[test]
    fn global_mix_limits_and_mixed_term() {
        let n = 5;
        let mut rng = SplitMix64::new(5);
        let v = grid(random_vec(&mut rng, n, 1.0));
        let e1 = GaussianTerm::new(grid(random_vec(&mut rng, n, 1.0)), OperatorMatrix::identity(n)).unwrap();
        let e2 = GaussianTerm::new(grid(random_vec(&mut rng, n, 1.0)), OperatorMatrix::identity(n)).unwrap();
        for mode in [MixMode::Energy, MixMode::Template] {
            assert_eq!(global_mix_energy(&v, 0.0, &e1, &e2, mode).unwrap(), e1.energy(&v).unwrap());
            assert!((global_mix_energy(&v, 1.0, &e1, &e2, mode).unwrap() - e2.energy(&v).unwrap()).abs() < 1e-15);
        }
        let tm = global_mix_energy(&v, 0.5, &e1, &e2, MixMode::Template).unwrap();
        let em = global_mix_energy(&v, 0.5, &e1, &e2, MixMode::Energy).unwrap();
        let gap = (e1.template.as_vector() - e2.template.as_vector()).norm_squared();
        assert!((tm - em + gap / 8.0).abs() < 1e-14);
        assert!(global_mix_energy(&v, 1.5, &e1, &e2, MixMode::Energy).is_err());
    }

    #[test]
    fn hyperfield_binary_forms_agree_exactly() {
        let n = 12;
        let mut rng = SplitMix64::new(3);
        let first = FilteredDifference::new(build_shift_difference(n, 1).unwrap(), grid(random_vec(&mut rng, n, 1.0))).unwrap();
        let second = FilteredDifference::new(OperatorMatrix::identity(n), grid(random_vec(&mut rng, n, 1.0))).unwrap();
        for _ in 0..20 {
            let v = grid(random_vec(&mut rng, n, 2.0));
            let theta = FieldState::binary((0..n).map(|_| rng.below(2) as f64).collect()).unwrap();
            let mixed = hyperfield_energy(&v, &theta, &first, &second, false).unwrap();
            let switched = hyperfield_switched_energy(&v, &theta, &first, &second, false).unwrap();
            assert_eq!(mixed.to_bits(), switched.to_bits());
        }
        let v = grid(random_vec(&mut rng, n, 2.0));
        let zero = FieldState::binary(vec![0.0; n]).unwrap();
        let pure = 0.5 * first.apply(&v).unwrap().iter().fold(0.0, |acc, w| acc + w * w);
        assert_eq!(hyperfield_energy(&v, &zero, &first, &second, false).unwrap(), pure);
    }

    #[test]
    fn hyperfield_normalization_constant_for_shared_filter() {
        let n = 10;
        let mut rng = SplitMix64::new(8);
        let w = build_laplacian(n, false).unwrap();
        let first = FilteredDifference::new(w.clone(), grid(random_vec(&mut rng, n, 1.0))).unwrap();
        let second = FilteredDifference::new(w, grid(random_vec(&mut rng, n, 1.0))).unwrap();
        let prior = HyperfieldPrior::new(FieldState::binary(vec![0.0; n]).unwrap(), first, second, true).unwrap();
        let reference = prior.log_normalization(&DVector::zeros(n)).unwrap().value;
        for _ in 0..10 {
            let theta = random_vec(&mut rng, n, 1.0).map(|x| x.abs());
            let z = prior.log_normalization(&theta).unwrap().value;
            assert!((z - reference).abs() < 1e-10);
        }
    }

    #[test]
    fn log_normalization_cases() {
        let tau = 2.0 * std::f64::consts::PI;
        let id = log_normalization(&OperatorMatrix::identity(4)).unwrap();
        assert!((id.value - 2.0 * tau.ln()).abs() < 1e-14);
        assert_eq!((id.rank, id.zero_modes), (4, 0));

        let k = build_periodic_invcov(8, 2, 1.0, 0.5).unwrap();
        let a = log_normalization(&k).unwrap();
        let b = log_normalization(&k.scaled(2.0)).unwrap();
        assert!((a.value - b.value - 0.5 * a.rank as f64 * 2f64.ln()).abs() < 1e-12);

        let lap = log_normalization(&build_laplacian(6, true).unwrap()).unwrap();
        // nonzero spectrum of the 6-site ring: 2 - 2cos(2πk/6), k = 1..5
        let oracle: f64 = (1..6).map(|k| -0.5 * ((2.0 - 2.0 * (tau * k as f64 / 6.0).cos()) / tau).ln()).sum();
        assert!((lap.value - oracle).abs() < 1e-12);
        assert_eq!(lap.zero_modes, 1);

        let indefinite = OperatorMatrix::new(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0])), true).unwrap();
        assert!(matches!(log_normalization(&indefinite), Err(BiqmError::NotPsd { .. })));
    }

    use crate::lattice::build_periodic_invcov;

    #[test]
    fn effective_template_cases() {
        let n = 12;
        let vt = true_potential(n);
        let (v0, k0) = effective_template(&vt, &OperatorMatrix::zeros(n)).unwrap();
        assert_eq!(v0, vt);
        assert_eq!(k0, OperatorMatrix::identity(n));

        // smoothing: each Laplacian eigenmode is scaled by 1/(1 + λ)
        let lap = build_laplacian(n, true).unwrap();
        let (v0, k0) = effective_template(&vt, &lap).unwrap();
        let (vals, vecs) = symmetric_eigen(lap.entries()).unwrap();
        let coeff_in = vecs.transpose() * vt.as_vector();
        let coeff_out = vecs.transpose() * v0.as_vector();
        for i in 0..n {
            assert!((coeff_out[i] - coeff_in[i] / (1.0 + vals[i])).abs() < 1e-12);
        }

        let mut rng = SplitMix64::new(2);
        let mut offsets = Vec::new();
        for _ in 0..10 {
            let v = random_vec(&mut rng, n, 2.0);
            let direct = 0.5 * (&v - vt.as_vector()).norm_squared() + 0.5 * lap.quadratic_form(&v).unwrap();
            let combined = 0.5 * k0.quadratic_form(&(&v - v0.as_vector())).unwrap();
            offsets.push(direct - combined);
        }
        for o in &offsets {
            assert!((o - offsets[0]).abs() < 1e-12);
        }
        let singular = OperatorMatrix::identity(n).scaled(-1.0);
        assert!(matches!(effective_template(&vt, &singular), Err(BiqmError::Singular(_))));
    }

    #[test]
    fn local_template_effective_energy_offset_is_constant() {
        let n = 10;
        let mut rng = SplitMix64::new(21);
        let first = FilteredDifference::new(build_shift_difference(n, 1).unwrap(), grid(random_vec(&mut rng, n, 1.0))).unwrap();
        let second = FilteredDifference::new(OperatorMatrix::identity(n), grid(random_vec(&mut rng, n, 1.0))).unwrap();
        let prior = LocalTemplatePrior {
            first,
            second,
            template_field: DVector::from_fn(n, |_, _| rng.below(2) as f64),
            filter_field: DVector::from_fn(n, |_, _| rng.below(2) as f64),
        };
        let eff = prior.effective().unwrap();
        let offsets: Vec<f64> = (0..10)
            .map(|_| {
                let v = random_vec(&mut rng, n, 3.0);
                prior.direct_energy(&v).unwrap() - eff.energy(&v).unwrap()
            })
            .collect();
        for o in &offsets {
            assert!((o - offsets[0]).abs() < 1e-10, "{o} vs {}", offsets[0]);
        }
    }

    #[test]
    fn auxiliary_field_conventions() {
        let n = 6;
        let v = GridFunction::from_positions(n, |x| x.cos());
        let same = FilteredDifference::new(OperatorMatrix::identity(n), GridFunction::zeros(n)).unwrap();
        let tie = auxiliary_field(&v, &same, &same, Steepness::Step, 0.0).unwrap();
        assert!(tie.values.iter().all(|b| *b == 1.0));
        let above = auxiliary_field(&v, &same, &same, Steepness::Step, 0.1).unwrap();
        assert!(above.values.iter().all(|b| *b == 0.0));
        let soft = auxiliary_field(&v, &same, &same, Steepness::Finite(3.0), 0.0).unwrap();
        assert!(soft.values.iter().all(|b| *b == 0.5));
    }

    #[test]
    fn auxiliary_field_threshold_configuration() {
        let n = 36;
        let v = true_potential(n);
        let v0 = periodic_template(1.0, 6.0, 0.0, n).unwrap();
        let first = FilteredDifference::new(OperatorMatrix::identity(n), v0.clone()).unwrap();
        let second = FilteredDifference::new(OperatorMatrix::zeros(n), GridFunction::zeros(n)).unwrap();
        let b = auxiliary_field(&v, &first, &second, Steepness::Step, 0.15).unwrap();
        for x in 0..n {
            let expected = if (v[x] - v0[x]).powi(2) - 0.15 >= 0.0 { 1.0 } else { 0.0 };
            assert_eq!(b.values[x], expected);
        }
    }

    #[test]
    fn aux_energy_modes() {
        let constant = DVector::from_element(36, 1.0);
        assert_eq!(AuxEnergy::Count { tau: 2.0 }.energy(&constant).unwrap(), 0.0);
        let band = DVector::from_fn(36, |i, _| if (12..24).contains(&i) { 1.0 } else { 0.0 });
        assert_eq!(discontinuity_count(band.as_slice()), 2);
        assert_eq!(AuxEnergy::Count { tau: 20.0 }.energy(&band).unwrap(), 20.0);

        let mut rng = SplitMix64::new(4);
        let b = random_vec(&mut rng, 10, 1.0).map(|x| x.abs());
        let quad = AuxEnergy::Quadratic {
            tau: 3.0,
            difference: FilteredDifference::new(build_shift_difference(10, 1).unwrap(), GridFunction::zeros(10)).unwrap(),
        };
        let oracle: f64 = (0..10).map(|x| (b[(x + 1) % 10] - b[x]).powi(2)).sum::<f64>() * 1.5;
        assert!((quad.energy(&b).unwrap() - oracle).abs() < 1e-14);
    }

    #[test]
    fn switch_energies() {
        let n = 36;
        let v = true_potential(n);
        let v0 = periodic_template(1.0, 6.0, 0.0, n).unwrap();
        let off = FieldState::binary(vec![0.0; n]).unwrap();
        let on = FieldState::binary(vec![1.0; n]).unwrap();
        let lap = build_laplacian(n, true).unwrap();
        let smooth = 0.5 * 0.2 * lap.quadratic_form(&v).unwrap();
        let full = switch_energy_fixed_reference(&v, &v0, &off, 0.2, 0.2).unwrap();
        assert!((full - (0.1 * (v.as_vector() - v0.as_vector()).norm_squared() + smooth)).abs() < 1e-12);
        assert!((switch_energy_fixed_reference(&v, &v0, &on, 0.2, 0.2).unwrap() - smooth).abs() < 1e-12);

        // term-by-term oracle with B from the 0.15 threshold
        let prior = PriorModel::switch_fixed_reference(v0.clone(), 0.2, 0.2, 0.15, Steepness::Step).unwrap();
        let b = prior.aux_component().unwrap().field(&v).unwrap();
        let mut oracle = smooth;
        for x in 0..n {
            let d2 = (v[x] - v0[x]).powi(2);
            if d2 < 0.15 {
                oracle += 0.1 * d2;
            }
        }
        assert!((switch_energy_fixed_reference(&v, &v0, &b, 0.2, 0.2).unwrap() - oracle).abs() < 1e-12);
        assert!((prior.energy(&v).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn two_reference_switching() {
        let n = 36;
        let v1 = periodic_template(2.0 / 3.0, 6.0, 0.0, n).unwrap();
        let v2 = signed_square_template(6.0, n).unwrap();
        let prior = PriorModel::switch_two_references(v1.clone(), v2.clone(), 10.0, 10.0, 0.0, Steepness::Step, None).unwrap();
        let b = prior.aux_component().unwrap().field(&v1).unwrap();
        let e = switch_energy_two_references(&v1, &v1, &v2, &b, 10.0, 10.0).unwrap();
        assert!((prior.energy(&v1).unwrap() - e).abs() < 1e-12);
        // ω₁ ≡ 0 at v = v₁, so u = −|ω₂|² ≤ 0 and only ties switch on
        let d = build_shift_difference(n, 1).unwrap();
        let w2 = filtered_difference(&d, &v1, &v2).unwrap();
        for x in 0..n {
            assert_eq!(b.values[x], if w2[x] == 0.0 { 1.0 } else { 0.0 });
        }
        assert_eq!(e, 0.0);

        let same = switch_energy_two_references(&v2, &v1, &v1, &FieldState::binary(vec![1.0; n]).unwrap(), 3.0, 3.0).unwrap();
        let same0 = switch_energy_two_references(&v2, &v1, &v1, &FieldState::binary(vec![0.0; n]).unwrap(), 3.0, 3.0).unwrap();
        assert!((same - same0).abs() < 1e-12);
    }

    #[test]
    fn cup_function_properties() {
        let p = CupParams { a: 5.0, b: 10.0, gamma: 0.7, x0: 0.0 };
        assert_eq!(p.value(0.0), 0.0);
        assert!((p.value(10.0) - 2.5).abs() < 1e-15);
        assert!((p.value(1e6) - 5.0).abs() < 0.05);
        assert_eq!(p.value(3.0), p.value(-3.0));
        let mut last = 0.0;
        for i in 1..200 {
            let y = i as f64 * 0.5;
            assert!(p.value(y) >= last);
            last = p.value(y);
        }
        assert_eq!(cup_energy(&GridFunction::zeros(6), &p).unwrap(), 0.0);
        assert!(cup_energy(&GridFunction::zeros(6), &CupParams { a: -1.0, ..p }).is_err());
    }

    #[test]
    fn cup_derivative_matches_finite_difference() {
        let p = CupParams { a: 5.0, b: 10.0, gamma: 0.7, x0: 0.3 };
        for y in [-20.0, -3.0, -0.1, 0.9, 4.0, 40.0] {
            let h = 1e-6;
            let fd = (p.value(y + h) - p.value(y - h)) / (2.0 * h);
            assert!((p.derivative(y) - fd).abs() < 1e-7 * fd.abs().max(1.0), "{y}: {} vs {fd}", p.derivative(y));
        }
    }

    #[test]
    fn sigmoid_derivative_matches_finite_difference() {
        let s = Steepness::Finite(2.5);
        for x in [-1.0, -0.2, 0.0, 0.3, 1.5] {
            let h = 1e-6;
            let fd = (sigmoid(x + h, s) - sigmoid(x - h, s)) / (2.0 * h);
            assert!((sigmoid_derivative(x, s) - fd).abs() < 1e-8);
        }
        assert_eq!(sigmoid(0.0, Steepness::Step), 1.0);
        assert_eq!(sigmoid_derivative(0.0, Steepness::Step), 0.0);
    }

    #[test]
    fn composite_energy_is_sum() {
        let n = 12;
        let v0 = periodic_template(1.0, 6.0, 0.0, n).unwrap();
        let prior = PriorModel::switch_fixed_reference(v0, 0.2, 0.3, 0.15, Steepness::Finite(4.0)).unwrap();
        let v = true_potential(n);
        let PriorModel::Composite(parts) = &prior else { panic!("composite expected") };
        let sum: f64 = parts.iter().map(|p| p.energy(&v).unwrap()).sum();
        assert_eq!(prior.energy(&v).unwrap(), sum);
    }
}
