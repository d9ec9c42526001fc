//! The reference potential, reproducible sampling of position measurements
//! and empirical densities.

use std::fmt::Write as _;
use std::ops::RangeInclusive;

use nalgebra::DVector;

use crate::error::{BiqmError, Result};
use crate::lattice::GridFunction;

/// SplitMix64: a 64-bit counter-based generator.
///
/// The state advances by the odd constant `0x9E3779B97F4A7C15` per draw and
/// each output is the state passed through the two multiply-xorshift rounds
/// below. The algorithm is fixed here so that sample sets and annealing runs
/// reproduce bit-for-bit on every platform.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform draw in `[0, 1)` with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..bound` (Lemire's multiply-shift with rejection).
    pub fn below(&mut self, bound: usize) -> usize {
        assert!(bound > 0, "bound must be positive");
        let bound = bound as u64;
        let threshold = bound.wrapping_neg() % bound;
        loop {
            let m = (self.next_u64() as u128) * (bound as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as usize;
            }
        }
    }

    /// Derives an independent stream for a labelled sub-task.
    pub fn fork(&mut self, label: u64) -> Self {
        let mut child = Self::new(self.next_u64() ^ label.wrapping_mul(0xD1B5_4A32_D192_ED03));
        child.next_u64();
        child
    }
}

/// Physical coordinates `x` (1-based) of the impurity band of the reference potential.
pub fn impurity_band(n: usize) -> RangeInclusive<usize> {
    (n / 3 + 1)..=(2 * n / 3)
}

/// `sin(2πx/6)` outside the impurity band, `sin(2πx/12)` inside it.
///
/// For `n = 36` the band is `13 ≤ x ≤ 24`; other sizes scale the band
/// boundaries to the middle third of the lattice.
pub fn true_potential(n: usize) -> GridFunction {
    let band = impurity_band(n);
    let tau = 2.0 * std::f64::consts::PI;
    GridFunction::from_positions(n, |x| if band.contains(&(x as usize)) { (tau * x / 12.0).sin() } else { (tau * x / 6.0).sin() })
}

/// Position measurements as 0-based lattice indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleSet {
    positions: Vec<usize>,
    seed: u64,
    lattice_size: usize,
}

impl SampleSet {
    pub fn new(positions: Vec<usize>, seed: u64, lattice_size: usize) -> Result<Self> {
        if let Some(&position) = positions.iter().find(|&&p| p >= lattice_size) {
            return Err(BiqmError::SampleOutOfRange { position, size: lattice_size });
        }
        Ok(Self { positions, seed, lattice_size })
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn lattice_size(&self) -> usize {
        self.lattice_size
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Number of measurements at each site.
    pub fn counts(&self, n: usize) -> Vec<usize> {
        let mut counts = vec![0; n];
        for &p in &self.positions {
            counts[p] += 1;
        }
        counts
    }

    pub(crate) fn check_lattice(&self, n: usize) -> Result<()> {
        if self.lattice_size != n {
            return Err(BiqmError::ShapeMismatch { expected: n, found: self.lattice_size });
        }
        Ok(())
    }

    /// Plain-text form: a `# seed=<u64> n=<int> N=<int>` header, then one
    /// index per line.
    pub fn to_text(&self) -> String {
        let mut out = format!("# seed={} n={} N={}\n", self.seed, self.len(), self.lattice_size);
        for p in &self.positions {
            writeln!(out, "{p}").expect("writing to a String cannot fail");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: String| BiqmError::InvalidParameter { name: "samples", reason: msg };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("missing header line".into()))?;
        let fields = header.strip_prefix('#').ok_or_else(|| bad(format!("header must start with '#': {header:?}")))?;
        let (mut seed, mut count, mut size) = (None, None, None);
        for field in fields.split_whitespace() {
            let (key, value) = field.split_once('=').ok_or_else(|| bad(format!("malformed header field {field:?}")))?;
            let parse_err = |_| bad(format!("header field {key} has invalid value {value:?}"));
            match key {
                "seed" => seed = Some(value.parse::<u64>().map_err(parse_err)?),
                "n" => count = Some(value.parse::<usize>().map_err(parse_err)?),
                "N" => size = Some(value.parse::<usize>().map_err(parse_err)?),
                other => return Err(bad(format!("unknown header field {other:?}"))),
            }
        }
        let (seed, count, size) = match (seed, count, size) {
            (Some(s), Some(c), Some(n)) => (s, c, n),
            _ => return Err(bad("header must define seed, n and N".into())),
        };
        let mut positions = Vec::with_capacity(count);
        for (i, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            positions.push(line.parse::<usize>().map_err(|_| bad(format!("line {}: invalid index {line:?}", i + 2)))?);
        }
        if positions.len() != count {
            return Err(bad(format!("header declares n={count} but file has {} indices", positions.len())));
        }
        Self::new(positions, seed, size)
    }
}

/// Inverse-CDF sampling: each draw takes the smallest site whose cumulative
/// probability reaches a uniform variate.
pub fn sample_positions(density: &GridFunction, n: usize, seed: u64) -> Result<SampleSet> {
    if let Some(i) = density.iter().position(|p| *p < 0.0) {
        return Err(BiqmError::InvalidDensity(format!("negative entry at site {i}")));
    }
    let total = density.sum();
    if total <= 0.0 {
        return Err(BiqmError::InvalidDensity("density has zero mass".into()));
    }
    let mut cumulative = Vec::with_capacity(density.len());
    let mut acc = 0.0;
    for p in density.iter() {
        acc += p / total;
        cumulative.push(acc);
    }
    let last_supported = density.iter().rposition(|p| *p > 0.0).expect("positive mass");

    let mut rng = SplitMix64::new(seed);
    let positions = (0..n)
        .map(|_| {
            let u = rng.next_f64();
            cumulative.partition_point(|&c| c < u).min(last_supported)
        })
        .collect();
    SampleSet::new(positions, seed, density.len())
}

/// Relative frequencies `(1/n) Σ_i δ(x − x_i)`.
pub fn empirical_density(samples: &SampleSet, n: usize) -> Result<GridFunction> {
    samples.check_lattice(n)?;
    if samples.is_empty() {
        return Err(BiqmError::EmptySamples);
    }
    let total = samples.len() as f64;
    let counts = samples.counts(n);
    Ok(GridFunction::from_vector_unchecked(DVector::from_iterator(n, counts.into_iter().map(|c| c as f64 / total))))
}
