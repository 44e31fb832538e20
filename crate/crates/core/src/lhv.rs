//! Classical local hidden-variable models of the two-arm protocol.
//!
//! A hidden state `ζ` is drawn once per shot. Each α-detector then reports a
//! noisy signal whose conditional mean is the property `A_k(ζ)`, and each
//! b-detector reports `±1` with conditional mean `B_k(ζ)`. The A measurement
//! may disturb its own arm's B (the shift is driven by the A-detector
//! residual) but never the other arm.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::protocol::{correlator, MeasurementRecord};
use crate::qmath::Arm;
use crate::rng::ShotStreams;
use crate::stats::{chunked_reduce, Estimate, RunningStats};

/// Largest hidden-state count [`brute_force_max`] will enumerate.
pub const MAX_ENUMERATED_STATES: usize = 8;
const SUM_TOL: f64 = 1e-12;
const CALIBRATION_SIGMAS: f64 = 5.0;
const MIN_CALIBRATION_SHOTS: u64 = 10_000;

/// Conditional distribution of an α-detector signal around its mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NoiseModel {
    /// The signal is the mean itself.
    Exact,
    /// Normal with the given standard deviation.
    Gaussian { sigma: f64 },
    /// `±magnitude` with probabilities fixed by the mean; needs `magnitude >= 1`.
    TwoPoint { magnitude: f64 },
}

impl NoiseModel {
    fn validate(&self) -> Result<()> {
        match *self {
            NoiseModel::Exact => Ok(()),
            NoiseModel::Gaussian { sigma } if sigma.is_finite() && sigma >= 0.0 => Ok(()),
            NoiseModel::Gaussian { sigma } => Err(invalid(format!("noise sigma must be finite and >= 0, got {sigma}"))),
            NoiseModel::TwoPoint { magnitude } if magnitude.is_finite() && magnitude >= 1.0 => Ok(()),
            NoiseModel::TwoPoint { magnitude } => {
                Err(invalid(format!("two-point magnitude must be finite and >= 1, got {magnitude}")))
            }
        }
    }

    /// Variance of the signal around `mean`.
    fn variance(&self, mean: f64) -> f64 {
        match *self {
            NoiseModel::Exact => 0.0,
            NoiseModel::Gaussian { sigma } => sigma * sigma,
            NoiseModel::TwoPoint { magnitude } => magnitude * magnitude - mean * mean,
        }
    }

    fn sample<R: Rng + ?Sized>(&self, mean: f64, rng: &mut R) -> f64 {
        match *self {
            NoiseModel::Exact => mean,
            NoiseModel::Gaussian { sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + sigma * z
            }
            NoiseModel::TwoPoint { magnitude } => {
                let p_plus = 0.5 * (1.0 + mean / magnitude);
                if rng.random::<f64>() < p_plus {
                    magnitude
                } else {
                    -magnitude
                }
            }
        }
    }
}

/// A hidden-variable strategy over `prep_dist.len()` hidden states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LhvStrategy {
    pub prep_dist: Vec<f64>,
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    pub b1: Vec<f64>,
    pub b2: Vec<f64>,
    /// Noise of the α-detector on each arm.
    pub noise: [NoiseModel; 2],
    /// Gain of the A-residual shift applied to the same arm's B mean.
    #[serde(default)]
    pub invasiveness: [f64; 2],
    /// Per-ζ offset of each α-detector's mean; empty means calibrated. A
    /// non-zero offset breaks calibration and is only accepted by
    /// [`calibration_check`].
    #[serde(default)]
    pub bias: [Vec<f64>; 2],
}

impl LhvStrategy {
    /// Calibrated, non-invasive strategy with the same noise on both arms.
    pub fn new(
        prep_dist: Vec<f64>,
        a1: Vec<f64>,
        a2: Vec<f64>,
        b1: Vec<f64>,
        b2: Vec<f64>,
        noise: NoiseModel,
    ) -> Result<Self> {
        let s = LhvStrategy {
            prep_dist,
            a1,
            a2,
            b1,
            b2,
            noise: [noise; 2],
            invasiveness: [0.0; 2],
            bias: [Vec::new(), Vec::new()],
        };
        s.validate()?;
        Ok(s)
    }

    /// Single hidden state with the given properties and no noise.
    pub fn deterministic(a1: f64, a2: f64, b1: f64, b2: f64) -> Result<Self> {
        Self::new(vec![1.0], vec![a1], vec![a2], vec![b1], vec![b2], NoiseModel::Exact)
    }

    pub fn num_hidden_states(&self) -> usize {
        self.prep_dist.len()
    }

    fn alpha_property(&self, arm: Arm) -> &[f64] {
        match arm {
            Arm::One => &self.a1,
            Arm::Two => &self.a2,
        }
    }

    fn b_property(&self, arm: Arm) -> &[f64] {
        match arm {
            Arm::One => &self.b1,
            Arm::Two => &self.b2,
        }
    }

    fn bias_at(&self, arm: Arm, zeta: usize) -> f64 {
        self.bias[arm.slot()].get(zeta).copied().unwrap_or(0.0)
    }

    /// Full invariants, including calibration of every α-detector.
    pub fn validate(&self) -> Result<()> {
        self.validate_structure()?;
        for arm in Arm::BOTH {
            if let Some((z, b)) = self.bias[arm.slot()].iter().enumerate().find(|(_, b)| b.abs() > SUM_TOL) {
                return Err(invalid(format!("detector a{arm} is not calibrated: mean offset {b} at hidden state {z}")));
            }
        }
        Ok(())
    }

    /// Everything in [`validate`](Self::validate) except calibration.
    pub fn validate_structure(&self) -> Result<()> {
        let n = self.prep_dist.len();
        if n == 0 {
            return Err(invalid("strategy needs at least one hidden state"));
        }
        for (name, v) in [("a1", &self.a1), ("a2", &self.a2), ("b1", &self.b1), ("b2", &self.b2)] {
            if v.len() != n {
                return Err(invalid(format!("{name} has {} entries, expected {n}", v.len())));
            }
            if let Some((z, x)) = v.iter().enumerate().find(|(_, x)| !(-1.0..=1.0).contains(*x)) {
                return Err(invalid(format!("{name}[{z}] = {x} lies outside [-1, 1]")));
            }
        }
        if let Some((z, p)) = self.prep_dist.iter().enumerate().find(|(_, p)| !(p.is_finite() && **p >= 0.0)) {
            return Err(invalid(format!("prep_dist[{z}] = {p} is not a probability")));
        }
        let total: f64 = self.prep_dist.iter().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(invalid(format!("prep_dist sums to {total}, expected 1")));
        }
        for arm in Arm::BOTH {
            let k = arm.slot();
            self.noise[k].validate().map_err(|e| prefix(e, arm))?;
            if !self.invasiveness[k].is_finite() {
                return Err(invalid(format!("invasiveness of arm {arm} must be finite")));
            }
            let bias = &self.bias[k];
            if !bias.is_empty() && bias.len() != n {
                return Err(invalid(format!("bias of a{arm} has {} entries, expected {n} or none", bias.len())));
            }
            if let Some(b) = bias.iter().find(|b| !b.is_finite()) {
                return Err(invalid(format!("bias of a{arm} must be finite, got {b}")));
            }
            if let NoiseModel::TwoPoint { magnitude } = self.noise[k] {
                for (z, a) in self.alpha_property(arm).iter().enumerate() {
                    let mean = a + self.bias_at(arm, z);
                    if mean.abs() > magnitude {
                        return Err(invalid(format!(
                            "a{arm} mean {mean} at hidden state {z} is out of reach of two-point magnitude {magnitude}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    fn draw_hidden_state<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (z, p) in self.prep_dist.iter().enumerate() {
            acc += p;
            if u < acc {
                return z;
            }
        }
        // rounding left u above the running sum; take the last state with mass
        self.prep_dist.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }

    fn alpha_signal<R: Rng + ?Sized>(&self, arm: Arm, zeta: usize, rng: &mut R) -> f64 {
        let mean = self.alpha_property(arm)[zeta] + self.bias_at(arm, zeta);
        self.noise[arm.slot()].sample(mean, rng)
    }
}

fn prefix(e: Error, arm: Arm) -> Error {
    match e {
        Error::InvalidArgument(m) => Error::InvalidArgument(format!("detector a{arm}: {m}")),
        other => other,
    }
}

fn pm_one<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> f64 {
    if rng.random::<f64>() < 0.5 * (1.0 + mean) {
        1.0
    } else {
        -1.0
    }
}

fn shot<R: Rng + ?Sized>(strategy: &LhvStrategy, rng: &mut R) -> MeasurementRecord {
    let zeta = strategy.draw_hidden_state(rng);
    let mut alpha = [0.0; 2];
    let mut b = [0.0; 2];
    for arm in Arm::BOTH {
        let k = arm.slot();
        alpha[k] = strategy.alpha_signal(arm, zeta, rng);
        let residual = alpha[k] - strategy.alpha_property(arm)[zeta];
        let mean = (strategy.b_property(arm)[zeta] + strategy.invasiveness[k] * residual).clamp(-1.0, 1.0);
        b[k] = pm_one(mean, rng);
    }
    MeasurementRecord { alpha1: alpha[0], alpha2: alpha[1], b1: b[0], b2: b[1] }
}

/// One shot of the strategy.
pub fn lhv_shot<R: Rng + ?Sized>(strategy: &LhvStrategy, rng: &mut R) -> Result<MeasurementRecord> {
    strategy.validate()?;
    Ok(shot(strategy, rng))
}

/// Monte-Carlo mean of the correlator; shot `i` uses stream `i` of `streams`.
pub fn lhv_mean(strategy: &LhvStrategy, shots: u64, streams: &ShotStreams) -> Result<Estimate> {
    strategy.validate()?;
    if shots == 0 {
        return Err(invalid("shots must be at least 1"));
    }
    let total = chunked_reduce(
        shots,
        |range| {
            let mut acc = RunningStats::default();
            for i in range {
                acc.push(correlator(&shot(strategy, &mut streams.stream(i))));
            }
            Ok(acc)
        },
        RunningStats::merge,
    )?
    .unwrap_or_default();
    Ok(total.estimate())
}

/// Correlator of one sign assignment `(A1, A2, B1, B2)`, bits 0..3 set = `+1`.
fn sign_correlator(bits: usize) -> i64 {
    let s = |k: usize| if bits >> k & 1 == 1 { 1 } else { -1 };
    let (a1, a2, b1, b2) = (s(0), s(1), s(2), s(3));
    a1 * a2 + a1 * b2 + b1 * a2 - b1 * b2
}

/// Smallest and largest correlator over every deterministic `±1` assignment
/// of the four properties on each of `num_hidden_states` equally likely
/// hidden states.
pub fn brute_force_extrema(num_hidden_states: usize) -> Result<(f64, f64)> {
    if num_hidden_states == 0 {
        return Err(invalid("need at least one hidden state"));
    }
    if num_hidden_states > MAX_ENUMERATED_STATES {
        return Err(Error::ResourceLimit(format!(
            "enumerating {num_hidden_states} hidden states exceeds the limit of {MAX_ENUMERATED_STATES}"
        )));
    }
    let table: [i64; 16] = std::array::from_fn(sign_correlator);
    let (mut lo, mut hi) = (i64::MAX, i64::MIN);
    // odometer over 16^n assignments, keeping partial sums per digit
    let n = num_hidden_states;
    let mut digits = vec![0usize; n];
    let mut partial = vec![0i64; n + 1];
    for k in 0..n {
        partial[k + 1] = partial[k] + table[0];
    }
    loop {
        let base = partial[n - 1];
        for &c in &table {
            let sum = base + c;
            lo = lo.min(sum);
            hi = hi.max(sum);
        }
        // advance the digits above the innermost one
        let mut k = n - 1;
        loop {
            if k == 0 {
                let scale = n as f64;
                return Ok((lo as f64 / scale, hi as f64 / scale));
            }
            k -= 1;
            digits[k] += 1;
            if digits[k] < 16 {
                break;
            }
            digits[k] = 0;
        }
        for j in k..n - 1 {
            partial[j + 1] = partial[j] + table[digits[j]];
        }
    }
}

/// Largest correlator any deterministic strategy reaches; always 2.
pub fn brute_force_max(num_hidden_states: usize) -> Result<f64> {
    Ok(brute_force_extrema(num_hidden_states)?.1)
}

pub fn brute_force_min(num_hidden_states: usize) -> Result<f64> {
    Ok(brute_force_extrema(num_hidden_states)?.0)
}

/// Which detector a calibration entry refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detector {
    A1,
    A2,
    B1,
    B2,
}

impl Detector {
    pub const ALL: [Detector; 4] = [Detector::A1, Detector::A2, Detector::B1, Detector::B2];

    pub fn name(self) -> &'static str {
        match self {
            Detector::A1 => "a1",
            Detector::A2 => "a2",
            Detector::B1 => "b1",
            Detector::B2 => "b2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationEntry {
    pub hidden_state: usize,
    pub detector: Detector,
    pub declared: f64,
    pub empirical: Estimate,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub entries: Vec<CalibrationEntry>,
}

impl CalibrationReport {
    pub fn all_passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CalibrationEntry> {
        self.entries.iter().filter(|e| !e.passed)
    }
}

/// Samples every detector `shots` times at every hidden state and compares
/// the empirical mean with the declared property; an entry fails when they
/// differ by more than `5` standard errors of the declared model. B
/// detectors are sampled without the invasive shift.
pub fn calibration_check(strategy: &LhvStrategy, shots: u64, streams: &ShotStreams) -> Result<CalibrationReport> {
    strategy.validate_structure()?;
    if shots < MIN_CALIBRATION_SHOTS {
        return Err(invalid(format!(
            "calibration needs at least {MIN_CALIBRATION_SHOTS} shots per hidden state, got {shots}"
        )));
    }
    let mut entries = Vec::new();
    for zeta in 0..strategy.num_hidden_states() {
        for (d, detector) in Detector::ALL.into_iter().enumerate() {
            let (arm, is_alpha) = match detector {
                Detector::A1 => (Arm::One, true),
                Detector::A2 => (Arm::Two, true),
                Detector::B1 => (Arm::One, false),
                Detector::B2 => (Arm::Two, false),
            };
            let declared = if is_alpha { strategy.alpha_property(arm)[zeta] } else { strategy.b_property(arm)[zeta] };
            // distinct stream index per (ζ, detector); shots within it are sequential
            let mut rng = streams.stream((zeta * Detector::ALL.len() + d) as u64);
            let mut acc = RunningStats::default();
            for _ in 0..shots {
                let x = if is_alpha { strategy.alpha_signal(arm, zeta, &mut rng) } else { pm_one(declared, &mut rng) };
                acc.push(x);
            }
            let empirical = acc.estimate();
            // judged against the spread the declared model predicts: the
            // sample spread collapses for properties near ±1
            let null_variance =
                if is_alpha { strategy.noise[arm.slot()].variance(declared) } else { 1.0 - declared * declared };
            let gap = (empirical.mean - declared).abs();
            let passed = if null_variance > 0.0 {
                gap <= CALIBRATION_SIGMAS * (null_variance / shots as f64).sqrt()
            } else {
                gap <= SUM_TOL * declared.abs().max(1.0)
            };
            entries.push(CalibrationEntry { hidden_state: zeta, detector, declared, empirical, passed });
        }
    }
    Ok(CalibrationReport { entries })
}

/// Parameters of [`random_strategy`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomStrategyOptions {
    pub hidden_states: usize,
    pub noise_sigma: f64,
    /// Invasiveness gains are drawn uniformly from `[-max_gain, max_gain]`.
    pub max_gain: f64,
}

impl Default for RandomStrategyOptions {
    fn default() -> Self {
        RandomStrategyOptions { hidden_states: 4, noise_sigma: 1.0, max_gain: 0.5 }
    }
}

/// Calibrated strategy with a flat-simplex `P(ζ)`, properties uniform in
/// `[-1, 1]` and Gaussian detector noise.
pub fn random_strategy<R: Rng + ?Sized>(options: &RandomStrategyOptions, rng: &mut R) -> Result<LhvStrategy> {
    let n = options.hidden_states;
    if n == 0 {
        return Err(invalid("random strategy needs at least one hidden state"));
    }
    if !(options.max_gain.is_finite() && options.max_gain >= 0.0) {
        return Err(invalid(format!("max_gain must be finite and >= 0, got {}", options.max_gain)));
    }
    let weights: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = weights.iter().sum();
    let mut prep_dist: Vec<f64> = weights.iter().map(|w| w / total).collect();
    // put the rounding residue on the largest entry so the sum is 1 to ~1 ulp
    let residue = 1.0 - prep_dist.iter().sum::<f64>();
    let largest = (0..n).max_by(|&i, &j| prep_dist[i].total_cmp(&prep_dist[j])).unwrap_or(0);
    prep_dist[largest] += residue;
    let mut property = || (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect::<Vec<f64>>();
    let (a1, a2, b1, b2) = (property(), property(), property(), property());
    let mut s = LhvStrategy::new(prep_dist, a1, a2, b1, b2, NoiseModel::Gaussian { sigma: options.noise_sigma })?;
    if options.max_gain > 0.0 {
        s.invasiveness = [
            rng.random_range(-options.max_gain..=options.max_gain),
            rng.random_range(-options.max_gain..=options.max_gain),
        ];
    }
    Ok(s)
}
