//! The two-arm weak-then-projective protocol and its correlator.
//!
//! One shot prepares the Bell pair, measures `A1` on arm 1 and `A2` on arm 2
//! with weak meters, then reads out `B1` and `B2` projectively. The per-shot
//! correlator is `C = α1 α2 + α1 b2 + b1 α2 - b1 b2` and all four terms come
//! from the same record.
//!
//! `⟨C⟩` is available three ways: a Monte-Carlo average ([`monte_carlo`]), a
//! deterministic sum/quadrature over the joint outcome distribution
//! ([`exact_mean`]), and the closed form for the CHSH angle set
//! ([`analytic_mean`]).

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, SQRT_2};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::measurement::{
    dephasing_factor, projective_sample, readout_moment, sample_meter, signal_moment, AncillaMeterSpec,
    GaussianMeterSpec, MeterSpec, ProjectiveMeterSpec,
};
use crate::qmath::{analyzer_basis, bell_state, AnalyzerBasis, Arm, Matrix4c};
use crate::quadrature::{GaussHermite, MAX_ORDER};
use crate::rng::ShotStreams;
use crate::stats::{chunked_reduce, Estimate, RunningStats};

/// Local-macrorealistic bound on `|⟨C⟩|`.
pub const LMR_BOUND: f64 = 2.0;
/// Quantum (Tsirelson) bound `2√2`.
pub const TSIRELSON_BOUND: f64 = 2.0 * SQRT_2;
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_SHOTS: u64 = 1_000_000;

const FIRST_ORDER: usize = 256;
const QUAD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub alpha1: f64,
    pub alpha2: f64,
    pub b1: f64,
    pub b2: f64,
}

impl MeasurementRecord {
    /// `[α1 α2, α1 b2, b1 α2, b1 b2]`
    pub fn terms(&self) -> [f64; 4] {
        [self.alpha1 * self.alpha2, self.alpha1 * self.b2, self.b1 * self.alpha2, self.b1 * self.b2]
    }
}

pub fn correlator(record: &MeasurementRecord) -> f64 {
    let [aa, ab, ba, bb] = record.terms();
    aa + ab + ba - bb
}

/// Analyzer angles in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Angles {
    pub a1: f64,
    pub a2: f64,
    pub b1: f64,
    pub b2: f64,
}

impl Angles {
    pub const CHSH: Angles = Angles { a1: FRAC_PI_2, a2: FRAC_PI_4, b1: 0.0, b2: 3.0 * FRAC_PI_4 };

    pub fn is_chsh(&self) -> bool {
        let c = Angles::CHSH;
        [(self.a1, c.a1), (self.a2, c.a2), (self.b1, c.b1), (self.b2, c.b2)].iter().all(|(x, y)| (x - y).abs() <= 1e-12)
    }
}

impl Default for Angles {
    fn default() -> Self {
        Angles::CHSH
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub meter1: MeterSpec,
    pub meter2: MeterSpec,
    pub readout: ProjectiveMeterSpec,
    pub angles: Angles,
    pub shots: u64,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn new(meter1: MeterSpec, meter2: MeterSpec, readout: ProjectiveMeterSpec) -> Self {
        ExperimentConfig { meter1, meter2, readout, angles: Angles::CHSH, shots: DEFAULT_SHOTS, seed: DEFAULT_SEED }
    }

    /// Identical Gaussian meters on both arms.
    pub fn gaussian(sigma: f64, eta: f64, v: f64) -> Result<Self> {
        let m = MeterSpec::Gaussian(GaussianMeterSpec::new(sigma, eta)?);
        Ok(Self::new(m, m, ProjectiveMeterSpec::new(v)?))
    }

    /// Identical ancilla meters on both arms.
    pub fn ancilla(v_total: f64, u: f64, v: f64) -> Result<Self> {
        let m = MeterSpec::Ancilla(AncillaMeterSpec::new(v_total, u)?);
        Ok(Self::new(m, m, ProjectiveMeterSpec::new(v)?))
    }

    pub fn with_shots(mut self, shots: u64) -> Self {
        self.shots = shots;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_angles(mut self, angles: Angles) -> Self {
        self.angles = angles;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.meter1.validate().map_err(|e| prefix(e, "meter1"))?;
        self.meter2.validate().map_err(|e| prefix(e, "meter2"))?;
        self.readout.validate().map_err(|e| prefix(e, "b"))?;
        if self.shots == 0 {
            return Err(invalid("shots must be at least 1"));
        }
        let a = &self.angles;
        for (name, phi) in [("a1", a.a1), ("a2", a.a2), ("b1", a.b1), ("b2", a.b2)] {
            if !phi.is_finite() {
                return Err(invalid(format!("angle {name} must be finite, got {phi}")));
            }
        }
        Ok(())
    }

    fn meter(&self, arm: Arm) -> &MeterSpec {
        match arm {
            Arm::One => &self.meter1,
            Arm::Two => &self.meter2,
        }
    }

    fn uses_gaussian(&self) -> bool {
        matches!(self.meter1, MeterSpec::Gaussian(_)) || matches!(self.meter2, MeterSpec::Gaussian(_))
    }
}

fn prefix(e: Error, section: &str) -> Error {
    match e {
        Error::InvalidArgument(m) => Error::InvalidArgument(format!("{section}: {m}")),
        other => other,
    }
}

/// Analyzer bases resolved once per configuration.
#[derive(Debug, Clone, Copy)]
struct Bases {
    a: [AnalyzerBasis; 2],
    b: [AnalyzerBasis; 2],
}

impl Bases {
    fn new(angles: &Angles) -> Result<Self> {
        Ok(Bases {
            a: [analyzer_basis(angles.a1)?, analyzer_basis(angles.a2)?],
            b: [analyzer_basis(angles.b1)?, analyzer_basis(angles.b2)?],
        })
    }
}

fn shot_with_bases<R: Rng + ?Sized>(
    config: &ExperimentConfig,
    bases: &Bases,
    rng: &mut R,
) -> Result<MeasurementRecord> {
    let state = bell_state();
    let a1 = sample_meter(&state, Arm::One, &config.meter1, &bases.a[0], rng)?;
    let a2 = sample_meter(&a1.post_state, Arm::Two, &config.meter2, &bases.a[1], rng)?;
    let b1 = projective_sample(&a2.post_state, Arm::One, &config.readout, &bases.b[0], rng)?;
    let b2 = projective_sample(&b1.post_state, Arm::Two, &config.readout, &bases.b[1], rng)?;
    Ok(MeasurementRecord { alpha1: a1.signal, alpha2: a2.signal, b1: b1.signal, b2: b2.signal })
}

/// One realization of the protocol.
pub fn run_shot<R: Rng + ?Sized>(config: &ExperimentConfig, rng: &mut R) -> Result<MeasurementRecord> {
    config.validate()?;
    shot_with_bases(config, &Bases::new(&config.angles)?, rng)
}

/// Per-term averages of a record set, `[α1α2, α1b2, b1α2, b1b2]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TermMeans {
    pub aa: f64,
    pub ab: f64,
    pub ba: f64,
    pub bb: f64,
}

impl TermMeans {
    pub fn correlator(&self) -> f64 {
        self.aa + self.ab + self.ba - self.bb
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloSummary {
    pub estimate: Estimate,
    pub terms: TermMeans,
}

#[derive(Debug, Clone, Copy, Default)]
struct ChunkStats {
    c: RunningStats,
    terms: [RunningStats; 4],
}

impl ChunkStats {
    fn push(&mut self, r: &MeasurementRecord) {
        self.c.push(correlator(r));
        for (acc, t) in self.terms.iter_mut().zip(r.terms()) {
            acc.push(t);
        }
    }

    fn merge(&self, other: &ChunkStats) -> ChunkStats {
        let mut terms = self.terms;
        for (t, o) in terms.iter_mut().zip(&other.terms) {
            *t = t.merge(o);
        }
        ChunkStats { c: self.c.merge(&other.c), terms }
    }
}

/// Monte-Carlo average of the per-shot correlator.
pub fn monte_carlo(config: &ExperimentConfig) -> Result<Estimate> {
    Ok(monte_carlo_summary(config)?.estimate)
}

/// Like [`monte_carlo`], also reporting the four term averages.
///
/// Shot `i` draws from stream `i` of the config seed and chunks are merged in
/// a fixed tree, so the result is bit-identical for any rayon pool size.
pub fn monte_carlo_summary(config: &ExperimentConfig) -> Result<MonteCarloSummary> {
    config.validate()?;
    let bases = Bases::new(&config.angles)?;
    let streams = ShotStreams::new(config.seed);
    let total = chunked_reduce(
        config.shots,
        |range| {
            let mut acc = ChunkStats::default();
            for i in range {
                acc.push(&shot_with_bases(config, &bases, &mut streams.stream(i))?);
            }
            Ok(acc)
        },
        ChunkStats::merge,
    )?
    .unwrap_or_default();
    let [aa, ab, ba, bb] = total.terms.map(|t| t.mean());
    Ok(MonteCarloSummary { estimate: total.c.estimate(), terms: TermMeans { aa, ab, ba, bb } })
}

/// The per-shot records of [`monte_carlo`], in shot order.
pub fn records(config: &ExperimentConfig) -> Result<Vec<MeasurementRecord>> {
    config.validate()?;
    let bases = Bases::new(&config.angles)?;
    let streams = ShotStreams::new(config.seed);
    (0..config.shots).into_par_iter().map(|i| shot_with_bases(config, &bases, &mut streams.stream(i))).collect()
}

/// `(1 + v ξ1)(1 + v ξ2)/√2`, the correlator for the CHSH angle set when the
/// weak meters damp coherences by `ξ1`, `ξ2` and the readout has visibility `v`.
pub fn analytic_mean(xi1: f64, xi2: f64, v: f64) -> Result<f64> {
    for (name, x) in [("xi1", xi1), ("xi2", xi2), ("v", v)] {
        if !(0.0..=1.0).contains(&x) {
            return Err(invalid(format!("{name} must lie in [0, 1], got {x}")));
        }
    }
    Ok((1.0 + v * xi1) * (1.0 + v * xi2) / SQRT_2)
}

/// [`analytic_mean`] for a configuration, or `None` when its angles are not
/// the CHSH set (the closed form does not apply).
pub fn analytic_for(config: &ExperimentConfig) -> Option<f64> {
    if !config.angles.is_chsh() {
        return None;
    }
    analytic_mean(dephasing_factor(&config.meter1), dephasing_factor(&config.meter2), config.readout.v).ok()
}

/// Effective per-arm dephasing `vΞ` above which the correlator exceeds 2.
pub fn violation_threshold() -> f64 {
    2f64.powf(0.75) - 1.0
}

/// `coef · α1^p1 b1^q1 α2^p2 b2^q2`
#[derive(Debug, Clone, Copy)]
struct Monomial {
    coef: f64,
    p1: u32,
    q1: u32,
    p2: u32,
    q2: u32,
}

const fn mono(coef: f64, p1: u32, q1: u32, p2: u32, q2: u32) -> Monomial {
    Monomial { coef, p1, q1, p2, q2 }
}

const TERM_AA: Monomial = mono(1.0, 1, 0, 1, 0);
const TERM_AB: Monomial = mono(1.0, 1, 0, 0, 1);
const TERM_BA: Monomial = mono(1.0, 0, 1, 1, 0);
const TERM_BB: Monomial = mono(1.0, 0, 1, 0, 1);

/// Expansion of `C²` using `b_k² = 1`.
const SECOND_MOMENT: [Monomial; 8] = [
    mono(1.0, 2, 0, 2, 0),
    mono(2.0, 2, 0, 1, 1),
    mono(1.0, 2, 0, 0, 0),
    mono(2.0, 1, 1, 2, 0),
    mono(-2.0, 1, 1, 0, 0),
    mono(1.0, 0, 0, 2, 0),
    mono(-2.0, 0, 0, 1, 1),
    mono(1.0, 0, 0, 0, 0),
];

/// Expectations of `monomials` under the joint outcome distribution, using
/// the given quadrature rule for Gaussian meters.
fn monomial_expectations(
    config: &ExperimentConfig,
    bases: &Bases,
    monomials: &[Monomial],
    rule: &GaussHermite,
) -> Result<Vec<f64>> {
    let rho = *bell_state().matrix();
    let mut arm1: [Option<Matrix4c>; 3] = [None; 3];
    let mut out = Vec::with_capacity(monomials.len());
    for m in monomials {
        let after1 = match arm1[m.p1 as usize] {
            Some(x) => x,
            None => {
                let x = signal_moment(&rho, Arm::One, config.meter(Arm::One), &bases.a[0], m.p1, rule)?;
                arm1[m.p1 as usize] = Some(x);
                x
            }
        };
        let after2 = signal_moment(&after1, Arm::Two, config.meter(Arm::Two), &bases.a[1], m.p2, rule)?;
        let r1 = readout_moment(&after2, Arm::One, &config.readout, &bases.b[0], m.q1);
        let r2 = readout_moment(&r1, Arm::Two, &config.readout, &bases.b[1], m.q2);
        out.push(r2.trace().re);
    }
    Ok(out)
}

/// Evaluates `f(expectations)` with quadrature orders doubling from 256 until
/// two successive results agree to `1e-8` (relative beyond magnitude 1).
fn converged(config: &ExperimentConfig, monomials: &[Monomial], f: impl Fn(&[f64]) -> f64) -> Result<(f64, Vec<f64>)> {
    config.validate()?;
    let bases = Bases::new(&config.angles)?;
    if !config.uses_gaussian() {
        let rule = GaussHermite::cached(1)?;
        let e = monomial_expectations(config, &bases, monomials, &rule)?;
        return Ok((f(&e), e));
    }
    let mut previous: Option<f64> = None;
    let mut order = FIRST_ORDER;
    loop {
        let rule = GaussHermite::cached(order)?;
        let e = monomial_expectations(config, &bases, monomials, &rule)?;
        let value = f(&e);
        if !value.is_finite() {
            return Err(Error::Numerical(format!("quadrature produced {value} at order {order}")));
        }
        if let Some(p) = previous {
            let diff = (value - p).abs();
            if diff <= QUAD_TOL * value.abs().max(1.0) {
                return Ok((value, e));
            }
            if order >= MAX_ORDER {
                return Err(Error::Numerical(format!(
                    "quadrature did not converge: orders {} and {order} differ by {diff:e}",
                    order / 2
                )));
            }
        }
        previous = Some(value);
        order *= 2;
    }
}

/// Deterministic `⟨C⟩` from the joint outcome distribution of the protocol.
pub fn exact_mean(config: &ExperimentConfig) -> Result<f64> {
    Ok(exact_terms(config)?.correlator())
}

/// Deterministic term averages; `exact_mean` is their CHSH combination.
pub fn exact_terms(config: &ExperimentConfig) -> Result<TermMeans> {
    let monomials = [TERM_AA, TERM_AB, TERM_BA, TERM_BB];
    let (_, e) = converged(config, &monomials, |e| e[0] + e[1] + e[2] - e[3])?;
    Ok(TermMeans { aa: e[0], ab: e[1], ba: e[2], bb: e[3] })
}

/// Deterministic `⟨C²⟩`.
pub fn exact_second_moment(config: &ExperimentConfig) -> Result<f64> {
    let (v, _) = converged(config, &SECOND_MOMENT, |e| SECOND_MOMENT.iter().zip(e).map(|(m, x)| m.coef * x).sum())?;
    Ok(v)
}

/// Standard error a Monte-Carlo run of `config.shots` shots should report.
pub fn predicted_stderr(config: &ExperimentConfig) -> Result<f64> {
    let mean = exact_mean(config)?;
    let second = exact_second_moment(config)?;
    Ok(((second - mean * mean).max(0.0) / config.shots as f64).sqrt())
}

/// Parameter varied by [`sweep`]. Meter parameters apply to both arms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Sigma,
    Eta,
    V,
    VTotal,
    U,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Sigma => "sigma",
            SweepAxis::Eta => "eta",
            SweepAxis::V => "v",
            SweepAxis::VTotal => "v_total",
            SweepAxis::U => "u",
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigma" => Ok(SweepAxis::Sigma),
            "eta" => Ok(SweepAxis::Eta),
            "v" => Ok(SweepAxis::V),
            "v_total" | "v-total" => Ok(SweepAxis::VTotal),
            "u" => Ok(SweepAxis::U),
            other => Err(invalid(format!("unknown sweep axis '{other}' (expected sigma, eta, v, v_total or u)"))),
        }
    }
}

/// Copy of `template` with `axis` set to `value` on both arms.
pub fn apply_axis(template: &ExperimentConfig, axis: SweepAxis, value: f64) -> Result<ExperimentConfig> {
    let mut config = *template;
    let set = |m: &mut MeterSpec| -> Result<()> {
        match (axis, m) {
            (SweepAxis::Sigma, MeterSpec::Gaussian(g)) => g.sigma = value,
            (SweepAxis::Eta, MeterSpec::Gaussian(g)) => g.eta = value,
            (SweepAxis::VTotal, MeterSpec::Ancilla(a)) => a.v_total = value,
            (SweepAxis::U, MeterSpec::Ancilla(a)) => a.u = value,
            (axis, _) => {
                return Err(invalid(format!("sweep axis {axis} does not apply to this meter type")));
            }
        }
        Ok(())
    };
    if axis == SweepAxis::V {
        config.readout.v = value;
    } else {
        set(&mut config.meter1)?;
        set(&mut config.meter2)?;
    }
    config.validate().map_err(|e| invalid(format!("{axis} = {value}: {e}")))?;
    Ok(config)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub estimate: Estimate,
    pub exact: f64,
    pub analytic: Option<f64>,
}

/// Runs Monte-Carlo, exact and closed-form evaluations at each axis value.
pub fn sweep(template: &ExperimentConfig, axis: SweepAxis, values: &[f64]) -> Result<Vec<SweepRow>> {
    let configs = values.iter().map(|&v| apply_axis(template, axis, v)).collect::<Result<Vec<_>>>()?;
    values
        .iter()
        .zip(&configs)
        .map(|(&value, config)| {
            Ok(SweepRow {
                value,
                estimate: monte_carlo(config)?,
                exact: exact_mean(config)?,
                analytic: analytic_for(config),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qmath::{apply_operator, embed, expectation, kron, TwoQubitState};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_1_SQRT_2;

    #[test]
    fn correlator_examples() {
        let r = |a1, a2, b1, b2| MeasurementRecord { alpha1: a1, alpha2: a2, b1, b2 };
        assert_eq!(correlator(&r(1.0, 1.0, 1.0, 1.0)), 2.0);
        assert_eq!(correlator(&r(0.0, 0.0, 1.0, 1.0)), -1.0);
        assert!((correlator(&r(2.5, -0.4, 1.0, -1.0)) + 2.9).abs() < 1e-15);
    }

    #[test]
    fn analytic_examples() {
        assert!((analytic_mean(1.0, 1.0, 1.0).unwrap() - TSIRELSON_BOUND).abs() < 1e-15);
        assert!((analytic_mean(0.0, 0.0, 1.0).unwrap() - FRAC_1_SQRT_2).abs() < 1e-15);
        assert!((analytic_mean(0.8, 0.8, 1.0).unwrap() - 3.24 / SQRT_2).abs() < 1e-15);
        assert!(analytic_mean(1.1, 0.5, 1.0).is_err());
        assert!(analytic_mean(0.5, -0.1, 1.0).is_err());
        assert!(analytic_mean(0.5, 0.5, 2.0).is_err());
    }

    #[test]
    fn threshold_examples() {
        let t = violation_threshold();
        assert!((t - 0.681_792_830_507_429).abs() < 1e-12);
        assert!((analytic_mean(t, t, 1.0).unwrap() - 2.0).abs() < 1e-12);
        assert!(analytic_mean(t * 1.01, t * 1.01, 1.0).unwrap() > 2.0);
    }

    #[test]
    fn projective_z_shot_is_perfectly_correlated() {
        let z = Angles { a1: 0.0, a2: 0.0, b1: 0.0, b2: 0.0 };
        let config = ExperimentConfig::ancilla(1.0, 1.0, 1.0).unwrap().with_angles(z);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let r = run_shot(&config, &mut rng).unwrap();
            assert_eq!(r.b1, r.b2);
            assert_eq!(r.alpha1, r.b1);
            assert_eq!(r.alpha2, r.b1);
        }
    }

    #[test]
    fn gaussian_shot_types() {
        let config = ExperimentConfig::gaussian(3.0, 1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut beyond = false;
        for _ in 0..500 {
            let r = run_shot(&config, &mut rng).unwrap();
            assert!(r.b1.abs() == 1.0 && r.b2.abs() == 1.0);
            beyond |= r.alpha1.abs() > 1.0;
        }
        assert!(beyond);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = ExperimentConfig::gaussian(1.0, 1.0, 1.0).unwrap();
        c.shots = 0;
        assert!(matches!(monte_carlo(&c), Err(Error::InvalidArgument(_))));
        let mut c = ExperimentConfig::gaussian(1.0, 1.0, 1.0).unwrap();
        c.angles.b2 = f64::NAN;
        assert!(exact_mean(&c).is_err());
        let mut c = ExperimentConfig::gaussian(1.0, 1.0, 1.0).unwrap();
        c.meter2 = MeterSpec::Gaussian(GaussianMeterSpec { sigma: -1.0, eta: 1.0 });
        let msg = exact_mean(&c).unwrap_err().to_string();
        assert!(msg.contains("meter2"), "{msg}");
    }

    /// Brute-force oracle for the exact engine in the ancilla case: enumerate
    /// every (branch, reported sign) on both arms and every readout outcome by
    /// explicit Kraus updates of the Bell state.
    fn enumerate_ancilla(v_total: f64, u: f64, v: f64) -> f64 {
        use crate::measurement::{ancilla_kraus, Sign};
        let a = [analyzer_basis(FRAC_PI_2).unwrap(), analyzer_basis(FRAC_PI_4).unwrap()];
        let b = [analyzer_basis(0.0).unwrap(), analyzer_basis(3.0 * FRAC_PI_4).unwrap()];
        let v_ent = v_total / u;
        let signs = [Sign::Plus, Sign::Minus];
        let flip = |vis: f64, same: bool| if same { (1.0 + vis) / 2.0 } else { (1.0 - vis) / 2.0 };
        let mut total = 0.0;
        for &s1 in &signs {
            for &s2 in &signs {
                let k = kron(&ancilla_kraus(s1, v_ent, &a[0]).unwrap(), &ancilla_kraus(s2, v_ent, &a[1]).unwrap());
                for &t1 in &signs {
                    for &t2 in &signs {
                        let proj = kron(&b[0].projector(t1 == Sign::Plus), &b[1].projector(t2 == Sign::Plus));
                        let p = match apply_operator(&bell_state(), &proj.mul(&k)) {
                            Ok((w, _)) => w,
                            Err(_) => 0.0,
                        };
                        for &r1 in &signs {
                            for &r2 in &signs {
                                for &o1 in &signs {
                                    for &o2 in &signs {
                                        let w = p
                                            * flip(u, r1 == s1)
                                            * flip(u, r2 == s2)
                                            * flip(v, o1 == t1)
                                            * flip(v, o2 == t2);
                                        let rec = MeasurementRecord {
                                            alpha1: r1.value() / v_total,
                                            alpha2: r2.value() / v_total,
                                            b1: o1.value(),
                                            b2: o2.value(),
                                        };
                                        total += w * correlator(&rec);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        total
    }

    #[test]
    fn exact_mean_matches_enumeration_oracle() {
        for &(vt, u, v) in &[(0.6, 1.0, 1.0), (0.3, 0.8, 0.8), (1.0, 1.0, 1.0), (0.9, 1.0, 0.8)] {
            let config = ExperimentConfig::ancilla(vt, u, v).unwrap();
            let exact = exact_mean(&config).unwrap();
            let oracle = enumerate_ancilla(vt, u, v);
            assert!((exact - oracle).abs() < 1e-12, "{vt} {u} {v}: {exact} vs {oracle}");
        }
    }

    #[test]
    fn exact_mean_examples() {
        let c = ExperimentConfig::ancilla(1.0, 1.0, 1.0).unwrap();
        assert!((exact_mean(&c).unwrap() - FRAC_1_SQRT_2).abs() < 1e-12);
        let c = ExperimentConfig::ancilla(0.6, 1.0, 1.0).unwrap();
        assert!((exact_mean(&c).unwrap() - 3.24 / SQRT_2).abs() < 1e-12);
        let c = ExperimentConfig::gaussian(10.0, 1.0, 1.0).unwrap();
        let xi = (-1.0f64 / 200.0).exp();
        assert!((exact_mean(&c).unwrap() - (1.0 + xi).powi(2) / SQRT_2).abs() < 1e-9);
    }

    #[test]
    fn exact_terms_are_linear() {
        let c = ExperimentConfig::gaussian(0.8, 0.7, 0.9).unwrap();
        let t = exact_terms(&c).unwrap();
        assert_eq!(exact_mean(&c).unwrap(), t.aa + t.ab + t.ba - t.bb);
        // α1α2 term is the undisturbed A1A2 correlation
        let a = Angles::CHSH;
        let direct =
            expectation(&bell_state(), Some(&analyzer_basis(a.a1).unwrap()), Some(&analyzer_basis(a.a2).unwrap()))
                .unwrap();
        assert!((t.aa - direct).abs() < 1e-9);
    }

    #[test]
    fn narrow_gaussian_meters_converge() {
        for sigma in [0.01, 0.1, 0.3, 0.6] {
            let c = ExperimentConfig::gaussian(sigma, 1.0, 1.0).unwrap();
            let xi = (-1.0 / (2.0 * sigma * sigma)).exp();
            let expected = (1.0 + xi).powi(2) / SQRT_2;
            assert!((exact_mean(&c).unwrap() - expected).abs() < 1e-9, "sigma={sigma}");
        }
    }

    #[test]
    fn second_moment_of_projective_limit() {
        // α = b on each arm when V = 1 with aligned angles, so C = α1α2 + α1α2 + α1α2 - α1α2 ... = 2 α1 α2 and C² = 4
        let z = Angles { a1: 0.0, a2: 0.0, b1: 0.0, b2: 0.0 };
        let c = ExperimentConfig::ancilla(1.0, 1.0, 1.0).unwrap().with_angles(z);
        assert!((exact_second_moment(&c).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn predicted_stderr_matches_sample_stderr() {
        let c = ExperimentConfig::ancilla(0.5, 0.9, 0.9).unwrap().with_shots(200_000);
        let est = monte_carlo(&c).unwrap();
        let predicted = predicted_stderr(&c).unwrap();
        assert!((est.stderr - predicted).abs() / predicted < 0.02, "{} vs {predicted}", est.stderr);
        assert!(est.agrees_with(exact_mean(&c).unwrap(), 4.0));
    }

    #[test]
    fn monte_carlo_terms_sum_to_correlator() {
        let c = ExperimentConfig::gaussian(1.5, 0.8, 0.9).unwrap().with_shots(50_000);
        let s = monte_carlo_summary(&c).unwrap();
        assert!((s.terms.correlator() - s.estimate.mean).abs() < 1e-12);
        assert_eq!(s.estimate.shots, 50_000);
        let exact = exact_terms(&c).unwrap();
        assert!(s.estimate.agrees_with(exact.correlator(), 4.0));
    }

    #[test]
    fn records_reproduce_monte_carlo() {
        let c = ExperimentConfig::ancilla(0.7, 1.0, 1.0).unwrap().with_shots(10_000).with_seed(9);
        let recs = records(&c).unwrap();
        let mut stats = RunningStats::default();
        recs.iter().for_each(|r| stats.push(correlator(r)));
        let est = monte_carlo(&c).unwrap();
        assert_eq!(recs.len(), 10_000);
        assert!((stats.mean() - est.mean).abs() < 1e-12);
    }

    #[test]
    fn estimate_is_independent_of_worker_count() {
        let c = ExperimentConfig::gaussian(1.3, 0.9, 0.95).unwrap().with_shots(30_000).with_seed(11);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| monte_carlo_summary(&c).unwrap())
        };
        let one = run(1);
        let four = run(4);
        assert_eq!(one.estimate.mean.to_bits(), four.estimate.mean.to_bits());
        assert_eq!(one.estimate.stderr.to_bits(), four.estimate.stderr.to_bits());
        assert_eq!(one.terms, four.terms);
    }

    #[test]
    fn seed_changes_results() {
        let c = ExperimentConfig::gaussian(2.0, 1.0, 1.0).unwrap().with_shots(1000);
        let a = monte_carlo(&c).unwrap();
        let b = monte_carlo(&c.with_seed(7)).unwrap();
        assert_eq!(a, monte_carlo(&c).unwrap());
        assert_ne!(a.mean, b.mean);
    }

    #[test]
    fn sweep_axis_parsing_and_application() {
        assert_eq!("v_total".parse::<SweepAxis>().unwrap(), SweepAxis::VTotal);
        assert!("gamma".parse::<SweepAxis>().is_err());
        let g = ExperimentConfig::gaussian(1.0, 1.0, 1.0).unwrap();
        assert!(matches!(apply_axis(&g, SweepAxis::U, 0.5), Err(Error::InvalidArgument(_))));
        let err = apply_axis(&g, SweepAxis::Sigma, -2.0).unwrap_err().to_string();
        assert!(err.contains("-2"), "{err}");
        let a = ExperimentConfig::ancilla(0.5, 1.0, 1.0).unwrap();
        let c = apply_axis(&a, SweepAxis::VTotal, 0.25).unwrap();
        assert_eq!(c.meter1, MeterSpec::Ancilla(AncillaMeterSpec { v_total: 0.25, u: 1.0 }));
        assert_eq!(c.meter2, c.meter1);
    }

    #[test]
    fn sigma_sweep_is_monotone_and_crosses_bound() {
        let values = [0.1, 0.5, 1.0, 2.0, 5.0, 10.0];
        let template = ExperimentConfig::gaussian(1.0, 1.0, 1.0).unwrap().with_shots(2000);
        let rows = sweep(&template, SweepAxis::Sigma, &values).unwrap();
        for w in rows.windows(2) {
            assert!(w[1].exact > w[0].exact);
        }
        let below = rows.iter().find(|r| r.value == 1.0).unwrap();
        let above = rows.iter().find(|r| r.value == 2.0).unwrap();
        assert!(below.exact < 2.0 && above.exact > 2.0);
        for r in &rows {
            assert!((r.exact - r.analytic.unwrap()).abs() < 1e-6);
        }
    }

    #[test]
    fn non_chsh_angles_have_no_closed_form() {
        let c = ExperimentConfig::gaussian(1.0, 1.0, 1.0).unwrap().with_angles(Angles { a1: 0.1, ..Angles::CHSH });
        assert!(analytic_for(&c).is_none());
        assert!(exact_mean(&c).is_ok());
    }

    #[test]
    fn unread_weak_measurement_is_a_dephasing_channel() {
        // sanity check of the arm-2 update path used by the exact engine
        let rule = GaussHermite::new(256).unwrap();
        let spec = MeterSpec::Ancilla(AncillaMeterSpec::new(0.6, 1.0).unwrap());
        let basis = analyzer_basis(FRAC_PI_4).unwrap();
        let avg = signal_moment(bell_state().matrix(), Arm::Two, &spec, &basis, 0, &rule).unwrap();
        let deph = crate::measurement::apply_dephasing(&bell_state(), Arm::Two, 0.8, &basis).unwrap();
        let err = (avg - deph.matrix()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(err < 1e-12);
        let _ = (embed, TwoQubitState::basis_state);
    }
}
