//! Weak and projective qubit meters.
//!
//! Each meter is QND in its analyzer basis. Sampling functions draw one
//! outcome and return the updated state; the `*_moment` functions give the
//! signal-weighted sum over all outcomes, `Σ signal^p · K ρ K†`, which is the
//! deterministic counterpart used by the exact correlator.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::Complex;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::qmath::{
    apply_operator, embed, trace_product, AnalyzerBasis, Arm, Matrix4c, SingleQubitOperator, TwoQubitOperator,
    TwoQubitState,
};
use crate::quadrature::GaussHermite;

/// Quantum-limited Gaussian meter with signal width `sigma` and efficiency `eta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianMeterSpec {
    pub sigma: f64,
    pub eta: f64,
}

impl GaussianMeterSpec {
    pub fn new(sigma: f64, eta: f64) -> Result<Self> {
        let spec = GaussianMeterSpec { sigma, eta };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(invalid(format!("sigma must be finite and > 0, got {}", self.sigma)));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(invalid(format!("eta must lie in (0, 1], got {}", self.eta)));
        }
        Ok(())
    }

    /// Dephasing added on top of the Kraus back-action to model `eta < 1`.
    pub fn excess_dephasing(&self) -> f64 {
        (-(1.0 / (2.0 * self.sigma * self.sigma)) * (1.0 / self.eta - 1.0)).exp()
    }
}

/// Ancilla-qubit meter with total signal visibility `v_total` and ancilla
/// readout visibility `u`. The entangling strength is `v_total / u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AncillaMeterSpec {
    pub v_total: f64,
    pub u: f64,
}

impl AncillaMeterSpec {
    pub fn new(v_total: f64, u: f64) -> Result<Self> {
        let spec = AncillaMeterSpec { v_total, u };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v_total > 0.0 && self.v_total <= 1.0) {
            return Err(invalid(format!("v_total must lie in (0, 1], got {}", self.v_total)));
        }
        if !(self.u > 0.0 && self.u <= 1.0) {
            return Err(invalid(format!("u must lie in (0, 1], got {}", self.u)));
        }
        if self.v_total > self.u {
            return Err(invalid(format!("v_total ({}) must not exceed u ({})", self.v_total, self.u)));
        }
        Ok(())
    }

    pub fn entangling_strength(&self) -> f64 {
        (self.v_total / self.u).min(1.0)
    }
}

/// Final projective readout with visibility `v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectiveMeterSpec {
    pub v: f64,
}

impl ProjectiveMeterSpec {
    pub fn new(v: f64) -> Result<Self> {
        let spec = ProjectiveMeterSpec { v };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.v) {
            return Err(invalid(format!("v must lie in [0, 1], got {}", self.v)));
        }
        Ok(())
    }
}

impl Default for ProjectiveMeterSpec {
    fn default() -> Self {
        ProjectiveMeterSpec { v: 1.0 }
    }
}

/// Meter used for the first (weak) measurement on an arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum MeterSpec {
    Gaussian(GaussianMeterSpec),
    Ancilla(AncillaMeterSpec),
}

impl MeterSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            MeterSpec::Gaussian(g) => g.validate(),
            MeterSpec::Ancilla(a) => a.validate(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeterOutcome {
    /// Recorded signal (`alpha_k` or `b_k`).
    pub signal: f64,
    pub post_state: TwoQubitState,
    /// Probability of the branch that was realized. For the Gaussian meter
    /// this is the population of the eigenstate whose Gaussian produced the
    /// signal.
    pub branch_weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn flip(self) -> Sign {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }
}

/// Diagonal entries (`|0>_basis`, `|1>_basis`) of the Gaussian Kraus operator.
fn gaussian_entries(alpha: f64, sigma: f64) -> (f64, f64) {
    let norm = (2.0 * PI * sigma * sigma).powf(-0.25);
    let s = 4.0 * sigma * sigma;
    (norm * (-(alpha - 1.0).powi(2) / s).exp(), norm * (-(alpha + 1.0).powi(2) / s).exp())
}

/// Kraus operator of the Gaussian meter for signal value `alpha`.
pub fn gaussian_kraus(alpha: f64, sigma: f64, basis: &AnalyzerBasis) -> SingleQubitOperator {
    let (g0, g1) = gaussian_entries(alpha, sigma);
    basis.diagonal(g0, g1)
}

/// Kraus operator `M_±` of the ancilla meter at entangling strength `v_ent`.
pub fn ancilla_kraus(sign: Sign, v_ent: f64, basis: &AnalyzerBasis) -> Result<SingleQubitOperator> {
    let (d0, d1) = ancilla_entries(sign, v_ent)?;
    Ok(basis.diagonal(d0, d1))
}

/// Diagonal entries of `M_±` in the meter basis.
fn ancilla_entries(sign: Sign, v_ent: f64) -> Result<(f64, f64)> {
    if !(v_ent > 0.0 && v_ent <= 1.0) {
        return Err(invalid(format!("entangling strength must lie in (0, 1], got {v_ent}")));
    }
    let hi = (0.5 + v_ent / 2.0).sqrt();
    let lo = (0.5 - v_ent / 2.0).max(0.0).sqrt();
    Ok(match sign {
        Sign::Plus => (hi, lo),
        Sign::Minus => (lo, hi),
    })
}

/// Average damping of the measured arm's coherences in the meter basis.
///
/// Readout visibility of the final projective measurement is not included.
pub fn dephasing_factor(spec: &MeterSpec) -> f64 {
    match spec {
        MeterSpec::Gaussian(g) => (-1.0 / (2.0 * g.sigma * g.sigma * g.eta)).exp(),
        MeterSpec::Ancilla(a) => {
            let r = a.v_total / a.u;
            (1.0 - r * r).max(0.0).sqrt()
        }
    }
}

/// `(1+f)/2 ρ + (1-f)/2 Z ρ Z` with `Z` the arm's reflection in `basis`.
fn dephase_matrix(rho: &Matrix4c, arm: Arm, factor: f64, basis: &AnalyzerBasis) -> Matrix4c {
    if factor == 1.0 {
        return *rho;
    }
    let z = embed(&basis.observable(), arm);
    rho * Complex::new((1.0 + factor) / 2.0, 0.0) + z.sandwich(rho) * Complex::new((1.0 - factor) / 2.0, 0.0)
}

/// Multiplies the arm's off-diagonal blocks in `basis` by `factor`.
pub fn apply_dephasing(state: &TwoQubitState, arm: Arm, factor: f64, basis: &AnalyzerBasis) -> Result<TwoQubitState> {
    if !(0.0..=1.0).contains(&factor) {
        return Err(invalid(format!("dephasing factor must lie in [0, 1], got {factor}")));
    }
    let m = dephase_matrix(state.matrix(), arm, factor, basis);
    Ok(TwoQubitState::from_unnormalized(&m, m.trace().re))
}

fn population(state: &TwoQubitState, arm: Arm, basis: &AnalyzerBasis, plus: bool) -> f64 {
    trace_product(state.matrix(), embed(&basis.projector(plus), arm).matrix()).clamp(0.0, 1.0)
}

/// Samples the binary branch `plus` with probability `p_plus`, applying the
/// matching Kraus operator. A numerically empty branch falls back to the other.
fn sample_branch<R: Rng + ?Sized>(
    state: &TwoQubitState,
    p_plus: f64,
    kraus: impl Fn(bool) -> TwoQubitOperator,
    rng: &mut R,
) -> Result<(bool, f64, TwoQubitState)> {
    let plus = rng.random::<f64>() < p_plus;
    match apply_operator(state, &kraus(plus)) {
        Ok((w, s)) => Ok((plus, w, s)),
        Err(Error::ZeroProbabilityBranch { .. }) => {
            let (w, s) = apply_operator(state, &kraus(!plus))?;
            Ok((!plus, w, s))
        }
        Err(e) => Err(e),
    }
}

fn flip_with_visibility<R: Rng + ?Sized>(plus: bool, visibility: f64, rng: &mut R) -> bool {
    if rng.random::<f64>() < (1.0 - visibility) / 2.0 {
        !plus
    } else {
        plus
    }
}

pub fn sample_gaussian<R: Rng + ?Sized>(
    state: &TwoQubitState,
    arm: Arm,
    spec: &GaussianMeterSpec,
    basis: &AnalyzerBasis,
    rng: &mut R,
) -> Result<MeterOutcome> {
    let p0 = population(state, arm, basis, true);
    let plus = rng.random::<f64>() < p0;
    let center = if plus { 1.0 } else { -1.0 };
    let z: f64 = rng.sample(StandardNormal);
    let alpha = center + spec.sigma * z;
    let kraus = embed(&gaussian_kraus(alpha, spec.sigma, basis), arm);
    let (_, post) = apply_operator(state, &kraus)?;
    let post = if spec.eta < 1.0 { apply_dephasing(&post, arm, spec.excess_dephasing(), basis)? } else { post };
    Ok(MeterOutcome { signal: alpha, post_state: post, branch_weight: if plus { p0 } else { 1.0 - p0 } })
}

pub fn sample_ancilla<R: Rng + ?Sized>(
    state: &TwoQubitState,
    arm: Arm,
    spec: &AncillaMeterSpec,
    basis: &AnalyzerBasis,
    rng: &mut R,
) -> Result<MeterOutcome> {
    let v_ent = spec.entangling_strength();
    let plus_op = ancilla_kraus(Sign::Plus, v_ent, basis)?;
    let m_plus = embed(&plus_op, arm);
    let m_minus = embed(&ancilla_kraus(Sign::Minus, v_ent, basis)?, arm);
    let p_plus = trace_product(state.matrix(), embed(&plus_op.effect(), arm).matrix());
    let (plus, weight, post) = sample_branch(state, p_plus, |p| if p { m_plus } else { m_minus }, rng)?;
    let reported = flip_with_visibility(plus, spec.u, rng);
    Ok(MeterOutcome {
        signal: if reported { 1.0 } else { -1.0 } / spec.v_total,
        post_state: post,
        branch_weight: weight,
    })
}

pub fn projective_sample<R: Rng + ?Sized>(
    state: &TwoQubitState,
    arm: Arm,
    spec: &ProjectiveMeterSpec,
    basis: &AnalyzerBasis,
    rng: &mut R,
) -> Result<MeterOutcome> {
    let p_plus = population(state, arm, basis, true);
    let p0 = embed(&basis.projector(true), arm);
    let p1 = embed(&basis.projector(false), arm);
    let (plus, weight, post) = sample_branch(state, p_plus, |p| if p { p0 } else { p1 }, rng)?;
    let reported = flip_with_visibility(plus, spec.v, rng);
    Ok(MeterOutcome { signal: if reported { 1.0 } else { -1.0 }, post_state: post, branch_weight: weight })
}

/// Dispatches to the Gaussian or ancilla sampler.
pub fn sample_meter<R: Rng + ?Sized>(
    state: &TwoQubitState,
    arm: Arm,
    spec: &MeterSpec,
    basis: &AnalyzerBasis,
    rng: &mut R,
) -> Result<MeterOutcome> {
    match spec {
        MeterSpec::Gaussian(g) => sample_gaussian(state, arm, g, basis, rng),
        MeterSpec::Ancilla(a) => sample_ancilla(state, arm, a, basis, rng),
    }
}

/// Block decomposition `P_i ρ P_j` of `rho` in the arm's analyzer basis.
fn basis_blocks(rho: &Matrix4c, arm: Arm, basis: &AnalyzerBasis) -> [[Matrix4c; 2]; 2] {
    let p = [embed(&basis.projector(true), arm), embed(&basis.projector(false), arm)];
    let block = |i: usize, j: usize| p[i].matrix() * rho * p[j].matrix();
    [[block(0, 0), block(0, 1)], [block(1, 0), block(1, 1)]]
}

fn combine_blocks(blocks: &[[Matrix4c; 2]; 2], coeff: [[f64; 2]; 2]) -> Matrix4c {
    let mut out = Matrix4c::zeros();
    for i in 0..2 {
        for j in 0..2 {
            if coeff[i][j] != 0.0 {
                out += blocks[i][j] * Complex::new(coeff[i][j], 0.0);
            }
        }
    }
    out
}

/// Integrals `∫ α^p m_i(α) m_j(α) dα` of the Gaussian Kraus entries.
///
/// Each product is a Gaussian of width `σ` peaked at `+1`, `-1` or `0`, so
/// each block gets a rule centred on its own peak.
pub fn gaussian_block_integrals(sigma: f64, power: u32, rule: &GaussHermite) -> [[f64; 2]; 2] {
    let scale = SQRT_2 * sigma;
    let moment = |center: f64, pick: fn(f64, f64) -> f64| {
        rule.integrate_line(center, scale, |alpha| {
            let (g0, g1) = gaussian_entries(alpha, sigma);
            alpha.powi(power as i32) * pick(g0, g1)
        })
    };
    let off = moment(0.0, |g0, g1| g0 * g1);
    [[moment(1.0, |g0, _| g0 * g0), off], [off, moment(-1.0, |_, g1| g1 * g1)]]
}

/// `Σ_outcomes α^power · K ρ K†` for the weak meter on `arm`, including the
/// excess dephasing of an inefficient Gaussian meter and the readout flips of
/// the ancilla. `rule` is only used by the Gaussian meter.
pub fn signal_moment(
    rho: &Matrix4c,
    arm: Arm,
    spec: &MeterSpec,
    basis: &AnalyzerBasis,
    power: u32,
    rule: &GaussHermite,
) -> Result<Matrix4c> {
    let blocks = basis_blocks(rho, arm, basis);
    let coeff = match spec {
        MeterSpec::Gaussian(g) => {
            let mut c = gaussian_block_integrals(g.sigma, power, rule);
            let extra = g.excess_dephasing();
            c[0][1] *= extra;
            c[1][0] *= extra;
            c
        }
        MeterSpec::Ancilla(a) => {
            let v_ent = a.entangling_strength();
            let mut c = [[0.0; 2]; 2];
            for sign in [Sign::Plus, Sign::Minus] {
                let (d0, d1) = ancilla_entries(sign, v_ent)?;
                let mut weight = 0.0;
                for reported in [Sign::Plus, Sign::Minus] {
                    let p = if reported == sign { (1.0 + a.u) / 2.0 } else { (1.0 - a.u) / 2.0 };
                    weight += p * (reported.value() / a.v_total).powi(power as i32);
                }
                c[0][0] += weight * d0 * d0;
                c[1][1] += weight * d1 * d1;
                c[0][1] += weight * d0 * d1;
            }
            c[1][0] = c[0][1];
            c
        }
    };
    Ok(combine_blocks(&blocks, coeff))
}

/// `Σ_{true, reported} P(reported|true) reported^power · P_true ρ P_true` for
/// the projective readout on `arm`.
pub fn readout_moment(
    rho: &Matrix4c,
    arm: Arm,
    spec: &ProjectiveMeterSpec,
    basis: &AnalyzerBasis,
    power: u32,
) -> Matrix4c {
    let blocks = basis_blocks(rho, arm, basis);
    let mut diag = [0.0; 2];
    for (k, truth) in [Sign::Plus, Sign::Minus].into_iter().enumerate() {
        for reported in [Sign::Plus, Sign::Minus] {
            let p = if reported == truth { (1.0 + spec.v) / 2.0 } else { (1.0 - spec.v) / 2.0 };
            diag[k] += p * reported.value().powi(power as i32);
        }
    }
    combine_blocks(&blocks, [[diag[0], 0.0], [0.0, diag[1]]])
}
