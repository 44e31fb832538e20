//! Fixed-size complex linear algebra for one and two qubits.
//!
//! All two-qubit objects use the ordered basis `|00>, |01>, |10>, |11>` with
//! arm 1 as the left tensor factor.

use std::fmt;

use nalgebra::{Complex, Matrix2, Matrix4, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub type ComplexScalar = Complex<f64>;
pub type Matrix2c = Matrix2<ComplexScalar>;
pub type Matrix4c = Matrix4<ComplexScalar>;

/// Branches whose weight falls at or below this value are treated as impossible.
pub const ZERO_WEIGHT: f64 = 1e-15;
pub const HERMITIAN_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-10;
/// Eigenvalues down to this value are clipped to zero; anything lower is an error.
pub const POSITIVITY_TOL: f64 = -1e-9;

const ONE: ComplexScalar = Complex { re: 1.0, im: 0.0 };

/// One arm of the entangled pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arm {
    One,
    Two,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::One, Arm::Two];

    pub fn index(self) -> usize {
        match self {
            Arm::One => 1,
            Arm::Two => 2,
        }
    }

    /// Zero-based slot for per-arm arrays.
    pub fn slot(self) -> usize {
        self.index() - 1
    }

    pub fn other(self) -> Arm {
        match self {
            Arm::One => Arm::Two,
            Arm::Two => Arm::One,
        }
    }
}

impl TryFrom<u8> for Arm {
    type Error = Error;

    fn try_from(value: u8) -> Result<Self> {
        match value {
            1 => Ok(Arm::One),
            2 => Ok(Arm::Two),
            other => Err(invalid(format!("arm must be 1 or 2, got {other}"))),
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index())
    }
}

/// A single-qubit ket.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QubitVector(Vector2<ComplexScalar>);

impl QubitVector {
    pub fn new(amp0: ComplexScalar, amp1: ComplexScalar) -> Self {
        QubitVector(Vector2::new(amp0, amp1))
    }

    pub fn real(amp0: f64, amp1: f64) -> Self {
        Self::new(Complex::new(amp0, 0.0), Complex::new(amp1, 0.0))
    }

    pub fn amp0(&self) -> ComplexScalar {
        self.0[0]
    }

    pub fn amp1(&self) -> ComplexScalar {
        self.0[1]
    }

    /// `<self|other>`
    pub fn inner(&self, other: &QubitVector) -> ComplexScalar {
        self.0.dotc(&other.0)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.0.norm_squared()
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm_sqr() - 1.0).abs() <= 1e-12
    }

    /// `|self><self|`
    pub fn projector(&self) -> SingleQubitOperator {
        SingleQubitOperator(self.0 * self.0.adjoint())
    }
}

/// A measurement axis at angle `phi` and its orthonormal eigenbasis.
///
/// `ket0 = cos(phi/2)|0> + sin(phi/2)|1>` carries eigenvalue +1 and
/// `ket1 = -sin(phi/2)|0> + cos(phi/2)|1>` carries eigenvalue -1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyzerBasis {
    phi: f64,
    ket0: QubitVector,
    ket1: QubitVector,
}

impl AnalyzerBasis {
    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn ket0(&self) -> &QubitVector {
        &self.ket0
    }

    pub fn ket1(&self) -> &QubitVector {
        &self.ket1
    }

    /// `d0 |ket0><ket0| + d1 |ket1><ket1|`
    pub fn diagonal(&self, d0: f64, d1: f64) -> SingleQubitOperator {
        let p0 = self.ket0.projector().0;
        let p1 = self.ket1.projector().0;
        SingleQubitOperator(p0 * Complex::new(d0, 0.0) + p1 * Complex::new(d1, 0.0))
    }

    /// Projector onto the eigenvector with eigenvalue `+1` (`plus`) or `-1`.
    pub fn projector(&self, plus: bool) -> SingleQubitOperator {
        if plus {
            self.ket0.projector()
        } else {
            self.ket1.projector()
        }
    }

    /// The ±1-valued observable `|ket0><ket0| - |ket1><ket1|`.
    pub fn observable(&self) -> SingleQubitOperator {
        self.diagonal(1.0, -1.0)
    }
}

pub fn analyzer_basis(phi: f64) -> Result<AnalyzerBasis> {
    if !phi.is_finite() {
        return Err(invalid(format!("analyzer angle must be finite, got {phi}")));
    }
    let (s, c) = (phi / 2.0).sin_cos();
    Ok(AnalyzerBasis { phi, ket0: QubitVector::real(c, s), ket1: QubitVector::real(-s, c) })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingleQubitOperator(pub Matrix2c);

impl SingleQubitOperator {
    pub fn identity() -> Self {
        SingleQubitOperator(Matrix2c::identity())
    }

    pub fn from_real(entries: [[f64; 2]; 2]) -> Self {
        SingleQubitOperator(Matrix2c::from_fn(|i, j| Complex::new(entries[i][j], 0.0)))
    }

    pub fn matrix(&self) -> &Matrix2c {
        &self.0
    }

    pub fn adjoint(&self) -> Self {
        SingleQubitOperator(self.0.adjoint())
    }

    /// `M^\dagger M`
    pub fn effect(&self) -> Self {
        SingleQubitOperator(self.0.adjoint() * self.0)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoQubitOperator(pub Matrix4c);

impl TwoQubitOperator {
    pub fn identity() -> Self {
        TwoQubitOperator(Matrix4c::identity())
    }

    pub fn matrix(&self) -> &Matrix4c {
        &self.0
    }

    /// `K X K^\dagger` for an arbitrary (not necessarily normalized) `X`.
    pub fn sandwich(&self, x: &Matrix4c) -> Matrix4c {
        self.0 * x * self.0.adjoint()
    }

    pub fn mul(&self, other: &TwoQubitOperator) -> TwoQubitOperator {
        TwoQubitOperator(self.0 * other.0)
    }
}

/// Lifts a single-qubit operator onto the given arm of the pair.
pub fn embed(op: &SingleQubitOperator, arm: Arm) -> TwoQubitOperator {
    let a = &op.0;
    let mut out = Matrix4c::zeros();
    match arm {
        // op ⊗ I
        Arm::One => {
            for i in 0..2 {
                for j in 0..2 {
                    for k in 0..2 {
                        out[(2 * i + k, 2 * j + k)] = a[(i, j)];
                    }
                }
            }
        }
        // I ⊗ op
        Arm::Two => {
            for k in 0..2 {
                for i in 0..2 {
                    for j in 0..2 {
                        out[(2 * k + i, 2 * k + j)] = a[(i, j)];
                    }
                }
            }
        }
    }
    TwoQubitOperator(out)
}

/// `a ⊗ b` with `a` acting on arm 1.
pub fn kron(a: &SingleQubitOperator, b: &SingleQubitOperator) -> TwoQubitOperator {
    TwoQubitOperator(Matrix4c::from_fn(|r, c| a.0[(r / 2, c / 2)] * b.0[(r % 2, c % 2)]))
}

/// Density matrix of the qubit pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoQubitState {
    rho: Matrix4c,
}

impl TwoQubitState {
    /// Validates a density matrix, clipping slightly negative eigenvalues.
    pub fn from_density_matrix(rho: Matrix4c) -> Result<Self> {
        if rho.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(invalid("density matrix has non-finite entries"));
        }
        let herm_err = (rho - rho.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if herm_err > HERMITIAN_TOL {
            return Err(invalid(format!("density matrix is not Hermitian (deviation {herm_err:e})")));
        }
        let tr = rho.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(invalid(format!("density matrix trace is {tr}, expected 1")));
        }
        let rho = hermitize(&rho);
        let eig = rho.symmetric_eigen();
        let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        if min < POSITIVITY_TOL {
            return Err(invalid(format!("density matrix has negative eigenvalue {min:e}")));
        }
        if min >= 0.0 {
            return Ok(TwoQubitState { rho });
        }
        let clipped = eig.eigenvalues.map(|l| l.max(0.0));
        let vecs = &eig.eigenvectors;
        let mut out = Matrix4c::zeros();
        for (k, &l) in clipped.iter().enumerate() {
            let v = vecs.column(k);
            out += v * v.adjoint() * Complex::new(l, 0.0);
        }
        let tr = out.trace().re;
        Ok(TwoQubitState { rho: hermitize(&(out / Complex::new(tr, 0.0))) })
    }

    /// Pure state `|psi><psi|` from four amplitudes (normalized internally).
    pub fn from_amplitudes(amps: [ComplexScalar; 4]) -> Result<Self> {
        let psi = nalgebra::Vector4::from(amps);
        let n = psi.norm_squared();
        if !(n.is_finite() && n > ZERO_WEIGHT) {
            return Err(invalid("state vector has zero or non-finite norm"));
        }
        let rho = psi * psi.adjoint() / Complex::new(n, 0.0);
        Ok(TwoQubitState { rho: hermitize(&rho) })
    }

    /// Computational basis product state `|i j>`.
    pub fn basis_state(i: usize, j: usize) -> Self {
        let mut rho = Matrix4c::zeros();
        let k = 2 * (i & 1) + (j & 1);
        rho[(k, k)] = ONE;
        TwoQubitState { rho }
    }

    pub fn matrix(&self) -> &Matrix4c {
        &self.rho
    }

    pub fn trace(&self) -> f64 {
        self.rho.trace().re
    }

    /// `Tr rho^2`
    pub fn purity(&self) -> f64 {
        (self.rho * self.rho).trace().re
    }

    pub fn eigenvalues(&self) -> [f64; 4] {
        let e = self.rho.symmetric_eigen().eigenvalues;
        let mut out = [e[0], e[1], e[2], e[3]];
        out.sort_by(f64::total_cmp);
        out
    }

    /// Checks Hermiticity, unit trace and positivity within the library tolerances.
    pub fn check_invariants(&self) -> Result<()> {
        let herm_err = (self.rho - self.rho.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if herm_err > HERMITIAN_TOL {
            return Err(Error::Internal(format!("state lost Hermiticity ({herm_err:e})")));
        }
        if (self.trace() - 1.0).abs() > TRACE_TOL {
            return Err(Error::Internal(format!("state trace drifted to {}", self.trace())));
        }
        let min = self.eigenvalues()[0];
        if min < POSITIVITY_TOL {
            return Err(Error::Internal(format!("state has negative eigenvalue {min:e}")));
        }
        Ok(())
    }

    /// Reduced density matrix of `arm`.
    pub fn reduced(&self, arm: Arm) -> Matrix2c {
        let r = &self.rho;
        Matrix2c::from_fn(|i, j| match arm {
            Arm::One => r[(2 * i, 2 * j)] + r[(2 * i + 1, 2 * j + 1)],
            Arm::Two => r[(i, j)] + r[(2 + i, 2 + j)],
        })
    }

    /// Wraps an unnormalized positive matrix, dividing by `trace`.
    pub(crate) fn from_unnormalized(m: &Matrix4c, trace: f64) -> Self {
        TwoQubitState { rho: hermitize(&(m / Complex::new(trace, 0.0))) }
    }
}

/// `(|00> + |11>)/sqrt(2)` as a density matrix.
pub fn bell_state() -> TwoQubitState {
    let mut rho = Matrix4c::zeros();
    let half = Complex::new(0.5, 0.0);
    for &(i, j) in &[(0, 0), (0, 3), (3, 0), (3, 3)] {
        rho[(i, j)] = half;
    }
    TwoQubitState { rho }
}

/// Applies Kraus operator `k`, returning the branch weight `Tr(K rho K^dagger)`
/// and the renormalized post-measurement state.
pub fn apply_operator(state: &TwoQubitState, k: &TwoQubitOperator) -> Result<(f64, TwoQubitState)> {
    let m = k.sandwich(&state.rho);
    let weight = m.trace().re;
    if !weight.is_finite() {
        return Err(Error::Numerical(format!("non-finite branch weight {weight}")));
    }
    if weight <= ZERO_WEIGHT {
        return Err(Error::ZeroProbabilityBranch { weight });
    }
    Ok((weight, TwoQubitState::from_unnormalized(&m, weight)))
}

/// `Tr(rho O)` for `O` the product of the per-arm ±1 observables (identity
/// on an arm whose basis is `None`).
pub fn expectation(
    state: &TwoQubitState,
    basis1: Option<&AnalyzerBasis>,
    basis2: Option<&AnalyzerBasis>,
) -> Result<f64> {
    if basis1.is_none() && basis2.is_none() {
        return Err(invalid("expectation needs at least one analyzer basis"));
    }
    let o1 = basis1.map_or_else(SingleQubitOperator::identity, AnalyzerBasis::observable);
    let o2 = basis2.map_or_else(SingleQubitOperator::identity, AnalyzerBasis::observable);
    Ok(trace_product(state.matrix(), &kron(&o1, &o2).0))
}

/// `Re Tr(A B)` without forming the product.
pub fn trace_product(a: &Matrix4c, b: &Matrix4c) -> f64 {
    let mut acc = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            acc += (a[(i, j)] * b[(j, i)]).re;
        }
    }
    acc
}

pub(crate) fn hermitize(m: &Matrix4c) -> Matrix4c {
    (m + m.adjoint()) * Complex::new(0.5, 0.0)
}
