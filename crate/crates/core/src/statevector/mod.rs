//! Dense statevector simulation.
//!
//! Amplitudes are stored as two flat `f64` arrays (real and imaginary parts)
//! indexed by the computational basis state. Qubit 0 is the most significant
//! bit of the basis index, so for `n` qubits qubit `q` toggles bit `n - 1 - q`.
//!
//! Rotations follow the half-angle convention `R_P(t) = exp(-i t P / 2)`.

mod adjoint;
mod kernels;
mod linear;
mod mat2;
mod shift;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adjoint::{adjoint_gradient, CompiledCircuit, Gradient};
pub use mat2::Mat2;
use linear::LinearPermutation;
pub use shift::parameter_shift_gradient;

/// Largest register the simulator accepts.
pub const MAX_QUBITS: usize = 24;

/// Pauli axis of a single-qubit rotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    /// Matrix of `exp(-i angle P / 2)`.
    pub fn rotation(self, angle: f64) -> Mat2 {
        let (s, c) = (angle / 2.0).sin_cos();
        let z = Complex64::new(0.0, 0.0);
        match self {
            Axis::X => Mat2([
                [Complex64::new(c, 0.0), Complex64::new(0.0, -s)],
                [Complex64::new(0.0, -s), Complex64::new(c, 0.0)],
            ]),
            Axis::Y => Mat2([
                [Complex64::new(c, 0.0), Complex64::new(-s, 0.0)],
                [Complex64::new(s, 0.0), Complex64::new(c, 0.0)],
            ]),
            Axis::Z => Mat2([[Complex64::new(c, -s), z], [z, Complex64::new(c, s)]]),
        }
    }

    pub fn pauli(self) -> Mat2 {
        let o = Complex64::new(0.0, 0.0);
        let one = Complex64::new(1.0, 0.0);
        let i = Complex64::new(0.0, 1.0);
        match self {
            Axis::X => Mat2([[o, one], [one, o]]),
            Axis::Y => Mat2([[o, -i], [i, o]]),
            Axis::Z => Mat2([[one, o], [o, -one]]),
        }
    }
}

/// Where a rotation gate takes its angle from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AngleSource {
    /// A bound angle in radians.
    Fixed(f64),
    /// Index into the trainable parameter vector.
    Param(usize),
    /// Index into the input feature vector.
    Input(usize),
}

impl AngleSource {
    pub fn resolve(self, params: &[f64], inputs: &[f64]) -> Result<f64> {
        match self {
            AngleSource::Fixed(a) => Ok(a),
            AngleSource::Param(s) => params.get(s).copied().ok_or_else(|| {
                Error::Configuration(format!(
                    "unbound parameter slot {s} (have {} parameters)",
                    params.len()
                ))
            }),
            AngleSource::Input(s) => inputs.get(s).copied().ok_or_else(|| {
                Error::Configuration(format!(
                    "unbound input slot {s} (have {} features)",
                    inputs.len()
                ))
            }),
        }
    }
}

/// One gate of a circuit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GateOp {
    Rotation {
        axis: Axis,
        qubit: usize,
        angle: AngleSource,
    },
    Cnot {
        control: usize,
        target: usize,
    },
    Swap {
        a: usize,
        b: usize,
    },
}

impl GateOp {
    pub fn rx(qubit: usize, angle: AngleSource) -> Self {
        GateOp::Rotation {
            axis: Axis::X,
            qubit,
            angle,
        }
    }

    pub fn ry(qubit: usize, angle: AngleSource) -> Self {
        GateOp::Rotation {
            axis: Axis::Y,
            qubit,
            angle,
        }
    }

    pub fn rz(qubit: usize, angle: AngleSource) -> Self {
        GateOp::Rotation {
            axis: Axis::Z,
            qubit,
            angle,
        }
    }

    pub fn cnot(control: usize, target: usize) -> Self {
        GateOp::Cnot { control, target }
    }

    pub fn swap(a: usize, b: usize) -> Self {
        GateOp::Swap { a, b }
    }

    pub fn qubits(&self) -> Vec<usize> {
        match *self {
            GateOp::Rotation { qubit, .. } => vec![qubit],
            GateOp::Cnot { control, target } => vec![control, target],
            GateOp::Swap { a, b } => vec![a, b],
        }
    }

    pub fn is_two_qubit(&self) -> bool {
        !matches!(self, GateOp::Rotation { .. })
    }

    pub fn validate(&self, n_qubits: usize) -> Result<()> {
        let qs = self.qubits();
        if let Some(&q) = qs.iter().find(|&&q| q >= n_qubits) {
            return Err(Error::Validation(format!(
                "gate {self:?} addresses qubit {q} on a {n_qubits}-qubit register"
            )));
        }
        if qs.len() == 2 && qs[0] == qs[1] {
            return Err(Error::Validation(format!(
                "gate {self:?} uses the same qubit twice"
            )));
        }
        Ok(())
    }

    /// Replace parameter and input slots by their values.
    pub fn bind(&self, params: &[f64], inputs: &[f64]) -> Result<GateOp> {
        Ok(match *self {
            GateOp::Rotation { axis, qubit, angle } => GateOp::Rotation {
                axis,
                qubit,
                angle: AngleSource::Fixed(angle.resolve(params, inputs)?),
            },
            other => other,
        })
    }

    /// The gate undoing this one, for bound gates.
    pub fn inverse(&self) -> Result<GateOp> {
        match *self {
            GateOp::Rotation {
                axis,
                qubit,
                angle: AngleSource::Fixed(a),
            } => Ok(GateOp::Rotation {
                axis,
                qubit,
                angle: AngleSource::Fixed(-a),
            }),
            GateOp::Rotation { .. } => Err(Error::Configuration(
                "cannot invert a gate with an unbound angle".into(),
            )),
            other => Ok(other),
        }
    }
}

/// Weighted sum of single-qubit Pauli Z operators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZSumObservable {
    terms: Vec<(usize, f64)>,
}

impl ZSumObservable {
    pub fn new(terms: Vec<(usize, f64)>) -> Result<Self> {
        let mut seen: Vec<usize> = terms.iter().map(|t| t.0).collect();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Validation(
                "observable terms must act on distinct qubits".into(),
            ));
        }
        Ok(Self { terms })
    }

    /// `(1/|qubits|) * sum_q Z_q`.
    pub fn mean_z(qubits: &[usize]) -> Result<Self> {
        if qubits.is_empty() {
            return Err(Error::Validation("observable needs at least one qubit".into()));
        }
        let w = 1.0 / qubits.len() as f64;
        Self::new(qubits.iter().map(|&q| (q, w)).collect())
    }

    pub fn terms(&self) -> &[(usize, f64)] {
        &self.terms
    }

    pub fn qubits(&self) -> Vec<usize> {
        self.terms.iter().map(|t| t.0).collect()
    }

    /// Sum of absolute coefficients, the bound on any expectation value.
    pub fn norm_bound(&self) -> f64 {
        self.terms.iter().map(|t| t.1.abs()).sum()
    }

    /// Eigenvalue of the observable on every basis state.
    pub fn diagonal(&self, n_qubits: usize) -> Result<Vec<f64>> {
        self.check(n_qubits)?;
        let dim = 1usize << n_qubits;
        let mut d = vec![0.0; dim];
        for &(q, c) in &self.terms {
            let mask = 1usize << (n_qubits - 1 - q);
            for (b, v) in d.iter_mut().enumerate() {
                *v += if b & mask == 0 { c } else { -c };
            }
        }
        Ok(d)
    }

    fn check(&self, n_qubits: usize) -> Result<()> {
        match self.terms.iter().find(|t| t.0 >= n_qubits) {
            Some(t) => Err(Error::Validation(format!(
                "observable addresses qubit {} on a {n_qubits}-qubit register",
                t.0
            ))),
            None => Ok(()),
        }
    }
}

/// Dense pure state of `n_qubits` qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl StateVector {
    /// `|0...0>`.
    pub fn zero(n_qubits: usize) -> Result<Self> {
        if n_qubits == 0 || n_qubits > MAX_QUBITS {
            return Err(Error::Capacity(format!(
                "register of {n_qubits} qubits is outside 1..={MAX_QUBITS}"
            )));
        }
        let dim = 1usize << n_qubits;
        let mut re = vec![0.0; dim];
        re[0] = 1.0;
        Ok(Self {
            n_qubits,
            re,
            im: vec![0.0; dim],
        })
    }

    /// Wrap raw amplitudes. The length must be a power of two; no normalization is applied.
    pub fn from_amplitudes(amps: &[Complex64]) -> Result<Self> {
        let dim = amps.len();
        if dim < 2 || !dim.is_power_of_two() {
            return Err(Error::Validation(format!(
                "amplitude count {dim} is not a power of two >= 2"
            )));
        }
        let n_qubits = dim.trailing_zeros() as usize;
        if n_qubits > MAX_QUBITS {
            return Err(Error::Capacity(format!("{n_qubits} qubits exceeds {MAX_QUBITS}")));
        }
        Ok(Self {
            n_qubits,
            re: amps.iter().map(|a| a.re).collect(),
            im: amps.iter().map(|a| a.im).collect(),
        })
    }

    /// Haar-ish random normalized state (Gaussian amplitudes, normalized).
    pub fn random<R: Rng + ?Sized>(n_qubits: usize, rng: &mut R) -> Result<Self> {
        let mut s = Self::zero(n_qubits)?;
        for (r, i) in s.re.iter_mut().zip(s.im.iter_mut()) {
            *r = rng.sample(StandardNormal);
            *i = rng.sample(StandardNormal);
        }
        let n = s.norm();
        s.scale(1.0 / n);
        Ok(s)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.re.len()
    }

    pub fn amplitude(&self, index: usize) -> Complex64 {
        Complex64::new(self.re[index], self.im[index])
    }

    pub fn amplitudes(&self) -> Vec<Complex64> {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(&r, &i)| Complex64::new(r, i))
            .collect()
    }

    pub fn norm(&self) -> f64 {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(r, i)| r * r + i * i)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, k: f64) {
        self.re.iter_mut().for_each(|v| *v *= k);
        self.im.iter_mut().for_each(|v| *v *= k);
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &StateVector) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for k in 0..self.dim() {
            acc += Complex64::new(self.re[k], -self.im[k])
                * Complex64::new(other.re[k], other.im[k]);
        }
        acc
    }

    /// Euclidean distance `||self - other||`.
    /// Elementwise sum; the result is generally not normalized.
    pub fn add(&self, other: &StateVector) -> Result<StateVector> {
        if self.n_qubits != other.n_qubits {
            return Err(Error::Validation("qubit counts differ".into()));
        }
        let mut out = self.clone();
        for (a, b) in out.re.iter_mut().zip(&other.re) {
            *a += b;
        }
        for (a, b) in out.im.iter_mut().zip(&other.im) {
            *a += b;
        }
        Ok(out)
    }

    pub fn distance(&self, other: &StateVector) -> f64 {
        self.re
            .iter()
            .zip(&self.im)
            .zip(other.re.iter().zip(&other.im))
            .map(|((a, b), (c, d))| (a - c).powi(2) + (b - d).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Largest elementwise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &StateVector) -> f64 {
        self.re
            .iter()
            .zip(&self.im)
            .zip(other.re.iter().zip(&other.im))
            .map(|((a, b), (c, d))| ((a - c).powi(2) + (b - d).powi(2)).sqrt())
            .fold(0.0, f64::max)
    }

    fn stride(&self, qubit: usize) -> usize {
        1usize << (self.n_qubits - 1 - qubit)
    }

    fn check_qubit(&self, qubit: usize) -> Result<()> {
        if qubit >= self.n_qubits {
            return Err(Error::Validation(format!(
                "qubit {qubit} out of range for {} qubits",
                self.n_qubits
            )));
        }
        Ok(())
    }

    /// Apply an arbitrary 2x2 matrix to one qubit. Callers validate `qubit`.
    pub(crate) fn apply_mat2(&mut self, qubit: usize, m: &Mat2) {
        let s = self.stride(qubit);
        let [[a, b], [c, d]] = m.0;
        let flat = [a.re, a.im, b.re, b.im, c.re, c.im, d.re, d.im];
        kernels::mat2(&mut self.re, &mut self.im, s, &flat);
    }

    /// Multiply the `|0>` and `|1>` components of one qubit by `d0` and `d1`.
    pub(crate) fn apply_diag(&mut self, qubit: usize, d0: Complex64, d1: Complex64) {
        let s = self.stride(qubit);
        let kernel = |r0: &mut [f64], i0: &mut [f64], r1: &mut [f64], i1: &mut [f64]| {
            for k in 0..r0.len() {
                let (xr, xi, yr, yi) = (r0[k], i0[k], r1[k], i1[k]);
                r0[k] = d0.re * xr - d0.im * xi;
                i0[k] = d0.re * xi + d0.im * xr;
                r1[k] = d1.re * yr - d1.im * yi;
                i1[k] = d1.re * yi + d1.im * yr;
            }
        };
        for_each_pair(&mut self.re, &mut self.im, s, kernel);
    }

    pub(crate) fn apply_cnot_unchecked(&mut self, control: usize, target: usize) {
        let sc = self.stride(control);
        let st = self.stride(target);
        let (lo, hi) = if sc < st { (sc, st) } else { (st, sc) };
        let dim = self.dim();
        let mut a = 0;
        while a < dim {
            let mut b = a;
            while b < a + hi {
                for k in b..b + lo {
                    let i = k + sc;
                    self.re.swap(i, i + st);
                    self.im.swap(i, i + st);
                }
                b += 2 * lo;
            }
            a += 2 * hi;
        }
    }

    pub(crate) fn apply_swap_unchecked(&mut self, qa: usize, qb: usize) {
        let sa = self.stride(qa);
        let sb = self.stride(qb);
        let (lo, hi) = if sa < sb { (sa, sb) } else { (sb, sa) };
        let dim = self.dim();
        // Exchange |..1..0..> with |..0..1..> (bit `hi` set, bit `lo` clear).
        let mut a = 0;
        while a < dim {
            let mut b = a;
            while b < a + hi {
                for k in b..b + lo {
                    let i = k + hi;
                    let j = k + lo;
                    self.re.swap(i, j);
                    self.im.swap(i, j);
                }
                b += 2 * lo;
            }
            a += 2 * hi;
        }
    }

    /// Apply a single Pauli operator (not a rotation) to one qubit.
    pub fn apply_pauli(&mut self, axis: Axis, qubit: usize) -> Result<()> {
        self.check_qubit(qubit)?;
        match axis {
            Axis::Z => self.apply_diag(qubit, Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)),
            _ => self.apply_mat2(qubit, &axis.pauli()),
        }
        Ok(())
    }

    /// `sum_b w_b |a_b|^2` for a diagonal observable given by its eigenvalues.
    pub(crate) fn diagonal_expectation(&self, diag: &[f64]) -> f64 {
        self.re
            .iter()
            .zip(&self.im)
            .zip(diag)
            .map(|((r, i), d)| d * (r * r + i * i))
            .sum()
    }

    pub(crate) fn mul_diagonal(&mut self, diag: &[f64]) {
        for ((r, i), d) in self.re.iter_mut().zip(self.im.iter_mut()).zip(diag) {
            *r *= d;
            *i *= d;
        }
    }

    /// `Im <other| P_q |self>` for `P = X, Y, Z`.
    pub(crate) fn pauli_overlaps(&self, other: &StateVector, qubit: usize) -> [f64; 3] {
        kernels::overlap(&self.re, &self.im, &other.re, &other.im, self.stride(qubit))
    }

    /// Product state `v_0 (x) v_1 (x) ... (x) v_{n-1}` with qubit 0 most significant.
    pub(crate) fn product(factors: &[[Complex64; 2]]) -> Result<Self> {
        let mut s = Self::zero(factors.len())?;
        let mut len = 1usize;
        let mut re = vec![0.0; s.dim()];
        let mut im = vec![0.0; s.dim()];
        re[0] = 1.0;
        for f in factors {
            // expand in place from the back so reads precede writes
            for i in (0..len).rev() {
                let x = Complex64::new(re[i], im[i]);
                let a = x * f[0];
                let b = x * f[1];
                re[2 * i] = a.re;
                im[2 * i] = a.im;
                re[2 * i + 1] = b.re;
                im[2 * i + 1] = b.im;
            }
            len *= 2;
        }
        s.re = re;
        s.im = im;
        Ok(s)
    }
}

fn for_each_pair<F>(re: &mut [f64], im: &mut [f64], s: usize, mut kernel: F)
where
    F: FnMut(&mut [f64], &mut [f64], &mut [f64], &mut [f64]),
{
    if s == 1 {
        // Interleaved pairs: deinterleaving costs more than the scalar loop.
        for (r, i) in re.chunks_exact_mut(2).zip(im.chunks_exact_mut(2)) {
            let (r0, r1) = r.split_at_mut(1);
            let (i0, i1) = i.split_at_mut(1);
            kernel(r0, i0, r1, i1);
        }
        return;
    }
    for (r, i) in re.chunks_exact_mut(2 * s).zip(im.chunks_exact_mut(2 * s)) {
        let (r0, r1) = r.split_at_mut(s);
        let (i0, i1) = i.split_at_mut(s);
        kernel(r0, i0, r1, i1);
    }
}

/// `|0...0>` on `n_qubits` qubits.
pub fn init_zero(n_qubits: usize) -> Result<StateVector> {
    StateVector::zero(n_qubits)
}

/// Apply one bound gate.
pub fn apply_gate(state: &mut StateVector, gate: &GateOp) -> Result<()> {
    apply_gate_with(state, gate, &[], &[])
}

/// Apply one gate, resolving parameter and input slots from the given vectors.
pub fn apply_gate_with(
    state: &mut StateVector,
    gate: &GateOp,
    params: &[f64],
    inputs: &[f64],
) -> Result<()> {
    gate.validate(state.n_qubits)?;
    match *gate {
        GateOp::Rotation { axis, qubit, angle } => {
            let theta = angle.resolve(params, inputs)?;
            match axis {
                Axis::Z => {
                    let (s, c) = (theta / 2.0).sin_cos();
                    state.apply_diag(qubit, Complex64::new(c, -s), Complex64::new(c, s));
                }
                _ => state.apply_mat2(qubit, &axis.rotation(theta)),
            }
        }
        GateOp::Cnot { control, target } => state.apply_cnot_unchecked(control, target),
        GateOp::Swap { a, b } => state.apply_swap_unchecked(a, b),
    }
    Ok(())
}

/// Run a gate list on `|0...0>`.
pub fn simulate(
    n_qubits: usize,
    gates: &[GateOp],
    params: &[f64],
    inputs: &[f64],
) -> Result<StateVector> {
    let mut state = StateVector::zero(n_qubits)?;
    for g in gates {
        apply_gate_with(&mut state, g, params, inputs)?;
    }
    Ok(state)
}

/// `sum_k c_k <Z_{q_k}>`.
pub fn expectation(state: &StateVector, obs: &ZSumObservable) -> Result<f64> {
    obs.check(state.n_qubits)?;
    let n = state.n_qubits;
    let mut total = 0.0;
    for &(q, c) in obs.terms() {
        let mask = 1usize << (n - 1 - q);
        let mut z = 0.0;
        for b in 0..state.dim() {
            let p = state.re[b] * state.re[b] + state.im[b] * state.im[b];
            if b & mask == 0 {
                z += p;
            } else {
                z -= p;
            }
        }
        total += c * z;
    }
    Ok(total)
}

/// A bijection on qubit positions: after applying it, qubit `q` holds the
/// state previously held by qubit `sources[q]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QubitPermutation {
    sources: Vec<usize>,
}

impl QubitPermutation {
    pub fn new(sources: Vec<usize>) -> Result<Self> {
        let n = sources.len();
        let mut seen = vec![false; n];
        for &s in &sources {
            if s >= n || std::mem::replace(&mut seen[s], true) {
                return Err(Error::Validation(format!(
                    "qubit map {sources:?} is not a bijection"
                )));
            }
        }
        Ok(Self { sources })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            sources: (0..n).collect(),
        }
    }

    /// Permutation realized by `SWAP(a, b)`.
    pub fn transposition(n: usize, a: usize, b: usize) -> Self {
        let mut p = Self::identity(n);
        p.sources.swap(a, b);
        p
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn sources(&self) -> &[usize] {
        &self.sources
    }

    pub fn is_identity(&self) -> bool {
        self.sources.iter().enumerate().all(|(i, &s)| i == s)
    }

    /// Apply `self` first, then `next`.
    pub fn then(&self, next: &QubitPermutation) -> QubitPermutation {
        QubitPermutation {
            sources: next.sources.iter().map(|&m| self.sources[m]).collect(),
        }
    }

    pub fn inverse(&self) -> QubitPermutation {
        let mut inv = vec![0; self.sources.len()];
        for (q, &s) in self.sources.iter().enumerate() {
            inv[s] = q;
        }
        QubitPermutation { sources: inv }
    }

    /// Where the content of qubit `q` ends up.
    pub fn destination(&self, q: usize) -> usize {
        self.sources.iter().position(|&s| s == q).expect("bijection")
    }

    /// A SWAP sequence that, applied left to right, realizes this permutation.
    pub fn swap_decomposition(&self) -> Vec<(usize, usize)> {
        // current[q] = original qubit whose content sits at q
        let mut current: Vec<usize> = (0..self.len()).collect();
        let mut swaps = Vec::new();
        for q in 0..self.len() {
            if current[q] != self.sources[q] {
                let p = current
                    .iter()
                    .position(|&c| c == self.sources[q])
                    .expect("bijection");
                current.swap(q, p);
                swaps.push((q, p));
            }
        }
        swaps
    }
}

/// Relabel qubits of `state` by `perm` via a basis-index permutation.
pub fn permute_qubits(state: &StateVector, perm: &QubitPermutation) -> Result<StateVector> {
    let n = state.n_qubits;
    if perm.len() != n {
        return Err(Error::Validation(format!(
            "permutation on {} qubits applied to {n}-qubit state",
            perm.len()
        )));
    }
    let mut out = state.clone();
    if !perm.is_identity() {
        let swaps: Vec<GateOp> = perm
            .swap_decomposition()
            .into_iter()
            .map(|(a, b)| GateOp::swap(a, b))
            .collect();
        LinearPermutation::from_gates(n, &swaps).apply(&mut out, false);
    }
    Ok(out)
}
