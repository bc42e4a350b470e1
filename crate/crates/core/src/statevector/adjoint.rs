//! Compiled circuits and reverse-mode (adjoint) differentiation.
//!
//! Consecutive single-qubit rotations are grouped into local stages. Each
//! qubit's rotations within a stage are fused into one 2x2 matrix for the
//! forward sweep. The backward sweep recovers every rotation's derivative
//! from the 2x2 reduced cross matrix `M = Tr_rest |phi><lambda|` of that
//! qubit: `d<O>/dt = Im Tr(P M)` for a gate `exp(-i t P / 2)`, and moving
//! `M` backwards through a rotation `R` is `R^dag M R`. `M` is rebuilt from
//! the three overlaps `Im <lambda|P|phi>`, which is all the sweep needs.

use num_complex::Complex64;

use super::linear::LinearPermutation;
use super::{AngleSource, Axis, GateOp, Mat2, StateVector, ZSumObservable};
use crate::error::{Error, Result};

/// Upper bound on amplitudes held in forward checkpoints (2^23 ~ 128 MiB).
const CHECKPOINT_BUDGET: usize = 1 << 23;

#[derive(Debug, Clone)]
struct LocalRun {
    qubit: usize,
    rotations: Vec<(Axis, AngleSource)>,
}

impl LocalRun {
    fn fused(&self, params: &[f64], inputs: &[f64]) -> Result<Mat2> {
        let mut u = Mat2::identity();
        for &(axis, src) in &self.rotations {
            u = axis.rotation(src.resolve(params, inputs)?).mul(&u);
        }
        Ok(u)
    }
}

#[derive(Debug, Clone)]
enum Stage {
    Local(Vec<LocalRun>),
    /// A maximal run of CNOT/SWAP gates.
    Permutation(LinearPermutation),
}

/// A gate list prepared for repeated evaluation.
#[derive(Debug, Clone)]
pub struct CompiledCircuit {
    n_qubits: usize,
    stages: Vec<Stage>,
}

/// Expectation value together with its derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub value: f64,
    /// `d<O>/d params[s]`, summed over every gate reading slot `s`.
    pub params: Vec<f64>,
    /// `d<O>/d inputs[k]`, summed over every gate reading slot `k`.
    pub inputs: Vec<f64>,
}

impl CompiledCircuit {
    pub fn compile(n_qubits: usize, gates: &[GateOp]) -> Result<Self> {
        if n_qubits == 0 || n_qubits > super::MAX_QUBITS {
            return Err(Error::Capacity(format!("{n_qubits} qubits")));
        }
        let mut stages = Vec::new();
        let mut pending: Vec<Option<LocalRun>> = vec![None; n_qubits];
        let mut order: Vec<usize> = Vec::new();
        let mut network: Vec<GateOp> = Vec::new();
        for g in gates {
            g.validate(n_qubits)?;
            match *g {
                GateOp::Rotation { axis, qubit, angle } => {
                    if !network.is_empty() {
                        stages.push(Stage::Permutation(LinearPermutation::from_gates(n_qubits, &network)));
                        network.clear();
                    }
                    let run = pending[qubit].get_or_insert_with(|| {
                        order.push(qubit);
                        LocalRun {
                            qubit,
                            rotations: Vec::new(),
                        }
                    });
                    run.rotations.push((axis, angle));
                }
                _ => {
                    if !order.is_empty() {
                        let runs = order.drain(..).map(|q| pending[q].take().expect("run")).collect();
                        stages.push(Stage::Local(runs));
                    }
                    network.push(*g);
                }
            }
        }
        if !order.is_empty() {
            let runs = order.drain(..).map(|q| pending[q].take().expect("run")).collect();
            stages.push(Stage::Local(runs));
        }
        if !network.is_empty() {
            stages.push(Stage::Permutation(LinearPermutation::from_gates(n_qubits, &network)));
        }
        Ok(Self { n_qubits, stages })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    fn local_matrices(runs: &[LocalRun], params: &[f64], inputs: &[f64]) -> Result<Vec<Mat2>> {
        runs.iter().map(|r| r.fused(params, inputs)).collect()
    }

    fn apply_stage(state: &mut StateVector, stage: &Stage, mats: Option<&[Mat2]>, runs_adjoint: bool) {
        match stage {
            Stage::Local(runs) => {
                let mats = mats.expect("local stage needs matrices");
                for (run, m) in runs.iter().zip(mats) {
                    let m = if runs_adjoint { m.adjoint() } else { *m };
                    if m.is_diagonal() {
                        state.apply_diag(run.qubit, m.0[0][0], m.0[1][1]);
                    } else {
                        state.apply_mat2(run.qubit, &m);
                    }
                }
            }
            Stage::Permutation(p) => p.apply(state, runs_adjoint),
        }
    }

    /// Forward sweep from `|0...0>`, calling `on_local` after every local stage.
    fn forward<F>(&self, params: &[f64], inputs: &[f64], mut on_local: F) -> Result<StateVector>
    where
        F: FnMut(usize, &StateVector, Vec<Mat2>),
    {
        let mut stages = self.stages.iter().enumerate();
        let mut state = match self.stages.first() {
            Some(Stage::Local(runs)) => {
                // A local stage on |0...0> yields a product state directly.
                stages.next();
                let mats = Self::local_matrices(runs, params, inputs)?;
                let one = Complex64::new(1.0, 0.0);
                let zero = Complex64::new(0.0, 0.0);
                let mut factors = vec![[one, zero]; self.n_qubits];
                for (run, m) in runs.iter().zip(&mats) {
                    factors[run.qubit] = [m.0[0][0], m.0[1][0]];
                }
                let s = StateVector::product(&factors)?;
                on_local(0, &s, mats);
                s
            }
            _ => StateVector::zero(self.n_qubits)?,
        };
        for (i, stage) in stages {
            match stage {
                Stage::Local(runs) => {
                    let mats = Self::local_matrices(runs, params, inputs)?;
                    Self::apply_stage(&mut state, stage, Some(&mats), false);
                    on_local(i, &state, mats);
                }
                _ => Self::apply_stage(&mut state, stage, None, false),
            }
        }
        Ok(state)
    }

    /// Final state `C(params, inputs)|0...0>`.
    pub fn run(&self, params: &[f64], inputs: &[f64]) -> Result<StateVector> {
        self.forward(params, inputs, |_, _, _| {})
    }

    /// `<O>` for an observable given by its diagonal.
    pub fn expectation_diag(&self, diag: &[f64], params: &[f64], inputs: &[f64]) -> Result<f64> {
        Ok(self.run(params, inputs)?.diagonal_expectation(diag))
    }

    pub fn expectation(&self, obs: &ZSumObservable, params: &[f64], inputs: &[f64]) -> Result<f64> {
        self.expectation_diag(&obs.diagonal(self.n_qubits)?, params, inputs)
    }

    /// Value and all parameter/input derivatives in one forward and one backward sweep.
    pub fn gradient_diag(&self, diag: &[f64], params: &[f64], inputs: &[f64]) -> Result<Gradient> {
        if diag.len() != 1usize << self.n_qubits {
            return Err(Error::Validation("observable diagonal has wrong length".into()));
        }
        let n_local = self
            .stages
            .iter()
            .filter(|s| matches!(s, Stage::Local(_)))
            .count();
        let checkpoint = n_local.saturating_mul(diag.len()) <= CHECKPOINT_BUDGET;

        let mut saved: Vec<(StateVector, Vec<Mat2>)> = Vec::new();
        let mut mats_only: Vec<Vec<Mat2>> = Vec::new();
        let final_state = self.forward(params, inputs, |_, s, mats| {
            if checkpoint {
                saved.push((s.clone(), mats));
            } else {
                mats_only.push(mats);
            }
        })?;

        let mut lambda = final_state.clone();
        lambda.mul_diagonal(diag);
        let value = final_state.diagonal_expectation(diag);
        let mut phi = final_state;

        let mut g_params = vec![0.0; params.len()];
        let mut g_inputs = vec![0.0; inputs.len()];

        let mut local_idx = n_local;
        for (i, stage) in self.stages.iter().enumerate().rev() {
            match stage {
                Stage::Local(runs) => {
                    local_idx -= 1;
                    let (phi_end, mats) = if checkpoint {
                        let (s, m) = &saved[local_idx];
                        (s, m.as_slice())
                    } else {
                        (&phi, mats_only[local_idx].as_slice())
                    };
                    for run in runs {
                        // Only the imaginary Pauli components of M feed the
                        // derivatives, and conjugation by a rotation mixes
                        // them among themselves.
                        let [wx, wy, wz] = phi_end.pauli_overlaps(&lambda, run.qubit);
                        let half_i = |w: f64| Complex64::new(0.0, w / 2.0);
                        let mut m = Mat2([
                            [half_i(wz), half_i(wx) + Complex64::new(wy / 2.0, 0.0)],
                            [half_i(wx) - Complex64::new(wy / 2.0, 0.0), half_i(-wz)],
                        ]);
                        for &(axis, src) in run.rotations.iter().rev() {
                            let d = axis.pauli().mul(&m).trace().im;
                            match src {
                                AngleSource::Param(s) => g_params[s] += d,
                                AngleSource::Input(k) => g_inputs[k] += d,
                                AngleSource::Fixed(_) => {}
                            }
                            let r = axis.rotation(src.resolve(params, inputs)?);
                            m = r.adjoint().mul(&m).mul(&r);
                        }
                    }
                    if i > 0 {
                        Self::apply_stage(&mut lambda, stage, Some(mats), true);
                        if !checkpoint {
                            Self::apply_stage(&mut phi, stage, Some(mats), true);
                        }
                    }
                }
                _ => {
                    Self::apply_stage(&mut lambda, stage, None, true);
                    if !checkpoint {
                        Self::apply_stage(&mut phi, stage, None, true);
                    }
                }
            }
        }

        Ok(Gradient {
            value,
            params: g_params,
            inputs: g_inputs,
        })
    }

    pub fn gradient(&self, obs: &ZSumObservable, params: &[f64], inputs: &[f64]) -> Result<Gradient> {
        self.gradient_diag(&obs.diagonal(self.n_qubits)?, params, inputs)
    }
}

/// Exact derivatives of `<O>` with respect to every parameter and input slot.
pub fn adjoint_gradient(
    n_qubits: usize,
    circuit: &[GateOp],
    obs: &ZSumObservable,
    params: &[f64],
    inputs: &[f64],
) -> Result<Gradient> {
    CompiledCircuit::compile(n_qubits, circuit)?.gradient(obs, params, inputs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statevector::{expectation, simulate};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn single_rx_gradient() {
        let gates = [GateOp::rx(0, AngleSource::Param(0))];
        let obs = ZSumObservable::new(vec![(0, 1.0)]).unwrap();
        let g = adjoint_gradient(1, &gates, &obs, &[PI / 3.0], &[]).unwrap();
        assert!((g.value - (PI / 3.0).cos()).abs() < 1e-14);
        assert!((g.params[0] + (PI / 3.0).sin()).abs() < 1e-14);
    }

    #[test]
    fn shared_slot_accumulates() {
        let gates = [
            GateOp::rx(0, AngleSource::Param(0)),
            GateOp::rx(1, AngleSource::Param(0)),
        ];
        let obs = ZSumObservable::mean_z(&[0, 1]).unwrap();
        let g = adjoint_gradient(2, &gates, &obs, &[PI / 4.0], &[]).unwrap();
        assert!((g.params[0] + (PI / 4.0).sin()).abs() < 1e-14);
    }

    fn random_circuit<R: Rng>(rng: &mut R, n: usize, len: usize, n_params: usize, n_inputs: usize) -> Vec<GateOp> {
        (0..len)
            .map(|_| {
                let q = rng.random_range(0..n);
                let mut t = rng.random_range(0..n - 1);
                if t >= q {
                    t += 1;
                }
                let src = match rng.random_range(0..3) {
                    0 => AngleSource::Param(rng.random_range(0..n_params)),
                    1 => AngleSource::Input(rng.random_range(0..n_inputs)),
                    _ => AngleSource::Fixed(rng.random_range(-PI..PI)),
                };
                match rng.random_range(0..5) {
                    0 => GateOp::rx(q, src),
                    1 => GateOp::ry(q, src),
                    2 => GateOp::rz(q, src),
                    3 => GateOp::cnot(q, t),
                    _ => GateOp::swap(q, t),
                }
            })
            .collect()
    }

    #[test]
    fn compiled_forward_matches_gate_by_gate() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let gates = random_circuit(&mut rng, 4, 40, 5, 3);
            let params: Vec<f64> = (0..5).map(|_| rng.random_range(-PI..PI)).collect();
            let inputs: Vec<f64> = (0..3).map(|_| rng.random_range(-PI..PI)).collect();
            let a = simulate(4, &gates, &params, &inputs).unwrap();
            let b = CompiledCircuit::compile(4, &gates).unwrap().run(&params, &inputs).unwrap();
            assert!(a.max_abs_diff(&b) < 1e-12);
        }
    }

    #[test]
    fn adjoint_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let obs = ZSumObservable::new(vec![(0, 0.5), (2, -0.3), (3, 0.2)]).unwrap();
        for _ in 0..20 {
            let gates = random_circuit(&mut rng, 4, 30, 4, 3);
            let mut params: Vec<f64> = (0..4).map(|_| rng.random_range(-PI..PI)).collect();
            let mut inputs: Vec<f64> = (0..3).map(|_| rng.random_range(-PI..PI)).collect();
            let g = adjoint_gradient(4, &gates, &obs, &params, &inputs).unwrap();
            let f = |p: &[f64], x: &[f64]| expectation(&simulate(4, &gates, p, x).unwrap(), &obs).unwrap();
            let h = 1e-5;
            for s in 0..params.len() {
                let v = params[s];
                params[s] = v + h;
                let up = f(&params, &inputs);
                params[s] = v - h;
                let dn = f(&params, &inputs);
                params[s] = v;
                assert!((g.params[s] - (up - dn) / (2.0 * h)).abs() < 1e-6);
            }
            for k in 0..inputs.len() {
                let v = inputs[k];
                inputs[k] = v + h;
                let up = f(&params, &inputs);
                inputs[k] = v - h;
                let dn = f(&params, &inputs);
                inputs[k] = v;
                assert!((g.inputs[k] - (up - dn) / (2.0 * h)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn empty_circuit_has_zero_gradient() {
        let obs = ZSumObservable::new(vec![(0, 1.0)]).unwrap();
        let g = adjoint_gradient(2, &[], &obs, &[0.3], &[]).unwrap();
        assert_eq!(g.value, 1.0);
        assert_eq!(g.params, vec![0.0]);
    }
}
