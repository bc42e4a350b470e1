//! CNOT/SWAP networks as linear maps on basis indices over GF(2).

use super::{GateOp, StateVector};

/// Basis permutation `b -> A b` for an invertible GF(2) matrix `A`,
/// evaluated with one 256-entry lookup table per byte of the index.
#[derive(Debug, Clone)]
pub(crate) struct LinearPermutation {
    forward: Vec<Vec<u32>>,
    inverse: Vec<Vec<u32>>,
}

fn act(gate: &GateOp, n: usize, b: u32) -> u32 {
    let bit = |q: usize| n - 1 - q;
    match *gate {
        GateOp::Cnot { control, target } => b ^ (((b >> bit(control)) & 1) << bit(target)),
        GateOp::Swap { a, b: c } => {
            let (pa, pc) = (bit(a), bit(c));
            let x = ((b >> pa) ^ (b >> pc)) & 1;
            b ^ ((x << pa) | (x << pc))
        }
        GateOp::Rotation { .. } => unreachable!("rotations are not basis permutations"),
    }
}

fn tables(columns: &[u32]) -> Vec<Vec<u32>> {
    columns
        .chunks(8)
        .map(|cols| {
            let mut t = vec![0u32; 256];
            for v in 1..256usize {
                let low = v.trailing_zeros() as usize;
                t[v] = t[v & (v - 1)] ^ cols.get(low).copied().unwrap_or(0);
            }
            t
        })
        .collect()
}

impl LinearPermutation {
    /// Network of CNOT and SWAP gates, applied in order. Gates must be validated.
    pub(crate) fn from_gates(n_qubits: usize, gates: &[GateOp]) -> Self {
        let mut fwd: Vec<u32> = (0..n_qubits).map(|j| 1u32 << j).collect();
        for g in gates {
            for c in fwd.iter_mut() {
                *c = act(g, n_qubits, *c);
            }
        }
        let mut inv: Vec<u32> = (0..n_qubits).map(|j| 1u32 << j).collect();
        for g in gates.iter().rev() {
            for c in inv.iter_mut() {
                *c = act(g, n_qubits, *c);
            }
        }
        Self {
            forward: tables(&fwd),
            inverse: tables(&inv),
        }
    }

    fn map(tables: &[Vec<u32>], b: usize) -> usize {
        let mut out = 0u32;
        for (k, t) in tables.iter().enumerate() {
            out ^= t[(b >> (8 * k)) & 0xff];
        }
        out as usize
    }

    pub(crate) fn apply(&self, state: &mut StateVector, inverse: bool) {
        // Gather form: new[b] = old[A^-1 b].
        let t = if inverse { &self.forward } else { &self.inverse };
        SCRATCH.with_borrow_mut(|(re, im)| {
            let dim = state.dim();
            re.resize(dim, 0.0);
            im.resize(dim, 0.0);
            match t.as_slice() {
                [t0, t1] => {
                    let (sre, sim) = (&state.re[..dim], &state.im[..dim]);
                    for (hi, (dre, dim_)) in re.chunks_exact_mut(256).zip(im.chunks_exact_mut(256)).enumerate() {
                        let base = t1[hi] as usize;
                        for ((r, i), &v) in dre.iter_mut().zip(dim_.iter_mut()).zip(t0.iter()) {
                            let from = base ^ v as usize;
                            *r = sre[from];
                            *i = sim[from];
                        }
                    }
                }
                _ => {
                    for b in 0..dim {
                        let from = Self::map(t, b);
                        re[b] = state.re[from];
                        im[b] = state.im[from];
                    }
                }
            }
            std::mem::swap(re, &mut state.re);
            std::mem::swap(im, &mut state.im);
        });
    }
}

thread_local! {
    static SCRATCH: std::cell::RefCell<(Vec<f64>, Vec<f64>)> = const { std::cell::RefCell::new((Vec::new(), Vec::new())) };
}
