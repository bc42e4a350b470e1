//! C4 geometry on square images and its action on the encoded qubits.
//!
//! Pixel `(i, j)` of an `n x n` image is encoded on qubit `k = i * n + j`.
//! A quarter turn moves the value at `rotate_index(p)` to `p`, and `U_g` is
//! the matching qubit permutation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::statevector::{
    apply_gate, permute_qubits, Axis, GateOp, QubitPermutation, StateVector,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PixelIndex {
    pub i: usize,
    pub j: usize,
    pub n: usize,
}

impl PixelIndex {
    pub fn new(i: usize, j: usize, n: usize) -> Result<Self> {
        if i >= n || j >= n {
            return Err(Error::Validation(format!("pixel ({i}, {j}) outside {n}x{n} grid")));
        }
        Ok(Self { i, j, n })
    }

    pub fn from_qubit(k: usize, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Validation("empty grid".into()));
        }
        Self::new(k / n, k % n, n)
    }

    /// Row-major qubit index `i * n + j`.
    pub fn qubit(&self) -> usize {
        self.i * self.n + self.j
    }
}

/// The pixel whose value lands on `p` after a quarter turn: `(n - 1 - j, i)`.
pub fn rotate_index(p: PixelIndex) -> PixelIndex {
    PixelIndex {
        i: p.n - 1 - p.j,
        j: p.i,
        n: p.n,
    }
}

/// Quarter-turn a row-major `n x n` buffer `times` times.
pub fn rotate_flat<T: Copy>(x: &[T], n: usize, times: usize) -> Result<Vec<T>> {
    if x.len() != n * n {
        return Err(Error::Shape(format!(
            "buffer of {} values is not {n}x{n}",
            x.len()
        )));
    }
    let mut out = x.to_vec();
    for _ in 0..times % 4 {
        let prev = out.clone();
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = prev[(n - 1 - j) * n + i];
            }
        }
    }
    Ok(out)
}

/// Quarter-turn a square grid `times` times: `x'[i][j] = x[n-1-j][i]`.
pub fn rotate_image<T: Copy>(x: &[Vec<T>], times: usize) -> Result<Vec<Vec<T>>> {
    let n = x.len();
    if x.iter().any(|row| row.len() != n) {
        return Err(Error::Shape("image is not square".into()));
    }
    let flat: Vec<T> = x.iter().flatten().copied().collect();
    let rotated = rotate_flat(&flat, n, times)?;
    Ok(rotated.chunks(n.max(1)).map(|r| r.to_vec()).collect())
}

/// Orbits of the C4 action on an `n x n` grid, with a canonical unit cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitTable {
    n: usize,
    /// Members in rotation order, starting from the smallest `(i, j)`.
    orbits: Vec<Vec<PixelIndex>>,
    /// Orbit id of each pixel, indexed by qubit.
    orbit_of: Vec<usize>,
    /// Cell `k` holds one pixel per orbit; cell `k + 1` is the image of cell `k`.
    cells: Vec<Vec<PixelIndex>>,
}

impl OrbitTable {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_orbits(&self) -> usize {
        self.orbits.len()
    }

    pub fn orbits(&self) -> &[Vec<PixelIndex>] {
        &self.orbits
    }

    pub fn cells(&self) -> &[Vec<PixelIndex>] {
        &self.cells
    }

    pub fn orbit_of(&self, p: PixelIndex) -> usize {
        self.orbit_of[p.qubit()]
    }

    pub fn orbit_of_qubit(&self, q: usize) -> usize {
        self.orbit_of[q]
    }

    /// Qubits of orbit `o`, in rotation order.
    pub fn orbit_qubits(&self, o: usize) -> Vec<usize> {
        self.orbits[o].iter().map(PixelIndex::qubit).collect()
    }

    /// Qubits of orbit `o` indexed by unit cell: entry `k` lies in cell `k`.
    /// The odd-n center orbit has a single entry.
    pub fn cell_members(&self, o: usize) -> Vec<usize> {
        self.cells
            .iter()
            .filter_map(|cell| cell.iter().find(|p| self.orbit_of(**p) == o))
            .map(PixelIndex::qubit)
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Expected orbit count: `n^2 / 4` for even `n`, `ceil(n/2) floor(n/2) + 1` for odd `n`.
pub fn orbit_count(n: usize) -> usize {
    if n % 2 == 0 {
        n * n / 4
    } else {
        n.div_ceil(2) * (n / 2) + 1
    }
}

pub fn compute_orbits(n: usize) -> Result<OrbitTable> {
    if n == 0 {
        return Err(Error::Validation("resolution must be at least 1".into()));
    }
    let mut orbit_of = vec![usize::MAX; n * n];
    let mut orbits: Vec<Vec<PixelIndex>> = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let start = PixelIndex { i, j, n };
            if orbit_of[start.qubit()] != usize::MAX {
                continue;
            }
            let id = orbits.len();
            let mut members = vec![start];
            let mut p = rotate_index(start);
            while p != start {
                members.push(p);
                p = rotate_index(p);
            }
            for m in &members {
                orbit_of[m.qubit()] = id;
            }
            orbits.push(members);
        }
    }

    // Cell 0 is the top-left ceil(n/2) x floor(n/2) block plus, for odd n,
    // the center; the remaining cells are its successive rotation images.
    let mut cell0: Vec<PixelIndex> = Vec::new();
    for i in 0..n.div_ceil(2) {
        for j in 0..n / 2 {
            cell0.push(PixelIndex { i, j, n });
        }
    }
    let center = (n % 2 == 1).then(|| PixelIndex {
        i: n / 2,
        j: n / 2,
        n,
    });
    cell0.extend(center);
    cell0.sort_by_key(|p| orbit_of[p.qubit()]);
    let mut cells = vec![cell0];
    if n > 1 {
        for _ in 1..4 {
            let next: Vec<PixelIndex> = cells
                .last()
                .expect("cell")
                .iter()
                .filter(|p| Some(**p) != center)
                .map(|p| rotate_index(*p))
                .collect();
            cells.push(next);
        }
    }
    Ok(OrbitTable {
        n,
        orbits,
        orbit_of,
        cells,
    })
}

/// The four qubit permutations representing C4 on `n^2` qubits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRep {
    n: usize,
    /// `[U_g, U_g^2, U_g^3, I]`.
    elements: Vec<QubitPermutation>,
}

impl GroupRep {
    pub fn n_qubits(&self) -> usize {
        self.n * self.n
    }

    pub fn resolution(&self) -> usize {
        self.n
    }

    pub fn generator(&self) -> &QubitPermutation {
        &self.elements[0]
    }

    /// `U_g^k` for any `k`.
    pub fn power(&self, k: usize) -> &QubitPermutation {
        &self.elements[(k + 3) % 4]
    }

    pub fn elements(&self) -> &[QubitPermutation] {
        &self.elements
    }
}

/// The SWAP network of `U_g`: transposition swaps first, then column reversal.
pub fn rotation_swaps(n: usize) -> Vec<(usize, usize)> {
    let k = |i: usize, j: usize| i * n + j;
    let mut swaps = Vec::new();
    for i in 0..n {
        for j in 0..i {
            swaps.push((k(i, j), k(j, i)));
        }
    }
    for i in 0..n {
        for j in 0..n / 2 {
            swaps.push((k(i, j), k(i, n - 1 - j)));
        }
    }
    swaps
}

pub fn build_group_rep(n: usize) -> Result<GroupRep> {
    if n == 0 {
        return Err(Error::Validation("resolution must be at least 1".into()));
    }
    let nq = n * n;
    let g = rotation_swaps(n)
        .into_iter()
        .fold(QubitPermutation::identity(nq), |acc, (a, b)| {
            acc.then(&QubitPermutation::transposition(nq, a, b))
        });
    let g2 = g.then(&g);
    let g3 = g2.then(&g);
    Ok(GroupRep {
        n,
        elements: vec![g, g2, g3, QubitPermutation::identity(nq)],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PauliTerm {
    pub axis: Axis,
    pub qubit: usize,
    pub weight: f64,
}

/// Group average of a single Pauli: one term per orbit member, starting at
/// `qubit` and following the rotation order, each with weight `1/|orbit|`.
pub fn twirl_pauli(axis: Axis, qubit: usize, table: &OrbitTable) -> Result<Vec<PauliTerm>> {
    let n = table.n();
    let start = PixelIndex::from_qubit(qubit, n)?;
    let mut members = vec![start];
    let mut p = rotate_index(start);
    while p != start {
        members.push(p);
        p = rotate_index(p);
    }
    let weight = 1.0 / members.len() as f64;
    Ok(members
        .into_iter()
        .map(|p| PauliTerm {
            axis,
            qubit: p.qubit(),
            weight,
        })
        .collect())
}

/// `sum_t w_t P_t |psi>`.
pub fn apply_pauli_sum(state: &StateVector, terms: &[PauliTerm]) -> Result<StateVector> {
    let mut total: Option<StateVector> = None;
    for t in terms {
        let mut s = state.clone();
        s.apply_pauli(t.axis, t.qubit)?;
        s.scale(t.weight);
        total = Some(match total {
            None => s,
            Some(acc) => acc.add(&s)?,
        });
    }
    match total {
        Some(t) => Ok(t),
        None => {
            let mut s = state.clone();
            s.scale(0.0);
            Ok(s)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub n_states: usize,
    pub seed: u64,
    pub tolerance: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            n_states: 4,
            seed: 0,
            tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquivarianceReport {
    pub equivariant: bool,
    pub max_deviation: f64,
}

/// Checks `U W |psi> = W U |psi>` for every group element on random states.
/// Gates must carry bound angles.
pub fn verify_equivariance(
    gates: &[GateOp],
    rep: &GroupRep,
    options: &VerifyOptions,
) -> Result<EquivarianceReport> {
    let nq = rep.n_qubits();
    let bound: Vec<GateOp> = gates.iter().map(|g| g.bind(&[], &[])).collect::<Result<_>>()?;
    for g in &bound {
        g.validate(nq)?;
    }
    let run = |s: &mut StateVector| -> Result<()> {
        for g in &bound {
            apply_gate(s, g)?;
        }
        Ok(())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut max_deviation: f64 = 0.0;
    for _ in 0..options.n_states {
        let psi = StateVector::random(nq, &mut rng)?;
        let mut w_psi = psi.clone();
        run(&mut w_psi)?;
        for u in rep.elements() {
            let left = permute_qubits(&w_psi, u)?;
            let mut right = permute_qubits(&psi, u)?;
            run(&mut right)?;
            max_deviation = max_deviation.max(left.distance(&right));
        }
    }
    Ok(EquivarianceReport {
        equivariant: max_deviation < options.tolerance,
        max_deviation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statevector::AngleSource;

    #[test]
    fn rotate_index_examples() {
        let p = |i, j, n| PixelIndex::new(i, j, n).unwrap();
        assert_eq!(rotate_index(p(0, 0, 4)), p(3, 0, 4));
        assert_eq!(rotate_index(p(1, 2, 4)), p(1, 1, 4));
        assert_eq!(rotate_index(p(1, 1, 3)), p(1, 1, 3));
    }

    #[test]
    fn rotate_image_example() {
        let x = vec![vec![1, 2], vec![3, 4]];
        assert_eq!(rotate_image(&x, 1).unwrap(), vec![vec![3, 1], vec![4, 2]]);
        assert_eq!(rotate_image(&x, 4).unwrap(), x);
        assert!(rotate_image(&[vec![1, 2]], 1).is_err());
    }

    #[test]
    fn orbit_examples() {
        let t = compute_orbits(4).unwrap();
        assert_eq!(t.n_orbits(), 4);
        assert_eq!(t.orbit_qubits(0), vec![0, 12, 15, 3]);
        let t3 = compute_orbits(3).unwrap();
        assert_eq!(t3.n_orbits(), 3);
        assert_eq!(t3.orbit_qubits(2), vec![4]);
        assert_eq!(compute_orbits(1).unwrap().cells().len(), 1);
    }

    #[test]
    fn cells_hold_one_member_per_orbit() {
        for n in 2..=9 {
            let t = compute_orbits(n).unwrap();
            assert_eq!(t.cells().len(), 4);
            for (k, cell) in t.cells().iter().enumerate() {
                let mut ids: Vec<usize> = cell.iter().map(|p| t.orbit_of(*p)).collect();
                ids.dedup();
                let expect = if k == 0 { t.n_orbits() } else { t.n_orbits() - n % 2 };
                assert_eq!(ids, (0..expect).collect::<Vec<_>>(), "n={n} cell {k}");
            }
            for o in 0..t.n_orbits() {
                let m = t.cell_members(o);
                assert!(m.len() == 4 || (n % 2 == 1 && m.len() == 1));
            }
        }
    }

    #[test]
    fn generator_matches_rotate_index() {
        for n in 1..=6 {
            let rep = build_group_rep(n).unwrap();
            for q in 0..n * n {
                let p = PixelIndex::from_qubit(q, n).unwrap();
                assert_eq!(rep.generator().sources()[q], rotate_index(p).qubit());
            }
            assert!(rep.power(4).is_identity());
            assert_eq!(rep.power(3), &rep.generator().inverse());
        }
    }

    #[test]
    fn twirl_examples() {
        let t = compute_orbits(4).unwrap();
        let terms = twirl_pauli(Axis::X, 0, &t).unwrap();
        let qubits: Vec<usize> = terms.iter().map(|t| t.qubit).collect();
        assert_eq!(qubits, vec![0, 12, 15, 3]);
        assert!(terms.iter().all(|t| t.weight == 0.25));
        let t3 = compute_orbits(3).unwrap();
        let c = twirl_pauli(Axis::Z, 4, &t3).unwrap();
        assert_eq!(c, vec![PauliTerm { axis: Axis::Z, qubit: 4, weight: 1.0 }]);
    }

    #[test]
    fn verify_detects_broken_orbit() {
        let rep = build_group_rep(2).unwrap();
        let opts = VerifyOptions::default();
        let single = [GateOp::rx(0, AngleSource::Fixed(0.7))];
        assert!(!verify_equivariance(&single, &rep, &opts).unwrap().equivariant);
        let r = verify_equivariance(&[], &rep, &opts).unwrap();
        assert!(r.equivariant && r.max_deviation == 0.0);
        let tied: Vec<GateOp> = (0..4).map(|q| GateOp::ry(q, AngleSource::Fixed(0.3))).collect();
        assert!(verify_equivariance(&tied, &rep, &opts).unwrap().equivariant);
    }
}
