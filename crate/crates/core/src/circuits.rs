//! Re-uploading classifier circuits: angle encoding alternated with one of
//! three variational blocks, read out through a sum of Z operators.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::statevector::{
    AngleSource, Axis, CompiledCircuit, GateOp, Gradient, ZSumObservable,
};
use crate::symmetry::{compute_orbits, OrbitTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Equivariant,
    NonEquivariant,
    BasicEntangler,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [
        Architecture::Equivariant,
        Architecture::NonEquivariant,
        Architecture::BasicEntangler,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Equivariant => "equivariant",
            Architecture::NonEquivariant => "non_equivariant",
            Architecture::BasicEntangler => "basic_entangler",
        }
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "equivariant" => Ok(Architecture::Equivariant),
            "non_equivariant" | "nonequivariant" => Ok(Architecture::NonEquivariant),
            "basic_entangler" | "basicentangler" => Ok(Architecture::BasicEntangler),
            other => Err(Error::Validation(format!("unknown architecture `{other}`"))),
        }
    }
}

/// Which qubits the NonEquivariant readout averages over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadoutGroup {
    /// The randomized group containing qubit 0.
    #[default]
    Tied,
    /// The true orbit of pixel (0, 0).
    TrueOrbit,
}

fn default_axis() -> Axis {
    Axis::X
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub architecture: Architecture,
    /// Image side length; the circuit has `n^2` qubits.
    pub n: usize,
    pub n_layers: usize,
    #[serde(default)]
    pub random_orbit_seed: Option<u64>,
    #[serde(default = "default_axis")]
    pub rotation_axis: Axis,
    #[serde(default)]
    pub readout: ReadoutGroup,
}

impl ModelSpec {
    pub fn new(architecture: Architecture, n: usize, n_layers: usize) -> Self {
        Self {
            architecture,
            n,
            n_layers,
            random_orbit_seed: (architecture == Architecture::NonEquivariant).then_some(0),
            rotation_axis: Axis::X,
            readout: ReadoutGroup::Tied,
        }
    }

    pub fn with_orbit_seed(mut self, seed: u64) -> Self {
        self.random_orbit_seed = Some(seed);
        self
    }

    /// Structural checks plus the simulator's qubit limit.
    pub fn validate(&self) -> Result<()> {
        self.validate_layout()?;
        if self.n * self.n > crate::statevector::MAX_QUBITS {
            return Err(Error::Capacity(format!(
                "{} qubits exceed the simulator limit of {}",
                self.n * self.n,
                crate::statevector::MAX_QUBITS
            )));
        }
        Ok(())
    }

    /// Checks that do not depend on simulating the circuit.
    pub fn validate_layout(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Configuration(format!(
                "resolution {} too small for a classifier circuit",
                self.n
            )));
        }
        if self.n_layers == 0 {
            return Err(Error::Configuration("n_layers must be at least 1".into()));
        }
        if self.architecture == Architecture::NonEquivariant && self.random_orbit_seed.is_none() {
            return Err(Error::Configuration(
                "non_equivariant model needs random_orbit_seed".into(),
            ));
        }
        Ok(())
    }

    pub fn n_qubits(&self) -> usize {
        self.n * self.n
    }

    pub fn params_per_layer(&self) -> usize {
        match self.architecture {
            Architecture::Equivariant | Architecture::NonEquivariant => {
                3 * crate::symmetry::orbit_count(self.n)
            }
            Architecture::BasicEntangler => self.n * self.n,
        }
    }

    pub fn n_params(&self) -> usize {
        self.n_layers * self.params_per_layer()
    }
}

/// Flat trainable angles; layer `l` owns `values[l * p .. (l + 1) * p]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(spec: &ModelSpec) -> Self {
        Self {
            values: vec![0.0; spec.n_params()],
        }
    }
}

/// Qubit groups that share rotation angles. `groups[o][k]` is the member of
/// group `o` in cell `k`; a group of size one sits in every cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tying {
    pub groups: Vec<Vec<usize>>,
}

impl Tying {
    pub fn from_orbits(table: &OrbitTable) -> Self {
        Self {
            groups: (0..table.n_orbits()).map(|o| table.cell_members(o)).collect(),
        }
    }

    /// Seeded random partition with the same group sizes as the true orbits.
    /// For `n >= 3` a draw that reproduces the true partition is rejected;
    /// at `n = 2` only one partition exists.
    pub fn random(n: usize, seed: u64) -> Result<Self> {
        let table = compute_orbits(n)?;
        let sizes: Vec<usize> = table.orbits().iter().map(Vec::len).collect();
        let canonical = |groups: &[Vec<usize>]| {
            let mut sets: Vec<Vec<usize>> = groups
                .iter()
                .map(|g| {
                    let mut g = g.clone();
                    g.sort_unstable();
                    g
                })
                .collect();
            sets.sort();
            sets
        };
        let truth = canonical(
            &(0..table.n_orbits())
                .map(|o| table.orbit_qubits(o))
                .collect::<Vec<_>>(),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let mut qubits: Vec<usize> = (0..n * n).collect();
            qubits.shuffle(&mut rng);
            let mut groups = Vec::with_capacity(sizes.len());
            let mut rest = qubits.as_slice();
            for &s in &sizes {
                let (g, tail) = rest.split_at(s);
                groups.push(g.to_vec());
                rest = tail;
            }
            if n < 3 || canonical(&groups) != truth {
                return Ok(Self { groups });
            }
        }
    }

    pub fn group_containing(&self, q: usize) -> Option<&[usize]> {
        self.groups
            .iter()
            .find(|g| g.contains(&q))
            .map(Vec::as_slice)
    }
}

/// One `RX(x_k)` per qubit reading input slot `k = i * n + j`.
pub fn encoding_layer(n: usize) -> Vec<GateOp> {
    (0..n * n)
        .map(|k| GateOp::rx(k, AngleSource::Input(k)))
        .collect()
}

/// CNOT network on four qubits mapping each basis bit to the parity of the
/// other three. Its linear map `J - I` is invariant under every relabeling
/// of the four qubits, so it commutes with any permutation of them.
const PARITY_NETWORK: [(usize, usize); 8] = [
    (0, 1),
    (1, 0),
    (2, 3),
    (0, 2),
    (3, 0),
    (0, 1),
    (1, 2),
    (2, 3),
];

/// Variational block with rotations tied across each group and CNOTs
/// replicated across the four cells.
fn tied_block(tying: &Tying, angles: &[AngleSource]) -> Result<Vec<GateOp>> {
    let n_groups = tying.groups.len();
    if angles.len() != 3 * n_groups {
        return Err(Error::Configuration(format!(
            "block needs {} angles, got {}",
            3 * n_groups,
            angles.len()
        )));
    }
    let mut gates = Vec::new();
    for (o, group) in tying.groups.iter().enumerate() {
        for &q in group {
            gates.push(GateOp::rz(q, angles[3 * o]));
            gates.push(GateOp::ry(q, angles[3 * o + 1]));
            gates.push(GateOp::rz(q, angles[3 * o + 2]));
        }
    }
    if n_groups == 1 {
        let g = &tying.groups[0];
        if g.len() == 4 {
            for (c, t) in PARITY_NETWORK {
                gates.push(GateOp::cnot(g[c], g[t]));
            }
        }
        return Ok(gates);
    }
    let member = |o: usize, k: usize| {
        let g = &tying.groups[o];
        g[k % g.len()]
    };
    // Ring over groups inside each cell, then one edge from cell k to cell k + 1.
    for o in 0..n_groups {
        let next = (o + 1) % n_groups;
        for k in 0..4 {
            gates.push(GateOp::cnot(member(o, k), member(next, k)));
        }
    }
    for k in 0..4 {
        gates.push(GateOp::cnot(member(0, k), member(1, k + 1)));
    }
    Ok(gates)
}

/// Symmetrized block: general rotation `RZ RY RZ` shared across each orbit,
/// intra-cell CNOT ring and one inter-cell CNOT, each replicated over the group.
pub fn equivariant_block(table: &OrbitTable, angles: &[AngleSource]) -> Result<Vec<GateOp>> {
    tied_block(&Tying::from_orbits(table), angles)
}

/// Same layout as [`equivariant_block`] over a random partition of the qubits.
pub fn nonequivariant_block(tying: &Tying, angles: &[AngleSource]) -> Result<Vec<GateOp>> {
    tied_block(tying, angles)
}

/// One single-axis rotation per qubit followed by the CNOT ring `q -> q + 1 mod n^2`.
pub fn basic_entangler_block(n: usize, angles: &[AngleSource], axis: Axis) -> Result<Vec<GateOp>> {
    let nq = n * n;
    if angles.len() != nq {
        return Err(Error::Configuration(format!(
            "block needs {nq} angles, got {}",
            angles.len()
        )));
    }
    let mut gates: Vec<GateOp> = angles
        .iter()
        .enumerate()
        .map(|(q, &a)| GateOp::Rotation {
            axis,
            qubit: q,
            angle: a,
        })
        .collect();
    for q in 0..nq {
        gates.push(GateOp::cnot(q, (q + 1) % nq));
    }
    Ok(gates)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceCounts {
    pub params_per_layer: usize,
    pub cnots_per_layer: usize,
    pub rotations_per_layer: usize,
}

/// A built model: gate list, readout, and a compiled copy for evaluation.
#[derive(Debug, Clone)]
pub struct CircuitPlan {
    spec: ModelSpec,
    gates: Vec<GateOp>,
    observable: ZSumObservable,
    compiled: CompiledCircuit,
    diagonal: Vec<f64>,
    block_gates: usize,
}

impl CircuitPlan {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn gates(&self) -> &[GateOp] {
        &self.gates
    }

    pub fn observable(&self) -> &ZSumObservable {
        &self.observable
    }

    pub fn n_qubits(&self) -> usize {
        self.spec.n_qubits()
    }

    pub fn n_params(&self) -> usize {
        self.spec.n_params()
    }

    pub fn n_inputs(&self) -> usize {
        self.spec.n_qubits()
    }

    /// Counts over the variational block of one layer.
    pub fn resources(&self) -> ResourceCounts {
        let block = &self.gates[self.n_inputs()..self.n_inputs() + self.block_gates];
        count_resources(&self.spec, block)
    }

    fn check(&self, params: &[f64], features: &[f64]) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::Configuration(format!(
                "model expects {} parameters, got {}",
                self.n_params(),
                params.len()
            )));
        }
        if features.len() != self.n_inputs() {
            return Err(Error::Configuration(format!(
                "model expects {} features, got {}",
                self.n_inputs(),
                features.len()
            )));
        }
        Ok(())
    }

    /// `f(x, theta) = <psi(x, theta)| O |psi(x, theta)>`.
    pub fn forward(&self, params: &[f64], features: &[f64]) -> Result<f64> {
        self.check(params, features)?;
        self.compiled
            .expectation_diag(&self.diagonal, params, features)
    }

    /// Output with its derivatives in parameters and features.
    pub fn gradient(&self, params: &[f64], features: &[f64]) -> Result<Gradient> {
        self.check(params, features)?;
        self.compiled.gradient_diag(&self.diagonal, params, features)
    }
}

fn slots(first: usize, count: usize) -> Vec<AngleSource> {
    (first..first + count).map(AngleSource::Param).collect()
}

/// Gate list, readout, and gate count of one variational block.
struct Assembled {
    gates: Vec<GateOp>,
    observable: ZSumObservable,
    block_gates: usize,
}

fn assemble(spec: &ModelSpec) -> Result<Assembled> {
    spec.validate_layout()?;
    let n = spec.n;
    let table = compute_orbits(n)?;
    let corner = table.orbit_qubits(table.orbit_of_qubit(0));
    let ppl = spec.params_per_layer();

    let tying = match spec.architecture {
        Architecture::Equivariant => Some(Tying::from_orbits(&table)),
        Architecture::NonEquivariant => {
            let seed = spec.random_orbit_seed.expect("validated");
            Some(Tying::random(n, seed)?)
        }
        Architecture::BasicEntangler => None,
    };
    let mut readout: Vec<usize> = match (spec.architecture, spec.readout, &tying) {
        (Architecture::NonEquivariant, ReadoutGroup::Tied, Some(t)) => {
            t.group_containing(0).expect("partition covers qubit 0").to_vec()
        }
        _ => corner,
    };
    readout.sort_unstable();

    let mut gates = Vec::new();
    let mut block_gates = 0;
    for layer in 0..spec.n_layers {
        gates.extend(encoding_layer(n));
        let angles = slots(layer * ppl, ppl);
        let block = match &tying {
            Some(t) => tied_block(t, &angles)?,
            None => basic_entangler_block(n, &angles, spec.rotation_axis)?,
        };
        block_gates = block.len();
        gates.extend(block);
    }
    Ok(Assembled {
        gates,
        observable: ZSumObservable::mean_z(&readout)?,
        block_gates,
    })
}

fn count_resources(spec: &ModelSpec, block: &[GateOp]) -> ResourceCounts {
    ResourceCounts {
        params_per_layer: spec.params_per_layer(),
        cnots_per_layer: block.iter().filter(|g| matches!(g, GateOp::Cnot { .. })).count(),
        rotations_per_layer: block.iter().filter(|g| matches!(g, GateOp::Rotation { .. })).count(),
    }
}

/// Per-layer counts from the gate list alone; works past the simulator's
/// qubit limit.
pub fn resource_counts(spec: &ModelSpec) -> Result<ResourceCounts> {
    let a = assemble(spec)?;
    let nq = spec.n_qubits();
    Ok(count_resources(spec, &a.gates[nq..nq + a.block_gates]))
}

pub fn build_model(spec: &ModelSpec) -> Result<CircuitPlan> {
    spec.validate()?;
    let Assembled {
        gates,
        observable,
        block_gates,
    } = assemble(spec)?;
    let compiled = CompiledCircuit::compile(spec.n_qubits(), &gates)?;
    let diagonal = observable.diagonal(spec.n_qubits())?;
    Ok(CircuitPlan {
        spec: spec.clone(),
        gates,
        observable,
        compiled,
        diagonal,
        block_gates,
    })
}

pub fn model_forward(plan: &CircuitPlan, params: &ModelParams, features: &[f64]) -> Result<f64> {
    plan.forward(&params.values, features)
}

pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub spec: ModelSpec,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn new(spec: &ModelSpec, params: &ModelParams) -> Result<Self> {
        if params.values.len() != spec.n_params() {
            return Err(Error::Configuration(format!(
                "checkpoint expects {} parameters, got {}",
                spec.n_params(),
                params.values.len()
            )));
        }
        Ok(Self {
            format_version: CHECKPOINT_FORMAT,
            spec: spec.clone(),
            params: params.values.clone(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text)?;
        if c.format_version != CHECKPOINT_FORMAT {
            return Err(Error::Validation(format!(
                "unsupported checkpoint format {}",
                c.format_version
            )));
        }
        c.spec.validate()?;
        if c.params.len() != c.spec.n_params() {
            return Err(Error::Validation("checkpoint parameter count mismatch".into()));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn model_params(&self) -> ModelParams {
        ModelParams {
            values: self.params.clone(),
        }
    }
}
