//! Circuit construction, invariance, gradients, and checkpoints.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use c4vqc::circuits::{build_model, resource_counts, Architecture, Checkpoint, ModelParams, ModelSpec};
use c4vqc::statevector::{permute_qubits, simulate};
use c4vqc::symmetry::{build_group_rep, compute_orbits, rotate_flat};
use c4vqc::training::{loss_gradient, mse_loss, parameter_shift_loss_gradient, predict};
use c4vqc::Error;

fn random_vec(rng: &mut ChaCha8Rng, len: usize, hi: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(0.0..hi)).collect()
}

#[test]
fn orbits_partition_the_grid() {
    for n in 2..=7 {
        let t = compute_orbits(n).unwrap();
        let mut seen: Vec<usize> = (0..t.n_orbits()).flat_map(|o| t.orbit_qubits(o)).collect();
        seen.sort();
        assert_eq!(seen, (0..n * n).collect::<Vec<_>>(), "n={n}");
        for o in 0..t.n_orbits() {
            let q = t.orbit_qubits(o);
            // Each orbit is closed under the quarter turn.
            let marks: Vec<u8> = (0..n * n).map(|k| q.contains(&k) as u8).collect();
            assert_eq!(rotate_flat(&marks, n, 1).unwrap(), marks);
        }
    }
}

#[test]
fn group_rep_permutes_basis_states_like_images() {
    // A basis state |b> with bit k set for pixel k transforms like the image b.
    let n = 3;
    let rep = build_group_rep(n).unwrap();
    let bits = [1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    let enc: Vec<_> = c4vqc::circuits::encoding_layer(n);
    let x: Vec<f64> = bits.iter().map(|b| b * PI).collect();
    let s = simulate(9, &enc, &[], &x).unwrap();
    for t in 1..4 {
        let r = simulate(9, &enc, &[], &rotate_flat(&x, n, t).unwrap()).unwrap();
        assert!(permute_qubits(&s, rep.power(t)).unwrap().distance(&r) < 1e-12);
    }
}

#[test]
fn equivariant_model_is_invariant_at_odd_resolution() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let plan = build_model(&ModelSpec::new(Architecture::Equivariant, 3, 4)).unwrap();
    for _ in 0..30 {
        let x = random_vec(&mut rng, 9, TAU);
        let theta = random_vec(&mut rng, plan.n_params(), TAU);
        let f = plan.forward(&theta, &x).unwrap();
        for t in 1..4 {
            let g = plan.forward(&theta, &rotate_flat(&x, 3, t).unwrap()).unwrap();
            assert!((f - g).abs() < 1e-10);
        }
    }
}

#[test]
fn resource_counts_follow_orbit_formula_for_odd_sides() {
    for (n, nphi) in [(3, 3), (5, 7)] {
        let r = resource_counts(&ModelSpec::new(Architecture::Equivariant, n, 1)).unwrap();
        assert_eq!((r.params_per_layer, r.cnots_per_layer), (3 * nphi, 4 * (nphi + 1)));
    }
    // Counting works past the simulator limit; building does not.
    let big = ModelSpec::new(Architecture::BasicEntangler, 8, 1);
    assert_eq!(resource_counts(&big).unwrap().cnots_per_layer, 64);
    assert!(matches!(build_model(&big), Err(Error::Capacity(_))));
}

#[test]
fn outputs_are_bounded_expectations() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for arch in Architecture::ALL {
        let plan = build_model(&ModelSpec::new(arch, 3, 2)).unwrap();
        for _ in 0..20 {
            let f = plan
                .forward(&random_vec(&mut rng, plan.n_params(), TAU), &random_vec(&mut rng, 9, PI))
                .unwrap();
            assert!(f.abs() <= 1.0 + 1e-12);
        }
    }
}

#[test]
fn batch_loss_gradient_matches_shift_rule_and_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let plan = build_model(&ModelSpec::new(Architecture::NonEquivariant, 3, 2)).unwrap();
    let theta = random_vec(&mut rng, plan.n_params(), TAU);
    let xs: Vec<Vec<f64>> = (0..5).map(|_| random_vec(&mut rng, 9, PI)).collect();
    let ys = [1.0, -1.0, 1.0, 1.0, -1.0];
    let a = loss_gradient(&plan, &theta, &xs, &ys).unwrap();
    let b = parameter_shift_loss_gradient(&plan, &theta, &xs, &ys).unwrap();
    let loss = |t: &[f64]| mse_loss(&predict(&plan, t, &xs).unwrap(), &ys).unwrap();
    assert!((a.loss - loss(&theta)).abs() < 1e-14);
    let h = 1e-5;
    for s in 0..theta.len() {
        assert!((a.grad[s] - b.grad[s]).abs() < 1e-10);
        let mut t = theta.clone();
        t[s] += h;
        let up = loss(&t);
        t[s] -= 2.0 * h;
        let fd = (up - loss(&t)) / (2.0 * h);
        assert!((fd - a.grad[s]).abs() < 1e-6, "slot {s}: {fd} vs {}", a.grad[s]);
    }
}

#[test]
fn non_equivariant_orbits_depend_on_seed_only() {
    let a = ModelSpec::new(Architecture::NonEquivariant, 4, 1).with_orbit_seed(3);
    let b = ModelSpec::new(Architecture::NonEquivariant, 4, 1).with_orbit_seed(3);
    let c = ModelSpec::new(Architecture::NonEquivariant, 4, 1).with_orbit_seed(4);
    let (pa, pb, pc) = (build_model(&a).unwrap(), build_model(&b).unwrap(), build_model(&c).unwrap());
    assert_eq!(pa.gates(), pb.gates());
    assert_ne!(pa.gates(), pc.gates());
}

#[test]
fn checkpoint_file_round_trip() {
    let spec = ModelSpec::new(Architecture::Equivariant, 4, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let params = ModelParams {
        values: random_vec(&mut rng, spec.n_params(), TAU),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    Checkpoint::new(&spec, &params).unwrap().save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.spec, spec);
    assert_eq!(back.model_params(), params);
    assert!(Checkpoint::new(&spec, &ModelParams { values: vec![0.0; 3] }).is_err());
}
