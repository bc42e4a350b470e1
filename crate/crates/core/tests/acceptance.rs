//! Acceptance criteria 1 to 11. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any fails.

use std::f64::consts::{PI, TAU};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use c4vqc::circuits::{build_model, encoding_layer, equivariant_block, resource_counts, Architecture, ModelParams, ModelSpec};
use c4vqc::cnn::{avg_pool, gconv, layer_specs, relu, shape_chain, CnnPipeline, Filter, LayerSpec, Tensor4};
use c4vqc::data::{export_png_tree, gen_garment_glyphs, load_images, split, ImageFormat};
use c4vqc::experiments::{
    compare_architectures, landscape_report, random_gray_image, DatasetConfig, ExperimentConfig, ModelConfig,
    RunRecord, SweepConfig,
};
use c4vqc::hybrid::{dataset_tensor, train_hybrid, HybridModel};
use c4vqc::statevector::{parameter_shift_gradient, permute_qubits, simulate, AngleSource};
use c4vqc::symmetry::{build_group_rep, compute_orbits, verify_equivariance, VerifyOptions};
use c4vqc::training::TrainConfig;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Quarter turn of a row-major image: pixel `(n-1-j, i)` lands on `(i, j)`.
fn quarter_turn(x: &[f64], n: usize, times: usize) -> Vec<f64> {
    let mut out = x.to_vec();
    for _ in 0..times {
        let prev = out.clone();
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = prev[(n - 1 - j) * n + i];
            }
        }
    }
    out
}

fn expected_orbits(n: usize) -> usize {
    if n % 2 == 0 {
        n * n / 4
    } else {
        n.div_ceil(2) * (n / 2) + 1
    }
}

fn random_vec(rng: &mut ChaCha8Rng, len: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(lo..hi)).collect()
}

fn random_tensor(rng: &mut ChaCha8Rng, n: usize, side: usize, c: usize) -> Tensor4 {
    Tensor4::new(n, side, side, c, random_vec(rng, n * side * side * c, -1.0, 1.0)).unwrap()
}

fn c1_symmetry() -> Outcome {
    for n in 2..=8 {
        let t = compute_orbits(n).unwrap();
        if t.n_orbits() != expected_orbits(n) {
            return Err(format!("n={n}: {} orbits, expected {}", t.n_orbits(), expected_orbits(n)));
        }
        let rep = build_group_rep(n).unwrap();
        let g = rep.generator();
        if !g.then(g).then(g).then(g).is_identity() {
            return Err(format!("n={n}: U_g^4 is not the identity"));
        }
        if g.then(g).then(g) != g.inverse() {
            return Err(format!("n={n}: U_g^3 differs from U_g^-1"));
        }
    }
    let t = compute_orbits(4).unwrap();
    let mut corner = t.orbit_qubits(t.orbit_of_qubit(0));
    corner.sort();
    ensure(corner == vec![0, 3, 12, 15], format!("corner orbit {corner:?}"))
}

fn c2_encoding() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for n in [2, 3, 4] {
        let nq = n * n;
        let enc = encoding_layer(n);
        let rep = build_group_rep(n).unwrap();
        for _ in 0..50 {
            let x = random_vec(&mut rng, nq, 0.0, TAU);
            let ux = simulate(nq, &enc, &[], &x).unwrap();
            for t in 0..4 {
                let lhs = simulate(nq, &enc, &[], &quarter_turn(&x, n, t)).unwrap();
                let rhs = permute_qubits(&ux, rep.power(t)).unwrap();
                worst = worst.max(lhs.distance(&rhs));
            }
        }
    }
    ensure(worst < 1e-10, format!("max deviation {worst:.2e}"))
}

fn max_label_delta(arch: Architecture, triples: usize, seed: u64) -> f64 {
    let spec = ModelSpec::new(arch, 4, 3);
    let plan = build_model(&spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..triples {
        let x = random_vec(&mut rng, 16, 0.0, PI);
        let theta = random_vec(&mut rng, plan.n_params(), 0.0, TAU);
        let t = rng.random_range(1..4);
        let d = plan.forward(&theta, &x).unwrap() - plan.forward(&theta, &quarter_turn(&x, 4, t)).unwrap();
        worst = worst.max(d.abs());
    }
    worst
}

fn c3_invariance() -> Outcome {
    let eq = max_label_delta(Architecture::Equivariant, 100, 3);
    let ne = max_label_delta(Architecture::NonEquivariant, 100, 4);
    let be = max_label_delta(Architecture::BasicEntangler, 100, 5);
    ensure(
        eq < 1e-9 && ne > 0.01 && be > 0.01,
        format!("max |delta|: equivariant {eq:.2e}, non-equivariant {ne:.3}, basic entangler {be:.3}"),
    )
}

fn c4_resources() -> Outcome {
    let mut rows = Vec::new();
    for n in [2, 4, 6] {
        let nphi = expected_orbits(n);
        for (arch, params, cnots) in [
            (Architecture::Equivariant, 3 * nphi, 4 * (nphi + 1)),
            (Architecture::NonEquivariant, 3 * nphi, 4 * (nphi + 1)),
            (Architecture::BasicEntangler, n * n, n * n),
        ] {
            let r = resource_counts(&ModelSpec::new(arch, n, 1)).unwrap();
            if (r.params_per_layer, r.cnots_per_layer) != (params, cnots) {
                return Err(format!(
                    "{arch} n={n}: {} params and {} CNOTs, expected {params} and {cnots}",
                    r.params_per_layer, r.cnots_per_layer
                ));
            }
            if n == 4 {
                rows.push(format!("{arch} {params}/{cnots}"));
            }
        }
    }
    Ok(format!("n=4: {}", rows.join(", ")))
}

fn c5_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut shift_gap, mut fd_gap): (f64, f64) = (0.0, 0.0);
    let h = 1e-5;
    for k in 0..50 {
        let n = if k % 2 == 0 { 2 } else { 4 };
        let arch = Architecture::ALL[k % 3];
        let nl = if n == 2 { 1 + k % 3 } else { 1 };
        let plan = build_model(&ModelSpec::new(arch, n, nl)).unwrap();
        let theta = random_vec(&mut rng, plan.n_params(), 0.0, TAU);
        let x = random_vec(&mut rng, n * n, 0.0, PI);
        let adj = plan.gradient(&theta, &x).unwrap();
        let ps = parameter_shift_gradient(plan.n_qubits(), plan.gates(), plan.observable(), &theta, &x).unwrap();
        for (a, b) in adj.params.iter().zip(&ps.params).chain(adj.inputs.iter().zip(&ps.inputs)) {
            shift_gap = shift_gap.max((a - b).abs());
        }
        for s in 0..theta.len() {
            let mut t = theta.clone();
            t[s] += h;
            let up = plan.forward(&t, &x).unwrap();
            t[s] -= 2.0 * h;
            let dn = plan.forward(&t, &x).unwrap();
            let fd = (up - dn) / (2.0 * h);
            fd_gap = fd_gap.max((fd - adj.params[s]).abs()).max((fd - ps.params[s]).abs());
        }
    }
    ensure(
        shift_gap < 1e-10 && fd_gap < 1e-6,
        format!("adjoint vs shift {shift_gap:.2e}, vs finite differences {fd_gap:.2e}"),
    )
}

fn c6_landscape() -> Outcome {
    let r = landscape_report(4, 5, random_gray_image(4, 3), 1.0, [0.0, PI], 2000, 1).map_err(|e| e.to_string())?;
    let eq = r.row(Architecture::Equivariant).unwrap();
    let be = r.row(Architecture::BasicEntangler).unwrap();
    let means_ok = r.rows.iter().all(|row| (0.95..=1.05).contains(&row.stats.mean_loss));
    let ratio = be.var_grad / eq.var_grad;
    let means: Vec<String> = r
        .rows
        .iter()
        .map(|row| format!("{} {:.4}", row.architecture, row.stats.mean_loss))
        .collect();
    ensure(
        means_ok && ratio <= 0.1,
        format!(
            "mean loss [{}]; var grad equivariant {:.2e}, basic entangler {:.2e}, ratio {ratio:.2e}",
            means.join(", "),
            eq.var_grad,
            be.var_grad
        ),
    )
}

fn tetromino_config(architectures: Vec<Architecture>, n_layers: Vec<usize>) -> ExperimentConfig {
    ExperimentConfig {
        dataset: DatasetConfig::tetromino(),
        model: ModelConfig::default(),
        cnn_pipeline: None,
        train: TrainConfig {
            learning_rate: 0.1,
            max_epochs: 100,
            batch_size: 0,
            ..TrainConfig::default()
        },
        sweep: SweepConfig {
            architectures,
            seeds: (0..5).collect(),
            n_layers,
            workers: 0,
        },
    }
}

fn mean_test_f1(records: &[RunRecord], arch: Architecture, nl: usize) -> (f64, f64) {
    let v: Vec<f64> = records
        .iter()
        .filter(|r| r.spec.architecture == arch && r.spec.n_layers == nl)
        .map(|r| r.test.f1)
        .collect();
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0);
    (m, (var / v.len() as f64).sqrt())
}

fn c7_tetromino(records: &mut Vec<RunRecord>) -> Outcome {
    let c = compare_architectures(&tetromino_config(Architecture::ALL.to_vec(), vec![10])).map_err(|e| e.to_string())?;
    if !c.failures.is_empty() {
        return Err(format!("{} runs failed: {:?}", c.failures.len(), c.failures));
    }
    *records = c.records;
    let best = records
        .iter()
        .filter(|r| r.spec.architecture == Architecture::Equivariant)
        .max_by(|a, b| a.test.f1.total_cmp(&b.test.f1))
        .unwrap();
    let (eq, _) = mean_test_f1(records, Architecture::Equivariant, 10);
    let (ne, _) = mean_test_f1(records, Architecture::NonEquivariant, 10);
    let (be, _) = mean_test_f1(records, Architecture::BasicEntangler, 10);
    ensure(
        best.train.f1 >= 0.90 && best.test.f1 >= 0.80 && eq > ne && eq > be,
        format!(
            "best equivariant seed {} train/test f1 {:.3}/{:.3}; mean test f1 equivariant {eq:.3}, non-equivariant {ne:.3}, basic entangler {be:.3}",
            best.seed, best.train.f1, best.test.f1
        ),
    )
}

fn c8_layers(previous: &[RunRecord]) -> Outcome {
    let c = compare_architectures(&tetromino_config(vec![Architecture::Equivariant], vec![2, 6]))
        .map_err(|e| e.to_string())?;
    if !c.failures.is_empty() {
        return Err(format!("{} runs failed", c.failures.len()));
    }
    let mut records = c.records;
    let have_10 = previous.iter().any(|r| r.spec.architecture == Architecture::Equivariant);
    if have_10 {
        records.extend(previous.iter().cloned());
    } else {
        let c = compare_architectures(&tetromino_config(vec![Architecture::Equivariant], vec![10]))
            .map_err(|e| e.to_string())?;
        records.extend(c.records);
    }
    let stats: Vec<(usize, f64, f64)> = [2, 6, 10]
        .iter()
        .map(|&nl| {
            let (m, se) = mean_test_f1(&records, Architecture::Equivariant, nl);
            (nl, m, se)
        })
        .collect();
    // "Within noise": a drop smaller than the combined standard error of the two means.
    let monotone = stats
        .windows(2)
        .all(|w| w[1].1 >= w[0].1 - (w[0].2.powi(2) + w[1].2.powi(2)).sqrt());
    let gain = stats[2].1 - stats[0].1;
    let line: Vec<String> = stats
        .iter()
        .map(|(nl, m, se)| format!("n_l={nl} {m:.3}+-{se:.3}"))
        .collect();
    ensure(monotone && gain >= 0.15, format!("mean test f1 {}; gain {gain:.3}", line.join(", ")))
}

fn c9_cnn() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for side in [6, 8] {
        let x = random_tensor(&mut rng, 3, side, 2);
        let f = Filter::fan_in_uniform(3, 2, 3, &mut rng);
        for t in 1..4 {
            let xr = x.rotated(t).unwrap();
            let a = gconv(&xr, &f, 1, 0).unwrap();
            let b = gconv(&x, &f, 1, 0).unwrap().rotated(t).unwrap();
            let p = avg_pool(&xr, 2).unwrap();
            let q = avg_pool(&x, 2).unwrap().rotated(t).unwrap();
            let r = relu(&xr);
            let s = relu(&x).rotated(t).unwrap();
            worst = worst.max(a.max_abs_diff(&b)).max(p.max_abs_diff(&q)).max(r.max_abs_diff(&s));
        }
    }
    let mut p = CnnPipeline::new(8, 2, &[LayerSpec::new(3, 3, Some(2)), LayerSpec::new(2, 1, None)], 9).unwrap();
    let x = random_tensor(&mut rng, 2, 8, 2);
    let y = p.forward(&x).unwrap();
    let up = Tensor4 {
        data: random_vec(&mut rng, y.data.len(), -1.0, 1.0),
        ..y.clone()
    };
    let objective = |p: &CnnPipeline| -> f64 { p.apply(&x).unwrap().data.iter().zip(&up.data).map(|(a, b)| a * b).sum() };
    let (grads, _) = p.backward(&up).unwrap();
    let analytic: Vec<f64> = grads.into_iter().flat_map(|f| f.data).collect();
    let w0 = p.weights();
    let h = 1e-6;
    let mut fd_gap: f64 = 0.0;
    for k in 0..w0.len() {
        let mut w = w0.clone();
        w[k] += h;
        p.set_weights(&w).unwrap();
        let a = objective(&p);
        w[k] -= 2.0 * h;
        p.set_weights(&w).unwrap();
        let b = objective(&p);
        fd_gap = fd_gap.max(((a - b) / (2.0 * h) - analytic[k]).abs());
    }
    let specs = layer_specs(&[11, 11, 3, 3], &[10, 10, 10, 1], &[]).unwrap();
    let sides: Vec<usize> = shape_chain(28, 1, &specs).unwrap().iter().map(|s| s.side).collect();
    ensure(
        worst < 1e-8 && fd_gap < 1e-5 && sides == vec![28, 18, 8, 6, 4],
        format!("equivariance {worst:.2e}, backward vs finite differences {fd_gap:.2e}, shape chain {sides:?}"),
    )
}

fn hybrid_rotation_gap(m: &HybridModel, x: &Tensor4) -> f64 {
    let f = m.forward(x).unwrap();
    (1..4)
        .map(|t| {
            let fr = m.forward(&x.rotated(t).unwrap()).unwrap();
            f.iter().zip(&fr).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

fn c10_hybrid_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let p = CnnPipeline::new(16, 1, &[LayerSpec::new(5, 4, Some(2)), LayerSpec::new(3, 1, None)], 10).unwrap();
    let spec = ModelSpec::new(Architecture::Equivariant, 4, 2);
    let params = ModelParams {
        values: random_vec(&mut rng, spec.n_params(), 0.0, TAU),
    };
    let mut m = HybridModel::new(p, &spec, params, [0.0, PI]).unwrap();
    let x = Tensor4::new(20, 16, 16, 1, random_vec(&mut rng, 20 * 256, 0.0, 1.0)).unwrap();
    m.fit_scaler(&x).unwrap();
    let gap = hybrid_rotation_gap(&m, &x);
    ensure(gap < 1e-6, format!("max |F(x) - F(rot x)| {gap:.2e}"))
}

fn c11_downscaled_hybrid() -> Outcome {
    let glyphs = gen_garment_glyphs(32, 200, 25.0, 7).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    export_png_tree(&glyphs, dir.path()).map_err(|e| e.to_string())?;
    let d = load_images(dir.path(), ImageFormat::Png, 16, true).map_err(|e| e.to_string())?;
    let (train, test) = split(&d, 1.0 / 3.0, 0).map_err(|e| e.to_string())?;
    let (x, y) = dataset_tensor(&train).unwrap();
    let (tx, ty) = dataset_tensor(&test).unwrap();
    let p = CnnPipeline::new(16, 1, &[LayerSpec::new(5, 4, Some(2)), LayerSpec::new(3, 1, None)], 0).unwrap();
    let spec = ModelSpec::new(Architecture::Equivariant, 4, 2);
    let mut m = HybridModel::new(p, &spec, ModelParams::zeros(&spec), [0.0, PI]).unwrap();
    let config = TrainConfig {
        learning_rate: 0.001,
        max_epochs: 100,
        batch_size: 8,
        seed: 0,
        ..TrainConfig::default()
    };
    train_hybrid(&mut m, (&x, &y), Some((&tx, &ty)), &config).map_err(|e| e.to_string())?;
    let (_, metrics) = m.evaluate(&tx, &ty).unwrap();

    // Invariance suites on the trained model.
    let end_to_end = hybrid_rotation_gap(&m, &tx);
    let latent = m.pipeline.apply(&tx).unwrap();
    let latent_gap = (1..4)
        .map(|t| {
            m.pipeline
                .apply(&tx.rotated(t).unwrap())
                .unwrap()
                .max_abs_diff(&latent.rotated(t).unwrap())
        })
        .fold(0.0, f64::max);
    let plan = build_model(&spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut circuit_gap: f64 = 0.0;
    for _ in 0..50 {
        let z = random_vec(&mut rng, 16, 0.0, PI);
        let f = plan.forward(&m.params.values, &z).unwrap();
        for t in 1..4 {
            circuit_gap = circuit_gap.max((f - plan.forward(&m.params.values, &quarter_turn(&z, 4, t)).unwrap()).abs());
        }
    }
    let table = compute_orbits(4).unwrap();
    let rep = build_group_rep(4).unwrap();
    let ppl = spec.params_per_layer();
    let mut block_gap: f64 = 0.0;
    for layer in m.params.values.chunks(ppl) {
        let angles: Vec<AngleSource> = layer.iter().map(|&a| AngleSource::Fixed(a)).collect();
        let gates = equivariant_block(&table, &angles).unwrap();
        let r = verify_equivariance(&gates, &rep, &VerifyOptions::default()).unwrap();
        block_gap = block_gap.max(r.max_deviation);
    }
    ensure(
        metrics.accuracy >= 0.75 && end_to_end < 1e-6 && latent_gap < 1e-8 && circuit_gap < 1e-9 && block_gap < 1e-10,
        format!(
            "{} train / {} test images at 16x16, test accuracy {:.3}; invariance gaps: end to end {end_to_end:.2e}, latent {latent_gap:.2e}, circuit {circuit_gap:.2e}, trained blocks {block_gap:.2e}",
            train.len(),
            test.len(),
            metrics.accuracy,
        ),
    )
}

fn run(id: usize, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let elapsed = start.elapsed();
    let over = elapsed > budget;
    let (pass, detail) = match outcome {
        Ok(d) if !over => (true, d),
        Ok(d) => (false, format!("{d}; over the {:.0} s budget", budget.as_secs_f64())),
        Err(d) => (false, d),
    };
    println!(
        "criterion {id:>2}: {} ({:.1} s) {detail}",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    pass
}

fn main() {
    // Only the criteria named on the command line run, when any are given.
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |id: usize| selected.is_empty() || selected.contains(&id);
    let secs = Duration::from_secs;
    let mut all = true;
    let mut tetromino_runs = Vec::new();
    let mut check = |id: usize, budget: Duration, f: &mut dyn FnMut() -> Outcome| {
        if want(id) {
            all &= run(id, budget, f);
        }
    };
    check(1, secs(1), &mut c1_symmetry);
    check(2, secs(5), &mut c2_encoding);
    check(3, secs(30), &mut c3_invariance);
    check(4, secs(1), &mut c4_resources);
    check(5, secs(60), &mut c5_gradients);
    check(6, secs(600), &mut c6_landscape);
    check(7, secs(1800), &mut || c7_tetromino(&mut tetromino_runs));
    check(8, secs(3600), &mut || c8_layers(&tetromino_runs));
    check(9, secs(10), &mut c9_cnn);
    check(10, secs(60), &mut c10_hybrid_invariance);
    check(11, secs(900), &mut c11_downscaled_hybrid);
    if !all {
        std::process::exit(1);
    }
}
