//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. Pass criterion numbers as arguments to run
//! a subset, e.g. `cargo test --test acceptance -- 1 3`.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use foldpack::{checkpoint, cli};
use foldpack_core::experiments::{chamfer_study, evaluate_emkd, ChamferStudyConfig, StudyObjective};
use foldpack_core::lap::{distance_matrix, hungarian_assign};
use foldpack_core::matching::GreedyParams;
use foldpack_core::metrics::{emd_exact_mean, emkd, EmkdParams};
use foldpack_core::net::{FoldingNet, NetConfig, TENSOR_NAMES};
use foldpack_core::synth::{self, SynthKind};
use foldpack_core::trainer::{init_instance, train, LossKind, TrainConfig};
use foldpack_core::{auction_assign, qaad_greedy, qaad_reassignment, MatchingState, Point3, PointCloud};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_cloud(r: &mut ChaCha8Rng, n: usize) -> PointCloud {
    PointCloud::new((0..n).map(|_| [r.random(), r.random(), r.random()]).collect()).unwrap()
}

fn dist(a: &Point3, b: &Point3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn is_permutation(p: &[usize]) -> bool {
    let mut seen = vec![false; p.len()];
    p.iter().all(|&i| i < seen.len() && !std::mem::replace(&mut seen[i], true))
}

/// Minimum over all bijections of the row-ordered cost sum (Heap's algorithm).
fn brute_force_total(cost: &[f64], n: usize) -> f64 {
    fn total(cost: &[f64], n: usize, p: &[usize]) -> f64 {
        p.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum()
    }
    let mut p: Vec<usize> = (0..n).collect();
    let mut best = total(cost, n, &p);
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                p.swap(0, i);
            } else {
                p.swap(c[i], i);
            }
            best = best.min(total(cost, n, &p));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

fn metric_oracles() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    for case in 0..200 {
        let n = r.random_range(1..=8);
        let (a, b) = (random_cloud(&mut r, n), random_cloud(&mut r, n));
        let cost = distance_matrix(a.points(), b.points());
        let brute = brute_force_total(&cost, n);
        let hung = hungarian_assign(&cost, n).map_err(|e| e.to_string())?;
        ensure(hung.cost == brute, || format!("case {case} (n={n}): hungarian {} vs brute {brute}", hung.cost))?;
        let emd = emd_exact_mean(&a, &b).map_err(|e| e.to_string())?;
        ensure(emd == brute / n as f64, || format!("case {case} (n={n}): emd {emd} vs brute {}", brute / n as f64))?;
    }
    // larger sizes: primal feasibility, dual feasibility, complementary slackness
    let mut worst = 0.0f64;
    for case in 0..60 {
        let n = r.random_range(9..=256);
        let (a, b) = (random_cloud(&mut r, n), random_cloud(&mut r, n));
        let cost = distance_matrix(a.points(), b.points());
        let sol = hungarian_assign(&cost, n).map_err(|e| e.to_string())?;
        ensure(is_permutation(&sol.assignment), || format!("case {case}: not a permutation"))?;
        for i in 0..n {
            for j in 0..n {
                let slack = cost[i * n + j] - sol.row_potentials[i] - sol.col_potentials[j];
                ensure(slack >= -1e-9, || format!("case {case}: dual infeasible at ({i},{j}) by {slack}"))?;
                if sol.assignment[i] == j {
                    worst = worst.max(slack.abs());
                }
            }
        }
        ensure(worst <= 1e-9, || format!("case {case}: assigned reduced cost {worst}"))?;
        let dual: f64 = sol.row_potentials.iter().chain(&sol.col_potentials).sum();
        ensure((dual - sol.cost).abs() <= 1e-9 * n as f64, || format!("case {case}: duality gap {}", dual - sol.cost))?;
    }
    Ok(format!("200 brute-force pairs exact; 60 certificates (n 9..=256), max assigned reduced cost {worst:.1e}"))
}

fn emkd_upper_bound() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let eps = 1e-6;
    let mut worst_depth0 = 0.0f64;
    for case in 0..100 {
        let (a, b) = (random_cloud(&mut r, 256), random_cloud(&mut r, 256));
        let exact = emd_exact_mean(&a, &b).map_err(|e| e.to_string())?;
        for depth in [0, 2, 4] {
            let params = EmkdParams { depth, epsilon: eps, max_iterations: 100_000_000 };
            let v = emkd(&a, &b, &params).map_err(|e| e.to_string())?.value;
            ensure(v >= exact - 1e-9, || format!("case {case} depth {depth}: emkd {v} < exact {exact}"))?;
            if depth == 0 {
                worst_depth0 = worst_depth0.max(v - exact);
                ensure(v - exact <= eps, || format!("case {case}: depth-0 gap {} > {eps}", v - exact))?;
            }
        }
    }
    Ok(format!("100 pairs x 3 depths; max depth-0 gap {worst_depth0:.2e}"))
}

fn auction_epsilon_optimal() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let (n, eps) = (128, 1e-3);
    let (mut completed, mut worst) = (0, 0.0f64);
    for case in 0..100 {
        let (a, b) = (random_cloud(&mut r, n), random_cloud(&mut r, n));
        let sol = auction_assign(a.points(), b.points(), eps, 1_000_000).map_err(|e| e.to_string())?;
        if !sol.complete {
            continue;
        }
        completed += 1;
        let opt = hungarian_assign(&distance_matrix(a.points(), b.points()), n).map_err(|e| e.to_string())?.cost;
        let gap = sol.assigned_cost() - opt;
        worst = worst.max(gap);
        // the lower end only absorbs summation-order rounding
        ensure((-1e-12..=n as f64 * eps).contains(&gap), || format!("case {case}: gap {gap}"))?;
    }
    ensure(completed > 0, || "no auction completed".into())?;
    Ok(format!("{completed}/100 completed; max gap {worst:.2e} (bound {:.3})", n as f64 * eps))
}

fn reassignment_monotone() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let (mut total_swaps, mut calls_with_swaps) = (0, 0);
    for call in 0..1000 {
        let m = r.random_range(16..=256);
        let target = random_cloud(&mut r, m);
        // predictions near a shuffled copy of the targets, so crossings exist
        let shuffle = index::sample(&mut r, m, m).into_vec();
        let noise = r.random_range(0.0..0.2);
        let pred: Vec<Point3> = shuffle
            .iter()
            .map(|&j| {
                let t = target.point(j);
                [
                    t[0] + noise * r.random_range(-1.0..1.0),
                    t[1] + noise * r.random_range(-1.0..1.0),
                    t[2] + noise * r.random_range(-1.0..1.0),
                ]
            })
            .collect();
        let (ns, nt) = (r.random_range(1..=m), r.random_range(1..=m));
        let s_ids = index::sample(&mut r, m, ns).into_vec();
        let t_ids = index::sample(&mut r, m, nt).into_vec();
        let p_s: Vec<Point3> = s_ids.iter().map(|&i| pred[i]).collect();

        let mut state = MatchingState::new(target);
        let before = state.target().clone();
        let out = qaad_reassignment(&s_ids, &t_ids, &p_s, |ids| Ok(ids.iter().map(|&i| pred[i]).collect()), &mut state)
            .map_err(|e| e.to_string())?;
        let after = state.target();
        ensure(is_permutation(state.permutation()), || format!("call {call}: not a permutation"))?;

        let row_loss = |t: &PointCloud, row: usize| dist(&pred[row], t.point(row));
        let mut touched = vec![false; m];
        for &(s, n) in &out.swaps {
            let b = row_loss(&before, s) + row_loss(&before, n);
            let a = row_loss(after, s) + row_loss(after, n);
            ensure(a < b, || format!("call {call}: swap ({s},{n}) went {b} -> {a}"))?;
            touched[s] = true;
            touched[n] = true;
        }
        for row in 0..m {
            if !touched[row] {
                ensure(before.point(row) == after.point(row), || format!("call {call}: untouched row {row} moved"))?;
            }
        }
        let rows = (0..m).filter(|&i| touched[i]);
        let (lb, la): (f64, f64) = rows.fold((0.0, 0.0), |(x, y), i| (x + row_loss(&before, i), y + row_loss(after, i)));
        ensure(la <= lb, || format!("call {call}: touched loss rose {lb} -> {la}"))?;
        total_swaps += out.accepted();
        calls_with_swaps += usize::from(out.accepted() > 0);
    }
    ensure(calls_with_swaps > 0, || "no call accepted a swap".into())?;
    Ok(format!("1000 calls, {calls_with_swaps} with swaps, {total_swaps} swaps, each strictly improving"))
}

fn greedy_bijective() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let m = 2048;
    let mut worst = f64::NEG_INFINITY;
    let mut filled = 0;
    for case in 0..50 {
        let (a, b) = (random_cloud(&mut r, m), random_cloud(&mut r, m));
        // complete leaf auctions: quality bound against emkd with the same leaf solves
        let params = GreedyParams { depth: 3, epsilon: 1e-3, max_iterations: 10_000_000, seed: case };
        let mut state = MatchingState::new(b.clone());
        let rep = qaad_greedy(&a, &mut state, &params).map_err(|e| e.to_string())?;
        ensure(is_permutation(state.permutation()), || format!("case {case}: not a bijection"))?;
        ensure(rep.incomplete_leaves == 0, || format!("case {case}: {} leaves hit the cap", rep.incomplete_leaves))?;
        let aligned = (0..m).map(|i| dist(a.point(i), state.target().point(i))).sum::<f64>() / m as f64;
        let e = emkd(&a, &b, &EmkdParams { depth: 3, epsilon: 1e-3, max_iterations: 10_000_000 })
            .map_err(|e| e.to_string())?
            .value;
        worst = worst.max(aligned - e);
        ensure(aligned <= e + 1e-9, || format!("case {case}: aligned {aligned} > emkd {e}"))?;

        // a tight round cap forces dedup and random fill; only bijectivity applies
        let capped = GreedyParams { max_iterations: 3, ..params };
        let mut state = MatchingState::new(b.clone());
        let rep = qaad_greedy(&a, &mut state, &capped).map_err(|e| e.to_string())?;
        filled += rep.randomly_matched;
        ensure(is_permutation(state.permutation()), || format!("case {case}: capped run not a bijection"))?;
        for (row, &orig) in state.permutation().iter().enumerate() {
            ensure(state.target().point(row) == b.point(orig), || format!("case {case}: row {row} misaligned"))?;
        }
    }
    // depth 0 with small epsilon: the single auction is within M·ε of exact
    let mut r0 = ChaCha8Rng::seed_from_u64(55);
    for case in 0..5 {
        let n = 256;
        let (a, b) = (random_cloud(&mut r0, n), random_cloud(&mut r0, n));
        let params = GreedyParams { depth: 0, epsilon: 1e-6, max_iterations: 100_000_000, seed: case };
        let mut state = MatchingState::new(b.clone());
        qaad_greedy(&a, &mut state, &params).map_err(|e| e.to_string())?;
        let aligned = (0..n).map(|i| dist(a.point(i), state.target().point(i))).sum::<f64>() / n as f64;
        let exact = emd_exact_mean(&a, &b).map_err(|e| e.to_string())?;
        ensure(aligned - exact <= 1e-6 + 1e-9, || format!("depth-0 case {case}: {aligned} vs exact {exact}"))?;
    }
    Ok(format!(
        "50 pairs bijective; max aligned - emkd {worst:.1e}; capped runs filled {filled} rows; depth-0 within eps of exact"
    ))
}

fn gradient_check() -> Outcome {
    const H: f64 = 1e-4;
    let mut worst = (0.0f64, "", 0u64);
    let (mut probes, mut kinked) = (0usize, 0usize);
    for seed in 0..20u64 {
        let mut r = ChaCha8Rng::seed_from_u64(600 + seed);
        let cfg = NetConfig {
            points: 32,
            patches: 4,
            latent_dim: 4,
            instances: 3,
            width: 8 + 4 * (seed as usize % 4),
            seed,
        };
        let cloud = synth::gen_synthetic(SynthKind::GaussianBlobs, 32, seed).unwrap().normalized_unit_sphere();
        let mut net = FoldingNet::init(cfg, &cloud).map_err(|e| e.to_string())?;
        let inst = r.random_range(0..3);
        let per = r.random_range(1..=4);
        let ids: Vec<usize> = (0..4).flat_map(|k| (0..per).map(move |j| k * 8 + (j * 3 + k) % 8)).collect();
        let up: Vec<Point3> = ids.iter().map(|_| [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)]).collect();
        let objective = |net: &FoldingNet| -> (f64, Vec<bool>) {
            let out = net.forward(inst, &ids).unwrap();
            let v = out.output().iter().zip(&up).map(|(o, u)| o[0] * u[0] + o[1] * u[1] + o[2] * u[2]).sum();
            (v, out.activation_pattern())
        };
        let cache = net.forward(inst, &ids).unwrap();
        let base = cache.activation_pattern();
        let grads = net.backward(&cache, &up).map_err(|e| e.to_string())?;
        for t in 0..TENSOR_NAMES.len() {
            let len = grads.tensors()[t].len();
            let picks: Vec<usize> = match TENSOR_NAMES[t] {
                "latent" => (0..4).map(|c| inst * 4 + c).chain([((inst + 1) % 3) * 4]).collect(),
                "source" => ids.iter().map(|&i| i * 3 + r.random_range(0..3)).collect(),
                _ => (0..12).map(|_| r.random_range(0..len)).collect(),
            };
            for i in picks {
                let orig = net.params().tensors()[t][i];
                net.params_mut().tensors_mut()[t][i] = orig + H;
                let (plus, pp) = objective(&net);
                net.params_mut().tensors_mut()[t][i] = orig - H;
                let (minus, pm) = objective(&net);
                net.params_mut().tensors_mut()[t][i] = orig;
                // a step that flips a SELU branch straddles its kink; the
                // central difference is not a derivative estimate there
                if pp != base || pm != base {
                    kinked += 1;
                    continue;
                }
                probes += 1;
                let numeric = (plus - minus) / (2.0 * H);
                let analytic = grads.tensors()[t][i];
                let err = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
                if err > worst.0 {
                    worst = (err, TENSOR_NAMES[t], seed);
                }
            }
        }
    }
    ensure(worst.0 < 1e-5, || format!("{} relative error {:.2e} (config {})", worst.1, worst.0, worst.2))?;
    ensure(kinked * 10 < probes, || format!("{kinked} kink-straddling probes of {}", probes + kinked))?;
    Ok(format!(
        "20 configs, {probes} probes, worst relative error {:.2e} ({}); {kinked} kink-straddling probes skipped",
        worst.0, worst.1
    ))
}

fn sampling_density_study() -> Outcome {
    let target = synth::gen_synthetic(SynthKind::TwoScaleTeeth, 8192, 0).map_err(|e| e.to_string())?;
    let cfg = ChamferStudyConfig {
        fractions: vec![1.0, 0.01],
        objectives: vec![StudyObjective::AugChamferDirect, StudyObjective::MseRandomPerfect],
        ..ChamferStudyConfig::new(target)
    };
    ensure(cfg.steps == 2000, || format!("steps {}", cfg.steps))?;
    let curves = chamfer_study(&cfg).map_err(|e| e.to_string())?;
    let get = |o: StudyObjective, f: f64| {
        curves.iter().find(|c| c.objective == o && c.fraction == f).map(|c| c.final_value()).unwrap()
    };
    let aug_dense = get(StudyObjective::AugChamferDirect, 1.0);
    let aug_sparse = get(StudyObjective::AugChamferDirect, 0.01);
    let mse_dense = get(StudyObjective::MseRandomPerfect, 1.0);
    let detail = format!("mse(1.0) {mse_dense:.3}, aug(1.0) {aug_dense:.3}, aug(0.01) {aug_sparse:.3}");
    ensure(mse_dense < aug_dense, || format!("mse not below aug at full density: {detail}"))?;
    ensure(aug_dense >= aug_sparse, || format!("denser sampling not worse: {detail}"))?;
    Ok(detail)
}

fn qap_beats_chamfer() -> Outcome {
    let seed = 11;
    let dataset = synth::synthetic_dataset(SynthKind::TwoScaleTeeth, 8, 4096, seed, true).map_err(|e| e.to_string())?;
    let nc = NetConfig {
        points: 4096,
        patches: 8,
        latent_dim: 8,
        instances: 8,
        width: 256,
        seed,
    };
    let net0 = FoldingNet::init(nc, dataset.cloud(init_instance(seed, 8))).map_err(|e| e.to_string())?;
    let base = TrainConfig {
        epochs: 100,
        batch_size: 2,
        sample_size: 1024,
        depth: 3,
        epsilon: 1e-3,
        max_iterations: 100_000,
        loss: LossKind::AlignedL2,
        reassignment: true,
        lr: 1e-3,
        seed,
    };
    let chamfer_cfg = TrainConfig {
        loss: LossKind::AugChamferSample,
        reassignment: false,
        ..base
    };
    let eval = EmkdParams { depth: 2, epsilon: 1e-3, max_iterations: 1_000_000 };
    let mut results = Vec::new();
    for cfg in [base, chamfer_cfg] {
        let mut net = net0.clone();
        train(&dataset, &mut net, &cfg).map_err(|e| e.to_string())?;
        results.push(evaluate_emkd(&dataset, &net, &eval).map_err(|e| e.to_string())?.mean);
    }
    let detail = format!("mean EM-kD: QAP {:.4}, aug Chamfer {:.4}", results[0], results[1]);
    ensure(results[0] < results[1], || detail.clone())?;
    Ok(detail)
}

fn toy_config(dir: &Path, out: &str) -> std::path::PathBuf {
    let path = dir.join(format!("{out}.ini"));
    fs::write(
        &path,
        format!(
            "seed = 21\n\
             [data]\nsynthetic = two_scale_teeth\ninstances = 4\npoints = 1024\nnormalize = true\n\
             [model]\npatches = 4\nlatent_dim = 8\nwidth = 64\n\
             [train]\nepochs = 8\nbatch_size = 2\nsample_size = 256\ndepth = 2\nepsilon = 0.001\nmax_iterations = 100000\n\
             [output]\ndir = {out}/\ncheckpoint_every = 4\n"
        ),
    )
    .unwrap();
    path
}

fn deterministic_runs() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let read = |p: &Path| fs::read(p).map_err(|e| format!("{}: {e}", p.display()));
    let (c1, c2) = (toy_config(dir, "a"), toy_config(dir, "b"));
    let f1 = cli::cmd_train(&c1, None, None).map_err(|e| e.to_string())?;
    let f2 = cli::cmd_train(&c2, None, None).map_err(|e| e.to_string())?;
    let log1 = read(&dir.join("a/train_log.csv"))?;
    ensure(log1 == read(&dir.join("b/train_log.csv"))?, || "logs differ between identical runs".into())?;
    ensure(read(&f1)? == read(&f2)?, || "final checkpoints differ between identical runs".into())?;

    cli::cmd_train(&c2, Some(&dir.join("b/checkpoint_0004.fpk")), None).map_err(|e| e.to_string())?;
    ensure(log1 == read(&dir.join("b/train_log.csv"))?, || "resumed log differs from the unbroken run".into())?;
    ensure(read(&f1)? == read(&f2)?, || "resumed checkpoint differs from the unbroken run".into())?;
    let ck = checkpoint::load(&f2).map_err(|e| e.to_string())?;
    let rows = log1.iter().filter(|&&b| b == b'\n').count() - 1;
    Ok(format!("{rows} log rows and {} epochs identical across two runs and a resume from epoch 4", ck.epochs_done))
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, fn() -> Outcome); 9] = [
        (1, "metric oracle equivalence", metric_oracles),
        (2, "EM-kD upper bound", emkd_upper_bound),
        (3, "auction epsilon-optimality", auction_epsilon_optimal),
        (4, "reassignment monotonicity", reassignment_monotone),
        (5, "greedy bijectivity and quality", greedy_bijective),
        (6, "gradient correctness", gradient_check),
        (7, "sampling-density ordering", sampling_density_study),
        (8, "QAP training beats Chamfer training", qap_beats_chamfer),
        (9, "training determinism and resume", deterministic_runs),
    ];
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, check) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {id} {name} ({secs:.1} s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {id} {name} ({secs:.1} s): {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
