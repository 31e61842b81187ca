//! Central finite differences against the hand-written backward pass.

use foldpack_core::net::{FoldingNet, NetConfig, TENSOR_NAMES};
use foldpack_core::synth::{gen_synthetic, SynthKind};
use foldpack_core::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-4;
const TOL: f64 = 1e-5;

/// `Σ ⟨output, upstream⟩` and the SELU sign pattern at the current parameters.
fn objective(net: &FoldingNet, inst: usize, ids: &[usize], up: &[Point3]) -> (f64, Vec<bool>) {
    let out = net.forward(inst, ids).unwrap();
    let v = out
        .output()
        .iter()
        .zip(up)
        .map(|(o, u)| o[0] * u[0] + o[1] * u[1] + o[2] * u[2])
        .sum();
    (v, out.activation_pattern())
}

struct Check {
    worst: f64,
    worst_tensor: &'static str,
    probes: usize,
    /// Probes whose ±H step crossed a SELU kink, where central differences
    /// do not estimate the derivative.
    kinked: usize,
}

fn check(seed: u64, probes: usize) -> Check {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let cfg = NetConfig {
        points: 32,
        patches: 4,
        latent_dim: 4,
        instances: 3,
        width: 8 + 4 * (seed as usize % 4),
        seed,
    };
    let cloud = gen_synthetic(SynthKind::GaussianBlobs, 32, seed).unwrap().normalized_unit_sphere();
    let mut net = FoldingNet::init(cfg, &cloud).unwrap();
    let inst = r.random_range(0..3);
    let per = 1 + r.random_range(0..4);
    let ids: Vec<usize> = (0..4).flat_map(|k| (0..per).map(move |j| k * 8 + (j * 3 + k) % 8)).collect();
    let up: Vec<Point3> = ids
        .iter()
        .map(|_| [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)])
        .collect();
    let cache = net.forward(inst, &ids).unwrap();
    let base = cache.activation_pattern();
    let grads = net.backward(&cache, &up).unwrap();

    let mut out = Check {
        worst: 0.0,
        worst_tensor: "",
        probes: 0,
        kinked: 0,
    };
    for t in 0..TENSOR_NAMES.len() {
        let len = grads.tensors()[t].len();
        let picks: Vec<usize> = match TENSOR_NAMES[t] {
            // the touched row, plus one entry known to be untouched
            "latent" => (0..4).map(|c| inst * 4 + c).chain([((inst + 1) % 3) * 4]).collect(),
            "source" => ids.iter().map(|&i| i * 3 + r.random_range(0..3)).collect(),
            _ => (0..probes).map(|_| r.random_range(0..len)).collect(),
        };
        for i in picks {
            let orig = net.params().tensors()[t][i];
            net.params_mut().tensors_mut()[t][i] = orig + H;
            let (plus, pp) = objective(&net, inst, &ids, &up);
            net.params_mut().tensors_mut()[t][i] = orig - H;
            let (minus, pm) = objective(&net, inst, &ids, &up);
            net.params_mut().tensors_mut()[t][i] = orig;
            if pp != base || pm != base {
                out.kinked += 1;
                continue;
            }
            out.probes += 1;
            let numeric = (plus - minus) / (2.0 * H);
            let analytic = grads.tensors()[t][i];
            let err = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
            if err > out.worst {
                out.worst = err;
                out.worst_tensor = TENSOR_NAMES[t];
            }
        }
    }
    out
}

#[test]
fn backward_matches_finite_differences() {
    let (mut probes, mut kinked) = (0, 0);
    for seed in 0..20 {
        let c = check(seed, 12);
        assert!(c.worst < TOL, "seed {seed}: {} relative error {:e}", c.worst_tensor, c.worst);
        probes += c.probes;
        kinked += c.kinked;
    }
    // kinks are rare; a flood of them would mean the check tests nothing
    assert!(kinked * 10 < probes, "{kinked} kinked of {probes}");
}
