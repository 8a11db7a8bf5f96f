//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero if any fail.

use std::path::Path;
use std::time::Instant;

use kinface::augment::{apply_affine, augment_family, mixup_parents, AffineKind, AffineOp, AugmentConfig, AugmentMode};
use kinface::codec::{Codec, Latent, ToyLinearCodec, LATENT_LEN};
use kinface::eval::cosine_distance;
use kinface::imaging::{colorize_labels, decode_labels, shift_hue, shift_saturation, HsvPlane, ImagePlane, LabelMap, Palette, NUM_CLASSES};
use kinface::numerics::gradcheck::{run_suite, SuiteConfig};
use kinface::numerics::SeededRng;
use kinface::pipeline::MetricsHistory;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn random_image(h: usize, w: usize, rng: &mut SeededRng) -> ImagePlane {
    ImagePlane::from_fn(h, w, |_, _| [0; 3].map(|_| rng.uniform_in(0.0, 255.0))).unwrap()
}

fn bits(img: &ImagePlane) -> Vec<u64> {
    img.data().iter().map(|v| v.to_bits()).collect()
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let entries = run_suite(&SuiteConfig::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let small = entries.iter().filter(|e| e.label.starts_with("small")).count();
    let full = entries.len() - small;
    let worst = entries.iter().map(|e| e.report.max_rel_err).fold(0.0, f64::max);
    outcome(
        small == 10 && full == 2 && worst < 1e-5 && secs < 60.0,
        format!("{small} small + {full} full instances, max_rel_err={worst:.3e} (< 1e-5), {secs:.1} s (< 60 s)"),
    )
}

fn cli(args: &[&str]) -> i32 {
    let mut all = vec!["kinface"];
    all.extend_from_slice(args);
    kinface_cli::run(all)
}

const RUN_CONFIG: &str = r#"
seed = 0
out_dir = "data"
manifest = "data/manifest.json"

[synth]
families = 64
size = 64

[train]
batch_size = 16
epochs = 200
lr = 0.003
train_fraction = 0.8

[codec]
type = "toy"
seed = 0
working_resolution = 32
"#;

struct Runs {
    learning: Outcome,
    determinism: Outcome,
}

fn train_and_eval(config: &str, root: &Path, name: &str) -> (i32, f64) {
    let dir = root.join(name);
    let dir = dir.to_str().unwrap();
    let start = Instant::now();
    let code = cli(&["--config", config, "--out-dir", dir, "train"]);
    let secs = start.elapsed().as_secs_f64();
    if code != 0 {
        return (code, secs);
    }
    let ckpt = format!("{dir}/checkpoint.bin");
    (cli(&["--config", config, "--out-dir", dir, "eval", "--checkpoint", &ckpt]), secs)
}

fn learning_and_determinism() -> Runs {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let config = root.join("run.toml");
    std::fs::write(&config, RUN_CONFIG).unwrap();
    let config = config.to_str().unwrap();
    assert_eq!(cli(&["--config", config, "synth"]), 0, "synth failed");

    let (code_a, secs) = train_and_eval(config, root, "a");
    let learning = if code_a != 0 {
        outcome(false, format!("train/eval exited with {code_a}"))
    } else {
        let h: MetricsHistory = serde_json::from_slice(&std::fs::read(root.join("a/metrics.json")).unwrap()).unwrap();
        let final_val = h.epochs.last().and_then(|e| e.val_mse).unwrap();
        let zero = h.zero_predictor_val_mse.unwrap();
        let ratio = final_val / zero;
        outcome(
            h.epochs.len() == 200 && ratio < 0.05 && secs < 120.0,
            format!("final val_mse={final_val:.4e}, zero-predictor={zero:.4e}, ratio={ratio:.4} (< 0.05), train {secs:.1} s (< 120 s)"),
        )
    };

    let (code_b, _) = train_and_eval(config, root, "b");
    let files = ["checkpoint.bin", "metrics.csv", "metrics.json", "report.csv", "report.json"];
    let determinism = if code_a != 0 || code_b != 0 {
        outcome(false, format!("runs exited with {code_a} and {code_b}"))
    } else {
        let differing: Vec<&str> = files
            .iter()
            .copied()
            .filter(|f| std::fs::read(root.join("a").join(f)).unwrap() != std::fs::read(root.join("b").join(f)).unwrap())
            .collect();
        outcome(
            differing.is_empty(),
            if differing.is_empty() {
                format!("{} artifacts byte-identical across two train+eval runs", files.len())
            } else {
                format!("differing artifacts: {differing:?}")
            },
        )
    };
    Runs { learning, determinism }
}

fn augmentation_invariants() -> Outcome {
    let mut failures = Vec::new();
    let mut rng = SeededRng::new(42);

    // Children pass through every configuration untouched.
    for i in 0..100u64 {
        let mut r = SeededRng::new(1000 + i);
        let cfg = AugmentConfig {
            p_apply: [0.0, 0.5, 1.0][r.below(3)],
            mode: [AugmentMode::None, AugmentMode::Mixup, AugmentMode::Augmix][r.below(3)],
            chain_length: 1 + r.below(3),
            jitter: r.below(2) == 1,
            ..Default::default()
        };
        let (f, m, c) = (random_image(9, 7, &mut r), random_image(9, 7, &mut r), random_image(9, 7, &mut r));
        let expected = bits(&c);
        let out = augment_family(f, m, c, &cfg, &mut r, true).unwrap();
        if bits(&out.child) != expected {
            failures.push(format!("child changed under config {i}"));
        }
    }

    let f = random_image(6, 5, &mut rng);
    let m = random_image(6, 5, &mut rng);
    let (f1, m1) = mixup_parents(&f, &m, 1.0, 1.0).unwrap();
    if f1 != f || m1 != m {
        failures.push("mixup alpha=beta=1 is not the identity".into());
    }
    let (f0, m0) = mixup_parents(&f, &m, 0.0, 0.0).unwrap();
    if f0 != m || m0 != f {
        failures.push("mixup alpha=beta=0 does not swap parents".into());
    }
    let (fh, mh) = mixup_parents(&f, &m, 0.5, 0.5).unwrap();
    let mid: Vec<f64> = f.data().iter().zip(m.data()).map(|(a, b)| 0.5 * a + 0.5 * b).collect();
    if fh.data() != &mid[..] || mh.data() != &mid[..] {
        failures.push("mixup at 0.5 is not the midpoint".into());
    }
    for (a, b) in [(0.3, 0.8), (0.9, 0.1)] {
        let (fa, mb) = mixup_parents(&f, &m, a, b).unwrap();
        let inside = |img: &ImagePlane| {
            img.data().iter().zip(f.data().iter().zip(m.data())).all(|(&v, (&x, &y))| x.min(y) <= v && v <= x.max(y))
        };
        if !inside(&fa) || !inside(&mb) {
            failures.push(format!("mixup ({a}, {b}) leaves the convex hull"));
        }
    }

    let img = random_image(8, 11, &mut rng);
    let flip = AffineOp {
        kind: AffineKind::Hflip,
        magnitude: 0.0,
    };
    if bits(&apply_affine(&apply_affine(&img, flip), flip)) != bits(&img) {
        failures.push("double hflip is not the identity".into());
    }
    for kind in AffineKind::ALL.into_iter().filter(|k| *k != AffineKind::Hflip) {
        if bits(&apply_affine(&img, AffineOp { kind, magnitude: 0.0 })) != bits(&img) {
            failures.push(format!("zero-magnitude {} is not the identity", kind.name()));
        }
    }

    let plane = |h: f64, s: f64| HsvPlane {
        height: 1,
        width: 1,
        h: vec![h],
        s: vec![s],
        v: vec![100.0],
    };
    for (h, x, want) in [(178.0, 5.0, 3.0), (2.0, -5.0, 177.0)] {
        let got = shift_hue(&plane(h, 0.0), x, true).unwrap().h[0];
        if got != want {
            failures.push(format!("hue {h}{x:+} gave {got}, expected {want}"));
        }
    }
    for (s, y, want) in [(253.0, 5.0, 255.0), (3.0, -5.0, 0.0)] {
        let got = shift_saturation(&plane(0.0, s), y, true).unwrap().s[0];
        if got != want {
            failures.push(format!("saturation {s}{y:+} gave {got}, expected {want}"));
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            "100 child-invariance configs, mixup endpoints/midpoint/convexity, flip and zero-magnitude identities, hue wrap and saturation clamp all exact".into()
        } else {
            failures.join("; ")
        },
    )
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    acc.iter().sum::<f64>() + ra.iter().zip(rb).map(|(x, y)| x * y).sum::<f64>()
}

fn codec_round_trip() -> Outcome {
    let codec = ToyLinearCodec::cached(0, 32).unwrap();
    let n = codec.active_len();
    let mut worst_round: f64 = 0.0;
    for i in 0..100 {
        let mut r = SeededRng::new(i);
        let mut z = vec![0.0; LATENT_LEN];
        for v in &mut z[..n] {
            *v = r.normal();
        }
        let z = Latent::from_vec(z).unwrap();
        let back = codec.embed_float(&codec.generate_float(&z).unwrap()).unwrap();
        let err = back.data().iter().zip(z.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst_round = worst_round.max(err);
    }
    let b = codec.basis();
    let mut worst_gram: f64 = 0.0;
    for i in 0..n {
        let ri = &b[i * n..(i + 1) * n];
        for j in i..n {
            let g = dot(ri, &b[j * n..(j + 1) * n]);
            worst_gram = worst_gram.max((g - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    outcome(
        worst_round < 1e-9 && worst_gram < 1e-10,
        format!("100 latents max-abs={worst_round:.3e} (< 1e-9); {n}x{n} basis |BBᵀ−I|max={worst_gram:.3e} (< 1e-10)"),
    )
}

fn metric_identities() -> Outcome {
    let mut rng = SeededRng::new(7);
    let u: Vec<f64> = (0..300).map(|_| rng.normal()).collect();
    let neg: Vec<f64> = u.iter().map(|x| -x).collect();
    let self_d = cosine_distance(&u, &u).unwrap();
    let neg_d = cosine_distance(&u, &neg).unwrap();
    let orth_d = cosine_distance(&[3.0, 0.0, 1.0, 0.0], &[0.0, 2.0, 0.0, -5.0]).unwrap();
    let mut worst_scale: f64 = 0.0;
    for _ in 0..20 {
        let a = random_image(12, 12, &mut rng);
        let b = random_image(12, 12, &mut rng);
        let c = rng.uniform_in(0.01, 10.0);
        let scaled: Vec<f64> = a.data().iter().map(|v| c * v).collect();
        let d0 = cosine_distance(a.data(), b.data()).unwrap();
        let d1 = cosine_distance(&scaled, b.data()).unwrap();
        worst_scale = worst_scale.max((d0 - d1).abs());
    }
    let ok = self_d.abs() < 1e-12 && (neg_d - 2.0).abs() < 1e-12 && (orth_d - 1.0).abs() < 1e-12 && worst_scale < 1e-12;
    outcome(
        ok,
        format!("self={self_d:.1e}, negation={neg_d}, orthogonal={orth_d}, 20-pair scale drift={worst_scale:.1e} (all within 1e-12)"),
    )
}

fn colorize_bijection() -> Outcome {
    let palette = Palette::default();
    let mut rng = SeededRng::new(11);
    let mut failures = 0;
    let mut maps = 0;
    for (h, w) in [(1, 11), (7, 9), (32, 32), (64, 48)] {
        for _ in 0..5 {
            let mut ids: Vec<u8> = (0..h * w).map(|_| rng.below(NUM_CLASSES) as u8).collect();
            // Every class appears in every map.
            for (k, id) in ids.iter_mut().take(NUM_CLASSES).enumerate() {
                *id = k as u8;
            }
            let map = LabelMap::new(h, w, ids).unwrap();
            let (back, mismatches) = decode_labels(&colorize_labels(&map, &palette), &palette, true).unwrap();
            if back != map || mismatches != 0 {
                failures += 1;
            }
            maps += 1;
        }
    }
    outcome(failures == 0, format!("{maps} random maps covering all {NUM_CLASSES} classes, {failures} mismatches"))
}

fn main() {
    let runs = learning_and_determinism();
    let results = [
        ("gradient-correctness", gradient_correctness()),
        ("synthetic-task-learning", runs.learning),
        ("augmentation-invariants", augmentation_invariants()),
        ("codec-round-trip", codec_round_trip()),
        ("metric-identities", metric_identities()),
        ("determinism", runs.determinism),
        ("colorize-decode-bijection", colorize_bijection()),
    ];
    let mut all = true;
    for (name, o) in &results {
        all &= o.passed;
        println!("{} {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
    }
    if !all {
        std::process::exit(1);
    }
}
