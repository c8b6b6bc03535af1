//! Acceptance suite. Runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line each; exits non-zero if any criterion fails.
//!
//! Built with `harness = false` so the lines are never captured.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

use shiftlab_core::augment::{
    adjust_brightness, adjust_contrast, adjust_hue, adjust_saturation, color_distort, elastic_deform, gaussian_blur,
    histogram_equalize, random_crop_resize, rotate, rotate_by, AugmentPolicy, BlurParams, ColorParams, CropParams,
    ElasticParams, Image, RotationParams,
};
use shiftlab_core::autodiff::{finite_difference_check, Attrs, Graph, Tensor, Var, OP_NAMES};
use shiftlab_core::config::RunConfig;
use shiftlab_core::contrastive::{interleaved_pairing, nt_xent_loss};
use shiftlab_core::data::generate_task;
use shiftlab_core::models::{Encoder, EncoderConfig, ProjectionHead};
use shiftlab_core::pipeline::{
    checkpoint_steps, run_protocol, select_checkpoint, window_start, CheckpointRecord, RunOptions, SCENARIO_ZERO_SHOT,
};
use shiftlab_core::report::{build_report, load_results, write_results, METRICS_FILE, SUBGROUPS_FILE};
use shiftlab_core::seed::{label_key, rng_for};
use shiftlab_core::stats::{
    cost_savings, format_count, format_dollars_k, matching_fraction, welch_ttest, CostSpec, EfficiencyCurve,
};
use shiftlab_core::Error;

/// Checks accumulated inside one criterion.
#[derive(Default)]
struct Checks {
    failed: Vec<String>,
    notes: Vec<String>,
}

impl Checks {
    fn check(&mut self, ok: bool, what: impl Into<String>) {
        let what = what.into();
        if ok {
            self.notes.push(what);
        } else {
            self.failed.push(what);
        }
    }

    fn within(&mut self, name: &str, got: f64, want: f64, tol: f64) {
        self.check((got - want).abs() < tol, format!("{name} = {got:.6} (want {want} ± {tol:e})"));
    }

    fn runtime(&mut self, start: Instant, limit_secs: f64) {
        let s = start.elapsed().as_secs_f64();
        self.check(s < limit_secs, format!("runtime {s:.2}s (< {limit_secs}s)"));
    }
}

// ---------------------------------------------------------------- 1 and 2

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Double-loop NT-Xent: mean over anchors of
/// `-ln(exp(s(i,j)/τ) / Σ_{k≠i} exp(s(i,k)/τ))`.
fn nt_xent_oracle(z: &[Vec<f64>], pairing: &[usize], tau: f64) -> f64 {
    let n = z.len();
    let mut total = 0.0;
    for i in 0..n {
        let num = (cosine(&z[i], &z[pairing[i]]) / tau).exp();
        let mut den = 0.0;
        for k in 0..n {
            if k != i {
                den += (cosine(&z[i], &z[k]) / tau).exp();
            }
        }
        total += -(num / den).ln();
    }
    total / n as f64
}

fn nt_xent_value(rows: &[Vec<f64>], tau: f64) -> f64 {
    let mut g = Graph::new();
    let z = g.constant(Tensor::new(vec![rows.len(), rows[0].len()], rows.concat()).unwrap());
    let out = nt_xent_loss(&mut g, z, &interleaved_pairing(rows.len() / 2), tau).unwrap();
    g.value(out.loss).item()
}

fn criterion_1(c: &mut Checks) {
    let start = Instant::now();
    let mut rng = rng_for(&[1]);
    let mut worst: f64 = 0.0;
    for batch in 0..100 {
        let n = rng.gen_range(1..=8);
        let tau = [0.1, 0.2, 1.0][batch % 3];
        let dim = rng.gen_range(2..=16);
        let rows: Vec<Vec<f64>> = (0..2 * n).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let got = nt_xent_value(&rows, tau);
        let want = nt_xent_oracle(&rows, &interleaved_pairing(n), tau);
        worst = worst.max((got - want).abs());
    }
    c.check(worst < 1e-9, format!("max |Δ| over 100 batches = {worst:.2e} (< 1e-9)"));
    c.runtime(start, 5.0);
}

fn criterion_2(c: &mut Checks) {
    c.within("N=1", nt_xent_value(&[vec![0.3, 1.2, -0.4], vec![-2.0, 0.1, 0.5]], 0.1), 0.0, 1e-12);
    for tau in [0.1, 0.5, 1.0] {
        let same = vec![vec![0.6, -0.8, 0.2]; 4];
        c.within(&format!("identical N=2 τ={tau}"), nt_xent_value(&same, tau), 3f64.ln(), 1e-9);
    }
    let orth = [vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]];
    c.within("orthogonal pairs τ=1", nt_xent_value(&orth, 1.0), 0.55144, 1e-5);
}

// ---------------------------------------------------------------------- 3

/// Inputs and attrs for one registered op; the first tensor is the point
/// under test, the rest are fixed trainable operands.
fn op_case(op: &str, rng: &mut impl Rng) -> (Vec<Tensor>, Attrs) {
    let mut r = |shape: &[usize]| Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0));
    let mut a = Attrs::default();
    let inputs = match op {
        "matmul" => vec![r(&[2, 4]), r(&[4, 3])],
        "add" | "mul" => vec![r(&[3, 2]), r(&[3, 2])],
        "add_bias" => vec![r(&[2, 3, 2, 2]), r(&[3])],
        "scale" => {
            a.scale = Some(-1.7);
            vec![r(&[4])]
        }
        "relu" => {
            let t = r(&[8]);
            let off: Vec<f64> = t.data().iter().map(|v| if v.abs() < 0.1 { v + 0.3 } else { *v }).collect();
            vec![Tensor::new(vec![8], off).unwrap()]
        }
        "log" => {
            let t = r(&[5]);
            vec![Tensor::new(vec![5], t.data().iter().map(|v| 1.5 + v).collect()).unwrap()]
        }
        "reshape" => {
            a.shape = Some(vec![3, 2]);
            vec![r(&[2, 3])]
        }
        "spatial_mean" => vec![r(&[2, 3, 2, 3])],
        "softmax_cross_entropy" => {
            let raw: Vec<f64> = r(&[3, 4]).data().iter().map(|v| v.abs() + 0.1).collect();
            let targets: Vec<f64> = raw
                .chunks(4)
                .flat_map(|row| {
                    let s: f64 = row.iter().sum();
                    row.iter().map(move |v| v / s)
                })
                .collect();
            a.targets = Some(Tensor::new(vec![3, 4], targets).unwrap());
            vec![r(&[3, 4])]
        }
        "conv2d" => {
            a.stride = Some(2);
            a.pad = Some(1);
            vec![r(&[2, 2, 5, 5]), r(&[3, 2, 3, 3])]
        }
        "group_norm" => {
            a.groups = Some(2);
            let gamma = Tensor::new(vec![4], r(&[4]).data().iter().map(|v| 1.0 + 0.5 * v).collect()).unwrap();
            vec![r(&[2, 4, 3, 3]), gamma, r(&[4])]
        }
        "weight_standardize" => vec![r(&[3, 2, 3, 3])],
        "gather" => {
            a.indices = Some(vec![2, 0, 1, 1, 3, 0]);
            a.k = Some(2);
            vec![r(&[3, 4])]
        }
        "select_rows" => {
            a.indices = Some(vec![2, 0, 2, 1]);
            vec![r(&[3, 3])]
        }
        "concat" => vec![r(&[2, 3]), r(&[1, 3])],
        _ => vec![r(&[3, 4])],
    };
    (inputs, a)
}

fn op_gradients(c: &mut Checks) {
    let mut worst: (f64, &str) = (0.0, "");
    for &op in OP_NAMES {
        for point in 0..10u64 {
            let mut rng = rng_for(&[3, label_key(op), point]);
            let (inputs, attrs) = op_case(op, &mut rng);
            let others = inputs[1..].to_vec();
            let mut out_rng = rng_for(&[4, point]);
            let weights: Vec<f64> = (0..256).map(|_| out_rng.gen_range(-1.0..1.0)).collect();
            let err = finite_difference_check(
                |g: &mut Graph, x: Var| {
                    let mut vars = vec![x];
                    vars.extend(others.iter().map(|t| g.param(t.clone())));
                    let y = g.apply(op, &vars, &attrs)?;
                    // Square then weight every output so each element matters.
                    let sq = g.mul(y, y)?;
                    let shape = g.value(sq).shape().to_vec();
                    let n: usize = shape.iter().product();
                    let w = g.constant(Tensor::new(shape, weights[..n].to_vec())?);
                    let yw = g.mul(y, w)?;
                    let s = g.add(yw, sq)?;
                    g.sum(s)
                },
                &inputs[0],
                1e-5,
            );
            if err > worst.0 {
                worst = (err, op);
            }
        }
    }
    c.check(worst.0 < 1e-3, format!("{} ops × 10 points, max rel err {:.1e} ({})", OP_NAMES.len(), worst.0, worst.1));
}

fn full_graph_loss(enc: &Encoder, head: &ProjectionHead, x: &Tensor) -> f64 {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let eb = enc.params.bind(&mut g, false);
    let hb = head.params.bind(&mut g, false);
    let emb = enc.forward(&mut g, &eb, xv).unwrap();
    let z = head.forward(&mut g, &hb, emb).unwrap();
    let loss = nt_xent_loss(&mut g, z, &interleaved_pairing(2), 0.2).unwrap().loss;
    g.value(loss).item()
}

/// Central differences on sampled encoder and projection parameters.
fn full_graph_gradients(c: &mut Checks) {
    let cfg = EncoderConfig { input_size: 8, in_channels: 1, widths: vec![4, 8], depth: 1, groups: 2, embed_dim: 6 };
    let mut worst: f64 = 0.0;
    for point in 0..10u64 {
        let mut rng = rng_for(&[5, point]);
        let mut enc = Encoder::build(&cfg, &mut rng).unwrap();
        let mut head = ProjectionHead::build(6, 16, 4, &mut rng).unwrap();
        // Random biases; a positive first-layer bias keeps every row alive.
        for (k, lo) in [(1, 0.1), (3, -0.5)] {
            for v in head.params.get_mut(k).value.data_mut() {
                *v = rng.gen_range(lo..0.5);
            }
        }
        let x = Tensor::from_fn(&[4, 1, 8, 8], |_| rng.gen());

        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let eb = enc.params.bind(&mut g, true);
        let hb = head.params.bind(&mut g, true);
        let emb = enc.forward(&mut g, &eb, xv).unwrap();
        let z = head.forward(&mut g, &hb, emb).unwrap();
        let loss = nt_xent_loss(&mut g, z, &interleaved_pairing(2), 0.2).unwrap().loss;
        let grads = g.backward(loss).unwrap();
        let enc_grads = eb.collect(&grads, &enc.params);
        let head_grads = hb.collect(&grads, &head.params);

        let eps = 1e-5;
        for which in 0..2 {
            let count = if which == 0 { enc.params.len() } else { head.params.len() };
            for p in 0..count {
                let analytic = if which == 0 { &enc_grads[p] } else { &head_grads[p] };
                let len = analytic.len();
                for _ in 0..2 {
                    let i = rng.gen_range(0..len);
                    let mut eval = |delta: f64| {
                        let set = if which == 0 { &mut enc.params } else { &mut head.params };
                        set.get_mut(p).value.data_mut()[i] += delta;
                        let l = full_graph_loss(&enc, &head, &x);
                        let set = if which == 0 { &mut enc.params } else { &mut head.params };
                        set.get_mut(p).value.data_mut()[i] -= delta;
                        l
                    };
                    let numeric = (eval(eps) - eval(-eps)) / (2.0 * eps);
                    let a = analytic.data()[i];
                    let denom = a.abs().max(numeric.abs()).max(1e-6);
                    worst = worst.max((a - numeric).abs() / denom);
                }
            }
        }
    }
    c.check(worst < 1e-3, format!("encoder + projection + NT-Xent, 10 points, max rel err {worst:.1e}"));
}

fn criterion_3(c: &mut Checks) {
    let start = Instant::now();
    op_gradients(c);
    full_graph_gradients(c);
    c.runtime(start, 60.0);
}

// ---------------------------------------------------------------------- 4

fn criterion_4(c: &mut Checks) {
    let start = Instant::now();
    let t1 = CostSpec::new("T1", 17_322, 60.0, 172.0, Some(2.86));
    let t4 = CostSpec::new("T4", 17_904, 600.0, 138.0, Some(23.0));
    // Independent arithmetic: hours = images · seconds / 3600.
    c.within("T1 hours", t1.total_hours(), 17_322.0 * 60.0 / 3600.0, 1e-9);
    c.check(format_count(t1.total_hours()) == "289", format!("T1 hours shown {}", format_count(t1.total_hours())));
    c.check(format_dollars_k(t1.total_dollars()) == "$49K", format!("T1 total {}", format_dollars_k(t1.total_dollars())));
    let saved = cost_savings(&t1, 0.332).unwrap();
    c.check(format_count(saved.hours_saved) == "193", format!("T1 hours saved at 33.2% {:.2}", saved.hours_saved));
    c.check(
        format_dollars_k(saved.dollars_saved) == "$33K",
        format!("T1 saved at 33.2% {}", format_dollars_k(saved.dollars_saved)),
    );
    c.check(format_count(t4.total_hours()) == "2,984", format!("T4 hours shown {}", format_count(t4.total_hours())));
    c.check(format_dollars_k(t4.total_dollars()) == "$411K", format!("T4 total {}", format_dollars_k(t4.total_dollars())));
    c.runtime(start, 1.0);
}

// ---------------------------------------------------------------------- 5

fn criterion_5(c: &mut Checks) {
    let curve = EfficiencyCurve::from_means(&[(0.0, 0.763), (0.1, 0.824), (0.2, 0.836), (0.5, 0.853), (1.0, 0.864)])
        .unwrap();
    match matching_fraction(&curve, 0.844).fraction() {
        Some(f) => {
            let pct = 100.0 * f;
            c.within("matching fraction %", pct, 34.1, 1.0);
            c.check(25.7 < pct && pct < 39.3, format!("{pct:.2}% inside (25.7%, 39.3%)"));
        }
        None => c.check(false, "target not attained"),
    }
}

// ---------------------------------------------------------------------- 6

fn criterion_6(c: &mut Checks) {
    let a = [1.0, 2.0, 3.0, 4.0, 5.0];
    let b = [2.0, 4.0, 6.0, 8.0, 10.0];
    let w = welch_ttest(&a, &b).unwrap();
    c.within("t", w.t, -1.8974, 1e-3);
    c.within("dof", w.dof, 5.882, 1e-3);
    let reference = 2.0 * StudentsT::new(0.0, 1.0, w.dof).unwrap().cdf(-w.t.abs());
    c.within("p vs independent Student-t", w.p, reference, 1e-9);
    c.within("p", w.p, 0.1069, 1e-4);
}

// ------------------------------------------------------------------ 7 and 9

fn acceptance_config() -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/acceptance.toml");
    let cfg = RunConfig::load(&path).unwrap();
    cfg.validate().unwrap();
    cfg
}

fn run_once(cfg: &RunConfig, workers: usize, dir: &Path) -> Vec<String> {
    let d = &cfg.data;
    let bundle = generate_task(cfg.seed, &d.base, &d.shift, d.secondary_shift.as_ref()).unwrap();
    let opts = RunOptions { workers: Some(workers), checkpoint_dir: None };
    let result = run_protocol(&cfg.protocol, &bundle, cfg.seed, &opts).unwrap();
    write_results(dir, &result, Some(cfg)).unwrap();
    result.failures.iter().map(|f| format!("{f:?}")).collect()
}

fn criterion_7(c: &mut Checks, run: &Path) {
    let cfg = acceptance_config();
    let start = Instant::now();
    let failures = run_once(&cfg, 4, run);
    let secs = start.elapsed().as_secs_f64();
    c.check(failures.is_empty(), format!("{} failed cells", failures.len()));

    let results = load_results(run).unwrap();
    let report = build_report(&results, &cfg.report, &cfg.costs).unwrap();
    c.check(report.is_complete(), format!("{} missing cells", report.missing.len()));
    let reps = cfg.protocol.repeats;
    c.check(reps == 10, format!("{reps} repeats"));

    match report.welch.iter().find(|w| w.scenario == SCENARIO_ZERO_SHOT && w.baseline == "supervised") {
        Some(w) => {
            c.check(
                w.reference_mean > w.baseline_mean,
                format!("zero-shot {:.4} > supervised {:.4}", w.reference_mean, w.baseline_mean),
            );
            c.check(w.p < 0.05, format!("Welch p = {:.4} (< 0.05)", w.p));
        }
        None => c.check(false, "no zero-shot Welch row"),
    }
    match report.matching.iter().find(|m| m.baseline == "supervised") {
        Some(m) => c.check(
            m.fraction.is_some_and(|f| f <= 0.5),
            format!("matching fraction {:?} vs target {:.4} (<= 0.5)", m.fraction, m.target),
        ),
        None => c.check(false, "no matching row"),
    }
    c.check(secs < 900.0, format!("runtime {secs:.1}s on {} core(s) (< 900s)", available_cores()));
}

fn available_cores() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn criterion_9(c: &mut Checks, first: &Path, second: &Path) {
    let cfg = acceptance_config();
    run_once(&cfg, 1, second);
    for file in [METRICS_FILE, SUBGROUPS_FILE] {
        let a = std::fs::read(first.join(file)).unwrap();
        let b = std::fs::read(second.join(file)).unwrap();
        c.check(a == b && !a.is_empty(), format!("{file} byte-identical at --workers 4 and 1 ({} bytes)", a.len()));
    }
}

// ---------------------------------------------------------------------- 8

fn rec(step: u64, loss: f64) -> CheckpointRecord {
    CheckpointRecord { step, loss, params_hash: format!("{step}") }
}

fn criterion_8(c: &mut Checks) {
    c.check(window_start(10_000) == 9_990, format!("window start {}", window_start(10_000)));
    c.check(window_start(1) == 1 && window_start(1_000) == 999, "window start for M = 1 and 1000");
    let steps = checkpoint_steps(12, 5).unwrap();
    c.check(steps == vec![0, 5, 10, 12], format!("steps {steps:?}"));

    let history = [rec(9_980, 0.1), rec(9_990, 0.52), rec(9_995, 0.48), rec(10_000, 0.50)];
    let pick = select_checkpoint(&history, 10_000).unwrap().step;
    c.check(pick == 9_995, format!("minimum in window -> {pick}"));
    let tie = [rec(9_990, 0.5), rec(9_995, 0.7), rec(10_000, 0.5)];
    let pick = select_checkpoint(&tie, 10_000).unwrap().step;
    c.check(pick == 9_990, format!("tie -> earliest {pick}"));
    let pick = select_checkpoint(&history[3..], 10_000).unwrap().step;
    c.check(pick == 10_000, "final checkpoint only");
    let empty = [rec(0, 1.0), rec(9_000, 0.2)];
    c.check(
        matches!(select_checkpoint(&empty, 10_000), Err(Error::EmptyWindow { start: 9_990, end: 10_000 })),
        "empty window -> EmptyWindow(9990, 10000)",
    );
    c.check(select_checkpoint(&[], 5).is_err(), "no checkpoints -> error");
    c.check(select_checkpoint(&[rec(10, 1.0), rec(5, 0.5)], 10).is_err(), "unordered steps -> error");
    c.check(select_checkpoint(&[rec(10, f64::NAN)], 10).is_err(), "NaN loss -> error");
    c.check(checkpoint_steps(10, 0).is_err(), "zero interval -> error");
}

// --------------------------------------------------------------------- 10

fn noise(h: usize, w: usize, ch: usize, key: u64) -> Image {
    let mut rng = rng_for(&[10, key]);
    Image::from_fn(h, w, ch, |_, _, _| rng.gen()).unwrap()
}

fn criterion_10(c: &mut Checks) {
    let img = noise(9, 7, 3, 1);
    let gray = noise(9, 7, 1, 2);
    let constant = Image::filled(8, 8, 3, 0.37).unwrap();
    let mut rng = rng_for(&[10]);

    let neutral = [
        ("full-window crop", random_crop_resize(&img, &mut rng, [1.0, 1.0], [1.0, 1.0], [9, 7]).unwrap() == img),
        ("color strength 0", color_distort(&img, &mut rng, 0.0) == img),
        ("brightness 0", adjust_brightness(&img, 0.0) == img),
        ("contrast 1", adjust_contrast(&img, 1.0) == img),
        ("saturation 1", adjust_saturation(&img, 1.0) == img),
        ("hue 0", adjust_hue(&img, 0.0) == img),
        ("saturation on gray", adjust_saturation(&gray, 0.3) == gray),
        ("hue on gray", adjust_hue(&gray, 0.3) == gray),
        ("rotation 0", rotate_by(&img, 0.0) == img),
        ("rotation 360", rotate_by(&img, 360.0) == img),
        ("rotation range [0, 0]", rotate(&img, &mut rng, [0.0, 0.0]) == img),
        ("blur probability 0", gaussian_blur(&img, &mut rng, [0.1, 2.0], 0.5, 0.0).unwrap() == img),
        ("elastic alpha 0", elastic_deform(&img, &mut rng, 0.0, 2.0).unwrap() == img),
        ("empty policy", AugmentPolicy::default().apply(&img, &mut rng).unwrap() == img),
    ];
    let neutral_policy = AugmentPolicy {
        crop: Some(CropParams { area_range: [1.0, 1.0], aspect_range: [1.0, 1.0], flip_probability: 0.0 }),
        color: Some(ColorParams { strength: 0.0 }),
        rotation: Some(RotationParams { range_degrees: [0.0, 0.0] }),
        blur: Some(BlurParams { probability: 0.0, ..Default::default() }),
        equalize: false,
        elastic: Some(ElasticParams { alpha: 0.0, sigma: 1.0 }),
        out_size: None,
    };
    let policy_ok = (0..20).all(|s| neutral_policy.apply(&img, &mut rng_for(&[11, s])).unwrap() == img);

    let constants = [
        ("blur", (0..5).all(|_| gaussian_blur(&constant, &mut rng, [0.1, 2.0], 0.5, 1.0).unwrap() == constant)),
        ("equalize", histogram_equalize(&constant) == constant),
        ("elastic", elastic_deform(&constant, &mut rng, 5.0, 2.0).unwrap() == constant),
        ("saturation", adjust_saturation(&constant, 0.2) == constant),
        ("hue", adjust_hue(&constant, 0.4) == constant),
    ];

    for (name, ok) in neutral {
        c.check(ok, format!("neutral {name}"));
    }
    c.check(policy_ok, "neutral full policy, 20 seeds");
    for (name, ok) in constants {
        c.check(ok, format!("constant image under {name}"));
    }
}

// --------------------------------------------------------------------- main

fn run(id: u32, title: &str, f: impl FnOnce(&mut Checks)) -> bool {
    let mut checks = Checks::default();
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(|| f(&mut checks)));
    if outcome.is_err() {
        checks.failed.push("panicked".into());
    }
    let pass = checks.failed.is_empty();
    let detail = if pass { checks.notes.join("; ") } else { checks.failed.join("; ") };
    println!(
        "criterion {id:>2} {:<4} {title} [{:.1}s]: {detail}",
        if pass { "PASS" } else { "FAIL" },
        start.elapsed().as_secs_f64()
    );
    pass
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        return;
    }
    let runs = tempfile::tempdir().unwrap();
    let (first, second) = (runs.path().join("workers-4"), runs.path().join("workers-1"));

    let results = [
        run(1, "NT-Xent matches double-loop oracle", criterion_1),
        run(2, "analytic NT-Xent values", criterion_2),
        run(3, "gradient checks", criterion_3),
        run(4, "cost model reproduces published rows", criterion_4),
        run(5, "matching-fraction fixture", criterion_5),
        run(6, "Welch t-test fixture", criterion_6),
        run(7, "desk-scale protocol", |c| criterion_7(c, &first)),
        run(8, "checkpoint selection", criterion_8),
        run(9, "determinism across worker counts", |c| criterion_9(c, &first, &second)),
        run(10, "augmentation identities", criterion_10),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria pass", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
