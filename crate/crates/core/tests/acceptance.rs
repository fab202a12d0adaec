//! Acceptance gate. Runs without the libtest harness so the PASS/FAIL line of
//! every criterion is always printed; exits nonzero if any criterion fails.

use std::time::{Duration, Instant};

use rayon::prelude::*;

use spml::adapters::{
    self, code_under_threshold, to_framework, AdaptiveThresholds, EpochLoss, LabelCode, MethodId, SplcParams,
};
use spml::data::{generate_splits, SyntheticSpec};
use spml::eval;
use spml::gr_loss::{
    self, grad_unannotated_wrt_logit, robust_pos_loss, schedule_value, unannotated_loss, EpochParams,
    PseudoLabelParams, RobustParams, ScheduleSpec, WeightParams,
};
use spml::gradcheck::{central_difference, relative_error};
use spml::numerics::{stable_sigmoid, DenseMatrix, RngStream};
use spml::trainer::{
    self, batch_objective, freeze_batch, loss_and_gradients, Architecture, GrConfig, LossConfig, ModelParams,
    OptimizerConfig, OptimizerKind, ResolvedLoss, RunConfig, TrainerConfig,
};

/// Test-mAP lead of GR over AN required on the benchmark. Set from an oracle
/// run on dataset/training seeds 100..=104 (observed lead 0.0138), rounded down.
const TEST_MAP_MARGIN: f64 = 0.01;
const BENCHMARK_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn p_grid() -> Vec<f64> {
    (0..50).map(|i| 0.01 + 0.02 * f64::from(i)).collect()
}

// 1 ---------------------------------------------------------------------------

fn gradient_oracle_grid() -> Outcome {
    let start = Instant::now();
    let qs = [0.01, 0.5, 1.0, 1.5];
    let khats = [0.0, 0.3, 0.7, 1.0];
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    for p in p_grid() {
        let z0 = (p / (1.0 - p)).ln();
        for &q2 in &qs {
            for &q3 in &qs {
                for &kh in &khats {
                    let f = |z: f64| unannotated_loss(stable_sigmoid(z), kh, q2, q3).unwrap();
                    let fd = central_difference(f, z0, 1e-6);
                    let an = grad_unannotated_wrt_logit(stable_sigmoid(z0), kh, q2, q3);
                    worst = worst.max(relative_error(an, fd));
                    checked += 1;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    check(
        worst <= 1e-5 && elapsed < Duration::from_secs(5),
        format!("{checked} grid points, worst rel err {worst:.2e}, {:.3}s", elapsed.as_secs_f64()),
    )
}

// 2 ---------------------------------------------------------------------------

fn closed_form_gradients() -> Outcome {
    let mut worst_hill: f64 = 0.0;
    let mut worst_em: f64 = 0.0;
    for i in 1..=99 {
        let p = f64::from(i) / 100.0;
        let z = (p / (1.0 - p)).ln();
        let hill = EpochLoss::Hill { lambda: 1.5 }.grad(z, LabelCode::Missing);
        worst_hill = worst_hill.max((hill - 3.0 * p * p * (1.0 - p) * (1.0 - p)).abs());
        // unit weight isolates the entropy term
        let em = EpochLoss::Em { alpha: 1.0 }.grad(z, LabelCode::Missing);
        worst_em = worst_em.max((em - (p / (1.0 - p)).ln() * p * (1.0 - p)).abs());
    }
    check(
        worst_hill <= 1e-8 && worst_em <= 1e-8,
        format!("Hill max abs err {worst_hill:.2e}, EM max abs err {worst_em:.2e}"),
    )
}

// 3 ---------------------------------------------------------------------------

/// Direct per-label loss, written from each method's own definition.
fn direct_loss(loss: &EpochLoss, z: f64, s: bool, tau1: f64) -> f64 {
    let p = stable_sigmoid(z);
    match *loss {
        EpochLoss::An => adapters::an_loss(p, s),
        EpochLoss::AnLs { epsilon } => adapters::an_ls_loss(p, s, epsilon),
        EpochLoss::Focal { gamma } => adapters::focal_loss(p, s, gamma),
        EpochLoss::En => adapters::en_loss(p, code_under_threshold(MethodId::En, p, s, tau1)),
        EpochLoss::Em { alpha } => adapters::em_loss(p, s, alpha),
        EpochLoss::EmApl { alpha, beta } => {
            adapters::em_apl_loss(p, code_under_threshold(MethodId::EmApl, p, s, tau1), alpha, beta, p)
        }
        EpochLoss::Hill { lambda } => {
            if s {
                adapters::an_loss(p, true)
            } else {
                adapters::hill_neg_loss(p, lambda)
            }
        }
        EpochLoss::Splc { params, epoch } => adapters::splc_loss(z, s, &params, epoch),
        EpochLoss::Gr(params) => gr_loss::per_label_loss(p, s, &params).unwrap(),
    }
}

fn random_loss(method: MethodId, rng: &mut RngStream) -> EpochLoss {
    match method {
        MethodId::An => EpochLoss::An,
        MethodId::AnLs => EpochLoss::AnLs { epsilon: rng.uniform_range(0.0, 0.45) },
        MethodId::Focal => EpochLoss::Focal { gamma: rng.uniform_range(0.0, 4.0) },
        MethodId::En => EpochLoss::En,
        MethodId::Em => EpochLoss::Em { alpha: rng.uniform_range(0.01, 1.0) },
        MethodId::EmApl => EpochLoss::EmApl { alpha: rng.uniform_range(0.01, 1.0), beta: rng.uniform_range(0.01, 2.0) },
        MethodId::Hill => EpochLoss::Hill { lambda: rng.uniform_range(1.0, 2.0) },
        MethodId::Splc => EpochLoss::Splc {
            params: SplcParams {
                tau: rng.uniform_range(0.3, 0.9),
                margin: rng.uniform_range(0.0, 2.0),
                gamma: rng.uniform_range(0.0, 3.0),
                lambda: 1.5,
                start_epoch: 1,
            },
            epoch: rng.below(3) as u32,
        },
        MethodId::Gr => EpochLoss::Gr(EpochParams {
            pseudo: Some(PseudoLabelParams::new(rng.uniform_range(0.0, 10.0), rng.uniform_range(-8.0, 0.0)).unwrap()),
            weight: Some(WeightParams::new(rng.uniform(), rng.uniform_range(0.1, 2.0)).unwrap()),
            robust: RobustParams::new(
                rng.uniform_range(0.01, 2.0),
                rng.uniform_range(0.01, 2.0),
                rng.uniform_range(0.01, 2.0),
            )
            .unwrap(),
        }),
    }
}

fn adapter_equivalence() -> Outcome {
    let mut rng = RngStream::new(2024, 3);
    let mut lines = Vec::new();
    let mut ok = true;
    for method in MethodId::ALL {
        let mut worst: f64 = 0.0;
        for _ in 0..10_000 {
            let loss = random_loss(method, &mut rng);
            let tau1 = rng.uniform_range(0.05, 0.95);
            let th = AdaptiveThresholds::single(tau1).unwrap();
            let z = rng.uniform_range(-8.0, 8.0);
            let s = rng.uniform() < 0.3;
            let framed = to_framework(&loss, &th).per_label_loss(stable_sigmoid(z), s).unwrap();
            let direct = direct_loss(&loss, z, s, tau1);
            worst = worst.max((framed - direct).abs());
        }
        ok &= worst <= 1e-12;
        lines.push(format!("{method} {worst:.1e}"));
    }
    check(ok, format!("max abs diff per method over 10^4 inputs: {}", lines.join(", ")))
}

// 4 ---------------------------------------------------------------------------

fn limit_behaviors() -> Outcome {
    let mut worst_bce: f64 = 0.0;
    for i in 0..=940 {
        let p = 0.05 + f64::from(i) * 0.001;
        worst_bce = worst_bce.max((robust_pos_loss(p, 1e-4).unwrap() + p.ln()).abs());
    }
    let mut worst_step: f64 = 0.0;
    for tau in [0.2, 0.5, 0.75] {
        let w = 1e4;
        let beta = PseudoLabelParams::new(w, -tau * w).unwrap();
        for i in 0..=1000 {
            let p = f64::from(i) / 1000.0;
            if (p - tau).abs() < 0.05 {
                continue;
            }
            let step = if p > tau { 1.0 } else { 0.0 };
            worst_step = worst_step.max((gr_loss::k_hat(p, &beta) - step).abs());
        }
    }
    check(
        worst_bce <= 1e-3 && worst_step <= 1e-8,
        format!("robust loss vs -ln p {worst_bce:.2e}, hard pseudo-label vs step {worst_step:.2e}"),
    )
}

// 5 ---------------------------------------------------------------------------

fn schedule_exactness() -> Outcome {
    // dyadic anchors keep every intermediate exactly representable
    let mut rng = RngStream::new(5, 5);
    let mut failures = 0;
    for _ in 0..2000 {
        let a = rng.below(2001) as i64 - 1000;
        let b = rng.below(2001) as i64 - 1000;
        let (start, end) = (a as f64 / 64.0, b as f64 / 64.0);
        let horizon = 2 * (1 + rng.below(50) as u32);
        let s = ScheduleSpec::new(start, end, horizon);
        let v0 = schedule_value(&s, 0).unwrap();
        let vt = schedule_value(&s, horizon).unwrap();
        let mid = schedule_value(&s, horizon / 2).unwrap();
        if v0.to_bits() != start.to_bits() || vt.to_bits() != end.to_bits() {
            failures += 1;
        }
        // exact integer arithmetic: mid·128 = a + b
        if mid * 128.0 != (a + b) as f64 {
            failures += 1;
        }
    }
    check(failures == 0, format!("{failures} mismatches over 2000 random schedules"))
}

// 6 ---------------------------------------------------------------------------

fn end_to_end_gradients() -> Outcome {
    let start = Instant::now();
    let mut rng = RngStream::new(606, 0);
    let (n, d, h, c) = (5, 4, 3, 2);
    let x = DenseMatrix::from_vec(n, d, (0..n * d).map(|_| rng.standard_normal()).collect()).unwrap();
    let codes: Vec<LabelCode> = (0..n * c)
        .map(|_| match rng.below(3) {
            0 => LabelCode::Positive,
            1 => LabelCode::Missing,
            _ => LabelCode::Negative,
        })
        .collect();
    let mut lines = Vec::new();
    let mut ok = true;
    for method in MethodId::ALL {
        let mut cfg = LossConfig::new(method);
        cfg.splc.tau = 0.5;
        let resolved = ResolvedLoss { gr: Some(cfg.gr.resolve(0.3, 4).unwrap()), config: cfg };
        let loss = resolved.at_epoch(2).unwrap();
        let model = ModelParams::init(Architecture::Mlp { hidden: h }, d, c, 1.0, &mut rng);
        let frozen = freeze_batch(&loss, &model.forward(&x).unwrap().probs, &codes).unwrap();
        let (_, grads) = loss_and_gradients(&model, &loss, &x, &codes).unwrap();
        let flat = model.flat();
        let mut worst: f64 = 0.0;
        for (k, &g) in grads.flat().iter().enumerate() {
            let f = |v: f64| {
                let mut params = flat.clone();
                params[k] = v;
                let mut m = model.clone();
                m.set_flat(&params).unwrap();
                batch_objective(&loss, &m.forward(&x).unwrap().logits, &codes, &frozen)
            };
            let fd = central_difference(f, flat[k], 1e-5);
            // gradients that vanish are compared absolutely
            let err = if g.abs().max(fd.abs()) < 1e-9 { 0.0 } else { relative_error(g, fd) };
            worst = worst.max(err);
        }
        ok &= worst <= 1e-4;
        lines.push(format!("{method} {worst:.1e}"));
    }
    let elapsed = start.elapsed();
    check(
        ok && elapsed < Duration::from_secs(30),
        format!("worst rel err per method: {}; {:.3}s", lines.join(", "), elapsed.as_secs_f64()),
    )
}

// 7-9 -------------------------------------------------------------------------

fn benchmark_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec { n: 2000, c: 10, d: 20, weight_scale: 2.0, positive_rate: 0.2, label_noise: 1.0, seed }
}

fn benchmark_config(method: MethodId) -> RunConfig {
    let mut loss = LossConfig::new(method);
    loss.gr = GrConfig { w_t: 10.0, b_t: -8.0, ..GrConfig::default() };
    RunConfig {
        trainer: TrainerConfig {
            architecture: Architecture::Linear,
            optimizer: OptimizerConfig { kind: OptimizerKind::Adam, lr: 0.01, momentum: 0.0 },
            batch_size: 32,
            epochs: 60,
            init_scale: 0.01,
        },
        loss,
    }
}

struct SeedResult {
    best_val_map: f64,
    test_map: f64,
    w1: f64,
    final_spearman: Option<f64>,
    initial_cv: Option<f64>,
}

struct Benchmark {
    an: Vec<SeedResult>,
    gr: Vec<SeedResult>,
}

fn run_seed(method: MethodId, seed: u64) -> SeedResult {
    let splits = generate_splits(&benchmark_spec(seed), 500, 500).unwrap();
    let run = trainer::train(&benchmark_config(method), &splits.train, &splits.val, seed).unwrap();
    let train = &splits.train;
    let a = train.scar_rate.unwrap();
    let test_map = eval::mean_average_precision(&run.best_model.predict(&splits.test.features).unwrap(), &splits.test.truth)
        .unwrap()
        .map;
    let best = run.best_model.predict(&train.features).unwrap();
    let w1 = eval::distinguishability(&best, &train.truth, &train.observed).unwrap().w1;
    let curve = |model: &ModelParams| {
        let probs = model.predict(&train.features).unwrap();
        let buckets = eval::fn_ratio_buckets(&probs, &train.truth, &train.observed, eval::FN_RATIO_BUCKETS).unwrap();
        eval::assumption_check(&buckets, a, 20).unwrap()
    };
    SeedResult {
        best_val_map: run.best_val_map,
        test_map,
        w1,
        final_spearman: curve(&run.final_model).spearman,
        initial_cv: curve(&run.initial_model).coefficient_of_variation,
    }
}

fn run_benchmark() -> Benchmark {
    let jobs: Vec<(MethodId, u64)> =
        [MethodId::An, MethodId::Gr].iter().flat_map(|&m| BENCHMARK_SEEDS.iter().map(move |&s| (m, s))).collect();
    let mut results: Vec<(MethodId, SeedResult)> = jobs.par_iter().map(|&(m, s)| (m, run_seed(m, s))).collect();
    let gr = results.split_off(BENCHMARK_SEEDS.len());
    Benchmark { an: results.into_iter().map(|r| r.1).collect(), gr: gr.into_iter().map(|r| r.1).collect() }
}

fn median(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn benchmark_ordering(b: &Benchmark) -> Outcome {
    let val_an = median(b.an.iter().map(|r| r.best_val_map));
    let val_gr = median(b.gr.iter().map(|r| r.best_val_map));
    let test_an = median(b.an.iter().map(|r| r.test_map));
    let test_gr = median(b.gr.iter().map(|r| r.test_map));
    check(
        val_gr > val_an && test_gr - test_an >= TEST_MAP_MARGIN,
        format!(
            "median best-val mAP GR {val_gr:.4} vs AN {val_an:.4}; median test mAP GR {test_gr:.4} vs AN {test_an:.4} (lead {:.4}, need {TEST_MAP_MARGIN})",
            test_gr - test_an
        ),
    )
}

fn distinguishability(b: &Benchmark) -> Outcome {
    let an = median(b.an.iter().map(|r| r.w1));
    let gr = median(b.gr.iter().map(|r| r.w1));
    check(gr > an, format!("median W1 GR {gr:.4} vs AN {an:.4}"))
}

fn assumption_verification(b: &Benchmark) -> Outcome {
    let rho: Vec<f64> = b.gr.iter().map(|r| r.final_spearman.unwrap_or(f64::NAN)).collect();
    let cv: Vec<f64> = b.gr.iter().map(|r| r.initial_cv.unwrap_or(f64::NAN)).collect();
    let ok = rho.iter().all(|&r| r > 0.8) && cv.iter().all(|&c| c < 0.3);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
    check(ok, format!("final-model Spearman per seed [{}]; initial-model CV per seed [{}]", fmt(&rho), fmt(&cv)))
}

// 10 --------------------------------------------------------------------------

/// Precision at each positive, counted pairwise; assumes distinct scores.
fn brute_force_ap(scores: &[f64], truth: &[bool]) -> f64 {
    let mut sum = 0.0;
    let mut positives = 0;
    for (i, &si) in scores.iter().enumerate() {
        if !truth[i] {
            continue;
        }
        positives += 1;
        let above = scores.iter().filter(|&&s| s >= si).count();
        let hits = scores.iter().zip(truth).filter(|&(&s, &t)| t && s >= si).count();
        sum += hits as f64 / above as f64;
    }
    sum / f64::from(positives)
}

/// Optimal transport between uniform atoms: replicate each sample to a common
/// count and match in sorted order.
fn brute_force_w1(a: &[f64], b: &[f64]) -> f64 {
    let mut ea: Vec<f64> = a.iter().flat_map(|&v| std::iter::repeat_n(v, b.len())).collect();
    let mut eb: Vec<f64> = b.iter().flat_map(|&v| std::iter::repeat_n(v, a.len())).collect();
    ea.sort_by(f64::total_cmp);
    eb.sort_by(f64::total_cmp);
    ea.iter().zip(&eb).map(|(x, y)| (x - y).abs()).sum::<f64>() / ea.len() as f64
}

fn metric_oracles() -> Outcome {
    let mut rng = RngStream::new(1010, 0);
    let mut worst_map: f64 = 0.0;
    for _ in 0..1000 {
        let (n, c) = (2 + rng.below(30), 1 + rng.below(5));
        let scores: Vec<f64> = (0..n * c).map(|_| rng.uniform()).collect();
        let mut truth: Vec<bool> = (0..n * c).map(|_| rng.uniform() < 0.3).collect();
        // one guaranteed positive per class keeps every class scored
        for k in 0..c {
            truth[rng.below(n) * c + k] = true;
        }
        let got = eval::mean_average_precision(
            &DenseMatrix::from_vec(n, c, scores.clone()).unwrap(),
            &spml::numerics::BinaryMatrix::from_vec(n, c, truth.clone()).unwrap(),
        )
        .unwrap()
        .map;
        let col = |v: &[f64], k: usize| (0..n).map(|r| v[r * c + k]).collect::<Vec<_>>();
        let want = (0..c)
            .map(|k| {
                let t: Vec<bool> = (0..n).map(|r| truth[r * c + k]).collect();
                brute_force_ap(&col(&scores, k), &t)
            })
            .sum::<f64>()
            / c as f64;
        worst_map = worst_map.max((got - want).abs());
    }
    let mut worst_w1: f64 = 0.0;
    for _ in 0..1000 {
        let na = 1 + rng.below(25);
        let nb = 1 + rng.below(25);
        // coarse values make ties common
        let a: Vec<f64> = (0..na).map(|_| (rng.uniform() * 20.0).floor() / 20.0).collect();
        let b: Vec<f64> = (0..nb).map(|_| rng.uniform_range(-0.5, 1.5)).collect();
        worst_w1 = worst_w1.max((eval::wasserstein1(&a, &b).unwrap() - brute_force_w1(&a, &b)).abs());
    }
    check(
        worst_map <= 1e-12 && worst_w1 <= 1e-12,
        format!("10^3 instances each: mAP max abs diff {worst_map:.1e}, W1 max abs diff {worst_w1:.1e}"),
    )
}

// 11 --------------------------------------------------------------------------

fn reproducibility() -> Outcome {
    let spec = SyntheticSpec { n: 300, c: 5, d: 8, weight_scale: 2.0, positive_rate: 0.4, label_noise: 1.0, seed: 11 };
    let mut lines = Vec::new();
    let mut ok = true;
    for method in [MethodId::Gr, MethodId::En, MethodId::EmApl] {
        let runs: Vec<String> = (0..2)
            .map(|_| {
                let splits = generate_splits(&spec, 100, 100).unwrap();
                let mut cfg = benchmark_config(method);
                cfg.trainer.epochs = 8;
                trainer::train(&cfg, &splits.train, &splits.val, 11).unwrap().metrics_jsonl().unwrap()
            })
            .collect();
        let same = runs[0].as_bytes() == runs[1].as_bytes();
        ok &= same;
        lines.push(format!("{method} {} bytes {}", runs[0].len(), if same { "identical" } else { "differ" }));
    }
    check(ok, lines.join(", "))
}

fn main() {
    let benchmark_start = Instant::now();
    let bench = run_benchmark();
    let bench_secs = benchmark_start.elapsed().as_secs_f64();

    let results: Vec<(&str, Outcome)> = vec![
        ("1 gradient oracle grid", gradient_oracle_grid()),
        ("2 closed-form Hill/EM gradients", closed_form_gradients()),
        ("3 adapter equivalence", adapter_equivalence()),
        ("4 limit behaviors", limit_behaviors()),
        ("5 schedule exactness", schedule_exactness()),
        ("6 end-to-end gradient check", end_to_end_gradients()),
        ("7 synthetic benchmark GR vs AN", benchmark_ordering(&bench)),
        ("8 distinguishability W1", distinguishability(&bench)),
        ("9 assumption verification", assumption_verification(&bench)),
        ("10 metric oracles", metric_oracles()),
        ("11 reproducibility", reproducibility()),
    ];
    println!("benchmark: 2 methods x {} seeds in {bench_secs:.1}s", BENCHMARK_SEEDS.len());
    let mut failed = Vec::new();
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(detail) => {
                println!("FAIL criterion {name}: {detail}");
                failed.push(*name);
            }
        }
    }
    if failed.is_empty() {
        println!("acceptance: {} of {} criteria passed", results.len(), results.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
