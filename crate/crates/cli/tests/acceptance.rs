//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any failed. Runs without the libtest harness so the lines are
//! always shown.

use std::path::Path;
use std::time::Instant;

use triadrec::checkpoint::{load_recommender, recommender_from_bytes, recommender_to_bytes};
use triadrec::features::load_feature_file;
use triadrec::pipeline::{finish_experiment, prepare, run_ablation_prepared, run_experiment, ExperimentConfig};
use triadrec::splitfile::SplitDir;
use triadrec::stages::{evaluate_partition, triad_batch, write_synthetic};
use triadrec_core::cae::{build_cae, encode_image, train_cae, CaeConfig};
use triadrec_core::data::{
    augmented_counts, check_split_invariants, generate_reviews, make_train_val, render_image, split_dataset, Image,
    Partition, ReviewRecord, SynthConfig,
};
use triadrec_core::metrics::{b_score, evaluate, EarlyStopState, Goal};
use triadrec_core::nn::{
    check_layer, finite_diff_gradcheck, ops, BatchNorm, Conv2d, Dense, Dropout, Layer, LayerMode, LossKind,
    MaxPool2x2, Upsample2x,
};
use triadrec_core::recmodel::{build_recommender, evaluate_model, predict_all, train_recommender, RecConfig, TriadBatch};
use triadrec_core::{NoClock, RngState, Tensor};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

type Check = fn(&mut Shared) -> Result<Outcome, String>;

/// Work reused across criteria.
struct Shared {
    root: tempfile::TempDir,
    learnable: Option<triadrec::pipeline::Prepared>,
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- gradients

/// Name, layer, input shape, input kind, mode, whether the looser bound applies.
type GradCase = (&'static str, Layer<f64>, Vec<usize>, u8, LayerMode, bool);

fn grad_input(kind: u8, shape: &[usize], rng: &mut RngState) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    match kind {
        // magnitudes of at least 0.05, away from the ReLU kink
        1 => Tensor::from_fn(shape, |_| {
            let v = rng.normal();
            v.signum() * (0.05 + v.abs())
        }),
        // distinct values 0.1 apart, so no pooling window has a near tie
        2 => {
            let mut ranks: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut ranks);
            Tensor::new(shape.to_vec(), ranks.iter().map(|&r| r as f64 * 0.1 - n as f64 * 0.05).collect()).unwrap()
        }
        _ => Tensor::from_fn(shape, |_| rng.normal()),
    }
}

fn gradient_suite(_: &mut Shared) -> Result<Outcome, String> {
    let start = Instant::now();
    let h = 1e-5;
    let (mut worst, mut worst_bn_train) = (0.0f64, 0.0f64);
    let mut worst_name = "";
    for seed in 0..20u64 {
        let mut rng = RngState::new(7000 + seed);
        let mut bn = BatchNorm::new(3);
        bn.gamma.value = Tensor::from_fn(&[3], |_| rng.uniform_range(0.5, 1.5));
        bn.beta.value = Tensor::from_fn(&[3], |_| rng.normal());
        bn.running_mean = Tensor::from_fn(&[3], |_| rng.normal());
        bn.running_var = Tensor::from_fn(&[3], |_| rng.uniform_range(0.5, 2.0));
        let cases: Vec<GradCase> = vec![
            ("conv3x3", Layer::Conv2d(Conv2d::new(3, 4, &mut rng).map_err(err)?), vec![2, 3, 5, 6], 0, LayerMode::Training, false),
            ("dense", Layer::Dense(Dense::new(6, 4, &mut rng).map_err(err)?), vec![3, 6], 0, LayerMode::Training, false),
            ("batchnorm-train", Layer::BatchNorm(bn.clone()), vec![4, 3, 3, 2], 0, LayerMode::Training, true),
            ("batchnorm-train-2d", Layer::BatchNorm(BatchNorm::new(5)), vec![6, 5], 0, LayerMode::Training, true),
            ("batchnorm-infer", Layer::BatchNorm(bn), vec![2, 3, 2, 2], 0, LayerMode::Inference, false),
            ("maxpool2x2", Layer::MaxPool(MaxPool2x2::default()), vec![2, 2, 4, 6], 2, LayerMode::Training, false),
            ("upsample2x", Layer::Upsample(Upsample2x), vec![2, 2, 3, 2], 0, LayerMode::Training, false),
            ("relu", Layer::relu(), vec![4, 7], 1, LayerMode::Training, false),
            ("sigmoid", Layer::sigmoid(), vec![4, 7], 0, LayerMode::Training, false),
            ("dropout", Layer::Dropout(Dropout::new(0.5).map_err(err)?), vec![4, 8], 0, LayerMode::Training, false),
        ];
        for (name, layer, shape, kind, mode, bn_train) in cases {
            let x = grad_input(kind, &shape, &mut rng);
            let e = check_layer(&layer, &x, mode, seed, h).map_err(err)?.max();
            if bn_train {
                worst_bn_train = worst_bn_train.max(e);
            } else if e > worst {
                worst = e;
                worst_name = name;
            }
        }
        let table = Tensor::<f64>::from_fn(&[5, 4], |_| rng.normal());
        let idx = [0usize, 3, 3, 1];
        let r = Tensor::<f64>::from_fn(&[4, 4], |_| rng.normal());
        let mut grad = Tensor::zeros(&[5, 4]);
        ops::embedding_backward(&r, &idx, &mut grad).map_err(err)?;
        let e = finite_diff_gradcheck(
            |v| {
                let t = Tensor::new(vec![5, 4], v.to_vec()).unwrap();
                let y = ops::embedding_lookup_batch(&t, &idx).unwrap();
                y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
            },
            table.data(),
            grad.data(),
            h,
        );
        if e > worst {
            worst = e;
            worst_name = "embedding";
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(outcome(
        worst < 1e-4 && worst_bn_train < 1e-3 && secs < 60.0,
        format!(
            "20 seeds, worst {worst:.2e} ({worst_name}) < 1e-4, train-mode batchnorm {worst_bn_train:.2e} < 1e-3, {secs:.1} s < 60 s"
        ),
    ))
}

// ---------------------------------------------------------------- code size

fn code_dimension(_: &mut Shared) -> Result<Outcome, String> {
    let mut lens = Vec::new();
    for size in [224usize, 32] {
        let config = CaeConfig { input_height: size, input_width: size, ..CaeConfig::default() };
        let model = build_cae(&config, &mut RngState::new(0)).map_err(err)?;
        let img = Image::new(size, size, vec![0.5; size * size * 3]).map_err(err)?;
        lens.push((config.code_len(), encode_image(&model, &img).map_err(err)?.len()));
    }
    Ok(outcome(
        lens == [(2352, 2352), (48, 48)],
        format!("224x224 -> {} (encoded {}), 32x32 -> {} (encoded {})", lens[0].0, lens[0].1, lens[1].0, lens[1].1),
    ))
}

// ---------------------------------------------------------------- B-score

fn b_score_arithmetic(_: &mut Shared) -> Result<Outcome, String> {
    // two-decimal display cuts the remaining digits
    let trunc2 = |x: f64| (x * 100.0).floor() / 100.0;
    let a = b_score(0.99, 0.40).map_err(err)?;
    let b = b_score(0.85, 0.70).map_err(err)?;
    Ok(outcome(
        trunc2(a) == 0.56 && trunc2(b) == 0.76,
        format!("b(0.99, 0.40) = {a:.6} -> {:.2}, b(0.85, 0.70) = {b:.6} -> {:.2}", trunc2(a), trunc2(b)),
    ))
}

// ---------------------------------------------------------------- augmentation

fn augmentation_arithmetic(_: &mut Shared) -> Result<Outcome, String> {
    let mut pass = true;
    let mut parts = Vec::new();
    for (pos, neg, target) in [(11443usize, 1913usize, 1.20), (101275, 19805, 1.02), (157323, 22693, 1.39)] {
        let (p, n) = augmented_counts(pos, neg);
        let ratio = p as f64 / n as f64;
        pass &= (ratio - target).abs() <= 0.01 && p == pos && n == neg * 5;
        parts.push(format!("{pos}:{n} = {ratio:.3} (target {target:.2})"));
    }
    Ok(outcome(pass, parts.join(", ")))
}

// ---------------------------------------------------------------- split

fn random_manifest(rng: &mut RngState) -> Vec<ReviewRecord> {
    let n_users = 1 + rng.below(25);
    let n_rest = 1 + rng.below(12);
    let mut out = Vec::new();
    for u in 0..n_users {
        for _ in 0..1 + rng.below(6) {
            let id = out.len();
            out.push(ReviewRecord {
                review_id: format!("rv{id}"),
                user_id: format!("u{u}"),
                restaurant_id: format!("R{}", rng.below(n_rest)),
                stars: 1 + rng.below(5) as u8,
                image_paths: (0..1 + rng.below(3)).map(|k| format!("images/rv{id}_{k}.ppm")).collect(),
                timestamp: None,
            });
        }
    }
    out
}

fn split_invariants(_: &mut Shared) -> Result<Outcome, String> {
    let start = Instant::now();
    let mut rng = RngState::new(2024);
    let (mut violations, mut first) = (0usize, None);
    let (mut held_test, mut held_val) = (0usize, 0usize);
    for _ in 0..1000 {
        let reviews = random_manifest(&mut rng);
        let seed = rng.next_u64();
        let split = split_dataset(&reviews, seed).map_err(err)?;
        let three_way = make_train_val(&split, seed).map_err(err)?;
        held_test += split.partition(Partition::Test).count();
        held_val += three_way.partition(Partition::Validation).count();
        for s in [&split, &three_way] {
            let v = check_split_invariants(&reviews, s);
            if first.is_none() {
                first = v.first().map(|x| format!("{x:?}"));
            }
            violations += v.len();
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(outcome(
        violations == 0 && secs < 120.0,
        format!(
            "1000 manifests x seeds, {violations} violations{}, {held_test} test / {held_val} validation images held out, {secs:.1} s < 120 s",
            first.map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    ))
}

// ---------------------------------------------------------------- CAE overfit

fn cae_overfit(_: &mut Shared) -> Result<Outcome, String> {
    let start = Instant::now();
    let synth = SynthConfig { n_users: 12, seed: 3, ..SynthConfig::default() };
    let reviews = generate_reviews(&synth).map_err(err)?;
    let mut images = Vec::new();
    'outer: for r in &reviews {
        for k in 0..r.image_paths.len() {
            images.push(render_image(&synth, r, k).map_err(err)?);
            if images.len() == 16 {
                break 'outer;
            }
        }
    }
    let config = CaeConfig {
        input_height: 32,
        input_width: 32,
        loss: LossKind::Mse,
        batch_size: 16,
        patience: 500,
        max_epochs: 500,
        ..CaeConfig::default()
    };
    let model = build_cae(&config, &mut RngState::new(0)).map_err(err)?;
    let (_, history) = train_cae(model, &images, &[], &NoClock).map_err(err)?;
    let first = history.train_loss[0];
    let ratio = history.best_loss / first;
    let secs = start.elapsed().as_secs_f64();
    Ok(outcome(
        images.len() == 16 && ratio <= 0.10 && secs < 300.0,
        format!(
            "16 images, MSE, {} epochs: loss {first:.5} -> {:.5} ({:.1}% of epoch 1, limit 10%), {secs:.0} s < 300 s",
            history.epochs(),
            history.best_loss,
            100.0 * ratio
        ),
    ))
}

// ---------------------------------------------------------------- end to end

const CAE_EPOCHS: usize = 4;

fn e2e_config(data: &Path, out: &Path, seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::desk_scale(data, out, seed);
    c.cae.max_epochs = CAE_EPOCHS;
    c.rec.n_reduce_blocks = 2;
    c
}

fn synth_set(root: &Path, name: &str, signal: f64, seed: u64) -> Result<(std::path::PathBuf, usize), String> {
    let dir = root.join(name);
    let config = SynthConfig { n_users: 290, n_restaurants: 20, signal, ratio: 6.0, seed, ..SynthConfig::default() };
    let reviews = write_synthetic(&config, &dir).map_err(err)?;
    Ok((dir, reviews.iter().map(|r| r.image_paths.len()).sum()))
}

fn end_to_end(shared: &mut Shared) -> Result<Outcome, String> {
    let start = Instant::now();
    let root = shared.root.path().to_path_buf();
    let (data, n_images) = synth_set(&root, "learnable", 0.9, 11)?;
    let prepared = prepare(&e2e_config(&data, &root.join("learnable-out"), 11)).map_err(err)?;
    let report = finish_experiment(&prepared).map_err(err)?;
    let learn_b = report.metrics["test"].b_score.unwrap_or(f64::NAN);
    shared.learnable = Some(prepared);

    let (mut model_bs, mut coin_bs) = (Vec::new(), Vec::new());
    for seed in 1..=5u64 {
        let (data, _) = synth_set(&root, &format!("null{seed}"), 0.0, 100 + seed)?;
        let out = root.join(format!("null{seed}-out"));
        let report = run_experiment(&e2e_config(&data, &out, seed)).map_err(err)?;
        model_bs.push(report.metrics["test"].b_score.unwrap_or(0.0));
        // a fair coin thresholded at 0.5 on the same test labels
        let split = SplitDir::read(&out.join("augmented")).map_err(err)?;
        let labels: Vec<u8> = split.split.partition(Partition::Test).map(|e| e.label).collect();
        let mut coin = RngState::new(seed).substream("coin");
        let probs: Vec<f64> = labels.iter().map(|_| coin.uniform()).collect();
        coin_bs.push(evaluate(&probs, &labels, 0.5).map_err(err)?.b_score.unwrap_or(0.0));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (m, c) = (mean(&model_bs), mean(&coin_bs));
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
    let secs = start.elapsed().as_secs_f64();
    Ok(outcome(
        learn_b >= 0.9 && (m - c).abs() <= 0.1 && secs < 900.0,
        format!(
            "signal 0.9, {n_images} images: test B {learn_b:.4} (>= 0.9); signal 0 over 5 seeds: model B [{}] mean {m:.3} vs coin [{}] mean {c:.3}, gap {:.3} (<= 0.1); {secs:.0} s < 900 s",
            fmt(&model_bs),
            fmt(&coin_bs),
            (m - c).abs()
        ),
    ))
}

// ---------------------------------------------------------------- ablation

fn ablation(shared: &mut Shared) -> Result<Outcome, String> {
    let prepared = match &shared.learnable {
        Some(p) => p.clone(),
        None => {
            let root = shared.root.path().to_path_buf();
            let (data, _) = synth_set(&root, "learnable", 0.9, 11)?;
            prepare(&e2e_config(&data, &root.join("learnable-out"), 11)).map_err(err)?
        }
    };
    let report = run_ablation_prepared(&prepared, &[1, 2]).map_err(err)?;
    let table = report.table();
    let rows = table.lines().filter(|l| {
        ["Sensitivity", "Specificity", "Precision", "F1-Score", "B-Score"].iter().any(|m| l.starts_with(m))
    });
    let rows: Vec<&str> = rows.collect();
    let cells_ok = rows.len() == 5 && rows.iter().all(|l| l.split_whitespace().count() == 3);
    let same_features = report.columns.windows(2).all(|w| w[0].feature_checksum == w[1].feature_checksum);
    let single = run_ablation_prepared(&prepared, &[2]).map_err(err)?;
    let single_ok = single.columns.len() == 1
        && single.table().lines().filter(|l| l.starts_with("B-Score")).count() == 1
        && single.columns[0].feature_checksum == report.columns[0].feature_checksum;
    let b: Vec<String> = report
        .columns
        .iter()
        .map(|c| format!("{}RB B {}", c.n_reduce_blocks, c.metrics.b_score.map_or("n/a".into(), |v| format!("{v:.4}"))))
        .collect();
    Ok(outcome(
        cells_ok && same_features && single_ok && report.columns.len() == 2,
        format!(
            "5 rows x 2 columns: {cells_ok}, identical feature checksums: {same_features}, {{2}} gives one column: {single_ok}; {}",
            b.join(", ")
        ),
    ))
}

// ---------------------------------------------------------------- determinism

fn determinism(shared: &mut Shared) -> Result<Outcome, String> {
    let root = shared.root.path().to_path_buf();
    let data = root.join("smoke");
    let synth = SynthConfig { n_users: 50, n_restaurants: 10, seed: 21, ..SynthConfig::default() };
    write_synthetic(&synth, &data).map_err(err)?;
    let mut runs = Vec::new();
    for name in ["det-a", "det-b"] {
        let mut config = e2e_config(&data, &root.join(name), 21);
        config.cae.max_epochs = 2;
        runs.push(run_experiment(&config).map_err(err)?);
    }
    let metrics_json = |r: &triadrec::report::RunReport| serde_json::to_string(&r.metrics).unwrap();
    let same_metrics = metrics_json(&runs[0]) == metrics_json(&runs[1])
        && runs[0].rec_history.val_b_score == runs[1].rec_history.val_b_score;
    let ckpt_a = std::fs::read(root.join("det-a/rec/rec.ckpt")).map_err(err)?;
    let same_ckpt = ckpt_a == std::fs::read(root.join("det-b/rec/rec.ckpt")).map_err(err)?;

    // probe: the saved model, reloaded, predicts bit-identically and
    // re-evaluates to the reported test metrics
    let model = load_recommender(&root.join("det-a/rec/rec.ckpt")).map_err(err)?;
    let reloaded = recommender_from_bytes(&recommender_to_bytes(&model)).map_err(err)?;
    let split = SplitDir::read(&root.join("det-a/augmented")).map_err(err)?;
    let features = load_feature_file(&root.join("det-a/features.tsv")).map_err(err)?;
    let probe = triad_batch(&split.split, Partition::Test, &features).map_err(err)?;
    let bits = |p: Vec<f64>| p.into_iter().map(f64::to_bits).collect::<Vec<_>>();
    let same_pred = bits(predict_all(&model, &probe).map_err(err)?) == bits(predict_all(&reloaded, &probe).map_err(err)?);
    let re_eval = evaluate_partition(&model, &split.split, &features, Partition::Test).map_err(err)?;
    let same_eval = re_eval == runs[0].metrics["test"];
    Ok(outcome(
        same_metrics && same_ckpt && same_pred && same_eval,
        format!(
            "two runs, seed 21: metrics identical {same_metrics}, checkpoints identical {same_ckpt}; reload on {} probe triads: predictions bit-identical {same_pred}, re-evaluation equal {same_eval}",
            probe.len()
        ),
    ))
}

// ---------------------------------------------------------------- early stopping

fn stop_epoch(scores: &[f64], patience: usize, goal: Goal) -> (usize, Option<usize>, Option<usize>) {
    let mut state: EarlyStopState<usize> = EarlyStopState::new(patience, goal).unwrap();
    let mut last = 0;
    for (i, &s) in scores.iter().enumerate() {
        last = i + 1;
        if !state.update(s, last, || last) {
            break;
        }
    }
    (last, state.best_epoch, state.snapshot().copied())
}

fn small_triads(rng: &mut RngState, n: usize) -> TriadBatch {
    let users: Vec<usize> = (0..n).map(|_| rng.below(6)).collect();
    let rests: Vec<usize> = (0..n).map(|_| rng.below(4)).collect();
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..n {
        let label = u8::from(rng.uniform() < 0.6);
        feats.extend((0..8).map(|_| (rng.normal() + f64::from(label)) as f32));
        labels.push(label);
    }
    TriadBatch::new(users, rests, feats, 8, labels).unwrap()
}

fn early_stopping(_: &mut Shared) -> Result<Outcome, String> {
    let mut rng = RngState::new(99);
    let mut bad = 0;
    for case in 0..500 {
        let patience = 1 + rng.below(8);
        let best_at = 1 + rng.below(20);
        let goal = if case % 2 == 0 { Goal::Maximize } else { Goal::Minimize };
        let sign = if goal == Goal::Maximize { 1.0 } else { -1.0 };
        // before the best: rising with dips shorter than the patience;
        // after it: ties or worse
        let (mut running, mut dips) = (0.0, 0);
        let mut scores = Vec::new();
        for _ in 1..best_at {
            if dips + 1 < patience && rng.uniform() < 0.4 {
                dips += 1;
                scores.push(sign * running * rng.uniform());
            } else {
                dips = 0;
                running += (0.9 - running) * rng.uniform_range(0.1, 0.5);
                scores.push(sign * running);
            }
        }
        scores.push(sign);
        for _ in 0..patience + 10 {
            scores.push(if rng.uniform() < 0.3 { sign } else { sign * rng.uniform_range(0.0, 1.0) });
        }
        let (stopped, best, snap) = stop_epoch(&scores, patience, goal);
        if stopped != best_at + patience || best != Some(best_at) || snap != Some(best_at) {
            bad += 1;
        }
    }

    // on a real model the restored weights re-evaluate to the best score
    let train = small_triads(&mut rng, 120);
    let val = small_triads(&mut rng, 60);
    let config = RecConfig {
        n_users: 6,
        n_restaurants: 4,
        embed_dim: 8,
        image_feature_dim: 8,
        patience: 3,
        max_epochs: 60,
        learning_rate: 0.01,
        seed: 4,
        ..RecConfig::default()
    };
    let model = build_recommender(&config, &mut RngState::new(4)).map_err(err)?;
    let (model, history) = train_recommender(model, &train, &val, &NoClock).map_err(err)?;
    let re = evaluate_model(&model, &val).map_err(err)?.b_score;
    let restored = re == Some(history.best_score);
    let stopped_right = history.epochs() == (history.best_epoch + config.patience).min(config.max_epochs);
    Ok(outcome(
        bad == 0 && restored && stopped_right,
        format!(
            "500 constructed sequences, {bad} wrong; training run: best epoch {}, stopped at {} (patience {}), re-evaluated B {} vs best {:.6}",
            history.best_epoch,
            history.epochs(),
            config.patience,
            re.map_or("n/a".into(), |v| format!("{v:.6}")),
            history.best_score
        ),
    ))
}

fn main() {
    let checks: [(&str, Check); 10] = [
        ("gradient suite", gradient_suite),
        ("code dimension", code_dimension),
        ("B-score arithmetic", b_score_arithmetic),
        ("augmentation arithmetic", augmentation_arithmetic),
        ("split invariants", split_invariants),
        ("CAE overfit", cae_overfit),
        ("end-to-end learnability", end_to_end),
        ("ablation harness", ablation),
        ("determinism", determinism),
        ("early-stopping contract", early_stopping),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut shared = Shared { root: tempfile::tempdir().expect("temp dir"), learnable: None };
    let mut failed = 0;
    for (name, check) in checks {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = check(&mut shared).unwrap_or_else(|e| outcome(false, format!("error: {e}")));
        if !result.pass {
            failed += 1;
        }
        println!(
            "{} {name}: {} [{:.1} s]",
            if result.pass { "PASS" } else { "FAIL" },
            result.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
