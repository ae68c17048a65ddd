//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fails.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};

use motion_refine::adversarial::{bce_terms, discriminator_pass, AdversarialConfig, ErrorDiscriminator, ErrorGenerator};
use motion_refine::autodiff::{grad_check, Matrix, NormKind, Tape, Var};
use motion_refine::checkpoint;
use motion_refine::cli::cli_main;
use motion_refine::config::TrainConfig;
use motion_refine::dct::{DctBasis, TrajectoryCoefficients};
use motion_refine::eval::{evaluate, EvalReport, MaeMode, SHORT_TERM_MS};
use motion_refine::gcn::{PredictorConfig, TrainRng};
use motion_refine::motion::{synth_dataset, write_dataset_dir, Dataset, MotionSequence};
use motion_refine::params::Parameters;
use motion_refine::refine::{cascade_forward, BoundCascade, CascadeModel, StageInput};
use motion_refine::training::{metrics_csv, prediction_loss, refinement_loss, train_loop_with, EpochMetrics, TrainOutputs, Trainer};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const GRAD_EPS: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn out_dir() -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    fs::create_dir_all(&dir).expect("create acceptance output dir");
    dir
}

fn random(rows: usize, cols: usize, rng: &mut TrainRng) -> Matrix {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

// 1

fn naive_dct(x: &Array2<f64>) -> Array2<f64> {
    let (m, c) = x.dim();
    let mut out = Array2::zeros((c, m));
    for ch in 0..c {
        for k in 0..m {
            let scale = if k == 0 { (1.0 / m as f64).sqrt() } else { (2.0 / m as f64).sqrt() };
            let mut acc = 0.0;
            for n in 0..m {
                acc += x[[n, ch]] * (PI * (2 * n + 1) as f64 * k as f64 / (2 * m) as f64).cos();
            }
            out[[ch, k]] = scale * acc;
        }
    }
    out
}

fn dct_fidelity() -> Outcome {
    let start = Instant::now();
    let mut rng = TrainRng::seed_from_u64(101);
    let (mut round, mut oracle) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let m = rng.random_range(1..=64);
        let c = 3 * rng.random_range(1..=3);
        let x = random(m, c, &mut rng);
        let seq = MotionSequence::new(x.clone(), 25.0).unwrap();
        let basis = DctBasis::new(m).unwrap();
        let coeffs = basis.encode(&seq, m).unwrap();
        let back = basis.decode(&coeffs, 25.0).unwrap();
        round = round.max((back.values() - &x).mapv(f64::abs).fold(0.0, |a, &b| a.max(b)));
        oracle = oracle.max((coeffs.coeffs() - &naive_dct(&x)).mapv(f64::abs).fold(0.0, |a, &b| a.max(b)));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        round <= 1e-9 && oracle <= 1e-12 && secs < 5.0,
        format!("round trip {round:.2e} (<= 1e-9), oracle {oracle:.2e} (<= 1e-12), {secs:.2}s (< 5s)"),
    )
}

// 2

/// Weighted sum so every output entry gets a distinct upstream gradient.
fn reduce(t: &mut Tape, v: Var, seed: u64) -> Var {
    let (r, c) = t.shape(v);
    let mut rng = TrainRng::seed_from_u64(seed);
    let w = Array2::from_shape_fn((r, c), |_| rng.random_range(0.5..1.5));
    let y = t.mul_const(v, w).unwrap();
    t.sum(y)
}

type OpCase = (&'static str, Vec<Matrix>, Box<dyn Fn(&mut Tape, &[Var]) -> motion_refine::Result<Var>>);

fn op_cases() -> Vec<OpCase> {
    let mut rng = TrainRng::seed_from_u64(7);
    let mut r = |a, b| random(a, b, &mut rng);
    let probs = |m: Matrix| m.mapv(|x| 0.3 + 0.2 * x);
    let mask = r(3, 4).mapv(|x| if x > 0.0 { 2.0 } else { 0.0 });
    let target = r(4, 6);
    vec![
        ("matmul", vec![r(3, 4), r(4, 2)], Box::new(|t, v| { let y = t.matmul(v[0], v[1])?; Ok(reduce(t, y, 1)) })),
        ("graph_mix", vec![r(3, 3), r(6, 2)], Box::new(|t, v| { let y = t.graph_mix(v[0], v[1])?; Ok(reduce(t, y, 2)) })),
        ("add", vec![r(3, 4), r(3, 4)], Box::new(|t, v| { let y = t.add(v[0], v[1])?; Ok(reduce(t, y, 3)) })),
        ("sub", vec![r(3, 4), r(3, 4)], Box::new(|t, v| { let y = t.sub(v[0], v[1])?; Ok(reduce(t, y, 4)) })),
        ("scale", vec![r(3, 4)], Box::new(|t, v| { let y = t.scale(v[0], 2.0); Ok(reduce(t, y, 5)) })),
        ("mul_const", vec![r(3, 4)], Box::new(move |t, v| { let y = t.mul_const(v[0], mask.clone())?; Ok(reduce(t, y, 6)) })),
        ("tanh", vec![r(3, 4)], Box::new(|t, v| { let y = t.tanh(v[0]); Ok(reduce(t, y, 7)) })),
        ("sigmoid", vec![r(3, 4)], Box::new(|t, v| { let y = t.sigmoid(v[0]); Ok(reduce(t, y, 8)) })),
        ("add_bias", vec![r(3, 4), r(1, 4)], Box::new(|t, v| { let y = t.add_bias(v[0], v[1])?; Ok(reduce(t, y, 9)) })),
        ("concat_cols", vec![r(3, 4), r(3, 2)], Box::new(|t, v| { let y = t.concat_cols(v[0], v[1])?; Ok(reduce(t, y, 10)) })),
        ("reshape", vec![r(3, 4)], Box::new(|t, v| { let y = t.reshape(v[0], 2, 6)?; Ok(reduce(t, y, 11)) })),
        ("transpose", vec![r(3, 4)], Box::new(|t, v| { let y = t.transpose(v[0]); Ok(reduce(t, y, 12)) })),
        ("sum", vec![r(3, 4)], Box::new(|t, v| Ok(t.sum(v[0])))),
        ("mse_norm_loss", vec![r(4, 6)], {
            let target = target.clone();
            Box::new(move |t, v| t.mse_norm_loss(v[0], &target, 3, NormKind::Euclidean))
        }),
        ("mse_norm_loss_squared", vec![r(4, 6)], Box::new(move |t, v| t.mse_norm_loss(v[0], &target, 3, NormKind::Squared))),
        ("mean_log", vec![probs(r(3, 4))], Box::new(|t, v| Ok(t.mean_log(v[0])))),
        ("mean_log1m", vec![probs(r(3, 4))], Box::new(|t, v| Ok(t.mean_log1m(v[0])))),
    ]
}

fn tiny_cascade() -> CascadeModel {
    let cfg = PredictorConfig {
        nodes: 6,
        coeffs: 8,
        hidden: 10,
        blocks: 1,
        dropout: 0.0,
        seed: 21,
    };
    CascadeModel::init(cfg, 2, StageInput::Fused).unwrap()
}

fn split_bound(m: &CascadeModel, vars: &[Var]) -> BoundCascade {
    let n = m.predictor.params().len();
    let mut rest = &vars[n..];
    let mut stages = Vec::new();
    for s in &m.stages {
        let k = s.params().len();
        stages.push(rest[..k].to_vec());
        rest = &rest[k..];
    }
    BoundCascade {
        predictor: vars[..n].to_vec(),
        stages,
    }
}

fn gradient_integrity() -> Outcome {
    let start = Instant::now();
    let mut worst = (0.0f64, "");
    let mut record = |name: &'static str, rel: f64| {
        if rel > worst.0 || rel.is_nan() {
            worst = (rel, name);
        }
    };
    for (name, params, f) in op_cases() {
        let r = grad_check(&params, f, GRAD_EPS, GRAD_TOL).unwrap();
        record(name, r.max_rel_error);
    }

    let model = tiny_cascade();
    let mut rng = TrainRng::seed_from_u64(5);
    let h = random(12, 8, &mut rng);
    let truth = random(8, 12, &mut rng);
    let basis = DctBasis::new(8).unwrap().truncated(8);
    let params = model.cloned_params();
    let cascade = grad_check(
        &params,
        |t, vars| {
            let bound = split_bound(&model, vars);
            let hi = t.constant(h.clone());
            let out = model.forward(t, &bound, hi, None, None)?;
            let dec = t.constant(basis.clone());
            let mut frames = Vec::new();
            for v in std::iter::once(out.coarse).chain(out.refined.iter().copied()) {
                let f = t.matmul(v, dec)?;
                frames.push(t.transpose(f));
            }
            let lp = prediction_loss(t, frames[0], &truth, NormKind::Euclidean)?;
            let lr = refinement_loss(t, &frames[1..], &truth, NormKind::Euclidean)?;
            let lr = t.scale(lr, 2.0);
            t.add(lp, lr)
        },
        GRAD_EPS,
        GRAD_TOL,
    )
    .unwrap();
    record("2-stage cascade", cascade.max_rel_error);

    let cfg = AdversarialConfig {
        noise_dim: 3,
        gen_hidden: 6,
        disc_hidden: 6,
        seed: 9,
        ..AdversarialConfig::new(3, 4)
    };
    let g = ErrorGenerator::init(cfg);
    let d = ErrorDiscriminator::init(cfg);
    let cond_fake = random(6, 4, &mut rng);
    let cond_real = random(6, 4, &mut rng);
    let real = random(6, 4, &mut rng);
    let noise = random(2, 3, &mut rng);
    let mut params = g.cloned_params();
    params.extend(d.cloned_params());
    let ng = g.params().len();
    for (label, pick_d) in [("loss_d", true), ("loss_g", false)] {
        let r = grad_check(
            &params,
            |t, vars| {
                let (gv, dv) = vars.split_at(ng);
                let cf = t.constant(cond_fake.clone());
                let cr = t.constant(cond_real.clone());
                let z = t.constant(noise.clone());
                let re = t.constant(real.clone());
                let fake = g.forward(t, gv, cf, z)?;
                let s_real = d.forward(t, dv, re, cr)?;
                let s_fake = d.forward(t, dv, fake, cf)?;
                let (ld, lg) = bce_terms(t, s_real, s_fake)?;
                Ok(if pick_d { ld } else { lg })
            },
            GRAD_EPS,
            GRAD_TOL,
        )
        .unwrap();
        record(label, r.max_rel_error);
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst.0 <= GRAD_TOL && secs < 60.0,
        format!(
            "17 ops + cascade + adversarial losses, worst rel error {:.2e} ({}) (<= 1e-4), {secs:.2}s (< 60s)",
            worst.0, worst.1
        ),
    )
}

// 3

fn direct_joint_loss(pred: &Matrix, truth: &Matrix) -> f64 {
    let mut total = 0.0;
    let mut count = 0;
    for f in 0..pred.nrows() {
        for j in 0..pred.ncols() / 3 {
            let mut sq = 0.0;
            for d in 0..3 {
                let e = pred[[f, 3 * j + d]] - truth[[f, 3 * j + d]];
                sq += e * e;
            }
            total += sq.sqrt();
            count += 1;
        }
    }
    total / count as f64
}

fn loss_oracles() -> Outcome {
    let mut rng = TrainRng::seed_from_u64(33);
    let truth = random(20, 12, &mut rng);
    let preds: Vec<Matrix> = (0..3).map(|_| random(20, 12, &mut rng)).collect();
    let mut t = Tape::new();
    let vars: Vec<Var> = preds.iter().map(|p| t.constant(p.clone())).collect();
    let lp = prediction_loss(&mut t, vars[0], &truth, NormKind::Euclidean).unwrap();
    let lr = refinement_loss(&mut t, &vars, &truth, NormKind::Euclidean).unwrap();
    let lp_err = (t.scalar(lp) - direct_joint_loss(&preds[0], &truth)).abs();
    let lr_direct = preds.iter().map(|p| direct_joint_loss(p, &truth)).sum::<f64>() / 3.0;
    let lr_err = (t.scalar(lr) - lr_direct).abs();

    let cfg = AdversarialConfig::new(3, 4);
    let g = ErrorGenerator::init(cfg);
    let mut d = ErrorDiscriminator::init(cfg);
    d.zero_all();
    let pass = discriminator_pass(&g, &d, &random(6, 4, &mut rng), &random(6, 4, &mut rng), &random(6, 4, &mut rng), &random(2, 16, &mut rng)).unwrap();
    let ld_err = (pass.tape.scalar(pass.loss_d) - 4f64.ln()).abs();
    let lg_err = (pass.tape.scalar(pass.loss_g) - 0.5f64.ln()).abs();
    outcome(
        lp_err <= 1e-12 && lr_err <= 1e-12 && ld_err <= 1e-9 && lg_err <= 1e-9,
        format!("L_P {lp_err:.1e}, L_R {lr_err:.1e} (<= 1e-12); loss_d-ln4 {ld_err:.1e}, loss_g-ln0.5 {lg_err:.1e} (<= 1e-9)"),
    )
}

// 4

fn identity_anchors() -> Outcome {
    let mut rng = TrainRng::seed_from_u64(44);
    let h = TrajectoryCoefficients::new(random(6, 8, &mut rng), 8).unwrap();
    let mut all_zero = tiny_cascade();
    all_zero.zero_heads();
    let out = cascade_forward(&all_zero, &h, None, None).unwrap();
    let coarse_err = (out.coarse.coeffs() - h.coeffs()).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));

    let mut stages_zero = tiny_cascade();
    for s in &mut stages_zero.stages {
        s.network.zero_head();
    }
    let out = cascade_forward(&stages_zero, &h, None, None).unwrap();
    let expected = out.coarse.coeffs() + h.coeffs();
    let stage_err = (out.refined[0].coeffs() - &expected).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
    outcome(
        coarse_err <= 1e-12 && stage_err <= 1e-12,
        format!("predictor vs H_I {coarse_err:.1e}, stage vs H_P + H_I {stage_err:.1e} (<= 1e-12)"),
    )
}

// 5, 6

fn desk_dataset(seed: u64) -> Dataset {
    synth_dataset(seed, 2, 200, 10, 10, 12).unwrap()
}

fn desk_config(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..TrainConfig::desk()
    }
}

struct DeskRun {
    seed: u64,
    secs: f64,
    report: EvalReport,
    log: Vec<EpochMetrics>,
}

fn train_and_eval(train: &Dataset, test: &Dataset, cfg: TrainConfig) -> (Trainer, Vec<EpochMetrics>, EvalReport, f64) {
    let start = Instant::now();
    let mut trainer = Trainer::new(cfg, train.channels()).unwrap();
    let log = train_loop_with(&mut trainer, train, Some(test), &TrainOutputs::default()).unwrap();
    let report = evaluate(&trainer.model, test, &trainer.codec().unwrap(), &SHORT_TERM_MS, MaeMode::FullFrame).unwrap();
    (trainer, log, report, start.elapsed().as_secs_f64())
}

fn desk_runs() -> Vec<DeskRun> {
    SEEDS
        .iter()
        .map(|&seed| {
            let ds = desk_dataset(seed);
            let (_, log, report, secs) = train_and_eval(&ds, &ds, desk_config(seed));
            fs::write(out_dir().join(format!("desk_seed{seed}.metrics.csv")), metrics_csv(&log)).unwrap();
            DeskRun { seed, secs, report, log }
        })
        .collect()
}

fn learning(runs: &[DeskRun]) -> Outcome {
    let mut wins = 0;
    let mut detail = String::new();
    let mut slowest: f64 = 0.0;
    for r in runs {
        let model = *r.report.refined.average().last().unwrap();
        let zv = *r.report.zero_velocity.average().last().unwrap();
        if model < zv {
            wins += 1;
        }
        slowest = slowest.max(r.secs);
        let _ = write!(detail, " s{}: {model:.3}<{zv:.3}?", r.seed);
    }
    outcome(
        wins == SEEDS.len() && slowest < 300.0,
        format!("400 ms MAE below zero-velocity in {wins}/5 seeds, slowest run {slowest:.0}s (< 300s);{detail}"),
    )
}

fn refinement_value(runs: &[DeskRun]) -> Outcome {
    let mut wins = 0;
    let mut detail = String::new();
    for r in runs {
        let refined = mean(&r.report.refined.average());
        let coarse = mean(&r.report.coarse.average());
        if refined <= coarse {
            wins += 1;
        }
        let _ = write!(detail, " s{}: {refined:.3} vs {coarse:.3}", r.seed);
    }
    outcome(wins >= 4, format!("refined <= coarse mean MAE in {wins}/5 seeds (need 4);{detail}"))
}

// 7

fn adversarial_value() -> Outcome {
    let mut wins = 0;
    let mut detail = String::new();
    let mut audit = String::from("seed,adversarial_mae,no_adversarial_mae\n");
    for &seed in &SEEDS {
        let all = synth_dataset(seed, 3, 200, 10, 10, 12).unwrap();
        let train = all.filter_subjects(&[0, 1]).unwrap();
        let test = all.filter_subjects(&[2]).unwrap();
        let mut maes = [0.0; 2];
        for (slot, adversarial) in [(0, true), (1, false)] {
            let cfg = TrainConfig {
                adversarial,
                ..desk_config(seed)
            };
            let (_, log, report, _) = train_and_eval(&train, &test, cfg);
            let tag = if adversarial { "adversarial" } else { "no_adversarial" };
            fs::write(out_dir().join(format!("heldout_seed{seed}_{tag}.metrics.csv")), metrics_csv(&log)).unwrap();
            maes[slot] = mean(&report.refined.average());
        }
        if maes[0] <= maes[1] {
            wins += 1;
        }
        let _ = writeln!(audit, "{seed},{},{}", maes[0], maes[1]);
        let _ = write!(detail, " s{seed}: {:.3} vs {:.3}", maes[0], maes[1]);
    }
    let path = out_dir().join("heldout_comparison.csv");
    fs::write(&path, audit).unwrap();
    outcome(
        wins >= 3,
        format!("adversarial <= no-adversarial held-out MAE in {wins}/5 seeds (need 3);{detail}; log {}", path.display()),
    )
}

// 8

fn determinism(runs: &[DeskRun]) -> Outcome {
    let seed = runs[0].seed;
    let ds = desk_dataset(seed);
    let (_, log, _, _) = train_and_eval(&ds, &ds, desk_config(seed));
    let identical = metrics_csv(&log) == metrics_csv(&runs[0].log);

    let cfg = TrainConfig {
        epochs: 6,
        ..desk_config(seed)
    };
    let mut straight = Trainer::new(cfg.clone(), 12).unwrap();
    let full = train_loop_with(&mut straight, &ds, None, &TrainOutputs::default()).unwrap();
    let path = out_dir().join("resume.ckpt");
    let mut first = Trainer::new(TrainConfig { epochs: 3, ..cfg }, 12).unwrap();
    let outputs = TrainOutputs {
        checkpoint: Some(path.clone()),
        metrics_log: None,
    };
    train_loop_with(&mut first, &ds, None, &outputs).unwrap();
    let mut resumed = checkpoint::load(&path).unwrap();
    resumed.config.epochs = 6;
    let rest = train_loop_with(&mut resumed, &ds, None, &TrainOutputs::default()).unwrap();
    let resume_ok = metrics_csv(&rest) == metrics_csv(&full[3..]) && resumed.model == straight.model && resumed.adversary == straight.adversary;
    outcome(
        identical && resume_ok,
        format!("repeat run log identical: {identical}; resume after epoch 3 of 6 identical: {resume_ok}"),
    )
}

// 9

fn ablation_parity() -> Outcome {
    let dir = out_dir().join("ablation");
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    let data = dir.join("data");
    write_dataset_dir(&desk_dataset(0), &data).unwrap();
    let csv = dir.join("ablation.csv");
    let args = [
        "motion-refine",
        "ablate",
        "--data",
        data.to_str().unwrap(),
        "--csv",
        csv.to_str().unwrap(),
    ];
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = cli_main(args, &mut out, &mut err);
    let text = fs::read_to_string(&csv).unwrap_or_default();
    let lines: Vec<&str> = text.lines().collect();
    let expected = [
        "coarse_1stage",
        "coarse_2stage_stacked",
        "refine_2stage",
        "adversarial_2stage",
        "adversarial_3stage",
        "adversarial_4stage",
    ];
    let rows_ok = lines.len() == 7
        && lines[0] == "variant,80,160,320,400,mean"
        && lines[1..].iter().zip(expected).all(|(l, name)| {
            let cells: Vec<&str> = l.split(',').collect();
            cells[0] == name && cells.len() == 6 && cells[1..].iter().all(|c| c.parse::<f64>().is_ok_and(f64::is_finite))
        });
    outcome(
        code == 0 && rows_ok,
        format!(
            "exit {code}, {} variant rows in {}{}",
            lines.len().saturating_sub(1),
            csv.display(),
            if code != 0 { format!(": {}", String::from_utf8_lossy(&err).trim()) } else { String::new() }
        ),
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(usize, &str, Outcome)> = vec![
        (1, "DCT fidelity", dct_fidelity()),
        (2, "gradient integrity", gradient_integrity()),
        (3, "loss oracles", loss_oracles()),
        (4, "zero-head identity anchors", identity_anchors()),
    ];
    let runs = desk_runs();
    results.push((5, "learning beats zero-velocity", learning(&runs)));
    results.push((6, "refinement value", refinement_value(&runs)));
    results.push((7, "adversarial value on held-out subject", adversarial_value()));
    results.push((8, "determinism and checkpoint resume", determinism(&runs)));
    results.push((9, "ablation harness parity", ablation_parity()));

    let mut failed = 0;
    for (n, name, o) in &results {
        let tag = if o.passed { "PASS" } else { "FAIL" };
        println!("{tag} criterion {n} ({name}): {}", o.detail);
        if !o.passed {
            failed += 1;
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
