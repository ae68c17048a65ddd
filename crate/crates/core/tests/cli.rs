use std::fs;
use std::path::{Path, PathBuf};

use tempfile::TempDir;

use motion_refine::checkpoint;
use motion_refine::cli::{cli_main, EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE};
use motion_refine::config::TrainConfig;
use motion_refine::motion::{load_dataset_dir, read_motion_file};
use motion_refine::training::{metrics_csv, train_loop_with, TrainOutputs, Trainer};

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn run(args: &[&str]) -> Run {
    let mut argv = vec!["motion-refine"];
    argv.extend_from_slice(args);
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = cli_main(argv, &mut out, &mut err);
    Run {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: &str = "history=10\nfuture=10\nhidden=8\nblocks=1\nbatch_size=8\nnoise_dim=4\ngen_hidden=8\ndisc_hidden=8\n";

fn setup() -> (TempDir, PathBuf, PathBuf) {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data");
    let r = run(&[
        "synth", "--seed", "3", "--subjects", "3", "--windows", "6", "--n", "10", "--t", "10", "--channels", "6", "--out",
        p(&data),
    ]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let cfg = dir.path().join("tiny.cfg");
    fs::write(&cfg, TINY).unwrap();
    (dir, data, cfg)
}

fn zero_headed_checkpoint(dir: &Path, channels: usize) -> PathBuf {
    let cfg = TrainConfig::from_kv(TINY).unwrap();
    let mut t = Trainer::new(cfg, channels).unwrap();
    t.model.zero_heads();
    let path = dir.join("zero.ckpt");
    checkpoint::save(&t, &path).unwrap();
    path
}

#[test]
fn synth_then_eval_with_untrained_checkpoint() {
    let (dir, data, _) = setup();
    let ckpt = zero_headed_checkpoint(dir.path(), 6);
    let csv = dir.path().join("eval.csv");
    let r = run(&["eval", "--ckpt", p(&ckpt), "--data", p(&data), "--horizons", "80,160,320,400", "--csv", p(&csv)]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    assert!(r.stdout.contains("zero-velocity"));
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "action,horizon_ms,mae");
    assert_eq!(lines.len(), 1 + 2 * 4);
    for l in &lines[1..] {
        let mae: f64 = l.rsplit(',').next().unwrap().parse().unwrap();
        assert!(mae.is_finite() && mae >= 0.0);
    }
}

#[test]
fn joint_mean_mode_is_accepted() {
    let (dir, data, _) = setup();
    let ckpt = zero_headed_checkpoint(dir.path(), 6);
    let r = run(&["eval", "--ckpt", p(&ckpt), "--data", p(&data), "--mae-mode", "joint-mean"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
}

#[test]
fn predict_writes_requested_frames() {
    let (dir, data, _) = setup();
    let ckpt = zero_headed_checkpoint(dir.path(), 6);
    let input = data.join("0").join("slow").join("000000.csv");
    let out = dir.path().join("pred.csv");
    let r = run(&["predict", "--ckpt", p(&ckpt), "--input", p(&input), "--frames", "7", "--out", p(&out)]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let seq = read_motion_file(&out).unwrap();
    assert_eq!((seq.frames(), seq.channels()), (7, 6));

    let r = run(&["predict", "--ckpt", p(&ckpt), "--input", p(&input), "--frames", "11", "--out", p(&out)]);
    assert_eq!(r.code, EXIT_USAGE);
}

#[test]
fn train_without_adversary_matches_zero_gamma_path() {
    let (dir, data, cfg) = setup();
    let ckpt = dir.path().join("m.ckpt");
    let metrics = dir.path().join("m.csv");
    let r = run(&[
        "train", "--data", p(&data), "--config", p(&cfg), "--out", p(&ckpt), "--metrics", p(&metrics), "--epochs", "2",
        "--no-adversarial",
    ]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let cli_log = fs::read_to_string(&metrics).unwrap();

    let ds = load_dataset_dir(&data, 10, 10, 1).unwrap();
    let config = TrainConfig {
        epochs: 2,
        gamma: 0.0,
        ..TrainConfig::from_kv(&format!("{}{TINY}", TrainConfig::desk().to_kv())).unwrap()
    };
    let mut trainer = Trainer::new(config, 6).unwrap();
    let log = train_loop_with(&mut trainer, &ds, None, &TrainOutputs::default()).unwrap();
    let lib_log = metrics_csv(&log);

    let drop_adv = |line: &str| {
        let cells: Vec<&str> = line.split(',').collect();
        [&cells[..4], &cells[6..]].concat().join(",")
    };
    let a: Vec<String> = cli_log.lines().map(drop_adv).collect();
    let b: Vec<String> = lib_log.lines().map(drop_adv).collect();
    assert_eq!(a, b);
    assert_eq!(a.len(), 3);
    assert_eq!(checkpoint::load(&ckpt).unwrap().model, trainer.model);
}

#[test]
fn flags_override_config_file() {
    let (dir, data, cfg) = setup();
    fs::write(&cfg, format!("{TINY}epochs=5\nstages=2\n")).unwrap();
    let ckpt = dir.path().join("m.ckpt");
    let r = run(&[
        "train", "--data", p(&data), "--config", p(&cfg), "--out", p(&ckpt), "--epochs", "1", "--stages", "3",
        "--plain-stack",
    ]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let t = checkpoint::load(&ckpt).unwrap();
    assert_eq!((t.config.epochs, t.config.stages, t.epoch), (1, 2, 1));
    assert_eq!(t.model.stages.len(), 2);
    let log = fs::read_to_string(format!("{}.metrics.csv", p(&ckpt))).unwrap();
    assert_eq!(log.lines().count(), 2);
}

#[test]
fn resume_continues_from_checkpoint() {
    let (dir, data, cfg) = setup();
    let a = dir.path().join("a.ckpt");
    let b = dir.path().join("b.ckpt");
    assert_eq!(run(&["train", "--data", p(&data), "--config", p(&cfg), "--out", p(&a), "--epochs", "2"]).code, EXIT_OK);
    assert_eq!(run(&["train", "--data", p(&data), "--config", p(&cfg), "--out", p(&b), "--epochs", "1"]).code, EXIT_OK);
    let r = run(&["train", "--data", p(&data), "--out", p(&b), "--resume", p(&b), "--epochs", "2"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    assert_eq!(checkpoint::load(&a).unwrap(), checkpoint::load(&b).unwrap());
}

#[test]
fn export_writes_all_sources() {
    let (dir, data, _) = setup();
    let ckpt = zero_headed_checkpoint(dir.path(), 6);
    let out = dir.path().join("traj.csv");
    let r = run(&["export", "--ckpt", p(&ckpt), "--data", p(&data), "--out", p(&out), "--limit", "2"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("window,subject,action,frame,source,c0,c1,c2,c3,c4,c5"));
    assert_eq!(lines.count(), 2 * (10 + 3 * 10));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let r = run(&["train", "--bogus"]);
    assert_eq!(r.code, EXIT_USAGE);
    assert!(r.stderr.contains("Usage"));
    assert!(r.stdout.is_empty());
    assert_eq!(run(&["frobnicate"]).code, EXIT_USAGE);
    assert_eq!(run(&["--help"]).code, EXIT_OK);
}

#[test]
fn horizon_beyond_prediction_length_is_a_usage_error() {
    let (dir, data, _) = setup();
    let ckpt = zero_headed_checkpoint(dir.path(), 6);
    let r = run(&["eval", "--ckpt", p(&ckpt), "--data", p(&data), "--horizons", "560"]);
    assert_eq!(r.code, EXIT_USAGE, "{}", r.stderr);
}

#[test]
fn bad_data_and_missing_files_exit_2() {
    let (dir, data, cfg) = setup();
    let ckpt = zero_headed_checkpoint(dir.path(), 6);
    let bad = data.join("0").join("slow").join("000000.csv");
    fs::write(&bad, "25,6\n1,2,3,4,5\n").unwrap();
    let r = run(&["eval", "--ckpt", p(&ckpt), "--data", p(&data)]);
    assert_eq!(r.code, EXIT_DATA);
    assert!(r.stderr.contains("line 2"), "{}", r.stderr);

    let missing = dir.path().join("missing.ckpt");
    assert_eq!(run(&["eval", "--ckpt", p(&missing), "--data", p(&data)]).code, EXIT_DATA);
    fs::write(&missing, b"not a checkpoint").unwrap();
    assert_eq!(run(&["eval", "--ckpt", p(&missing), "--data", p(&data)]).code, EXIT_DATA);
    let r = run(&["train", "--data", p(&dir.path().join("nowhere")), "--config", p(&cfg), "--out", p(&missing)]);
    assert_eq!(r.code, EXIT_DATA);
}

#[test]
fn bad_config_is_a_usage_error() {
    let (dir, data, cfg) = setup();
    fs::write(&cfg, "dropout=2\n").unwrap();
    let out = dir.path().join("m.ckpt");
    assert_eq!(run(&["train", "--data", p(&data), "--config", p(&cfg), "--out", p(&out)]).code, EXIT_USAGE);
    assert_eq!(run(&["train", "--data", p(&data), "--out", p(&out), "--set", "nonsense=1"]).code, EXIT_USAGE);
    assert_eq!(run(&["train", "--data", p(&data), "--out", p(&out), "--stages", "0"]).code, EXIT_USAGE);
}

#[test]
fn diverging_training_exits_3() {
    let (dir, data, cfg) = setup();
    let out = dir.path().join("m.ckpt");
    let r = run(&["train", "--data", p(&data), "--config", p(&cfg), "--out", p(&out), "--lr", "1e200", "--epochs", "3"]);
    assert_eq!(r.code, EXIT_NUMERIC, "{}", r.stderr);
    assert!(r.stderr.contains("non-finite"));
}
