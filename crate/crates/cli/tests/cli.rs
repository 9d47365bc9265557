use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use scndb_cli::checkpoint::Checkpoint;
use scndb_cli::data::list_images;
use scndb_cli::format::{parse_pgm, read_image};

fn scndb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scndb"))
        .args(args)
        .env("SCNDB_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = scndb(args);
    assert!(
        out.status.success(),
        "scndb {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY: &[&str] = &[
    "--height", "16", "--width", "16", "--train-count", "6", "--test-count", "3",
    "--base-channels", "4", "--depth", "2", "--time-dim", "4", "--directions", "1,1",
    "--batch-size", "2", "--sample-batch", "2", "--lr", "0.001",
];

/// Subcommand, then the tiny settings, then `args` (later flags win).
fn with_tiny<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![args[0]];
    v.extend_from_slice(TINY);
    v.extend_from_slice(&args[1..]);
    v
}

fn gen(data: &Path, seed: &str) {
    ok(&with_tiny(&["gen-data", "--data-dir", s(data), "--seed", seed]));
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_data_is_deterministic_and_normalized() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    gen(&a, "7");
    gen(&b, "7");
    assert_eq!(tree(&a), tree(&b));

    let manifest = fs::read_to_string(a.join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count() - 1, 9);
    for split in ["train", "test"] {
        for kind in ["full", "r4", "r8"] {
            for (_, path) in list_images(&a.join(split).join(kind)).unwrap() {
                let img = read_image::<f64>(&path).unwrap();
                assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)), "{}", path.display());
            }
        }
    }
    assert_eq!(list_images(&a.join("train/full")).unwrap().len(), 6);
    assert_eq!(list_images(&a.join("test/r8")).unwrap().len(), 3);

    let c = tmp.path().join("c");
    gen(&c, "8");
    assert_ne!(tree(&a), tree(&c));
}

#[test]
fn gen_data_refuses_occupied_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("data");
    fs::create_dir_all(&dir).unwrap();
    fs::write(dir.join("keep.txt"), "x").unwrap();
    let out = scndb(&with_tiny(&["gen-data", "--data-dir", s(&dir)]));
    assert_eq!(out.status.code(), Some(1));
    assert!(dir.join("keep.txt").exists());
    ok(&with_tiny(&["gen-data", "--data-dir", s(&dir), "--force"]));
    assert!(!dir.join("keep.txt").exists());
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(scndb(&["train", "--no-such-flag", "1"]).status.code(), Some(1));
    assert_eq!(scndb(&["train", "--t-mode", "sometimes"]).status.code(), Some(1));
    assert_eq!(scndb(&["inspect", "weather"]).status.code(), Some(1));
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "seed = 1\ncolour = red\n").unwrap();
    assert_eq!(scndb(&["train", "--config", s(&cfg)]).status.code(), Some(1));
}

#[test]
fn missing_data_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = scndb(&with_tiny(&["train", "--data-dir", s(&tmp.path().join("none")), "--run-dir", s(tmp.path())]));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_with_flag_override() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("exp.cfg");
    fs::write(&cfg, "# schedule only\ntimesteps = 4\n").unwrap();
    let table = ok(&["inspect", "schedule", "--config", s(&cfg)]);
    assert_eq!(table.lines().count(), 6);
    assert!(table.contains("\n2,0.500000,0.500000,"));
    let table = ok(&["inspect", "schedule", "--config", s(&cfg), "--timesteps", "20"]);
    assert_eq!(table.lines().count(), 22);
}

#[test]
fn inspect_schedule_mask_and_contourlet() {
    let table = ok(&["inspect", "schedule"]);
    let row = table.lines().find(|l| l.starts_with("10,")).unwrap();
    assert_eq!(row.split(',').nth(2), Some("0.500000"));

    let tmp = tempfile::tempdir().unwrap();
    let mask = tmp.path().join("mask.pgm");
    ok(&["inspect", "mask", "--width", "8", "--height", "4", "--acceleration", "4", "--output", s(&mask)]);
    let img = parse_pgm(&fs::read(&mask).unwrap()).unwrap();
    assert_eq!(img.shape(), &[4, 8]);
    let bright: Vec<usize> = (0..8).filter(|&c| img.data()[c] == 1.0).collect();
    assert_eq!(bright, vec![0, 4]);
    assert!(img.data().iter().all(|&v| v == 0.0 || v == 1.0));
    for r in 1..4 {
        assert_eq!(&img.data()[r * 8..(r + 1) * 8], &img.data()[..8]);
    }

    let dir = tmp.path().join("bands");
    let text = ok(&["inspect", "contourlet", "--directions", "3,2", "--output", s(&dir)]);
    assert!(text.contains("level 0: 8 subbands"));
    let level0 = (0..8).filter(|k| dir.join(format!("level0_band{k}.pgm")).exists()).count();
    assert_eq!(level0, 8);
    assert!(dir.join("level1_band3.pgm").exists());
    assert!(!dir.join("level1_band4.pgm").exists());
    assert!(dir.join("lowpass.pgm").exists());
}

#[test]
fn eval_of_references_against_themselves() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data, "1");
    let refs = data.join("test/full");
    let csv = tmp.path().join("self.csv");
    let summary = ok(&["eval", "--reference", s(&refs), "--estimate", s(&refs), "--baseline", s(&refs), "--output", s(&csv)]);
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("image_id,psnr_db,ssim,nmse"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3);
    for r in rows {
        assert_eq!(r[1], "inf");
        assert_eq!(r[2].parse::<f64>().unwrap(), 1.0);
        assert_eq!(r[3].parse::<f64>().unwrap(), 0.0);
    }
    assert!(summary.contains("wilcoxon: not significant"), "{summary}");

    let single = tmp.path().join("single");
    fs::create_dir_all(&single).unwrap();
    let under = tmp.path().join("single_under");
    fs::create_dir_all(&under).unwrap();
    fs::copy(refs.join("img00006.scnt"), single.join("img00006.scnt")).unwrap();
    fs::copy(data.join("test/r4/img00006.scnt"), under.join("img00006.scnt")).unwrap();
    let csv = tmp.path().join("one.csv");
    let summary = ok(&["eval", "--reference", s(&single), "--estimate", s(&under), "--output", s(&csv)]);
    let row: Vec<String> = fs::read_to_string(&csv).unwrap().lines().nth(1).unwrap().split(',').map(String::from).collect();
    let psnr: f64 = row[1].parse().unwrap();
    assert!(summary.contains(&format!("psnr_db {psnr:.2}±0.00")), "{summary}");

    let out = scndb(&["eval", "--reference", s(&refs), "--estimate", s(&single), "--output", s(&csv)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_logs_components_and_reconstruct_writes_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data, "3");
    let run = tmp.path().join("run");
    ok(&with_tiny(&["train", "--data-dir", s(&data), "--run-dir", s(&run), "--iterations", "6", "--checkpoint-every", "4"]));
    let log = fs::read_to_string(run.join("loss.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some("step,rec_x,rec_y,selfcon_x,selfcon_y,total"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 6);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r[0], (i + 1) as f64);
        assert!((r[1] + r[2] + r[3] + r[4] - r[5]).abs() <= 1e-6);
        assert!(r[3] > 0.0 && r[4] > 0.0);
    }
    let ckpt = Checkpoint::load(&run.join("checkpoint.scndb")).unwrap();
    assert_eq!(ckpt.get("step").unwrap().as_u64().unwrap(), &[6]);

    let recon = tmp.path().join("recon");
    ok(&with_tiny(&["reconstruct", "--data-dir", s(&data), "--run-dir", s(&run), "--output", s(&recon)]));
    let outputs = list_images(&recon).unwrap();
    assert_eq!(outputs.len(), 3);
    for (id, _) in &outputs {
        assert!(recon.join("preview").join(format!("{id}.pgm")).exists());
        assert!(recon.join("error").join(format!("{id}.scnt")).exists());
    }
    let again = tmp.path().join("again");
    ok(&with_tiny(&["reconstruct", "--data-dir", s(&data), "--run-dir", s(&run), "--output", s(&again)]));
    assert_eq!(tree(&recon), tree(&again));

    let off = tmp.path().join("off");
    ok(&with_tiny(&[
        "train", "--data-dir", s(&data), "--run-dir", s(&off), "--iterations", "3",
        "--selfcon-enabled", "false", "--lambda", "0",
    ]));
    let log = fs::read_to_string(off.join("loss.csv")).unwrap();
    for line in log.lines().skip(1) {
        let cols: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!((cols[3], cols[4]), (0.0, 0.0));
    }
}

#[test]
fn divergence_exits_with_three_and_keeps_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data, "4");
    let run = tmp.path().join("run");
    ok(&with_tiny(&["train", "--data-dir", s(&data), "--run-dir", s(&run), "--iterations", "2"]));
    let before = fs::read(run.join("checkpoint.scndb")).unwrap();
    let out = scndb(&with_tiny(&[
        "train", "--data-dir", s(&data), "--run-dir", s(&run), "--iterations", "400",
        "--lr", "1e38", "--weight-decay", "0", "--resume",
    ]));
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let after = Checkpoint::load(&run.join("checkpoint.scndb")).unwrap();
    let step = after.get("step").unwrap().as_u64().unwrap()[0];
    assert!(step < 400);
    if step == 2 {
        assert_eq!(fs::read(run.join("checkpoint.scndb")).unwrap(), before);
    }
}
