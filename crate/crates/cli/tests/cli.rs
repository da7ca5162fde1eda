use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const TINY: &str = "\
[scene]
image = 32
length = 5
[dataset]
sequences = 2
[network]
channels = 1,4,8
decoder_width = 4
[train]
epochs = 1
bptt = 2
";

fn procnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_procnet")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.ini");
    fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, config: &Path, name: &str) -> PathBuf {
    let out = dir.join(name);
    let res = procnet(&["gen-data", "--config", s(config), "--out", s(&out)]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    out
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut all = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let bytes = fs::read(&p).unwrap();
                all.push((p.strip_prefix(dir).unwrap().to_path_buf(), bytes));
            }
        }
    }
    all.sort();
    all
}

fn count_prefix(dir: &Path, prefix: &str) -> usize {
    fs::read_dir(dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with(prefix))
        .count()
}

#[test]
fn gen_data_writes_frames_masks_and_manifests() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let data = gen(tmp.path(), &cfg, "data");
    let seqs: Vec<PathBuf> = fs::read_dir(&data).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(seqs.len(), 2);
    let (mut frames, mut masks) = (0, 0);
    for seq in &seqs {
        frames += count_prefix(seq, "frame_");
        masks += count_prefix(seq, "mask_");
        assert!(seq.join("meta.json").is_file());
        assert!(seq.join("poses.jsonl").is_file());
    }
    assert_eq!((frames, masks), (10, 10));
}

#[test]
fn gen_data_is_byte_identical_for_the_same_seed() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let a = gen(tmp.path(), &cfg, "a");
    let b = gen(tmp.path(), &cfg, "b");
    assert_eq!(files(&a), files(&b));

    let c = tmp.path().join("c");
    let res = procnet(&["gen-data", "--config", s(&cfg), "--seed", "7", "--out", s(&c)]);
    assert_eq!(code(&res), 0);
    assert_ne!(files(&a), files(&c));
}

#[test]
fn occlusion_target_is_met_per_sequence() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), &TINY.replace("sequences = 2", "sequences = 2\nocclusion_targets = 50"));
    let data = gen(tmp.path(), &cfg, "data");
    for entry in fs::read_dir(&data).unwrap() {
        let meta: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(entry.unwrap().path().join("meta.json")).unwrap()).unwrap();
        let mean = meta["mean_occlusion"].as_f64().unwrap();
        assert!((45.0..=55.0).contains(&mean), "mean occlusion {mean}");
        for v in meta["occlusion_pct"].as_array().unwrap() {
            let v = v.as_f64().unwrap();
            assert!((45.0..=55.0).contains(&v), "frame occlusion {v}");
        }
    }
}

#[test]
fn train_writes_weights_and_loss_curve() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let data = gen(tmp.path(), &cfg, "data");
    let out = tmp.path().join("train");
    let res = procnet(&["train", "--config", s(&cfg), "--dataset", s(&data), "--out", s(&out)]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    assert!(out.join("weights.bin").is_file());
    let csv = fs::read_to_string(out.join("loss.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "epoch,dice,focal,prediction,total");
    for v in lines[1].split(',').skip(1) {
        assert!(v.parse::<f64>().unwrap().is_finite());
    }

    // same config and seed, same weights
    let again = tmp.path().join("again");
    procnet(&["train", "--config", s(&cfg), "--dataset", s(&data), "--out", s(&again)]);
    assert_eq!(fs::read(out.join("weights.bin")).unwrap(), fs::read(again.join("weights.bin")).unwrap());
    assert_eq!(csv, fs::read_to_string(again.join("loss.csv")).unwrap());
}

#[test]
fn grid_report_has_24_rows_with_average_column() {
    let tmp = TempDir::new().unwrap();
    let text = format!("{TINY}[grid]\nchannels = 1,2,2,2\n");
    let cfg = write_config(tmp.path(), &text.replace("sequences = 2", "sequences = 3"));
    let data = gen(tmp.path(), &cfg, "data");
    let out = tmp.path().join("grid");
    let res = procnet(&["grid", "--config", s(&cfg), "--dataset", s(&data), "--out", s(&out)]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let csv = fs::read_to_string(out.join("grid.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 24);
    for row in rows {
        let v: Vec<&str> = row.split(',').collect();
        let (dice, focal, avg): (f64, f64, f64) = (v[4].parse().unwrap(), v[5].parse().unwrap(), v[6].parse().unwrap());
        assert!((avg - (dice + focal) / 2.0).abs() < 1e-6, "{row}");
    }
    assert_eq!(fs::read_to_string(out.join("grid.txt")).unwrap().lines().count(), 25);
}

#[test]
fn track_writes_one_trajectory_line_and_overlay_per_frame() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let data = gen(tmp.path(), &cfg, "data");
    let out = tmp.path().join("track");
    let seq = data.join("seq_0000");
    let res = procnet(&["track", "--config", s(&cfg), "--sequence", s(&seq), "--out", s(&out)]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let traj = fs::read_to_string(out.join("trajectory.jsonl")).unwrap();
    assert_eq!(traj.lines().count(), 5);
    assert_eq!(count_prefix(&out, "overlay_"), 5);
}

#[test]
fn static_sequence_gives_a_constant_trajectory() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let data = gen(tmp.path(), &cfg, "data");
    let seq = data.join("seq_0000");
    // freeze the sequence on its first frame
    for k in 1..5 {
        for kind in ["frame", "mask"] {
            fs::copy(seq.join(format!("{kind}_0000.pgm")), seq.join(format!("{kind}_{k:04}.pgm"))).unwrap();
        }
    }
    let poses = fs::read_to_string(seq.join("poses.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(poses.lines().next().unwrap()).unwrap();
    let frozen: Vec<String> = (0..5)
        .map(|k| {
            let mut p = first.clone();
            p["frame"] = k.into();
            p["t"] = (0.1 * k as f64).into();
            p.to_string()
        })
        .collect();
    fs::write(seq.join("poses.jsonl"), frozen.join("\n") + "\n").unwrap();

    let out = tmp.path().join("track");
    let res = procnet(&["track", "--config", s(&cfg), "--sequence", s(&seq), "--out", s(&out)]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let traj: Vec<serde_json::Value> = fs::read_to_string(out.join("trajectory.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    for t in &traj {
        assert_eq!(t["x"], traj[0]["x"]);
        assert_eq!(t["omega"], traj[0]["omega"]);
    }
}

#[test]
fn benchmark_table_marks_empty_bins() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let data = gen(tmp.path(), &cfg, "data");
    let out = tmp.path().join("bench");
    let res = procnet(&["benchmark", "--config", s(&cfg), "--dataset", s(&data), "--out", s(&out)]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let table = fs::read_to_string(out.join("table.txt")).unwrap();
    let body: Vec<&str> = table.lines().skip(2).collect();
    assert_eq!(body.len(), 10, "{table}");
    assert!(body[0].contains("Average"));
    let empty = body.iter().filter(|l| l.contains("--")).count();
    let csv = fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), (9 - empty) + 1);
    assert_eq!(9 - empty, 1, "two unoccluded medium-distance sequences fill one bin");
}

#[test]
fn selfcheck_passes_and_reports_a_perturbed_gradient() {
    let ok = procnet(&["selfcheck"]);
    assert_eq!(code(&ok), 0);
    let text = stdout(&ok);
    assert!(text.contains("conv2d") && text.contains("max_err="), "{text}");
    assert!(!text.contains("FAIL"));

    let bad = procnet(&["selfcheck", "--perturb-gradient", "0.01"]);
    assert_eq!(code(&bad), 3);
    assert!(stdout(&bad).contains("FAIL"));
}

#[test]
fn exit_codes_separate_usage_and_io_errors() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&procnet(&["no-such-command"])), 1);
    assert_eq!(code(&procnet(&["train", "--out", s(tmp.path())])), 1);

    let cfg = write_config(tmp.path(), "[network]\nbogus = 1\n");
    assert_eq!(code(&procnet(&["gen-data", "--config", s(&cfg), "--out", s(tmp.path())])), 1);

    let missing = tmp.path().join("missing");
    let res = procnet(&["train", "--dataset", s(&missing), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(code(&res), 2);
    assert_eq!(code(&procnet(&["gen-data", "--config", s(&missing), "--out", s(tmp.path())])), 2);
    assert_eq!(code(&procnet(&["--help"])), 0);
}

#[test]
fn flags_override_the_config_file() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), &format!("{TINY}[run]\nseed = 5\n"));
    let a = gen(tmp.path(), &cfg, "a");
    let b = tmp.path().join("b");
    procnet(&["gen-data", "--config", s(&cfg), "--seed", "5", "--out", s(&b)]);
    assert_eq!(files(&a), files(&b));
    let c = tmp.path().join("c");
    procnet(&["gen-data", "--config", s(&cfg), "--seed", "6", "--out", s(&c)]);
    assert_ne!(files(&a), files(&c));
}
