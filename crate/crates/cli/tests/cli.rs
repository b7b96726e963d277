use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use p2t_cli::commands::Overrides;
use p2t_cli::pipeline::new_trainer;
use p2t_core::format::{read_checkpoint, read_rpc1, read_rpt1};
use p2t_core::metrics::{evaluate_frame, mean_pool_height};
use p2t_core::tensorize::CubeTensor;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn p2t(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_p2t"))
        .args(args)
        .current_dir(dir)
        .env_remove("P2T_THREADS")
        .output()
        .unwrap()
}

#[track_caller]
fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn stored_crc(path: &Path) -> u32 {
    let bytes = fs::read(path).unwrap();
    u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap())
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

const COARSE: [&str; 2] = ["--grid-voxel", "1.6"];

fn simulate_golden(dir: &Path) {
    let scene = fixture("golden_scene.txt");
    ok(p2t(dir, &[&COARSE[..], &["simulate", "--out", "data", "--scene", scene.to_str().unwrap()]].concat()));
}

#[test]
fn golden_scene_matches_frozen_checksums() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulate_golden(dir);
    ok(p2t(dir, &["extract", "--data", "data", "--method", "percentile:1"]));
    let scene = dir.join("data/scene_0000");
    let got = [
        stored_crc(&scene.join("polar4d.rpt")),
        stored_crc(&scene.join("polar3d.rpt")),
        stored_crc(&scene.join("gt.rpt")),
        stored_crc(&scene.join("cloud_percentile-1.rpc")),
    ];
    assert_eq!(got, [0x43ae20a1, 0x4a6de18b, 0x47149340, 0x712d3a45], "{got:#010x?}");
}

#[test]
fn empty_scene_gives_all_zero_tensors() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("empty.txt"), "# nothing here\n").unwrap();
    ok(p2t(dir, &[&COARSE[..], &["simulate", "--out", "data", "--scene", "empty.txt"]].concat()));
    for name in ["polar4d.rpt", "polar3d.rpt", "gt.rpt"] {
        let t = read_rpt1(dir.join("data/scene_0000").join(name)).unwrap();
        assert!(!t.data.is_empty());
        assert!(t.data.iter().all(|&v| v == 0.0), "{name}");
    }
}

#[test]
fn full_percentile_keeps_every_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulate_golden(dir);
    let out = ok(p2t(dir, &["extract", "--data", "data", "--method", "percentile:100"]));
    let polar = read_rpt1(dir.join("data/scene_0000/polar3d.rpt")).unwrap();
    let cloud = read_rpc1(dir.join("data/scene_0000/cloud_percentile-100.rpc")).unwrap();
    assert_eq!(cloud.len(), polar.data.len());
    assert!(out.contains("percentile:100"), "{out}");
}

#[test]
fn zero_learning_rate_keeps_initial_weights() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulate_golden(dir);
    ok(p2t(dir, &["extract", "--data", "data", "--method", "percentile:1"]));
    let mut text = fs::read_to_string(dir.join("data/config.txt")).unwrap();
    text = text.replace("train.learning_rate = 0.001", "train.learning_rate = 0");
    fs::write(dir.join("lr0.txt"), &text).unwrap();
    ok(p2t(
        dir,
        &["--config", "lr0.txt", "train", "--data", "data", "--method", "percentile:1", "--out", "run", "--steps", "2"],
    ));
    let trained = read_checkpoint(dir.join("run/checkpoint.p2t")).unwrap();
    let ov = Overrides {
        config: Some(dir.join("lr0.txt")),
        ..Overrides::default()
    };
    let init = new_trainer(&ov.resolve(&dir.join("data")).unwrap()).unwrap().to_checkpoint().unwrap();
    assert_eq!(trained.arrays, init.arrays);
    assert_eq!(csv_rows(&dir.join("run/loss.csv")).len(), 2);
}

#[test]
fn eval_without_checkpoint_scores_ground_truth_perfectly() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulate_golden(dir);
    ok(p2t(dir, &["extract", "--data", "data", "--method", "percentile:1"]));
    ok(p2t(dir, &["eval", "--data", "data", "--method", "percentile:1", "--out", "eval"]));
    let header = fs::read_to_string(dir.join("eval/frames.csv")).unwrap();
    assert!(header.starts_with("scene,pcd_percent,psnr_db,ssim\n"));
    for row in csv_rows(&dir.join("eval/frames.csv")) {
        assert_eq!(row[2], "inf");
        assert!((row[3].parse::<f64>().unwrap() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn eval_agrees_with_library_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(p2t(dir, &["--seed", "5", "--grid-voxel", "1.6", "simulate", "--out", "data", "--scenes", "2"]));
    ok(p2t(dir, &["extract", "--data", "data", "--method", "cfar:5"]));
    ok(p2t(dir, &["train", "--data", "data", "--method", "cfar:5", "--out", "run", "--steps", "1"]));
    ok(p2t(dir, &["eval", "--data", "data", "--method", "cfar:5", "--checkpoint", "run", "--out", "eval"]));
    let rows = csv_rows(&dir.join("eval/frames.csv"));
    assert_eq!(rows.len(), 2);
    for row in rows {
        let cube = |p: PathBuf| {
            let t = read_rpt1(p).unwrap();
            CubeTensor::from_vec(t.dims.clone().try_into().unwrap(), t.to_f64()).unwrap()
        };
        let gen = cube(dir.join("eval").join(format!("{}_gen.rpt", row[0])));
        let gt = cube(dir.join("data").join(&row[0]).join("gt.rpt"));
        let m = evaluate_frame(&gen, &gt).unwrap();
        assert!((row[2].parse::<f64>().unwrap() - m.psnr_db).abs() < 1e-5, "{row:?} vs {m:?}");
        assert!((row[3].parse::<f64>().unwrap() - m.ssim).abs() < 1e-5, "{row:?} vs {m:?}");
        assert!(dir.join("eval/bev").join(format!("{}_gen.pgm", row[0])).is_file());
    }
}

#[test]
fn report_reproduces_reference_scores() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let table = fixture("reference_scores.csv");
    let stdout = ok(p2t(dir, &["report", table.to_str().unwrap(), "--out", "rep"]));
    assert!(stdout.contains("DES"), "{stdout}");
    let des: Vec<f64> = csv_rows(&dir.join("rep/report.csv")).iter().map(|r| r[7].parse().unwrap()).collect();
    for (got, want) in des.iter().zip([0.33, 0.11, 0.00, 0.48, 0.22, 0.05]) {
        assert!((got - want).abs() <= 0.005, "{des:?}");
    }
}

#[test]
fn report_is_order_independent_and_warns_on_single_row() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let text = fs::read_to_string(fixture("reference_scores.csv")).unwrap();
    let mut lines: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    let header = lines.remove(0);
    lines.reverse();
    fs::write(dir.join("rev.csv"), format!("{header}\n{}\n", lines.join("\n"))).unwrap();
    ok(p2t(dir, &["report", fixture("reference_scores.csv").to_str().unwrap(), "--out", "a"]));
    ok(p2t(dir, &["report", "rev.csv", "--out", "b"]));
    assert_eq!(fs::read(dir.join("a/report.csv")).unwrap(), fs::read(dir.join("b/report.csv")).unwrap());

    fs::write(dir.join("one.csv"), format!("{header}\n{}\n", lines[0])).unwrap();
    let stdout = ok(p2t(dir, &["report", "one.csv", "--out", "c"]));
    assert!(stdout.contains("warning"), "{stdout}");
    let row = &csv_rows(&dir.join("c/report.csv"))[0];
    assert_eq!(&row[5..], ["0.0000", "0.0000", "0.0000"]);
}

#[test]
fn bev_pgm_matches_pixel_oracle() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulate_golden(dir);
    ok(p2t(dir, &["bev", "--cube", "data/scene_0000/gt.rpt", "--out", "gt.pgm"]));
    let t = read_rpt1(dir.join("data/scene_0000/gt.rpt")).unwrap();
    let [nx, ny, nz]: [usize; 3] = t.dims.clone().try_into().unwrap();
    let bytes = fs::read(dir.join("gt.pgm")).unwrap();
    let header = format!("P5\n{nx} {ny}\n255\n");
    assert!(bytes.starts_with(header.as_bytes()));
    let pixels = &bytes[header.len()..];
    assert_eq!(pixels.len(), nx * ny);
    let values = t.to_f64();
    for y in 0..ny {
        for x in 0..nx {
            let mean: f64 = (0..nz).map(|z| values[(x * ny + y) * nz + z]).sum::<f64>() / nz as f64;
            let want = (255.0 * mean.clamp(0.0, 1.0)).round() as u8;
            assert_eq!(pixels[y * nx + x], want, "pixel ({x}, {y})");
        }
    }
    let bev = mean_pool_height(&CubeTensor::from_vec([nx, ny, nz], values).unwrap());
    assert_eq!((bev.nx, bev.ny), (48, 20));
}

#[test]
fn constant_cube_gives_constant_gray() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let t = p2t_core::format::RawTensor::new(vec![4, 3, 2], vec![0.5; 24]).unwrap();
    p2t_core::format::write_rpt1(dir.join("c.rpt"), &t).unwrap();
    ok(p2t(dir, &["bev", "--cube", "c.rpt", "--out", "c.pgm"]));
    let bytes = fs::read(dir.join("c.pgm")).unwrap();
    assert_eq!(bytes, [b"P5\n4 3\n255\n".as_slice(), &[128u8; 12]].concat());
}

#[test]
fn exit_codes_follow_error_class() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let code = |args: &[&str]| p2t(dir, args).status.code().unwrap();

    assert_eq!(code(&["simulate"]), 2);
    assert_eq!(code(&["train", "--data", "x", "--method", "median:3", "--out", "r"]), 2);
    fs::write(dir.join("bad.txt"), "grid.voxel_size = -1\n").unwrap();
    assert_eq!(code(&["--config", "bad.txt", "simulate", "--out", "d"]), 2);
    fs::write(dir.join("typo.txt"), "radar.nonsense = 3\n").unwrap();
    assert_eq!(code(&["--config", "typo.txt", "simulate", "--out", "d"]), 2);

    assert_eq!(code(&["extract", "--data", "missing", "--method", "percentile:1"]), 3);
    simulate_golden(dir);
    let gt = dir.join("data/scene_0000/gt.rpt");
    let mut bytes = fs::read(&gt).unwrap();
    bytes[20] ^= 0x40;
    fs::write(&gt, bytes).unwrap();
    assert_eq!(code(&["bev", "--cube", "data/scene_0000/gt.rpt", "--out", "x.pgm"]), 3);

}

#[test]
fn diverging_training_exits_with_numeric_code() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulate_golden(dir);
    ok(p2t(dir, &["extract", "--data", "data", "--method", "percentile:1"]));
    let cfg = fs::read_to_string(dir.join("data/config.txt")).unwrap();
    fs::write(dir.join("huge.txt"), cfg.replace("train.learning_rate = 0.001", "train.learning_rate = 1e300")).unwrap();
    let out = p2t(
        dir,
        &["--config", "huge.txt", "train", "--data", "data", "--method", "percentile:1", "--out", "r", "--steps", "4"],
    );
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn p2t_threads_must_be_positive() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_p2t"))
        .args(["report", fixture("reference_scores.csv").to_str().unwrap()])
        .current_dir(tmp.path())
        .env("P2T_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
