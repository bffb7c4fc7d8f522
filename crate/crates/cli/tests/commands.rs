use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use checkerfree::analysis::checkerboard_map;
use checkerfree::image_io::{read_image, write_image, Image};
use checkerfree::srnet::{apply_approach_a, save_checkpoint, NetworkConfig, SrNet};
use checkerfree::tensor::{write_tensors, Tensor};
use serde_json::Value;

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_checkerfree"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("spawn checkerfree")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| {
        panic!("bad JSON ({e}): {}", String::from_utf8_lossy(&o.stdout))
    })
}

fn small_net(preset: &str, u: usize, seed: u64) -> SrNet {
    let mut cfg = NetworkConfig::preset(preset, u).unwrap();
    cfg.n1 = 6;
    cfg.n2 = 4;
    cfg.seed = seed;
    SrNet::init(&cfg).unwrap()
}

fn checkpoint(dir: &Path, name: &str, net: &SrNet) -> PathBuf {
    let p = dir.join(format!("{name}.ckf"));
    save_checkpoint(net, &p).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

// lint

#[test]
fn lint_passes_approach_c_and_fails_plain_deconv() {
    let dir = tempfile::tempdir().unwrap();
    let c = checkpoint(dir.path(), "c", &small_net("deconv_h0_c", 4, 1));
    let o = run(&["lint", "--weights", s(&c), "--json"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = stdout_json(&o);
    assert_eq!(r["pass"], true);
    assert_eq!(r["channels"].as_array().unwrap().len(), 4);
    assert!(r["channels"].as_array().unwrap().iter().all(|ch| ch["h0_factor"] == "exact"));
    assert!(dir.path().join("lint.manifest.json").exists());

    let d = checkpoint(dir.path(), "d", &small_net("deconv", 4, 2));
    let o = run(&["lint", "--weights", s(&d)], dir.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn lint_handles_subpixel_and_approach_a() {
    let dir = tempfile::tempdir().unwrap();
    for (preset, expected) in [("subpixel", 1), ("subpixel_h0_b", 0), ("subpixel_h0_a", 0), ("deconv_h0_b", 0), ("resize_conv", 0)] {
        let p = checkpoint(dir.path(), preset, &small_net(preset, 3, 5));
        let o = run(&["lint", "--weights", s(&p)], dir.path());
        assert_eq!(code(&o), expected, "{preset}: {}", String::from_utf8_lossy(&o.stdout));
    }
    let a = apply_approach_a(&small_net("deconv", 2, 3)).unwrap();
    let p = checkpoint(dir.path(), "a", &a);
    assert_eq!(code(&run(&["lint", "--weights", s(&p)], dir.path())), 0);
}

#[test]
fn lint_bare_kernel_files() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, t: &Tensor| {
        let p = dir.path().join(name);
        write_tensors(BufWriter::new(File::create(&p).unwrap()), &[t]).unwrap();
        p
    };
    // [1, 2, 1] * H0(3)
    let good = write("good.ckf", &Tensor::new(vec![5], vec![1.0, 3.0, 4.0, 3.0, 1.0]).unwrap());
    let o = run(&["lint", "--weights", s(&good), "--factor", "3", "--json"], dir.path());
    assert_eq!(code(&o), 0);
    assert_eq!(stdout_json(&o)["channels"][0]["quotient_shape"], serde_json::json!([1, 3]));

    let bad = write("bad.ckf", &Tensor::new(vec![4], vec![1.0, 2.0, 1.0, 2.0]).unwrap());
    assert_eq!(code(&run(&["lint", "--weights", s(&bad), "--factor", "2"], dir.path())), 1);

    let o = run(&["lint", "--weights", s(&bad), "--factor", "1"], dir.path());
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("no constraint"));

    // no factor for a bare file, mis-shaped tensor, garbage file
    assert_eq!(code(&run(&["lint", "--weights", s(&bad)], dir.path())), 2);
    let odd = write("odd.ckf", &Tensor::zeros(&[2, 2, 3, 3]));
    assert_eq!(code(&run(&["lint", "--weights", s(&odd), "--factor", "2"], dir.path())), 2);
    let junk = dir.path().join("junk.ckf");
    std::fs::write(&junk, b"garbage").unwrap();
    let o = run(&["lint", "--weights", s(&junk), "--factor", "2"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

// analyze

#[test]
fn analyze_corrected_preset_scores_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["analyze", "--preset", "deconv_h0_b", "--factor", "4", "--seed", "3", "--json"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = stdout_json(&o);
    assert!(r["report"]["score"].as_f64().unwrap() <= 1e-9);
    assert_eq!(r["report"]["U"], 4);

    let o = run(&["analyze", "--preset", "deconv", "--factor", "4", "--seed", "3"], dir.path());
    assert_eq!(code(&o), 1);
}

#[test]
fn analyze_bias_checkerboard_toy() {
    let dir = tempfile::tempdir().unwrap();
    let mut net = small_net("subpixel", 2, 0);
    net.upsampler.weight = net.upsampler.weight.map(|_| 0.0);
    net.upsampler.bias = Tensor::new(vec![4], vec![0.1, 0.6, 0.1, 0.1]).unwrap();
    let p = checkpoint(dir.path(), "toy", &net);
    let o = run(&["analyze", "--weights", s(&p), "--json"], dir.path());
    assert_eq!(code(&o), 1);
    let score = stdout_json(&o)["report"]["score"].as_f64().unwrap();
    assert!((score - 0.5).abs() < 1e-12, "{score}");
}

#[test]
fn analyze_too_small_input_hints_minimum() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["analyze", "--preset", "deconv", "--factor", "2", "--input-size", "2"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("use at least"));
}

#[test]
fn analyze_writes_heatmap_and_reproducible_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("in.png");
    write_image(&img, &Image::gray(checkerfree::srnet::synthetic_image(3, 24, 24))).unwrap();
    let args = ["analyze", "--preset", "subpixel", "--factor", "2", "--seed", "9", "--image", s(&img)];
    let a = run(&args, dir.path());
    assert_eq!(code(&a), 1);
    assert!(dir.path().join("analyze_heatmap.png").exists());
    let first = std::fs::read(dir.path().join("analyze.json")).unwrap();
    let man1: Value = serde_json::from_slice(&std::fs::read(dir.path().join("analyze.manifest.json")).unwrap()).unwrap();
    run(&args, dir.path());
    assert_eq!(first, std::fs::read(dir.path().join("analyze.json")).unwrap());
    let man2: Value = serde_json::from_slice(&std::fs::read(dir.path().join("analyze.manifest.json")).unwrap()).unwrap();
    assert_eq!(man1["config"], man2["config"]);
    assert_eq!(man1["command"], "analyze");
}

// train

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn train_is_deterministic_and_reduces_loss() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "run.json",
        r#"{"version": 1, "preset": "deconv_h0_b", "factor": 4,
            "training": {"iterations": 200, "seed": 1},
            "dataset": {"synthetic": {"count": 3, "size": 144, "seed": 7}}}"#,
    );
    let (o1, o2) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&o1, &o2] {
        let o = run(&["train", "--config", s(&cfg), "--json"], out);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let r = stdout_json(&o);
        assert_eq!(r["loss_decreased"], true);
        assert_eq!(r["iterations"], 200);
    }
    let csv = std::fs::read_to_string(o1.join("loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 201);
    assert_eq!(csv, std::fs::read_to_string(o2.join("loss.csv")).unwrap());
    assert!(o1.join("checkpoint.ckf.json").exists());
    assert!(o1.join("train.manifest.json").exists());

    // the trained checkpoint lints clean
    let ck = o1.join("checkpoint.ckf");
    assert_eq!(code(&run(&["lint", "--weights", s(&ck)], &o1)), 0);
}

#[test]
fn train_rejects_bad_configs() {
    let dir = tempfile::tempdir().unwrap();
    let c_on_subpixel = write_config(
        dir.path(),
        "bad.json",
        r#"{"version": 1,
            "network": {"upsampler": {"kind": "subpixel", "correction": "inside_h0", "factor": 2, "kernel_size": 3}},
            "dataset": {"synthetic": {}}}"#,
    );
    let o = run(&["train", "--config", s(&c_on_subpixel)], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("applicable to only deconvolution layers"));

    let unknown = write_config(
        dir.path(),
        "unknown.json",
        r#"{"version": 1, "preset": "deconv", "dataset": {"synthetic": {}}, "learning_rate": 1}"#,
    );
    assert_eq!(code(&run(&["train", "--config", s(&unknown)], dir.path())), 2);

    std::fs::create_dir_all(dir.path().join("empty/hr")).unwrap();
    let empty = write_config(
        dir.path(),
        "empty.json",
        r#"{"version": 1, "preset": "deconv", "factor": 2, "dataset": {"root": "empty"}}"#,
    );
    let o = run(&["train", "--config", s(&empty)], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("empty dataset"));
}

#[test]
fn train_reads_image_directory() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("data/hr")).unwrap();
    for i in 0..2 {
        let img = checkerfree::srnet::synthetic_image(i, 40, 40);
        write_image(&dir.path().join(format!("data/hr/{i}.pgm")), &Image::gray(img)).unwrap();
    }
    let cfg = write_config(
        dir.path(),
        "run.json",
        r#"{"version": 1, "preset": "subpixel", "factor": 2,
            "training": {"iterations": 12, "hr_patch": 16},
            "dataset": {"root": "data"}}"#,
    );
    let o = run(&["train", "--config", s(&cfg), "--checkpoint-every", "5", "--json"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout_json(&o)["images"], 2);
    assert!(dir.path().join("checkpoint_000005.ckf").exists());
    assert!(dir.path().join("checkpoint_000010.ckf").exists());
}

// sr

#[test]
fn sr_constant_input_through_corrected_net_is_flat() {
    let dir = tempfile::tempdir().unwrap();
    let p = checkpoint(dir.path(), "c", &small_net("deconv_h0_c", 2, 4));
    let input = dir.path().join("flat.pgm");
    write_image(&input, &Image::gray(Tensor::full(&[1, 1, 32, 32], 0.5))).unwrap();
    let out = dir.path().join("up.png");
    let o = run(&["sr", "--weights", s(&p), "--input", s(&input), "--output", s(&out)], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let y = read_image(&out).unwrap().channels[0].clone();
    let (h, w) = y.plane_dims().unwrap();
    assert_eq!((h, w), (64, 64));
    let map = checkerboard_map(&y, 2).unwrap();
    // zero padding bends the borders; the interior must be pattern-free
    let b = 20;
    for yy in b..h - b {
        for xx in b..w - b {
            assert!(map.data()[yy * w + xx] <= 1e-6);
        }
    }
}

#[test]
fn sr_factor_one_matches_the_plain_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let net = small_net("deconv", 1, 6);
    let p = checkpoint(dir.path(), "id", &net);
    let img = checkerfree::srnet::synthetic_image(5, 20, 20);
    let input = dir.path().join("in.png");
    write_image(&input, &Image::gray(img)).unwrap();
    let out = dir.path().join("out.png");
    assert_eq!(code(&run(&["sr", "--weights", s(&p), "--input", s(&input), "--output", s(&out)], dir.path())), 0);

    let x = read_image(&input).unwrap().channels[0].clone();
    let expected = dir.path().join("expected.png");
    write_image(&expected, &Image::gray(net.forward(&x).unwrap())).unwrap();
    assert_eq!(read_image(&out).unwrap(), read_image(&expected).unwrap());
}

#[test]
fn sr_corrected_net_has_less_checkerboard_and_reports_psnr() {
    let dir = tempfile::tempdir().unwrap();
    let plain = small_net("subpixel", 2, 8);
    let fixed = apply_approach_a(&plain).unwrap();
    let (pp, pf) = (checkpoint(dir.path(), "p", &plain), checkpoint(dir.path(), "f", &fixed));
    let hr = checkerfree::srnet::synthetic_image(11, 48, 48);
    let lr = checkerfree::srnet::bicubic_downscale(&hr, 2).unwrap();
    let (input, reference) = (dir.path().join("lr.png"), dir.path().join("hr.png"));
    write_image(&input, &Image::gray(lr.clone())).unwrap();
    let rgb = Image {
        channels: vec![hr.clone(), hr.clone(), hr.clone()],
    };
    write_image(&reference, &rgb).unwrap();

    let mean = |w: &Path| {
        let o = run(&["sr", "--weights", s(w), "--input", s(&input), "--reference", s(&reference), "--json"], dir.path());
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let r = stdout_json(&o);
        assert!(r["psnr_y"].as_f64().unwrap().is_finite());
        r["checkerboard_map_mean"].as_f64().unwrap()
    };
    assert!(mean(&pf) < mean(&pp));

    // RGB input is upscaled through Y with bicubic chroma
    let rgb_in = dir.path().join("rgb.png");
    write_image(&rgb_in, &Image { channels: vec![lr.clone(), lr.scale(0.5), lr.map(|v| 1.0 - v)] }).unwrap();
    let out = dir.path().join("rgb_up.png");
    assert_eq!(code(&run(&["sr", "--weights", s(&pf), "--input", s(&rgb_in), "--output", s(&out)], dir.path())), 0);
    let up = read_image(&out).unwrap();
    assert!(up.is_rgb());
    assert_eq!(up.dims(), (48, 48));

    // reference of the wrong size
    let o = run(&["sr", "--weights", s(&pf), "--input", s(&input), "--reference", s(&input)], dir.path());
    assert_eq!(code(&o), 2);
}

// bench

#[test]
fn bench_writes_csv_and_checks_repeats() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &["bench", "--networks", "deconv,deconv_h0_b,resize_conv", "--sizes", "12x9,16x16", "--repeats", "3", "--json"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = stdout_json(&o);
    assert_eq!(r["rows"].as_array().unwrap().len(), 6);
    let csv = std::fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
    assert!(csv.starts_with("network,width,height,median_seconds,repeats"));
    assert!(dir.path().join("bench.manifest.json").exists());

    assert_eq!(code(&run(&["bench", "--repeats", "2"], dir.path())), 2);
    assert_eq!(code(&run(&["bench", "--sizes", "12by9"], dir.path())), 2);
}

#[test]
fn bench_smallest_default_size_runs_quickly() {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let o = run(&["bench", "--sizes", "69x69", "--repeats", "3"], dir.path());
    assert_eq!(code(&o), 0);
    assert!(start.elapsed().as_secs_f64() < 60.0);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("ResizeConv slowest"));
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["lint"], dir.path())), 2);
    assert_eq!(code(&run(&["analyze"], dir.path())), 2);
    assert_eq!(code(&run(&["frobnicate"], dir.path())), 2);
    assert_eq!(code(&run(&["analyze", "--preset", "nope"], dir.path())), 2);
}
