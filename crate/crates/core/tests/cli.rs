use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use camcomp::evalkit::psnr;
use camcomp::formats::{self, BitDepth};
use camcomp::trainer::split_by_scene;
use camcomp::{Image, Mask};

fn camcomp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_camcomp")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = camcomp(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

/// A small dataset and a briefly trained network shared by the tests.
fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let f = Fixture { _dir: dir, root };
        ok(&["synth", "--count", "5", "--width", "24", "--height", "20", "--seed", "3", "--out", s(&f.path("scenes"))]);
        ok(&["simulate", "--raw-dir", s(&f.path("scenes")), "--pipelines", "2", "--seed", "9", "--out", s(&f.path("data"))]);
        let config = "hidden = 8\nshared_dim = 8\nbatch_size = 2\ncrop_min = 16\ncrop_out = 16\nsteps = 40\neval_interval = 10\nlearning_rate = 0.005\n";
        fs::write(f.path("train.toml"), config).unwrap();
        ok(&["train", "--data", s(&f.path("data")), "--config", s(&f.path("train.toml")), "--out", s(&f.path("w.bin"))]);
        f
    })
}

#[test]
fn calibrate_writes_a_reloadable_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let patches = dir.path().join("p.txt");
    let rows: Vec<String> = [[0.1, 0.2, 0.3], [0.5, 0.1, 0.2], [0.3, 0.7, 0.1], [0.9, 0.8, 0.6], [0.2, 0.4, 0.9]]
        .iter()
        .map(|c| format!("{} {} {} {} {} {}", c[0], c[1], c[2], c[0], c[1], c[2]))
        .collect();
    fs::write(&patches, format!("# identity chart\n{}\n", rows.join("\n"))).unwrap();
    let out = dir.path().join("m.toml");
    ok(&["calibrate", "--patches", s(&patches), "--out", s(&out)]);
    let (fit, black) = formats::parse_color_matrix(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(black, [0.0; 3]);
    for r in 0..3 {
        for c in 0..4 {
            let expected = if r == c { 1.0 } else { 0.0 };
            assert!((fit.matrix.rows[r][c] - expected).abs() < 1e-12);
        }
    }
    let refit = camcomp::calibrate::fit_color_matrix(&formats::read_patches(&patches, [0.0; 3]).unwrap()).unwrap();
    assert_eq!(fit, refit);

    fs::write(&patches, rows[..3].join("\n")).unwrap();
    let bad = camcomp(&["calibrate", "--patches", s(&patches), "--out", s(&out)]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("ill-posed"));
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["raw", "jpeg"] {
        for p in formats::list_pngs(&dir.join(sub)).unwrap() {
            out.push((format!("{sub}/{}", p.file_name().unwrap().to_str().unwrap()), fs::read(&p).unwrap()));
        }
    }
    out.push(("specs.json".into(), fs::read(dir.join("specs.json")).unwrap()));
    out
}

#[test]
fn simulate_writes_the_dataset_layout_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = dir.path().join("scenes");
    ok(&["synth", "--count", "2", "--width", "12", "--height", "10", "--out", s(&scenes)]);
    for name in ["a", "b"] {
        ok(&["simulate", "--raw-dir", s(&scenes), "--pipelines", "3", "--seed", "5", "--out", s(&dir.path().join(name))]);
    }
    let a = tree(&dir.path().join("a"));
    assert_eq!(a.iter().filter(|(n, _)| n.starts_with("jpeg/")).count(), 6);
    assert!(a.iter().any(|(n, _)| n == "jpeg/0001_002.png"));
    assert_eq!(a, tree(&dir.path().join("b")));

    let zero = camcomp(&["simulate", "--raw-dir", s(&scenes), "--pipelines", "0", "--out", s(&dir.path().join("c"))]);
    assert!(!zero.status.success());
    fs::create_dir(dir.path().join("empty")).unwrap();
    let empty = camcomp(&["simulate", "--raw-dir", s(&dir.path().join("empty")), "--pipelines", "2", "--out", s(&dir.path().join("d"))]);
    assert!(!empty.status.success());
}

#[test]
fn train_writes_weights_and_metrics() {
    let f = fixture();
    let log = fs::read_to_string(f.path("w.metrics.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines.len(), 40 / 10 + 1);
    assert_eq!(lines[0], camcomp::trainer::METRICS_HEADER);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 5));
    let w = formats::load_weights(&f.path("w.bin"), None).unwrap();
    w.validate().unwrap();
    assert_eq!(w.arch.hidden, 8);
}

#[test]
fn train_rejects_bad_configs() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "learning_rate = 0.0\n").unwrap();
    let out = camcomp(&["train", "--data", s(&f.path("data")), "--config", s(&cfg), "--out", s(&dir.path().join("w"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn translate_handles_each_direction() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let w = f.path("w.bin");
    let photo = dir.path().join("odd.png");
    let img = camcomp::pipesim::synthetic_scene(37, 23, 8);
    formats::write_image(&photo, &img, BitDepth::Eight).unwrap();
    let raw_out = dir.path().join("raw.png");
    ok(&["translate", "--weights", s(&w), "--in", s(&photo), "--direction", "jpeg2raw", "--out", s(&raw_out)]);
    let raw = formats::read_image(&raw_out).unwrap();
    assert_eq!((raw.width(), raw.height()), (37, 23));

    let missing = camcomp(&["translate", "--weights", s(&w), "--in", s(&raw_out), "--direction", "raw2jpeg", "--out", s(&dir.path().join("j.png"))]);
    assert_eq!(missing.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&missing.stderr);
    assert!(stderr.contains("--condition") && stderr.contains("Usage"), "{stderr}");

    for condition in ["self", s(&photo)] {
        let out = dir.path().join("j.png");
        ok(&["translate", "--weights", s(&w), "--in", s(&raw_out), "--direction", "raw2jpeg", "--condition", condition, "--out", s(&out)]);
        assert_eq!(formats::read_image(&out).unwrap().width(), 37);
    }
}

#[test]
fn cycle_matches_the_training_log() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let samples = formats::read_dataset(&f.path("data")).unwrap();
    let (_, val) = split_by_scene(&samples, 0);
    let mut total = 0.0;
    for &i in &val {
        let name = formats::jpeg_file_name(samples[i].scene, samples[i].spec.id);
        let input = f.path("data").join("jpeg").join(&name);
        let out = dir.path().join(&name);
        ok(&["translate", "--weights", s(&f.path("w.bin")), "--in", s(&input), "--direction", "cycle", "--out", s(&out)]);
        total += psnr(&formats::read_image(&out).unwrap(), &samples[i].jpeg).unwrap();
    }
    let cli_psnr = total / val.len() as f64;
    let log = fs::read_to_string(f.path("w.metrics.csv")).unwrap();
    let rows: Vec<Vec<f64>> =
        log.lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    let best = rows.iter().max_by(|a, b| (a[2] + a[3] + a[4]).total_cmp(&(b[2] + b[3] + b[4]))).unwrap();
    assert!(cli_psnr >= best[4] - 2.0, "cli {cli_psnr} vs logged {}", best[4]);
}

#[test]
fn composite_respects_the_mask() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let w = f.path("w.bin");
    let photo = f.path("data").join("jpeg").join("0000_000.png");
    let object = dir.path().join("object.png");
    formats::write_image(&object, &camcomp::pipesim::synthetic_scene(24, 20, 77), BitDepth::Sixteen).unwrap();

    let black = dir.path().join("black.png");
    formats::write_mask(&black, &Mask::filled(24, 20, 0.0).unwrap()).unwrap();
    let out = dir.path().join("out.png");
    let dump = dir.path().join("dump");
    ok(&["composite", "--weights", s(&w), "--photo", s(&photo), "--object", s(&object), "--mask", s(&black), "--out", s(&out), "--dump-intermediates", s(&dump)]);
    assert_eq!(formats::read_image(&out).unwrap(), formats::read_image(&photo).unwrap());
    assert_eq!(fs::read(&out).unwrap(), fs::read(&photo).unwrap());
    assert_eq!(fs::read_dir(&dump).unwrap().count(), 3);

    let soft = dir.path().join("soft.png");
    let values = (0..480).map(|i| ((i % 24) as f32 / 23.0 * 255.0).round() / 255.0).collect();
    formats::write_mask(&soft, &Mask::new(24, 20, values).unwrap()).unwrap();
    ok(&["composite", "--weights", s(&w), "--photo", s(&photo), "--object", s(&object), "--mask", s(&soft), "--out", s(&out)]);
    let result: Image = formats::read_image(&out).unwrap();
    let original = formats::read_image(&photo).unwrap();
    assert_eq!(result.pixel(0, 5), original.pixel(0, 5));

    let small = dir.path().join("small.png");
    formats::write_mask(&small, &Mask::filled(10, 10, 1.0).unwrap()).unwrap();
    let bad = camcomp(&["composite", "--weights", s(&w), "--photo", s(&photo), "--object", s(&object), "--mask", s(&small), "--out", s(&out)]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn eval_reports_three_directions() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.csv");
    ok(&["eval", "--weights", s(&f.path("w.bin")), "--data", s(&f.path("data")), "--report", s(&report)]);
    let text = fs::read_to_string(&report).unwrap();
    assert_eq!(text.lines().next().unwrap(), "metric,RAW→JPEG,JPEG→RAW,Cycle(JPEG)");
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn swap_with_itself_matches_cycle_files() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let photo = f.path("data").join("jpeg").join("0002_001.png");
    let swap_dir = dir.path().join("swap");
    ok(&["swap", "--weights", s(&f.path("w.bin")), "--a", s(&photo), "--b", s(&photo), "--out-dir", s(&swap_dir)]);
    let cycle = dir.path().join("cycle.png");
    ok(&["translate", "--weights", s(&f.path("w.bin")), "--in", s(&photo), "--direction", "cycle", "--out", s(&cycle)]);
    let expected = fs::read(&cycle).unwrap();
    assert_eq!(fs::read(swap_dir.join("a_swapped.png")).unwrap(), expected);
    assert_eq!(fs::read(swap_dir.join("b_swapped.png")).unwrap(), expected);
}

#[test]
fn missing_inputs_and_bad_flags_fail() {
    let dir = tempfile::tempdir().unwrap();
    let nothing = dir.path().join("nothing.bin");
    let out = camcomp(&["eval", "--weights", s(&nothing), "--data", s(dir.path()), "--report", s(&dir.path().join("r"))]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(camcomp(&["translate", "--bogus"]).status.code(), Some(1));
    assert_eq!(camcomp(&[]).status.code(), Some(1));
    assert_eq!(camcomp(&["--help"]).status.code(), Some(0));
}

#[test]
fn weights_files_round_trip_through_the_loader() {
    let f = fixture();
    let bytes = fs::read(f.path("w.bin")).unwrap();
    let w = formats::weights_from_bytes(&bytes, None).unwrap();
    assert_eq!(formats::weights_to_bytes(&w), bytes);
}
