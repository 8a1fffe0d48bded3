use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_eigalign");

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(BIN).args(args).current_dir(cwd).output().expect("spawn eigalign")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

#[test]
fn unknown_flag_is_rejected_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["heatmap", "--smaples", "3"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: unknown flag --smaples"), "{err}");
}

#[test]
fn unknown_config_key_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.txt"), "samples = 4\nsmaples = 3\n").unwrap();
    let o = run(&["heatmap", "--config", "c.txt", "--run-dir", "r"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: validation: unknown key 'smaples'"), "{}", stderr(&o));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.txt"), "samples = 4\nlatent-dim = 3\n").unwrap();
    let o = run(&["heatmap", "--config", "c.txt", "--samples", "2", "--run-dir", "r"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let resolved = String::from_utf8(read(dir.path().join("r/config.txt"))).unwrap();
    assert!(resolved.contains("samples = 2\n"));
    assert!(resolved.contains("latent_dim = 3\n"));
}

#[test]
fn invalid_values_are_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["heatmap", "--samples", "many", "--run-dir", "a"][..],
        &["train", "--k", "9", "--run-dir", "b"],
        &["train", "--flow", "sideways", "--run-dir", "c"],
        &["render-shapes", "--scale", "7", "--run-dir", "d"],
    ] {
        let o = run(args, dir.path());
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        assert!(stderr(&o).starts_with("error: validation:"), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn missing_files_are_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["heatmap", "--generator", "matrix:absent.csv", "--run-dir", "r"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).starts_with("error: io:"));
    let o = run(&["heatmap", "--config", "absent.txt"], dir.path());
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn axis_aligned_matrix_gives_identity_heatmap() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("a.csv"), "3,0,0\n0,2,0\n0,0,1\n0,0,0\n").unwrap();
    let o = run(&["heatmap", "--generator", "matrix:a.csv", "--samples", "1", "--run-dir", "r"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = String::from_utf8(read(dir.path().join("r/heatmap.csv"))).unwrap();
    let rows: Vec<Vec<f64>> = csv.lines().map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 3);
    for (i, row) in rows.iter().enumerate() {
        for (j, &x) in row.iter().enumerate() {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((x - want).abs() < 1e-12, "F[{i}][{j}] = {x}");
        }
    }
    assert!(String::from_utf8_lossy(&o.stdout).contains("diagonal_mean,1e0"));
    assert!(dir.path().join("r/heatmap.pgm").exists());
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [(&[&str], &str); 3] = [
        (&["train", "--updates", "15", "--batch", "8", "--timing", "false"], "metrics.csv"),
        (&["trace-path", "--steps", "40", "--seed", "3"], "trajectory.csv"),
        (&["heatmap", "--samples", "5"], "heatmap.csv"),
    ];
    for (n, (args, file)) in cases.iter().enumerate() {
        let mut outputs = Vec::new();
        for rep in 0..2 {
            let rd = format!("run{n}-{rep}");
            let mut full = args.to_vec();
            full.extend(["--run-dir", rd.as_str()]);
            let o = run(&full, dir.path());
            assert!(o.status.success(), "{args:?}: {}", stderr(&o));
            outputs.push(read(dir.path().join(&rd).join(file)));
        }
        assert_eq!(outputs[0], outputs[1], "{args:?}");
    }
}

#[test]
fn sprite_path_parameters_trace_from_a_trained_generator() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["train", "--updates", "3", "--batch", "4", "--run-dir", "g"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(
        &["trace-path", "--generator", "g", "--alpha", "5e-3", "--rho", "0.99", "--steps", "60", "--frame-every", "20", "--run-dir", "p"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = String::from_utf8(read(dir.path().join("p/trajectory.csv"))).unwrap();
    assert_eq!(csv.lines().count(), 1 + 61);
    for i in [0, 20, 40, 60] {
        let f = read(dir.path().join(format!("p/frames/frame_{i:05}.pgm")));
        assert!(f.starts_with(b"P5\n16 16\n255\n"));
    }
}

#[test]
fn negated_trace_walks_the_opposite_ray() {
    let dir = tempfile::tempdir().unwrap();
    let z = "0.3,-0.2,0.5,0.1";
    for (rd, extra) in [("fwd", None), ("back", Some("--negate"))] {
        let mut args = vec!["trace-path", "--z", z, "--steps", "1", "--frame-every", "0", "--run-dir", rd];
        args.extend(extra);
        assert!(run(&args, dir.path()).status.success());
    }
    let second = |rd: &str| -> Vec<f64> {
        let csv = String::from_utf8(read(dir.path().join(rd).join("trajectory.csv"))).unwrap();
        csv.lines().nth(2).unwrap().split(',').skip(1).map(|x| x.parse().unwrap()).collect()
    };
    let z0: Vec<f64> = z.split(',').map(|x| x.parse().unwrap()).collect();
    let (f, b) = (second("fwd"), second("back"));
    for i in 0..4 {
        assert!(((f[i] - z0[i]) + (b[i] - z0[i])).abs() < 1e-12);
    }
}

#[test]
fn inverted_encoder_feeds_the_metric() {
    let dir = tempfile::tempdir().unwrap();
    let steps = [
        &["train", "--updates", "2", "--batch", "4", "--run-dir", "g"][..],
        &["invert", "--generator", "g", "--steps", "5", "--run-dir", "e"],
        &["metric", "--encoder", "e", "--train-steps", "5", "--eval-instances", "8", "--n-inst", "4", "--run-dir", "m"],
    ];
    for args in steps {
        let o = run(args, dir.path());
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    }
    let losses = String::from_utf8(read(dir.path().join("e/losses.csv"))).unwrap();
    assert_eq!(losses.lines().count(), 1 + 5);
    let score = String::from_utf8(read(dir.path().join("m/score.csv"))).unwrap();
    assert!(score.starts_with("score,stderr,train_steps,eval_instances,seed\n"));
}

#[test]
fn render_sweep_writes_one_frame_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["render-shapes", "--side", "32", "--sweep", "symbol", "--run-dir", "r"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    for i in 0..3 {
        assert!(dir.path().join(format!("r/shape_{i:05}.pgm")).exists());
    }
    assert!(!dir.path().join("r/shape_00003.pgm").exists());
    let factors = String::from_utf8(read(dir.path().join("r/factors.csv"))).unwrap();
    assert_eq!(factors.lines().count(), 4);
}

#[test]
fn default_run_dir_is_timestamped_under_out_root() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["heatmap", "--samples", "1", "--seed", "7", "--out-root", "out"], dir.path());
    assert!(o.status.success());
    let names: Vec<String> = std::fs::read_dir(dir.path().join("out"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(names.len(), 1);
    assert!(names[0].ends_with("-heatmap-seed7"), "{names:?}");
}
