use std::path::Path;
use std::process::{Command, Output};

use patchglr::dictionary::{extract_patches, Dictionary};
use patchglr::io::{encode_pgm, read_image};
use patchglr::patch::{Image, Patch};
use patchglr::synthetic::texture;

fn patchglr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_patchglr"))
        .args(args)
        .env_remove("PATCHGLR_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Two orthogonal 4x4 atoms: a horizontal ramp and a checkerboard.
fn toy_dictionary(path: &Path) {
    let ramp: Vec<f64> = (0..16).map(|i| 10.0 + 5.0 * (i % 4) as f64).collect();
    let check: Vec<f64> = (0..16)
        .map(|i| if (i % 4 + i / 4) % 2 == 0 { 10.0 } else { 30.0 })
        .collect();
    Dictionary::new(
        vec![
            Patch::new(ramp, 4, 4).unwrap(),
            Patch::new(check, 4, 4).unwrap(),
        ],
        4,
        4,
    )
    .unwrap()
    .save(path)
    .unwrap();
}

#[test]
fn help_exits_zero() {
    let o = patchglr(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for cmd in ["dict-build", "match", "roc", "denoise"] {
        assert!(text.contains(cmd), "{text}");
    }
    assert_eq!(patchglr(&["roc", "--help"]).status.code(), Some(0));
}

#[test]
fn gamma_without_looks_names_the_flag() {
    let o = patchglr(&["roc", "--noise", "gamma", "--dict", "d", "--out", "o"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("--looks"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
}

#[test]
fn unknown_flag_and_bad_env_are_usage_errors() {
    assert_eq!(patchglr(&["roc", "--frobnicate"]).status.code(), Some(1));
    let o = Command::new(env!("CARGO_BIN_EXE_patchglr"))
        .args(["dict-build", "--out", "/nonexistent/never"])
        .env("PATCHGLR_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("PATCHGLR_THREADS"));
}

#[test]
fn dict_build_on_bundled_texture() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.pglrd");
    let o = patchglr(&["dict-build", "--k", "196", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "atoms=196 size=8x8");
    let d = Dictionary::load(&out).unwrap();
    assert_eq!((d.len(), d.patch_width(), d.patch_height()), (196, 8, 8));
}

#[test]
fn roc_on_separable_toy_dictionary() {
    let dir = tempfile::tempdir().unwrap();
    let dict = dir.path().join("toy.pglrd");
    toy_dictionary(&dict);
    let out = dir.path().join("roc.csv");
    let pairs = dir.path().join("pairs.csv");
    let args = [
        "roc",
        "--noise",
        "gaussian",
        "--sigma",
        "0.01",
        "--trials",
        "3",
        "--dict",
        s(&dict),
        "--out",
        s(&out),
        "--pairs-out",
        s(&pairs),
    ];
    let o = patchglr(&args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "auc=1.000000");
    let csv = std::fs::read_to_string(&out).unwrap();
    assert!(csv.starts_with("tau,p_fa,p_d\n"));
    assert!(csv.trim_end().ends_with("# auc=1"));
    assert_eq!(
        std::fs::read_to_string(&pairs).unwrap().lines().count(),
        1 + 3 * 4
    );

    // identical config, byte-identical files
    let first = (std::fs::read(&out).unwrap(), std::fs::read(&pairs).unwrap());
    assert_eq!(patchglr(&args).status.code(), Some(0));
    assert_eq!(
        first,
        (std::fs::read(&out).unwrap(), std::fs::read(&pairs).unwrap())
    );
}

#[test]
fn roc_output_is_thread_count_independent() {
    let dir = tempfile::tempdir().unwrap();
    let dict = dir.path().join("toy.pglrd");
    toy_dictionary(&dict);
    let mut files = Vec::new();
    for threads in ["1", "3"] {
        let out = dir.path().join(format!("roc{threads}.csv"));
        let o = patchglr(&[
            "roc",
            "--noise",
            "poisson",
            "--snr-db",
            "0",
            "--threads",
            threads,
            "--dict",
            s(&dict),
            "--out",
            s(&out),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        files.push(std::fs::read(&out).unwrap());
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn denoise_round_trip_reports_infinite_psnr() {
    let dir = tempfile::tempdir().unwrap();
    let clean = texture(16, 16, 5);
    let input = dir.path().join("clean.pgm");
    std::fs::write(&input, encode_pgm(&clean, false)).unwrap();
    let dict = dir.path().join("self.pglrd");
    Dictionary::new(extract_patches(&clean, 4, 4, 4).unwrap(), 4, 4)
        .unwrap()
        .save(&dict)
        .unwrap();
    let out = dir.path().join("out.txt");
    let o = patchglr(&[
        "denoise",
        "--noise",
        "gaussian",
        "--sigma",
        "0.001",
        "--stride",
        "4",
        "--dict",
        s(&dict),
        "--input",
        s(&input),
        "--clean",
        s(&input),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let line = stdout(&o);
    assert!(line.starts_with("psnr=+inf "), "{line}");
    assert!(
        line.contains("psnr_noisy=+inf") && line.contains("z_min="),
        "{line}"
    );
    assert_eq!(read_image(&out).unwrap(), clean);
}

#[test]
fn match_reports_the_generating_atom() {
    let dir = tempfile::tempdir().unwrap();
    let dict = dir.path().join("toy.pglrd");
    toy_dictionary(&dict);
    let d = Dictionary::load(&dict).unwrap();
    // the checkerboard atom under an affine contrast change
    let img = Image::new(4, 4, d.atoms()[1].iter().map(|v| 3.0 * v - 7.0).collect()).unwrap();
    let input = dir.path().join("x.txt");
    std::fs::write(&input, patchglr::io::encode_matrix(&img)).unwrap();
    let out = dir.path().join("m.csv");
    let o = patchglr(&[
        "match",
        "--criterion",
        "corr",
        "--noise",
        "gaussian",
        "--sigma",
        "1",
        "--dict",
        s(&dict),
        "--input",
        s(&input),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(
        stdout(&o).starts_with("windows=1 best=1 score=1.000000"),
        "{}",
        stdout(&o)
    );
    assert_eq!(
        std::fs::read_to_string(&out).unwrap().lines().next(),
        Some("x,y,atom,score")
    );
}

#[test]
fn io_errors_exit_2_without_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("roc.csv");
    let o = patchglr(&[
        "roc",
        "--noise",
        "gaussian",
        "--sigma",
        "1",
        "--dict",
        s(&dir.path().join("missing.pglrd")),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!stderr(&o).is_empty());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn numeric_errors_exit_3_without_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let dict = dir.path().join("toy.pglrd");
    toy_dictionary(&dict);
    // a zero pixel is outside the gamma domain
    let mut px = vec![50.0; 16];
    px[5] = 0.0;
    let input = dir.path().join("x.pgm");
    std::fs::write(&input, encode_pgm(&Image::new(4, 4, px).unwrap(), false)).unwrap();
    let out = dir.path().join("out.pgm");
    let o = patchglr(&[
        "denoise",
        "--noise",
        "gamma",
        "--looks",
        "10",
        "--dict",
        s(&dict),
        "--input",
        s(&input),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(!out.exists());
}
