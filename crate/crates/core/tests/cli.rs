mod common;

use std::path::Path;

use clap::CommandFactory;
use promode::cli::{run, Cli, DATA_DIR_ENV, EXIT_OK, EXIT_USAGE, EXIT_VALIDATION};
use promode::data::{read_record, write_record};

fn call(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("promode").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

fn synth(dir: &Path, seed: &str) {
    let (code, out, err) = call(&[
        "synth-corpus",
        "--out",
        dir.to_str().unwrap(),
        "--seed",
        seed,
        "--train-size",
        "4",
        "--dev-size",
        "2",
        "--test-size",
        "3",
        "--phonemes-min",
        "6",
        "--phonemes-max",
        "10",
    ]);
    assert_eq!(code, EXIT_OK, "{out}{err}");
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push((
                    p.strip_prefix(dir).unwrap().display().to_string(),
                    std::fs::read(&p).unwrap(),
                ));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn help_documents_every_flag() {
    let mut root = Cli::command();
    root.build();
    for sub in root.get_subcommands() {
        let help = sub.clone().render_long_help().to_string();
        for arg in sub.get_arguments() {
            let Some(long) = arg.get_long() else { continue };
            if long == "help" || long == "version" {
                continue;
            }
            assert!(
                help.contains(&format!("--{long}")),
                "{}: --{long} missing from help",
                sub.get_name()
            );
            let doc = arg.get_help().map(|h| h.to_string()).unwrap_or_default();
            assert!(
                !doc.trim().is_empty(),
                "{}: --{long} has no description",
                sub.get_name()
            );
        }
    }
    let (code, out, _) = call(&["train", "--help"]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("--ablate"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let (code, _, err) = call(&["validate", "--data", ".", "--bogus"]);
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("Usage"), "{err}");
    assert_eq!(call(&["--threads", "0", "gradcheck"]).0, EXIT_USAGE);
}

#[test]
fn synthesized_corpus_validates_and_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synth(a.path(), "9");
    synth(b.path(), "9");
    assert_eq!(tree_bytes(a.path()), tree_bytes(b.path()));

    let (code, out, _) = call(&["validate", "--data", a.path().to_str().unwrap()]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("0 violations"), "{out}");

    let victim = a.path().join("train/train-00000.pmr");
    let bytes = std::fs::read(&victim).unwrap();
    std::fs::write(&victim, &bytes[..bytes.len() - 7]).unwrap();
    let (code, out, _) = call(&["validate", "--data", a.path().to_str().unwrap()]);
    assert_eq!(code, EXIT_VALIDATION);
    assert!(
        out.contains("train-00000") && out.contains("1 violations"),
        "{out}"
    );
}

#[test]
fn data_directory_defaults_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "3");
    std::env::set_var(DATA_DIR_ENV, dir.path());
    let (code, out, _) = call(&["validate"]);
    std::env::remove_var(DATA_DIR_ENV);
    assert_eq!(code, EXIT_OK, "{out}");
}

#[test]
fn training_is_reproducible_and_oracle_eval_is_perfect() {
    let data = tempfile::tempdir().unwrap();
    synth(data.path(), "4");
    let d = data.path().to_str().unwrap();
    let runs = tempfile::tempdir().unwrap();
    let config = runs.path().join("run.toml");
    std::fs::write(
        &config,
        "preset = \"tiny\"\n[train]\nbatch_size = 2\ncheckpoint_every = 0\ndev_every = 2\n",
    )
    .unwrap();
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = runs.path().join(name);
        let (code, text, err) = call(&[
            "train",
            "--data",
            d,
            "--out",
            out.to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
            "--iterations",
            "3",
            "--seed",
            "8",
            "--ablate",
            "modadaln",
        ]);
        assert_eq!(code, EXIT_OK, "{text}{err}");
        outputs.push(tree_bytes(&out));
    }
    assert_eq!(outputs[0], outputs[1]);
    let resolved = std::fs::read_to_string(runs.path().join("a/config.toml")).unwrap();
    assert!(
        resolved.contains("iterations = 3") && resolved.contains("global_adaln = true"),
        "{resolved}"
    );

    let oracle_cfg = runs.path().join("oracle.toml");
    std::fs::write(&oracle_cfg, "preset = \"tiny\"\n[model]\noracle = true\n").unwrap();
    let oracle = runs.path().join("oracle");
    let (code, ..) = call(&[
        "train",
        "--data",
        d,
        "--out",
        oracle.to_str().unwrap(),
        "--config",
        oracle_cfg.to_str().unwrap(),
        "--iterations",
        "1",
        "--batch-size",
        "1",
    ]);
    assert_eq!(code, EXIT_OK);
    let report = runs.path().join("report.toml");
    let plots = runs.path().join("plots");
    let (code, out, err) = call(&[
        "eval",
        "--data",
        d,
        "--checkpoint",
        oracle.join("latest.pmc").to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
        "--plots",
        plots.to_str().unwrap(),
        "--diagnostics",
        runs.path().join("diag.toml").to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(
        out.contains("RPA = 100.0") && out.contains("RCA = 100.0"),
        "{out}"
    );
    assert_eq!(
        std::fs::read_to_string(&report).unwrap().trim_end(),
        out.trim_end()
    );
    assert_eq!(std::fs::read_dir(&plots).unwrap().count(), 3);

    let (code, out, _) = call(&["eval", "--data", d, "--baseline"]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("MAE_log"));
    assert_eq!(call(&["eval", "--data", d]).0, EXIT_USAGE);
}

#[test]
fn infer_writes_the_continuation_only() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = common::record(100, 5);
    r.phoneme_ids = vec![3, 7];
    r.durations_frames = vec![48, 52];
    assert!(r.validate().is_empty());
    let input = dir.path().join("in.pmr");
    write_record(&r, &input).unwrap();

    let data = tempfile::tempdir().unwrap();
    synth(data.path(), "6");
    let run_dir = dir.path().join("run");
    let (code, ..) = call(&[
        "train",
        "--data",
        data.path().to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
        "--preset",
        "tiny",
        "--iterations",
        "1",
        "--batch-size",
        "1",
    ]);
    assert_eq!(code, EXIT_OK);
    let output = dir.path().join("out.pmr");
    let (code, out, err) = call(&[
        "infer",
        "--checkpoint",
        run_dir.join("latest.pmc").to_str().unwrap(),
        "--record",
        input.to_str().unwrap(),
        "--split",
        "0.5",
        "--out",
        output.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK, "{out}{err}");
    let cont = read_record(&output).unwrap();
    assert_eq!(cont.frames(), 52);
    assert_eq!(cont.durations_frames, vec![52]);
    assert_eq!(
        (
            cont.f0_hz.len(),
            cont.energy_raw.len(),
            cont.mel10.len(),
            cont.vuv.len()
        ),
        (52, 52, 52, 52)
    );
}

#[test]
fn gradcheck_command_passes() {
    let (code, out, err) = call(&["gradcheck"]);
    assert_eq!(code, EXIT_OK, "{out}{err}");
    assert!(out.contains("passed"));
}
