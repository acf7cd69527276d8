use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use momentguide::features::MomentExtractor;
use momentguide::metrics::{feat_i, i_feat};
use momentguide::moments::MomentBasis;
use momentguide::pgm::{read_image, write_image};
use momentguide::Image;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_momentguide"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn blob(n: usize, cy: f64, cx: f64, r2: f64) -> Image {
    Image::from_fn(n, n, |i, j| {
        let (y, x) = (i as f64 - cy, j as f64 - cx);
        (-(x * x + y * y) / r2).exp()
    })
}

/// Two-image dataset, reference = image A, 8x8.
fn fixture(dir: &Path, extra: &str) -> PathBuf {
    std::fs::create_dir_all(dir.join("data")).unwrap();
    let a = blob(8, 2.0, 2.0, 3.0);
    write_image(&a, dir.join("data/a.pgm")).unwrap();
    write_image(&blob(8, 5.0, 5.5, 5.0), dir.join("data/b.pgm")).unwrap();
    write_image(&a, dir.join("ref.pgm")).unwrap();
    let cfg = dir.join("run.toml");
    let text = format!(
        "[run]\nseed = 11\nbatch_size = 20\n\n[image]\nheight = 8\nwidth = 8\n\n\
         [schedule]\nsteps = 40\n\n[model]\nkind = \"dataset\"\npath = \"data\"\n\n\
         [guidance]\nreference = \"ref.pgm\"\nscale = 3000.0\nrecurrence_steps = 2\n{extra}"
    );
    std::fs::write(&cfg, text).unwrap();
    cfg
}

fn report_value(dir: &Path, key: &str) -> f64 {
    let text = std::fs::read_to_string(dir.join("report.txt")).unwrap();
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}: ")))
        .unwrap_or_else(|| panic!("{key} missing"))
        .parse()
        .unwrap()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn guide_reruns_are_byte_identical_across_worker_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fixture(tmp.path(), "");
    let c = cfg.to_str().unwrap();
    let (r1, r2, r3) = (tmp.path().join("r1"), tmp.path().join("r2"), tmp.path().join("r3"));
    assert!(run(&["guide", "--config", c, "--out", r1.to_str().unwrap()]).status.success());
    assert!(run(&["guide", "--config", c, "--out", r2.to_str().unwrap()]).status.success());
    assert!(run(&["guide", "--config", c, "--out", r3.to_str().unwrap(), "--workers", "3"]).status.success());
    let (a, b) = (files(&r1), files(&r2));
    assert_eq!(a.len(), 20 + 5);
    assert_eq!(a, b);
    // only the echoed config records the worker count
    let strip = |v: Vec<(String, Vec<u8>)>| -> Vec<(String, Vec<u8>)> { v.into_iter().filter(|f| f.0 != "config.toml").collect() };
    assert_eq!(strip(files(&r3)), strip(a.clone()));
    let manifest = String::from_utf8(a.iter().find(|f| f.0 == "MANIFEST").unwrap().1.clone()).unwrap();
    assert!(manifest.contains("status: complete"));
    assert!(manifest.contains("trace.csv trace"));
    let trace = String::from_utf8(a.iter().find(|f| f.0 == "trace.csv").unwrap().1.clone()).unwrap();
    assert_eq!(trace.lines().next().unwrap(), "chain_id,t,repeat_index,loss,grad_norm");
    assert_eq!(trace.lines().count(), 1 + 20 * 40 * 2);
}

#[test]
fn seed_flag_changes_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fixture(tmp.path(), "");
    let c = cfg.to_str().unwrap();
    let (r1, r2) = (tmp.path().join("r1"), tmp.path().join("r2"));
    assert!(run(&["sample", "--config", c, "--out", r1.to_str().unwrap()]).status.success());
    assert!(run(&["sample", "--config", c, "--out", r2.to_str().unwrap(), "--seed", "12"]).status.success());
    assert_ne!(files(&r1), files(&r2));
}

#[test]
fn zero_scale_guide_matches_sample() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fixture(tmp.path(), "");
    let text = std::fs::read_to_string(&cfg).unwrap().replace("scale = 3000.0", "scale = 0.0");
    std::fs::write(&cfg, text).unwrap();
    let c = cfg.to_str().unwrap();
    let (g, s) = (tmp.path().join("g"), tmp.path().join("s"));
    assert!(run(&["guide", "--config", c, "--out", g.to_str().unwrap()]).status.success());
    assert!(run(&["sample", "--config", c, "--out", s.to_str().unwrap()]).status.success());
    let sample_files = |d: &Path| -> Vec<(String, Vec<u8>)> {
        files(d).into_iter().filter(|f| f.0.starts_with("sample_")).collect()
    };
    assert_eq!(sample_files(&g).len(), 20);
    assert_eq!(sample_files(&g), sample_files(&s));
}

#[test]
fn guidance_raises_fidelity_over_paired_unguided_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fixture(tmp.path(), "");
    let c = cfg.to_str().unwrap();
    let (g, s) = (tmp.path().join("g"), tmp.path().join("s"));
    assert!(run(&["guide", "--config", c, "--out", g.to_str().unwrap()]).status.success());
    assert!(run(&["sample", "--config", c, "--out", s.to_str().unwrap()]).status.success());
    let (fg, fs) = (report_value(&g, "feat_i_mean"), report_value(&s, "feat_i_mean"));
    assert!(fg > fs, "guided {fg} vs unguided {fs}");
}

#[test]
fn missing_reference_is_a_config_error_naming_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fixture(tmp.path(), "");
    let text = std::fs::read_to_string(&cfg).unwrap().replace("reference = \"ref.pgm\"\n", "");
    std::fs::write(&cfg, text).unwrap();
    let out = run(&["guide", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("guidance.reference"));

    let text = std::fs::read_to_string(&cfg).unwrap().replace("[guidance]\n", "[guidance]\nreference = \"gone.pgm\"\n");
    std::fs::write(&cfg, text).unwrap();
    let out = run(&["guide", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("guidance.reference"));
}

#[test]
fn bad_config_and_usage_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    std::fs::write(&cfg, "[sampler]\nkind = \"euler\"\n").unwrap();
    let out = run(&["sample", "--config", cfg.to_str().unwrap(), "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(run(&["nonsense"]).status.code(), Some(2));
    assert_eq!(run(&["check", "--scope", "nope"]).status.code(), Some(2));
}

#[test]
fn eval_matches_library_values() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fixture(tmp.path(), "");
    let r = tmp.path().join("r");
    assert!(run(&["sample", "--config", cfg.to_str().unwrap(), "--out", r.to_str().unwrap()]).status.success());
    let e = tmp.path().join("e");
    let out = run(&[
        "eval",
        "--samples",
        r.to_str().unwrap(),
        "--reference",
        tmp.path().join("ref.pgm").to_str().unwrap(),
        "--out",
        e.to_str().unwrap(),
    ]);
    assert!(out.status.success());

    let mut names: Vec<_> = std::fs::read_dir(&r)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
        .collect();
    names.sort();
    let imgs: Vec<Image> = names.iter().map(|p| read_image(p).unwrap()).collect();
    let ex = MomentExtractor::raw(Arc::new(MomentBasis::with_default_orders(8, 8).unwrap()));
    let reference = read_image(tmp.path().join("ref.pgm")).unwrap();
    assert!((report_value(&e, "i_feat") - i_feat(&ex, &imgs).unwrap()).abs() <= 1e-12);
    assert!((report_value(&e, "feat_i_mean") - feat_i(&ex, &reference, &imgs).unwrap()).abs() <= 1e-12);
    // the sampling run's own report agrees with the standalone evaluation
    assert_eq!(report_value(&r, "i_feat"), report_value(&e, "i_feat"));
}

#[test]
fn eval_of_identical_copies_and_self() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("copies");
    std::fs::create_dir_all(&d).unwrap();
    let img = blob(6, 2.0, 3.0, 4.0);
    for k in 0..4 {
        write_image(&img, d.join(format!("c{k}.pgm"))).unwrap();
    }
    let out = run(&["eval", "--samples", d.to_str().unwrap(), "--reference", d.join("c0.pgm").to_str().unwrap()]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("i_feat: 0.0\n"), "{text}");
    assert!(text.contains("feat_i_mean: 1.0\n"), "{text}");

    let one = tmp.path().join("one");
    std::fs::create_dir_all(&one).unwrap();
    write_image(&img, one.join("x.pgm")).unwrap();
    let out = run(&["eval", "--samples", one.to_str().unwrap(), "--reference", one.join("x.pgm").to_str().unwrap()]);
    assert!(String::from_utf8(out.stdout).unwrap().contains("feat_i_mean: 1.0\n"));
}

#[test]
fn check_runs_only_the_named_suite() {
    let out = run(&["check", "--scope", "oracles"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| l.contains("PASS") || l.contains("FAIL")).collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|l| l.starts_with("oracles")));
    assert!(run(&["check"]).status.success());
}

#[test]
fn train_writes_a_loadable_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fixture(
        tmp.path(),
        "\n[train]\ndataset = \"data\"\nsteps = 200\nhidden1 = 8\nhidden2 = 8\nvalidation_size = 16\n",
    );
    let t = tmp.path().join("t");
    assert!(run(&["train", "--config", cfg.to_str().unwrap(), "--out", t.to_str().unwrap()]).status.success());
    let ck = momentguide::checkpoint::Checkpoint::load(&t.join("denoiser.ckpt")).unwrap();
    assert!(momentguide::score::TinyDenoiser::from_checkpoint(&ck).is_ok());
    assert_eq!(std::fs::read_to_string(t.join("losses.csv")).unwrap().lines().count(), 201);

    // the checkpoint plugs back in as a score model
    let text = std::fs::read_to_string(&cfg).unwrap().replace(
        "kind = \"dataset\"\npath = \"data\"",
        &format!("kind = \"checkpoint\"\npath = \"{}\"", t.join("denoiser.ckpt").display()),
    );
    std::fs::write(&cfg, text).unwrap();
    let s = tmp.path().join("s");
    let out = run(&["sample", "--config", cfg.to_str().unwrap(), "--out", s.to_str().unwrap()]);
    assert_ne!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(s.join("sample_0019.pgm").exists());
}

#[test]
fn gmm_terminal_histogram_matches_weights() {
    // 1x1 images, 10^4 chains; component means sit inside [0, 1] so the
    // stored samples keep their mode.
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write_image(&Image::filled(1, 1, 0.2), d.join("lo.pgm")).unwrap();
    write_image(&Image::filled(1, 1, 0.8), d.join("hi.pgm")).unwrap();
    std::fs::write(
        d.join("gmm.toml"),
        "[[component]]\nweight = 0.3\nvariance = 0.001\nmean = \"lo.pgm\"\n\n\
         [[component]]\nweight = 0.7\nvariance = 0.001\nmean = \"hi.pgm\"\n",
    )
    .unwrap();
    let n = 10_000;
    std::fs::write(
        d.join("run.toml"),
        format!(
            "[run]\nseed = 4\nbatch_size = {n}\n\n[image]\nheight = 1\nwidth = 1\n\n\
             [schedule]\nsteps = 50\n\n[model]\nkind = \"gmm\"\npath = \"gmm.toml\"\n"
        ),
    )
    .unwrap();
    let out_dir = d.join("out");
    let out = run(&["sample", "--config", d.join("run.toml").to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let hi = (0..n)
        .filter(|&k| read_image(out_dir.join(format!("sample_{k:04}.pgm"))).unwrap().data()[0] > 0.5)
        .count();
    let p = hi as f64 / n as f64;
    let se = (0.7f64 * 0.3 / n as f64).sqrt();
    assert!((p - 0.7).abs() <= 4.0 * se, "fraction {p}, se {se}");
}
