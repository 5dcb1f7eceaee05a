use std::path::Path;
use std::process::{Command, Output};

use anomaly_elbo::data::write_idx;
use anomaly_elbo::{ImageDataset, SplitTag};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_anomaly-elbo"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Three classes of 6x6 images; class k lights up row band k.
fn dataset(n: usize, split: SplitTag) -> ImageDataset {
    let mut px = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let k = (i % 3) as u8;
        for r in 0..6 {
            for c in 0..6 {
                let v = if r / 2 == k as usize { 200 } else { ((i * 7 + r * 3 + c) % 20) as u8 };
                px.push(v as f64 / 255.0);
            }
        }
        labels.push(k);
    }
    ImageDataset::new(px, labels, 6, 6, split).unwrap()
}

fn setup(dir: &Path) {
    let data = dir.join("data");
    std::fs::create_dir_all(&data).unwrap();
    let train = dataset(240, SplitTag::Train);
    let test = dataset(60, SplitTag::Test);
    write_idx(&train, &data.join("train-images-idx3-ubyte"), &data.join("train-labels-idx1-ubyte")).unwrap();
    write_idx(&test, &data.join("t10k-images-idx3-ubyte"), &data.join("t10k-labels-idx1-ubyte")).unwrap();
    std::fs::write(
        dir.join("run.cfg"),
        "# tiny run\ndata_dir = data\nlatent_dim = 2\nhidden_dim = 8\nheld_out_class = 2\n\
         max_epochs = 3\nbatch_size = 16\ninitial_lr = 0.001\npatch_min_frac = 0.5\npatch_max_frac = 0.8\n",
    )
    .unwrap();
}

#[test]
fn train_score_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let cfg = dir.path().join("run.cfg");
    let runs = dir.path().join("runs");
    let o = run(bin().arg("train").arg("--config").arg(&cfg).arg("--out").arg(&runs).args(["--seed", "3"]));
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpt = runs.join("lat2_logc0_scale1_class2_seed3.ckpt");
    assert!(ckpt.is_file());
    assert!(runs.join("lat2_logc0_scale1_class2_seed3.manifest.json").is_file());

    let score = dir.path().join("score");
    let o = run(bin()
        .arg("score")
        .arg("--checkpoint")
        .arg(&ckpt)
        .arg(dir.path().join("data/t10k-images-idx3-ubyte"))
        .args(["--method", "all", "--heatmaps", "1", "--limit", "5"])
        .arg("--out")
        .arg(&score));
    assert!(o.status.success(), "{}", stderr(&o));
    for m in ["rec_error", "elbo_grad", "kl_grad", "rec_grad", "combi"] {
        assert!(score.join(format!("maps_{m}.csv")).is_file(), "{m}");
        assert!(score.join(format!("heatmaps/{m}_0.pgm")).is_file(), "{m}");
    }
    let scores = std::fs::read_to_string(score.join("scores.csv")).unwrap();
    assert_eq!(scores.lines().count(), 6);

    let eval = dir.path().join("eval");
    let o = run(bin().arg("eval").arg("--config").arg(&cfg).arg("--checkpoint").arg(&ckpt).arg("--out").arg(&eval));
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("kl auroc"), "{stdout}");
    assert!(eval.join("eval.csv").is_file());
}

#[test]
fn sweep_writes_results_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let cfg = dir.path().join("run.cfg");
    let mut text = std::fs::read_to_string(&cfg).unwrap();
    text.push_str("sweep_latent_dim = 1, 2\npixel = false\n");
    std::fs::write(&cfg, text).unwrap();
    let out = dir.path().join("sweep");
    let o = run(bin().arg("sweep").arg("--config").arg(&cfg).arg("--out").arg(&out).args(["--runs", "2"]));
    assert!(o.status.success(), "{}", stderr(&o));
    let results = std::fs::read_to_string(out.join("results.csv")).unwrap();
    assert!(results.starts_with("experiment_id,axis,axis_value,run_seed,score_name,metric_name,value,schema_version"));
    assert_eq!(results.lines().filter(|l| l.contains(",kl,auroc,")).count(), 4);
    assert!(out.join("summary.csv").is_file());
}

#[test]
fn unknown_config_key_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "latent_dims = 4\n").unwrap();
    let o = run(bin().arg("train").arg("--config").arg(&cfg).arg("--out").arg(dir.path()));
    assert!(!o.status.success());
    assert!(stderr(&o).contains("latent_dims"), "{}", stderr(&o));
}

#[test]
fn unknown_method_lists_valid_names() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(bin()
        .arg("score")
        .arg("--checkpoint")
        .arg(dir.path().join("x.ckpt"))
        .arg(dir.path().join("images"))
        .args(["--method", "saliency"]));
    assert!(!o.status.success());
    let err = stderr(&o);
    for m in ["rec_error", "elbo_grad", "kl_grad", "rec_grad", "combi"] {
        assert!(err.contains(m), "{err}");
    }
}

#[test]
fn missing_dataset_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "data_dir = nowhere\n").unwrap();
    let o = run(bin().arg("train").arg("--config").arg(&cfg).arg("--out").arg(dir.path()));
    assert!(!o.status.success());
    assert!(stderr(&o).contains("nowhere"), "{}", stderr(&o));
}

#[test]
fn missing_config_file_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(bin().arg("sweep").arg("--config").arg(dir.path().join("absent.cfg")));
    assert!(!o.status.success());
    assert!(stderr(&o).contains("absent.cfg"), "{}", stderr(&o));
}
