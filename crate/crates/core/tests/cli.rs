use std::path::Path;
use std::process::Command;

const SMALL: &[&str] = &[
    "--set",
    "corpus_size=60",
    "--set",
    "emb_dim=6",
    "--set",
    "hidden_dim=8",
    "--set",
    "epochs=2",
    "--set",
    "batch_size=8",
];

fn seqvae(out: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_seqvae"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn train(out: &Path, extra: &[&str]) {
    let mut args = vec!["train"];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    let o = seqvae(out, &args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn train_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        train(out, &["--set", "latent_dim=3", "--seed", "4"]);
    }
    for f in ["checkpoint.bin", "train_log.csv", "valid_log.csv", "config.txt"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    assert!(read(&a.join("config.txt")).contains("seed = 4"));
}

#[test]
fn dae_log_has_no_kl_columns() {
    let dir = tempfile::tempdir().unwrap();
    train(dir.path(), &["--set", "task=dae"]);
    let log = read(&dir.path().join("train_log.csv"));
    assert_eq!(log.lines().next().unwrap(), "iteration,epoch,J_rec,dropout_p");
}

#[test]
fn eval_modes() {
    let dir = tempfile::tempdir().unwrap();
    let vae = dir.path().join("vae");
    train(&vae, &["--set", "latent_dim=3"]);
    let ck = vae.join("checkpoint.bin");
    let ck = ck.to_str().unwrap();
    let m1 = dir.path().join("m1");
    let m2 = dir.path().join("m2");
    for out in [&m1, &m2] {
        assert!(seqvae(out, &["eval", "--checkpoint", ck, "--mode", "map"])
            .status
            .success());
    }
    let report = read(&m1.join("metrics.csv"));
    assert_eq!(report, read(&m2.join("metrics.csv")));
    assert_eq!(
        report.lines().next().unwrap(),
        "model,inference,bleu_1,bleu_2,bleu_3,bleu_4,entropy,distinct_1,distinct_2"
    );
    assert!(report.lines().nth(1).unwrap().starts_with("vae,map,"));
    let s = dir.path().join("s");
    assert!(
        seqvae(&s, &["eval", "--checkpoint", ck, "--mode", "sampling", "--k", "3"])
            .status
            .success()
    );
    let row = read(&s.join("metrics.csv"));
    assert_eq!(
        row.lines().nth(1).unwrap().split(',').filter(|f| f.is_empty()).count(),
        0
    );

    let dae = dir.path().join("dae");
    train(&dae, &["--set", "task=dae"]);
    let bad = dir.path().join("bad");
    let o = seqvae(
        &bad,
        &[
            "eval",
            "--checkpoint",
            dae.join("checkpoint.bin").to_str().unwrap(),
            "--mode",
            "sampling",
        ],
    );
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("deterministic"));
    assert!(!bad.join("metrics.csv").exists());
}

#[test]
fn attention_dump() {
    let dir = tempfile::tempdir().unwrap();
    train(
        dir.path(),
        &[
            "--set",
            "task=ved_vattn_hbar",
            "--set",
            "corpus=toy:qgen",
            "--set",
            "latent_dim=3",
        ],
    );
    let json = dir.path().join("attn.json");
    let o = seqvae(
        dir.path(),
        &[
            "eval",
            "--checkpoint",
            dir.path().join("checkpoint.bin").to_str().unwrap(),
            "--attention-json",
            json.to_str().unwrap(),
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&read(&json)).unwrap();
    let first = &v.as_array().unwrap()[0];
    let w = first["steps"][0]["weights"].as_array().unwrap();
    let s: f64 = w.iter().map(|x| x.as_f64().unwrap()).sum();
    assert!((s - 1.0).abs() < 1e-9);
}

#[test]
fn probes_write_sentences() {
    let dir = tempfile::tempdir().unwrap();
    train(dir.path(), &["--set", "latent_dim=3"]);
    let ck = dir.path().join("checkpoint.bin");
    let ck = ck.to_str().unwrap();
    let o = seqvae(dir.path(), &["sample", "--checkpoint", ck, "--n", "4"]);
    assert!(o.status.success());
    assert_eq!(read(&dir.path().join("samples.txt")).lines().count(), 4);

    let o = seqvae(
        dir.path(),
        &[
            "interpolate",
            "--checkpoint",
            ck,
            "--a",
            "the cat eats",
            "--b",
            "the cat eats",
        ],
    );
    assert!(o.status.success());
    let text = read(&dir.path().join("interpolation.txt"));
    let sents: Vec<&str> = text.lines().map(|l| l.split('\t').nth(1).unwrap()).collect();
    assert_eq!(sents.len(), 6);
    assert!(sents.iter().all(|s| *s == sents[0]));

    let o = seqvae(
        dir.path(),
        &[
            "neighborhood",
            "--checkpoint",
            ck,
            "--input",
            "a dog",
            "--n",
            "5",
            "--seed",
            "2",
        ],
    );
    assert!(o.status.success());
    let first = read(&dir.path().join("neighborhood.txt"));
    seqvae(
        dir.path(),
        &[
            "neighborhood",
            "--checkpoint",
            ck,
            "--input",
            "a dog",
            "--n",
            "5",
            "--seed",
            "2",
        ],
    );
    assert_eq!(first, read(&dir.path().join("neighborhood.txt")));
    assert_eq!(first.lines().count(), 5);
}

#[test]
fn bypass_and_gamma_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["bypass-exp", "--seeds", "1,2,3", "--k", "2", "--set", "latent_dim=2"];
    args.extend_from_slice(SMALL);
    let o = seqvae(dir.path(), &args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read(&dir.path().join("bypass.csv")).lines().count(), 1 + 2 * 3);

    let mut args = vec![
        "gamma-sweep",
        "--gammas",
        "0.01,0.1,1",
        "--k",
        "2",
        "--set",
        "latent_dim=2",
    ];
    args.extend_from_slice(SMALL);
    let o = seqvae(dir.path(), &args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for g in ["0.01", "0.1", "1"] {
        let curve = read(&dir.path().join(format!("gamma_{g}.csv")));
        assert_eq!(curve.lines().next().unwrap(), "epoch,bleu_2,bleu_4,entropy,distinct_1");
        assert_eq!(curve.lines().count(), 3);
    }
}

#[test]
fn errors_exit_nonzero_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["train", "--set", "task=vae", "--set", "gamma_a=0.1"],
        vec!["train", "--set", "corpus=/nonexistent/corpus.txt"],
        vec!["eval", "--checkpoint", "/nonexistent.bin"],
        vec!["bypass-exp", "--seeds", "1,2"],
    ] {
        let o = seqvae(dir.path(), &args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
    }
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn resume_matches_uninterrupted() {
    let dir = tempfile::tempdir().unwrap();
    let full = dir.path().join("full");
    let half = dir.path().join("half");
    let resumed = dir.path().join("resumed");
    train(&full, &["--set", "latent_dim=3", "--set", "epochs=3"]);
    train(&half, &["--set", "latent_dim=3", "--set", "epochs=1"]);
    let o = seqvae(
        &resumed,
        &[
            "train",
            "--resume",
            half.join("checkpoint.bin").to_str().unwrap(),
            "--set",
            "epochs=3",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read(full.join("checkpoint.bin")).unwrap(),
        std::fs::read(resumed.join("checkpoint.bin")).unwrap()
    );
}
