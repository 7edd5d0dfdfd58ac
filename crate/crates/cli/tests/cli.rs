use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nic_core::dataset::FeatureVector;
use nic_core::model::{greedy_decode, load_checkpoint, save_checkpoint, ModelConfig, NicParams};
use nic_core::numerics::Rng;
use nic_core::text::{decode, Vocabulary, EOS};
use tempfile::TempDir;

fn nic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nic"))
        .args(args)
        .output()
        .expect("run nic")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Fixture with small features plus a vocabulary that keeps every word.
struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new(records: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace { dir };
        let n = records.to_string();
        let out = nic(&[
            "generate-fixture",
            "--out-dir",
            s(ws.dir.path()),
            "--records",
            &n,
            "--feature-dim",
            "24",
        ]);
        assert_eq!(code(&out), 0, "{out:?}");
        let out = nic(&[
            "preprocess",
            "--manifest",
            s(&ws.manifest()),
            "--min-freq",
            "1",
            "--vocab-out",
            s(&ws.vocab()),
        ]);
        assert_eq!(code(&out), 0, "{out:?}");
        ws
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn manifest(&self) -> PathBuf {
        self.path("manifest.jsonl")
    }

    fn vocab(&self) -> PathBuf {
        self.path("vocab.txt")
    }

    fn feature(&self, n: usize) -> PathBuf {
        self.path(&format!("features/fixture-{n:04}.nicf"))
    }

    fn train(&self, checkpoint: &str, extra: &[&str]) -> Output {
        let ckpt = self.path(checkpoint);
        let (manifest, vocab) = (self.manifest(), self.vocab());
        let mut args = vec![
            "train",
            "--manifest",
            s(&manifest),
            "--vocab",
            s(&vocab),
            "--checkpoint",
            s(&ckpt),
            "--embed-dim",
            "8",
            "--hidden-dim",
            "8",
            "--classifier-hidden",
            "6",
            "4",
        ];
        args.extend_from_slice(extra);
        nic(&args)
    }
}

#[test]
fn preprocess_is_deterministic_and_keeps_every_word() {
    let ws = Workspace::new(12);
    let first = fs::read(ws.vocab()).unwrap();
    let again = ws.path("again.txt");
    let out = nic(&["preprocess", "--manifest", s(&ws.manifest()), "--min-freq", "1", "--vocab-out", s(&again)]);
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read(&again).unwrap(), first);
    assert!(stdout(&out).contains("captions\t12\nkept\t12\ndiscarded\t0\n"), "{}", stdout(&out));

    let vocab = Vocabulary::load(&ws.vocab()).unwrap();
    let manifest = fs::read_to_string(ws.manifest()).unwrap();
    for line in manifest.lines() {
        let record: manifest_text::Record = manifest_text::parse(line);
        for word in record.words() {
            assert!(vocab.index_of(&word).is_some(), "{word} missing");
        }
    }
}

/// Just enough JSON handling to pull captions out of a manifest line
/// without going through the library under test.
mod manifest_text {
    pub struct Record(Vec<String>);

    pub fn parse(line: &str) -> Record {
        let start = line.find("\"captions\":[").expect("captions key") + "\"captions\":[".len();
        let end = start + line[start..].find(']').unwrap();
        Record(
            line[start..end]
                .split("\",\"")
                .map(|c| c.trim_matches('"').to_string())
                .collect(),
        )
    }

    impl Record {
        pub fn words(&self) -> Vec<String> {
            self.0
                .iter()
                .flat_map(|c| c.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>())
                .collect()
        }
    }
}

#[test]
fn zero_epochs_writes_the_initialization() {
    let ws = Workspace::new(10);
    let out = ws.train("init.ckpt", &["--epochs", "0", "--seed", "4", "--dropout", "0.2", "--lambda", "0.5"]);
    assert_eq!(code(&out), 0, "{out:?}");
    let ckpt = load_checkpoint(&ws.path("init.ckpt")).unwrap();
    assert_eq!(ckpt.epochs_completed, 0);
    let vocab = Vocabulary::load(&ws.vocab()).unwrap();
    let config = ModelConfig {
        feature_dim: 24,
        embed_dim: 8,
        hidden_dim: 8,
        vocab_size: vocab.len(),
        max_caption_len: 14,
        dropout_rate: 0.2,
        classifier_hidden: (6, 4),
        loss_weight_lambda: 0.5,
    };
    assert_eq!(ckpt.params, NicParams::init(&config, &mut Rng::new(4)).unwrap());
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let ws = Workspace::new(10);
    let straight = ws.train("straight.ckpt", &["--epochs", "4", "--seed", "2"]);
    assert_eq!(code(&straight), 0, "{straight:?}");

    assert_eq!(code(&ws.train("resumed.ckpt", &["--epochs", "1", "--seed", "2"])), 0);
    let resumed = ws.train("resumed.ckpt", &["--epochs", "3", "--seed", "2", "--resume"]);
    assert_eq!(code(&resumed), 0, "{resumed:?}");
    assert_eq!(
        fs::read(ws.path("straight.ckpt")).unwrap(),
        fs::read(ws.path("resumed.ckpt")).unwrap()
    );
    // The loss log of the resumed run continues the epoch numbering.
    let log = stdout(&straight);
    let tail: Vec<&str> = log.lines().skip(2).collect();
    assert_eq!(stdout(&resumed).lines().skip(1).collect::<Vec<_>>(), tail);
}

#[test]
fn validation_losses_appear_when_requested() {
    let ws = Workspace::new(20);
    let out = ws.train("v.ckpt", &["--epochs", "2", "--val-fraction", "0.25"]);
    assert_eq!(code(&out), 0, "{out:?}");
    let log = stdout(&out);
    assert!(log.starts_with("epoch\ttrain_nll_per_token\ttrain_bce\tval_nll_per_token\tval_bce\n"));
    assert_eq!(log.lines().nth(2).unwrap().split('\t').count(), 5);
}

#[test]
fn invalid_flags_fail_before_writing() {
    let ws = Workspace::new(6);
    for extra in [
        &["--dropout", "1.0"][..],
        &["--lr", "-1"],
        &["--batch", "0"],
        &["--split", "1.0"],
        &["--lambda", "nan"],
    ] {
        let out = ws.train("bad.ckpt", extra);
        assert_eq!(code(&out), 1, "{extra:?}: {out:?}");
        assert!(!ws.path("bad.ckpt").exists(), "{extra:?}");
    }
    let vocab = ws.path("never.txt");
    let out = nic(&["preprocess", "--manifest", s(&ws.manifest()), "--min-freq", "0", "--vocab-out", s(&vocab)]);
    assert_eq!(code(&out), 1);
    assert!(!vocab.exists());
    assert_eq!(code(&nic(&["--jobs", "0", "gradcheck"])), 1);
    assert_eq!(code(&nic(&["no-such-command"])), 1);
}

fn write_model(ws: &Workspace, name: &str, edit: impl FnOnce(&mut NicParams)) -> PathBuf {
    let vocab = Vocabulary::load(&ws.vocab()).unwrap();
    let mut config = ModelConfig::new(vocab.len());
    config.feature_dim = 24;
    config.embed_dim = 6;
    config.hidden_dim = 6;
    config.classifier_hidden = (4, 4);
    let mut params = NicParams::init(&config, &mut Rng::new(9)).unwrap();
    edit(&mut params);
    let path = ws.path(name);
    save_checkpoint(&path, &params, 0).unwrap();
    path
}

#[test]
fn caption_matches_greedy_and_honours_a_rigged_eos() {
    let ws = Workspace::new(6);
    let ckpt = write_model(&ws, "random.ckpt", |p| {
        let mut rng = Rng::new(3);
        for t in p.parameters_mut() {
            t.value.data_mut().iter_mut().for_each(|v| *v = rng.uniform(-1.0, 1.0));
        }
    });
    let vocab = Vocabulary::load(&ws.vocab()).unwrap();
    let params = load_checkpoint(&ckpt).unwrap().params;
    for n in 0..6 {
        let feature = FeatureVector::load(&ws.feature(n)).unwrap().to_f64();
        let expected = decode(&greedy_decode(&params, &feature, 14).unwrap(), &vocab).unwrap().join(" ");
        for beam in ["1", "3"] {
            let out = nic(&[
                "caption", "--checkpoint", s(&ckpt), "--vocab", s(&ws.vocab()), "--feature", s(&ws.feature(n)),
                "--beam", beam,
            ]);
            assert_eq!(code(&out), 0, "{out:?}");
            if beam == "1" {
                assert_eq!(stdout(&out), format!("{expected}\n"));
            }
        }
    }

    let rigged = write_model(&ws, "eos.ckpt", |p| {
        let bias = p.parameters_mut().into_iter().find(|t| t.name == "out.b").expect("output bias");
        bias.value.data_mut()[EOS] = 100.0;
    });
    let out = nic(&["caption", "--checkpoint", s(&rigged), "--vocab", s(&ws.vocab()), "--feature", s(&ws.feature(0))]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout(&out), "\n");
}

#[test]
fn classify_zero_model_resolves_ties_to_anomaly() {
    let ws = Workspace::new(4);
    let ckpt = write_model(&ws, "zero.ckpt", |p| {
        for t in p.parameters_mut() {
            t.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    });
    let out = nic(&["classify", "--checkpoint", s(&ckpt), "--feature", s(&ws.feature(1))]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout(&out), "anomaly\t0.500000\n");

    let out = nic(&["classify", "--checkpoint", s(&ckpt), "--feature", s(&ws.path("missing.nicf"))]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.nicf"));
}

#[test]
fn evaluation_is_independent_of_job_count() {
    let ws = Workspace::new(30);
    assert_eq!(code(&ws.train("m.ckpt", &["--epochs", "2", "--dropout", "0"])), 0);
    let run = |jobs: &str| {
        nic(&[
            "evaluate", "--checkpoint", s(&ws.path("m.ckpt")), "--vocab", s(&ws.vocab()), "--manifest",
            s(&ws.manifest()), "--jobs", jobs, "--beam", "2",
        ])
    };
    let serial = run("1");
    assert_eq!(code(&serial), 0, "{serial:?}");
    assert_eq!(stdout(&run("4")).as_str(), stdout(&serial));
    let report = stdout(&serial);
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines.len(), 6 + 5, "{report}");
    assert!(lines[6].starts_with("POOLED\t"));
    assert!(lines[8].starts_with("METEOR_X100\t"));
    assert_eq!(lines[9], "TP\tFP\tFN\tTN\tACCURACY");
}

#[test]
fn evaluation_names_a_record_with_a_missing_feature() {
    let ws = Workspace::new(10);
    assert_eq!(code(&ws.train("m.ckpt", &["--epochs", "0"])), 0);
    for n in 0..10 {
        fs::remove_file(ws.feature(n)).unwrap();
    }
    let out = nic(&[
        "evaluate", "--checkpoint", s(&ws.path("m.ckpt")), "--vocab", s(&ws.vocab()), "--manifest",
        s(&ws.manifest()), "--all",
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("record fixture-0000"), "{out:?}");
}

#[test]
fn score_meteor_identity_and_line_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let text = "a man is holding a gun\ntwo men are fighting\n";
    let hyp = dir.path().join("hyp.txt");
    let reference = dir.path().join("ref.txt");
    fs::write(&hyp, text).unwrap();
    fs::write(&reference, text).unwrap();
    let out = nic(&["score-meteor", "--hyp", s(&hyp), "--ref", s(&reference)]);
    assert_eq!(code(&out), 0, "{out:?}");
    let report = stdout(&out);
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines[0], "1\t6\t1\t1.000000\t1.000000\t1.000000\t0.002315\t0.997685");
    assert_eq!(lines[1], "2\t4\t1\t1.000000\t1.000000\t1.000000\t0.007812\t0.992188");

    let lexicon = dir.path().join("lex.txt");
    fs::write(&lexicon, "# weapons\ngun pistol\n").unwrap();
    fs::write(&reference, "a man is holding a pistol\tnobody\ntwo men are fighting\n").unwrap();
    let with = nic(&["score-meteor", "--hyp", s(&hyp), "--ref", s(&reference), "--lexicon", s(&lexicon)]);
    assert!(stdout(&with).starts_with("1\t6\t1\t"), "{}", stdout(&with));
    let without = nic(&["score-meteor", "--hyp", s(&hyp), "--ref", s(&reference)]);
    assert!(stdout(&without).starts_with("1\t5\t1\t"), "{}", stdout(&without));

    fs::write(&reference, "only one line\n").unwrap();
    assert_eq!(code(&nic(&["score-meteor", "--hyp", s(&hyp), "--ref", s(&reference)])), 2);
}

#[test]
fn gradcheck_passes_and_catches_an_injected_bug() {
    let out = nic(&["gradcheck"]);
    assert_eq!(code(&out), 0, "{out:?}");
    assert!(stdout(&out).ends_with("PASS\n"));
    let out = nic(&["gradcheck", "--inject-bug"]);
    assert_eq!(code(&out), 3);
    assert!(stdout(&out).ends_with("FAIL\n"));
}

#[test]
fn lint_exit_codes_follow_severity() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.jsonl");
    let line = |id: &str, caption: &str| {
        format!("{{\"id\":\"{id}\",\"feature_inline\":[0.0],\"captions\":[\"{caption}\"],\"label\":\"normal\"}}\n")
    };

    fs::write(&manifest, line("a", "a man is holding a gun on the street")).unwrap();
    let out = nic(&["lint", "--manifest", s(&manifest)]);
    assert_eq!((code(&out), stdout(&out).as_str()), (0, ""));

    fs::write(&manifest, line("b", "Fire")).unwrap();
    let out = nic(&["lint", "--manifest", s(&manifest)]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout(&out), "b\t0\tLENGTH_ADVISORY\tadvisory\nb\t0\tNOT_LOWERCASE_START\tadvisory\n");

    fs::write(&manifest, line("c", "2 men fighting")).unwrap();
    let out = nic(&["lint", "--manifest", s(&manifest)]);
    assert_eq!(code(&out), 1);
    assert!(stdout(&out).contains("c\t0\tCONTAINS_DIGIT\thard"));

    fs::write(&manifest, "{not json\n").unwrap();
    assert_eq!(code(&nic(&["lint", "--manifest", s(&manifest)])), 2);
}

#[test]
fn fixture_generation_refuses_to_overwrite() {
    let ws = Workspace::new(3);
    let args = ["generate-fixture", "--out-dir", s(ws.dir.path()), "--records", "3", "--feature-dim", "24"];
    assert_eq!(code(&nic(&args)), 1);
    let before = fs::read(ws.manifest()).unwrap();
    let mut forced = args.to_vec();
    forced.push("--force");
    assert_eq!(code(&nic(&forced)), 0);
    assert_eq!(fs::read(ws.manifest()).unwrap(), before);
}
