use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use nic_core::dataset::{
    generate_fixture, lint_caption, load_feature, load_manifest, split_dataset, DatasetRecord, FixtureOptions,
    Label, Severity,
};
use nic_core::eval::{
    accuracy, confusion, evaluate_captions, evaluation_report, predict_labels, DecodeMode,
};
use nic_core::meteor::{corpus_score_parallel, SynonymLexicon};
use nic_core::model::{
    beam_decode, evaluate_losses, greedy_decode, load_checkpoint, run_gradcheck, save_checkpoint, train,
    Checkpoint, GradCheckDims, GradCheckOptions, Heads, ModelConfig, NicParams, TrainOptions,
};
use nic_core::numerics::Rng;
use nic_core::pipeline::{
    build_vocabulary_from_records, caption_cases, load_features, training_examples, FilterOrder,
};
use nic_core::text::{caption_tokens, decode, Vocabulary};
use nic_core::{Error, ErrorKind};

use crate::{
    CaptionArgs, ClassifyArgs, Cli, Command, EvaluateArgs, FilterOrderArg, FixtureArgs, GradcheckArgs,
    HeadsArg, LintArgs, PreprocessArgs, ScoreArgs, TrainArgs,
};

pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_FORMAT: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

#[derive(Debug)]
pub enum Failure {
    /// Bad flag values or a failed lint.
    Validation(String),
    /// A failed numerical check.
    Numeric(String),
    Core(Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Validation(_) => EXIT_VALIDATION,
            Failure::Numeric(_) => EXIT_NUMERIC,
            Failure::Core(e) => match e.kind() {
                ErrorKind::Validation => EXIT_VALIDATION,
                ErrorKind::Format => EXIT_FORMAT,
                ErrorKind::Numeric => EXIT_NUMERIC,
            },
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Validation(m) | Failure::Numeric(m) => f.write_str(m),
            Failure::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type CmdResult = Result<(), Failure>;

fn invalid(message: impl Into<String>) -> Failure {
    Failure::Validation(message.into())
}

fn require(ok: bool, message: impl FnOnce() -> String) -> CmdResult {
    if ok {
        Ok(())
    } else {
        Err(invalid(message()))
    }
}

fn at_least_one(name: &str, value: usize) -> CmdResult {
    require(value >= 1, || format!("--{name} must be at least 1"))
}

fn fraction(name: &str, value: f64) -> CmdResult {
    require(value > 0.0 && value < 1.0, || format!("--{name} {value} must lie in (0, 1)"))
}

fn dropout(value: f64) -> CmdResult {
    require((0.0..1.0).contains(&value), || format!("--dropout {value} must lie in [0, 1)"))
}

fn non_negative(name: &str, value: f64) -> CmdResult {
    require(value >= 0.0 && value.is_finite(), || {
        format!("--{name} {value} must be finite and non-negative")
    })
}

fn write_file(path: &Path, contents: &[u8]) -> CmdResult {
    fs::write(path, contents).map_err(|e| Error::io(path, e).into())
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e).into())
}

fn manifest_dir(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn load_lexicon(path: Option<&Path>) -> Result<SynonymLexicon, Failure> {
    Ok(match path {
        Some(p) => SynonymLexicon::load(p)?,
        None => SynonymLexicon::empty(),
    })
}

fn print_stdout(text: &str) -> CmdResult {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Error::io("<stdout>", e).into())
}

pub fn run(cli: Cli) -> CmdResult {
    at_least_one("jobs", cli.jobs)?;
    match cli.command {
        Command::Preprocess(a) => preprocess(a),
        Command::Train(a) => train_cmd(a, cli.seed),
        Command::Caption(a) => caption(a),
        Command::Classify(a) => classify(a),
        Command::Evaluate(a) => evaluate(a, cli.seed, cli.jobs),
        Command::ScoreMeteor(a) => score_meteor(a, cli.jobs),
        Command::Gradcheck(a) => gradcheck(a, cli.seed),
        Command::Lint(a) => lint(a),
        Command::GenerateFixture(a) => generate(a, cli.seed),
    }
}

fn preprocess(a: PreprocessArgs) -> CmdResult {
    at_least_one("min-freq", a.min_freq)?;
    at_least_one("max-len", a.max_len)?;
    let records = load_manifest(&a.manifest)?;
    let order = match a.filter_order {
        FilterOrderArg::LengthFirst => FilterOrder::LengthFirst,
        FilterOrderArg::VocabFirst => FilterOrder::VocabularyFirst,
    };
    let (vocab, stats) = build_vocabulary_from_records(&records, a.min_freq, a.max_len, order)?;
    vocab.save(&a.vocab_out)?;
    print_stdout(&format!(
        "captions\t{}\nkept\t{}\ndiscarded\t{}\nvocab_size\t{}\n",
        stats.captions, stats.kept, stats.discarded, stats.vocab_size
    ))
}

/// Splits records into (train, validation, test) buckets.
fn partition(
    records: &[DatasetRecord],
    split: f64,
    val_fraction: f64,
    seed: u64,
) -> Result<(Vec<DatasetRecord>, Vec<DatasetRecord>, Vec<DatasetRecord>), Failure> {
    let (train_set, test_set) = split_dataset(records, split, seed)?;
    if val_fraction == 0.0 {
        return Ok((train_set, Vec::new(), test_set));
    }
    // The validation carve-out ignores the records' own split tags.
    let untagged: Vec<DatasetRecord> = train_set
        .into_iter()
        .map(|r| DatasetRecord { split: None, ..r })
        .collect();
    let (fit, val) = split_dataset(&untagged, 1.0 - val_fraction, seed.wrapping_add(1))?;
    Ok((fit, val, test_set))
}

fn train_cmd(a: TrainArgs, seed: u64) -> CmdResult {
    non_negative("lr", a.lr)?;
    at_least_one("batch", a.batch)?;
    non_negative("lambda", a.lambda)?;
    dropout(a.dropout)?;
    at_least_one("max-len", a.max_len)?;
    fraction("split", a.split)?;
    require((0.0..1.0).contains(&a.val_fraction), || {
        format!("--val-fraction {} must lie in [0, 1)", a.val_fraction)
    })?;
    at_least_one("embed-dim", a.embed_dim)?;
    at_least_one("hidden-dim", a.hidden_dim)?;
    a.classifier_hidden.iter().try_for_each(|&h| at_least_one("classifier-hidden", h))?;
    non_negative("clip", a.clip)?;

    let records = load_manifest(&a.manifest)?;
    let vocab = Vocabulary::load(&a.vocab)?;
    let (fit, val, test) = partition(&records, a.split, a.val_fraction, seed)?;
    if fit.is_empty() {
        return Err(invalid("the training split is empty"));
    }

    let (mut params, start_epoch) = if a.resume {
        let Checkpoint { params, epochs_completed } = load_checkpoint(&a.checkpoint)?;
        (params, epochs_completed)
    } else {
        let feature_dim = fit[0].load_feature(&manifest_dir(&a.manifest), None)?.dim();
        let config = ModelConfig {
            feature_dim,
            embed_dim: a.embed_dim,
            hidden_dim: a.hidden_dim,
            vocab_size: vocab.len(),
            max_caption_len: a.max_len,
            dropout_rate: a.dropout,
            classifier_hidden: (a.classifier_hidden[0], a.classifier_hidden[1]),
            loss_weight_lambda: a.lambda,
        };
        (NicParams::init(&config, &mut Rng::new(seed))?, 0)
    };
    let config = params.config().clone();
    if config.vocab_size != vocab.len() {
        return Err(Error::Shape(format!(
            "checkpoint expects {} vocabulary entries, {} has {}",
            config.vocab_size,
            a.vocab.display(),
            vocab.len()
        ))
        .into());
    }

    let base = manifest_dir(&a.manifest);
    let fit_features = load_features(&fit, &base, Some(config.feature_dim))?;
    let examples = training_examples(&fit, &fit_features, &vocab, config.max_caption_len)?;
    let val_examples = if val.is_empty() {
        Vec::new()
    } else {
        let features = load_features(&val, &base, Some(config.feature_dim))?;
        training_examples(&val, &features, &vocab, config.max_caption_len)?
    };
    eprintln!(
        "training on {} captions from {} records ({} validation, {} test records), epochs {}..{}",
        examples.len(),
        fit.len(),
        val.len(),
        test.len(),
        start_epoch,
        start_epoch + a.epochs
    );

    if a.epochs == 0 && !a.resume {
        save_checkpoint(&a.checkpoint, &params, 0)?;
    }
    let options = TrainOptions {
        epochs: a.epochs,
        learning_rate: a.lr,
        batch_size: a.batch,
        clip_norm: (a.clip > 0.0).then_some(a.clip),
        heads: match a.heads {
            HeadsArg::Joint => Heads::Joint,
            HeadsArg::Caption => Heads::CaptionOnly,
            HeadsArg::Classifier => Heads::ClassifierOnly,
        },
        seed,
        start_epoch,
    };
    print_stdout(if val_examples.is_empty() {
        "epoch\ttrain_nll_per_token\ttrain_bce\n"
    } else {
        "epoch\ttrain_nll_per_token\ttrain_bce\tval_nll_per_token\tval_bce\n"
    })?;
    let mut log_error = None;
    train(&mut params, &examples, &options, |report, params| {
        save_checkpoint(&a.checkpoint, params, report.epoch + 1)?;
        let mut line = format!(
            "{}\t{:.6}\t{:.6}",
            report.epoch + 1,
            report.caption_nll_per_token,
            report.classifier_bce
        );
        if !val_examples.is_empty() {
            let (nll, bce) = evaluate_losses(params, &val_examples)?;
            line.push_str(&format!("\t{nll:.6}\t{bce:.6}"));
        }
        line.push('\n');
        if let Err(e) = print_stdout(&line) {
            log_error.get_or_insert(e);
        }
        Ok(())
    })?;
    match log_error {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn load_model_feature(checkpoint: &Path, feature: &Path) -> Result<(NicParams, Vec<f64>), Failure> {
    let params = load_checkpoint(checkpoint)?.params;
    let feature = load_feature(feature, Some(params.config().feature_dim))?.to_f64();
    Ok((params, feature))
}

fn caption(a: CaptionArgs) -> CmdResult {
    at_least_one("beam", a.beam)?;
    if let Some(m) = a.max_len {
        at_least_one("max-len", m)?;
    }
    let vocab = Vocabulary::load(&a.vocab)?;
    let (params, feature) = load_model_feature(&a.checkpoint, &a.feature)?;
    check_vocab(&params, &vocab)?;
    let max_len = a.max_len.unwrap_or(params.config().max_caption_len);
    let indices = if a.beam == 1 {
        greedy_decode(&params, &feature, max_len)?
    } else {
        beam_decode(&params, &feature, a.beam, max_len)?.tokens
    };
    print_stdout(&format!("{}\n", decode(&indices, &vocab)?.join(" ")))
}

fn check_vocab(params: &NicParams, vocab: &Vocabulary) -> CmdResult {
    let expected = params.config().vocab_size;
    if expected != vocab.len() {
        return Err(Error::Shape(format!(
            "checkpoint expects {expected} vocabulary entries, the vocabulary file has {}",
            vocab.len()
        ))
        .into());
    }
    Ok(())
}

fn classify(a: ClassifyArgs) -> CmdResult {
    let (params, feature) = load_model_feature(&a.checkpoint, &a.feature)?;
    let p = params.classify(&feature, &mut Rng::new(0), false)?;
    print_stdout(&format!("{}\t{p:.6}\n", Label::from_probability(p)))
}

fn evaluate(a: EvaluateArgs, seed: u64, jobs: usize) -> CmdResult {
    at_least_one("beam", a.beam)?;
    if let Some(m) = a.max_len {
        at_least_one("max-len", m)?;
    }
    fraction("split", a.split)?;
    let vocab = Vocabulary::load(&a.vocab)?;
    let params = load_checkpoint(&a.checkpoint)?.params;
    check_vocab(&params, &vocab)?;
    let lexicon = load_lexicon(a.lexicon.as_deref())?;
    let records = load_manifest(&a.manifest)?;
    let selected = if a.all {
        records
    } else {
        split_dataset(&records, a.split, seed)?.1
    };
    if selected.is_empty() {
        return Err(invalid("no records to evaluate"));
    }

    let features = load_features(&selected, &manifest_dir(&a.manifest), Some(params.config().feature_dim))?;
    let cases = caption_cases(&selected, &features)?;
    let mode = if a.beam == 1 { DecodeMode::Greedy } else { DecodeMode::Beam(a.beam) };
    let max_len = a.max_len.unwrap_or(params.config().max_caption_len);
    let evaluation = evaluate_captions(&params, &vocab, &cases, &lexicon, mode, max_len, jobs)?;
    let predictions = predict_labels(&params, &features)?;
    let labels: Vec<Label> = selected.iter().map(|r| r.label).collect();
    let cm = confusion(&predictions, &labels)?;
    let report = evaluation_report(&evaluation, Some(&cm))?;
    if let Some(out) = &a.out {
        write_file(out, report.as_bytes())?;
    }
    eprintln!(
        "{} records, {}, accuracy {:.4}",
        selected.len(),
        evaluation.corpus.headline(),
        accuracy(&cm)?
    );
    print_stdout(&report)
}

fn read_lines(path: &Path) -> Result<Vec<String>, Failure> {
    Ok(read_text(path)?.lines().map(str::to_string).collect())
}

fn score_meteor(a: ScoreArgs, jobs: usize) -> CmdResult {
    let hyps = read_lines(&a.hyp)?;
    let refs = read_lines(&a.reference)?;
    let lexicon = load_lexicon(a.lexicon.as_deref())?;
    if hyps.len() != refs.len() {
        return Err(Error::Format(format!(
            "{} has {} lines but {} has {}",
            a.hyp.display(),
            hyps.len(),
            a.reference.display(),
            refs.len()
        ))
        .into());
    }
    if hyps.is_empty() {
        return Err(Error::Format(format!("{} is empty", a.hyp.display())).into());
    }
    let pairs: Vec<(Vec<String>, Vec<Vec<String>>)> = hyps
        .iter()
        .zip(&refs)
        .map(|(h, r)| (caption_tokens(h), r.split('\t').map(caption_tokens).collect()))
        .collect();
    let corpus = corpus_score_parallel(&pairs, &lexicon, jobs)?;
    let ids: Vec<String> = (1..=pairs.len()).map(|i| i.to_string()).collect();
    eprintln!("{}", corpus.headline());
    print_stdout(&corpus.report(&ids)?)
}

fn gradcheck(a: GradcheckArgs, seed: u64) -> CmdResult {
    require(a.vocab_size >= 5, || "--vocab-size must be at least 5".into())?;
    for (name, v) in [
        ("embed-dim", a.embed_dim),
        ("hidden-dim", a.hidden_dim),
        ("caption-len", a.caption_len),
        ("feature-dim", a.feature_dim),
        ("samples", a.samples),
    ] {
        at_least_one(name, v)?;
    }
    require(a.epsilon > 0.0 && a.epsilon.is_finite(), || "--epsilon must be positive".into())?;
    require(a.init_scale > 0.0 && a.init_scale.is_finite(), || "--init-scale must be positive".into())?;
    require(a.tolerance > 0.0, || "--tolerance must be positive".into())?;
    dropout(a.dropout)?;
    non_negative("lambda", a.lambda)?;

    let dims = GradCheckDims {
        vocab_size: a.vocab_size,
        embed_dim: a.embed_dim,
        hidden_dim: a.hidden_dim,
        caption_len: a.caption_len,
        feature_dim: a.feature_dim,
        ..GradCheckDims::default()
    };
    let options = GradCheckOptions {
        epsilon: a.epsilon,
        samples: a.samples,
        dropout_rate: a.dropout,
        loss_weight_lambda: a.lambda,
        seed,
        init_scale: a.init_scale,
        inject_bug: a.inject_bug,
    };
    let result = run_gradcheck(&dims, &options)?;
    let pass = result.max_relative_error <= a.tolerance;
    print_stdout(&format!(
        "max_relative_error\t{:.6e}\nworst\t{}[{}]\tanalytic {:.6e}\tnumeric {:.6e}\nchecked\t{}\n{}\n",
        result.max_relative_error,
        result.worst_parameter,
        result.worst_index,
        result.analytic,
        result.numeric,
        result.checked,
        if pass { "PASS" } else { "FAIL" }
    ))?;
    if pass {
        Ok(())
    } else {
        Err(Failure::Numeric(format!(
            "gradient check failed: {:.3e} > {:.1e}",
            result.max_relative_error, a.tolerance
        )))
    }
}

fn lint(a: LintArgs) -> CmdResult {
    let records = load_manifest(&a.manifest)?;
    let (mut hard, mut advisory) = (0, 0);
    let mut out = String::new();
    for r in &records {
        for (n, caption) in r.captions.iter().enumerate() {
            for v in lint_caption(caption) {
                let severity = match v.severity() {
                    Severity::Hard => {
                        hard += 1;
                        "hard"
                    }
                    Severity::Advisory => {
                        advisory += 1;
                        "advisory"
                    }
                };
                out.push_str(&format!("{}\t{n}\t{v}\t{severity}\n", r.id));
            }
        }
    }
    print_stdout(&out)?;
    eprintln!("{} records: {hard} hard, {advisory} advisory violations", records.len());
    if hard > 0 {
        Err(invalid(format!("{hard} captions break hard rules")))
    } else {
        Ok(())
    }
}

fn generate(a: FixtureArgs, seed: u64) -> CmdResult {
    at_least_one("records", a.records)?;
    at_least_one("feature-dim", a.feature_dim)?;
    require((1..=6).contains(&a.vocab_words), || "--vocab-words must lie in 1..=6".into())?;
    let manifest = a.out_dir.join("manifest.jsonl");
    if manifest.exists() && !a.force {
        return Err(invalid(format!("{} exists; pass --force to overwrite", manifest.display())));
    }
    let fixture = generate_fixture(&FixtureOptions {
        records: a.records,
        feature_dim: a.feature_dim,
        vocab_words: a.vocab_words,
        seed,
    })?;
    let path = fixture.write_to(&a.out_dir)?;
    eprintln!("wrote {} records to {}", fixture.records.len(), a.out_dir.display());
    print_stdout(&format!("{}\n", path.display()))
}
