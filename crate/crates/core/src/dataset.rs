//! Manifests, feature files, splitting, caption linting and synthetic
//! fixtures.
//!
//! A manifest is JSON Lines, one record per line:
//!
//! ```text
//! {"id": "img-001", "feature": "features/img-001.nicf", "captions": ["a house is burning"], "label": "anomaly", "split": "train"}
//! ```
//!
//! `feature` is a path relative to the manifest (or absolute); a record may
//! instead carry `feature_inline` with the values themselves. `split` is
//! optional.

use std::collections::HashSet;
use std::fmt;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{read_exact, read_u32, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Anomaly,
    Normal,
}

impl Label {
    /// Classifier target: 1 for an anomaly.
    pub fn target(self) -> f64 {
        match self {
            Label::Anomaly => 1.0,
            Label::Normal => 0.0,
        }
    }

    /// Anomaly iff `p >= 0.5`.
    pub fn from_probability(p: f64) -> Self {
        if p >= 0.5 {
            Label::Anomaly
        } else {
            Label::Normal
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Anomaly => "anomaly",
            Label::Normal => "normal",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_inline: Option<Vec<f32>>,
    pub captions: Vec<String>,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

impl DatasetRecord {
    /// Loads the record's feature vector, resolving relative paths against
    /// `base_dir`.
    pub fn load_feature(&self, base_dir: &Path, expected_dim: Option<usize>) -> Result<FeatureVector> {
        let feature = match (&self.feature_inline, &self.feature) {
            (Some(values), _) => FeatureVector::new(values.clone())?,
            (None, Some(path)) => FeatureVector::load(&base_dir.join(path))?,
            (None, None) => {
                return Err(Error::Format(format!("record {} has no feature", self.id)))
            }
        };
        if let Some(dim) = expected_dim {
            feature.check_dim(dim)?;
        }
        Ok(feature)
    }
}

fn parse_record(line: &str) -> std::result::Result<DatasetRecord, String> {
    let record: DatasetRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if record.id.is_empty() {
        return Err("empty id".into());
    }
    if record.captions.is_empty() {
        return Err(format!("record {} has no captions", record.id));
    }
    if record.feature.is_none() && record.feature_inline.is_none() {
        return Err(format!("record {} has neither feature nor feature_inline", record.id));
    }
    Ok(record)
}

/// Parses manifest text. `path` is only used in error messages.
pub fn parse_manifest(text: &str, path: &Path) -> Result<Vec<DatasetRecord>> {
    let mut records = Vec::new();
    let mut ids = HashSet::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Manifest {
            path: path.to_path_buf(),
            line: n + 1,
            message,
        };
        let record = parse_record(line).map_err(err)?;
        if !ids.insert(record.id.clone()) {
            return Err(err(format!("duplicate id {}", record.id)));
        }
        records.push(record);
    }
    Ok(records)
}

pub fn load_manifest(path: &Path) -> Result<Vec<DatasetRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path)
}

pub fn manifest_to_string(records: &[DatasetRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).map_err(|e| Error::Format(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, records: &[DatasetRecord]) -> Result<()> {
    std::fs::write(path, manifest_to_string(records)?).map_err(|e| Error::io(path, e))
}

const FEATURE_MAGIC: &[u8; 4] = b"NICF";
const FEATURE_VERSION: u32 = 1;

/// Output of the external image encoder, stored as 32-bit floats.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    values: Vec<f32>,
}

impl FeatureVector {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Format(format!("feature value {i} is not finite")));
        }
        Ok(FeatureVector { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim() != expected {
            return Err(Error::Shape(format!(
                "feature has {} dimensions, model expects {expected}",
                self.dim()
            )));
        }
        Ok(())
    }

    /// `NICF`, u32 version, u32 dim, then dim f32 values, all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.values.len());
        out.extend_from_slice(FEATURE_MAGIC);
        out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.values.len() as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut input = bytes;
        let mut magic = [0u8; 4];
        read_exact(&mut input, &mut magic)?;
        if &magic != FEATURE_MAGIC {
            return Err(Error::Format(format!("bad feature magic {magic:?}")));
        }
        let version = read_u32(&mut input)?;
        if version != FEATURE_VERSION {
            return Err(Error::Format(format!("unsupported feature version {version}")));
        }
        let dim = read_u32(&mut input)? as usize;
        if input.len() != dim * 4 {
            return Err(Error::Format(format!(
                "feature declares {dim} values but carries {} bytes",
                input.len()
            )));
        }
        let mut values = Vec::with_capacity(dim);
        let mut buf = [0u8; 4];
        for _ in 0..dim {
            input.read_exact(&mut buf).map_err(|e| Error::Format(e.to_string()))?;
            values.push(f32::from_le_bytes(buf));
        }
        FeatureVector::new(values)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

/// Reads a feature file and checks it against the model's input width.
pub fn load_feature(path: &Path, expected_dim: Option<usize>) -> Result<FeatureVector> {
    let feature = FeatureVector::load(path)?;
    if let Some(dim) = expected_dim {
        feature.check_dim(dim)?;
    }
    Ok(feature)
}

/// Deterministic train/test partition.
///
/// Records with an explicit `split` keep it. The rest are shuffled with
/// `seed` and the first `⌈fraction · n⌉` go to train.
pub fn split_dataset(
    records: &[DatasetRecord],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<DatasetRecord>, Vec<DatasetRecord>)> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("cannot split an empty dataset".into()));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut free = Vec::new();
    for r in records {
        match r.split {
            Some(Split::Train) => train.push(r.clone()),
            Some(Split::Test) => test.push(r.clone()),
            None => free.push(r.clone()),
        }
    }
    Rng::new(seed).shuffle(&mut free);
    let cut = train_count(free.len(), train_fraction);
    let rest = free.split_off(cut);
    train.extend(free);
    test.extend(rest);
    Ok((train, test))
}

/// `⌈fraction · n⌉`, guarded against `0.8 * 10 = 8.000000000000002`.
fn train_count(n: usize, fraction: f64) -> usize {
    let exact = fraction * n as f64;
    let rounded = exact.round();
    let count = if (exact - rounded).abs() < 1e-9 {
        rounded
    } else {
        exact.ceil()
    };
    (count as usize).min(n)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Severity {
    Hard,
    Advisory,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Violation {
    ContainsDigit,
    MultipleSentences,
    LengthAdvisory,
    NotLowercaseStart,
}

impl Violation {
    pub fn severity(self) -> Severity {
        match self {
            Violation::ContainsDigit | Violation::MultipleSentences => Severity::Hard,
            Violation::LengthAdvisory | Violation::NotLowercaseStart => Severity::Advisory,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Violation::ContainsDigit => "CONTAINS_DIGIT",
            Violation::MultipleSentences => "MULTIPLE_SENTENCES",
            Violation::LengthAdvisory => "LENGTH_ADVISORY",
            Violation::NotLowercaseStart => "NOT_LOWERCASE_START",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Advised caption length in words.
pub const ADVISED_WORDS: std::ops::RangeInclusive<usize> = 7..=18;

/// Checks a raw caption against the dataset's captioning instructions.
pub fn lint_caption(raw: &str) -> Vec<Violation> {
    let mut out = Vec::new();
    if raw.chars().any(|c| c.is_ascii_digit()) {
        out.push(Violation::ContainsDigit);
    }
    // A terminator is a run of . ! ? followed by whitespace or the end.
    let chars: Vec<char> = raw.trim_end().chars().collect();
    let is_term = |c: char| matches!(c, '.' | '!' | '?');
    let terminators = (0..chars.len())
        .filter(|&i| {
            is_term(chars[i])
                && chars.get(i + 1).is_none_or(|c| c.is_whitespace())
        })
        .count();
    if terminators > 1 {
        out.push(Violation::MultipleSentences);
    }
    let words = raw.split_whitespace().count();
    if !ADVISED_WORDS.contains(&words) {
        out.push(Violation::LengthAdvisory);
    }
    if raw
        .trim_start()
        .chars()
        .next()
        .is_some_and(|c| c.is_uppercase())
    {
        out.push(Violation::NotLowercaseStart);
    }
    out
}

/// Synthetic stand-in for a real captioned dataset.
#[derive(Clone, Debug)]
pub struct Fixture {
    pub records: Vec<DatasetRecord>,
    pub features: Vec<FeatureVector>,
}

#[derive(Clone, Debug)]
pub struct FixtureOptions {
    pub records: usize,
    pub feature_dim: usize,
    /// How many alternatives each grammar slot may draw from (at least 1).
    pub vocab_words: usize,
    pub seed: u64,
}

impl Default for FixtureOptions {
    fn default() -> Self {
        FixtureOptions {
            records: 8,
            feature_dim: 2048,
            vocab_words: 6,
            seed: 0,
        }
    }
}

const ANOMALY_SUBJECTS: [&str; 6] = ["a man", "a woman", "two men", "a policeman", "a driver", "an old man"];
const ANOMALY_EVENTS: [&str; 6] = [
    "is holding a gun",
    "is lying injured",
    "is kicking a car",
    "is fighting with someone",
    "is running from a fire",
    "is breaking a window",
];
const NORMAL_SUBJECTS: [&str; 6] = ["a girl", "two tennis players", "a family", "a boy", "three tourists", "a cyclist"];
const NORMAL_EVENTS: [&str; 6] = [
    "is walking calmly",
    "is playing tennis",
    "is having a picnic",
    "is reading a book",
    "is taking photos",
    "is riding a bicycle",
];
const PLACES: [&str; 6] = [
    "on the street",
    "in a park",
    "next to a shop",
    "near the river",
    "in front of a house",
    "on a green square",
];

/// Builds `n` records whose feature mean is positive exactly when the record
/// is an anomaly, each with one grammar-generated caption.
pub fn generate_fixture(options: &FixtureOptions) -> Result<Fixture> {
    if options.records == 0 || options.feature_dim == 0 || options.vocab_words == 0 {
        return Err(Error::InvalidArgument(
            "fixture needs at least one record, dimension and word choice".into(),
        ));
    }
    let k = options.vocab_words.min(PLACES.len());
    let mut rng = Rng::new(options.seed);
    let mut records = Vec::with_capacity(options.records);
    let mut features = Vec::with_capacity(options.records);
    for n in 0..options.records {
        let label = if rng.next_f64() < 0.5 {
            Label::Anomaly
        } else {
            Label::Normal
        };
        let (subjects, events) = match label {
            Label::Anomaly => (&ANOMALY_SUBJECTS, &ANOMALY_EVENTS),
            Label::Normal => (&NORMAL_SUBJECTS, &NORMAL_EVENTS),
        };
        let caption = format!(
            "{} {} {}",
            subjects[rng.below(k)],
            events[rng.below(k)],
            PLACES[rng.below(k)]
        );

        let noise: Vec<f64> = (0..options.feature_dim).map(|_| rng.normal()).collect();
        let mean = noise.iter().sum::<f64>() / noise.len() as f64;
        let magnitude = rng.uniform(0.25, 1.0);
        let target_mean = match label {
            Label::Anomaly => magnitude,
            Label::Normal => -magnitude,
        };
        let values: Vec<f32> = noise
            .iter()
            .map(|v| (v - mean + target_mean) as f32)
            .collect();
        let feature = FeatureVector::new(values)?;
        let id = format!("fixture-{n:04}");
        records.push(DatasetRecord {
            feature: Some(PathBuf::from(format!("features/{id}.nicf"))),
            id,
            feature_inline: None,
            captions: vec![caption],
            label,
            split: None,
        });
        features.push(feature);
    }
    Ok(Fixture { records, features })
}

impl Fixture {
    /// Writes `manifest.jsonl` and `features/*.nicf` under `dir` and returns
    /// the manifest path.
    pub fn write_to(&self, dir: &Path) -> Result<PathBuf> {
        let feature_dir = dir.join("features");
        std::fs::create_dir_all(&feature_dir).map_err(|e| Error::io(&feature_dir, e))?;
        for (record, feature) in self.records.iter().zip(&self.features) {
            if let Some(rel) = &record.feature {
                feature.save(&dir.join(rel))?;
            }
        }
        let manifest = dir.join("manifest.jsonl");
        write_manifest(&manifest, &self.records)?;
        Ok(manifest)
    }

    /// Records with their features inlined, for use without touching disk.
    pub fn inline_records(&self) -> Vec<DatasetRecord> {
        self.records
            .iter()
            .zip(&self.features)
            .map(|(r, f)| DatasetRecord {
                feature: None,
                feature_inline: Some(f.values().to_vec()),
                ..r.clone()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(id: &str, split: Option<Split>) -> DatasetRecord {
        DatasetRecord {
            id: id.into(),
            feature: Some(PathBuf::from(format!("{id}.nicf"))),
            feature_inline: None,
            captions: vec!["a man is holding a gun".into()],
            label: Label::Anomaly,
            split,
        }
    }

    #[test]
    fn manifest_parsing() {
        let text = r#"{"id":"a","feature":"a.nicf","captions":["a fire"],"label":"anomaly"}
{"id":"b","feature_inline":[0.5,-1.0],"captions":["a park"],"label":"normal","split":"test"}
"#;
        let records = parse_manifest(text, Path::new("m.jsonl")).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[1].split, Some(Split::Test));
        assert_eq!(records[1].feature_inline.as_deref(), Some(&[0.5f32, -1.0][..]));

        let dup = "{\"id\":\"a\",\"feature\":\"a\",\"captions\":[\"x\"],\"label\":\"normal\"}\n".repeat(2);
        let err = parse_manifest(&dup, Path::new("m.jsonl")).unwrap_err();
        assert!(matches!(err, Error::Manifest { line: 2, .. }));
        assert!(err.to_string().contains("duplicate id a"));

        let weird = r#"{"id":"a","feature":"a","captions":["x"],"label":"weird"}"#;
        assert!(parse_manifest(weird, Path::new("m")).is_err());

        let no_captions = r#"{"id":"a","feature":"a","captions":[],"label":"normal"}"#;
        assert!(parse_manifest(no_captions, Path::new("m")).is_err());

        let broken = "{\"id\":\"a\",\"feature\":\"a\",\"captions\":[\"x\"],\"label\":\"normal\"}\n{oops";
        assert!(matches!(
            parse_manifest(broken, Path::new("m")),
            Err(Error::Manifest { line: 2, .. })
        ));
    }

    #[test]
    fn feature_bytes_round_trip_and_errors() {
        let f = FeatureVector::new(vec![1.5, -0.0, f32::MIN_POSITIVE, -3.25e7]).unwrap();
        let bytes = f.to_bytes();
        assert_eq!(&bytes[..4], b"NICF");
        let back = FeatureVector::from_bytes(&bytes).unwrap();
        let bits = |f: &FeatureVector| f.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&f));

        assert!(FeatureVector::from_bytes(&bytes[..bytes.len() - 2]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(FeatureVector::from_bytes(&bad).is_err());
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(FeatureVector::from_bytes(&v2).is_err());
        assert!(FeatureVector::new(vec![f32::NAN]).is_err());

        let seven = FeatureVector::new(vec![0.0; 7]).unwrap();
        assert!(matches!(seven.check_dim(2048), Err(Error::Shape(_))));
    }

    #[test]
    fn split_examples() {
        let records: Vec<_> = (0..10).map(|i| record(&format!("r{i}"), None)).collect();
        let (train, test) = split_dataset(&records, 0.8, 1).unwrap();
        assert_eq!((train.len(), test.len()), (8, 2));
        let (train2, test2) = split_dataset(&records, 0.8, 1).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);

        let big: Vec<_> = (0..1008).map(|i| record(&format!("r{i}"), None)).collect();
        let (train, test) = split_dataset(&big, 0.8, 0).unwrap();
        assert_eq!((train.len(), test.len()), (807, 201));

        assert!(split_dataset(&[], 0.8, 0).is_err());
        assert!(split_dataset(&records, 1.0, 0).is_err());
    }

    #[test]
    fn explicit_splits_are_honored() {
        let mut records: Vec<_> = (0..6).map(|i| record(&format!("r{i}"), None)).collect();
        records[0].split = Some(Split::Test);
        records[1].split = Some(Split::Train);
        let (train, test) = split_dataset(&records, 0.5, 3).unwrap();
        assert!(test.iter().any(|r| r.id == "r0"));
        assert!(train.iter().any(|r| r.id == "r1"));
        assert_eq!(train.len() + test.len(), 6);
    }

    #[test]
    fn lint_examples() {
        assert_eq!(lint_caption("2 men fighting"), [Violation::ContainsDigit, Violation::LengthAdvisory]);
        let sample = "a man is laying on the ground, while two paramedics are assisting him";
        assert!(lint_caption(sample).is_empty());
        assert_eq!(lint_caption("fire"), [Violation::LengthAdvisory]);
        assert_eq!(
            lint_caption("A man is on fire. Two men help him now!"),
            [Violation::MultipleSentences, Violation::NotLowercaseStart]
        );
        assert!(lint_caption("a man holds a gun, about 3.5 metres away from me")
            .contains(&Violation::ContainsDigit));
        assert!(!lint_caption("a man is holding a gun on the street.")
            .contains(&Violation::MultipleSentences));
        assert_eq!(Violation::ContainsDigit.severity(), Severity::Hard);
        assert_eq!(Violation::LengthAdvisory.severity(), Severity::Advisory);
    }

    #[test]
    fn fixture_is_deterministic_and_separable() {
        let options = FixtureOptions {
            records: 8,
            feature_dim: 32,
            vocab_words: 6,
            seed: 7,
        };
        let a = generate_fixture(&options).unwrap();
        let b = generate_fixture(&options).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.features, b.features);
        assert_eq!(a.records.len(), 8);
        for (r, f) in a.records.iter().zip(&a.features) {
            let mean = f.to_f64().iter().sum::<f64>() / f.dim() as f64;
            assert_eq!(r.label == Label::Anomaly, mean > 0.0);
            for caption in &r.captions {
                assert!(lint_caption(caption)
                    .iter()
                    .all(|v| v.severity() == Severity::Advisory));
            }
        }
    }

    proptest! {
        #[test]
        fn manifest_round_trip(ids in prop::collection::hash_set("[a-z0-9]{1,8}", 1..6), inline in any::<bool>()) {
            let records: Vec<DatasetRecord> = ids
                .iter()
                .enumerate()
                .map(|(i, id)| DatasetRecord {
                    id: id.clone(),
                    feature: (!inline).then(|| PathBuf::from(format!("f/{id}.nicf"))),
                    feature_inline: inline.then(|| vec![i as f32 * 0.5, -0.0, 1e-3]),
                    captions: vec![format!("caption \"{id}\""), "two".into()],
                    label: if i % 2 == 0 { Label::Anomaly } else { Label::Normal },
                    split: if i % 3 == 0 { Some(Split::Train) } else { None },
                })
                .collect();
            let text = manifest_to_string(&records).unwrap();
            let back = parse_manifest(&text, Path::new("m")).unwrap();
            prop_assert_eq!(back, records);
        }

        #[test]
        fn split_partitions(n in 1usize..60, fraction in 0.05f64..0.95, seed in any::<u64>()) {
            let records: Vec<_> = (0..n).map(|i| record(&format!("r{i}"), None)).collect();
            let (train, test) = split_dataset(&records, fraction, seed).unwrap();
            prop_assert_eq!(train.len() + test.len(), n);
            let mut ids: Vec<_> = train.iter().chain(&test).map(|r| r.id.clone()).collect();
            ids.sort();
            ids.dedup();
            prop_assert_eq!(ids.len(), n);
        }
    }
}
