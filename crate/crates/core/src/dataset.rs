//! Training examples, the Digit Sum task and the labeled-sequence text format.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::curriculum::Curriculum;
use crate::linalg::Rng;
use crate::model::Head;
use crate::{Error, Result};

/// What an example should be mapped to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Scalar(f64),
    Class(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceExample {
    pub tokens: Vec<usize>,
    pub target: Target,
}

impl SequenceExample {
    pub fn new(tokens: Vec<usize>, target: Target) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptySequence);
        }
        Ok(SequenceExample { tokens, target })
    }

    /// Digit Sum example: the target is the sum of the digits.
    pub fn digit_sum(tokens: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = tokens.iter().find(|&&t| t > 9) {
            return Err(Error::TokenOutOfVocab { token: bad, vocab: 10 });
        }
        let sum = tokens.iter().sum::<usize>() as f64;
        SequenceExample::new(tokens, Target::Scalar(sum))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Where a [`DatasetSplit`] came from.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    DigitSum(DigitSumConfig),
    Labeled { classes: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<SequenceExample>,
    pub validation: Vec<SequenceExample>,
    pub test: Vec<SequenceExample>,
    pub vocab_size: usize,
    pub seed: u64,
    pub source: DatasetSource,
}

impl DatasetSplit {
    /// Head matching the targets of this split.
    pub fn head(&self) -> Head {
        match self.source {
            DatasetSource::DigitSum(_) => Head::Regression,
            DatasetSource::Labeled { classes } => Head::Classification { classes },
        }
    }
}

/// Digit Sum generation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DigitSumConfig {
    pub seqs_per_length: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub val_size: usize,
    pub test_size: usize,
}

impl DigitSumConfig {
    pub fn new(
        seqs_per_length: usize,
        min_len: usize,
        max_len: usize,
        val_size: usize,
        test_size: usize,
    ) -> Self {
        DigitSumConfig {
            seqs_per_length,
            min_len,
            max_len,
            val_size,
            test_size,
        }
    }

    /// 1000 sequences for each length 2..=20, 200 validation and 200 test sequences of length 20.
    pub fn paper() -> Self {
        DigitSumConfig::new(1000, 2, 20, 200, 200)
    }

    /// Ten times smaller training set than [`paper`](Self::paper).
    pub fn desk() -> Self {
        DigitSumConfig::new(100, 2, 20, 200, 200)
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_len == 0 || self.max_len < self.min_len {
            return Err(Error::InvalidArgument(format!(
                "invalid length range {}..={}",
                self.min_len, self.max_len
            )));
        }
        if self.seqs_per_length == 0 || self.val_size == 0 || self.test_size == 0 {
            return Err(Error::InvalidArgument("dataset counts must be positive".into()));
        }
        Ok(())
    }

    pub fn train_size(&self) -> usize {
        self.seqs_per_length * (self.max_len - self.min_len + 1)
    }
}

fn random_digits(len: usize, rng: &mut Rng) -> Vec<usize> {
    (0..len).map(|_| rng.below(10) as usize).collect()
}

/// Generates the Digit Sum split. Digits are i.i.d. uniform over 0..=9.
///
/// Training sequences may repeat. Validation and test sequences have length
/// `max_len` and are unique across both sets. Panics on an invalid config;
/// use [`try_generate_digit_sum`] to get an error instead.
pub fn generate_digit_sum(config: &DigitSumConfig, seed: u64) -> DatasetSplit {
    try_generate_digit_sum(config, seed).expect("invalid Digit Sum config")
}

pub fn try_generate_digit_sum(config: &DigitSumConfig, seed: u64) -> Result<DatasetSplit> {
    config.validate()?;
    // Only 10^max_len distinct held-out sequences exist.
    let distinct = libm::pow(10.0, config.max_len as f64);
    if ((config.val_size + config.test_size) as f64) > distinct {
        return Err(Error::InvalidArgument(
            "validation + test size exceeds the number of distinct sequences".into(),
        ));
    }
    let mut rng = Rng::new(seed);
    let mut train = Vec::with_capacity(config.train_size());
    for len in config.min_len..=config.max_len {
        for _ in 0..config.seqs_per_length {
            train.push(SequenceExample::digit_sum(random_digits(len, &mut rng))?);
        }
    }
    let mut seen: BTreeMap<Vec<usize>, ()> = BTreeMap::new();
    let mut held_out = |count: usize, rng: &mut Rng| -> Result<Vec<SequenceExample>> {
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let tokens = random_digits(config.max_len, rng);
            if seen.insert(tokens.clone(), ()).is_none() {
                out.push(SequenceExample::digit_sum(tokens)?);
            }
        }
        Ok(out)
    };
    let validation = held_out(config.val_size, &mut rng)?;
    let test = held_out(config.test_size, &mut rng)?;
    Ok(DatasetSplit {
        train,
        validation,
        test,
        vocab_size: 10,
        seed,
        source: DatasetSource::DigitSum(*config),
    })
}

/// Prefix sums of a digit sequence.
pub fn running_sum_oracle(tokens: &[usize]) -> Result<Vec<f64>> {
    let mut acc = 0usize;
    tokens
        .iter()
        .map(|&t| {
            if t > 9 {
                return Err(Error::TokenOutOfVocab { token: t, vocab: 10 });
            }
            acc += t;
            Ok(acc as f64)
        })
        .collect()
}

/// Result of [`subsample_fraction`].
#[derive(Debug, Clone, PartialEq)]
pub struct Subsample {
    pub split: DatasetSplit,
    /// Curriculum scores whose stratum rounded down to zero examples.
    pub dropped_scores: Vec<f64>,
}

/// Keeps `round(fraction · |stratum|)` training examples from every
/// curriculum-score stratum, chosen uniformly; validation and test are untouched.
pub fn subsample_fraction(
    split: &DatasetSplit,
    fraction: f64,
    curriculum: &Curriculum,
    seed: u64,
) -> Result<Subsample> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "fraction {fraction} outside (0, 1]"
        )));
    }
    let mut strata: Vec<(f64, Vec<usize>)> = Vec::new();
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    order.sort_by(|&a, &b| {
        curriculum
            .score(&split.train[a])
            .total_cmp(&curriculum.score(&split.train[b]))
    });
    for idx in order {
        let s = curriculum.score(&split.train[idx]);
        match strata.last_mut() {
            Some((score, members)) if score.total_cmp(&s).is_eq() => members.push(idx),
            _ => strata.push((s, alloc::vec![idx])),
        }
    }

    let mut rng = Rng::new(seed);
    let mut keep: Vec<usize> = Vec::new();
    let mut dropped_scores = Vec::new();
    for (score, mut members) in strata {
        let count = libm::round(fraction * members.len() as f64) as usize;
        if count == 0 {
            dropped_scores.push(score);
            continue;
        }
        members.sort_unstable();
        rng.shuffle(&mut members);
        keep.extend_from_slice(&members[..count]);
    }
    keep.sort_unstable();
    if keep.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut out = split.clone();
    out.train = keep.into_iter().map(|i| split.train[i].clone()).collect();
    Ok(Subsample {
        split: out,
        dropped_scores,
    })
}

pub const UNK: &str = "<unk>";

/// Token string ↔ id table.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: BTreeMap<String, usize>,
}

impl Vocab {
    pub fn new() -> Self {
        Vocab::default()
    }

    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Vocab::new();
        for t in tokens {
            v.insert(&t.into());
        }
        v
    }

    pub fn insert(&mut self, token: &str) -> usize {
        if let Some(&id) = self.ids.get(token) {
            return id;
        }
        let id = self.tokens.len();
        self.tokens.push(token.to_string());
        self.ids.insert(token.to_string(), id);
        id
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// What to do with tokens missing from the vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VocabPolicy {
    /// New tokens are appended to the vocabulary.
    Open,
    /// The vocabulary is fixed; unknown tokens are errors.
    ClosedReject,
    /// The vocabulary is fixed; unknown tokens map to [`UNK`], which is added if absent.
    ClosedUnk,
}

/// Default separator between the label and the tokens.
pub const DEFAULT_SEPARATOR: &str = "|";

/// Parsed labeled-sequence file.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequences {
    pub examples: Vec<SequenceExample>,
    pub classes: usize,
}

/// Parses the labeled-sequence format: one `label SEP tok tok ...` example
/// per line, tokens separated by whitespace. Blank lines are skipped, lines
/// starting with `#` are comments, and `#classes K` declares the class count
/// (labels must then be `< K`; otherwise the count is `max label + 1`).
pub fn parse_labeled_sequences(
    text: &str,
    separator: &str,
    classes: Option<usize>,
    vocab: &mut Vocab,
    policy: VocabPolicy,
) -> Result<LabeledSequences> {
    if separator.is_empty() || separator.chars().any(char::is_whitespace) {
        return Err(Error::InvalidArgument(format!(
            "separator {separator:?} must be non-empty and contain no whitespace"
        )));
    }
    let mut declared = classes;
    let mut examples = Vec::new();
    let mut max_label = 0usize;
    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(k) = rest.trim().strip_prefix("classes") {
                let k: usize = k.trim().parse().map_err(|_| Error::Parse {
                    line: line_no,
                    message: format!("bad class declaration {line:?}"),
                })?;
                if matches!(declared, Some(d) if d != k) {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("declared {k} classes, expected {}", declared.unwrap()),
                    });
                }
                declared = Some(k);
            }
            continue;
        }
        let (label, body) = line.split_once(separator).ok_or_else(|| Error::Parse {
            line: line_no,
            message: format!("missing separator {separator:?}"),
        })?;
        let label: usize = label.trim().parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("label {:?} is not a non-negative integer", label.trim()),
        })?;
        let mut tokens = Vec::new();
        for word in body.split_whitespace() {
            let id = match (policy, vocab.get(word)) {
                (_, Some(id)) => id,
                (VocabPolicy::Open, None) => vocab.insert(word),
                (VocabPolicy::ClosedUnk, None) => vocab.insert(UNK),
                (VocabPolicy::ClosedReject, None) => {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("unknown token {word:?}"),
                    })
                }
            };
            tokens.push(id);
        }
        if tokens.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: "no tokens after the label".into(),
            });
        }
        if let Some(k) = declared {
            if label >= k {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("label {label} outside 0..{k}"),
                });
            }
        }
        max_label = max_label.max(label);
        examples.push(SequenceExample::new(tokens, Target::Class(label))?);
    }
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(LabeledSequences {
        examples,
        classes: declared.unwrap_or(max_label + 1),
    })
}
