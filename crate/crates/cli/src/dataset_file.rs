//! Dataset dumps and labeled-sequence directories.
//!
//! A dump is UTF-8 text. It starts with a header of `# key value` lines: the
//! first is `# curriculum-lstm dataset 1`, then `config_hash`, `seed`,
//! `code_version`, `dataset_seed`, `vocab`, `head` (`regression` or
//! `classification K`) and, for Digit Sum data, `generator digit_sum` with
//! `seqs_per_length`, `min_len`, `max_len`, `val_size` and `test_size`. The
//! column line `split\ttarget\ttokens` follows, then one example per line:
//! split name (`train`, `validation`, `test`), tab, target (shortest
//! round-trip decimal for regression, class index for classification), tab,
//! token ids separated by single spaces.
//!
//! A labeled directory holds `train.txt`, `validation.txt` and `test.txt` in
//! the labeled-sequence line format. The vocabulary grows over the training
//! file; held-out files follow the configured [`VocabPolicy`].

use std::path::{Path, PathBuf};

use curriculum_lstm_core::dataset::{
    parse_labeled_sequences, DatasetSource, DatasetSplit, DigitSumConfig, SequenceExample, Target, Vocab,
    VocabPolicy, UNK,
};

use crate::format::{comment_entry, fmt_f64, parse_f64, parse_usize, read_text, FormatError, Provenance};

pub const MAGIC: &str = "# curriculum-lstm dataset 1";
pub const COLUMNS: &str = "split\ttarget\ttokens";
/// File name of a dump inside a dataset directory.
pub const DUMP_FILE: &str = "dataset.tsv";
pub const LABELED_FILES: [&str; 3] = ["train.txt", "validation.txt", "test.txt"];

/// A split together with the provenance recorded in its dump.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFile {
    pub split: DatasetSplit,
    pub provenance: Provenance,
}

pub fn to_text(split: &DatasetSplit, provenance: &Provenance) -> String {
    let mut s = String::new();
    s.push_str(MAGIC);
    s.push('\n');
    s.push_str(&provenance.comment_lines());
    s.push_str(&format!("# dataset_seed {}\n# vocab {}\n", split.seed, split.vocab_size));
    match &split.source {
        DatasetSource::DigitSum(c) => {
            s.push_str("# head regression\n");
            s.push_str(&format!(
                "# generator digit_sum seqs_per_length={} min_len={} max_len={} val_size={} test_size={}\n",
                c.seqs_per_length, c.min_len, c.max_len, c.val_size, c.test_size
            ));
        }
        DatasetSource::Labeled { classes } => s.push_str(&format!("# head classification {classes}\n")),
    }
    s.push_str(COLUMNS);
    s.push('\n');
    for (name, part) in [("train", &split.train), ("validation", &split.validation), ("test", &split.test)] {
        for ex in part {
            let target = match ex.target {
                Target::Scalar(y) => fmt_f64(y),
                Target::Class(k) => k.to_string(),
            };
            let tokens: Vec<String> = ex.tokens.iter().map(usize::to_string).collect();
            s.push_str(&format!("{name}\t{target}\t{}\n", tokens.join(" ")));
        }
    }
    s
}

pub fn parse(text: &str) -> Result<DatasetFile, FormatError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let first = lines.next().map_or("", |(_, l)| l);
    if first != MAGIC {
        return Err(FormatError::Magic {
            expected: "dataset",
            found: first.to_string(),
        });
    }
    let mut header = Vec::new();
    let mut columns_seen = false;
    for (no, line) in lines.by_ref() {
        if line == COLUMNS {
            columns_seen = true;
            break;
        }
        let entry = comment_entry(line).ok_or_else(|| FormatError::syntax(no, format!("bad header line {line:?}")))?;
        header.push((no, entry));
    }
    if !columns_seen {
        return Err(FormatError::syntax(header.len() + 2, "missing column line"));
    }
    let provenance = Provenance::from_entries(header.iter().map(|(_, e)| *e))
        .ok_or_else(|| FormatError::syntax(2, "incomplete provenance header"))?;
    let get = |key: &str| {
        header
            .iter()
            .find(|(_, (k, _))| *k == key)
            .map(|(no, (_, v))| (*no, *v))
            .ok_or_else(|| FormatError::syntax(1, format!("missing header {key}")))
    };
    let (no, v) = get("dataset_seed")?;
    let seed: u64 = v.parse().map_err(|_| FormatError::syntax(no, "bad dataset_seed"))?;
    let (no, v) = get("vocab")?;
    let vocab_size = parse_usize(v, no)?;
    let (no, head) = get("head")?;
    let source = match head.split_once(' ') {
        None if head == "regression" => {
            let (no, gen) = get("generator")?;
            DatasetSource::DigitSum(parse_generator(gen, no)?)
        }
        Some(("classification", k)) => DatasetSource::Labeled {
            classes: parse_usize(k, no)?,
        },
        _ => return Err(FormatError::syntax(no, format!("bad head {head:?}"))),
    };

    let mut split = DatasetSplit {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
        vocab_size,
        seed,
        source,
    };
    for (no, line) in lines {
        let mut cols = line.split('\t');
        let (Some(name), Some(target), Some(tokens), None) = (cols.next(), cols.next(), cols.next(), cols.next())
        else {
            return Err(FormatError::syntax(no, "expected three tab-separated columns"));
        };
        let target = match split.source {
            DatasetSource::DigitSum(_) => Target::Scalar(parse_f64(target, no)?),
            DatasetSource::Labeled { .. } => Target::Class(parse_usize(target, no)?),
        };
        let tokens = tokens
            .split(' ')
            .map(|t| parse_usize(t, no))
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(&bad) = tokens.iter().find(|&&t| t >= vocab_size) {
            return Err(FormatError::syntax(no, format!("token {bad} outside vocabulary of size {vocab_size}")));
        }
        let ex = SequenceExample::new(tokens, target).map_err(|e| FormatError::syntax(no, e.to_string()))?;
        match name {
            "train" => split.train.push(ex),
            "validation" => split.validation.push(ex),
            "test" => split.test.push(ex),
            other => return Err(FormatError::syntax(no, format!("unknown split {other:?}"))),
        }
    }
    Ok(DatasetFile { split, provenance })
}

fn parse_generator(text: &str, line: usize) -> Result<DigitSumConfig, FormatError> {
    let mut words = text.split(' ');
    if words.next() != Some("digit_sum") {
        return Err(FormatError::syntax(line, format!("unknown generator {text:?}")));
    }
    let mut c = DigitSumConfig::new(0, 0, 0, 0, 0);
    let mut seen = 0;
    for w in words {
        let (k, v) = w
            .split_once('=')
            .ok_or_else(|| FormatError::syntax(line, format!("bad generator field {w:?}")))?;
        let v = parse_usize(v, line)?;
        match k {
            "seqs_per_length" => c.seqs_per_length = v,
            "min_len" => c.min_len = v,
            "max_len" => c.max_len = v,
            "val_size" => c.val_size = v,
            "test_size" => c.test_size = v,
            _ => return Err(FormatError::syntax(line, format!("unknown generator field {k:?}"))),
        }
        seen += 1;
    }
    if seen != 5 {
        return Err(FormatError::syntax(line, "generator needs five fields"));
    }
    Ok(c)
}

pub fn load_dump(path: &Path) -> Result<DatasetFile, FormatError> {
    parse(&read_text(path)?)
}

/// Reads the three labeled files of `dir`.
pub fn load_labeled_dir(dir: &Path, separator: &str, policy: VocabPolicy) -> Result<DatasetSplit, FormatError> {
    let mut vocab = Vocab::new();
    let mut parts = Vec::new();
    for (i, name) in LABELED_FILES.iter().enumerate() {
        let path = dir.join(name);
        let text = read_text(&path)?;
        if i == 1 && policy == VocabPolicy::ClosedUnk && vocab.get(UNK).is_none() {
            vocab.insert(UNK);
        }
        let mode = if i == 0 { VocabPolicy::Open } else { policy };
        let parsed = parse_labeled_sequences(&text, separator, None, &mut vocab, mode).map_err(|e| match e {
            curriculum_lstm_core::Error::Parse { line, message } => {
                FormatError::syntax(line, format!("{}: {message}", path.display()))
            }
            other => FormatError::Core(other),
        })?;
        parts.push(parsed);
    }
    let classes = parts.iter().map(|p| p.classes).max().unwrap_or(0);
    let mut it = parts.into_iter().map(|p| p.examples);
    Ok(DatasetSplit {
        train: it.next().unwrap(),
        validation: it.next().unwrap(),
        test: it.next().unwrap(),
        vocab_size: vocab.len(),
        seed: 0,
        source: DatasetSource::Labeled { classes },
    })
}

/// Where `--data` points: a dump file, a directory holding one, or a labeled directory.
pub fn resolve_data_path(path: &Path) -> Result<DataLocation, FormatError> {
    let missing = |p: PathBuf| FormatError::Io {
        path: p.display().to_string(),
        source: std::io::Error::new(std::io::ErrorKind::NotFound, "dataset not found"),
    };
    if path.is_file() {
        return Ok(DataLocation::Dump(path.to_path_buf()));
    }
    if !path.is_dir() {
        return Err(missing(path.to_path_buf()));
    }
    let dump = path.join(DUMP_FILE);
    if dump.is_file() {
        return Ok(DataLocation::Dump(dump));
    }
    if LABELED_FILES.iter().all(|f| path.join(f).is_file()) {
        return Ok(DataLocation::Labeled(path.to_path_buf()));
    }
    Err(missing(dump))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataLocation {
    Dump(PathBuf),
    Labeled(PathBuf),
}
