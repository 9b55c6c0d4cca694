//! Character corpora, vocabularies, batching, and synthetic tasks.

use std::collections::BTreeSet;
use std::fs;
use std::ops::Range;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Batch, Inputs, Targets};
use crate::rng::Rng;

/// Rendering of the unknown symbol when decoding.
pub const UNK_CHAR: char = '\u{FFFD}';

/// Dense symbol ids: the distinct training characters sorted by code
/// point, followed by one unknown-symbol id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    symbols: Vec<char>,
}

impl Vocabulary {
    pub fn from_symbols(symbols: impl IntoIterator<Item = char>) -> Vocabulary {
        let set: BTreeSet<char> = symbols.into_iter().collect();
        Vocabulary {
            symbols: set.into_iter().collect(),
        }
    }

    pub fn from_text(text: &str) -> Vocabulary {
        Vocabulary::from_symbols(text.chars())
    }

    /// Number of ids, including the unknown symbol.
    pub fn len(&self) -> usize {
        self.symbols.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn unk(&self) -> u32 {
        self.symbols.len() as u32
    }

    /// Known symbols in id order.
    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn id(&self, c: char) -> Option<u32> {
        self.symbols.binary_search(&c).ok().map(|i| i as u32)
    }

    pub fn encode_char(&self, c: char) -> u32 {
        self.id(c).unwrap_or(self.unk())
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        text.chars().map(|c| self.encode_char(c)).collect()
    }

    pub fn decode_id(&self, id: u32) -> char {
        self.symbols.get(id as usize).copied().unwrap_or(UNK_CHAR)
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter().map(|&i| self.decode_id(i)).collect()
    }

    /// The symbols as one string, for storing next to a checkpoint.
    pub fn to_symbol_string(&self) -> String {
        self.symbols.iter().collect()
    }

    /// Errors listing the symbols on which two vocabularies disagree.
    pub fn ensure_matches(&self, other: &Vocabulary) -> Result<()> {
        if self == other {
            return Ok(());
        }
        let a: BTreeSet<char> = self.symbols.iter().copied().collect();
        let b: BTreeSet<char> = other.symbols.iter().copied().collect();
        let only_a: String = a.difference(&b).collect();
        let only_b: String = b.difference(&a).collect();
        Err(Error::Vocabulary(format!(
            "symbols only in the first: {only_a:?}; only in the second: {only_b:?}"
        )))
    }
}

/// How a corpus is divided into train/validation/test, in characters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SplitSpec {
    /// Leading character counts for each split.
    Counts {
        train: usize,
        validation: usize,
        test: usize,
    },
    /// Leading fractions of the corpus for each split.
    Fractions { train: f64, validation: f64, test: f64 },
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::Counts {
            train: 2_800_000,
            validation: 200_000,
            test: 200_000,
        }
    }
}

impl SplitSpec {
    /// Character ranges of the three splits for a corpus of `len` characters.
    pub fn ranges(&self, len: usize) -> Result<[Range<usize>; 3]> {
        let [a, b, c] = match *self {
            SplitSpec::Counts {
                train,
                validation,
                test,
            } => {
                if train + validation + test > len {
                    return Err(Error::config(format!(
                        "split counts {train}+{validation}+{test} exceed corpus length {len}"
                    )));
                }
                [train, validation, test]
            }
            SplitSpec::Fractions {
                train,
                validation,
                test,
            } => {
                let fr = [train, validation, test];
                if fr.iter().any(|f| !(0.0..=1.0).contains(f)) || fr.iter().sum::<f64>() > 1.0 + 1e-12 {
                    return Err(Error::config("split fractions must be in [0, 1] and sum to at most 1"));
                }
                let mut counts = fr.map(|f| (f * len as f64).floor() as usize);
                let total: usize = counts.iter().sum();
                if total > len {
                    counts[2] -= total - len;
                }
                counts
            }
        };
        Ok([0..a, a..a + b, a + b..a + b + c])
    }
}

/// Encoded splits of one corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSplit {
    pub train: Vec<u32>,
    pub validation: Vec<u32>,
    pub test: Vec<u32>,
    /// Byte ranges of the source file covered by each split.
    pub provenance: [Range<usize>; 3],
}

impl CorpusSplit {
    pub fn get(&self, name: &str) -> Result<&[u32]> {
        match name {
            "train" => Ok(&self.train),
            "validation" | "valid" | "val" => Ok(&self.validation),
            "test" => Ok(&self.test),
            _ => Err(Error::config(format!("unknown split `{name}`"))),
        }
    }
}

/// Decodes bytes into characters, mapping each undecodable byte run to
/// `None`. Returns the characters with their starting byte offsets.
pub fn decode_units(bytes: &[u8]) -> Vec<(Option<char>, usize)> {
    let mut units = Vec::with_capacity(bytes.len());
    let mut offset = 0;
    for chunk in bytes.utf8_chunks() {
        for (i, c) in chunk.valid().char_indices() {
            units.push((Some(c), offset + i));
        }
        offset += chunk.valid().len();
        if !chunk.invalid().is_empty() {
            units.push((None, offset));
            offset += chunk.invalid().len();
        }
    }
    units
}

/// Splits raw bytes and builds the vocabulary from the training split.
pub fn split_corpus(bytes: &[u8], spec: &SplitSpec) -> Result<(Vocabulary, CorpusSplit)> {
    let units = decode_units(bytes);
    let ranges = spec.ranges(units.len())?;
    if ranges[0].is_empty() {
        return Err(Error::config("training split is empty"));
    }
    let vocab = Vocabulary::from_symbols(units[ranges[0].clone()].iter().filter_map(|u| u.0));
    let encode = |r: &Range<usize>| -> Vec<u32> {
        units[r.clone()]
            .iter()
            .map(|u| u.0.map_or(vocab.unk(), |c| vocab.encode_char(c)))
            .collect()
    };
    let byte_at = |i: usize| units.get(i).map_or(bytes.len(), |u| u.1);
    let provenance = ranges.clone().map(|r| byte_at(r.start)..byte_at(r.end));
    let split = CorpusSplit {
        train: encode(&ranges[0]),
        validation: encode(&ranges[1]),
        test: encode(&ranges[2]),
        provenance,
    };
    Ok((vocab, split))
}

pub fn load_corpus(path: &Path, spec: &SplitSpec) -> Result<(Vocabulary, CorpusSplit)> {
    let bytes = fs::read(path)?;
    split_corpus(&bytes, spec)
}

/// Start offsets of windows of `steps + 1` characters taken every `stride`.
pub fn window_starts(len: usize, steps: usize, stride: usize) -> Result<Vec<usize>> {
    if steps < 2 {
        return Err(Error::config("sequence length must be at least 2"));
    }
    if stride == 0 {
        return Err(Error::config("window stride must be positive"));
    }
    if steps + 1 > len {
        return Err(Error::config(format!(
            "sequence length {steps} + 1 exceeds split length {len}"
        )));
    }
    Ok((0..=len - steps - 1).step_by(stride).collect())
}

/// Which windows a batch draws on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WindowSelection {
    All,
    /// A seeded random `⌊N·fraction⌋` of the `N` windows.
    Fraction {
        fraction: f64,
    },
    /// A seeded random set of windows totalling at most this many target
    /// characters.
    Budget {
        characters: usize,
    },
}

impl WindowSelection {
    /// Sorted window indices out of `count`.
    pub fn select(&self, count: usize, steps: usize, rng: &mut Rng) -> Result<Vec<usize>> {
        let k = match *self {
            WindowSelection::All => return Ok((0..count).collect()),
            WindowSelection::Fraction { fraction } => {
                if !(fraction > 0.0 && fraction <= 1.0) {
                    return Err(Error::config("window fraction must lie in (0, 1]"));
                }
                (count as f64 * fraction).floor() as usize
            }
            WindowSelection::Budget { characters } => (characters / steps).min(count),
        };
        if k == 0 {
            return Err(Error::config("window selection picks no sequences"));
        }
        Ok(rng.subset(count, k))
    }
}

/// Text batch whose sequence `j` is the window starting at `starts[j]`:
/// inputs `ids[s..s+T]`, targets `ids[s+1..s+T+1]`.
pub fn batch_from_windows(ids: &[u32], steps: usize, starts: &[usize]) -> Result<Batch> {
    let n = starts.len();
    let mut inputs = vec![0; steps * n];
    let mut targets = vec![0; steps * n];
    for (j, &s) in starts.iter().enumerate() {
        if s + steps + 1 > ids.len() {
            return Err(Error::config("window runs past the end of the split"));
        }
        for t in 0..steps {
            inputs[t * n + j] = ids[s + t];
            targets[t * n + j] = ids[s + t + 1];
        }
    }
    Batch::symbols(steps, n, inputs, targets)
}

/// Windows of `steps + 1` characters (stride `stride`) chosen by
/// `selection`, grouped in order into batches of at most `per_batch`
/// sequences.
pub fn make_batches(
    ids: &[u32],
    steps: usize,
    per_batch: usize,
    stride: usize,
    selection: WindowSelection,
    rng: &mut Rng,
) -> Result<Vec<Batch>> {
    if per_batch == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    let starts = window_starts(ids.len(), steps, stride)?;
    let picked = selection.select(starts.len(), steps, rng)?;
    let chosen: Vec<usize> = picked.iter().map(|&i| starts[i]).collect();
    chosen
        .chunks(per_batch)
        .map(|c| batch_from_windows(ids, steps, c))
        .collect()
}

/// Random subset of `fraction` of a gradient batch's sequences, for
/// curvature products. At least one sequence is always chosen.
pub fn curvature_indices(sequences: usize, fraction: f64, rng: &mut Rng) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::config("curvature fraction must lie in (0, 1]"));
    }
    let k = ((sequences as f64 * fraction).floor() as usize).max(1);
    Ok(rng.subset(sequences, k))
}

/// Order-0 entropy, in bits, of the empirical symbol distribution of `ids`.
pub fn unigram_entropy(ids: &[u32]) -> f64 {
    if ids.is_empty() {
        return 0.0;
    }
    let max = ids.iter().copied().max().unwrap_or(0) as usize;
    let mut counts = vec![0usize; max + 1];
    for &i in ids {
        counts[i as usize] += 1;
    }
    let n = ids.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

/// Synthetic benchmark tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SyntheticTask {
    /// The period string repeated; sequence `j` starts at phase `j mod p`.
    PeriodicText { period: String, steps: usize },
    /// Filler text with occasional `[[ … ]]` groups, each closed within
    /// `span` characters of its opening and never nested.
    BracketLanguage {
        steps: usize,
        span: usize,
        filler: String,
        /// Chance of opening a group at each position outside one.
        open_probability: f64,
    },
    /// Two-channel input (value, marker); the single target at the last
    /// step is the sum of the two marked values.
    MarkedAddition { steps: usize },
}

/// Default filler for the bracket language: lower-case letters, space,
/// and the capital `T` so contexts like "Th" are representable.
pub const BRACKET_FILLER: &str = "Taehinost ";

impl SyntheticTask {
    pub fn steps(&self) -> usize {
        match self {
            SyntheticTask::PeriodicText { steps, .. }
            | SyntheticTask::BracketLanguage { steps, .. }
            | SyntheticTask::MarkedAddition { steps } => *steps,
        }
    }

    /// Vocabulary of a text task; `None` for marked addition.
    pub fn vocabulary(&self) -> Option<Vocabulary> {
        match self {
            SyntheticTask::PeriodicText { period, .. } => Some(Vocabulary::from_text(period)),
            SyntheticTask::BracketLanguage { filler, .. } => {
                Some(Vocabulary::from_symbols(filler.chars().chain(['[', ']'])))
            }
            SyntheticTask::MarkedAddition { .. } => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SyntheticTask::PeriodicText { period, steps } => {
                if period.is_empty() || *steps == 0 {
                    return Err(Error::config("periodic task needs a period and steps > 0"));
                }
            }
            SyntheticTask::BracketLanguage {
                steps,
                span,
                filler,
                open_probability,
            } => {
                if *steps == 0 || *span < 5 {
                    return Err(Error::config("bracket task needs steps > 0 and span >= 5"));
                }
                if filler.is_empty() || filler.contains(['[', ']']) {
                    return Err(Error::config("bracket filler must be non-empty and bracket-free"));
                }
                if !(*open_probability > 0.0 && *open_probability <= 1.0) {
                    return Err(Error::config("open_probability must lie in (0, 1]"));
                }
            }
            SyntheticTask::MarkedAddition { steps } => {
                if *steps < 2 {
                    return Err(Error::config("marked addition needs at least 2 steps"));
                }
            }
        }
        Ok(())
    }

    /// Text of `len` characters for sequence `j`.
    pub fn text(&self, j: usize, len: usize, rng: &mut Rng) -> Result<String> {
        self.validate()?;
        match self {
            SyntheticTask::PeriodicText { period, .. } => {
                let p: Vec<char> = period.chars().collect();
                Ok((0..len).map(|i| p[(i + j) % p.len()]).collect())
            }
            SyntheticTask::BracketLanguage {
                span,
                filler,
                open_probability,
                ..
            } => Ok(bracket_text(len, *span, filler, *open_probability, rng)),
            SyntheticTask::MarkedAddition { .. } => Err(Error::config("marked addition produces no text")),
        }
    }
}

/// Generates bracket-language text. Inside a group, the number of filler
/// characters between `[[` and `]]` is uniform in `0..=span − 4`.
fn bracket_text(len: usize, span: usize, filler: &str, open_p: f64, rng: &mut Rng) -> String {
    let fill: Vec<char> = filler.chars().collect();
    let mut out = String::with_capacity(len + span);
    let mut count = 0;
    while count < len {
        if rng.uniform() < open_p {
            let inner = rng.below(span - 3);
            out.push_str("[[");
            for _ in 0..inner {
                out.push(fill[rng.below(fill.len())]);
            }
            out.push_str("]]");
            count += inner + 4;
        } else {
            out.push(fill[rng.below(fill.len())]);
            count += 1;
        }
    }
    out.chars().take(len).collect()
}

/// Sum of the marked values of one marked-addition sequence.
pub fn marked_addition_target(values: &[f64], markers: &[bool]) -> f64 {
    values.iter().zip(markers).filter(|(_, &m)| m).map(|(v, _)| v).sum()
}

/// `n` sequences of a synthetic task as one batch.
pub fn gen_synthetic(task: &SyntheticTask, n: usize, rng: &mut Rng) -> Result<Batch> {
    task.validate()?;
    if n == 0 {
        return Err(Error::config("synthetic batch needs at least one sequence"));
    }
    let steps = task.steps();
    match task {
        SyntheticTask::MarkedAddition { .. } => {
            let mut inputs = vec![Array2::zeros((2, n)); steps];
            let mut target = Array2::zeros((1, n));
            for j in 0..n {
                let values: Vec<f64> = (0..steps).map(|_| rng.uniform()).collect();
                let marked = rng.subset(steps, 2);
                let mut markers = vec![false; steps];
                for &m in &marked {
                    markers[m] = true;
                }
                for t in 0..steps {
                    inputs[t][[0, j]] = values[t];
                    inputs[t][[1, j]] = f64::from(u8::from(markers[t]));
                }
                target[[0, j]] = marked_addition_target(&values, &markers);
            }
            let mut values = vec![Array2::zeros((1, n)); steps];
            values[steps - 1] = target;
            let mut mask = vec![false; steps];
            mask[steps - 1] = true;
            Ok(Batch {
                steps,
                sequences: n,
                inputs: Inputs::Dense(inputs),
                targets: Targets::Dense { values, mask },
            })
        }
        _ => {
            let vocab = task.vocabulary().expect("text task");
            let seqs = (0..n)
                .map(|j| {
                    let ids = vocab.encode(&task.text(j, steps + 1, rng)?);
                    Ok((ids[..steps].to_vec(), ids[1..].to_vec()))
                })
                .collect::<Result<Vec<_>>>()?;
            Batch::from_sequences(&seqs)
        }
    }
}
