//! Datasets: synthetic tasks that are learnable but not trivial, plus a TSV
//! loader for externally supplied single-sentence or sentence-pair data.
//!
//! Every synthetic task is checked at generation time against a fixed-capacity
//! bag-of-tokens linear baseline; the baseline must land strictly between
//! chance and perfect or generation retries with a perturbed seed.

use super::metrics::MetricKind;
use super::HarnessError;
use crate::encoder::HeadKind;
use crate::rng::{stream_rng, Stream};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::BufRead;
use std::path::Path;

/// Reserved token ids; content tokens start at [`FIRST_CONTENT_TOKEN`].
pub const CLS_TOKEN: u32 = 0;
pub const SEP_TOKEN: u32 = 1;
pub const MASK_TOKEN: u32 = 2;
pub const UNK_TOKEN: u32 = 3;
pub const FIRST_CONTENT_TOKEN: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    PatternClassification,
    PairSimilarityRegression,
    Acceptability,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Label {
    Class(usize),
    Score(f64),
}

impl Label {
    pub fn as_f64(&self) -> f64 {
        match self {
            Label::Class(c) => *c as f64,
            Label::Score(s) => *s,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub tokens_a: Vec<u32>,
    pub tokens_b: Option<Vec<u32>>,
    pub label: Label,
}

impl Example {
    /// Encoder input: `[CLS] a` or `[CLS] a [SEP] b`.
    pub fn encode(&self) -> Vec<u32> {
        let mut out = Vec::with_capacity(
            1 + self.tokens_a.len() + self.tokens_b.as_ref().map_or(0, |b| b.len() + 1),
        );
        out.push(CLS_TOKEN);
        out.extend_from_slice(&self.tokens_a);
        if let Some(b) = &self.tokens_b {
            out.push(SEP_TOKEN);
            out.extend_from_slice(b);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub kind: Option<TaskKind>,
    pub train: Vec<Example>,
    pub eval: Vec<Example>,
    pub vocab_size: usize,
    pub head: HeadKind,
    pub metric: MetricKind,
    /// Bag-of-tokens baseline score on the eval split, recorded when built.
    pub baseline_score: f64,
    /// Fraction of eval tokens mapped to UNK (TSV datasets only).
    pub eval_oov_rate: Option<f64>,
}

impl Dataset {
    pub fn is_classification(&self) -> bool {
        matches!(self.head, HeadKind::Classification { .. })
    }

    pub fn num_labels(&self) -> usize {
        match self.head {
            HeadKind::Classification { num_labels } => num_labels,
            HeadKind::Regression => 0,
        }
    }

    pub fn max_encoded_len(&self) -> usize {
        self.train
            .iter()
            .chain(self.eval.iter())
            .map(|e| e.encode().len())
            .max()
            .unwrap_or(0)
    }

    fn validate(&self) -> Result<(), HarnessError> {
        if self.train.is_empty() || self.eval.is_empty() {
            return Err(HarnessError::validation("dataset splits must be nonempty"));
        }
        if let HeadKind::Classification { num_labels } = self.head {
            for (split, examples) in [("train", &self.train), ("eval", &self.eval)] {
                for e in examples.iter() {
                    match e.label {
                        Label::Class(c) if c < num_labels => {}
                        _ => {
                            return Err(HarnessError::validation(format!(
                                "{split} split holds a label outside 0..{num_labels}"
                            )))
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

// ── Synthetic tasks ─────────────────────────────────────────────────────

struct TokenGroups {
    group_a: std::ops::Range<u32>,
    group_b: std::ops::Range<u32>,
    filler: std::ops::Range<u32>,
}

fn token_groups(vocab_size: usize) -> Result<TokenGroups, HarnessError> {
    let content = FIRST_CONTENT_TOKEN..vocab_size as u32;
    let n = content.end - content.start;
    if n < 16 {
        return Err(HarnessError::validation(format!(
            "vocab_size {vocab_size} leaves {n} content tokens; need at least 16"
        )));
    }
    let quarter = n / 4;
    Ok(TokenGroups {
        group_a: content.start..content.start + quarter,
        group_b: content.start + quarter..content.start + 2 * quarter,
        filler: content.start + 2 * quarter..content.end,
    })
}

fn pick(rng: &mut ChaCha8Rng, range: &std::ops::Range<u32>) -> u32 {
    rng.random_range(range.clone())
}

/// Generate a synthetic dataset. Deterministic per seed; retries with a
/// perturbed seed (up to 5 attempts) when the baseline check lands outside
/// the learnable-but-not-trivial band.
pub fn make_synthetic_task(
    kind: TaskKind,
    train_size: usize,
    eval_size: usize,
    vocab_size: usize,
    seed: u64,
) -> Result<Dataset, HarnessError> {
    if train_size < 20 {
        return Err(HarnessError::validation(format!(
            "train_size {train_size} below the minimum of 20"
        )));
    }
    if eval_size < 10 {
        return Err(HarnessError::validation(format!(
            "eval_size {eval_size} below the minimum of 10"
        )));
    }
    let mut last_score = f64::NAN;
    for attempt in 0..5u64 {
        let eff_seed = seed.wrapping_add(attempt.wrapping_mul(1_000_003));
        let mut rng = stream_rng(eff_seed, Stream::Data);
        let train: Vec<Example> = (0..train_size)
            .map(|_| gen_example(kind, &mut rng, vocab_size))
            .collect::<Result<_, _>>()?;
        let eval: Vec<Example> = (0..eval_size)
            .map(|_| gen_example(kind, &mut rng, vocab_size))
            .collect::<Result<_, _>>()?;

        let (head, metric) = task_shape(kind);
        let ds = Dataset {
            name: format!("{kind:?}-{train_size}x{eval_size}-s{seed}"),
            kind: Some(kind),
            train,
            eval,
            vocab_size,
            head,
            metric,
            baseline_score: 0.0,
            eval_oov_rate: None,
        };
        ds.validate()?;
        if ds.is_classification() {
            let classes_present = |split: &[Example]| {
                let mut seen = vec![false; ds.num_labels()];
                for e in split {
                    if let Label::Class(c) = e.label {
                        seen[c] = true;
                    }
                }
                seen.iter().all(|&s| s)
            };
            if !classes_present(&ds.train) || !classes_present(&ds.eval) {
                continue;
            }
        }
        let score = baseline_score(&ds);
        last_score = score;
        let (lo, hi) = baseline_band(kind);
        if score > lo && score < hi {
            return Ok(Dataset {
                baseline_score: score,
                ..ds
            });
        }
    }
    Err(HarnessError::validation(format!(
        "synthetic {kind:?} generation degenerate after 5 attempts (last baseline {last_score:.3})"
    )))
}

fn task_shape(kind: TaskKind) -> (HeadKind, MetricKind) {
    match kind {
        TaskKind::PatternClassification => {
            (HeadKind::Classification { num_labels: 2 }, MetricKind::Accuracy)
        }
        TaskKind::PairSimilarityRegression => {
            (HeadKind::Regression, MetricKind::PearsonSpearmanMean)
        }
        TaskKind::Acceptability => (HeadKind::Classification { num_labels: 2 }, MetricKind::Mcc),
    }
}

/// Accepted baseline band (strictly between chance and perfect).
fn baseline_band(kind: TaskKind) -> (f64, f64) {
    match kind {
        TaskKind::PatternClassification => (0.55, 0.95),
        TaskKind::Acceptability => (0.55, 0.95),
        TaskKind::PairSimilarityRegression => (0.20, 0.98),
    }
}

fn gen_example(
    kind: TaskKind,
    rng: &mut ChaCha8Rng,
    vocab_size: usize,
) -> Result<Example, HarnessError> {
    let groups = token_groups(vocab_size)?;
    Ok(match kind {
        TaskKind::PatternClassification => gen_pattern(rng, &groups),
        TaskKind::PairSimilarityRegression => gen_pair(rng, &groups),
        TaskKind::Acceptability => gen_acceptability(rng, vocab_size),
    })
}

/// Mostly-linear counting rule with a bigram bonus a linear bag model cannot
/// see: label = 1 iff (#A − #B) + 2·[adjacent A→B pair exists] > 0.
fn gen_pattern(rng: &mut ChaCha8Rng, groups: &TokenGroups) -> Example {
    let len = rng.random_range(8..=12);
    let mut tokens = Vec::with_capacity(len);
    for _ in 0..len {
        let roll: f64 = rng.random();
        let t = if roll < 0.5 {
            pick(rng, &groups.filler)
        } else if roll < 0.75 {
            pick(rng, &groups.group_a)
        } else {
            pick(rng, &groups.group_b)
        };
        tokens.push(t);
    }
    let in_a = |t: u32| groups.group_a.contains(&t);
    let in_b = |t: u32| groups.group_b.contains(&t);
    let count_a = tokens.iter().filter(|&&t| in_a(t)).count() as i64;
    let count_b = tokens.iter().filter(|&&t| in_b(t)).count() as i64;
    let bigram = tokens.windows(2).any(|w| in_a(w[0]) && in_b(w[1]));
    let score = count_a - count_b + if bigram { 2 } else { 0 };
    Example {
        tokens_a: tokens,
        tokens_b: None,
        label: Label::Class(usize::from(score > 0)),
    }
}

/// Sentence pair where the second sentence is the first with k replacements;
/// the similarity score down-weights late positions, which bag features
/// cannot represent.
fn gen_pair(rng: &mut ChaCha8Rng, groups: &TokenGroups) -> Example {
    let content = groups.group_a.start..groups.filler.end;
    let len = rng.random_range(5..=8);
    let a: Vec<u32> = (0..len).map(|_| pick(rng, &content)).collect();
    let k = rng.random_range(0..=len);
    let mut positions: Vec<usize> = (0..len).collect();
    for i in (1..len).rev() {
        let j = rng.random_range(0..=i);
        positions.swap(i, j);
    }
    let mut b = a.clone();
    for &p in positions.iter().take(k) {
        let mut replacement = pick(rng, &content);
        while replacement == a[p] {
            replacement = pick(rng, &content);
        }
        b[p] = replacement;
    }
    let weight = |p: usize| if p < len / 2 { 2.0 } else { 1.0 };
    let total: f64 = (0..len).map(weight).sum();
    let changed: f64 = positions.iter().take(k).map(|&p| weight(p)).sum();
    Example {
        tokens_a: a,
        tokens_b: Some(b),
        label: Label::Score(1.0 - changed / total),
    }
}

/// Cyclic class grammar: class(t) must advance by one per position. Negative
/// examples corrupt one or two positions with tokens from the skewed first
/// half of a wrong class, which leaves a unigram trace.
fn gen_acceptability(rng: &mut ChaCha8Rng, vocab_size: usize) -> Example {
    let content_start = FIRST_CONTENT_TOKEN;
    let content_len = vocab_size as u32 - content_start;
    let class_size = content_len / 4;
    let class_range = |c: u32| {
        let start = content_start + c * class_size;
        start..start + class_size
    };
    let len = rng.random_range(6..=10);
    let start_class: u32 = rng.random_range(0..4);
    let mut tokens = Vec::with_capacity(len);
    for i in 0..len {
        let class = (start_class + i as u32) % 4;
        tokens.push(pick(rng, &class_range(class)));
    }
    let grammatical = rng.random::<f64>() < 0.5;
    if !grammatical {
        let corruptions = rng.random_range(1..=2usize);
        for _ in 0..corruptions {
            let p = rng.random_range(0..len);
            let true_class = (start_class + p as u32) % 4;
            let wrong_class = (true_class + 2) % 4;
            let r = class_range(wrong_class);
            // Skewed draw: only the first half of the wrong class.
            let half = r.start..(r.start + (r.end - r.start).max(2) / 2);
            tokens[p] = pick(rng, &half);
        }
    }
    Example {
        tokens_a: tokens,
        tokens_b: None,
        label: Label::Class(usize::from(grammatical)),
    }
}

// ── Bag-of-tokens baseline ──────────────────────────────────────────────

fn bag_features(e: &Example, vocab_size: usize) -> Vec<f64> {
    let count = |tokens: &[u32]| {
        let mut c = vec![0.0; vocab_size];
        for &t in tokens {
            c[t as usize] += 1.0;
        }
        c
    };
    match &e.tokens_b {
        None => count(&e.tokens_a),
        Some(b) => {
            let ca = count(&e.tokens_a);
            let cb = count(b);
            let mut f = Vec::with_capacity(2 * vocab_size);
            for i in 0..vocab_size {
                f.push(ca[i] + cb[i]);
            }
            for i in 0..vocab_size {
                f.push((ca[i] - cb[i]).abs());
            }
            f
        }
    }
}

/// Fixed-capacity linear baseline on bag-of-token counts: logistic
/// regression (classification) or least squares (regression), full-batch
/// gradient descent, deterministic. Returns the task metric on eval:
/// accuracy for classification, Pearson correlation for regression.
pub fn baseline_score(ds: &Dataset) -> f64 {
    let feats: Vec<Vec<f64>> = ds
        .train
        .iter()
        .map(|e| bag_features(e, ds.vocab_size))
        .collect();
    let dim = feats[0].len();
    let mut w = vec![0.0; dim];
    let mut bias = 0.0;
    let n = feats.len() as f64;
    let classification = ds.is_classification();
    let (iters, lr, l2) = if classification {
        (300, 0.5, 1e-4)
    } else {
        (500, 0.2, 1e-4)
    };
    for _ in 0..iters {
        let mut gw = vec![0.0; dim];
        let mut gb = 0.0;
        for (f, e) in feats.iter().zip(&ds.train) {
            let z = bias + f.iter().zip(&w).map(|(x, wi)| x * wi).sum::<f64>();
            let err = if classification {
                let p = 1.0 / (1.0 + (-z).exp());
                p - e.label.as_f64()
            } else {
                z - e.label.as_f64()
            };
            for (g, x) in gw.iter_mut().zip(f) {
                *g += err * x;
            }
            gb += err;
        }
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= lr * (g / n + l2 * *wi);
        }
        bias -= lr * gb / n;
    }
    let mut preds = Vec::with_capacity(ds.eval.len());
    let mut labels = Vec::with_capacity(ds.eval.len());
    for e in &ds.eval {
        let f = bag_features(e, ds.vocab_size);
        let z = bias + f.iter().zip(&w).map(|(x, wi)| x * wi).sum::<f64>();
        preds.push(if classification {
            f64::from(z > 0.0)
        } else {
            z
        });
        labels.push(e.label.as_f64());
    }
    if classification {
        let correct = preds
            .iter()
            .zip(&labels)
            .filter(|(p, l)| (*p - *l).abs() < 0.5)
            .count();
        correct as f64 / preds.len() as f64
    } else {
        super::metrics::pearson(&preds, &labels).map_or(0.0, |m| m.value)
    }
}

// ── TSV ingestion ───────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TsvSchema {
    SingleSentence,
    SentencePair,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TsvLabelKind {
    Class,
    Score,
}

/// Load `train.tsv` and `eval.tsv` from a directory. Whitespace tokenization
/// against a vocabulary built from the train split only (insertion order,
/// capped at `vocab_cap`); out-of-vocabulary tokens map to the UNK id.
pub fn load_tsv_dir(
    dir: &Path,
    schema: TsvSchema,
    label_kind: TsvLabelKind,
    vocab_cap: usize,
) -> Result<Dataset, HarnessError> {
    let train_path = dir.join("train.tsv");
    let eval_path = dir.join("eval.tsv");
    for p in [&train_path, &eval_path] {
        if !p.exists() {
            return Err(HarnessError::validation(format!(
                "missing dataset file {}",
                p.display()
            )));
        }
    }
    if vocab_cap <= FIRST_CONTENT_TOKEN as usize {
        return Err(HarnessError::validation(format!(
            "vocab_cap {vocab_cap} leaves no room for content tokens"
        )));
    }

    let train_rows = read_rows(&train_path, schema, label_kind)?;
    let eval_rows = read_rows(&eval_path, schema, label_kind)?;
    if train_rows.is_empty() {
        return Err(HarnessError::validation(format!(
            "{}: no data rows",
            train_path.display()
        )));
    }
    if eval_rows.is_empty() {
        return Err(HarnessError::validation(format!(
            "{}: no data rows",
            eval_path.display()
        )));
    }

    let mut vocab = indexmap::IndexMap::new();
    for row in &train_rows {
        for word in row.words() {
            if vocab.len() + (FIRST_CONTENT_TOKEN as usize) >= vocab_cap {
                break;
            }
            let next_id = FIRST_CONTENT_TOKEN + vocab.len() as u32;
            vocab.entry(word.to_string()).or_insert(next_id);
        }
    }
    let lookup = |word: &str| vocab.get(word).copied().unwrap_or(UNK_TOKEN);

    let mut oov = 0usize;
    let mut eval_tokens = 0usize;
    let encode_rows = |rows: &[Row], count_oov: bool, oov: &mut usize, total: &mut usize| {
        rows.iter()
            .map(|row| {
                let map_words = |words: &[String], oov: &mut usize, total: &mut usize| {
                    words
                        .iter()
                        .map(|w| {
                            let id = lookup(w);
                            if count_oov {
                                *total += 1;
                                if id == UNK_TOKEN {
                                    *oov += 1;
                                }
                            }
                            id
                        })
                        .collect::<Vec<u32>>()
                };
                Example {
                    tokens_a: map_words(&row.text_a, oov, total),
                    tokens_b: row.text_b.as_ref().map(|b| map_words(b, oov, total)),
                    label: row.label,
                }
            })
            .collect::<Vec<Example>>()
    };
    let train = encode_rows(&train_rows, false, &mut oov, &mut eval_tokens);
    let eval = encode_rows(&eval_rows, true, &mut oov, &mut eval_tokens);

    let (head, metric) = match label_kind {
        TsvLabelKind::Class => {
            let max_label = train_rows
                .iter()
                .chain(&eval_rows)
                .map(|r| match r.label {
                    Label::Class(c) => c,
                    Label::Score(_) => 0,
                })
                .max()
                .unwrap_or(1);
            let num_labels = (max_label + 1).max(2);
            let metric = match schema {
                TsvSchema::SingleSentence => MetricKind::Mcc,
                TsvSchema::SentencePair => MetricKind::F1AccMean,
            };
            (HeadKind::Classification { num_labels }, metric)
        }
        TsvLabelKind::Score => (HeadKind::Regression, MetricKind::PearsonSpearmanMean),
    };

    let vocab_size = FIRST_CONTENT_TOKEN as usize + vocab.len();
    let ds = Dataset {
        name: format!("tsv:{}", dir.display()),
        kind: None,
        train,
        eval,
        vocab_size,
        head,
        metric,
        baseline_score: f64::NAN,
        eval_oov_rate: Some(if eval_tokens == 0 {
            0.0
        } else {
            oov as f64 / eval_tokens as f64
        }),
    };
    ds.validate()?;
    let baseline = baseline_score(&ds);
    Ok(Dataset {
        baseline_score: baseline,
        ..ds
    })
}

struct Row {
    text_a: Vec<String>,
    text_b: Option<Vec<String>>,
    label: Label,
}

impl Row {
    fn words(&self) -> impl Iterator<Item = &str> {
        self.text_a
            .iter()
            .chain(self.text_b.iter().flatten())
            .map(|s| s.as_str())
    }
}

fn read_rows(
    path: &Path,
    schema: TsvSchema,
    label_kind: TsvLabelKind,
) -> Result<Vec<Row>, HarnessError> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut rows = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let expected = match schema {
            TsvSchema::SingleSentence => 2,
            TsvSchema::SentencePair => 3,
        };
        if cols.len() != expected {
            return Err(HarnessError::validation(format!(
                "{}:{line_no}: expected {expected} tab-separated columns, found {}",
                path.display(),
                cols.len()
            )));
        }
        let label_text = cols[expected - 1].trim();
        let label = match label_kind {
            TsvLabelKind::Class => Label::Class(label_text.parse::<usize>().map_err(|_| {
                HarnessError::validation(format!(
                    "{}:{line_no}: label {label_text:?} is not a class index",
                    path.display()
                ))
            })?),
            TsvLabelKind::Score => Label::Score(label_text.parse::<f64>().map_err(|_| {
                HarnessError::validation(format!(
                    "{}:{line_no}: label {label_text:?} is not a number",
                    path.display()
                ))
            })?),
        };
        let tokenize = |s: &str| s.split_whitespace().map(str::to_string).collect::<Vec<_>>();
        let text_a = tokenize(cols[0]);
        if text_a.is_empty() {
            return Err(HarnessError::validation(format!(
                "{}:{line_no}: empty sentence",
                path.display()
            )));
        }
        let text_b = match schema {
            TsvSchema::SingleSentence => None,
            TsvSchema::SentencePair => {
                let b = tokenize(cols[1]);
                if b.is_empty() {
                    return Err(HarnessError::validation(format!(
                        "{}:{line_no}: empty second sentence",
                        path.display()
                    )));
                }
                Some(b)
            }
        };
        rows.push(Row {
            text_a,
            text_b,
            label,
        });
    }
    Ok(rows)
}
