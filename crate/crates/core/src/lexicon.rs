//! Word-meaning HMM parameters and their per-part-of-speech configuration.
//!
//! Every lexical entry owns a discrete-output HMM: an initial distribution, a
//! row-stochastic transition matrix and one categorical output distribution
//! per (state, feature). All of them are sum-to-one "rows", and the trainers
//! address them uniformly through [`Distributions::row`] with the fixed order
//! initial, transition rows, then output rows `(state, feature)` state-major.
//!
//! Probabilities are kept in linear space; the lattice converts to log space.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_TAG: &str = "lexdt-lexicon";
pub const FORMAT_VERSION: u32 = 1;

/// Sum-to-one tolerance used by [`validate`].
pub const SUM_TOLERANCE: f64 = 1e-10;
pub const DEFAULT_FLOOR: f64 = 1e-12;
pub const DEFAULT_JITTER: f64 = 0.01;

/// How a feature is computed from the tracks bound to a word's arguments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    /// Detected class of the first argument's detection.
    ObjectClass,
    /// Change of distance between arguments 0 and 1: decreasing, stable, increasing.
    DistanceChange,
    /// Speed magnitude of the first argument.
    ActorSpeed,
    /// Direction of the vector from argument 0 to argument 1, in equal sectors.
    RelativeAngle,
}

impl FeatureKind {
    pub fn min_arity(self) -> usize {
        match self {
            FeatureKind::ObjectClass | FeatureKind::ActorSpeed => 1,
            FeatureKind::DistanceChange | FeatureKind::RelativeAngle => 2,
        }
    }
}

/// Fixed quantizer settings shared by every part of speech.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Ascending speed bin edges; `edges.len() + 1` bins.
    pub speed_edges: Vec<f64>,
    /// Half-width of the "stable" band for distance change.
    pub distance_threshold: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            speed_edges: vec![0.25, 1.0],
            distance_threshold: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosConfig {
    pub name: String,
    pub state_count: usize,
    pub features: Vec<FeatureKind>,
    pub bins: Vec<usize>,
    pub arity: usize,
}

impl PosConfig {
    pub fn feature_count(&self) -> usize {
        self.features.len()
    }

    fn check(&self, features: &FeatureConfig) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(format!("part of speech `{}`: {msg}", self.name)));
        if self.state_count == 0 {
            return fail("state_count must be at least 1".into());
        }
        if self.arity == 0 {
            return fail("arity must be at least 1".into());
        }
        if self.bins.len() != self.features.len() {
            return fail(format!(
                "{} bin counts for {} features",
                self.bins.len(),
                self.features.len()
            ));
        }
        for (kind, &z) in self.features.iter().zip(&self.bins) {
            if z == 0 {
                return fail("bin counts must be positive".into());
            }
            if kind.min_arity() > self.arity {
                return fail(format!("feature {kind:?} needs arity {}", kind.min_arity()));
            }
            match kind {
                FeatureKind::DistanceChange if z != 3 => {
                    return fail("distance-change feature has exactly 3 bins".into())
                }
                FeatureKind::ActorSpeed if z != features.speed_edges.len() + 1 => {
                    return fail(format!(
                        "speed feature has {} bins but {} edges are configured",
                        z,
                        features.speed_edges.len()
                    ))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Which sum-to-one distribution a row index refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Initial,
    Transition(usize),
    Output { state: usize, feature: usize },
}

impl fmt::Display for RowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RowKind::Initial => write!(f, "initial"),
            RowKind::Transition(i) => write!(f, "transition[{i}]"),
            RowKind::Output { state, feature } => write!(f, "output[state {state}, feature {feature}]"),
        }
    }
}

/// The distributions of one HMM, also reused as a same-shaped table of
/// counts, gradients or per-row values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distributions {
    pub initial: Vec<f64>,
    pub transition: Vec<Vec<f64>>,
    /// `output[state][feature][bin]`
    pub output: Vec<Vec<Vec<f64>>>,
}

impl Distributions {
    pub fn filled(pos: &PosConfig, value: f64) -> Self {
        let states = pos.state_count;
        Distributions {
            initial: vec![value; states],
            transition: vec![vec![value; states]; states],
            output: vec![pos.bins.iter().map(|&z| vec![value; z]).collect(); states],
        }
    }

    pub fn uniform(pos: &PosConfig) -> Self {
        let mut d = Self::filled(pos, 1.0);
        for r in 0..d.row_count() {
            let row = d.row_mut(r);
            let k = row.len() as f64;
            row.iter_mut().for_each(|p| *p = 1.0 / k);
        }
        d
    }

    pub fn zeros_like(&self) -> Self {
        let mut d = self.clone();
        for r in 0..d.row_count() {
            d.row_mut(r).iter_mut().for_each(|p| *p = 0.0);
        }
        d
    }

    pub fn state_count(&self) -> usize {
        self.initial.len()
    }

    pub fn feature_count(&self) -> usize {
        self.output.first().map_or(0, Vec::len)
    }

    pub fn row_count(&self) -> usize {
        let i = self.state_count();
        1 + i + i * self.feature_count()
    }

    pub fn row_kind(&self, row: usize) -> RowKind {
        let i = self.state_count();
        let n = self.feature_count();
        match row {
            0 => RowKind::Initial,
            r if r <= i => RowKind::Transition(r - 1),
            r => {
                let o = r - 1 - i;
                RowKind::Output {
                    state: o / n,
                    feature: o % n,
                }
            }
        }
    }

    pub fn row(&self, row: usize) -> &[f64] {
        match self.row_kind(row) {
            RowKind::Initial => &self.initial,
            RowKind::Transition(i) => &self.transition[i],
            RowKind::Output { state, feature } => &self.output[state][feature],
        }
    }

    pub fn row_mut(&mut self, row: usize) -> &mut [f64] {
        match self.row_kind(row) {
            RowKind::Initial => &mut self.initial,
            RowKind::Transition(i) => &mut self.transition[i],
            RowKind::Output { state, feature } => &mut self.output[state][feature],
        }
    }

    /// `self += weight * other`, element-wise over all rows.
    pub fn add_scaled(&mut self, other: &Distributions, weight: f64) {
        for r in 0..self.row_count() {
            for (a, b) in self.row_mut(r).iter_mut().zip(other.row(r)) {
                *a += weight * b;
            }
        }
    }
}

/// Normalizes a row to sum to one, then applies `floor` and renormalizes.
/// Returns `false` (leaving the row untouched) if the row has no positive mass.
pub fn normalize_row(row: &mut [f64], floor: f64) -> bool {
    let total: f64 = row.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return false;
    }
    row.iter_mut().for_each(|p| *p = (*p / total).max(floor));
    let total: f64 = row.iter().sum();
    row.iter_mut().for_each(|p| *p /= total);
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordModel {
    pub name: String,
    /// Index into [`Lexicon::pos_table`].
    pub pos: usize,
    pub dists: Distributions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    pub pos_table: Vec<PosConfig>,
    pub features: FeatureConfig,
    pub entries: Vec<WordModel>,
}

/// A same-shaped table with one [`Distributions`] per lexical entry.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTable {
    pub entries: Vec<Distributions>,
}

impl ParamTable {
    pub fn zeros(lexicon: &Lexicon) -> Self {
        ParamTable {
            entries: lexicon.entries.iter().map(|e| e.dists.zeros_like()).collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &ParamTable, weight: f64) {
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            a.add_scaled(b, weight);
        }
    }

    /// Largest absolute component.
    pub fn max_abs(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|d| (0..d.row_count()).flat_map(move |r| d.row(r).iter().copied()))
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl Lexicon {
    pub fn entry_count(&self) -> usize {
        self.entries.len()
    }

    pub fn entry_id(&self, word: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == word)
    }

    pub fn pos_id(&self, name: &str) -> Option<usize> {
        self.pos_table.iter().position(|p| p.name == name)
    }

    pub fn pos_of(&self, entry: usize) -> &PosConfig {
        &self.pos_table[self.entries[entry].pos]
    }

    pub fn vocabulary(&self) -> Vec<(String, String)> {
        self.entries
            .iter()
            .map(|e| (e.name.clone(), self.pos_table[e.pos].name.clone()))
            .collect()
    }

    /// Copies the distributions of the listed entries from `source`.
    pub fn copy_entries_from(&mut self, source: &Lexicon, entries: &[usize]) {
        for &m in entries {
            self.entries[m].dists = source.entries[m].dists.clone();
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Lexicon> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Lexicon::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            format: FORMAT_TAG.to_string(),
            version: FORMAT_VERSION,
            pos_table: self.pos_table.clone(),
            features: self.features.clone(),
            entries: self
                .entries
                .iter()
                .map(|e| EntryRecord {
                    word: e.name.clone(),
                    pos: self.pos_table[e.pos].name.clone(),
                    initial: e.dists.initial.clone(),
                    transition: e.dists.transition.clone(),
                    output: e.dists.output.clone(),
                })
                .collect(),
        };
        let mut text = serde_json::to_string_pretty(&file).expect("lexicon serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Lexicon> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(json_error)?;
        let header: Header = serde_json::from_value(value.clone()).map_err(|e| Error::Parse {
            line: 0,
            column: 0,
            message: format!("missing format header: {e}"),
        })?;
        if header.format != FORMAT_TAG {
            return Err(Error::Parse {
                line: 0,
                column: 0,
                message: format!("not a lexicon file (format tag `{}`)", header.format),
            });
        }
        if header.version != FORMAT_VERSION {
            return Err(Error::Version {
                found: header.version,
                expected: FORMAT_VERSION,
            });
        }
        let file: ModelFile = serde_json::from_str(text).map_err(json_error)?;
        let mut entries = Vec::with_capacity(file.entries.len());
        for (m, rec) in file.entries.into_iter().enumerate() {
            let pos = file
                .pos_table
                .iter()
                .position(|p| p.name == rec.pos)
                .ok_or_else(|| Error::Parse {
                    line: 0,
                    column: 0,
                    message: format!("entry {m} (`{}`) has unknown part of speech `{}`", rec.word, rec.pos),
                })?;
            entries.push(WordModel {
                name: rec.word,
                pos,
                dists: Distributions {
                    initial: rec.initial,
                    transition: rec.transition,
                    output: rec.output,
                },
            });
        }
        let lexicon = Lexicon {
            pos_table: file.pos_table,
            features: file.features,
            entries,
        };
        let shape_errors: Vec<_> = validate(&lexicon)
            .into_iter()
            .filter(|v| matches!(v.problem, Problem::Shape(_)))
            .collect();
        if let Some(v) = shape_errors.first() {
            return Err(Error::Parse {
                line: 0,
                column: 0,
                message: v.to_string(),
            });
        }
        Ok(lexicon)
    }
}

fn json_error(e: serde_json::Error) -> Error {
    Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

#[derive(Deserialize)]
struct Header {
    format: String,
    version: u32,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    pos_table: Vec<PosConfig>,
    features: FeatureConfig,
    entries: Vec<EntryRecord>,
}

#[derive(Serialize, Deserialize)]
struct EntryRecord {
    word: String,
    pos: String,
    initial: Vec<f64>,
    transition: Vec<Vec<f64>>,
    output: Vec<Vec<Vec<f64>>>,
}

fn build(
    pos_table: &[PosConfig],
    features: &FeatureConfig,
    vocabulary: &[(String, String)],
    mut fill: impl FnMut(&mut [f64]),
) -> Result<Lexicon> {
    for pos in pos_table {
        pos.check(features)?;
    }
    let mut entries = Vec::with_capacity(vocabulary.len());
    for (word, pos_name) in vocabulary {
        let pos = pos_table
            .iter()
            .position(|p| &p.name == pos_name)
            .ok_or_else(|| Error::Config(format!("word `{word}` has unknown part of speech `{pos_name}`")))?;
        if entries.iter().any(|e: &WordModel| &e.name == word) {
            return Err(Error::Config(format!("duplicate vocabulary word `{word}`")));
        }
        let mut dists = Distributions::uniform(&pos_table[pos]);
        for r in 0..dists.row_count() {
            fill(dists.row_mut(r));
        }
        entries.push(WordModel {
            name: word.clone(),
            pos,
            dists,
        });
    }
    Ok(Lexicon {
        pos_table: pos_table.to_vec(),
        features: features.clone(),
        entries,
    })
}

/// Uniform distributions perturbed by a seeded multiplicative jitter of the
/// given amplitude (0 gives exactly uniform).
pub fn init_uniform(
    pos_table: &[PosConfig],
    features: &FeatureConfig,
    vocabulary: &[(String, String)],
    jitter: f64,
    seed: u64,
) -> Result<Lexicon> {
    if !(0.0..1.0).contains(&jitter) {
        return Err(Error::Config(format!("jitter amplitude {jitter} outside [0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    build(pos_table, features, vocabulary, |row| {
        if jitter > 0.0 {
            for p in row.iter_mut() {
                *p *= 1.0 + jitter * rng.random_range(-1.0..=1.0);
            }
            normalize_row(row, 0.0);
        }
    })
}

/// Random distributions with every probability at least `min_weight / K`-ish;
/// used for property tests and random restarts.
pub fn init_random(
    pos_table: &[PosConfig],
    features: &FeatureConfig,
    vocabulary: &[(String, String)],
    min_weight: f64,
    seed: u64,
) -> Result<Lexicon> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    build(pos_table, features, vocabulary, |row| {
        for p in row.iter_mut() {
            *p = min_weight + rng.random::<f64>();
        }
        normalize_row(row, 0.0);
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Problem {
    Shape(String),
    Negative { index: usize, value: f64 },
    NonFinite { index: usize },
    Sum(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub entry: usize,
    pub word: String,
    pub row: Option<RowKind>,
    pub problem: Problem,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "entry {} (`{}`)", self.entry, self.word)?;
        if let Some(row) = &self.row {
            write!(f, " {row}")?;
        }
        match &self.problem {
            Problem::Shape(msg) => write!(f, ": {msg}"),
            Problem::Negative { index, value } => write!(f, ": probability {value} at bin {index} is negative"),
            Problem::NonFinite { index } => write!(f, ": non-finite probability at bin {index}"),
            Problem::Sum(s) => write!(f, ": row sums to {s}"),
        }
    }
}

/// Every invariant violation of the lexicon; empty means valid.
pub fn validate(lexicon: &Lexicon) -> Vec<Violation> {
    let mut out = Vec::new();
    for (m, entry) in lexicon.entries.iter().enumerate() {
        let shape = |msg: String| Violation {
            entry: m,
            word: entry.name.clone(),
            row: None,
            problem: Problem::Shape(msg),
        };
        let Some(pos) = lexicon.pos_table.get(entry.pos) else {
            out.push(shape(format!("part of speech index {} not in table", entry.pos)));
            continue;
        };
        if let Err(e) = pos.check(&lexicon.features) {
            out.push(shape(e.to_string()));
            continue;
        }
        let d = &entry.dists;
        let i = pos.state_count;
        let shape_ok = d.initial.len() == i
            && d.transition.len() == i
            && d.transition.iter().all(|r| r.len() == i)
            && d.output.len() == i
            && d.output
                .iter()
                .all(|s| s.len() == pos.bins.len() && s.iter().zip(&pos.bins).all(|(b, &z)| b.len() == z));
        if !shape_ok {
            out.push(shape(format!(
                "distribution shapes do not match part of speech `{}`",
                pos.name
            )));
            continue;
        }
        for r in 0..d.row_count() {
            let row = d.row(r);
            let kind = d.row_kind(r);
            let mut push = |problem| {
                out.push(Violation {
                    entry: m,
                    word: entry.name.clone(),
                    row: Some(kind),
                    problem,
                })
            };
            for (index, &p) in row.iter().enumerate() {
                if !p.is_finite() {
                    push(Problem::NonFinite { index });
                } else if p < 0.0 {
                    push(Problem::Negative { index, value: p });
                }
            }
            let sum: f64 = row.iter().sum();
            if !((sum - 1.0).abs() <= SUM_TOLERANCE) {
                push(Problem::Sum(sum));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn pos_table() -> Vec<PosConfig> {
        vec![
            PosConfig {
                name: "noun".into(),
                state_count: 1,
                features: vec![FeatureKind::ObjectClass],
                bins: vec![4],
                arity: 1,
            },
            PosConfig {
                name: "verb".into(),
                state_count: 2,
                features: vec![FeatureKind::DistanceChange, FeatureKind::ActorSpeed],
                bins: vec![3, 3],
                arity: 2,
            },
        ]
    }

    fn vocab() -> Vec<(String, String)> {
        [("person", "noun"), ("chair", "noun"), ("approached", "verb")]
            .iter()
            .map(|(w, p)| (w.to_string(), p.to_string()))
            .collect()
    }

    fn uniform() -> Lexicon {
        init_uniform(&pos_table(), &FeatureConfig::default(), &vocab(), 0.0, 7).unwrap()
    }

    #[test]
    fn uniform_rows_before_jitter() {
        let lex = uniform();
        let verb = &lex.entries[2].dists;
        assert_eq!(verb.transition, vec![vec![0.5, 0.5], vec![0.5, 0.5]]);
        assert_eq!(lex.entries[0].dists.output[0][0], vec![0.25; 4]);
        assert!(validate(&lex).is_empty());
    }

    #[test]
    fn zero_jitter_is_seed_independent() {
        let a = init_uniform(&pos_table(), &FeatureConfig::default(), &vocab(), 0.0, 1).unwrap();
        let b = init_uniform(&pos_table(), &FeatureConfig::default(), &vocab(), 0.0, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn jittered_init_is_valid_and_seeded() {
        let a = init_uniform(&pos_table(), &FeatureConfig::default(), &vocab(), 0.01, 3).unwrap();
        let b = init_uniform(&pos_table(), &FeatureConfig::default(), &vocab(), 0.01, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, uniform());
        assert!(validate(&a).is_empty());
        for e in &a.entries {
            for r in 0..e.dists.row_count() {
                let k = e.dists.row(r).len() as f64;
                for &p in e.dists.row(r) {
                    assert!((p * k - 1.0).abs() < 0.03);
                }
            }
        }
    }

    #[test]
    fn unknown_pos_is_config_error() {
        let vocab = vec![("flibber".to_string(), "adverb".to_string())];
        let err = init_uniform(&pos_table(), &FeatureConfig::default(), &vocab, 0.0, 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn bins_must_match_features() {
        let mut table = pos_table();
        table[1].bins = vec![3];
        let err = init_uniform(&table, &FeatureConfig::default(), &vocab(), 0.0, 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn validate_reports_bad_row_sum() {
        let mut lex = uniform();
        lex.entries[2].dists.transition[1] = vec![0.6, 0.6];
        let v = validate(&lex);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].row, Some(RowKind::Transition(1)));
        match v[0].problem {
            Problem::Sum(s) => assert!((s - 1.2).abs() < 1e-12),
            ref p => panic!("unexpected {p:?}"),
        }
        assert!(v[0].to_string().contains("1.2"));
    }

    #[test]
    fn validate_reports_negative_probability() {
        let mut lex = uniform();
        lex.entries[0].dists.output[0][0] = vec![-0.1, 0.3, 0.4, 0.4];
        let v = validate(&lex);
        assert!(v.iter().any(|v| matches!(
            v.problem,
            Problem::Negative { index: 0, value } if value == -0.1
        )));
        assert_eq!(
            v[0].row,
            Some(RowKind::Output {
                state: 0,
                feature: 0
            })
        );
    }

    #[test]
    fn row_addressing_covers_every_distribution() {
        let lex = uniform();
        let d = &lex.entries[2].dists;
        assert_eq!(d.row_count(), 1 + 2 + 2 * 2);
        assert_eq!(d.row_kind(0), RowKind::Initial);
        assert_eq!(d.row_kind(2), RowKind::Transition(1));
        assert_eq!(d.row_kind(5), RowKind::Output { state: 1, feature: 0 });
        assert_eq!(d.row(6).len(), 3);
    }

    #[test]
    fn normalize_row_applies_floor() {
        let mut row = vec![1.0, 0.0, 1.0];
        assert!(normalize_row(&mut row, 1e-3));
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(row[1] > 9e-4);
        let mut dead = vec![0.0, 0.0];
        assert!(!normalize_row(&mut dead, 1e-3));
        assert_eq!(dead, vec![0.0, 0.0]);
    }

    #[test]
    fn save_load_round_trip() {
        let lex = init_random(&pos_table(), &FeatureConfig::default(), &vocab(), 0.0, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        lex.save(&path).unwrap();
        let back = Lexicon::load(&path).unwrap();
        assert_eq!(back, lex);
    }

    #[test]
    fn truncated_file_is_parse_error() {
        let text = uniform().to_json();
        let cut = &text[..text.len() / 2];
        match Lexicon::from_json(cut).unwrap_err() {
            Error::Parse { line, .. } => assert!(line > 0),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn unknown_version_is_version_error() {
        let text = uniform().to_json().replace("\"version\": 1", "\"version\": 42");
        assert!(matches!(
            Lexicon::from_json(&text).unwrap_err(),
            Error::Version { found: 42, expected: 1 }
        ));
    }
}
