//! Full and restricted grammars, sentence parsing into predicate
//! conjunctions over participants, restricted-grammar enumeration and
//! negative sampling for competition sets.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexicon::Lexicon;

pub const DEFAULT_ENUMERATION_CAP: usize = 100_000;
const BUILTIN_GRAMMAR: &str = include_str!("../assets/grammar.toml");

/// A sentence as a conjunction of word predicates over participants.
///
/// Participants are numbered in order of first appearance.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SentenceTemplate {
    pub words: Vec<usize>,
    pub args: Vec<Vec<usize>>,
    pub participant_count: usize,
}

impl SentenceTemplate {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Checks the structural invariants against a lexicon.
    pub fn check(&self, lexicon: &Lexicon) -> Result<()> {
        if self.words.len() != self.args.len() {
            return Err(Error::Malformed("words and args differ in length".into()));
        }
        let mut seen = vec![false; self.participant_count];
        for (&m, args) in self.words.iter().zip(&self.args) {
            let entry = lexicon
                .entries
                .get(m)
                .ok_or_else(|| Error::Malformed(format!("entry id {m} not in lexicon")))?;
            let arity = lexicon.pos_table[entry.pos].arity;
            if args.len() != arity {
                return Err(Error::Malformed(format!(
                    "`{}` takes {arity} arguments, got {}",
                    entry.name,
                    args.len()
                )));
            }
            for &p in args {
                *seen
                    .get_mut(p)
                    .ok_or_else(|| Error::Malformed(format!("participant {p} out of range")))? = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Malformed("participant not referenced by any word".into()));
        }
        Ok(())
    }
}

/// Surface form: entry names joined by single spaces.
pub fn realize(template: &SentenceTemplate, lexicon: &Lexicon) -> String {
    template
        .words
        .iter()
        .map(|&m| lexicon.entries[m].name.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parse {
    pub template: SentenceTemplate,
    /// More than one distinct template derives the sentence; `template` is
    /// the first in leftmost-derivation order.
    pub ambiguous: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompetitionSet {
    pub clip_id: usize,
    pub sentences: Vec<SentenceTemplate>,
    pub positive_index: usize,
}

impl CompetitionSet {
    pub fn positive(&self) -> &SentenceTemplate {
        &self.sentences[self.positive_index]
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub pos: String,
    pub words: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RuleSetFile {
    start: String,
    rules: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GrammarFile {
    categories: BTreeMap<String, Category>,
    full: RuleSetFile,
    restricted: RuleSetFile,
}

#[derive(Debug, Clone, PartialEq)]
struct Symbol {
    name: String,
    args: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
struct Rule {
    lhs: String,
    params: Vec<String>,
    rhs: Vec<Symbol>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleSet {
    start: String,
    rules: Vec<Rule>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrammarSpec {
    pub categories: BTreeMap<String, Category>,
    pub full: RuleSet,
    pub restricted: RuleSet,
    pub enumeration_cap: usize,
}

fn parse_symbol(text: &str, rule: &str) -> Result<Symbol> {
    let bad = || Error::Config(format!("malformed symbol `{text}` in rule `{rule}`"));
    match text.find('(') {
        None => {
            if text.is_empty() || !text.chars().all(|c| c.is_alphanumeric() || c == '_' || c == '-') {
                return Err(bad());
            }
            Ok(Symbol {
                name: text.to_string(),
                args: Vec::new(),
            })
        }
        Some(open) => {
            if !text.ends_with(')') || open == 0 {
                return Err(bad());
            }
            let args: Vec<String> = text[open + 1..text.len() - 1]
                .split(',')
                .map(|a| a.trim().to_string())
                .filter(|a| !a.is_empty())
                .collect();
            if args.iter().any(|a| !a.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit())) {
                return Err(bad());
            }
            Ok(Symbol {
                name: text[..open].to_string(),
                args,
            })
        }
    }
}

/// Splits a rule body on whitespace that is outside parentheses.
fn split_symbols(body: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut depth = 0usize;
    for c in body.chars() {
        match c {
            '(' => {
                depth += 1;
                cur.push(c)
            }
            ')' => {
                depth = depth.saturating_sub(1);
                cur.push(c)
            }
            c if c.is_whitespace() && depth == 0 => {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
            }
            c if c.is_whitespace() => {}
            c => cur.push(c),
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

impl RuleSet {
    fn from_file(file: &RuleSetFile) -> Result<RuleSet> {
        let mut rules = Vec::new();
        for text in &file.rules {
            let (lhs, rhs) = text
                .split_once("->")
                .ok_or_else(|| Error::Config(format!("rule `{text}` has no `->`")))?;
            let lhs = parse_symbol(lhs.trim(), text)?;
            let rhs = split_symbols(rhs)
                .iter()
                .map(|s| parse_symbol(s, text))
                .collect::<Result<Vec<_>>>()?;
            if rhs.is_empty() {
                return Err(Error::Config(format!("rule `{text}` has an empty body")));
            }
            rules.push(Rule {
                lhs: lhs.name,
                params: lhs.args,
                rhs,
            });
        }
        Ok(RuleSet {
            start: file.start.clone(),
            rules,
        })
    }

    fn to_file(&self) -> RuleSetFile {
        let sym = |s: &Symbol| {
            if s.args.is_empty() {
                s.name.clone()
            } else {
                format!("{}({})", s.name, s.args.join(","))
            }
        };
        RuleSetFile {
            start: self.start.clone(),
            rules: self
                .rules
                .iter()
                .map(|r| {
                    let lhs = sym(&Symbol {
                        name: r.lhs.clone(),
                        args: r.params.clone(),
                    });
                    let rhs: Vec<String> = r.rhs.iter().map(sym).collect();
                    format!("{lhs} -> {}", rhs.join(" "))
                })
                .collect(),
        }
    }
}

/// One word produced by a derivation, with participant variables.
type Item = (usize, Vec<usize>);

impl GrammarSpec {
    pub fn from_toml(text: &str) -> Result<GrammarSpec> {
        let file: GrammarFile = toml::from_str(text).map_err(|e| {
            let (line, column) = e
                .span()
                .map(|s| line_col(text, s.start))
                .unwrap_or((0, 0));
            Error::Parse {
                line,
                column,
                message: e.message().to_string(),
            }
        })?;
        let spec = GrammarSpec {
            categories: file.categories,
            full: RuleSet::from_file(&file.full)?,
            restricted: RuleSet::from_file(&file.restricted)?,
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
        };
        for set in [&spec.full, &spec.restricted] {
            for rule in &set.rules {
                if spec.categories.contains_key(&rule.lhs) {
                    return Err(Error::Config(format!(
                        "lexical category `{}` used as a rule head",
                        rule.lhs
                    )));
                }
                for s in &rule.rhs {
                    if !spec.categories.contains_key(&s.name) && !set.rules.iter().any(|r| r.lhs == s.name) {
                        return Err(Error::Config(format!("symbol `{}` has no rules", s.name)));
                    }
                }
            }
            if !set.rules.iter().any(|r| r.lhs == set.start) {
                return Err(Error::Config(format!("start symbol `{}` has no rules", set.start)));
            }
        }
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        let file = GrammarFile {
            categories: self.categories.clone(),
            full: self.full.to_file(),
            restricted: self.restricted.to_file(),
        };
        toml::to_string(&file).expect("grammar serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<GrammarSpec> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        GrammarSpec::from_toml(&text)
    }

    /// The grammar of the default synthetic world.
    pub fn builtin() -> GrammarSpec {
        GrammarSpec::from_toml(BUILTIN_GRAMMAR).expect("builtin grammar is valid")
    }

    /// Every (word, part of speech) pair named by the categories, in
    /// category then word order.
    pub fn vocabulary(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        for cat in self.categories.values() {
            for w in &cat.words {
                if !out.iter().any(|(x, _)| x == w) {
                    out.push((w.clone(), cat.pos.clone()));
                }
            }
        }
        out
    }

    /// Entry ids of the words reachable from the restricted grammar.
    pub fn restricted_entries(&self, lexicon: &Lexicon) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .restricted
            .rules
            .iter()
            .flat_map(|r| r.rhs.iter())
            .filter_map(|s| self.categories.get(&s.name))
            .flat_map(|c| c.words.iter())
            .filter_map(|w| lexicon.entry_id(w))
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Checks that every category word exists in the lexicon with the
    /// category's part of speech and that every use matches its arity.
    pub fn check(&self, lexicon: &Lexicon) -> Result<()> {
        for (name, cat) in &self.categories {
            let pos = lexicon
                .pos_id(&cat.pos)
                .ok_or_else(|| Error::Config(format!("category `{name}` has unknown part of speech `{}`", cat.pos)))?;
            for w in &cat.words {
                let m = lexicon
                    .entry_id(w)
                    .ok_or_else(|| Error::Config(format!("category `{name}` word `{w}` not in lexicon")))?;
                if lexicon.entries[m].pos != pos {
                    return Err(Error::Config(format!("word `{w}` is not a {}", cat.pos)));
                }
            }
            let arity = lexicon.pos_table[pos].arity;
            for set in [&self.full, &self.restricted] {
                for rule in &set.rules {
                    for s in rule.rhs.iter().filter(|s| &s.name == name) {
                        if s.args.len() != arity {
                            return Err(Error::Config(format!(
                                "category `{name}` has arity {arity} but is used with {} arguments",
                                s.args.len()
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn category_entries(&self, lexicon: &Lexicon) -> HashMap<&str, Vec<usize>> {
        self.categories
            .iter()
            .map(|(name, cat)| {
                (
                    name.as_str(),
                    cat.words.iter().filter_map(|w| lexicon.entry_id(w)).collect(),
                )
            })
            .collect()
    }

    /// Parses with the full grammar.
    pub fn parse(&self, tokens: &[&str], lexicon: &Lexicon) -> Result<Parse> {
        self.parse_with(&self.full, tokens, lexicon)
    }

    pub fn parse_str(&self, sentence: &str, lexicon: &Lexicon) -> Result<Parse> {
        let tokens: Vec<&str> = sentence.split_whitespace().collect();
        self.parse(&tokens, lexicon)
    }

    pub fn parse_with(&self, rules: &RuleSet, tokens: &[&str], lexicon: &Lexicon) -> Result<Parse> {
        let mut ids = Vec::with_capacity(tokens.len());
        for t in tokens {
            ids.push(lexicon.entry_id(t).ok_or_else(|| Error::OutOfVocabulary(t.to_string()))?);
        }
        let sentence = tokens.join(" ");
        if ids.is_empty() {
            return Err(Error::NoParse(sentence));
        }
        let cats = self.category_entries(lexicon);
        let mut parser = Parser {
            rules,
            cats: &cats,
            tokens: &ids,
            fresh: 0,
            depth_limit: ids.len() * (rules.rules.len() + 1) + 2,
        };
        let start = Symbol {
            name: rules.start.clone(),
            args: Vec::new(),
        };
        let derivations = parser.derive(&start, &[], 0, 0);
        let mut templates: Vec<SentenceTemplate> = Vec::new();
        for (end, items) in derivations {
            if end != ids.len() {
                continue;
            }
            let t = canonical(&items);
            if !templates.contains(&t) {
                templates.push(t);
            }
        }
        let ambiguous = templates.len() > 1;
        let template = templates.into_iter().next().ok_or(Error::NoParse(sentence))?;
        Ok(Parse { template, ambiguous })
    }

    /// Complete, duplicate-free enumeration of the restricted grammar.
    /// Sentences that put one participant in two argument slots of the same
    /// word are excluded.
    pub fn enumerate_restricted(&self, lexicon: &Lexicon) -> Result<Vec<SentenceTemplate>> {
        self.enumerate(&self.restricted, lexicon)
    }

    pub fn enumerate(&self, rules: &RuleSet, lexicon: &Lexicon) -> Result<Vec<SentenceTemplate>> {
        let cats = self.category_entries(lexicon);
        let cap = self.enumeration_cap;
        let mut fresh = 0usize;
        let skeletons = expand(self, rules, &rules.start, &[], 0, &mut fresh, cap)?;
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for skeleton in skeletons {
            let items: Vec<Item> = skeleton.iter().map(|(_, vars)| (0, vars.clone())).collect();
            let shape = canonical(&items);
            if shape.args.iter().any(|a| has_repeat(a)) {
                continue;
            }
            let choices: Vec<&Vec<usize>> = skeleton.iter().map(|(cat, _)| &cats[cat.as_str()]).collect();
            if choices.iter().any(|c| c.is_empty()) {
                continue;
            }
            let total = choices
                .iter()
                .try_fold(1usize, |acc, c| acc.checked_mul(c.len()).filter(|&n| n <= cap.saturating_mul(4)))
                .ok_or(Error::GrammarTooLarge { cap })?;
            for flat in 0..total {
                // last position varies fastest
                let mut rem = flat;
                let mut words = vec![0usize; choices.len()];
                for k in (0..choices.len()).rev() {
                    words[k] = choices[k][rem % choices[k].len()];
                    rem /= choices[k].len();
                }
                let t = SentenceTemplate {
                    words,
                    args: shape.args.clone(),
                    participant_count: shape.participant_count,
                };
                if seen.insert(t.clone()) {
                    if out.len() == cap {
                        return Err(Error::GrammarTooLarge { cap });
                    }
                    out.push(t);
                }
            }
        }
        Ok(out)
    }
}

fn has_repeat(args: &[usize]) -> bool {
    args.iter().enumerate().any(|(i, a)| args[..i].contains(a))
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |p| p + 1) + 1;
    (line, column)
}

/// Renumbers participant variables by first appearance.
fn canonical(items: &[Item]) -> SentenceTemplate {
    let mut map: Vec<usize> = Vec::new();
    let mut args = Vec::with_capacity(items.len());
    for (_, vars) in items {
        let mut a = Vec::with_capacity(vars.len());
        for v in vars {
            let p = match map.iter().position(|x| x == v) {
                Some(p) => p,
                None => {
                    map.push(*v);
                    map.len() - 1
                }
            };
            a.push(p);
        }
        args.push(a);
    }
    SentenceTemplate {
        words: items.iter().map(|(m, _)| *m).collect(),
        args,
        participant_count: map.len(),
    }
}

/// Allocates variable ids for a rule application: parameters map to the
/// caller's variables, every other variable is fresh.
fn bind_rule(rule: &Rule, args: &[usize], fresh: &mut usize) -> HashMap<String, usize> {
    let mut env: HashMap<String, usize> = rule.params.iter().cloned().zip(args.iter().copied()).collect();
    for s in &rule.rhs {
        for a in &s.args {
            env.entry(a.clone()).or_insert_with(|| {
                *fresh += 1;
                *fresh
            });
        }
    }
    env
}

const MAX_EXPANSION_DEPTH: usize = 24;

type Skeleton = Vec<(String, Vec<usize>)>;

fn expand(
    grammar: &GrammarSpec,
    rules: &RuleSet,
    name: &str,
    args: &[usize],
    depth: usize,
    fresh: &mut usize,
    cap: usize,
) -> Result<Vec<Skeleton>> {
    if grammar.categories.contains_key(name) {
        return Ok(vec![vec![(name.to_string(), args.to_vec())]]);
    }
    if depth > MAX_EXPANSION_DEPTH {
        return Err(Error::GrammarTooLarge { cap });
    }
    let mut out = Vec::new();
    for rule in rules.rules.iter().filter(|r| r.lhs == name && r.params.len() == args.len()) {
        let env = bind_rule(rule, args, fresh);
        let mut partial: Vec<Skeleton> = vec![Vec::new()];
        for s in &rule.rhs {
            let sargs: Vec<usize> = s.args.iter().map(|a| env[a]).collect();
            let tails = expand(grammar, rules, &s.name, &sargs, depth + 1, fresh, cap)?;
            let mut next = Vec::with_capacity(partial.len() * tails.len());
            for p in &partial {
                for t in &tails {
                    let mut seq = p.clone();
                    seq.extend(t.iter().cloned());
                    next.push(seq);
                }
            }
            if next.len() > cap {
                return Err(Error::GrammarTooLarge { cap });
            }
            partial = next;
        }
        out.extend(partial);
        if out.len() > cap {
            return Err(Error::GrammarTooLarge { cap });
        }
    }
    Ok(out)
}

struct Parser<'a> {
    rules: &'a RuleSet,
    cats: &'a HashMap<&'a str, Vec<usize>>,
    tokens: &'a [usize],
    fresh: usize,
    depth_limit: usize,
}

impl Parser<'_> {
    /// All derivations of `sym` starting at `pos`, as (end, words).
    fn derive(&mut self, sym: &Symbol, args: &[usize], pos: usize, depth: usize) -> Vec<(usize, Vec<Item>)> {
        if let Some(members) = self.cats.get(sym.name.as_str()) {
            return match self.tokens.get(pos) {
                Some(&m) if members.contains(&m) => vec![(pos + 1, vec![(m, args.to_vec())])],
                _ => Vec::new(),
            };
        }
        if depth > self.depth_limit || pos >= self.tokens.len() {
            return Vec::new();
        }
        let rules = self.rules;
        let mut out = Vec::new();
        for rule in rules.rules.iter().filter(|r| r.lhs == sym.name && r.params.len() == args.len()) {
            let env = bind_rule(rule, args, &mut self.fresh);
            let mut partial: Vec<(usize, Vec<Item>)> = vec![(pos, Vec::new())];
            for s in &rule.rhs {
                let sargs: Vec<usize> = s.args.iter().map(|a| env[a]).collect();
                let mut next = Vec::new();
                for (p, items) in &partial {
                    for (end, tail) in self.derive(s, &sargs, *p, depth + 1) {
                        let mut seq = items.clone();
                        seq.extend(tail);
                        next.push((end, seq));
                    }
                }
                partial = next;
                if partial.is_empty() {
                    break;
                }
            }
            out.extend(partial);
        }
        out
    }
}

/// Builds a competition set from the positive plus `count` negatives drawn
/// uniformly without replacement from the sentences marked false.
pub fn sample_negatives(
    clip_id: usize,
    truths: &[bool],
    enumeration: &[SentenceTemplate],
    positive: &SentenceTemplate,
    count: usize,
    seed: u64,
) -> Result<CompetitionSet> {
    assert_eq!(truths.len(), enumeration.len(), "one truth label per sentence");
    let pool: Vec<usize> = (0..enumeration.len())
        .filter(|&i| !truths[i] && &enumeration[i] != positive)
        .collect();
    if pool.len() < count {
        return Err(Error::NegativePopulationTooSmall {
            available: pool.len(),
            requested: count,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = sample(&mut rng, pool.len(), count).into_iter().map(|k| pool[k]).collect();
    picked.sort_unstable();
    let mut sentences = Vec::with_capacity(count + 1);
    sentences.push(positive.clone());
    sentences.extend(picked.into_iter().map(|i| enumeration[i].clone()));
    Ok(CompetitionSet {
        clip_id,
        sentences,
        positive_index: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::{init_uniform, FeatureConfig, FeatureKind, PosConfig};

    pub fn test_pos_table() -> Vec<PosConfig> {
        let one = |name: &str, arity, feat: FeatureKind, bins| PosConfig {
            name: name.into(),
            state_count: 1,
            features: vec![feat],
            bins: vec![bins],
            arity,
        };
        vec![
            one("noun", 1, FeatureKind::ObjectClass, 6),
            one("verb", 2, FeatureKind::DistanceChange, 3),
            one("preposition", 2, FeatureKind::RelativeAngle, 4),
            one("adverb", 1, FeatureKind::ActorSpeed, 3),
            one("intransitive", 1, FeatureKind::ActorSpeed, 3),
        ]
    }

    fn builtin_lexicon() -> (GrammarSpec, Lexicon) {
        let g = GrammarSpec::builtin();
        let lex = init_uniform(&test_pos_table(), &FeatureConfig::default(), &g.vocabulary(), 0.0, 0).unwrap();
        g.check(&lex).unwrap();
        (g, lex)
    }

    #[test]
    fn parses_noun_verb_noun() {
        let (g, lex) = builtin_lexicon();
        let p = g.parse_str("person approached trash-can", &lex).unwrap();
        assert!(!p.ambiguous);
        let id = |w| lex.entry_id(w).unwrap();
        assert_eq!(p.template.words, vec![id("person"), id("approached"), id("trash-can")]);
        assert_eq!(p.template.args, vec![vec![0], vec![0, 1], vec![1]]);
        assert_eq!(p.template.participant_count, 2);
    }

    #[test]
    fn parses_prepositional_subject() {
        let (g, lex) = builtin_lexicon();
        let p = g
            .parse_str("person to-the-left-of backpack approached trash-can", &lex)
            .unwrap();
        assert_eq!(
            p.template.args,
            vec![vec![0], vec![0, 1], vec![1], vec![0, 2], vec![2]]
        );
        assert_eq!(p.template.participant_count, 3);
    }

    #[test]
    fn adverb_attaches_to_subject() {
        let (g, lex) = builtin_lexicon();
        let p = g.parse_str("chair departed box slowly", &lex).unwrap();
        assert_eq!(p.template.args, vec![vec![0], vec![0, 1], vec![1], vec![0]]);
    }

    #[test]
    fn out_of_vocabulary_token() {
        let (g, lex) = builtin_lexicon();
        match g.parse_str("person flibber chair", &lex).unwrap_err() {
            Error::OutOfVocabulary(t) => assert_eq!(t, "flibber"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn ungrammatical_sentence_has_no_parse() {
        let (g, lex) = builtin_lexicon();
        assert!(matches!(
            g.parse_str("approached person chair", &lex).unwrap_err(),
            Error::NoParse(_)
        ));
        assert!(matches!(g.parse_str("person", &lex).unwrap_err(), Error::NoParse(_)));
    }

    #[test]
    fn restricted_enumeration_of_builtin() {
        let (g, lex) = builtin_lexicon();
        let all = g.enumerate_restricted(&lex).unwrap();
        assert_eq!(all.len(), 6 * 2 * 6);
        for t in &all {
            let back = g.parse_str(&realize(t, &lex), &lex).unwrap();
            assert_eq!(&back.template, t);
        }
    }

    fn small_grammar(nouns: &[&str], verbs: &[&str], intrans: &[&str], rules: &str) -> (GrammarSpec, Lexicon) {
        let list = |ws: &[&str]| ws.iter().map(|w| format!("\"{w}\"")).collect::<Vec<_>>().join(", ");
        let text = format!(
            r#"
[categories.N]
pos = "noun"
words = [{}]
[categories.V]
pos = "verb"
words = [{}]
[categories.VI]
pos = "intransitive"
words = [{}]
[full]
start = "S"
rules = [{rules}]
[restricted]
start = "S"
rules = [{rules}]
"#,
            list(nouns),
            list(verbs),
            list(intrans)
        );
        let g = GrammarSpec::from_toml(&text).unwrap();
        let lex = init_uniform(&test_pos_table(), &FeatureConfig::default(), &g.vocabulary(), 0.0, 0).unwrap();
        (g, lex)
    }

    #[test]
    fn intransitive_template_count() {
        let (g, lex) = small_grammar(&["a", "b"], &[], &["moved"], r#""S -> N(x) VI(x)""#);
        assert_eq!(g.enumerate_restricted(&lex).unwrap().len(), 2);
    }

    #[test]
    fn transitive_template_count() {
        let (g, lex) = small_grammar(&["a", "b", "c"], &["v1", "v2"], &[], r#""S -> N(x) V(x,y) N(y)""#);
        assert_eq!(g.enumerate_restricted(&lex).unwrap().len(), 18);
    }

    #[test]
    fn empty_noun_category_enumerates_nothing() {
        let (g, lex) = small_grammar(&[], &["v1"], &[], r#""S -> N(x) V(x,y) N(y)""#);
        assert!(g.enumerate_restricted(&lex).unwrap().is_empty());
    }

    #[test]
    fn repeated_participant_is_excluded() {
        let (g, lex) = small_grammar(
            &["a", "b"],
            &["v"],
            &[],
            r#""S -> N(x) V(x,x)", "S -> N(x) V(x,y) N(y)""#,
        );
        assert_eq!(g.enumerate_restricted(&lex).unwrap().len(), 4);
    }

    #[test]
    fn recursive_restricted_grammar_is_too_large() {
        let (g, lex) = small_grammar(&["a"], &[], &["moved"], r#""S -> N(x) VI(x)", "S -> N(x) VI(x) S""#);
        assert!(matches!(
            g.enumerate_restricted(&lex).unwrap_err(),
            Error::GrammarTooLarge { .. }
        ));
        // parsing a recursive grammar still terminates
        let p = g.parse_str("a moved a moved", &lex).unwrap();
        assert_eq!(p.template.participant_count, 2);
    }

    #[test]
    fn enumeration_cap_is_enforced() {
        let (mut g, lex) = builtin_lexicon();
        g.enumeration_cap = 10;
        assert!(matches!(
            g.enumerate_restricted(&lex).unwrap_err(),
            Error::GrammarTooLarge { cap: 10 }
        ));
    }

    #[test]
    fn ambiguity_is_flagged() {
        let (g, lex) = small_grammar(
            &["a", "b"],
            &["v"],
            &[],
            r#""S -> N(x) V(x,y) N(y)", "S -> N(y) V(x,y) N(x)""#,
        );
        let p = g.parse_str("a v b", &lex).unwrap();
        assert!(p.ambiguous);
        assert_eq!(p.template.args, vec![vec![0], vec![0, 1], vec![1]]);
    }

    #[test]
    fn sample_negatives_sizes_and_determinism() {
        let (g, lex) = builtin_lexicon();
        let all = g.enumerate_restricted(&lex).unwrap();
        let mut truths = vec![false; all.len()];
        truths[3] = true;
        truths[10] = true;
        let set = sample_negatives(7, &truths, &all, &all[3], 47, 11).unwrap();
        assert_eq!(set.len(), 48);
        assert_eq!(set.positive(), &all[3]);
        assert!(!set.sentences[1..].contains(&all[10]));
        let uniq: HashSet<_> = set.sentences.iter().collect();
        assert_eq!(uniq.len(), 48);
        assert_eq!(set, sample_negatives(7, &truths, &all, &all[3], 47, 11).unwrap());

        let single = sample_negatives(7, &truths, &all, &all[3], 0, 11).unwrap();
        assert_eq!(single.len(), 1);

        assert!(matches!(
            sample_negatives(7, &truths, &all, &all[3], 71, 11).unwrap_err(),
            Error::NegativePopulationTooSmall { available: 70, requested: 71 }
        ));
    }

    #[test]
    fn toml_round_trip() {
        let g = GrammarSpec::builtin();
        let back = GrammarSpec::from_toml(&g.to_toml()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn malformed_grammar_file_reports_position() {
        match GrammarSpec::from_toml("[categories.N\npos = 1").unwrap_err() {
            Error::Parse { line, .. } => assert!(line >= 1),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn template_check_catches_bad_participants() {
        let (_, lex) = builtin_lexicon();
        let bad = SentenceTemplate {
            words: vec![0],
            args: vec![vec![1]],
            participant_count: 2,
        };
        assert!(bad.check(&lex).is_err());
    }
}
