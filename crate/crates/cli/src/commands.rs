use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use log::{error, info, warn};
use serde::{Deserialize, Serialize};

use lexdt::eval::{
    cross_validate, initial_lexicon, mean_auc, run_experiment, ExperimentConfig, ExperimentInputs, Method, SeedResult,
    TrainerConfig,
};
use lexdt::grammar::{realize, GrammarSpec};
use lexdt::lattice::{normalized_score, viterbi_score};
use lexdt::lexicon::Lexicon;
use lexdt::trainer_dt::{restricted_positives, train_ml_ml, train_two_phase, DtTraceRow};
use lexdt::trainer_ml::{train_ml, MlTraceRow};
use lexdt::worldsim::{
    generate_corpus, hand_lexicon, read_clips, read_corpus, read_ground_truth, read_world, world_template, write_corpus,
    SimConfig,
};
use lexdt::{Error, Result};

use crate::{EvaluateArgs, GenerateArgs, ScoreArgs, TrainArgs};

pub fn report(e: &Error) -> ExitCode {
    let mut msg = format!("error: {e}");
    let mut source = std::error::Error::source(e);
    while let Some(s) = source {
        let _ = write!(msg, "\n  caused by: {s}");
        source = s.source();
    }
    eprintln!("{msg}");
    ExitCode::FAILURE
}

pub fn load_grammar(path: Option<&Path>) -> Result<GrammarSpec> {
    match path {
        Some(p) => GrammarSpec::load(p),
        None => Ok(GrammarSpec::builtin()),
    }
}

fn load_toml<T: for<'de> Deserialize<'de> + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        }
    }
}

/// Logs the effective settings, defaults included.
fn echo<T: Serialize>(what: &str, config: &T) {
    match toml::to_string(config) {
        Ok(text) => info!("effective {what} configuration:\n{text}"),
        Err(e) => warn!("cannot print the {what} configuration: {e}"),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct GenerateConfig {
    seed: u64,
    world: SimConfig,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            seed: 1,
            world: SimConfig::default(),
        }
    }
}

pub fn generate(args: &GenerateArgs, grammar: &GrammarSpec) -> Result<ExitCode> {
    let mut config: GenerateConfig = load_toml(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(clips) = args.clips {
        config.world.clip_count = clips;
    }
    echo("generate", &config);
    let template = world_template(&config.world, grammar)?;
    let (corpus, truth) = generate_corpus(&config.world, grammar, &template, config.seed)?;
    let restricted: usize = restricted_positives(&corpus, grammar, &template)?.iter().map(Vec::len).sum();
    println!("clips\t{}", corpus.clips.len());
    println!("positives\t{}", corpus.positive_count());
    println!("restricted-grammar true\t{restricted}");
    println!("full-grammar only\t{}", corpus.positive_count() - restricted);
    if args.dry_run {
        info!("dry run: nothing written");
        return Ok(ExitCode::SUCCESS);
    }
    let out = args.out.as_ref().expect("clap requires --out without --dry-run");
    write_corpus(out, &corpus, &truth, &config.world, &template)?;
    info!("corpus written to {}", out.display());
    Ok(ExitCode::SUCCESS)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct TrainConfig {
    method: Method,
    trainer: TrainerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: Method::DtMl,
            trainer: TrainerConfig::default(),
        }
    }
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.{suffix}"))
}

fn ml_trace(rows: &[MlTraceRow]) -> String {
    let mut s = String::from("iteration\tlog_likelihood\n");
    for r in rows {
        let _ = writeln!(s, "{}\t{}", r.iteration, r.log_likelihood);
    }
    s
}

fn dt_trace(rows: &[DtTraceRow]) -> String {
    let mut s = String::from("iteration\tobjective\taccepted\tmax_damping\n");
    for r in rows {
        let _ = writeln!(s, "{}\t{}\t{}\t{}", r.iteration, r.objective, r.accepted, r.max_damping);
    }
    s
}

pub fn train(args: &TrainArgs, grammar: &GrammarSpec) -> Result<ExitCode> {
    let mut config: TrainConfig = load_toml(args.config.as_deref())?;
    if let Some(m) = &args.method {
        config.method = m.parse()?;
    }
    if let Some(s) = args.init_seed {
        config.trainer.init_seed = s;
    }
    if let Some(s) = args.negative_seed {
        config.trainer.dt.seed = s;
    }
    if let Some(n) = args.negatives {
        config.trainer.dt.negatives = n;
    }
    if !config.method.is_trained() {
        return Err(Error::Config(format!("`{}` is not a trained method", config.method.name())));
    }
    echo("train", &config);
    let world = read_world(&args.corpus)?;
    let template = world_template(&world, grammar)?;
    let corpus = read_corpus(&args.corpus, grammar, &template)?;
    info!(
        "training {} on {} clips with {} positives",
        config.method.name(),
        corpus.clips.len(),
        corpus.positive_count()
    );
    let lexicon0 = initial_lexicon(&template, &config.trainer)?;
    let lexicon = match config.method {
        Method::Ml => {
            let (lexicon, trace) = train_ml(&corpus, &lexicon0, &config.trainer.ml)?;
            write_file(&sibling(&args.out, "trace.tsv"), &ml_trace(&trace))?;
            lexicon
        }
        Method::MlMl => {
            let r = train_ml_ml(&corpus, grammar, &lexicon0, &config.trainer.ml)?;
            write_file(&sibling(&args.out, "phase1.tsv"), &ml_trace(&r.phase1))?;
            write_file(&sibling(&args.out, "phase2.tsv"), &ml_trace(&r.phase2))?;
            r.seed_lexicon.save(sibling(&args.out, "seed.json"))?;
            r.lexicon
        }
        Method::DtMl => {
            let r = train_two_phase(&corpus, grammar, &lexicon0, &config.trainer.dt, &config.trainer.ml)?;
            write_file(&sibling(&args.out, "phase1.tsv"), &dt_trace(&r.phase1))?;
            write_file(&sibling(&args.out, "phase2.tsv"), &ml_trace(&r.phase2))?;
            r.seed_lexicon.save(sibling(&args.out, "seed.json"))?;
            r.lexicon
        }
        _ => unreachable!("checked above"),
    };
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    lexicon.save(&args.out)?;
    info!("model written to {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn map_witness(assignment: &[Vec<usize>], participants: usize) -> String {
    (0..participants)
        .map(|p| {
            let track: Vec<String> = assignment.iter().map(|frame| frame[p].to_string()).collect();
            format!("p{p}={}", track.join(","))
        })
        .collect::<Vec<_>>()
        .join(";")
}

pub fn score(args: &ScoreArgs, grammar: &GrammarSpec) -> Result<ExitCode> {
    let lexicon = Lexicon::load(&args.model)?;
    grammar.check(&lexicon)?;
    let clips = read_clips(&args.clips)?;
    let text = fs::read_to_string(&args.sentences).map_err(|e| Error::io(&args.sentences, e))?;
    let lc = lexdt::lattice::LatticeConfig::default();
    let mut failures = 0usize;
    let mut sentences = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match grammar.parse_str(line, &lexicon) {
            Ok(p) => sentences.push(p.template),
            Err(e) => {
                error!("{}:{}: {e}", args.sentences.display(), n + 1);
                failures += 1;
            }
        }
    }
    let mut table = String::from("clip\tsentence\tscore");
    table.push_str(if args.map { "\tmap\n" } else { "\n" });
    for clip in &clips {
        for s in &sentences {
            let words = realize(s, &lexicon);
            match normalized_score(clip, s, &lexicon, &lc) {
                Ok(v) => {
                    let _ = write!(table, "{}\t{words}\t{v}", clip.clip_id);
                    if args.map {
                        let path = viterbi_score(clip, s, &lexicon, &lc)?;
                        let _ = write!(table, "\t{}", map_witness(&path.assignment, s.participant_count));
                    }
                    table.push('\n');
                }
                Err(e) => {
                    error!("clip {} `{words}`: {e}", clip.clip_id);
                    failures += 1;
                }
            }
        }
    }
    match &args.out {
        Some(p) => write_file(p, &table)?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(table.as_bytes()).map_err(|e| Error::io("<stdout>", e))?;
        }
    }
    if failures > 0 {
        error!("{failures} sentence(s) or pair(s) could not be scored");
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn ratio_label(r: f64) -> String {
    format!("{r:.2}")
}

fn fmt_auc(a: Option<f64>) -> String {
    a.map_or_else(|| "-".into(), |v| format!("{v:.6}"))
}

fn write_report(out: &Path, results: &[(String, Vec<lexdt::eval::RatioResult>)], config: &ExperimentConfig) -> Result<String> {
    let mut table = String::from("corpus\tratio\tmethod\tauc\tauc_nv\tauc_all\n");
    for (label, ratios) in results {
        for r in ratios {
            for m in &r.methods {
                let mut curve = String::from("# fpr\ttpr\n");
                for p in &m.curve {
                    let _ = writeln!(curve, "{}\t{}", p.fpr, p.tpr);
                }
                let path = out
                    .join("curves")
                    .join(format!("ratio-{}", ratio_label(r.ratio)))
                    .join(format!("{label}-{}.tsv", m.method.name()));
                write_file(&path, &curve)?;
                let _ = writeln!(
                    table,
                    "{label}\t{}\t{}\t{}\t{}\t{}",
                    ratio_label(r.ratio),
                    m.method.name(),
                    fmt_auc(Some(m.auc)),
                    fmt_auc(m.auc_nv),
                    fmt_auc(m.auc_all)
                );
            }
        }
    }
    if results.len() > 1 {
        let seeds: Vec<SeedResult> = results
            .iter()
            .map(|(_, r)| SeedResult {
                corpus_seed: 0,
                ratios: r.clone(),
            })
            .collect();
        for &ratio in &config.plan.ratios {
            for &method in &config.plan.methods {
                let _ = writeln!(
                    table,
                    "mean\t{}\t{}\t{}\t-\t-",
                    ratio_label(ratio),
                    method.name(),
                    fmt_auc(mean_auc(&seeds, ratio, method))
                );
            }
        }
    }
    write_file(&out.join("auc.tsv"), &table)?;
    Ok(table)
}

pub fn evaluate(args: &EvaluateArgs, grammar: &GrammarSpec) -> Result<ExitCode> {
    let mut config: ExperimentConfig = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(r) = &args.ratios {
        config.plan.ratios = r.clone();
    }
    if let Some(s) = &args.seeds {
        config.corpus_seeds = s.clone();
    }
    if let Some(m) = &args.methods {
        config.plan.methods = m.iter().map(|s| s.parse()).collect::<Result<_>>()?;
    }
    config.plan.check()?;
    echo("evaluate", &config);
    let results: Vec<(String, Vec<lexdt::eval::RatioResult>)> = match &args.corpus {
        Some(dir) => {
            let world = read_world(dir)?;
            let template = world_template(&world, grammar)?;
            let corpus = read_corpus(dir, grammar, &template)?;
            let truth = read_ground_truth(dir)?;
            let hand = hand_lexicon(&world, &template)?;
            let inputs = ExperimentInputs {
                corpus: &corpus,
                truth: &truth,
                world: &world,
                grammar,
                template: &template,
                hand: &hand,
                trainer: &config.trainer,
            };
            vec![("corpus".into(), cross_validate(&inputs, &config.plan)?)]
        }
        None => {
            if config.corpus_seeds.is_empty() {
                return Err(Error::Config("no corpus seeds configured".into()));
            }
            let template = world_template(&config.world, grammar)?;
            run_experiment(&config, grammar, &template)?
                .into_iter()
                .map(|s| (format!("seed-{}", s.corpus_seed), s.ratios))
                .collect()
        }
    };
    let table = write_report(&args.out, &results, &config)?;
    print!("{table}");
    Ok(ExitCode::SUCCESS)
}
