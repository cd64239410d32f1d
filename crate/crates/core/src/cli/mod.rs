//! Command-line front end: `train`, `eval`, `predict` and
//! `export-embeddings`.

mod config;

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use config::{
    data_root, parse_override, preset_paths, preset_table, ConfigBuilder, RunConfig, DATA_ROOT_ENV, PRESETS,
};

use crate::error::{Error, Result};
use crate::evaluator::{evaluate, evaluate_zero_shot, split_zero_shot, PlusScorer, Scorer};
use crate::kgdata::{
    load_descriptions, load_triplets, Dataset, DescriptionTable, Split, Triplet, TripletIndex, TripletSet, Vocab,
};
use crate::numerics::{Dtype, Real};
use crate::text_encoder::PlusScore;
use crate::trainer::{read_dtype, Checkpoint, Model, Trainer};

#[derive(Debug, Parser)]
#[command(
    name = "dualchain",
    version,
    about = "Convolutional dual-chain knowledge-graph embeddings"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write its best checkpoint.
    Train(TrainArgs),
    /// Filtered link-prediction metrics of a checkpoint.
    Eval(EvalArgs),
    /// Rank completions of `h r ?` or `? r t`.
    Predict(PredictArgs),
    /// Write entity and relation embeddings as TSV.
    ExportEmbeddings(ExportArgs),
}

/// Options that select hyperparameters and data files.
#[derive(Debug, Args, Default)]
pub struct ConfigArgs {
    /// Flat TOML file of hyperparameters and `*_path` entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Named dataset setting; data files default to `$DUALCHAIN_DATA/<name>/`.
    #[arg(long)]
    pub preset: Option<String>,
    /// `key=value` override of any config entry; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub descriptions: Option<PathBuf>,
    #[arg(long)]
    pub word_vectors: Option<PathBuf>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut b = ConfigBuilder::new();
        if let Some(p) = &self.preset {
            b = b.preset(p, &data_root())?;
        }
        if let Some(c) = &self.config {
            b = b.file(c)?;
        }
        for o in &self.overrides {
            let (k, v) = parse_override(o)?;
            b = b.set(&k, v)?;
        }
        if let Some(s) = self.seed {
            b = b.set("seed", toml::Value::Integer(s as i64))?;
        }
        if let Some(e) = self.epochs {
            b = b.set("epochs", toml::Value::Integer(e as i64))?;
        }
        let paths = [
            ("train_path", &self.train),
            ("valid_path", &self.valid),
            ("test_path", &self.test),
            ("descriptions_path", &self.descriptions),
            ("word_vectors_path", &self.word_vectors),
        ];
        for (key, p) in paths {
            if let Some(p) = p {
                b = b.set(key, toml::Value::String(p.to_string_lossy().into_owned()))?;
            }
        }
        b.build()
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Checkpoint to write.
    #[arg(long, default_value = "model.ckpt")]
    pub out: PathBuf,
    /// JSON-lines training history; defaults to `<out>.history.jsonl`.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Worker threads for validation.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Also filter test positives from the candidates.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub filter_test: bool,
    /// Rank test triplets with entities unseen in training, by description.
    #[arg(long)]
    pub zero_shot: bool,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// `head relation ?` or `? relation tail`.
    #[arg(long)]
    pub query: String,
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
    /// Needed for description models.
    #[arg(long)]
    pub descriptions: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonFiniteLoss { .. } | Error::NonFiniteScore { .. } => 3,
        Error::SamplingExhausted { .. } => 1,
        _ => 2,
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the exit status. Errors are reported on one stderr line as
/// `error[<kind>]: <message>`.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return 2;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {}", e.kind(), e.to_string().replace('\n', " "));
            exit_code(&e)
        }
    }
}

pub fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train(a) => {
            let cfg = a.config.resolve()?;
            match cfg.train.dtype {
                Dtype::F32 => cmd_train::<f32>(&cfg, &a),
                Dtype::F64 => cmd_train::<f64>(&cfg, &a),
            }
        }
        Command::Eval(a) => match read_dtype(&a.checkpoint)? {
            Dtype::F32 => cmd_eval::<f32>(&a),
            Dtype::F64 => cmd_eval::<f64>(&a),
        },
        Command::Predict(a) => match read_dtype(&a.checkpoint)? {
            Dtype::F32 => cmd_predict::<f32>(&a, &mut std::io::stdout().lock()),
            Dtype::F64 => cmd_predict::<f64>(&a, &mut std::io::stdout().lock()),
        },
        Command::ExportEmbeddings(a) => match read_dtype(&a.checkpoint)? {
            Dtype::F32 => cmd_export::<f32>(&a),
            Dtype::F64 => cmd_export::<f64>(&a),
        },
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn history_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".history.jsonl");
    out.with_file_name(name)
}

fn cmd_train<T: Real>(cfg: &RunConfig, a: &TrainArgs) -> Result<()> {
    let data = Dataset::load(&cfg.paths, cfg.train.desc_len)?;
    log::info!(
        "loaded {} entities, {} relations, {}/{}/{} triplets",
        data.num_entities(),
        data.num_relations(),
        data.train.len(),
        data.valid.len(),
        data.test.len()
    );
    let mut trainer = Trainer::<T>::new(cfg.train.clone(), &data)?;
    let hpath = a.history.clone().unwrap_or_else(|| history_path(&a.out));
    let mut history = create(&hpath)?;
    let outcome = trainer.train(&data, a.threads, |record| {
        let line = serde_json::to_string(record).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(history, "{line}")
            .and_then(|_| history.flush())
            .map_err(|e| Error::io(&hpath, e))
    })?;
    if let Some((epoch, hits)) = outcome.best {
        log::info!("best validation Hits@10 {hits:.4} at epoch {epoch}");
    }
    Checkpoint::from_trainer(&trainer, &data, true).save(&a.out)
}

/// Reads a triplet file against `vocab`, adding names it has not seen.
fn load_split(path: &Option<PathBuf>, vocab: &mut Vocab, split: Split) -> Result<TripletSet> {
    match path {
        Some(p) => Ok(load_triplets(p, vocab, split)?.0),
        None => Ok(TripletSet::new(split)),
    }
}

fn descriptions_for<T: Real>(
    ckpt: &Checkpoint<T>,
    path: Option<&Path>,
    vocab: &Vocab,
) -> Result<Option<DescriptionTable>> {
    let Model::CdcPlus(_) = &ckpt.model else {
        return Ok(None);
    };
    let path = path.ok_or_else(|| Error::Config("this model needs --descriptions".into()))?;
    let words = ckpt
        .word_table()?
        .ok_or_else(|| Error::Format("checkpoint lacks its word list".into()))?;
    Ok(Some(load_descriptions(path, vocab, &words, ckpt.config.desc_len)?.0))
}

fn unknown_entity(vocab: &Vocab, known: usize, triplets: &[Triplet]) -> Result<()> {
    for t in triplets {
        for e in [t.h, t.t] {
            if e >= known {
                return Err(Error::UnknownName {
                    kind: "entity",
                    name: vocab.entity_name(e).to_string(),
                });
            }
        }
    }
    Ok(())
}

fn unknown_relation(vocab: &Vocab, known: usize, triplets: &[Triplet]) -> Result<()> {
    match triplets.iter().find(|t| t.r >= known) {
        Some(t) => Err(Error::UnsupportedRelation(vocab.relation_name(t.r).to_string())),
        None => Ok(()),
    }
}

fn cmd_eval<T: Real>(a: &EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::<T>::load(&a.checkpoint)?;
    // Hyperparameters come from the checkpoint; only file paths are read here.
    let cfg = a.config.resolve()?;
    let mut vocab = ckpt.vocab.clone();
    let known_entities = vocab.num_entities();
    let known_relations = vocab.num_relations();
    let train = load_split(&cfg.paths.train, &mut vocab, Split::Train)?;
    let valid = load_split(&cfg.paths.valid, &mut vocab, Split::Valid)?;
    let test = load_split(&cfg.paths.test, &mut vocab, Split::Test)?;
    if cfg.paths.test.is_none() {
        return Err(Error::Config("eval needs a test file (--test or test_path)".into()));
    }
    unknown_relation(&vocab, known_relations, &test.triplets)?;
    let mut sets = vec![&train, &valid];
    if a.filter_test {
        sets.push(&test);
    }
    let filter = TripletIndex::from_sets(sets);
    let descs = descriptions_for(&ckpt, cfg.paths.descriptions.as_deref(), &vocab)?;

    let json = if a.zero_shot {
        let Model::CdcPlus(m) = &ckpt.model else {
            return Err(Error::Config("--zero-shot needs a description model".into()));
        };
        let descs = descs.expect("description model has descriptions");
        unknown_relation(&vocab, ckpt.train_relations, &test.triplets)?;
        let split = split_zero_shot(&test.triplets, |e| e < ckpt.train_entities);
        let scorer = PlusScorer {
            inner: m.scorer(&descs)?,
            which: PlusScore::Textual,
        };
        let candidates = descs.described();
        let report = evaluate_zero_shot(&split, &scorer, &candidates, &filter, a.threads)?;
        serde_json::to_string_pretty(&report)
    } else {
        unknown_entity(&vocab, known_entities, &test.triplets)?;
        let scorer: Box<dyn Scorer + '_> = ckpt.model.scorer(descs.as_ref(), PlusScore::Combined)?;
        let candidates: Vec<usize> = match &descs {
            Some(d) => (0..known_entities).filter(|&e| d.has(e)).collect(),
            None => (0..known_entities).collect(),
        };
        let report = evaluate(&test.triplets, scorer.as_ref(), &candidates, &filter, a.threads)?;
        serde_json::to_string_pretty(&report)
    }
    .map_err(|e| Error::Format(e.to_string()))?;

    match &a.report {
        Some(p) => std::fs::write(p, json + "\n").map_err(|e| Error::io(p, e)),
        None => {
            println!("{json}");
            Ok(())
        }
    }
}

/// A parsed `predict` query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Query {
    Head { r: usize, t: usize },
    Tail { h: usize, r: usize },
}

pub fn parse_query(q: &str, vocab: &Vocab) -> Result<Query> {
    let parts: Vec<&str> = q.split_whitespace().collect();
    let [a, r, b] = parts.as_slice() else {
        return Err(Error::Config(format!("query `{q}` must have three fields")));
    };
    let entity = |n: &str| {
        vocab.entity(n).ok_or_else(|| Error::UnknownName {
            kind: "entity",
            name: n.to_string(),
        })
    };
    let r = vocab.relation(r).ok_or_else(|| Error::UnknownName {
        kind: "relation",
        name: r.to_string(),
    })?;
    match (*a, *b) {
        ("?", "?") => Err(Error::Config("query must fix one entity".into())),
        ("?", t) => Ok(Query::Head { r, t: entity(t)? }),
        (h, "?") => Ok(Query::Tail { h: entity(h)?, r }),
        _ => Err(Error::Config(format!(
            "query `{q}` needs `?` in the head or tail position"
        ))),
    }
}

fn cmd_predict<T: Real>(a: &PredictArgs, out: &mut impl Write) -> Result<()> {
    let ckpt = Checkpoint::<T>::load(&a.checkpoint)?;
    let query = parse_query(&a.query, &ckpt.vocab)?;
    let descs = descriptions_for(&ckpt, a.descriptions.as_deref(), &ckpt.vocab)?;
    let candidates: Vec<usize> = match &descs {
        Some(d) => d
            .described()
            .into_iter()
            .filter(|&e| e < ckpt.vocab.num_entities())
            .collect(),
        None => (0..ckpt.vocab.num_entities()).collect(),
    };
    let triplets: Vec<Triplet> = candidates
        .iter()
        .map(|&e| match query {
            Query::Head { r, t } => Triplet::new(e, r, t),
            Query::Tail { h, r } => Triplet::new(h, r, e),
        })
        .collect();
    let scorer = ckpt.model.scorer(descs.as_ref(), PlusScore::Combined)?;
    let scores = scorer.score_batch(&triplets)?;
    let mut ranked: Vec<(usize, f64)> = candidates.into_iter().zip(scores).collect();
    ranked.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    let io = |e| Error::io("<stdout>", e);
    for (e, s) in ranked.into_iter().take(a.top_k) {
        writeln!(out, "{}\t{s}", ckpt.vocab.entity_name(e)).map_err(io)?;
    }
    Ok(())
}

fn cmd_export<T: Real>(a: &ExportArgs) -> Result<()> {
    let ckpt = Checkpoint::<T>::load(&a.checkpoint)?;
    let p = ckpt.model.cdc();
    let mut w = create(&a.out)?;
    let io = |e| Error::io(&a.out, e);
    writeln!(
        w,
        "# k={} entities={} relations={}",
        p.dims.k, p.dims.num_entities, p.dims.num_relations
    )
    .map_err(io)?;
    let rows = ckpt
        .vocab
        .entity_names()
        .iter()
        .zip(p.entity_emb.data().chunks(p.dims.k))
        .chain(
            ckpt.vocab
                .relation_names()
                .iter()
                .zip(p.relation_emb.data().chunks(p.dims.k)),
        );
    for (name, row) in rows {
        write!(w, "{name}").map_err(io)?;
        for x in row {
            write!(w, "\t{x}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}
