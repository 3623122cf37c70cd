//! `lot` command line: data generation, staged training, evaluation,
//! ablation and report merging over one run directory.
//!
//! Layout of a run directory:
//!
//! ```text
//! data/{train,valid,test}.jsonl  data/vocab.json  data/lexicon.json  data/manifest.json
//! checkpoints/<stage>_seed<S>_<hash>.ckpt (+ .manifest.json)
//! ablate/<mode>_seed<S>_<hash>.ckpt (+ .manifest.json)
//! reports/<name>.{csv,txt,json}
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::corpus::{self, filter_by_label, Label, LabeledCorpus, Lexicon};
use crate::divergence::DivergenceKind;
use crate::error::{LotError, Result};
use crate::eval::{self, compare_report, EvalReport, References, ScorerKind, ToxicityScorer};
use crate::lm::{init_model, load_checkpoint, save_checkpoint, ModelParams};
use crate::lotloss::{LossMode, LotConfig};
use crate::trainer::{
    train_aux, train_base, train_baseline, train_lot, AuxKind, BaselineVariant, RunManifest, Stage, TrainOutcome,
};
use crate::vocab::{TokenId, Vocab};

pub const ENV_OUT: &str = "LOT_OUT_DIR";
pub const ENV_CONFIG: &str = "LOT_CONFIG";

#[derive(Debug, Parser)]
#[command(name = "lot", about = "Contrastive safety fine-tuning pipeline", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Run config (TOML). Defaults apply to every missing field.
    #[arg(long, env = ENV_CONFIG)]
    pub config: Option<PathBuf>,
    /// Run directory.
    #[arg(long, env = ENV_OUT, default_value = "runs/default")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Overrides {
    /// Trainer seed for every stage.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long = "div-kind")]
    pub div_kind: Option<String>,
    #[arg(long)]
    pub xi: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long = "lambda")]
    pub lambda: Option<f64>,
    /// Epochs for the stage being run.
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic corpus, splits, vocabulary and lexicon.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train one stage: base, aux-toxic, aux-safe, lot, baseline-all, baseline-clean.
    Train {
        stage: String,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Evaluate checkpoints on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        overrides: Overrides,
        /// Checkpoint file, optionally `PATH:NAME`.
        #[arg(long = "checkpoint")]
        checkpoints: Vec<String>,
        /// Checkpoint of a stage for the current seed, optionally `STAGE:NAME`.
        #[arg(long = "stage")]
        stages: Vec<String>,
        /// Report file stem under reports/.
        #[arg(long, default_value = "eval")]
        report: String,
    },
    /// Train the four loss variants from one base and report them together.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Merge report CSVs into one comparison table.
    Report {
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "merged.csv")]
        output: PathBuf,
    },
}

/// Parses arguments, runs, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { common } => {
            let cfg = resolve(&common, &Overrides::default(), None)?;
            for p in cmd_gen_data(&cfg, &common.out)? {
                println!("{}", p.display());
            }
        }
        Command::Train {
            stage,
            common,
            overrides,
        } => {
            let st = Stage::from_cli(&stage).ok_or_else(|| {
                LotError::config(format!(
                    "unknown stage `{stage}` (expected one of: {})",
                    Stage::ALL.map(|s| s.cli_name()).join(", ")
                ))
            })?;
            let cfg = resolve(&common, &overrides, Some(st))?;
            let (ckpt, manifest) = cmd_train(&cfg, st, &common.out)?;
            println!("{}", ckpt.display());
            println!("{}", manifest.display());
        }
        Command::Eval {
            common,
            overrides,
            checkpoints,
            stages,
            report,
        } => {
            let cfg = resolve(&common, &overrides, None)?;
            let mut named = Vec::new();
            for spec in &checkpoints {
                let (path, name) = split_name(spec);
                let name = name.unwrap_or_else(|| {
                    Path::new(path)
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_else(|| path.to_string())
                });
                named.push((name, PathBuf::from(path)));
            }
            let seed = cfg.train.lot.seed;
            for spec in &stages {
                let (st, name) = split_name(spec);
                let stage = Stage::from_cli(st).ok_or_else(|| LotError::config(format!("unknown stage `{st}`")))?;
                let path = find_checkpoint(&common.out, stage, seed, &cfg.hash())?;
                named.push((name.unwrap_or_else(|| st.to_string()), path));
            }
            if named.is_empty() {
                return Err(LotError::config("eval needs at least one --checkpoint or --stage"));
            }
            for p in cmd_eval(&cfg, &named, &common.out, &report)? {
                println!("{}", p.display());
            }
        }
        Command::Ablate { common, overrides } => {
            let cfg = resolve(&common, &overrides, Some(Stage::Lot))?;
            for p in cmd_ablate(&cfg, &common.out)? {
                println!("{}", p.display());
            }
        }
        Command::Report { inputs, output } => {
            for p in cmd_report(&inputs, &output)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

/// "a", "a and b", "a, b and c".
fn listing(items: &[&str]) -> String {
    match items {
        [] => String::new(),
        [one] => one.to_string(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

fn split_name(spec: &str) -> (&str, Option<String>) {
    match spec.rsplit_once(':') {
        Some((a, b)) if !a.is_empty() && !b.is_empty() => (a, Some(b.to_string())),
        _ => (spec, None),
    }
}

/// Loads the config, applies flag overrides and validates the result.
pub fn resolve(common: &Common, o: &Overrides, stage: Option<Stage>) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    apply_overrides(&mut cfg, o, stage)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn apply_overrides(cfg: &mut RunConfig, o: &Overrides, stage: Option<Stage>) -> Result<()> {
    if let Some(s) = o.seed {
        cfg.train.set_seed(s);
    }
    if let Some(m) = &o.mode {
        cfg.loss.mode = m.parse::<LossMode>()?;
    }
    if let Some(k) = &o.div_kind {
        cfg.loss.div_kind = match k.to_ascii_lowercase().as_str() {
            "js" => DivergenceKind::Js,
            "kl" => DivergenceKind::Kl,
            _ => return Err(LotError::config(format!("unknown divergence `{k}`"))),
        };
    }
    if let Some(x) = o.xi {
        cfg.loss.xi = x;
    }
    if let Some(x) = o.gamma {
        cfg.loss.gamma = x;
    }
    if let Some(x) = o.lambda {
        cfg.loss.lambda_ = x;
    }
    if let Some(e) = o.epochs {
        let st = stage.ok_or_else(|| LotError::config("--epochs applies to a training stage"))?;
        match st {
            Stage::Base => cfg.train.base.epochs = e,
            Stage::AuxToxic | Stage::AuxSafe => cfg.train.aux.epochs = e,
            Stage::Lot => cfg.train.lot.epochs = e,
            Stage::BaselineAll | Stage::BaselineClean => cfg.train.baseline.epochs = e,
        }
    }
    Ok(())
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| LotError::io(format!("creating {}", dir.display()), e))?;
    }
    fs::write(path, bytes).map_err(|e| LotError::io(format!("writing {}", path.display()), e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| LotError::io(format!("reading {}", path.display()), e))
}

fn json_pretty<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SplitCounts {
    pub safe: usize,
    pub unsafe_: usize,
    pub total: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DataManifest {
    pub train: SplitCounts,
    pub valid: SplitCounts,
    pub test: SplitCounts,
    pub config: serde_json::Value,
}

fn counts(c: &LabeledCorpus) -> SplitCounts {
    let (safe, unsafe_) = c.label_counts();
    SplitCounts {
        safe,
        unsafe_,
        total: c.len(),
    }
}

pub fn cmd_gen_data(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let corpus = corpus::gen_synthetic_corpus(&cfg.data.synth(), cfg.data.seed)?;
    let (train, valid, test) = corpus::split(&corpus, cfg.data.split, cfg.data.split_seed)?;
    let dir = out.join("data");
    fs::create_dir_all(&dir).map_err(|e| LotError::io(format!("creating {}", dir.display()), e))?;
    let mut written = Vec::new();
    for (name, part) in [("train", &train), ("valid", &valid), ("test", &test)] {
        let p = dir.join(format!("{name}.jsonl"));
        part.save_jsonl(&p)?;
        written.push(p);
    }
    let vocab_path = dir.join("vocab.json");
    write(&vocab_path, json_pretty(corpus.vocab.as_ref())?)?;
    written.push(vocab_path);
    let lex_path = dir.join("lexicon.json");
    corpus
        .lexicon
        .as_ref()
        .expect("synthetic corpora carry a lexicon")
        .save(&lex_path)?;
    written.push(lex_path);
    let manifest = DataManifest {
        train: counts(&train),
        valid: counts(&valid),
        test: counts(&test),
        config: serde_json::to_value(&cfg.data)?,
    };
    let man_path = dir.join("manifest.json");
    write(&man_path, json_pretty(&manifest)?)?;
    written.push(man_path);
    Ok(written)
}

pub struct RunData {
    pub vocab: Arc<Vocab>,
    pub lexicon: Arc<Lexicon>,
    pub train: LabeledCorpus,
    pub valid: LabeledCorpus,
    pub test: LabeledCorpus,
}

pub fn load_data(out: &Path) -> Result<RunData> {
    let dir = out.join("data");
    let vocab_path = dir.join("vocab.json");
    if !vocab_path.exists() {
        return Err(LotError::Missing(format!(
            "no data in {} (run `lot gen-data` first)",
            dir.display()
        )));
    }
    let vocab: Vocab = serde_json::from_slice(&read(&vocab_path)?)?;
    let vocab = Arc::new(vocab);
    let lexicon = Arc::new(Lexicon::load(&dir.join("lexicon.json"))?);
    let load = |name: &str| -> Result<LabeledCorpus> {
        let mut c = corpus::load_jsonl(&dir.join(format!("{name}.jsonl")), vocab.clone())?;
        c.lexicon = Some(lexicon.clone());
        Ok(c)
    };
    Ok(RunData {
        train: load("train")?,
        valid: load("valid")?,
        test: load("test")?,
        vocab,
        lexicon,
    })
}

fn checkpoint_dir(out: &Path) -> PathBuf {
    out.join("checkpoints")
}

fn stem(prefix: &str, seed: u64, hash: &str) -> String {
    format!("{prefix}_seed{seed}_{hash}")
}

/// Locates the checkpoint a stage produced for `seed`. A checkpoint whose
/// hash matches the current config wins; otherwise there must be exactly one.
pub fn find_checkpoint(out: &Path, stage: Stage, seed: u64, hash: &str) -> Result<PathBuf> {
    let dir = checkpoint_dir(out);
    let prefix = format!("{}_seed{seed}_", stage.cli_name());
    let mut found: Vec<PathBuf> = match fs::read_dir(&dir) {
        Ok(rd) => rd
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                let name = p
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default();
                name.starts_with(&prefix) && name.ends_with(".ckpt")
            })
            .collect(),
        Err(_) => Vec::new(),
    };
    found.sort();
    let exact = dir.join(format!("{prefix}{hash}.ckpt"));
    if found.contains(&exact) {
        return Ok(exact);
    }
    match found.len() {
        0 => Err(LotError::Missing(format!(
            "no {} checkpoint for seed {seed} in {} (run `lot train {}` first)",
            stage.cli_name(),
            dir.display(),
            stage.cli_name()
        ))),
        1 => Ok(found.remove(0)),
        _ => Err(LotError::Missing(format!(
            "several {} checkpoints for seed {seed} in {}; none matches the current config",
            stage.cli_name(),
            dir.display()
        ))),
    }
}

pub fn read_checkpoint(path: &Path) -> Result<ModelParams> {
    Ok(load_checkpoint(&read(path)?)?)
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn persist(
    dir: &Path,
    stem: &str,
    stage: Stage,
    cfg: &RunConfig,
    inputs: Vec<String>,
    outcome: &TrainOutcome,
) -> Result<(PathBuf, PathBuf)> {
    let bytes = save_checkpoint(&outcome.model);
    let ckpt = dir.join(format!("{stem}.ckpt"));
    write(&ckpt, &bytes)?;
    let manifest = RunManifest {
        stage,
        role: outcome.model.role,
        seed: cfg.train.for_stage(stage).seed,
        config_hash: cfg.hash(),
        inputs,
        output: file_name(&ckpt),
        output_sha256: sha256_hex(&bytes),
        config: cfg.to_json(),
        final_train_mle: outcome
            .history
            .epochs
            .last()
            .map(|e| e.train_mle)
            .unwrap_or(outcome.history.initial_mle),
        history: outcome.history.clone(),
    };
    manifest.validate()?;
    let man = dir.join(format!("{stem}.manifest.json"));
    write(&man, json_pretty(&manifest)?)?;
    Ok((ckpt, man))
}

fn check_vocab(cfg: &RunConfig, data: &RunData) -> Result<()> {
    if data.vocab.len() != cfg.data.vocab_size {
        return Err(LotError::config(format!(
            "data vocabulary has {} tokens but config says vocab_size = {}",
            data.vocab.len(),
            cfg.data.vocab_size
        )));
    }
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig, stage: Stage, out: &Path) -> Result<(PathBuf, PathBuf)> {
    let seed = cfg.train.for_stage(stage).seed;
    let hash = cfg.hash();
    // prerequisites first, so a missing stage is reported before any data work
    let mut prereq = Vec::new();
    let missing: Vec<&str> = stage
        .prerequisites()
        .iter()
        .filter(|s| find_checkpoint(out, **s, seed, &hash).is_err())
        .map(|s| s.cli_name())
        .collect();
    if !missing.is_empty() {
        return Err(LotError::Missing(format!(
            "`{}` requires {} checkpoints for seed {seed} (run `lot train <stage>` for each)",
            stage.cli_name(),
            listing(&missing)
        )));
    }
    for s in stage.prerequisites() {
        let p = find_checkpoint(out, *s, seed, &hash)?;
        prereq.push((*s, p));
    }
    let data = load_data(out)?;
    check_vocab(cfg, &data)?;
    let tcfg = cfg.train.for_stage(stage);
    let get = |s: Stage| -> Result<ModelParams> {
        let p = &prereq.iter().find(|(st, _)| *st == s).expect("prerequisite resolved").1;
        let m = read_checkpoint(p)?;
        if m.arch.vocab != data.vocab.len() {
            return Err(LotError::config(format!(
                "{} has vocabulary {}, data has {}",
                p.display(),
                m.arch.vocab,
                data.vocab.len()
            )));
        }
        Ok(m)
    };
    let outcome = match stage {
        Stage::Base => train_base(init_model(cfg.arch(), cfg.model.init_seed)?, &data.train, tcfg)?,
        Stage::AuxToxic => train_aux(
            &get(Stage::Base)?,
            &filter_by_label(&data.train, Label::Unsafe),
            AuxKind::Toxic,
            tcfg,
        )?,
        Stage::AuxSafe => train_aux(
            &get(Stage::Base)?,
            &filter_by_label(&data.train, Label::Safe),
            AuxKind::Safe,
            tcfg,
        )?,
        Stage::BaselineAll => train_baseline(&get(Stage::Base)?, &data.train, BaselineVariant::AllData, tcfg)?,
        Stage::BaselineClean => train_baseline(&get(Stage::Base)?, &data.train, BaselineVariant::CleanOnly, tcfg)?,
        Stage::Lot => train_lot(
            &get(Stage::Base)?,
            &data.train,
            &get(Stage::AuxToxic)?,
            &get(Stage::AuxSafe)?,
            tcfg,
            &cfg.loss,
        )?,
    };
    let inputs = prereq.iter().map(|(_, p)| file_name(p)).collect();
    persist(
        &checkpoint_dir(out),
        &stem(stage.cli_name(), seed, &hash),
        stage,
        cfg,
        inputs,
        &outcome,
    )
}

pub fn build_scorer(cfg: &RunConfig, data: &RunData) -> Result<ToxicityScorer> {
    let mut s = match cfg.eval.scorer {
        ScorerKind::Lexicon => ToxicityScorer::lexicon(data.lexicon.toxic_ids(&data.vocab)),
        ScorerKind::BowLinear => eval::train_toxicity_scorer(&data.train)?,
    };
    s.threshold = cfg.eval.threshold;
    Ok(s)
}

#[derive(Serialize)]
struct ReportDoc<'a> {
    report: &'a EvalReport,
    checkpoints: Vec<(String, String)>,
    config: serde_json::Value,
}

fn write_report(
    out: &Path,
    name: &str,
    report: &EvalReport,
    cfg: &RunConfig,
    checkpoints: Vec<(String, String)>,
) -> Result<Vec<PathBuf>> {
    let dir = out.join("reports");
    let csv = dir.join(format!("{name}.csv"));
    let txt = dir.join(format!("{name}.txt"));
    let json = dir.join(format!("{name}.json"));
    write(&csv, report.to_csv())?;
    write(&txt, report.to_table())?;
    let doc = ReportDoc {
        report,
        checkpoints,
        config: cfg.to_json(),
    };
    write(&json, json_pretty(&doc)?)?;
    print!("{}", report.to_table());
    Ok(vec![csv, txt, json])
}

fn references(out: &Path, cfg: &RunConfig) -> Result<Option<(ModelParams, ModelParams)>> {
    let seed = cfg.train.aux.seed;
    let hash = cfg.hash();
    match (
        find_checkpoint(out, Stage::AuxToxic, seed, &hash),
        find_checkpoint(out, Stage::AuxSafe, seed, &hash),
    ) {
        (Ok(t), Ok(s)) => Ok(Some((read_checkpoint(&t)?, read_checkpoint(&s)?))),
        _ => Ok(None),
    }
}

pub fn cmd_eval(cfg: &RunConfig, named: &[(String, PathBuf)], out: &Path, report: &str) -> Result<Vec<PathBuf>> {
    let data = load_data(out)?;
    let models: Vec<(String, ModelParams)> = named
        .iter()
        .map(|(n, p)| Ok((n.clone(), read_checkpoint(p)?)))
        .collect::<Result<_>>()?;
    let refs = references(out, cfg)?;
    let scorer = build_scorer(cfg, &data)?;
    let templates = data.lexicon.template_ids(&data.vocab);
    let borrowed: Vec<(String, &ModelParams)> = models.iter().map(|(n, m)| (n.clone(), m)).collect();
    let rep = compare_report(
        &borrowed,
        &data.test,
        &scorer,
        &templates,
        refs.as_ref().map(|(t, s)| References { tau: t, safe: s }),
        &cfg.eval,
        &[cfg.train.lot.seed],
    )?;
    let ck = named.iter().map(|(n, p)| (n.clone(), file_name(p))).collect();
    write_report(out, report, &rep, cfg, ck)
}

/// Row labels for the four ablation variants.
pub fn ablation_variants(base: &LotConfig) -> [(&'static str, LotConfig); 4] {
    [
        (
            "LOT_re/con/JS",
            LotConfig {
                mode: LossMode::Full,
                div_kind: DivergenceKind::Js,
                ..*base
            },
        ),
        (
            "LOT_contraster",
            LotConfig {
                mode: LossMode::ContrastorOnly,
                div_kind: DivergenceKind::Js,
                ..*base
            },
        ),
        (
            "LOT_reinforcer",
            LotConfig {
                mode: LossMode::ReinforcerOnly,
                div_kind: DivergenceKind::Js,
                ..*base
            },
        ),
        (
            "LOT_re/con/KL",
            LotConfig {
                mode: LossMode::Full,
                div_kind: DivergenceKind::Kl,
                ..*base
            },
        ),
    ]
}

pub fn cmd_ablate(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let seed = cfg.train.lot.seed;
    let hash = cfg.hash();
    let need = [Stage::Base, Stage::AuxToxic, Stage::AuxSafe];
    let missing: Vec<&str> = need
        .iter()
        .filter(|s| find_checkpoint(out, **s, seed, &hash).is_err())
        .map(|s| s.cli_name())
        .collect();
    if !missing.is_empty() {
        return Err(LotError::Missing(format!(
            "`ablate` requires {} checkpoints for seed {seed}",
            listing(&missing)
        )));
    }
    let paths: Vec<PathBuf> = need
        .iter()
        .map(|s| find_checkpoint(out, *s, seed, &hash))
        .collect::<Result<_>>()?;
    let data = load_data(out)?;
    check_vocab(cfg, &data)?;
    let base = read_checkpoint(&paths[0])?;
    let tau = read_checkpoint(&paths[1])?;
    let safe = read_checkpoint(&paths[2])?;
    let mut written = Vec::new();
    let mut models = Vec::new();
    let mut ck = Vec::new();
    for (label, lcfg) in ablation_variants(&cfg.loss) {
        let outcome = train_lot(&base, &data.train, &tau, &safe, &cfg.train.lot, &lcfg)?;
        let mut vcfg = cfg.clone();
        vcfg.loss = lcfg;
        let tag = format!(
            "{}-{}",
            lcfg.mode.as_str(),
            format!("{:?}", lcfg.div_kind).to_lowercase()
        );
        let (c, m) = persist(
            &out.join("ablate"),
            &stem(&tag, seed, &vcfg.hash()),
            Stage::Lot,
            &vcfg,
            paths.iter().map(|p| file_name(p)).collect(),
            &outcome,
        )?;
        ck.push((label.to_string(), file_name(&c)));
        written.extend([c, m]);
        models.push((label.to_string(), outcome.model));
    }
    let scorer = build_scorer(cfg, &data)?;
    let templates = data.lexicon.template_ids(&data.vocab);
    let borrowed: Vec<(String, &ModelParams)> = models.iter().map(|(n, m)| (n.clone(), m)).collect();
    let rep = compare_report(
        &borrowed,
        &data.test,
        &scorer,
        &templates,
        Some(References { tau: &tau, safe: &safe }),
        &cfg.eval,
        &[seed],
    )?;
    written.extend(write_report(out, &format!("ablation_seed{seed}"), &rep, cfg, ck)?);
    Ok(written)
}

pub fn cmd_report(inputs: &[PathBuf], output: &Path) -> Result<Vec<PathBuf>> {
    let mut rows = Vec::new();
    for p in inputs {
        let text =
            String::from_utf8(read(p)?).map_err(|_| LotError::argument(format!("{} is not utf-8", p.display())))?;
        let stem = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        for mut r in eval::parse_csv(&text)? {
            if inputs.len() > 1 {
                r.model = format!("{}/{}", stem, r.model);
            }
            rows.push(r);
        }
    }
    let merged = EvalReport {
        rows,
        prompt_set: "merged".into(),
        n_prompts: 0,
        decoding: crate::lm::Decoding::Greedy,
        max_len: 0,
        scorer: String::new(),
        seeds: Vec::new(),
    };
    let csv = output.to_path_buf();
    let txt = output.with_extension("txt");
    write(&csv, merged.to_csv())?;
    write(&txt, merged.to_table())?;
    print!("{}", merged.to_table());
    Ok(vec![csv, txt])
}

/// Token ids of a whitespace string; handy for tests and the FFI layer.
pub fn encode(vocab: &Vocab, text: &str) -> Vec<TokenId> {
    vocab.encode(text)
}
