//! Training stages: base pretraining, the two frozen references, the
//! contrastive fine-tune, and the plain fine-tune baselines.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{filter_by_label, DialoguePair, Label, LabeledCorpus};
use crate::error::{LotError, Result};
use crate::lm::{backward, sequence_forward, Gradients, ModelParams, Role, SequenceLoss, Tensors};
use crate::lotloss::{mle_loss, LossBreakdown, LotConfig, LotObjective, MleObjective};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    SgdMomentum,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub momentum: f64,
    pub seed: u64,
    /// Global-norm clip; `0` in config files means off.
    #[serde(with = "clip_serde")]
    pub grad_clip: Option<f64>,
}

mod clip_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(v.unwrap_or(0.0))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        let x = f64::deserialize(d)?;
        Ok(if x == 0.0 { None } else { Some(x) })
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            batch_size: 32,
            learning_rate: 0.05,
            optimizer: OptimizerKind::SgdMomentum,
            momentum: 0.9,
            seed: 0,
            grad_clip: Some(5.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(LotError::config("epochs must be at least 1"));
        }
        if self.batch_size < 1 {
            return Err(LotError::config("batch_size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(LotError::config("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(LotError::config("momentum must lie in [0, 1)"));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(LotError::config("grad_clip must be positive"));
            }
        }
        Ok(())
    }
}

/// Per-parameter optimizer memory. Never persisted.
#[derive(Debug, Clone, Default)]
pub struct OptimizerState {
    velocity: Option<Tensors>,
    second: Option<Tensors>,
    t: u64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Applies one update in place. Returns the global gradient norm before
/// clipping.
pub fn step(model: &mut ModelParams, grads: &Gradients, cfg: &TrainConfig, state: &mut OptimizerState) -> Result<f64> {
    if !grads.matches(model) {
        return Err(LotError::argument("gradient layout does not match the model"));
    }
    if !grads.grads.all_finite() {
        return Err(LotError::numerical(0, "non-finite gradient; step refused"));
    }
    let norm = grads.grads.norm();
    let factor = match cfg.grad_clip {
        Some(c) if norm > c => c / norm,
        _ => 1.0,
    };
    let lr = cfg.learning_rate;
    let g = grads.grads.iter().map(|x| x * factor);
    match cfg.optimizer {
        OptimizerKind::Sgd => {
            for (w, gi) in model.params.iter_mut().zip(g) {
                *w -= lr * gi;
            }
        }
        OptimizerKind::SgdMomentum => {
            let v = state.velocity.get_or_insert_with(|| Tensors::zeros(&model.arch));
            for ((w, vi), gi) in model.params.iter_mut().zip(v.iter_mut()).zip(g) {
                *vi = cfg.momentum * *vi + gi;
                *w -= lr * *vi;
            }
        }
        OptimizerKind::Adam => {
            state.t += 1;
            let t = state.t as i32;
            let m = state.velocity.get_or_insert_with(|| Tensors::zeros(&model.arch));
            let v = state.second.get_or_insert_with(|| Tensors::zeros(&model.arch));
            let c1 = 1.0 - ADAM_BETA1.powi(t);
            let c2 = 1.0 - ADAM_BETA2.powi(t);
            for (((w, mi), vi), gi) in model.params.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g) {
                *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gi;
                *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gi * gi;
                *w -= lr * (*mi / c1) / ((*vi / c2).sqrt() + ADAM_EPS);
            }
        }
    }
    if !model.params.all_finite() {
        return Err(LotError::numerical(0, "parameters became non-finite"));
    }
    Ok(norm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean objective over the epoch's batches, as optimized.
    pub train_loss: f64,
    /// Cross-entropy of the whole training set after the epoch.
    pub train_mle: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub breakdown: Option<LossBreakdown>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub initial_mle: f64,
    pub epochs: Vec<EpochRecord>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelParams,
    pub history: TrainHistory,
}

/// Token-weighted mean cross-entropy over a corpus.
pub fn corpus_mle(model: &ModelParams, pairs: &[DialoguePair]) -> Result<f64> {
    let mut nll = 0.0;
    let mut n = 0usize;
    for p in pairs {
        let target = p.target();
        let d = sequence_forward(model, &p.context, &target)?;
        nll += mle_loss(&d, &target)? * target.len() as f64;
        n += target.len();
    }
    Ok(nll / n.max(1) as f64)
}

trait StatsSummary {
    fn summarize(items: &[Self]) -> Option<LossBreakdown>
    where
        Self: Sized;
}

impl StatsSummary for () {
    fn summarize(_: &[()]) -> Option<LossBreakdown> {
        None
    }
}

impl StatsSummary for LossBreakdown {
    fn summarize(items: &[LossBreakdown]) -> Option<LossBreakdown> {
        Some(LossBreakdown::mean(items))
    }
}

fn fit<L>(mut model: ModelParams, pairs: &[DialoguePair], loss: &L, cfg: &TrainConfig) -> Result<TrainOutcome>
where
    L: SequenceLoss,
    L::Stats: StatsSummary,
{
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(LotError::config("training corpus is empty"));
    }
    let initial_mle = corpus_mle(&model, pairs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = OptimizerState::default();
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut stats = Vec::with_capacity(pairs.len());
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<DialoguePair> = chunk.iter().map(|&i| pairs[i].clone()).collect();
            let out = backward(&model, &batch, loss).map_err(|e| match e {
                LotError::Numerical { example, message } => LotError::Numerical {
                    example: chunk[example],
                    message: format!("epoch {epoch}: {message}"),
                },
                other => other,
            })?;
            step(&mut model, &out.grads, cfg, &mut state)?;
            loss_sum += out.loss * chunk.len() as f64;
            stats.extend(out.stats);
        }
        let train_mle = corpus_mle(&model, pairs)?;
        if !train_mle.is_finite() {
            return Err(LotError::numerical(0, format!("training diverged at epoch {epoch}")));
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / pairs.len() as f64,
            train_mle,
            breakdown: L::Stats::summarize(&stats),
        });
    }
    Ok(TrainOutcome {
        model,
        history: TrainHistory { initial_mle, epochs },
    })
}

/// Plain cross-entropy fine-tune; the role tag is left to the caller.
pub fn train_mle(model: ModelParams, corpus: &LabeledCorpus, cfg: &TrainConfig) -> Result<TrainOutcome> {
    fit(model, &corpus.pairs, &MleObjective, cfg)
}

fn require_role(model: &ModelParams, role: Role, what: &str) -> Result<()> {
    if model.role != role {
        return Err(LotError::config(format!(
            "{what} must have role {role}, found {}",
            model.role
        )));
    }
    Ok(())
}

/// Pretrains a freshly initialized model into the base conversational model.
pub fn train_base(init: ModelParams, corpus: &LabeledCorpus, cfg: &TrainConfig) -> Result<TrainOutcome> {
    require_role(&init, Role::Base, "initial model")?;
    train_mle(init, corpus, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuxKind {
    Toxic,
    Safe,
}

impl AuxKind {
    pub fn label(self) -> Label {
        match self {
            AuxKind::Toxic => Label::Unsafe,
            AuxKind::Safe => Label::Safe,
        }
    }

    pub fn role(self) -> Role {
        match self {
            AuxKind::Toxic => Role::Toxic,
            AuxKind::Safe => Role::Safe,
        }
    }
}

/// Fine-tunes a reference model on an already label-filtered corpus.
pub fn train_aux(
    base: &ModelParams,
    corpus: &LabeledCorpus,
    which: AuxKind,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    require_role(base, Role::Base, "auxiliary starting point")?;
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(LotError::config(format!("no {} pairs to train on", which.label())));
    }
    if let Some(p) = corpus.pairs.iter().find(|p| p.label != which.label()) {
        return Err(LotError::config(format!(
            "{:?} reference corpus contains a {} pair",
            which, p.label
        )));
    }
    let mut out = train_mle(base.clone(), corpus, cfg)?;
    out.model.role = which.role();
    Ok(out)
}

/// Contrastive fine-tune of `base` against the frozen references.
pub fn train_lot(
    base: &ModelParams,
    corpus: &LabeledCorpus,
    tau: &ModelParams,
    safe: &ModelParams,
    tcfg: &TrainConfig,
    lcfg: &LotConfig,
) -> Result<TrainOutcome> {
    require_role(tau, Role::Toxic, "toxic reference")?;
    require_role(safe, Role::Safe, "safe reference")?;
    let obj = LotObjective::new(base, tau, safe, *lcfg)?;
    let mut learner = base.clone();
    learner.eps_smooth = lcfg.eps_smooth;
    let mut out = fit(learner, &corpus.pairs, &obj, tcfg)?;
    out.model.role = Role::Output;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineVariant {
    AllData,
    CleanOnly,
}

pub fn train_baseline(
    base: &ModelParams,
    corpus: &LabeledCorpus,
    variant: BaselineVariant,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    require_role(base, Role::Base, "baseline starting point")?;
    let data = match variant {
        BaselineVariant::AllData => corpus.clone(),
        BaselineVariant::CleanOnly => filter_by_label(corpus, Label::Safe),
    };
    if data.is_empty() {
        return Err(LotError::config(format!("{variant:?} baseline has no training pairs")));
    }
    let mut out = train_mle(base.clone(), &data, cfg)?;
    out.model.role = Role::Base;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Base,
    AuxToxic,
    AuxSafe,
    Lot,
    BaselineAll,
    BaselineClean,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Base,
        Stage::AuxToxic,
        Stage::AuxSafe,
        Stage::Lot,
        Stage::BaselineAll,
        Stage::BaselineClean,
    ];

    /// Name used on the command line and in file names.
    pub fn cli_name(self) -> &'static str {
        match self {
            Stage::Base => "base",
            Stage::AuxToxic => "aux-toxic",
            Stage::AuxSafe => "aux-safe",
            Stage::Lot => "lot",
            Stage::BaselineAll => "baseline-all",
            Stage::BaselineClean => "baseline-clean",
        }
    }

    pub fn from_cli(s: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|st| st.cli_name() == s)
    }

    pub fn output_role(self) -> Role {
        match self {
            Stage::AuxToxic => Role::Toxic,
            Stage::AuxSafe => Role::Safe,
            Stage::Lot => Role::Output,
            Stage::Base | Stage::BaselineAll | Stage::BaselineClean => Role::Base,
        }
    }

    pub fn prerequisites(self) -> &'static [Stage] {
        match self {
            Stage::Base => &[],
            Stage::AuxToxic | Stage::AuxSafe | Stage::BaselineAll | Stage::BaselineClean => &[Stage::Base],
            Stage::Lot => &[Stage::Base, Stage::AuxToxic, Stage::AuxSafe],
        }
    }
}

/// Written next to every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: Stage,
    pub role: Role,
    pub seed: u64,
    pub config_hash: String,
    pub inputs: Vec<String>,
    pub output: String,
    pub output_sha256: String,
    pub config: serde_json::Value,
    pub history: TrainHistory,
    pub final_train_mle: f64,
}

impl RunManifest {
    pub fn validate(&self) -> Result<()> {
        if self.role != self.stage.output_role() {
            return Err(LotError::config(format!(
                "manifest for {} records role {}, expected {}",
                self.stage.cli_name(),
                self.role,
                self.stage.output_role()
            )));
        }
        Ok(())
    }
}
