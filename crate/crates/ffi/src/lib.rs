//! C ABI for `lot-core`.
//!
//! Models live behind an opaque `LotModel` handle. Every fallible call
//! returns a `LotStatus`; on failure `lot_last_error()` describes the cause
//! until the next call on the same thread. Arrays are caller-owned.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use lot_core::divergence::{self, DivergenceKind};
use lot_core::lm::{self, Arch, CategoricalDist, Decoding, ModelParams};
use lot_core::lotloss::{self, LossMode, LotConfig};
use lot_core::vocab::TokenId;
use lot_core::{CheckpointError, LotError};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LotStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Data = 4,
    Checkpoint = 5,
    Numerical = 6,
    Io = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LotDivergence {
    Kl = 0,
    Js = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LotLossMode {
    Full = 0,
    ContrastorOnly = 1,
    ReinforcerOnly = 2,
    MleOnly = 3,
}

/// Coefficients of the contrastive loss. `lot_loss_params_default` fills
/// the library defaults.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LotLossParams {
    pub xi: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub divergence: LotDivergence,
    pub mode: LotLossMode,
    pub kl_cap: f64,
}

/// Per-term values of the contrastive loss, averaged over positions.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct LotLossTerms {
    pub total: f64,
    pub mle: f64,
    pub contrast: f64,
    pub reinforce: f64,
    pub positions: usize,
    pub clamped: usize,
}

/// Opaque model handle.
pub struct LotModel {
    inner: ModelParams,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &LotError) -> LotStatus {
    match e {
        LotError::Config(_) | LotError::Missing(_) => LotStatus::Config,
        LotError::Argument(_) => LotStatus::InvalidArgument,
        LotError::Numerical { .. } => LotStatus::Numerical,
        LotError::Malformed { .. } | LotError::Schema { .. } | LotError::Json(_) => LotStatus::Data,
        LotError::Checkpoint(_) => LotStatus::Checkpoint,
        LotError::Io { .. } => LotStatus::Io,
    }
}

/// Runs `f`, recording errors and converting panics.
fn guard(f: impl FnOnce() -> Result<(), (LotStatus, String)>) -> LotStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            LotStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            LotStatus::Panic
        }
    }
}

type Fallible<T> = Result<T, (LotStatus, String)>;

fn lift<T>(r: lot_core::Result<T>) -> Fallible<T> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (LotStatus, String) {
    (LotStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> (LotStatus, String) {
    (LotStatus::InvalidArgument, msg.into())
}

/// # Safety
/// `p` must be null or valid for `len` reads.
unsafe fn input<'a, T>(p: *const T, len: usize, what: &str) -> Fallible<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

/// # Safety
/// `p` must be null or valid for `len` writes.
unsafe fn output<'a, T>(p: *mut T, len: usize, what: &str) -> Fallible<&'a mut [T]> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

/// # Safety
/// `m` must be null or a live handle.
unsafe fn model<'a>(m: *const LotModel, what: &str) -> Fallible<&'a ModelParams> {
    m.as_ref().map(|m| &m.inner).ok_or_else(|| null(what))
}

/// # Safety
/// `s` must be null or a NUL-terminated string.
unsafe fn path<'a>(s: *const c_char) -> Fallible<&'a Path> {
    if s.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(s)
        .to_str()
        .map(Path::new)
        .map_err(|_| invalid("path is not utf-8"))
}

fn dist(p: &[f64], what: &str) -> Fallible<CategoricalDist> {
    CategoricalDist::new(p.to_vec()).map_err(|e| invalid(format!("{what}: {e}")))
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn lot_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lot_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Freshly initialized model with role `base`.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn lot_model_init(
    vocab: usize,
    embed: usize,
    hidden: usize,
    window: usize,
    seed: u64,
    out: *mut *mut LotModel,
) -> LotStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let arch = Arch {
            vocab,
            embed,
            hidden,
            window,
        };
        let inner = lift(lm::init_model(arch, seed))?;
        *out = Box::into_raw(Box::new(LotModel { inner }));
        Ok(())
    })
}

/// Reads a binary checkpoint.
///
/// # Safety
/// `file` must be a NUL-terminated string; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn lot_model_load(file: *const c_char, out: *mut *mut LotModel) -> LotStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = path(file)?;
        let bytes = std::fs::read(p).map_err(|e| (LotStatus::Io, format!("reading {}: {e}", p.display())))?;
        let inner = lm::load_checkpoint(&bytes).map_err(|e: CheckpointError| (LotStatus::Checkpoint, e.to_string()))?;
        *out = Box::into_raw(Box::new(LotModel { inner }));
        Ok(())
    })
}

/// Writes a binary checkpoint.
///
/// # Safety
/// `m` must be a live handle; `file` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lot_model_save(m: *const LotModel, file: *const c_char) -> LotStatus {
    guard(|| {
        let m = model(m, "model")?;
        let p = path(file)?;
        std::fs::write(p, lm::save_checkpoint(m)).map_err(|e| (LotStatus::Io, format!("writing {}: {e}", p.display())))
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `m` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lot_model_free(m: *mut LotModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Vocabulary size, or 0 for a null handle.
///
/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lot_model_vocab_size(m: *const LotModel) -> usize {
    m.as_ref().map_or(0, |m| m.inner.arch.vocab)
}

/// Next-token distribution after `context` and the response `prefix`.
/// `probs` must hold `lot_model_vocab_size(m)` values.
///
/// # Safety
/// Pointers must be valid for the given lengths.
#[no_mangle]
pub unsafe extern "C" fn lot_model_next_dist(
    m: *const LotModel,
    context: *const TokenId,
    context_len: usize,
    prefix: *const TokenId,
    prefix_len: usize,
    probs: *mut f64,
    probs_len: usize,
) -> LotStatus {
    guard(|| {
        let m = model(m, "model")?;
        let ctx = input(context, context_len, "context")?;
        let pre = input(prefix, prefix_len, "prefix")?;
        lift(m.check_tokens(ctx))?;
        lift(m.check_tokens(pre))?;
        if probs_len < m.arch.vocab {
            return Err((LotStatus::BufferTooSmall, format!("probs needs {} slots", m.arch.vocab)));
        }
        let out = output(probs, probs_len, "probs")?;
        out[..m.arch.vocab].copy_from_slice(m.next_dist(ctx, pre).probs());
        Ok(())
    })
}

/// Decodes up to `max_len` tokens (EOS not included). A temperature of 0
/// means greedy; otherwise tokens are sampled with `seed`. On
/// `BufferTooSmall`, `written` holds the required length.
///
/// # Safety
/// Pointers must be valid for the given lengths; `written` for one write.
#[no_mangle]
pub unsafe extern "C" fn lot_model_decode(
    m: *const LotModel,
    context: *const TokenId,
    context_len: usize,
    max_len: usize,
    temperature: f64,
    seed: u64,
    tokens: *mut TokenId,
    tokens_cap: usize,
    written: *mut usize,
) -> LotStatus {
    guard(|| {
        let m = model(m, "model")?;
        if written.is_null() {
            return Err(null("written"));
        }
        let ctx = input(context, context_len, "context")?;
        let strategy = if temperature > 0.0 {
            Decoding::Sample { temperature, seed }
        } else if temperature == 0.0 {
            Decoding::Greedy
        } else {
            return Err(invalid("temperature must be non-negative"));
        };
        let toks = lift(lm::decode(m, ctx, strategy, max_len))?;
        *written = toks.len();
        if toks.len() > tokens_cap {
            return Err((LotStatus::BufferTooSmall, format!("tokens needs {} slots", toks.len())));
        }
        if !toks.is_empty() {
            output(tokens, tokens_cap, "tokens")?[..toks.len()].copy_from_slice(&toks);
        }
        Ok(())
    })
}

fn kind(d: LotDivergence) -> DivergenceKind {
    match d {
        LotDivergence::Kl => DivergenceKind::Kl,
        LotDivergence::Js => DivergenceKind::Js,
    }
}

/// Divergence in nats between two distributions of length `n`.
///
/// # Safety
/// `p` and `q` must be valid for `n` reads; `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn lot_divergence(
    which: LotDivergence,
    p: *const f64,
    q: *const f64,
    n: usize,
    out: *mut f64,
) -> LotStatus {
    guard(|| {
        let p = dist(input(p, n, "p")?, "p")?;
        let q = dist(input(q, n, "q")?, "q")?;
        let v = lift(divergence::divergence(kind(which), &p, &q))?;
        *output(out, 1, "out")?.first_mut().unwrap() = v.value_nats;
        Ok(())
    })
}

/// Gradient of the divergence with respect to `p`, written to `grad[0..n]`.
///
/// # Safety
/// `p`, `q` valid for `n` reads; `grad` for `n` writes.
#[no_mangle]
pub unsafe extern "C" fn lot_divergence_grad(
    which: LotDivergence,
    p: *const f64,
    q: *const f64,
    n: usize,
    grad: *mut f64,
) -> LotStatus {
    guard(|| {
        let p = dist(input(p, n, "p")?, "p")?;
        let q = dist(input(q, n, "q")?, "q")?;
        let g = lift(divergence::divergence_grad_p(kind(which), &p, &q))?;
        output(grad, n, "grad")?.copy_from_slice(&g);
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn lot_loss_params_default() -> LotLossParams {
    let c = LotConfig::default();
    LotLossParams {
        xi: c.xi,
        gamma: c.gamma,
        lambda: c.lambda_,
        divergence: match c.div_kind {
            DivergenceKind::Kl => LotDivergence::Kl,
            DivergenceKind::Js => LotDivergence::Js,
        },
        mode: LotLossMode::Full,
        kl_cap: c.kl_cap,
    }
}

fn config(p: &LotLossParams) -> Fallible<LotConfig> {
    let cfg = LotConfig {
        xi: p.xi,
        gamma: p.gamma,
        lambda_: p.lambda,
        div_kind: kind(p.divergence),
        mode: match p.mode {
            LotLossMode::Full => LossMode::Full,
            LotLossMode::ContrastorOnly => LossMode::ContrastorOnly,
            LotLossMode::ReinforcerOnly => LossMode::ReinforcerOnly,
            LotLossMode::MleOnly => LossMode::MleOnly,
        },
        kl_cap: p.kl_cap,
        ..LotConfig::default()
    };
    lift(cfg.validate())?;
    Ok(cfg)
}

/// Teacher-forced contrastive loss of `learner` on one (context, response)
/// pair against the frozen `tau` and `safe` models. EOS is appended to the
/// response internally.
///
/// # Safety
/// Handles must be live; arrays valid for their lengths; `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn lot_loss(
    learner: *const LotModel,
    tau: *const LotModel,
    safe: *const LotModel,
    context: *const TokenId,
    context_len: usize,
    response: *const TokenId,
    response_len: usize,
    params: *const LotLossParams,
    out: *mut LotLossTerms,
) -> LotStatus {
    guard(|| {
        let learner = model(learner, "learner")?;
        let tau = model(tau, "tau")?;
        let safe = model(safe, "safe")?;
        let params = params.as_ref().ok_or_else(|| null("params"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = config(params)?;
        for (name, m) in [("tau", tau), ("safe", safe)] {
            if m.arch.vocab != learner.arch.vocab {
                return Err((LotStatus::Config, format!("{name} vocabulary differs from learner")));
            }
        }
        let ctx = input(context, context_len, "context")?;
        let mut gold = input(response, response_len, "response")?.to_vec();
        gold.push(lot_core::vocab::EOS);
        let b = lift(lm::sequence_forward(learner, ctx, &gold))?;
        let t = lift(lm::sequence_forward(tau, ctx, &gold))?;
        let s = lift(lm::sequence_forward(safe, ctx, &gold))?;
        let terms = lift(lotloss::lot_loss(&b, &t, &s, &gold, &cfg))?;
        *out = LotLossTerms {
            total: terms.total,
            mle: terms.mle_term,
            contrast: terms.contrast_term,
            reinforce: terms.reinforce_term,
            positions: terms.n_positions,
            clamped: terms.clamped_positions,
        };
        Ok(())
    })
}
