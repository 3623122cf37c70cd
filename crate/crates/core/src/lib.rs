//! Contrastive safety fine-tuning for small next-token models.
//!
//! A learner is trained with maximum likelihood while being pushed away from a
//! frozen toxic reference and pulled toward a frozen safe reference, both
//! measured per position with a KL or JS divergence.
//!
//! ```no_run
//! use lot_core::{corpus, lm, trainer};
//! let data = corpus::gen_synthetic_corpus(&corpus::SynthConfig::default(), 1).unwrap();
//! let init = lm::init_model(lm::Arch::default(), 0).unwrap();
//! let base = trainer::train_base(init, &data, &trainer::TrainConfig::default()).unwrap();
//! println!("{}", base.history.epochs.len());
//! ```

pub mod cli;
pub mod config;
pub mod corpus;
pub mod divergence;
pub mod error;
pub mod eval;
pub mod lm;
pub mod lotloss;
pub mod trainer;
pub mod vocab;

pub use error::{CheckpointError, LotError, Result};
