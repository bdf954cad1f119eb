//! Training: denoising pretraining, language-model training, the
//! self-supervised loop over mined pairs, and the joint loop that adds the
//! unsupervised style and content terms through two-pass decoding.

mod loops;
mod objective;
mod optim;
mod pretrain;

pub use loops::{
    mine_pairs, train_joint, train_selfsup, JsonLog, Lang, LogRecord, PairCycler, Selector, TrainConfig, TrainOutcome,
};
pub use objective::{
    decode_cap, joint_gradients, two_pass_decode, validate_selfsup, validate_unsup, GumbelNoise, StepGrads, TwoPass,
    ValidationScore,
};
pub use optim::{clip_global_norm, Adam, Schedule};
pub use pretrain::{finetune_lm, pretrain_dae, train_lm, DaeConfig, LmTrainConfig};

use crate::corpus::{CorpusError, Style};
use crate::evalsuite::EvalError;
use crate::losses::LossError;
use crate::net::NetError;
use crate::spe::SpeError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("expected a {expected} corpus, got {found}")]
    WrongStyle { expected: Style, found: Style },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("no pairs accepted for {0} consecutive epochs")]
    NoPairs(usize),
    #[error("gumbel noise has {have} rows, {need} needed")]
    NoiseShape { have: usize, need: usize },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Spe(#[from] SpeError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
