//! Simulator for device-edge distributed speculative decoding.
//!
//! A small draft model on the device proposes tokens (a sequence or a token
//! tree) and uploads its draft distributions, optionally truncated to a
//! sparse set of entries. A large target model at the edge verifies them with
//! a lossless rejection-sampling rule. The crate provides the protocols,
//! synthetic model pairs, payload and latency models, and numerical checks of
//! the distortion bounds that govern truncated uploads.

pub mod error;
pub mod multi;
pub mod perf;
pub mod prob;
pub mod rng;
pub mod single;
pub mod synth;
pub mod theory;
pub mod transcript;
pub mod tree;

pub use error::{Error, Result};
pub use multi::{
    mc_output_dist_exact, mc_sample, mc_veri, run_mc_oracle, run_mc_session, tok_tree_draft, tok_tree_veri,
    McSessionConfig, McVeriResult, VerifiedSequence,
};
pub use perf::{
    n_oracle_expected, payload_bits, throughput_and_speedup, DraftShape, LinkModel, PayloadAccounting,
    PayloadConvention, SpeedupPoint, TimingModel,
};
pub use prob::{
    residual, sample, truncate, tv_distance, Categorical, Residual, SparseLogits, TruncationMode, TruncationSpec,
    UplinkDist,
};
pub use rng::{from_seed, substream, SimRng};
pub use single::{
    run_sc_oracle, run_sc_session, sc_output_dist_exact, tok_seq_draft, tok_seq_veri, AcceptRule, DraftBatch,
    OracleOutcome, ScSessionConfig,
};
pub use synth::{calibrate_alpha, calibrate_concentration, sample_contexts, LanguageModel, ModelPair};
pub use transcript::{OracleRecord, SessionTotals, Transcript};
pub use tree::{ExpansionConfig, FlatTree, TokenTree};
