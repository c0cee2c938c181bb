//! Loop-nest transformations and neural architecture operations over affine
//! convolution nests.
//!
//! * [`ir`]: loop nests, statement instances and brute-force dependences.
//! * [`transforms`]: program and neural transformations plus the
//!   dependence-preservation legality check.
//! * [`interp`]: reference interpreter, direct convolution oracle, MAC counts.
//! * [`nnet`]: a small conv/relu network engine computing Fisher Potential.
//! * [`search`]: random transformation-sequence search with Fisher rejection.

pub mod config;
pub mod conv;
pub mod expr;
pub mod interp;
pub mod ir;
pub mod nnet;
pub mod search;
pub mod transforms;

pub use conv::{accumulate_nest, conv_nest, ChannelSplit, ConvSpec};
pub use interp::{count_macs, execute, reference_conv, ElementMode, ExecEnv, Tensor};
pub use ir::{Caps, LoopNest};
pub use transforms::{check_semantic_legality, Transform, TransformClass, TransformSequence, Verdict};
