#![forbid(unsafe_code)]

//! Training a mixture of small Wasserstein GANs whose mixture structure is
//! driven by semi-discrete optimal transport.
//!
//! The crate trains `k` generator/critic pairs jointly with `k` prototype
//! points. Prototypes induce a tessellation of data space; each GAN only ever
//! sees the data that falls into its own cell, and each prototype follows the
//! samples of its own generator. The resulting model is a mixture: pick a
//! cell with probability proportional to its data mass, then sample that
//! cell's generator.
//!
//! Module map:
//!
//! | module      | contents                                                       |
//! |-------------|----------------------------------------------------------------|
//! | [`autodiff`]| tensors, reverse-mode tape, MLPs with batch norm, Adam         |
//! | [`transport`]| cost functions, semi-discrete dual solver, tiny exact solver  |
//! | [`partition`]| tessellations, batch filtering, cell masses                   |
//! | [`gan`]     | generator/critic pair, Wasserstein loss, Lipschitz penalty     |
//! | [`ensemble`]| the joint training loop and the nonparametric variant          |
//! | [`data`]    | toy ring-of-disks datasets, CSV round-trip, label subsampling  |
//! | [`eval`]    | coverage/precision metrics and SVG figures                     |
//!
//! Everything random is seeded; two runs with the same configuration and
//! master seed produce identical results, including the training history.

pub mod autodiff;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod gan;
pub mod partition;
pub mod rng;
pub mod transport;

pub use autodiff::{Activation, AdamState, Gradients, Layer, LayerSpec, Mlp, Mode, NodeId, Tape, Tensor};
pub use data::{Dataset, ToySpec};
pub use ensemble::{Ensemble, InitStrategy, KGenerators, TrainConfig, Trainer, UpdateRule};
pub use error::{Error, Result};
pub use eval::{GridSpec, MaskSet};
pub use gan::{Gan, GanConfig, PenaltyForm};
pub use partition::Tessellation;
pub use transport::{CostFunction, DiscreteMeasure, DualSolution, EmpiricalMeasure};
