//! Multi-distance knowledge graph embeddings.
//!
//! Every entity and relation carries several independent vector families;
//! each family feeds its own translational distance and the model score is
//! their weighted sum minus a constant offset:
//!
//! ```text
//! score(h, r, t) = w1·‖h_i + r_i − t_i‖ + w2·‖h_j + t_j − r_j‖
//!                + w3·‖t_k + r_k − h_k‖ + w4·‖h_l − r_l ∘ t_l‖ − ψ
//! ```
//!
//! Lower scores are more plausible. Training uses a limit-based hinge loss
//! whose limits are shifted by a small controller between epochs, optimized
//! with sparse Adadelta. Evaluation is the usual link-prediction ranking
//! (MR, MRR, Hits@N; raw and filtered).
//!
//! The crate is organised bottom-up:
//!
//! * [`data`]: TSV triple files, vocabularies, the filter index.
//! * [`synthetic`]: generated datasets exhibiting one relational pattern.
//! * [`model`]: embedding tables, the four distance terms, the aggregate score.
//! * [`checkpoint`]: the portable binary checkpoint container.
//! * [`loss`]: the limit-based loss and the limit controller.
//! * [`optim`]: analytic gradients, sparse gradient buffers, Adadelta.
//! * [`training`]: negative sampling, the epoch loop, expressivity fitting.
//! * [`eval`]: ranking and metrics.
//! * [`cli`]: the `mde` command line.
//!
//! See the `examples/` directory of this crate for one runnable program per
//! capability.

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod loss;
pub mod model;
pub mod optim;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
