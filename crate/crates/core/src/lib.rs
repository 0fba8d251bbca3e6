//! Interactive cross-modal image retrieval with SVM relevance feedback.
//!
//! A query (text or image) is embedded and matched against an immutable
//! corpus by cosine similarity. The user then marks relevant and
//! non-relevant results; each finetune trains a kernel SVM on the
//! accumulated judgments and re-ranks the candidate pool by its decision
//! value. The [`eval`] module simulates that loop with scripted actors.

pub mod error;
pub mod eval;
pub mod provider;
pub mod server;
pub mod session;
pub mod store;
pub mod svm;

pub use error::{Error, Result};
