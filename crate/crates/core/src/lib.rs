//! Multi-task, multi-lingual classification of hateful and offensive posts.
//!
//! The three HASOC sub-tasks (A: `HOF`/`NOT`, B: `HATE`/`OFFN`/`PRFN`,
//! C: `TIN`/`UNT`) are combined into a joint label space of seven valid
//! labels. A single head produces joint logits; per-task logits come from
//! log-sum-exp marginalization over each label's joint group, so the task
//! distributions are exactly the marginals of the joint distribution. The
//! multi-task loss adds the joint cross-entropy to every task cross-entropy.
//!
//! Text is encoded by signed hashed n-grams, or by precomputed embeddings
//! loaded from a file.

pub mod augment;
pub mod corpus;
pub mod features;
pub mod metrics;
pub mod model;
pub mod schema;
pub mod trainer;

pub use corpus::{Corpus, Example, Language, Split};
pub use schema::{GoldLabels, JointLabel, Label, TaskId, TaskLabel, TaskSchema};
