//! Learnable meta-path guided adversarial contrastive learning on
//! heterogeneous information networks (HINs).
//!
//! The crate is organised as a pipeline; each stage is usable on its own:
//!
//! * [`hin`] — the typed-graph data model and its JSON interchange format.
//! * [`metapath`] — sparse meta-path sub-graph materialisation, integration
//!   of several sub-graphs into one multiplex graph, and structural
//!   analytics (homophily ratio, Jaccard overlap, coverage).
//! * [`autodiff`] — a small reverse-mode differentiation engine over dense
//!   64-bit matrices, plus parameter storage, Adam, and checkpoint I/O.
//! * [`encoder`] — the relation-aware graph attention encoder applied to the
//!   two views (network schema and integrated meta-path graph).
//! * [`lma`] — the learnable adversarial augmenter: random edge drop, a GCN
//!   edge scorer, and Gumbel-Max soft edge sampling.
//! * [`contrastive`] — shared projection head, connectivity-based positive
//!   selection, and the InfoNCE objective.
//! * [`train`] — the alternating two-step (min / max) training loop.
//! * [`eval`] — linear-probe classification, k-means clustering metrics, the
//!   meta-path sensitivity study, and a synthetic HIN generator.
//! * [`cli`] — the `lamp` command-line interface built from the above.
//!
//! A narrative guide with runnable examples lives in the `book/` directory of
//! the repository; its code snippets are compiled and executed as doc-tests
//! of this crate, so the guide cannot drift out of sync with the library.

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod contrastive;
pub mod encoder;
pub mod eval;
pub mod hin;
pub mod lma;
pub mod metapath;
pub mod rng;
pub mod train;

#[cfg(doctest)]
mod book;
