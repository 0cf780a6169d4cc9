/*!
Compiles and runs every Rust code fence of the guide in `book/`.

Each chapter is attached as the documentation of an empty module, so
`cargo test --doc` picks its snippets up as ordinary doc-tests. The guide
therefore cannot drift from the library: a renamed function or changed
output breaks the build, not the reader.

One module per chapter keeps failures localised — the test name says which
chapter (and which fence within it) went stale.

This module only exists under `cfg(doctest)`; it compiles to nothing in
normal builds and exports nothing.
*/

#[doc = include_str!("../../../book/src/introduction.md")]
mod introduction {}

#[doc = include_str!("../../../book/src/data-model.md")]
mod data_model {}

#[doc = include_str!("../../../book/src/meta-paths.md")]
mod meta_paths {}

#[doc = include_str!("../../../book/src/integration.md")]
mod integration {}

#[doc = include_str!("../../../book/src/autodiff.md")]
mod autodiff {}

#[doc = include_str!("../../../book/src/encoder.md")]
mod encoder {}

#[doc = include_str!("../../../book/src/augmentation.md")]
mod augmentation {}

#[doc = include_str!("../../../book/src/contrastive.md")]
mod contrastive {}

#[doc = include_str!("../../../book/src/training.md")]
mod training {}

#[doc = include_str!("../../../book/src/evaluation.md")]
mod evaluation {}

#[doc = include_str!("../../../book/src/cli.md")]
mod cli {}
