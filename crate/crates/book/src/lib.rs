//! Compiles the guide's code listings as doctests. `mdbook test` cannot link
//! against workspace crates, so each chapter is included here as the docs of
//! an empty module and checked by `cargo test --doc`.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/graphs.md")]
pub mod graphs {}
#[doc = include_str!("../../../book/src/pipelines.md")]
pub mod pipelines {}
#[doc = include_str!("../../../book/src/staleness.md")]
pub mod staleness {}
#[doc = include_str!("../../../book/src/accounting.md")]
pub mod accounting {}
#[doc = include_str!("../../../book/src/hybrid.md")]
pub mod hybrid {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
