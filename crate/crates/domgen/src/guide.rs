//! A book-style tour of the crate.
//!
//! Each module below carries one chapter of the guide in `book/src/` as its
//! documentation, included verbatim. Because rustdoc executes the code
//! blocks of module docs as doctests, `cargo test --doc` compiles and runs
//! every snippet the rendered book shows — the guide cannot drift from the
//! library it documents.
//!
//! Render the book itself with `mdbook build book` from the workspace root.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/autodiff.md")]
pub mod autodiff {}

#[doc = include_str!("../../../book/src/model.md")]
pub mod model {}

#[doc = include_str!("../../../book/src/data.md")]
pub mod data {}

#[doc = include_str!("../../../book/src/variance-penalty.md")]
pub mod variance_penalty {}

#[doc = include_str!("../../../book/src/mixup.md")]
pub mod mixup {}

#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}

#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
