//! Compiles the book's Rust listings as doctests, one module per chapter so
//! a failure points at its chapter. mdbook cannot resolve crate
//! dependencies when it tests a book, `rustdoc` can.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/data.md")]
pub mod data {}

#[doc = include_str!("../../../book/src/trees.md")]
pub mod trees {}

#[doc = include_str!("../../../book/src/svm.md")]
pub mod svm {}

#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}

#[doc = include_str!("../../../book/src/bundles.md")]
pub mod bundles {}

#[doc = include_str!("../../../book/src/importance.md")]
pub mod importance {}
