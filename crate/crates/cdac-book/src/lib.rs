//! Keeps the book honest: every chapter under `book/src/` is included as a
//! doc comment here, so `cargo test --doc -p cdac-book` compiles and runs
//! each of its code blocks against the current `cdac` API. mdbook's own
//! `test` command cannot link against dependencies; this shim can.
//!
//! One module per chapter, so a doctest failure names the chapter it came
//! from.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/autodiff.md")]
pub mod autodiff {}

#[doc = include_str!("../../../book/src/model.md")]
pub mod model {}

#[doc = include_str!("../../../book/src/losses.md")]
pub mod losses {}

#[doc = include_str!("../../../book/src/data.md")]
pub mod data {}

#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}

#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
