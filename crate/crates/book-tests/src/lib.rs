//! Runs every fenced Rust block in the guide as a doc-test, so the book and
//! the library cannot drift apart. Each chapter becomes one empty module
//! whose documentation is the chapter source.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/geometry.md")]
pub mod geometry {}

#[doc = include_str!("../../../book/src/file-formats.md")]
pub mod file_formats {}

#[doc = include_str!("../../../book/src/synthetic-worlds.md")]
pub mod synthetic_worlds {}

#[doc = include_str!("../../../book/src/motion-mining.md")]
pub mod motion_mining {}

#[doc = include_str!("../../../book/src/tracking.md")]
pub mod tracking {}

#[doc = include_str!("../../../book/src/track-smoothing.md")]
pub mod track_smoothing {}

#[doc = include_str!("../../../book/src/self-training.md")]
pub mod self_training {}

#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
