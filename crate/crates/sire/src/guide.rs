//! The user guide, embedded so that every code sample in the book compiles
//! and runs as a doctest (`cargo test --doc`). The rendered version lives in
//! `book/`; build it with `mdbook build book`.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/spherical-domain.md")]
pub mod spherical_domain {}

#[doc = include_str!("../../../book/src/sampling-and-targets.md")]
pub mod sampling_and_targets {}

#[doc = include_str!("../../../book/src/equivariant-networks.md")]
pub mod equivariant_networks {}

#[doc = include_str!("../../../book/src/training.md")]
pub mod training_guide {}

#[doc = include_str!("../../../book/src/tracking.md")]
pub mod tracking_guide {}

#[doc = include_str!("../../../book/src/phantoms-and-evaluation.md")]
pub mod phantoms_and_evaluation {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli_reference {}

#[doc = include_str!("../../../book/src/file-formats.md")]
pub mod file_formats {}
