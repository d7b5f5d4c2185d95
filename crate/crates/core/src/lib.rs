//! Forensic analysis of HEIF/HEIC containers.
//!
//! The pipeline is: [`boxes::parse_tree`] lexes the ISOBMFF box structure,
//! [`semantics::build_file_model`] interprets it as HEIF, [`analyzer`]
//! derives findings, [`integrity`] hashes evidence, [`rewriter`] makes
//! working copies with hidden flags cleared and [`carver`] recovers
//! embedded files from raw blobs. [`fixtures`] builds synthetic containers
//! for tests.

pub mod analyzer;
pub mod boxes;
pub mod carver;
pub mod fixtures;
pub mod fourcc;
mod hexser;
pub mod integrity;
mod reader;
pub mod report;
pub mod rewriter;
pub mod semantics;

pub use boxes::{parse_tree, BoxNode, BoxTree, CoverageMap, Span};
pub use fourcc::FourCC;
pub use semantics::{build_file_model, detect_heif, FileModel, HeifKind, ParsedFile};
