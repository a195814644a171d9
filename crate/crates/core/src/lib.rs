//! Layout-aware token classification for scientific PDF pages.

pub mod error;
pub mod eval;
pub mod experiment;
pub mod grouping;
pub mod hierarchical;
pub mod indicator;
pub mod io;
pub mod model;
pub mod nn;
pub mod synth;
pub mod train;
pub mod vocab;

pub use error::{Error, Result};
pub use model::{BBox, Dataset, GroupKind, LabelSet, Page, Token, VisualGroup};
