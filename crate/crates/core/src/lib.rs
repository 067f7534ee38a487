//! Shift operators on weighted `L^p` spaces of directed trees.
//!
//! The crate models rooted and unrooted directed trees, applies the forward
//! shift `S`, its adjoint `S*` and the backward shift `B`, decides
//! hypercyclicity where a structural answer exists, builds finite orbit
//! shadowing witnesses, and cross-checks closed forms against dense
//! truncations.

pub mod address;
pub mod documents;
pub mod dynamics;
pub mod error;
pub mod operators;
pub mod oracle;
pub mod shadowing;
pub mod space;
pub mod tree;

pub use address::VertexAddress;
pub use error::{Error, Result};
pub use space::{TreeFunction, WeightMap};
pub use tree::{TreeModel, Window};
