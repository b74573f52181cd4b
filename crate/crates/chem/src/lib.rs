//! Chemistry side of the model: the molecular graph, a reduced SELFIES
//! dialect whose decoder is total, the token vocabulary, and the
//! graph utilities used for data generation, preference pairs and metrics.

pub mod element;
pub mod error;
pub mod fingerprint;
pub mod graph;
pub mod groups;
#[cfg(feature = "oracle")]
pub mod iso;
pub mod perturb;
pub mod props;
pub mod random;
pub mod selfies;
pub mod vocab;

pub use element::Element;
pub use error::{ChemError, Result};
pub use fingerprint::{fingerprint, tanimoto, Fingerprint, FINGERPRINT_WIDTH};
pub use graph::{Bond, MolecularGraph};
pub use groups::{detect_functional_groups, FunctionalGroup, FunctionalGroupVector, NUM_GROUPS};
pub use perturb::{perturb, Perturbed};
pub use props::{toy_property, toy_reaction_forward, PropertyKind, PropertyValue};
pub use random::random_graph;
pub use selfies::{decode, encode, SelfiesSequence, SelfiesToken};
pub use vocab::{TokenId, Vocab};
