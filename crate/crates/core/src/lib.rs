//! Concept-vector geometry, sparse-autoencoder attribution and activation
//! steering over portable activation dumps and a built-in toy transformer.

pub mod concept;
pub mod demo;
pub mod error;
pub mod geometry;
pub mod mft;
pub mod report;
pub mod saelab;
pub mod steering;
pub mod store;
pub mod tensor;
pub mod toymodel;

pub use concept::{ConceptVector, ConceptVectorSet, Contrast, ContrastSpec};
pub use error::{Error, ErrorClass, Result};
pub use geometry::{DensitySummary, PairwiseConstruction, PairwiseMatrix, ProjectionScores, SeparabilityCurve};
pub use mft::{Foundation, FoundationScorecard, Subscale};
pub use saelab::{EvidenceWindow, FeatureFingerprint, InterpretationRecord};
pub use steering::{Intervention, LikertItem, LogitProvider, McqItem, SlopeFit, Steer};
pub use store::{ActivationSet, SaeDictionary, SweepMode, SweepResult, TensorBlob, TokenCorpus};
pub use tensor::Matrix;
pub use toymodel::{ToyConfig, ToyModel};
