//! Screening public procurement tenders for bid-rigging cartels.
//!
//! The pipeline runs from raw bid tables ([`data`]) through distributional
//! screens ([`screens`]) to trained classifiers ([`models`]), their
//! out-of-sample evaluation ([`evaluation`]) and the tables a procurement
//! agency acts on ([`reporting`]). [`simulate`] generates labeled synthetic
//! markets for testing and benchmarking.

pub mod data;
pub mod evaluation;
pub mod models;
pub mod reporting;
pub mod rng;
pub mod screens;
pub mod simulate;
