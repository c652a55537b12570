//! Desk-scale framework for training small multi-modal (text+image)
//! fake-news detectors and measuring their robustness under adversarial
//! attacks, backdoor poisoning, defenses, and modality-bias protocols.

pub mod alphabet;
pub mod ces;
pub mod corpus;
pub mod detector;
pub mod error;
pub mod graph;
pub mod ppm;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{Graph, NodeId};
pub use tensor::Tensor;
