//! Differentiable logic gate networks for video copy detection.
//!
//! Frames are miniaturized and binarized ([`pipeline`]), encoded by a single
//! trainable layer of soft two-input gates ([`network`]), and compared with
//! one of three fragment similarity strategies. After training the layer is
//! collapsed into a fixed Boolean netlist ([`circuit`]) that is evaluated 64
//! frames at a time with plain word operations.

pub mod circuit;
pub mod connectome;
pub mod dataset;
pub mod experiment;
pub mod gates;
pub mod metrics;
pub mod network;
pub mod pipeline;
pub mod seed;
pub mod training;

pub use gates::BoolOp;
pub use network::{ConnectomeKind, LgnConfig, SoftGateLayer};
pub use seed::Seed;
