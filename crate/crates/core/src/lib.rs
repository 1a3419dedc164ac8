//! padkit: an attention-guided, patch-based presentation-attack detection
//! pipeline for disguise-makeup faces.
//!
//! The system trains in two phases. A style-robust full-face network
//! (categorical style augmentation + instance-aware whitening + triplet focal
//! metric learning) is trained first; Grad-CAM on its last convolutional
//! layer yields per-region attention scores for seven canonical facial
//! patches. Seven patch subnetworks are then trained on 64x64 crops, and
//! their attention-weighted embeddings feed a small fusion MLP that makes the
//! final live/attack call.
//!
//! The crate also ships a synthetic face generator that plants localized
//! disguise artifacts (so the whole pipeline is trainable and verifiable
//! without any private dataset), subject-disjoint splitting, and ISO-style
//! PAD metrics (APCER / BPCER / ACER / EER / TDR@FDR).

pub mod attention;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod geometry;
pub mod imgproc;
pub mod losses;
pub mod metrics;
pub mod netcore;
pub mod nn;
pub mod pipeline;
pub mod rng;

pub use error::{Error, Result};
