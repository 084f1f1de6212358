//! Part-aligned pooling and occlusion-aware retrieval for person re-identification.
//!
//! Inputs are precomputed backbone feature maps with pose keypoints and part
//! label maps.
//!
//! - [`regions`], [`pooling`]: keypoint-delimited bands and max pooling
//! - [`heads`], [`losses`]: per-part embeddings and classifiers with the
//!   visibility-aware identity loss and segmentation losses
//! - [`retrieval`]: occlusion-aware distance, CMC / mAP
//! - [`adaptation`]: DBSCAN pseudo labels for an unlabeled domain
//! - [`seg_labels`]: Densepose label fusion and segmentation metrics
//! - [`gradcheck`], [`synth`]: finite-difference checks and synthetic data

pub mod adaptation;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod heads;
pub mod losses;
pub mod pooling;
pub mod regions;
pub mod retrieval;
pub mod seg_labels;
pub mod synth;

pub use error::{Error, Result};
