//! Value types and their on-disk formats.

pub mod etns;
mod keypoints;
mod manifest;
mod tensor;

pub use keypoints::{coco, keypoint_line, load_keypoints, Keypoint, KeypointSet, NUM_KEYPOINTS};
pub use manifest::{load_manifest, write_manifest, ManifestEntry, Split, MANIFEST_HEADER, UNLABELED};
pub use tensor::{
    read_label_map, read_matrix, read_tensor, write_label_map, write_matrix, write_tensor,
    LabelMap, Tensor3,
};
