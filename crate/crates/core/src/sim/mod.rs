//! Synthetic V2I scenes, LIDAR returns, propagation paths and beam labels.

pub mod channel;
pub mod dataset;
pub mod geometry;
pub mod lidar;
pub mod paths;
pub mod scene;

pub use channel::{
    argmax_first, best_beam, channel_response, channel_responses, default_codebooks, flatten, gain_matrix,
    steering, unflatten, CMatrix, Codebook, GainMatrix, Role, NUM_PAIRS, RX_BEAMS, TX_BEAMS,
};
pub use dataset::{generate_dataset, generate_record, meta_path, read_dataset, write_dataset, DatasetMeta, DatasetRecord, GenConfig};
pub use geometry::{Aabb, BoxKind, Point3};
pub use lidar::{cast_lidar, LidarSpec};
pub use paths::{line_of_sight, trace_paths, ChannelConfig, Path, PathList};
pub use scene::{generate_scene, Range, Scene, SceneConfig, VehicleDims};
