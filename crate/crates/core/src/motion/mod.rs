//! Motion ingestion, pose features and training-clip augmentation.

pub mod archive;
pub mod augment;
pub mod bvh;
pub mod features;
pub mod skeleton;
pub mod synth;

pub use archive::{read_archive, read_clip, write_archive, write_clip, ClipRecord, NormStats};
pub use augment::{
    apply_crop, clip_dataset, mirror, temporal_random_crop, window_starts, CropPlan,
};
pub use bvh::{parse_bvh, write_bvh, BvhDocument, JointMap};
pub use features::{
    extract_features, integrate_root, to_raw, to_world, MotionClip, RawMotion, RootState,
};
pub use skeleton::{BodyPart, Joint, Skeleton, DOF, N_JOINTS};
