//! Generative clothed and textured 3D human meshes.
//!
//! The pipeline couples a fixed-topology parametric body with clothing
//! represented as UV-space displacement maps and appearance as UV texture
//! maps. Learned components (geometry/texture generators, discriminators)
//! run on a built-in reverse-mode autodiff engine; deterministic components
//! (skinning, unposing, baking, rendering, labeling) run at full scale.
//!
//! Start with the runnable programs under `examples/`; the `sculpt` binary
//! exposes the same functionality as subcommands.

pub mod autodiff;
pub mod body;
pub mod cli;
pub mod container;
pub mod datagen;
pub mod dataset;
pub mod error;
pub mod imageio;
pub mod labeler;
pub mod math;
pub mod nets;
pub mod obj;
pub mod render;
pub mod trainer;
pub mod unpose;
pub mod uv;

pub use body::{
    clothed_template, joint_locations, lbs, pose_blendshape, pose_clothed_body, pose_feature,
    rodrigues, shaped_template, BodyModel, BodyShape, ClothedMesh, Pose,
};
pub use error::{Error, Result};
pub use uv::{
    bake_dispmap, build_mask, dilate_one_texel, sample_dispmap, DispMap, TextureMap, UvAtlas,
    UvMask,
};
