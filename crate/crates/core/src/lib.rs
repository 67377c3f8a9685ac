//! Image-guided layout synthesis for interactive indoor scenes.
//!
//! The crate turns inpainted views of a room into placed 3D furniture: it
//! renders ground-truth depth and instance buffers, builds inpainting masks,
//! lifts detected objects to bounding boxes by rescaling estimated depth,
//! derives placement constraints from those boxes and resolves them with a
//! scored depth-first search.

// `!(x > 0.0)` style checks reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod geometry;
pub mod render;
pub mod scene;
pub mod cluster;
pub mod depth_lift;
pub mod view_mask;
pub mod constraints;
pub mod placer;
pub mod assets;
pub mod perception;
pub mod config;
pub mod validate;
pub mod pipeline;
