//! Edge maps and morphological active contours for lesion segmentation.

pub mod gac;
pub mod igg;
pub mod seed;

pub use gac::{
    curvature_pass, init_level_set, morphgac_run, morphgac_run_observed, morphgac_step, GacInput, GacParams, GacRun, InitSpec, LevelSet,
};
pub use igg::{inverse_gaussian_gradient, EdgeMap};
pub use seed::{distance_transform, seed_from_mask};
