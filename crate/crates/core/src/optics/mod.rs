//! Thin-lens defocus model and layered focal-stack rendering.

pub mod lens;
pub mod noise;
pub mod psf;
pub mod render;
pub mod scene;

pub use lens::{coc_diameter, disparity_from_coc, LensConfig, StereoRig};
pub use noise::add_poisson_noise;
pub use psf::{disc_psf, Kernel};
pub use render::{
    depth_layers, plan_layers, plan_stack, render_refocused, render_stack, synth_focal_stack, FocalStack, LayerSpacing,
    StackConfig, StackPlan,
};
pub use scene::{DepthRange, Scene};

/// Largest blur-kernel diameter the renderer will produce, in pixels.
pub const MAX_COC_PX: f64 = 31.0;

/// Default number of focal slices and depth layers.
pub const DEFAULT_LAYERS: usize = 16;
