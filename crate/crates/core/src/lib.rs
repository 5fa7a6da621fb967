//! Fringe projection phase retrieval.
//!
//! The crate covers the full simulated measurement chain: random smooth
//! surfaces are rendered into phase-shifted fringe sets, demodulated with the
//! least-squares phase-shifting estimator, unwrapped along a multi-frequency
//! ladder and converted back into height. The [`nn`] module holds a small
//! CPU encoder-decoder that learns to transform one or two captured fringes
//! into the full fringe stacks the classical chain needs.

pub mod config;
pub mod dataset;
pub mod error;
pub mod fringe;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod raster;
pub mod rng;
pub mod surface;

pub use error::{Error, Result};
pub use fringe::{
    height_from_phase, order_error, render_fringe, render_set, restricted_depth,
    restricted_depth_sim, unwrap_ladder, unwrap_step, wrap, wrapped_phase, AbsolutePhaseMap,
    FrequencyLadder, FringeImage, FringeSet, OrderError, PhaseMap, RenderParams, SystemGeometry,
    DEFAULT_MODULATION_THRESHOLD,
};
pub use surface::{add_noise, generate_surface, render_scene, Surface, SurfaceGenConfig};
