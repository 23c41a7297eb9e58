//! Affordance discovery for articulated objects from depth observations.

mod error;
pub mod config;
pub mod datagen;
pub mod eval;
pub mod dataset;
pub mod geom;
pub mod goalcond;
pub mod gmm;
pub mod io;
pub mod kinematics;
pub mod model;
pub mod parallel;
pub mod perception;
pub mod pipeline;
pub mod render;
pub mod rng;

pub use error::{Error, Result};
pub use tensor::Scalar as Real;

pub type Vec3d = geom::Vec3<f64>;
pub type Object = kinematics::ArticulatedObject<f64>;
pub type Action = kinematics::ActionPrimitive<f64>;
