//! Point-cloud denoising by projection onto learned local planes.

pub mod ablation;
pub mod data;
pub mod eig;
pub mod error;
pub mod eval;
pub mod formats;
pub mod geom;
pub mod mesh;
pub mod metrics;
pub mod net;
pub mod optim;
pub mod planefit;
pub mod rng;
pub mod spatial;
pub mod tensor;

pub use error::{Error, ErrorKind, Result};
