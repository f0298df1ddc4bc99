//! Point-cloud metrology and geometric-deviation prediction toolkit.
//!
//! The crate covers the full measurement chain: registering multi-view scans
//! into a common frame, cleaning them, mapping signed deviations against a
//! nominal mesh, extracting dimensional features, statistical screening, and
//! learning to predict deviation statistics from process parameters.

pub mod analysis;
pub mod cloud;
pub mod error;
pub mod io;
pub mod measure;
pub mod deviation;
pub mod features;
pub mod learn;
pub mod preprocess;
pub mod registration;
pub mod spatial;
pub mod synth;

pub use cloud::{PointCloud, TriangleMesh, Vec3};
pub use error::{Error, Result};
