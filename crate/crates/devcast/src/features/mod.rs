//! Geometric feature extraction: primitive fits (plane, circle, cylinder),
//! form and surface metrics from their residuals, relational metrics between
//! fitted primitives, and schema-validated feature-vector assembly.

mod fits;
mod schema;

pub use fits::{
    angular_spread_deg, fit_circle_2d, fit_cylinder, fit_plane, relational_features,
    surface_roughness, CircleFit, CylinderFit, FitFrame, PlaneFit,
};
pub use schema::{
    assemble_features, FeatureGroup, FeatureSchema, FeatureVector, Fnv1a, SchemaEntry,
};
