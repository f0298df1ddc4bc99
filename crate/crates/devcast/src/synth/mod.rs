//! Synthetic dataset generation: parametric nominal geometry, process
//! parameters, planted deviation fields, simulated multi-view scans, and
//! batch-structured dataset assembly with recorded ground truth.

pub mod field;
pub mod geometry;
pub mod params;
pub mod plan;
pub mod scan;

pub use field::{DeviationField, Wave, DEVIATION_BUDGET};
pub use plan::{
    generate_dataset, manifest_csv, planted_links, write_dataset, ComponentRecord, Dataset,
    GeneratorPlan, PlantedLink,
};
pub use scan::{simulate_scans, view_direction, ScanPlan, ScanSet, SimulatedScan};
pub use geometry::{
    generate_nominal, region_areas, sample_surface, NominalPart, PartSpec, PartType, RegionKind,
    SurfaceSample,
};
pub use params::{
    sample_batch_offsets, sample_parameters, ParameterDrift, ProcessParameters, PARAM_NAMES,
    PARAM_RANGES,
};
