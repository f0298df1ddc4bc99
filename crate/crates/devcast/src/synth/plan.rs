//! Dataset assembly: batch-structured part production with recorded ground
//! truth. Every random draw comes from a stream keyed by (dataset seed, part
//! index, purpose), so any single part can be regenerated without replaying
//! the parts before it and the scan simulation never perturbs the truth
//! chart.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::deviation::{stats_of, STAT_NAMES};
use crate::error::{Error, Result};
use crate::io::{save_cloud, save_mesh, CloudFormat};
use crate::measure::{measure_features, region_points_from_chart};
use crate::synth::field::DeviationField;
use crate::synth::geometry::{
    generate_nominal, sample_surface, NominalPart, PartSpec, PartType, SurfaceSample,
};
use crate::synth::params::{
    sample_batch_offsets, sample_parameters, ParameterDrift, ProcessParameters, PARAM_NAMES,
};
use crate::synth::scan::{simulate_scans, ScanPlan, ScanSet};

/// RNG stream purposes. Each (part, purpose) pair gets an independent
/// ChaCha8 stream; batch offsets use the batch index in the part slot.
const STREAM_BATCH: u64 = 0;
const STREAM_PARAMS: u64 = 1;
const STREAM_FIELD: u64 = 2;
const STREAM_SCAN: u64 = 3;
const STREAM_TRUTH: u64 = 4;

/// SplitMix64 finalizer over (seed, index, purpose). Streams for different
/// purposes share no state, so adding scans cannot shift the truth chart.
fn stream_seed(seed: u64, index: u64, purpose: u64) -> u64 {
    let mut z = seed
        ^ (index.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (purpose.wrapping_add(1)).wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream(seed: u64, index: u64, purpose: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, index, purpose))
}

/// Full recipe for one dataset. Two plans with equal fields produce
/// byte-identical datasets.
#[derive(Debug, Clone)]
pub struct GeneratorPlan {
    pub seed: u64,
    pub batches: usize,
    /// Parts per batch, assigned to archetypes round-robin in manufacture
    /// order; a multiple of 3 keeps every batch balanced.
    pub parts_per_batch: usize,
    pub drift: ParameterDrift,
    pub scan: ScanPlan,
    /// Simulate scans per part. Truth features and targets never depend on
    /// this; disabling it makes parameter-to-feature studies much cheaper.
    pub with_scans: bool,
    /// Chart samples used for true features and targets.
    pub truth_samples: usize,
}

impl Default for GeneratorPlan {
    fn default() -> Self {
        GeneratorPlan {
            seed: 7,
            batches: 10,
            parts_per_batch: 6,
            drift: ParameterDrift::default(),
            scan: ScanPlan::default(),
            with_scans: true,
            truth_samples: 24_000,
        }
    }
}

impl GeneratorPlan {
    pub fn part_count(&self) -> usize {
        self.batches * self.parts_per_batch
    }

    pub fn validate(&self) -> Result<()> {
        if self.batches == 0 || self.parts_per_batch == 0 {
            return Err(Error::InvalidArgument(format!(
                "plan needs at least one batch and one part per batch, got {}x{}",
                self.batches, self.parts_per_batch
            )));
        }
        if self.parts_per_batch % PartType::all().len() != 0 {
            return Err(Error::InvalidArgument(format!(
                "parts_per_batch {} does not divide evenly over {} archetypes",
                self.parts_per_batch,
                PartType::all().len()
            )));
        }
        // Roughness tiles need ~8 points per 2 mm cell on the largest face.
        if self.truth_samples < 8_000 {
            return Err(Error::InvalidArgument(format!(
                "truth_samples {} too sparse for tiled surface metrics",
                self.truth_samples
            )));
        }
        if self.with_scans {
            self.scan.validate()?;
        }
        Ok(())
    }

    /// Archetype of the part at a global manufacture index.
    pub fn part_type_at(&self, index: usize) -> PartType {
        PartType::all()[index % PartType::all().len()]
    }

    pub fn batch_of(&self, index: usize) -> usize {
        index / self.parts_per_batch
    }
}

/// One planted parameter-to-feature link: the generator couples the
/// parameter to exactly one deviation mode, and the named feature isolates
/// that mode. `sign` is the direction of the true correlation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedLink {
    pub part_type: PartType,
    pub parameter: &'static str,
    pub feature: &'static str,
    pub sign: f64,
}

/// The full coupling table, five links per archetype. Parameters absent
/// here (feed_rate, depth_of_cut, coolant_flow, material_hardness) drive
/// nothing and act as distractors for the screen.
pub fn planted_links() -> Vec<PlantedLink> {
    use PartType::*;
    let link = |part_type, parameter, feature, sign| PlantedLink {
        part_type,
        parameter,
        feature,
        sign,
    };
    vec![
        // Thermal expansion scales the whole part about its centroid.
        link(PlateBracket, "ambient_temperature", "bore1_diameter", 1.0),
        link(CylinderHousing, "ambient_temperature", "bore_diameter", 1.0),
        link(FreeformBlade, "ambient_temperature", "profile_scale_mid", 1.0),
        // Clamping bow domes the large faces.
        link(PlateBracket, "clamping_force", "flatness_bottom", 1.0),
        link(CylinderHousing, "clamping_force", "flatness_top", 1.0),
        link(FreeformBlade, "clamping_force", "dev_face_pressure_std", 1.0),
        // Lean coolant ovalizes round walls and recesses the blade nose.
        link(PlateBracket, "coolant_concentration", "roundness_bore1", -1.0),
        link(CylinderHousing, "coolant_concentration", "cylindricity_bore", -1.0),
        link(FreeformBlade, "coolant_concentration", "dev_edge_leading_mean", 1.0),
        // Slow cutting leaves heavier surface texture.
        link(PlateBracket, "cutting_speed", "ra_bottom", -1.0),
        link(CylinderHousing, "cutting_speed", "ra_top", -1.0),
        link(FreeformBlade, "cutting_speed", "ra_pressure", -1.0),
        // Tool wear erodes exposed rims and the trailing edge.
        link(PlateBracket, "tool_wear_index", "rim_recess_bore1", 1.0),
        link(CylinderHousing, "tool_wear_index", "rim_recess_outer", 1.0),
        link(FreeformBlade, "tool_wear_index", "te_recess", 1.0),
    ]
}

/// Everything recorded about one manufactured part. Scan-independent truth
/// (features, targets) is always present; scans are optional per plan.
#[derive(Debug, Clone)]
pub struct ComponentRecord {
    pub component_id: String,
    pub part_type: PartType,
    pub spec: PartSpec,
    pub batch_id: String,
    pub batch_index: usize,
    /// Global production order; batches are contiguous and time-ordered.
    pub manufacture_index: usize,
    pub params: ProcessParameters,
    pub field: DeviationField,
    pub scans: Option<ScanSet>,
    /// Schema features measured from the noise-free truth chart.
    pub true_features: BTreeMap<String, f64>,
    /// Deviation statistics of the critical region in [`STAT_NAMES`] order;
    /// these are the prediction targets.
    pub targets: [f64; 9],
}

impl ComponentRecord {
    pub fn coverage(&self) -> Option<f64> {
        self.scans.as_ref().map(|s| s.coverage)
    }
}

/// A generated dataset: shared nominal geometry per archetype plus one
/// record per part in manufacture order.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub plan: GeneratorPlan,
    /// Parallel to [`PartType::all`].
    pub nominals: Vec<NominalPart>,
    pub records: Vec<ComponentRecord>,
}

impl Dataset {
    pub fn nominal(&self, part_type: PartType) -> &NominalPart {
        let idx = PartType::all().iter().position(|t| *t == part_type).unwrap();
        &self.nominals[idx]
    }

    /// Replays the truth chart of one record: dense noise-free surface
    /// samples and the field deviation at each. Deterministic because the
    /// chart stream is keyed by (seed, manufacture index).
    pub fn truth_chart(&self, record: &ComponentRecord) -> (Vec<SurfaceSample>, Vec<f64>) {
        let mut rng =
            stream(self.plan.seed, record.manufacture_index as u64, STREAM_TRUTH);
        let samples = sample_surface(&record.spec, self.plan.truth_samples, &mut rng);
        let devs = samples.iter().map(|s| record.field.eval(s)).collect();
        (samples, devs)
    }

    pub fn records_of_type(&self, part_type: PartType) -> Vec<&ComponentRecord> {
        self.records.iter().filter(|r| r.part_type == part_type).collect()
    }

    /// Batch labels in production order, one per batch.
    pub fn batch_ids(&self) -> Vec<String> {
        (0..self.plan.batches).map(|b| format!("batch-{b:02}")).collect()
    }
}

fn generate_component(
    plan: &GeneratorPlan,
    nominal: &NominalPart,
    batch_offsets: &[f64; 9],
    index: usize,
) -> Result<ComponentRecord> {
    let part_type = plan.part_type_at(index);
    let spec = nominal.spec;
    let idx = index as u64;

    let params = sample_parameters(
        &plan.drift,
        batch_offsets,
        &mut stream(plan.seed, idx, STREAM_PARAMS),
    );
    let field =
        DeviationField::from_parameters(spec, &params, &mut stream(plan.seed, idx, STREAM_FIELD));

    let mut truth_rng = stream(plan.seed, idx, STREAM_TRUTH);
    let samples = sample_surface(&spec, plan.truth_samples, &mut truth_rng);
    let devs: Vec<f64> = samples.iter().map(|s| field.eval(s)).collect();
    let pts = region_points_from_chart(&samples, &devs);
    let true_features = measure_features(&spec, &pts)?;

    let critical = part_type.critical_region();
    let critical_devs: Vec<f64> = samples
        .iter()
        .zip(&devs)
        .filter(|(s, _)| s.region == critical)
        .map(|(_, d)| *d)
        .collect();
    let targets = stats_of(&critical_devs, critical.name())?.values();

    let scans = if plan.with_scans {
        Some(simulate_scans(nominal, &field, &plan.scan, &mut stream(plan.seed, idx, STREAM_SCAN))?)
    } else {
        None
    };

    Ok(ComponentRecord {
        component_id: format!("part-{index:04}"),
        part_type,
        spec,
        batch_id: format!("batch-{:02}", plan.batch_of(index)),
        batch_index: plan.batch_of(index),
        manufacture_index: index,
        params,
        field,
        scans,
        true_features,
        targets,
    })
}

/// Generates the whole dataset. Parts are produced in parallel but the
/// output order and contents are functions of the plan alone.
pub fn generate_dataset(plan: &GeneratorPlan) -> Result<Dataset> {
    plan.validate()?;
    let nominals: Vec<NominalPart> = PartType::all()
        .iter()
        .map(|t| generate_nominal(&PartSpec::default_for(*t)))
        .collect::<Result<_>>()?;
    let offsets: Vec<[f64; 9]> = (0..plan.batches)
        .map(|b| sample_batch_offsets(&plan.drift, &mut stream(plan.seed, b as u64, STREAM_BATCH)))
        .collect();

    let records: Vec<ComponentRecord> = (0..plan.part_count())
        .into_par_iter()
        .map(|i| {
            let part_type = plan.part_type_at(i);
            let slot = PartType::all().iter().position(|t| *t == part_type).unwrap();
            generate_component(plan, &nominals[slot], &offsets[plan.batch_of(i)], i)
        })
        .collect::<Result<_>>()?;

    Ok(Dataset { plan: plan.clone(), nominals, records })
}

fn fmt_field(v: f64) -> String {
    // Shortest round-trip form keeps CSVs byte-stable across runs.
    format!("{v:?}")
}

/// Manifest: one row per part with its batch, parameters, and coverage.
pub fn manifest_csv(ds: &Dataset) -> String {
    let mut out = String::from("component_id,part_type,batch_id,manufacture_index,coverage");
    for name in PARAM_NAMES {
        let _ = write!(out, ",{name}");
    }
    out.push('\n');
    for r in &ds.records {
        let cov = r.coverage().map_or(String::from(""), fmt_field);
        let _ = write!(
            out,
            "{},{},{},{},{}",
            r.component_id, r.part_type, r.batch_id, r.manufacture_index, cov
        );
        for v in r.params.values() {
            let _ = write!(out, ",{}", fmt_field(v));
        }
        out.push('\n');
    }
    out
}

/// The coupling table the analysis stage is supposed to rediscover.
pub fn planted_links_csv() -> String {
    let mut out = String::from("part_type,parameter,feature,expected_sign\n");
    for l in planted_links() {
        let _ = writeln!(out, "{},{},{},{}", l.part_type, l.parameter, l.feature, l.sign);
    }
    out
}

/// True features in long form: component, feature id, value.
pub fn true_features_csv(ds: &Dataset) -> String {
    let mut out = String::from("component_id,feature,value\n");
    for r in &ds.records {
        for (id, v) in &r.true_features {
            let _ = writeln!(out, "{},{},{}", r.component_id, id, fmt_field(*v));
        }
    }
    out
}

/// Critical-region deviation statistics (the prediction targets).
pub fn targets_csv(ds: &Dataset) -> String {
    let mut out = String::from("component_id,stat,value\n");
    for r in &ds.records {
        for (name, v) in STAT_NAMES.iter().zip(r.targets) {
            let _ = writeln!(out, "{},{},{}", r.component_id, name, fmt_field(v));
        }
    }
    out
}

/// Scalar field amplitudes per part, for audit. Wave shapes are implied by
/// the seed and not listed.
pub fn fields_csv(ds: &Dataset) -> String {
    let mut out = String::from(
        "component_id,thermal_scale,bow_amp,oval_amp,texture_amp,erosion_amp,le_recess_amp,random_amp\n",
    );
    for r in &ds.records {
        let f = &r.field;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.component_id,
            fmt_field(f.thermal_scale),
            fmt_field(f.bow_amp),
            fmt_field(f.oval_amp),
            fmt_field(f.texture_amp),
            fmt_field(f.erosion_amp),
            fmt_field(f.le_recess_amp),
            fmt_field(f.random_amp)
        );
    }
    out
}

fn put(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes the dataset directory tree:
///
/// ```text
/// manifest.csv  planted_links.csv  features_true.csv  targets_true.csv  fields.csv
/// nominals/<type>.obj  nominals/<type>.regions.csv
/// parts/<id>/scan-00.ply ...  parts/<id>/poses.csv  parts/<id>/truth.csv
/// ```
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    let nom_dir = dir.join("nominals");
    fs::create_dir_all(&nom_dir).map_err(|e| Error::io(&nom_dir, e))?;
    put(&dir.join("manifest.csv"), &manifest_csv(ds))?;
    put(&dir.join("planted_links.csv"), &planted_links_csv())?;
    put(&dir.join("features_true.csv"), &true_features_csv(ds))?;
    put(&dir.join("targets_true.csv"), &targets_csv(ds))?;
    put(&dir.join("fields.csv"), &fields_csv(ds))?;

    for (t, nom) in PartType::all().iter().zip(&ds.nominals) {
        save_mesh(&dir.join(format!("nominals/{t}.obj")), &nom.mesh)?;
        put(&dir.join(format!("nominals/{t}.regions.csv")), &nom.region_csv())?;
    }

    for r in &ds.records {
        let Some(scans) = &r.scans else { continue };
        let pdir = dir.join("parts").join(&r.component_id);
        fs::create_dir_all(&pdir).map_err(|e| Error::io(&pdir, e))?;
        let mut poses = String::from(
            "scan,r00,r01,r02,r10,r11,r12,r20,r21,r22,tx,ty,tz\n",
        );
        let mut truth = String::from("scan,point,true_deviation,is_outlier\n");
        for (k, scan) in scans.scans.iter().enumerate() {
            save_cloud(&pdir.join(format!("scan-{k:02}.ply")), &scan.cloud, CloudFormat::AsciiPly)?;
            let row = scan.true_pose.to_row();
            let _ = write!(poses, "{k}");
            for v in row {
                let _ = write!(poses, ",{}", fmt_field(v));
            }
            poses.push('\n');
            for (i, (d, o)) in scan.true_deviation.iter().zip(&scan.is_outlier).enumerate() {
                let _ = writeln!(truth, "{k},{i},{},{}", fmt_field(*d), *o as u8);
            }
        }
        put(&pdir.join("poses.csv"), &poses)?;
        put(&pdir.join("truth.csv"), &truth)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::correlation_screen;
    use nalgebra::DMatrix;

    fn truth_only_plan(seed: u64) -> GeneratorPlan {
        GeneratorPlan { seed, with_scans: false, ..GeneratorPlan::default() }
    }

    #[test]
    fn layout_is_balanced_and_time_ordered() {
        let plan = truth_only_plan(11);
        let ds = generate_dataset(&plan).unwrap();
        assert_eq!(ds.records.len(), 60);
        for (i, r) in ds.records.iter().enumerate() {
            assert_eq!(r.manufacture_index, i);
            assert_eq!(r.batch_index, i / 6);
            assert_eq!(r.component_id, format!("part-{i:04}"));
        }
        for b in 0..10 {
            let batch: Vec<_> =
                ds.records.iter().filter(|r| r.batch_index == b).collect();
            assert_eq!(batch.len(), 6);
            for t in PartType::all() {
                assert_eq!(batch.iter().filter(|r| r.part_type == t).count(), 2);
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_dataset(&truth_only_plan(3)).unwrap();
        let b = generate_dataset(&truth_only_plan(3)).unwrap();
        assert_eq!(manifest_csv(&a), manifest_csv(&b));
        assert_eq!(true_features_csv(&a), true_features_csv(&b));
        assert_eq!(targets_csv(&a), targets_csv(&b));
        let c = generate_dataset(&truth_only_plan(4)).unwrap();
        assert_ne!(targets_csv(&a), targets_csv(&c));
    }

    #[test]
    fn truth_chart_replay_matches_record() {
        let plan = GeneratorPlan {
            batches: 1,
            parts_per_batch: 3,
            with_scans: false,
            ..truth_only_plan(5)
        };
        let ds = generate_dataset(&plan).unwrap();
        for r in &ds.records {
            let (samples, devs) = ds.truth_chart(r);
            // Per-region rounding can shift the total by a few samples.
            let slack = (samples.len() as i64 - plan.truth_samples as i64).abs();
            assert!(slack <= 16, "sample count off by {slack}");
            let pts = region_points_from_chart(&samples, &devs);
            let feats = measure_features(&r.spec, &pts).unwrap();
            assert_eq!(feats, r.true_features);
        }
    }

    #[test]
    fn scans_do_not_perturb_truth() {
        let base = GeneratorPlan {
            batches: 1,
            parts_per_batch: 3,
            truth_samples: 12_000,
            ..truth_only_plan(9)
        };
        let with = GeneratorPlan {
            with_scans: true,
            scan: ScanPlan { views: 2, points_per_view: 400, ..ScanPlan::default() },
            ..base.clone()
        };
        let a = generate_dataset(&base).unwrap();
        let b = generate_dataset(&with).unwrap();
        assert_eq!(targets_csv(&a), targets_csv(&b));
        assert_eq!(true_features_csv(&a), true_features_csv(&b));
        assert!(b.records.iter().all(|r| r.coverage().unwrap() > 0.3));
    }

    /// Every planted link should be recoverable from one 60-part dataset:
    /// strong correlation, right sign, and stronger than any distractor
    /// parameter on the same feature.
    #[test]
    fn planted_links_recoverable_from_truth_features() {
        let ds = generate_dataset(&truth_only_plan(21)).unwrap();
        for t in PartType::all() {
            let recs = ds.records_of_type(t);
            let n = recs.len();
            assert_eq!(n, 20);
            let links: Vec<_> =
                planted_links().into_iter().filter(|l| l.part_type == t).collect();
            assert_eq!(links.len(), 5);

            let feature_ids: Vec<String> =
                links.iter().map(|l| l.feature.to_string()).collect();
            let features = DMatrix::from_fn(n, links.len(), |i, j| {
                recs[i].true_features[&feature_ids[j]]
            });
            let param_ids: Vec<String> =
                PARAM_NAMES.iter().map(|s| s.to_string()).collect();
            let params =
                DMatrix::from_fn(n, 9, |i, j| recs[i].params.values()[j]);

            let report =
                correlation_screen(&features, &feature_ids, &params, &param_ids, 0.3).unwrap();
            for (j, link) in links.iter().enumerate() {
                let pj =
                    PARAM_NAMES.iter().position(|p| *p == link.parameter).unwrap();
                let r = report.r[(j, pj)];
                assert!(
                    r.abs() > 0.4 && r.signum() == link.sign,
                    "{t}: {} -> {} r={r:.3}, want sign {}",
                    link.parameter,
                    link.feature,
                    link.sign
                );
                // The planted parameter must dominate the distractors.
                for (pk, pname) in PARAM_NAMES.iter().enumerate() {
                    if pk != pj {
                        let other = report.r[(j, pk)];
                        assert!(
                            other.abs() < r.abs(),
                            "{t}: {} beaten by {pname} on {} ({other:.3} vs {r:.3})",
                            link.parameter,
                            link.feature
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn dataset_written_to_disk_is_complete() {
        let plan = GeneratorPlan {
            batches: 1,
            parts_per_batch: 3,
            truth_samples: 12_000,
            scan: ScanPlan { views: 2, points_per_view: 300, ..ScanPlan::default() },
            ..GeneratorPlan::default()
        };
        let ds = generate_dataset(&plan).unwrap();
        let dir = std::env::temp_dir().join(format!("devcast-ds-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        write_dataset(&ds, &dir).unwrap();
        for f in ["manifest.csv", "planted_links.csv", "features_true.csv", "targets_true.csv"] {
            assert!(dir.join(f).is_file(), "missing {f}");
        }
        for t in PartType::all() {
            assert!(dir.join(format!("nominals/{t}.obj")).is_file());
            assert!(dir.join(format!("nominals/{t}.regions.csv")).is_file());
        }
        for r in &ds.records {
            let pdir = dir.join("parts").join(&r.component_id);
            assert!(pdir.join("scan-00.ply").is_file());
            assert!(pdir.join("poses.csv").is_file());
            assert!(pdir.join("truth.csv").is_file());
        }
        let manifest = fs::read_to_string(dir.join("manifest.csv")).unwrap();
        assert_eq!(manifest.lines().count(), 1 + ds.records.len());
        assert!(manifest.lines().nth(1).unwrap().starts_with("part-0000,plate-bracket,batch-00,0,"));
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn invalid_plans_are_rejected() {
        let mut plan = GeneratorPlan::default();
        plan.parts_per_batch = 4;
        assert!(generate_dataset(&plan).is_err());
        plan = GeneratorPlan::default();
        plan.truth_samples = 100;
        assert!(generate_dataset(&plan).is_err());
        plan = GeneratorPlan::default();
        plan.batches = 0;
        assert!(generate_dataset(&plan).is_err());
    }
}
