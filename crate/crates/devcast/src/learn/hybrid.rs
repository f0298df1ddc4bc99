//! Cross-validated hybrid predictor. Each fold trains an autoencoder on
//! its training maps and one boosted-tree head per (part type, target
//! statistic) over the composite row [engineered ‖ learned ‖ parameters];
//! fold predictions are blended with inverse-validation-MAE weights.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::BufWriter;
use std::path::Path;

use crate::deviation::percentile_linear;
use crate::error::{Error, Result};
use crate::learn::encoder::{train_encoder, Autoencoder, EncoderConfig};
use crate::learn::gbt::{train_gbt, GbtConfig, GbtModel};
use crate::learn::metrics::{compute_metrics, MetricsBundle};

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        ^ (a.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (b.wrapping_add(1)).wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_FOLDS: u64 = 10;
const STREAM_ENCODER: u64 = 11;
const STREAM_GBT: u64 = 12;
const STREAM_SEARCH: u64 = 13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSchema {
    pub name: String,
    pub engineered_ids: Vec<String>,
}

/// Column contract shared by training inputs, persisted models, and
/// prediction-time inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSchema {
    pub groups: Vec<GroupSchema>,
    pub param_ids: Vec<String>,
    pub target_ids: Vec<String>,
    pub voxel_volume: usize,
}

impl ModelSchema {
    pub fn group(&self, name: &str) -> Option<(usize, &GroupSchema)> {
        self.groups.iter().enumerate().find(|(_, g)| g.name == name)
    }
}

/// One component, already resolved against a schema.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub component_id: String,
    pub group: String,
    pub batch_id: String,
    pub engineered: Vec<f64>,
    pub params: Vec<f64>,
    pub map: Vec<f64>,
    /// One value per schema target; empty for unlabeled inputs.
    pub targets: Vec<f64>,
}

impl ModelInput {
    /// Resolves named values against the schema, reporting every missing
    /// id at once.
    pub fn from_named(
        component_id: impl Into<String>,
        group: &str,
        batch_id: impl Into<String>,
        features: &BTreeMap<String, f64>,
        params: &BTreeMap<String, f64>,
        map: Vec<f64>,
        targets: Option<&BTreeMap<String, f64>>,
        schema: &ModelSchema,
    ) -> Result<ModelInput> {
        let (_, gs) = schema
            .group(group)
            .ok_or_else(|| Error::SchemaMismatch(format!("unknown part type '{group}'")))?;
        let pick = |ids: &[String], from: &BTreeMap<String, f64>, missing: &mut Vec<String>| {
            let mut out = Vec::with_capacity(ids.len());
            for id in ids {
                match from.get(id) {
                    Some(v) => out.push(*v),
                    None => missing.push(id.clone()),
                }
            }
            out
        };
        let mut missing: Vec<String> = Vec::new();
        let engineered = pick(&gs.engineered_ids, features, &mut missing);
        let p = pick(&schema.param_ids, params, &mut missing);
        let t = match targets {
            Some(map) => pick(&schema.target_ids, map, &mut missing),
            None => Vec::new(),
        };
        if !missing.is_empty() {
            return Err(Error::SchemaMismatch(format!(
                "missing values for: {}",
                missing.join(", ")
            )));
        }
        if map.len() != schema.voxel_volume {
            return Err(Error::DimMismatch(format!(
                "voxel map has {} cells, schema expects {}",
                map.len(),
                schema.voxel_volume
            )));
        }
        Ok(ModelInput {
            component_id: component_id.into(),
            group: group.to_string(),
            batch_id: batch_id.into(),
            engineered,
            params: p,
            map,
            targets: t,
        })
    }
}

fn validate_input(input: &ModelInput, schema: &ModelSchema, need_targets: bool) -> Result<usize> {
    let (gi, gs) = schema.group(&input.group).ok_or_else(|| {
        Error::SchemaMismatch(format!(
            "part type '{}' of {} not in model schema",
            input.group, input.component_id
        ))
    })?;
    let check = |what: &str, got: usize, want: usize| -> Result<()> {
        if got != want {
            return Err(Error::SchemaMismatch(format!(
                "{}: {what} has {got} values, schema expects {want}",
                input.component_id
            )));
        }
        Ok(())
    };
    check("engineered features", input.engineered.len(), gs.engineered_ids.len())?;
    check("parameters", input.params.len(), schema.param_ids.len())?;
    check("voxel map", input.map.len(), schema.voxel_volume)?;
    if need_targets || !input.targets.is_empty() {
        check("targets", input.targets.len(), schema.target_ids.len())?;
    }
    let finite = input.engineered.iter().chain(&input.params).chain(&input.map).chain(&input.targets);
    for v in finite {
        if !v.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "non-finite value in input {}",
                input.component_id
            )));
        }
    }
    Ok(gi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub folds: usize,
    pub encoder: EncoderConfig,
    pub gbt: GbtConfig,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig { folds: 5, encoder: EncoderConfig::desk(), gbt: GbtConfig::default(), seed: 0 }
    }
}

/// Assigns every row to a fold such that no manufacturing batch spans
/// folds. Returns the per-row fold id and the effective fold count
/// (capped by the number of distinct batches).
pub fn batch_folds(inputs: &[ModelInput], folds: usize, seed: u64) -> Result<(Vec<usize>, usize)> {
    let mut batches: Vec<&str> =
        inputs.iter().map(|i| i.batch_id.as_str()).collect::<BTreeSet<_>>().into_iter().collect();
    let k = folds.min(batches.len());
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "cross-validation needs at least two batches and two folds, got {} batch(es), {folds} fold(s)",
            batches.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0, STREAM_FOLDS));
    batches.shuffle(&mut rng);
    let fold_of_batch: BTreeMap<&str, usize> =
        batches.iter().enumerate().map(|(i, b)| (*b, i % k)).collect();
    Ok((inputs.iter().map(|i| fold_of_batch[i.batch_id.as_str()]).collect(), k))
}

/// Inverse-validation-MAE fold weights, normalized to sum to one. Folds
/// with zero error share all the weight equally.
pub fn fold_weights(val_maes: &[f64]) -> Vec<f64> {
    let zeros = val_maes.iter().filter(|m| **m == 0.0).count();
    if zeros > 0 {
        let share = 1.0 / zeros as f64;
        return val_maes.iter().map(|m| if *m == 0.0 { share } else { 0.0 }).collect();
    }
    let inv: Vec<f64> = val_maes.iter().map(|m| 1.0 / m).collect();
    let total: f64 = inv.iter().sum();
    inv.iter().map(|v| v / total).collect()
}

/// Weighted combination of per-fold predictions.
pub fn ensemble(predictions: &[f64], weights: &[f64]) -> f64 {
    predictions.iter().zip(weights).map(|(p, w)| p * w).sum()
}

/// Training mean and standard deviation, with unit scale for constant
/// targets so standardization stays invertible.
pub fn target_scaler(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > 1e-12 { std } else { 1.0 })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeadModel {
    pub group: String,
    pub target: String,
    pub y_mean: f64,
    pub y_std: f64,
    pub gbt: GbtModel,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldModel {
    /// Multiplier applied to voxel values before encoding.
    pub map_scale: f64,
    pub encoder: Autoencoder,
    /// One head per (group, target), group-major in schema order.
    pub heads: Vec<HeadModel>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HybridModel {
    pub schema: ModelSchema,
    pub encoder_config: EncoderConfig,
    pub gbt_config: GbtConfig,
    pub folds: Vec<FoldModel>,
    pub fold_weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub component_id: String,
    pub group: String,
    pub target: String,
    pub truth: Option<f64>,
    pub prediction: f64,
}

#[derive(Debug, Clone)]
pub struct CvReport {
    /// Standardized-space validation MAE per fold, pooled over heads.
    pub fold_val_mae: Vec<f64>,
    pub fold_weights: Vec<f64>,
    pub fold_of_row: Vec<usize>,
    /// Out-of-fold predictions in original units, every labeled row once.
    pub oof: Vec<PredictionRow>,
}

struct PreparedFold {
    map_scale: f64,
    encoder: Autoencoder,
    /// Composite row for every input under this fold's encoder.
    z: Vec<Vec<f64>>,
}

fn compose(input: &ModelInput, embedding: &[f64]) -> Vec<f64> {
    let mut z = Vec::with_capacity(input.engineered.len() + embedding.len() + input.params.len());
    z.extend_from_slice(&input.engineered);
    z.extend_from_slice(embedding);
    z.extend_from_slice(&input.params);
    z
}

/// Robust amplitude of the occupied voxels; empty maps scale by one.
fn map_scale_of(maps: &[&ModelInput]) -> f64 {
    let mut mags: Vec<f64> =
        maps.iter().flat_map(|i| i.map.iter().filter(|v| **v != 0.0).map(|v| v.abs())).collect();
    if mags.is_empty() {
        return 1.0;
    }
    mags.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let p95 = percentile_linear(&mags, 95.0);
    if p95 > 1e-12 {
        1.0 / p95
    } else {
        1.0
    }
}

fn prepare_folds(
    inputs: &[ModelInput],
    cv: &CvConfig,
    fold_of_row: &[usize],
    k: usize,
) -> Result<Vec<PreparedFold>> {
    (0..k)
        .into_par_iter()
        .map(|fold| {
            let train: Vec<&ModelInput> = inputs
                .iter()
                .zip(fold_of_row)
                .filter(|(_, f)| **f != fold)
                .map(|(i, _)| i)
                .collect();
            let map_scale = map_scale_of(&train);
            let maps: Vec<Vec<f64>> =
                train.iter().map(|i| i.map.iter().map(|v| v * map_scale).collect()).collect();
            let mut ecfg = cv.encoder.clone();
            ecfg.seed = mix(cv.seed, fold as u64, STREAM_ENCODER);
            let (encoder, _) = train_encoder(&maps, &ecfg)?;
            let z = inputs
                .iter()
                .map(|input| {
                    let scaled: Vec<f64> = input.map.iter().map(|v| v * map_scale).collect();
                    Ok(compose(input, &encoder.encode(&scaled)?))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(PreparedFold { map_scale, encoder, z })
        })
        .collect()
}

type FoldFit = (Vec<HeadModel>, (f64, usize), Vec<PredictionRow>);

fn fit_heads(
    inputs: &[ModelInput],
    schema: &ModelSchema,
    gbt: &GbtConfig,
    cv_seed: u64,
    fold_of_row: &[usize],
    prepared: &[PreparedFold],
) -> Result<Vec<FoldFit>> {
    prepared
        .par_iter()
        .enumerate()
        .map(|(fold, pf)| {
            let mut heads = Vec::new();
            let mut oof = Vec::new();
            let mut abs_sum = 0.0;
            let mut count = 0usize;
            for (gi, gs) in schema.groups.iter().enumerate() {
                let rows_of = |want_val: bool| -> Vec<usize> {
                    (0..inputs.len())
                        .filter(|&r| inputs[r].group == gs.name && (fold_of_row[r] == fold) == want_val)
                        .collect()
                };
                let train_rows = rows_of(false);
                let val_rows = rows_of(true);
                if train_rows.is_empty() {
                    return Err(Error::Empty(format!(
                        "fold {fold} has no training rows for part type '{}'",
                        gs.name
                    )));
                }
                let width = pf.z[train_rows[0]].len();
                let xt = DMatrix::from_fn(train_rows.len(), width, |i, j| pf.z[train_rows[i]][j]);
                let xv = DMatrix::from_fn(val_rows.len(), width, |i, j| pf.z[val_rows[i]][j]);
                for (ti, target) in schema.target_ids.iter().enumerate() {
                    let y_raw: Vec<f64> = train_rows.iter().map(|&r| inputs[r].targets[ti]).collect();
                    let (mean, std) = target_scaler(&y_raw);
                    let y: Vec<f64> = y_raw.iter().map(|v| (v - mean) / std).collect();
                    let yv: Vec<f64> =
                        val_rows.iter().map(|&r| (inputs[r].targets[ti] - mean) / std).collect();
                    let mut cfg = *gbt;
                    cfg.seed = mix(cv_seed, (fold * 10_000 + gi * 100 + ti) as u64, STREAM_GBT);
                    let validation =
                        if val_rows.is_empty() { None } else { Some((&xv, yv.as_slice())) };
                    let model = train_gbt(&xt, &y, &cfg, validation)?;
                    if !val_rows.is_empty() {
                        let preds = model.predict(&xv)?;
                        for ((&r, p), t) in val_rows.iter().zip(&preds).zip(&yv) {
                            abs_sum += (p - t).abs();
                            count += 1;
                            oof.push(PredictionRow {
                                component_id: inputs[r].component_id.clone(),
                                group: gs.name.clone(),
                                target: target.clone(),
                                truth: Some(inputs[r].targets[ti]),
                                prediction: mean + std * p,
                            });
                        }
                    }
                    heads.push(HeadModel {
                        group: gs.name.clone(),
                        target: target.clone(),
                        y_mean: mean,
                        y_std: std,
                        gbt: model,
                    });
                }
            }
            Ok((heads, (abs_sum, count), oof))
        })
        .collect()
}

/// Batch-respecting cross-validation of the full hybrid. Returns the
/// ensemble over fold models plus the pooled out-of-fold report.
pub fn cross_validate(
    inputs: &[ModelInput],
    schema: &ModelSchema,
    cv: &CvConfig,
) -> Result<(HybridModel, CvReport)> {
    cv.encoder.validate()?;
    cv.gbt.validate()?;
    if inputs.is_empty() {
        return Err(Error::Empty("cross-validation input".into()));
    }
    for input in inputs {
        validate_input(input, schema, true)?;
    }
    let (fold_of_row, k) = batch_folds(inputs, cv.folds, cv.seed)?;
    let prepared = prepare_folds(inputs, cv, &fold_of_row, k)?;
    let fits = fit_heads(inputs, schema, &cv.gbt, cv.seed, &fold_of_row, &prepared)?;

    let mut fold_val_mae = Vec::with_capacity(k);
    let mut oof = Vec::new();
    let mut folds = Vec::with_capacity(k);
    for (pf, (heads, (abs_sum, count), mut rows)) in prepared.into_iter().zip(fits) {
        if count == 0 {
            return Err(Error::Empty("a fold has no validation rows".into()));
        }
        fold_val_mae.push(abs_sum / count as f64);
        oof.append(&mut rows);
        folds.push(FoldModel { map_scale: pf.map_scale, encoder: pf.encoder, heads });
    }
    let weights = fold_weights(&fold_val_mae);
    let model = HybridModel {
        schema: schema.clone(),
        encoder_config: cv.encoder.clone(),
        gbt_config: cv.gbt,
        folds,
        fold_weights: weights.clone(),
    };
    Ok((model, CvReport { fold_val_mae, fold_weights: weights, fold_of_row, oof }))
}

impl HybridModel {
    pub fn fold_count(&self) -> usize {
        self.folds.len()
    }

    /// Embedding of a raw (unscaled) voxel map under one fold's encoder.
    pub fn embed(&self, fold: usize, map: &[f64]) -> Result<Vec<f64>> {
        let f = self
            .folds
            .get(fold)
            .ok_or_else(|| Error::InvalidArgument(format!("no fold {fold}")))?;
        let scaled: Vec<f64> = map.iter().map(|v| v * f.map_scale).collect();
        f.encoder.encode(&scaled)
    }

    /// Predictions of a single fold's model, one row per (input, target).
    pub fn predict_with_fold(&self, fold: usize, inputs: &[ModelInput]) -> Result<Vec<PredictionRow>> {
        let f = self
            .folds
            .get(fold)
            .ok_or_else(|| Error::InvalidArgument(format!("no fold {fold}")))?;
        let t_count = self.schema.target_ids.len();
        let mut rows = Vec::with_capacity(inputs.len() * t_count);
        for input in inputs {
            let gi = validate_input(input, &self.schema, false)?;
            let scaled: Vec<f64> = input.map.iter().map(|v| v * f.map_scale).collect();
            let z = compose(input, &f.encoder.encode(&scaled)?);
            for (ti, target) in self.schema.target_ids.iter().enumerate() {
                let head = &f.heads[gi * t_count + ti];
                debug_assert!(head.group == input.group && head.target == *target);
                rows.push(PredictionRow {
                    component_id: input.component_id.clone(),
                    group: input.group.clone(),
                    target: target.clone(),
                    truth: input.targets.get(ti).copied(),
                    prediction: head.y_mean + head.y_std * head.gbt.predict_row(&z),
                });
            }
        }
        Ok(rows)
    }

    /// Ensemble predictions: the fold-weight blend of every fold model.
    pub fn predict(&self, inputs: &[ModelInput]) -> Result<Vec<PredictionRow>> {
        if self.folds.is_empty() {
            return Err(Error::Empty("model has no folds".into()));
        }
        let per_fold: Vec<Vec<PredictionRow>> = (0..self.folds.len())
            .map(|k| self.predict_with_fold(k, inputs))
            .collect::<Result<_>>()?;
        let mut out = per_fold[0].clone();
        for row in &mut out {
            row.prediction = 0.0;
        }
        for (rows, w) in per_fold.iter().zip(&self.fold_weights) {
            for (o, r) in out.iter_mut().zip(rows) {
                o.prediction += w * r.prediction;
            }
        }
        Ok(out)
    }
}

/// Metrics per (group, target) over rows that carry a truth value.
pub fn metrics_by_group_target(rows: &[PredictionRow]) -> Result<Vec<(String, String, MetricsBundle)>> {
    let mut buckets: BTreeMap<(String, String), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in rows {
        if let Some(t) = r.truth {
            let e = buckets.entry((r.group.clone(), r.target.clone())).or_default();
            e.0.push(t);
            e.1.push(r.prediction);
        }
    }
    if buckets.is_empty() {
        return Err(Error::Empty("no labeled prediction rows".into()));
    }
    buckets
        .into_iter()
        .map(|((g, t), (truth, pred))| Ok((g, t, compute_metrics(&truth, &pred)?)))
        .collect()
}

/// Mean absolute error pooled over all labeled rows.
pub fn pooled_mae(rows: &[PredictionRow]) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for r in rows {
        if let Some(t) = r.truth {
            sum += (r.prediction - t).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Empty("no labeled prediction rows".into()));
    }
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, Default)]
pub struct SearchSpace {
    pub n_estimators: Vec<usize>,
    pub max_depth: Vec<usize>,
    pub learning_rate: Vec<f64>,
    pub subsample: Vec<f64>,
    pub l1_alpha: Vec<f64>,
    pub l2_lambda: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub config: GbtConfig,
    /// Pooled standardized out-of-fold MAE under this configuration.
    pub objective: f64,
}

fn draw_config(rng: &mut ChaCha8Rng, base: &GbtConfig, space: &SearchSpace) -> GbtConfig {
    fn pick<T: Copy>(rng: &mut ChaCha8Rng, options: &[T], fallback: T) -> T {
        if options.is_empty() {
            fallback
        } else {
            options[rng.gen_range(0..options.len())]
        }
    }
    GbtConfig {
        n_estimators: pick(rng, &space.n_estimators, base.n_estimators),
        max_depth: pick(rng, &space.max_depth, base.max_depth),
        learning_rate: pick(rng, &space.learning_rate, base.learning_rate),
        subsample: pick(rng, &space.subsample, base.subsample),
        l1_alpha: pick(rng, &space.l1_alpha, base.l1_alpha),
        l2_lambda: pick(rng, &space.l2_lambda, base.l2_lambda),
        ..*base
    }
}

/// Seeded random search over tree hyperparameters. Fold splits and
/// encoders are built once; trial 0 always evaluates the incumbent
/// configuration, so the result can never be worse than the default.
pub fn search_hyperparameters(
    inputs: &[ModelInput],
    schema: &ModelSchema,
    cv: &CvConfig,
    space: &SearchSpace,
    budget: usize,
    seed: u64,
) -> Result<(GbtConfig, Vec<TrialResult>)> {
    if budget == 0 {
        return Err(Error::InvalidArgument("search budget must be at least 1".into()));
    }
    cv.encoder.validate()?;
    for input in inputs {
        validate_input(input, schema, true)?;
    }
    let (fold_of_row, k) = batch_folds(inputs, cv.folds, cv.seed)?;
    let prepared = prepare_folds(inputs, cv, &fold_of_row, k)?;

    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0, STREAM_SEARCH));
    let mut trials = Vec::with_capacity(budget);
    for t in 0..budget {
        let config = if t == 0 { cv.gbt } else { draw_config(&mut rng, &cv.gbt, space) };
        config.validate()?;
        let fits = fit_heads(inputs, schema, &config, cv.seed, &fold_of_row, &prepared)?;
        let (sum, n) = fits
            .iter()
            .fold((0.0, 0usize), |(s, n), (_, (abs, c), _)| (s + abs, n + c));
        if n == 0 {
            return Err(Error::Empty("search found no validation rows".into()));
        }
        trials.push(TrialResult { config, objective: sum / n as f64 });
    }
    let best = trials
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.objective.partial_cmp(&b.1.objective).unwrap().then(a.0.cmp(&b.0)))
        .map(|(_, t)| t.config)
        .unwrap();
    Ok((best, trials))
}

const MODEL_FORMAT: &str = "deviation-hybrid";
const MODEL_VERSION: u32 = 1;

#[derive(Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    model: HybridModel,
}

pub fn save_model(model: &HybridModel, path: &Path) -> Result<()> {
    #[derive(Serialize)]
    struct Repr<'a> {
        format: &'a str,
        version: u32,
        model: &'a HybridModel,
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer(
        BufWriter::new(file),
        &Repr { format: MODEL_FORMAT, version: MODEL_VERSION, model },
    )
    .map_err(|e| Error::Parse { path: path.into(), line: e.line(), msg: e.to_string() })
}

pub fn load_model(path: &Path) -> Result<HybridModel> {
    let data = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ModelFile = serde_json::from_str(&data)
        .map_err(|e| Error::Parse { path: path.into(), line: e.line(), msg: e.to_string() })?;
    if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
        return Err(Error::SchemaMismatch(format!(
            "model file is {} v{}, expected {MODEL_FORMAT} v{MODEL_VERSION}",
            file.format, file.version
        )));
    }
    Ok(file.model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_schema() -> ModelSchema {
        ModelSchema {
            groups: vec![
                GroupSchema {
                    name: "alpha".into(),
                    engineered_ids: vec!["e0".into(), "e1".into(), "e2".into()],
                },
                GroupSchema { name: "beta".into(), engineered_ids: vec!["f0".into(), "f1".into()] },
            ],
            param_ids: vec!["p0".into(), "p1".into()],
            target_ids: vec!["t0".into(), "t1".into()],
            voxel_volume: 512,
        }
    }

    fn tiny_cv(seed: u64) -> CvConfig {
        CvConfig {
            folds: 5,
            encoder: EncoderConfig {
                grid_dims: [8, 8, 8],
                conv_filters: vec![2, 4],
                kernel: 3,
                pool_stride: 2,
                fc_sizes: vec![16],
                embedding_dim: 4,
                dropout_rate: 0.3,
                learning_rate: 3e-3,
                max_epochs: 12,
                early_stop_patience: 12,
                seed: 0,
            },
            gbt: GbtConfig {
                n_estimators: 150,
                max_depth: 3,
                learning_rate: 0.1,
                subsample: 0.8,
                l1_alpha: 0.1,
                l2_lambda: 1.0,
                early_stop_rounds: None,
                seed: 0,
            },
            seed,
        }
    }

    /// Smooth voxel pattern tied to the first parameter so the map
    /// carries real signal.
    fn toy_map(c: f64, d: f64) -> Vec<f64> {
        let mut m = Vec::with_capacity(512);
        for x in 0..8 {
            for y in 0..8 {
                for z in 0..8 {
                    let (fx, fy, fz) = (x as f64 / 8.0, y as f64 / 8.0, z as f64 / 8.0);
                    m.push(
                        c * (std::f64::consts::PI * fx).sin() * (std::f64::consts::PI * fy).sin()
                            + d * fz,
                    );
                }
            }
        }
        m
    }

    fn toy_inputs(batches: usize, per_batch: usize, seed: u64, constant_targets: Option<f64>) -> Vec<ModelInput> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for b in 0..batches {
            for i in 0..per_batch {
                let idx = b * per_batch + i;
                let group = if idx % 2 == 0 { "alpha" } else { "beta" };
                let eng: Vec<f64> = (0..if group == "alpha" { 3 } else { 2 })
                    .map(|_| rng.gen_range(-1.0..1.0))
                    .collect();
                let params: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let map = toy_map(0.05 * params[0], 0.05 * eng[0]);
                let targets = match constant_targets {
                    Some(c) => vec![c, c],
                    None => vec![eng[0] + 2.0 * params[1], 0.5 * params[0] - eng[eng.len() - 1]],
                };
                out.push(ModelInput {
                    component_id: format!("part-{idx:03}"),
                    group: group.into(),
                    batch_id: format!("batch-{b:02}"),
                    engineered: eng,
                    params,
                    map,
                    targets,
                });
            }
        }
        out
    }

    #[test]
    fn each_batch_lands_in_exactly_one_fold() {
        let inputs = toy_inputs(5, 4, 1, None);
        let (fold_of_row, k) = batch_folds(&inputs, 5, 9).unwrap();
        assert_eq!(k, 5);
        let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
        for (input, fold) in inputs.iter().zip(&fold_of_row) {
            let f = seen.entry(input.batch_id.as_str()).or_insert(*fold);
            assert_eq!(f, fold, "batch {} spans folds", input.batch_id);
        }
        let folds_used: BTreeSet<usize> = fold_of_row.iter().copied().collect();
        assert_eq!(folds_used.len(), 5);
    }

    #[test]
    fn fold_weights_follow_inverse_mae() {
        let w = fold_weights(&[0.01, 0.02]);
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((w[1] - 1.0 / 3.0).abs() < 1e-12);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(fold_weights(&[0.0, 0.1]), vec![1.0, 0.0]);
    }

    #[test]
    fn ensemble_is_the_weighted_mean() {
        let p = ensemble(&[0.02, 0.04], &[0.75, 0.25]);
        assert!((p - 0.025).abs() < 1e-15);
    }

    #[test]
    fn constant_targets_are_reproduced_exactly() {
        let inputs = toy_inputs(5, 4, 2, Some(0.7));
        let (model, report) = cross_validate(&inputs, &toy_schema(), &tiny_cv(3)).unwrap();
        assert!(report.fold_val_mae.iter().all(|m| *m == 0.0));
        for row in model.predict(&inputs).unwrap() {
            assert!((row.prediction - 0.7).abs() < 1e-12, "{}", row.prediction);
        }
    }

    #[test]
    fn cross_validation_is_deterministic() {
        let inputs = toy_inputs(5, 4, 4, None);
        let (_, r1) = cross_validate(&inputs, &toy_schema(), &tiny_cv(5)).unwrap();
        let (_, r2) = cross_validate(&inputs, &toy_schema(), &tiny_cv(5)).unwrap();
        assert_eq!(r1.oof, r2.oof);
        assert_eq!(r1.fold_val_mae, r2.fold_val_mae);
    }

    #[test]
    fn out_of_fold_covers_every_row_once() {
        let inputs = toy_inputs(5, 4, 6, None);
        let (_, report) = cross_validate(&inputs, &toy_schema(), &tiny_cv(7)).unwrap();
        assert_eq!(report.oof.len(), inputs.len() * 2);
        let mut seen = BTreeSet::new();
        for row in &report.oof {
            assert!(seen.insert((row.component_id.clone(), row.target.clone())));
        }
        let metrics = metrics_by_group_target(&report.oof).unwrap();
        assert_eq!(metrics.len(), 4); // 2 groups x 2 targets
    }

    #[test]
    fn ensemble_error_no_worse_than_worst_fold() {
        let inputs = toy_inputs(5, 4, 8, None);
        let (model, _) = cross_validate(&inputs, &toy_schema(), &tiny_cv(9)).unwrap();
        let holdout = toy_inputs(3, 4, 99, None);
        let ens = pooled_mae(&model.predict(&holdout).unwrap()).unwrap();
        let worst = (0..model.fold_count())
            .map(|k| pooled_mae(&model.predict_with_fold(k, &holdout).unwrap()).unwrap())
            .fold(0.0f64, f64::max);
        assert!(ens <= worst + 1e-12, "ensemble {ens} vs worst fold {worst}");
    }

    #[test]
    fn predict_matches_manual_fold_blend() {
        let inputs = toy_inputs(5, 2, 10, None);
        let (model, _) = cross_validate(&inputs, &toy_schema(), &tiny_cv(11)).unwrap();
        let probe = &inputs[..3];
        let combined = model.predict(probe).unwrap();
        let per_fold: Vec<Vec<PredictionRow>> = (0..model.fold_count())
            .map(|k| model.predict_with_fold(k, probe).unwrap())
            .collect();
        for (i, row) in combined.iter().enumerate() {
            let preds: Vec<f64> = per_fold.iter().map(|rows| rows[i].prediction).collect();
            let manual = ensemble(&preds, &model.fold_weights);
            assert!((row.prediction - manual).abs() < 1e-15);
        }
    }

    #[test]
    fn hybrid_beats_the_mean_predictor_on_learnable_targets() {
        let inputs = toy_inputs(6, 8, 12, None);
        let (_, report) = cross_validate(&inputs, &toy_schema(), &tiny_cv(13)).unwrap();
        let model_mae = pooled_mae(&report.oof).unwrap();
        // Mean predictor per (group, target) on the same out-of-fold split.
        let mut mean_rows = report.oof.clone();
        for row in &mut mean_rows {
            let peers: Vec<f64> = inputs
                .iter()
                .filter(|i| i.group == row.group)
                .map(|i| i.targets[if row.target == "t0" { 0 } else { 1 }])
                .collect();
            row.prediction = peers.iter().sum::<f64>() / peers.len() as f64;
        }
        let mean_mae = pooled_mae(&mean_rows).unwrap();
        assert!(model_mae < 0.7 * mean_mae, "model {model_mae} vs mean {mean_mae}");
    }

    #[test]
    fn missing_ids_are_all_reported() {
        let schema = toy_schema();
        let features: BTreeMap<String, f64> = [("e0".to_string(), 1.0)].into();
        let params: BTreeMap<String, f64> = [("p0".to_string(), 0.1), ("p1".to_string(), 0.2)].into();
        let err = ModelInput::from_named(
            "x", "alpha", "b0", &features, &params, vec![0.0; 512], None, &schema,
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("e1") && err.contains("e2"), "{err}");
        assert!(ModelInput::from_named(
            "x", "gamma", "b0", &features, &params, vec![0.0; 512], None, &schema
        )
        .is_err());
    }

    #[test]
    fn search_evaluates_default_first_and_never_regresses() {
        let inputs = toy_inputs(4, 4, 14, None);
        let cv = CvConfig { folds: 4, ..tiny_cv(15) };
        let space = SearchSpace {
            n_estimators: vec![50, 100],
            max_depth: vec![2, 3, 4],
            learning_rate: vec![0.05, 0.1, 0.3],
            ..SearchSpace::default()
        };
        let (_, single) = search_hyperparameters(&inputs, &toy_schema(), &cv, &space, 1, 1).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].config, cv.gbt);

        let (best, trials) = search_hyperparameters(&inputs, &toy_schema(), &cv, &space, 4, 1).unwrap();
        let best_obj = trials.iter().map(|t| t.objective).fold(f64::INFINITY, f64::min);
        assert!(best_obj <= trials[0].objective);
        let chosen = trials.iter().find(|t| t.config == best).unwrap();
        assert_eq!(chosen.objective, best_obj);

        let (_, again) = search_hyperparameters(&inputs, &toy_schema(), &cv, &space, 4, 1).unwrap();
        let configs: Vec<GbtConfig> = trials.iter().map(|t| t.config).collect();
        let configs2: Vec<GbtConfig> = again.iter().map(|t| t.config).collect();
        assert_eq!(configs, configs2);
    }

    #[test]
    fn model_roundtrips_through_disk() {
        let inputs = toy_inputs(4, 2, 16, None);
        let cv = CvConfig { folds: 4, ..tiny_cv(17) };
        let (model, _) = cross_validate(&inputs, &toy_schema(), &cv).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(model.fold_weights, loaded.fold_weights);
        assert_eq!(model.predict(&inputs).unwrap(), loaded.predict(&inputs).unwrap());

        let tampered = fs::read_to_string(&path).unwrap().replace("\"version\":1", "\"version\":9");
        fs::write(&path, tampered).unwrap();
        assert!(matches!(load_model(&path), Err(Error::SchemaMismatch(_))));
    }
}
