//! Process parameters for synthetic components: physical ranges, seeded
//! sampling with batch-level drift, and the canonical name/value ordering
//! used by manifests and model inputs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Canonical parameter order for CSV columns and model inputs.
pub const PARAM_NAMES: [&str; 9] = [
    "cutting_speed",
    "feed_rate",
    "depth_of_cut",
    "tool_wear_index",
    "coolant_flow",
    "coolant_concentration",
    "clamping_force",
    "material_hardness",
    "ambient_temperature",
];

/// Inclusive physical sampling ranges, in PARAM_NAMES order.
pub const PARAM_RANGES: [(f64, f64); 9] = [
    (80.0, 240.0), // m/min
    (0.05, 0.40),  // mm/rev
    (0.2, 3.0),    // mm
    (0.0, 1.0),    // dimensionless
    (2.0, 12.0),   // L/min
    (4.0, 10.0),   // %
    (1.0, 8.0),    // kN
    (150.0, 300.0), // HB
    (18.0, 26.0),  // °C
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcessParameters {
    pub cutting_speed: f64,
    pub feed_rate: f64,
    pub depth_of_cut: f64,
    pub tool_wear_index: f64,
    pub coolant_flow: f64,
    pub coolant_concentration: f64,
    pub clamping_force: f64,
    pub material_hardness: f64,
    pub ambient_temperature: f64,
}

impl ProcessParameters {
    pub fn values(&self) -> [f64; 9] {
        [
            self.cutting_speed,
            self.feed_rate,
            self.depth_of_cut,
            self.tool_wear_index,
            self.coolant_flow,
            self.coolant_concentration,
            self.clamping_force,
            self.material_hardness,
            self.ambient_temperature,
        ]
    }

    pub fn from_values(v: [f64; 9]) -> Self {
        ProcessParameters {
            cutting_speed: v[0],
            feed_rate: v[1],
            depth_of_cut: v[2],
            tool_wear_index: v[3],
            coolant_flow: v[4],
            coolant_concentration: v[5],
            clamping_force: v[6],
            material_hardness: v[7],
            ambient_temperature: v[8],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, v) in self.values().iter().enumerate() {
            let (lo, hi) = PARAM_RANGES[i];
            if !v.is_finite() || *v < lo || *v > hi {
                return Err(Error::InvalidArgument(format!(
                    "{} = {v} outside [{lo}, {hi}]",
                    PARAM_NAMES[i]
                )));
            }
        }
        Ok(())
    }

    /// Range midpoints; the reference point batch drift is applied around.
    pub fn nominal() -> Self {
        let mid: Vec<f64> = PARAM_RANGES.iter().map(|(lo, hi)| (lo + hi) / 2.0).collect();
        Self::from_values(mid.try_into().unwrap())
    }
}

/// Batch drift model: each batch gets an offset of up to
/// `drift_scale`·half-range per parameter; parts scatter around the batch
/// center by `within_scale`·half-range. Values clip to the physical range.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ParameterDrift {
    pub drift_scale: f64,
    pub within_scale: f64,
}

impl Default for ParameterDrift {
    fn default() -> Self {
        // Between-batch variance ≈ 2.6× within-batch at these scales, so
        // batch structure is visible but does not pin parts to corners.
        ParameterDrift { drift_scale: 0.45, within_scale: 0.50 }
    }
}

/// Batch center offsets in units of half-range, one entry per parameter.
pub fn sample_batch_offsets<R: Rng>(drift: &ParameterDrift, rng: &mut R) -> [f64; 9] {
    let mut out = [0.0; 9];
    for o in out.iter_mut() {
        *o = rng.gen_range(-drift.drift_scale..=drift.drift_scale);
    }
    out
}

/// One part's parameters given its batch offsets.
pub fn sample_parameters<R: Rng>(
    drift: &ParameterDrift,
    batch_offsets: &[f64; 9],
    rng: &mut R,
) -> ProcessParameters {
    let mut v = [0.0; 9];
    for i in 0..9 {
        let (lo, hi) = PARAM_RANGES[i];
        let mid = (lo + hi) / 2.0;
        let half = (hi - lo) / 2.0;
        let x = mid
            + batch_offsets[i] * half
            + rng.gen_range(-drift.within_scale..=drift.within_scale) * half;
        v[i] = x.clamp(lo, hi);
    }
    ProcessParameters::from_values(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn values_round_trip_in_canonical_order() {
        let p = ProcessParameters::nominal();
        assert_eq!(ProcessParameters::from_values(p.values()), p);
        assert!((p.cutting_speed - 160.0).abs() < 1e-12);
        assert!((p.ambient_temperature - 22.0).abs() < 1e-12);
        p.validate().unwrap();
    }

    #[test]
    fn validate_rejects_out_of_range() {
        let mut p = ProcessParameters::nominal();
        p.tool_wear_index = 1.2;
        assert!(p.validate().is_err());
        p.tool_wear_index = 0.5;
        p.cutting_speed = 10.0;
        assert!(matches!(p.validate(), Err(Error::InvalidArgument(m)) if m.contains("cutting_speed")));
    }

    #[test]
    fn sampled_parameters_stay_in_range() {
        let drift = ParameterDrift::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let offsets = sample_batch_offsets(&drift, &mut rng);
            for _ in 0..10 {
                sample_parameters(&drift, &offsets, &mut rng).validate().unwrap();
            }
        }
    }

    #[test]
    fn between_batch_variance_exceeds_within() {
        // One-way F statistic on cutting_speed over 10 batches × 6 parts.
        let mut pass = 0;
        for seed in 0..40u64 {
            let drift = ParameterDrift::default();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut groups: Vec<Vec<f64>> = Vec::new();
            for _ in 0..10 {
                let offsets = sample_batch_offsets(&drift, &mut rng);
                groups.push(
                    (0..6)
                        .map(|_| sample_parameters(&drift, &offsets, &mut rng).cutting_speed)
                        .collect(),
                );
            }
            let all: Vec<f64> = groups.iter().flatten().copied().collect();
            let grand = all.iter().sum::<f64>() / all.len() as f64;
            let mut ssb = 0.0;
            let mut ssw = 0.0;
            for g in &groups {
                let m = g.iter().sum::<f64>() / g.len() as f64;
                ssb += g.len() as f64 * (m - grand).powi(2);
                ssw += g.iter().map(|x| (x - m).powi(2)).sum::<f64>();
            }
            let msb = ssb / (groups.len() - 1) as f64;
            let msw = ssw / (all.len() - groups.len()) as f64;
            if msb / msw > 1.0 {
                pass += 1;
            }
        }
        assert!(pass >= 38, "F > 1 in only {pass}/40 seeds");
    }
}
