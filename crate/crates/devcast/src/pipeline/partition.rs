//! Batch-respecting dataset partitioning. The atomic unit is the
//! manufacturing batch: every component of a batch lands in the same
//! partition, always. Batches are stratified by their component-type
//! makeup, shuffled within each stratum under the seed, and packed
//! greedily toward the target fractions, so each partition's realized
//! count stays within one batch of its target per stratum (and within one
//! component when batches are single components).

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::pipeline::{mix, STREAM_SPLIT};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    pub fn from_name(name: &str) -> Result<Split> {
        Split::ALL
            .into_iter()
            .find(|s| s.name() == name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown split '{name}'")))
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The slice of a dataset manifest that partitioning needs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub component_id: String,
    pub part_type: String,
    pub batch_id: String,
}

/// A committed train/validation/test assignment at batch granularity.
#[derive(Debug, Clone)]
pub struct PartitionPlan {
    pub fractions: [f64; 3],
    pub seed: u64,
    /// component_id → split; iteration order is id order.
    pub assignment: BTreeMap<String, Split>,
    /// Best-effort packing notes, e.g. a batch larger than its target.
    pub warnings: Vec<String>,
}

impl PartitionPlan {
    pub fn split_of(&self, component_id: &str) -> Option<Split> {
        self.assignment.get(component_id).copied()
    }

    /// Component ids of one split, in id order.
    pub fn ids_in(&self, split: Split) -> Vec<String> {
        self.assignment
            .iter()
            .filter(|(_, s)| **s == split)
            .map(|(id, _)| id.clone())
            .collect()
    }

    /// Realized component counts in [train, validation, test] order.
    pub fn counts(&self) -> [usize; 3] {
        let mut out = [0usize; 3];
        for s in self.assignment.values() {
            out[*s as usize] += 1;
        }
        out
    }

    pub fn csv_string(&self) -> String {
        let mut out = String::from("component_id,split\n");
        for (id, split) in &self.assignment {
            out.push_str(id);
            out.push(',');
            out.push_str(split.name());
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.csv_string()).map_err(|e| Error::io(path, e))
    }

    /// Reads an assignment written by [`PartitionPlan::save`]. Fractions
    /// and seed are not persisted; the loaded plan carries the assignment
    /// only.
    pub fn load(path: &Path) -> Result<PartitionPlan> {
        let data = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut assignment = BTreeMap::new();
        for (i, line) in data.lines().enumerate() {
            if i == 0 {
                if line != "component_id,split" {
                    return Err(Error::parse(path, 1, "expected header 'component_id,split'"));
                }
                continue;
            }
            let (id, split) = line
                .split_once(',')
                .ok_or_else(|| Error::parse(path, i + 1, "expected 'id,split'"))?;
            let split =
                Split::from_name(split).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
            if assignment.insert(id.to_string(), split).is_some() {
                return Err(Error::parse(path, i + 1, format!("duplicate component '{id}'")));
            }
        }
        if assignment.is_empty() {
            return Err(Error::Empty(format!("partition file {}", path.display())));
        }
        Ok(PartitionPlan { fractions: [0.0; 3], seed: 0, assignment, warnings: Vec::new() })
    }
}

fn validate_fractions(fractions: &[f64; 3]) -> Result<()> {
    for f in fractions {
        if !(*f >= 0.0) || !f.is_finite() {
            return Err(Error::InvalidArgument(format!("partition fraction {f} must be ≥ 0")));
        }
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("partition fractions sum to {sum}, want 1")));
    }
    Ok(())
}

/// One batch, grouped for packing.
struct Batch<'a> {
    id: &'a str,
    members: Vec<&'a str>,
}

/// Splits a manifest 70/15/15 (or as given) at batch granularity.
///
/// Batches are grouped into strata by their component-type makeup, each
/// stratum's batch order is shuffled under the seed, and every batch goes
/// to the partition with the largest remaining deficit against its target
/// (ties resolved train, validation, test). Since a batch is only ever
/// placed in a partition still under target, no partition overshoots its
/// per-stratum target by a full batch. A batch bigger than its own target
/// is a warning, not an error: it is packed where it distorts least.
pub fn make_partition(
    manifest: &[ManifestRow],
    fractions: [f64; 3],
    seed: u64,
) -> Result<PartitionPlan> {
    validate_fractions(&fractions)?;
    if manifest.is_empty() {
        return Err(Error::Empty("partition manifest".into()));
    }
    let mut seen = BTreeMap::new();
    for row in manifest {
        if let Some(prev) = seen.insert(row.component_id.as_str(), row.batch_id.as_str()) {
            return Err(Error::InvalidArgument(format!(
                "component '{}' listed twice (batches '{prev}' and '{}')",
                row.component_id, row.batch_id
            )));
        }
    }

    // Batches in first-appearance order, then strata keyed by the sorted
    // multiset of member types, so e.g. all-plate batches spread over the
    // partitions independently of mixed batches.
    let mut batch_order: Vec<&str> = Vec::new();
    let mut members: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    let mut types: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for row in manifest {
        let entry = members.entry(row.batch_id.as_str()).or_insert_with(|| {
            batch_order.push(row.batch_id.as_str());
            Vec::new()
        });
        entry.push(row.component_id.as_str());
        types.entry(row.batch_id.as_str()).or_default().push(row.part_type.as_str());
    }
    let mut strata: BTreeMap<String, Vec<Batch>> = BTreeMap::new();
    for id in batch_order {
        let mut sig = types.remove(id).unwrap();
        sig.sort_unstable();
        let key = sig.join("|");
        strata
            .entry(key)
            .or_default()
            .push(Batch { id, members: members.remove(id).unwrap() });
    }

    let mut assignment = BTreeMap::new();
    let mut warnings = Vec::new();
    for (si, (_, mut batches)) in strata.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, si as u64, STREAM_SPLIT));
        batches.shuffle(&mut rng);
        let total: usize = batches.iter().map(|b| b.members.len()).sum();
        let targets: Vec<f64> = fractions.iter().map(|f| f * total as f64).collect();
        let mut assigned = [0.0f64; 3];
        for batch in batches {
            let dest = (0..3)
                .max_by(|&a, &b| {
                    let da = targets[a] - assigned[a];
                    let db = targets[b] - assigned[b];
                    da.partial_cmp(&db).unwrap().then(b.cmp(&a))
                })
                .unwrap();
            let size = batch.members.len() as f64;
            if size > targets[dest] + 1e-9 {
                warnings.push(format!(
                    "batch '{}' ({} components) exceeds the {} target of {:.1}; packed best-effort",
                    batch.id,
                    batch.members.len(),
                    Split::ALL[dest].name(),
                    targets[dest]
                ));
            }
            assigned[dest] += size;
            for id in batch.members {
                assignment.insert(id.to_string(), Split::ALL[dest]);
            }
        }
    }
    Ok(PartitionPlan { fractions, seed, assignment, warnings })
}
