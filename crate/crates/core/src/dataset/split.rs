//! Patient-level train/validation/test splitting and seeded subsampling.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metadata::{DatasetManifest, SampleRecord};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.7,
            val: 0.15,
            test: 0.15,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let f = [self.train, self.val, self.test];
        if f.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "split fractions must be non-negative and sum to 1, got {f:?}"
            )));
        }
        Ok(())
    }

    /// Patients per split: floors of the targets, remainders handed out by
    /// largest fractional part (earlier split wins ties).
    fn allocate(&self, patients: usize) -> [usize; 3] {
        let targets = [self.train, self.val, self.test].map(|f| f * patients as f64);
        let mut counts = targets.map(|t| (t + 1e-9).floor() as usize);
        let mut left = patients - counts.iter().sum::<usize>().min(patients);
        let mut order = [0, 1, 2];
        order.sort_by(|&a, &b| {
            let ra = targets[a] - counts[a] as f64;
            let rb = targets[b] - counts[b] as f64;
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        for &i in order.iter().cycle() {
            if left == 0 {
                break;
            }
            counts[i] += 1;
            left -= 1;
        }
        counts
    }
}

/// The three manifests produced by [`patient_split`].
#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: DatasetManifest,
    pub val: DatasetManifest,
    pub test: DatasetManifest,
}

/// Shuffles patients with a seeded permutation and assigns them, in that
/// order, to train, validation and test. All images of a patient land in
/// the same split; record order inside a split follows the input.
pub fn patient_split(manifest: &DatasetManifest, spec: &SplitSpec) -> Result<Splits> {
    spec.validate()?;
    if manifest.is_empty() {
        return Err(Error::invalid("cannot split an empty manifest"));
    }
    let mut by_patient: BTreeMap<&str, Vec<&SampleRecord>> = BTreeMap::new();
    for r in manifest.records() {
        by_patient.entry(r.patient_id.as_str()).or_default().push(r);
    }
    let mut patients: Vec<&str> = by_patient.keys().copied().collect();
    patients.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));

    let [n_train, n_val, _] = spec.allocate(patients.len());
    let assignment: BTreeMap<&str, usize> = patients
        .iter()
        .enumerate()
        .map(|(i, &p)| (p, if i < n_train { 0 } else if i < n_train + n_val { 1 } else { 2 }))
        .collect();

    let mut parts: [Vec<SampleRecord>; 3] = Default::default();
    for r in manifest.records() {
        parts[assignment[r.patient_id.as_str()]].push(r.clone());
    }
    let [train, val, test] = parts.map(DatasetManifest::new);
    Ok(Splits { train, val, test })
}

/// Seeded uniform subsample of `n` records (all of them when `n` is at
/// least the record count), returned in image-id order.
pub fn subsample(records: &[SampleRecord], n: usize, seed: u64) -> Vec<SampleRecord> {
    let mut sorted: Vec<&SampleRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    sorted.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut picked: Vec<SampleRecord> = sorted.into_iter().take(n).cloned().collect();
    picked.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    picked
}
