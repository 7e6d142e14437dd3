use std::fmt;

use serde::{Deserialize, Serialize};

pub const NUM_LABELS: usize = 14;

/// The fourteen thoracic findings, in fixed order. "No Finding" is not a
/// member; it is the all-zero [`LabelVector`].
pub const LABEL_NAMES: [&str; NUM_LABELS] = [
    "Atelectasis",
    "Cardiomegaly",
    "Consolidation",
    "Edema",
    "Effusion",
    "Emphysema",
    "Fibrosis",
    "Hernia",
    "Infiltration",
    "Mass",
    "Nodule",
    "Pleural_Thickening",
    "Pneumonia",
    "Pneumothorax",
];

pub const NO_FINDING: &str = "No Finding";

/// Names of the two derived classes used by the binary task.
pub const BINARY_CLASS_NAMES: [&str; 2] = [NO_FINDING, "Disease Present"];

pub fn label_index(name: &str) -> Option<usize> {
    LABEL_NAMES.iter().position(|&n| n == name)
}

/// Multi-hot disease vector aligned with [`LABEL_NAMES`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabelVector([bool; NUM_LABELS]);

impl LabelVector {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn from_bits(bits: [bool; NUM_LABELS]) -> Self {
        LabelVector(bits)
    }

    pub fn from_names<'a>(names: impl IntoIterator<Item = &'a str>) -> Option<Self> {
        let mut v = Self::none();
        for n in names {
            v.set(label_index(n)?);
        }
        Some(v)
    }

    pub fn set(&mut self, index: usize) {
        self.0[index] = true;
    }

    pub fn get(&self, index: usize) -> bool {
        self.0[index]
    }

    pub fn bits(&self) -> &[bool; NUM_LABELS] {
        &self.0
    }

    pub fn union(&self, other: &LabelVector) -> Self {
        let mut out = *self;
        for (a, b) in out.0.iter_mut().zip(other.0) {
            *a |= b;
        }
        out
    }

    pub fn is_no_finding(&self) -> bool {
        !self.0.iter().any(|&b| b)
    }

    /// Entries as `0.0` / `1.0`.
    pub fn as_f64(&self) -> [f64; NUM_LABELS] {
        self.0.map(|b| if b { 1.0 } else { 0.0 })
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        LABEL_NAMES.iter().zip(self.0).filter(|(_, b)| *b).map(|(n, _)| *n)
    }
}

/// Pipe-separated names in label order, or `No Finding`.
impl fmt::Display for LabelVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_no_finding() {
            return f.write_str(NO_FINDING);
        }
        let names: Vec<&str> = self.names().collect();
        f.write_str(&names.join("|"))
    }
}

/// 1 when any disease is present, 0 for "No Finding".
pub fn derive_binary_label(labels: &LabelVector) -> u8 {
    u8::from(!labels.is_no_finding())
}
