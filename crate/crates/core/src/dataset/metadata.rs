//! Metadata CSV ingestion.
//!
//! Accepts the wide layout (one row per image, findings pipe-separated) and
//! the long layout (one row per image and finding). Rows are merged by
//! image id so every image ends up as a single [`SampleRecord`].

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::labels::{label_index, LabelVector, NO_FINDING, NUM_LABELS};
use crate::error::{Error, Result};

pub const COL_IMAGE: &str = "Image Index";
pub const COL_LABELS: &str = "Finding Labels";
pub const COL_PATIENT: &str = "Patient ID";
pub const COL_AGE: &str = "Patient Age";
pub const COL_SEX: &str = "Patient Gender";
pub const COL_VIEW: &str = "View Position";
pub const COL_SPLIT: &str = "Split";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sex {
    M,
    F,
    Unknown,
}

impl Sex {
    fn parse(s: &str) -> Self {
        match s.trim() {
            "M" | "m" => Sex::M,
            "F" | "f" => Sex::F,
            _ => Sex::Unknown,
        }
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sex::M => "M",
            Sex::F => "F",
            Sex::Unknown => "unknown",
        })
    }
}

/// Acquisition orientation: posterior-anterior or anterior-posterior.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ViewPosition {
    PA,
    AP,
    Unknown,
}

impl ViewPosition {
    fn parse(s: &str) -> Self {
        match s.trim() {
            "PA" => ViewPosition::PA,
            "AP" => ViewPosition::AP,
            _ => ViewPosition::Unknown,
        }
    }
}

impl fmt::Display for ViewPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViewPosition::PA => "PA",
            ViewPosition::AP => "AP",
            ViewPosition::Unknown => "unknown",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SampleRecord {
    pub image_id: String,
    pub patient_id: String,
    pub labels: LabelVector,
    pub age: Option<u32>,
    pub sex: Sex,
    pub view: ViewPosition,
}

/// Records plus per-class positive counts `n_i` and the total `N`.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    records: Vec<SampleRecord>,
    label_counts: [usize; NUM_LABELS],
}

impl DatasetManifest {
    pub fn new(records: Vec<SampleRecord>) -> Self {
        let mut label_counts = [0; NUM_LABELS];
        for r in &records {
            for (count, &bit) in label_counts.iter_mut().zip(r.labels.bits()) {
                *count += usize::from(bit);
            }
        }
        DatasetManifest { records, label_counts }
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn label_counts(&self) -> &[usize; NUM_LABELS] {
        &self.label_counts
    }

    pub fn total(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Counts of the derived binary classes `[No Finding, Disease Present]`.
    pub fn binary_counts(&self) -> [usize; 2] {
        let positive = self.records.iter().filter(|r| !r.labels.is_no_finding()).count();
        [self.records.len() - positive, positive]
    }
}

struct Columns {
    image: usize,
    labels: usize,
    patient: usize,
    age: Option<usize>,
    sex: Option<usize>,
    view: Option<usize>,
}

impl Columns {
    fn locate(headers: &csv::StringRecord) -> Result<Self> {
        let find = |name: &str| headers.iter().position(|h| h.trim() == name);
        let required = |name: &str| find(name).ok_or_else(|| Error::MissingColumn(name.to_string()));
        Ok(Columns {
            image: required(COL_IMAGE)?,
            labels: required(COL_LABELS)?,
            patient: required(COL_PATIENT)?,
            age: find(COL_AGE),
            sex: find(COL_SEX),
            view: find(COL_VIEW),
        })
    }
}

struct Pending {
    record: SampleRecord,
    said_no_finding: bool,
    first_line: usize,
}

fn parse_age(raw: &str, line: usize) -> Result<Option<u32>> {
    // ChestX-ray14 releases encode ages both as `58` and as `058Y`.
    let digits = raw.trim().trim_end_matches(['Y', 'y']);
    if digits.is_empty() {
        return Ok(None);
    }
    digits.parse().map(Some).map_err(|_| Error::Metadata {
        line,
        message: format!("invalid age `{raw}`"),
    })
}

/// Parses metadata CSV text into one record per image, sorted by image id.
pub fn parse_metadata(text: &str) -> Result<Vec<SampleRecord>> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(text.as_bytes());
    let cols = Columns::locate(reader.headers()?)?;
    let mut merged: BTreeMap<String, Pending> = BTreeMap::new();

    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| row.get(i).unwrap_or("").trim();
        let optional = |i: Option<usize>| i.map_or("", field);
        let meta_err = |message: String| Error::Metadata { line, message };

        let image_id = field(cols.image);
        let patient_id = field(cols.patient);
        if image_id.is_empty() {
            return Err(meta_err("empty image id".into()));
        }
        if patient_id.is_empty() {
            return Err(meta_err(format!("empty patient id for image `{image_id}`")));
        }

        let mut labels = LabelVector::none();
        let mut said_no_finding = false;
        for name in field(cols.labels).split('|').map(str::trim) {
            if name == NO_FINDING {
                said_no_finding = true;
            } else if let Some(i) = label_index(name) {
                labels.set(i);
            } else {
                return Err(meta_err(format!("unknown disease label `{name}`")));
            }
        }

        let age = parse_age(optional(cols.age), line)?;
        let sex = Sex::parse(optional(cols.sex));
        let view = ViewPosition::parse(optional(cols.view));

        match merged.get_mut(image_id) {
            Some(p) => {
                if p.record.patient_id != patient_id {
                    return Err(meta_err(format!(
                        "image `{image_id}` has patient `{patient_id}` here but `{}` on line {}",
                        p.record.patient_id, p.first_line
                    )));
                }
                p.record.labels = p.record.labels.union(&labels);
                p.said_no_finding |= said_no_finding;
                p.record.age = p.record.age.or(age);
                if p.record.sex == Sex::Unknown {
                    p.record.sex = sex;
                }
                if p.record.view == ViewPosition::Unknown {
                    p.record.view = view;
                }
            }
            None => {
                merged.insert(
                    image_id.to_string(),
                    Pending {
                        record: SampleRecord {
                            image_id: image_id.to_string(),
                            patient_id: patient_id.to_string(),
                            labels,
                            age,
                            sex,
                            view,
                        },
                        said_no_finding,
                        first_line: line,
                    },
                );
            }
        }
    }

    merged
        .into_values()
        .map(|p| {
            if p.said_no_finding && !p.record.labels.is_no_finding() {
                Err(Error::Metadata {
                    line: p.first_line,
                    message: format!("image `{}` is marked both `{NO_FINDING}` and diseased", p.record.image_id),
                })
            } else {
                Ok(p.record)
            }
        })
        .collect()
}

/// Writes records in the wide layout, with a `Split` column when `split`
/// is given.
pub fn write_manifest_csv<W: Write>(records: &[SampleRecord], split: Option<&str>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![COL_IMAGE, COL_LABELS, COL_PATIENT, COL_AGE, COL_SEX, COL_VIEW];
    if split.is_some() {
        header.push(COL_SPLIT);
    }
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.image_id.clone(),
            r.labels.to_string(),
            r.patient_id.clone(),
            r.age.map(|a| a.to_string()).unwrap_or_default(),
            match r.sex {
                Sex::Unknown => String::new(),
                s => s.to_string(),
            },
            match r.view {
                ViewPosition::Unknown => String::new(),
                v => v.to_string(),
            },
        ];
        if let Some(s) = split {
            row.push(s.to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
