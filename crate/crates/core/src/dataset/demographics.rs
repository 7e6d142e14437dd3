use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::labels::{LABEL_NAMES, NO_FINDING, NUM_LABELS};
use super::metadata::{DatasetManifest, Sex, ViewPosition};

/// Tallies over a manifest: per-label positives, age decades, sex and view.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DemographicsSummary {
    pub total: usize,
    pub label_counts: [usize; NUM_LABELS],
    pub no_finding: usize,
    /// Keyed by decade start (`Some(30)` is 30-39); `None` is unknown.
    pub age_decades: BTreeMap<Option<u32>, usize>,
    pub sex: BTreeMap<Sex, usize>,
    pub view: BTreeMap<ViewPosition, usize>,
}

pub fn summarize_demographics(manifest: &DatasetManifest) -> DemographicsSummary {
    let mut age_decades = BTreeMap::new();
    let mut sex = BTreeMap::new();
    let mut view = BTreeMap::new();
    for r in manifest.records() {
        *age_decades.entry(r.age.map(|a| a / 10 * 10)).or_insert(0) += 1;
        *sex.entry(r.sex).or_insert(0) += 1;
        *view.entry(r.view).or_insert(0) += 1;
    }
    DemographicsSummary {
        total: manifest.total(),
        label_counts: *manifest.label_counts(),
        no_finding: manifest.binary_counts()[0],
        age_decades,
        sex,
        view,
    }
}

fn decade_name(d: Option<u32>) -> String {
    d.map_or_else(|| "unknown".to_string(), |d| format!("{d}-{}", d + 9))
}

impl DemographicsSummary {
    /// `(section, key, count)` rows in a fixed order.
    pub fn rows(&self) -> Vec<(&'static str, String, usize)> {
        let mut rows = vec![("total", "images".to_string(), self.total)];
        for (name, &n) in LABEL_NAMES.iter().zip(&self.label_counts) {
            rows.push(("label", name.to_string(), n));
        }
        rows.push(("label", NO_FINDING.to_string(), self.no_finding));
        rows.extend(self.age_decades.iter().map(|(&d, &n)| ("age", decade_name(d), n)));
        rows.extend(self.sex.iter().map(|(s, &n)| ("sex", s.to_string(), n)));
        rows.extend(self.view.iter().map(|(v, &n)| ("view", v.to_string(), n)));
        rows
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("section,key,count\n");
        for (section, key, n) in self.rows() {
            let _ = writeln!(out, "{section},{key},{n}");
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for (section, key, n) in self.rows() {
            if section != current {
                let _ = writeln!(out, "{}:", section);
                current = section;
            }
            let _ = writeln!(out, "  {key:<20} {n:>8}");
        }
        out
    }
}
