//! Metadata ingestion, labels, patient-level splits, image I/O and the NPY
//! array format.

mod demographics;
mod image;
mod labels;
mod metadata;
pub mod npy;
mod split;

pub use demographics::{summarize_demographics, DemographicsSummary};
pub use image::{decode_pgm, encode_pgm, load_image, locate_image, resize_image, DEFAULT_IMAGE_SIZE};
pub use labels::{
    derive_binary_label, label_index, LabelVector, BINARY_CLASS_NAMES, LABEL_NAMES, NO_FINDING, NUM_LABELS,
};
pub use metadata::{
    parse_metadata, write_manifest_csv, DatasetManifest, SampleRecord, Sex, ViewPosition, COL_SPLIT,
};
pub use npy::{read_npy, write_npy, Dtype};
pub use split::{patient_split, subsample, SplitSpec, Splits};
