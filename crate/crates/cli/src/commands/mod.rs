pub mod eval;
pub mod ingest;
pub mod pca;
pub mod train;

use std::fs;
use std::path::Path;

use chestnet::dataset::{load_image, locate_image, parse_metadata, SampleRecord};
use chestnet::models::Task;
use chestnet::trainer::LabeledSet;

use crate::error::{with_path, CliError, CliResult};

pub const IMAGES_DIR: &str = "images";
pub const SPLITS: [&str; 3] = ["train", "val", "test"];

pub fn create_dir(dir: &Path) -> CliResult<()> {
    with_path(fs::create_dir_all(dir), dir)
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    with_path(fs::write(path, contents), path)
}

/// Reads and parses a metadata or manifest CSV; a missing file is missing
/// data, a malformed one a usage error.
pub fn read_records(path: &Path) -> CliResult<Vec<SampleRecord>> {
    if !path.is_file() {
        return Err(CliError::missing(format!("{} not found", path.display())));
    }
    let text = with_path(fs::read_to_string(path), path)?;
    parse_metadata(&text).map_err(|e| {
        let mut err = CliError::from(e);
        err.message = format!("{}: {}", path.display(), err.message);
        err
    })
}

/// Loads the ingested images of `records` from `images_dir` with targets
/// for `task`.
pub fn labeled_set(records: &[SampleRecord], images_dir: &Path, task: Task) -> CliResult<LabeledSet> {
    Ok(LabeledSet::from_records(records, task, |r| load_image(&locate_image(images_dir, &r.image_id)?))?)
}
