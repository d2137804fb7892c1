//! Dataset lookup.
//!
//! `dataset` is either a registered name or a path:
//!
//! * `cifar10-subset`: `$DCTAUG_DATA_DIR/cifar10-subset`, falling back to
//!   `./data/cifar10-subset` (built by `scripts/fetch_cifar10_subset.py`)
//! * a directory holding `<split>.bin` (CIFAR records) or `<split>/` (an image
//!   tree); `train` and `test` are the split names
//! * a single CIFAR `.bin`, IDX image file or image tree used as-is

use std::path::{Path, PathBuf};

use dctaug::dataset::{self, DatasetFormat, DatasetHandle, ImageDecoder, LabeledSet};
use dctaug::Real;

use crate::error::{CliError, CliResult};

pub const DATA_DIR_ENV: &str = "DCTAUG_DATA_DIR";
pub const CIFAR10_SUBSET: &str = "cifar10-subset";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

fn registered(name: &str) -> Option<PathBuf> {
    if name != CIFAR10_SUBSET {
        return None;
    }
    let root = std::env::var_os(DATA_DIR_ENV).map_or_else(|| PathBuf::from("data"), PathBuf::from);
    Some(root.join(CIFAR10_SUBSET))
}

/// Resolves `dataset` and `split` to a concrete file or directory and format.
pub fn locate(dataset: &str, split: Split, format: Option<&str>) -> CliResult<(PathBuf, DatasetFormat)> {
    let base = match registered(dataset) {
        Some(dir) => {
            if !dir.is_dir() {
                return Err(CliError::data(format!(
                    "dataset '{dataset}' not found at {}; run scripts/fetch_cifar10_subset.py or set {DATA_DIR_ENV}",
                    dir.display()
                )));
            }
            dir
        }
        None => PathBuf::from(dataset),
    };
    if !base.exists() {
        return Err(CliError::data(format!(
            "dataset path {} does not exist",
            base.display()
        )));
    }
    let explicit = format.map(str::parse::<DatasetFormat>).transpose()?;
    let path = if base.is_dir() {
        let bin = base.join(format!("{}.bin", split.name()));
        let tree = base.join(split.name());
        if bin.is_file() {
            bin
        } else if tree.is_dir() {
            tree
        } else {
            base
        }
    } else {
        base
    };
    let format = match explicit {
        Some(f) => f,
        None => dataset::detect_format(&path)?,
    };
    Ok((path, format))
}

pub fn load(dataset: &str, split: Split, format: Option<&str>) -> CliResult<(LabeledSet<Real>, DatasetHandle)> {
    let (path, format) = locate(dataset, split, format)?;
    let set = dataset::load::<Real>(&path, format)
        .map_err(|e| CliError::from(e).into_data(&format!("cannot load {}", path.display())))?;
    let handle = DatasetHandle::describe(format, &path, &set);
    Ok((set, handle))
}

/// Reads either a single PNM image or a dataset. Single images get label 0
/// and one placeholder class.
pub fn load_images(path: &Path, format: Option<&str>) -> CliResult<(LabeledSet<Real>, bool)> {
    if path.is_file() && dataset::PnmDecoder.accepts(path) {
        let img =
            dataset::read_pnm::<Real>(path).map_err(|e| CliError::from(e).into_data(&path.display().to_string()))?;
        let set = LabeledSet::new(vec![img], vec![0], vec!["image".into()])?;
        return Ok((set, true));
    }
    let explicit = format.map(str::parse::<DatasetFormat>).transpose()?;
    let format = match explicit {
        Some(f) => f,
        None => dataset::detect_format(path).map_err(|e| CliError::from(e).into_data("unsupported input"))?,
    };
    let set = dataset::load::<Real>(path, format)
        .map_err(|e| CliError::from(e).into_data(&format!("cannot load {}", path.display())))?;
    Ok((set, false))
}
