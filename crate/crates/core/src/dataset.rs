//! Labelled image sets and the on-disk formats they are read from:
//!
//! * CIFAR binary: records of label byte(s) followed by 3072 planar RGB bytes
//!   (1024 R, 1024 G, 1024 B). CIFAR-10 has one label byte, CIFAR-100 two
//!   (coarse, fine; the fine label is used).
//! * IDX: big-endian magic `00 00 08 ndim`, `ndim` u32 dimensions, then u8
//!   data. Images are `N x H x W` (grey) or `N x H x W x C`; labels are `N`.
//! * Image directory: `root/<class>/<file>.{ppm,pgm}`; classes are the
//!   sub-directory names in sorted order. Other formats plug in through
//!   [`ImageDecoder`].

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::image::ImageTensor;
use crate::scalar::Scalar;

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_PIXELS: usize = 3 * CIFAR_SIDE * CIFAR_SIDE;

pub const CIFAR10_CLASSES: [&str; 10] = [
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
];

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet<T> {
    pub images: Vec<ImageTensor<T>>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl<T: Scalar> LabeledSet<T> {
    pub fn new(images: Vec<ImageTensor<T>>, labels: Vec<usize>, class_names: Vec<String>) -> Result<Self> {
        let set = Self {
            images,
            labels,
            class_names,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.images.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        if self.images.len() != self.labels.len() {
            return Err(Error::Format(format!(
                "{} images but {} labels",
                self.images.len(),
                self.labels.len()
            )));
        }
        let k = self.num_classes();
        if let Some(&label) = self.labels.iter().find(|&&l| l >= k) {
            return Err(Error::LabelOutOfRange { label, classes: k });
        }
        let shape = self.images[0].shape();
        if let Some(i) = self.images.iter().position(|im| im.shape() != shape) {
            return Err(Error::at(
                i,
                Error::ShapeMismatch {
                    expected: format!("{shape:?}"),
                    found: format!("{:?}", self.images[i].shape()),
                },
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// `(channels, height, width)` shared by every image.
    pub fn geometry(&self) -> (usize, usize, usize) {
        self.images[0].shape()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Self::new(
            indices.iter().map(|&i| self.images[i].clone()).collect(),
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.class_names.clone(),
        )
    }

    /// First `per_class` images of every class, in original order.
    pub fn balanced_prefix(&self, per_class: usize) -> Result<(Self, Vec<usize>)> {
        let mut taken = vec![0usize; self.num_classes()];
        let mut indices = Vec::new();
        for (i, &l) in self.labels.iter().enumerate() {
            if taken[l] < per_class {
                taken[l] += 1;
                indices.push(i);
            }
        }
        if let Some(c) = taken.iter().position(|&n| n < per_class) {
            return Err(Error::Format(format!(
                "class {c} has only {} images, {per_class} requested",
                taken[c]
            )));
        }
        Ok((self.subset(&indices)?, indices))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetFormat {
    CifarBinary,
    Cifar100Binary,
    Idx,
    ImageDirectory,
}

impl fmt::Display for DatasetFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetFormat::CifarBinary => "cifar-binary",
            DatasetFormat::Cifar100Binary => "cifar100-binary",
            DatasetFormat::Idx => "idx",
            DatasetFormat::ImageDirectory => "image-directory",
        })
    }
}

impl FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cifar-binary" | "cifar" | "cifar10" => Ok(DatasetFormat::CifarBinary),
            "cifar100-binary" | "cifar100" => Ok(DatasetFormat::Cifar100Binary),
            "idx" => Ok(DatasetFormat::Idx),
            "image-directory" | "dir" => Ok(DatasetFormat::ImageDirectory),
            _ => Err(invalid(format!("unknown dataset format '{s}'"))),
        }
    }
}

/// Where a dataset came from and what it looks like.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHandle {
    pub format: DatasetFormat,
    pub path: PathBuf,
    pub class_names: Vec<String>,
    /// `(channels, height, width)`
    pub geometry: (usize, usize, usize),
    pub len: usize,
}

impl DatasetHandle {
    pub fn describe<T: Scalar>(format: DatasetFormat, path: &Path, set: &LabeledSet<T>) -> Self {
        Self {
            format,
            path: path.to_path_buf(),
            class_names: set.class_names.clone(),
            geometry: set.geometry(),
            len: set.len(),
        }
    }
}

/// Guesses the format from the path: directories are image trees, `.bin`
/// files CIFAR records, anything mentioning `idx` an IDX image file.
pub fn detect_format(path: &Path) -> Result<DatasetFormat> {
    if path.is_dir() {
        return Ok(DatasetFormat::ImageDirectory);
    }
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    if name.ends_with(".bin") {
        Ok(DatasetFormat::CifarBinary)
    } else if name.contains("idx") {
        Ok(DatasetFormat::Idx)
    } else {
        Err(invalid(format!(
            "cannot infer the dataset format of {}; pass it explicitly",
            path.display()
        )))
    }
}

/// Loads any supported format. IDX labels are looked up next to the image
/// file (`*-images-idx3-ubyte` -> `*-labels-idx1-ubyte`).
pub fn load<T: Scalar>(path: &Path, format: DatasetFormat) -> Result<LabeledSet<T>> {
    match format {
        DatasetFormat::CifarBinary => read_cifar(path, 1),
        DatasetFormat::Cifar100Binary => read_cifar(path, 2),
        DatasetFormat::Idx => read_idx(path, &idx_labels_path(path)?),
        DatasetFormat::ImageDirectory => read_image_dir(path, &[&PnmDecoder]),
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub fn parse_cifar<T: Scalar>(bytes: &[u8], label_bytes: usize) -> Result<LabeledSet<T>> {
    let record = label_bytes + CIFAR_PIXELS;
    if bytes.is_empty() || !bytes.len().is_multiple_of(record) {
        return Err(Error::Format(format!(
            "CIFAR data length {} is not a positive multiple of the {record}-byte record",
            bytes.len()
        )));
    }
    let mut images = Vec::with_capacity(bytes.len() / record);
    let mut labels = Vec::with_capacity(bytes.len() / record);
    for rec in bytes.chunks_exact(record) {
        labels.push(rec[label_bytes - 1] as usize);
        images.push(ImageTensor::from_planar_u8(
            3,
            CIFAR_SIDE,
            CIFAR_SIDE,
            &rec[label_bytes..],
        )?);
    }
    let class_names = if label_bytes == 1 {
        CIFAR10_CLASSES.iter().map(|s| s.to_string()).collect()
    } else {
        (0..100).map(|i| format!("class{i:02}")).collect()
    };
    LabeledSet::new(images, labels, class_names)
}

pub fn read_cifar<T: Scalar>(path: &Path, label_bytes: usize) -> Result<LabeledSet<T>> {
    parse_cifar(&read_file(path)?, label_bytes)
}

/// Serialises a CIFAR-10-shaped set (3x32x32, < 256 classes) as binary records.
pub fn cifar_bytes<T: Scalar>(set: &LabeledSet<T>) -> Result<Vec<u8>> {
    if set.geometry() != (3, CIFAR_SIDE, CIFAR_SIDE) {
        return Err(invalid(format!(
            "CIFAR records need 3x32x32 images, got {:?}",
            set.geometry()
        )));
    }
    let mut out = Vec::with_capacity(set.len() * (1 + CIFAR_PIXELS));
    for (img, &label) in set.images.iter().zip(&set.labels) {
        out.push(u8::try_from(label).map_err(|_| invalid("label does not fit in one byte"))?);
        out.extend(
            img.data()
                .iter()
                .map(|v| v.to_f64_lossy().round().clamp(0.0, 255.0) as u8),
        );
    }
    Ok(out)
}

pub fn write_cifar<T: Scalar>(set: &LabeledSet<T>, path: &Path) -> Result<()> {
    fs::write(path, cifar_bytes(set)?)?;
    Ok(())
}

fn idx_labels_path(images: &Path) -> Result<PathBuf> {
    let name = images
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| invalid("IDX path has no file name"))?;
    let labels = name.replace("images", "labels").replace("idx3", "idx1");
    if labels == name {
        return Err(invalid(format!("cannot derive the IDX label file name from {name}")));
    }
    Ok(images.with_file_name(labels))
}

fn parse_idx_header(bytes: &[u8]) -> Result<(Vec<usize>, &[u8])> {
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::Format("bad IDX magic".into()));
    }
    if bytes[2] != 0x08 {
        return Err(Error::Format(format!(
            "unsupported IDX element type 0x{:02x}",
            bytes[2]
        )));
    }
    let ndim = bytes[3] as usize;
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(Error::Format("truncated IDX header".into()));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let body = &bytes[header..];
    if body.len() != dims.iter().product::<usize>() {
        return Err(Error::Format(format!(
            "IDX body has {} bytes, dimensions {dims:?} need {}",
            body.len(),
            dims.iter().product::<usize>()
        )));
    }
    Ok((dims, body))
}

pub fn parse_idx<T: Scalar>(image_bytes: &[u8], label_bytes: &[u8]) -> Result<LabeledSet<T>> {
    let (dims, body) = parse_idx_header(image_bytes)?;
    let (n, h, w, c) = match dims[..] {
        [n, h, w] => (n, h, w, 1),
        [n, h, w, c] => (n, h, w, c),
        _ => {
            return Err(Error::Format(format!(
                "IDX images must have 3 or 4 dimensions, got {dims:?}"
            )))
        }
    };
    let (ldims, lbody) = parse_idx_header(label_bytes)?;
    if ldims != [n] {
        return Err(Error::Format(format!("IDX labels {ldims:?} do not match {n} images")));
    }
    let per = h * w * c;
    let images = body
        .chunks_exact(per.max(1))
        .map(|chunk| ImageTensor::from_interleaved_u8(c, h, w, chunk))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = lbody.iter().map(|&l| l as usize).collect();
    let classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
    LabeledSet::new(images, labels, (0..classes).map(|i| i.to_string()).collect())
}

pub fn read_idx<T: Scalar>(images: &Path, labels: &Path) -> Result<LabeledSet<T>> {
    parse_idx(&read_file(images)?, &read_file(labels)?)
}

/// Decodes one image file into 8-bit-scale samples.
pub trait ImageDecoder {
    fn accepts(&self, path: &Path) -> bool;
    fn decode(&self, bytes: &[u8]) -> Result<ImageTensor<f64>>;
}

/// Binary and ASCII PGM/PPM (`P2`, `P3`, `P5`, `P6`).
pub struct PnmDecoder;

impl ImageDecoder for PnmDecoder {
    fn accepts(&self, path: &Path) -> bool {
        matches!(
            path.extension()
                .and_then(|e| e.to_str())
                .map(|e| e.to_ascii_lowercase())
                .as_deref(),
            Some("ppm" | "pgm" | "pnm")
        )
    }

    fn decode(&self, bytes: &[u8]) -> Result<ImageTensor<f64>> {
        decode_pnm(bytes)
    }
}

pub fn decode_pnm<T: Scalar>(bytes: &[u8]) -> Result<ImageTensor<T>> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PNM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token()?;
    let (channels, binary) = match magic.as_str() {
        "P2" => (1, false),
        "P3" => (3, false),
        "P5" => (1, true),
        "P6" => (3, true),
        _ => return Err(Error::Format(format!("unsupported PNM magic {magic}"))),
    };
    let num = |t: String| {
        t.parse::<usize>()
            .map_err(|_| Error::Format(format!("bad PNM number '{t}'")))
    };
    let width = num(token()?)?;
    let height = num(token()?)?;
    let maxval = num(token()?)?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!("unsupported PNM maxval {maxval} (8-bit only)")));
    }
    let count = width * height * channels;
    let raw: Vec<u8> = if binary {
        // Exactly one whitespace byte separates the header from the raster.
        let start = pos + 1;
        bytes
            .get(start..start + count)
            .ok_or_else(|| Error::Format("truncated PNM raster".into()))?
            .to_vec()
    } else {
        (0..count)
            .map(|_| {
                let v = num(token()?)?;
                u8::try_from(v).map_err(|_| Error::Format(format!("PNM sample {v} too large")))
            })
            .collect::<Result<_>>()?
    };
    let mut img = ImageTensor::<T>::from_interleaved_u8(channels, height, width, &raw)?;
    if maxval != 255 {
        let scale = T::from_f64_lossy(255.0 / maxval as f64);
        for v in img.data_mut() {
            *v *= scale;
        }
    }
    Ok(img)
}

/// Binary PGM (1 channel) or PPM (3 channels), samples rounded and clamped.
pub fn encode_pnm<T: Scalar>(img: &ImageTensor<T>) -> Result<Vec<u8>> {
    let magic = match img.channels() {
        1 => "P5",
        3 => "P6",
        c => return Err(invalid(format!("PNM supports 1 or 3 channels, not {c}"))),
    };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.to_interleaved_u8());
    Ok(out)
}

pub fn read_pnm<T: Scalar>(path: &Path) -> Result<ImageTensor<T>> {
    decode_pnm(&read_file(path)?)
}

pub fn write_pnm<T: Scalar>(img: &ImageTensor<T>, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_pnm(img)?)?;
    Ok(())
}

pub fn read_image_dir<T: Scalar>(root: &Path, decoders: &[&dyn ImageDecoder]) -> Result<LabeledSet<T>> {
    let mut classes: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    classes.sort();
    if classes.is_empty() {
        return Err(Error::Format(format!(
            "{} has no class sub-directories",
            root.display()
        )));
    }
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut class_names = Vec::new();
    for (label, dir) in classes.iter().enumerate() {
        class_names.push(dir.file_name().unwrap_or_default().to_string_lossy().into_owned());
        let mut files: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        for file in files {
            let Some(decoder) = decoders.iter().find(|d| d.accepts(&file)) else {
                continue;
            };
            let img = decoder
                .decode(&read_file(&file)?)
                .map_err(|e| Error::Format(format!("{}: {e}", file.display())))?;
            images.push(img.cast());
            labels.push(label);
        }
    }
    LabeledSet::new(images, labels, class_names)
}

/// Writes `root/<class>/<index>.{ppm,pgm}` and returns the relative paths in
/// dataset order.
pub fn write_image_dir<T: Scalar>(set: &LabeledSet<T>, root: &Path) -> Result<Vec<String>> {
    let ext = if set.geometry().0 == 1 { "pgm" } else { "ppm" };
    for name in &set.class_names {
        fs::create_dir_all(root.join(name))?;
    }
    let mut rel = Vec::with_capacity(set.len());
    for (i, (img, &label)) in set.images.iter().zip(&set.labels).enumerate() {
        let path = format!("{}/{i:06}.{ext}", set.class_names[label]);
        write_pnm(img, &root.join(&path))?;
        rel.push(path);
    }
    Ok(rel)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_set() -> LabeledSet<f32> {
        let images = (0..4)
            .map(|i| ImageTensor::from_fn(3, 32, 32, |c, r, k| ((i * 7 + c * 50 + r + k) % 256) as f32).unwrap())
            .collect();
        LabeledSet::new(
            images,
            vec![0, 3, 9, 3],
            CIFAR10_CLASSES.iter().map(|s| s.to_string()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn cifar_roundtrip() {
        let set = tiny_set();
        let bytes = cifar_bytes(&set).unwrap();
        assert_eq!(bytes.len(), 4 * 3073);
        assert_eq!(bytes[3073], 3);
        // Red plane first, row-major.
        assert_eq!(bytes[1 + 2], set.images[0].get(0, 0, 2) as u8);
        let back: LabeledSet<f32> = parse_cifar(&bytes, 1).unwrap();
        assert_eq!(back, set);
        assert!(parse_cifar::<f32>(&bytes[..100], 1).is_err());
    }

    #[test]
    fn cifar100_uses_fine_label() {
        let mut rec = vec![3u8, 42];
        rec.extend(vec![7u8; CIFAR_PIXELS]);
        let set: LabeledSet<f32> = parse_cifar(&rec, 2).unwrap();
        assert_eq!(set.labels, vec![42]);
        assert_eq!(set.num_classes(), 100);
    }

    #[test]
    fn idx_parsing() {
        let mut images = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3];
        images.extend(0..12u8);
        let labels = vec![0, 0, 8, 1, 0, 0, 0, 2, 1, 4];
        let set: LabeledSet<f64> = parse_idx(&images, &labels).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.geometry(), (1, 2, 3));
        assert_eq!(set.images[1].get(0, 1, 2), 11.0);
        assert_eq!(set.labels, vec![1, 4]);
        assert_eq!(set.num_classes(), 5);
        let mut bad = images.clone();
        bad[2] = 0x0D;
        assert!(parse_idx::<f64>(&bad, &labels).is_err());
        assert!(parse_idx::<f64>(&images[..20], &labels).is_err());
    }

    #[test]
    fn pnm_binary_and_ascii() {
        let img = ImageTensor::<f64>::from_fn(3, 2, 3, |c, r, k| (c * 100 + r * 10 + k) as f64).unwrap();
        let bytes = encode_pnm(&img).unwrap();
        assert_eq!(decode_pnm::<f64>(&bytes).unwrap(), img);
        let ascii = b"P2\n# comment\n2 2\n15\n0 15\n5 10\n";
        let g: ImageTensor<f64> = decode_pnm(ascii).unwrap();
        assert_eq!(g.data(), &[0.0, 255.0, 85.0, 170.0]);
        assert!(decode_pnm::<f64>(b"P7\n1 1\n255\n").is_err());
        assert!(decode_pnm::<f64>(b"P5\n2 2\n255\n\x01").is_err());
    }

    #[test]
    fn image_dir_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut set = tiny_set();
        set.class_names.truncate(10);
        let paths = write_image_dir(&set, dir.path()).unwrap();
        assert_eq!(paths[1], "cat/000001.ppm");
        let back: LabeledSet<f32> = read_image_dir(dir.path(), &[&PnmDecoder]).unwrap();
        // Classes are sorted by name, so labels are re-indexed.
        assert_eq!(back.len(), 4);
        assert_eq!(
            back.class_names,
            vec![
                "airplane",
                "automobile",
                "bird",
                "cat",
                "deer",
                "dog",
                "frog",
                "horse",
                "ship",
                "truck"
            ]
        );
        assert_eq!(back.labels, vec![0, 3, 3, 9]);
    }

    #[test]
    fn balanced_prefix_takes_first_per_class() {
        let set = tiny_set();
        assert!(set.balanced_prefix(1).is_err()); // most classes are empty
        let small = LabeledSet::new(set.images.clone(), vec![0, 1, 1, 0], vec!["a".into(), "b".into()]).unwrap();
        let (sub, idx) = small.balanced_prefix(1).unwrap();
        assert_eq!(idx, vec![0, 1]);
        assert_eq!(sub.labels, vec![0, 1]);
    }

    #[test]
    fn validation_errors() {
        let set = tiny_set();
        assert!(LabeledSet::new(set.images.clone(), vec![0, 1, 2], set.class_names.clone()).is_err());
        assert!(matches!(
            LabeledSet::new(set.images.clone(), vec![0, 1, 2, 10], set.class_names.clone()),
            Err(Error::LabelOutOfRange { .. })
        ));
        assert!(LabeledSet::<f32>::new(vec![], vec![], vec![]).is_err());
    }
}
