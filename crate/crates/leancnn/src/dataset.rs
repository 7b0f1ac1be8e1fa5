//! Dataset scanning, manifests, splitting, label binarization and the
//! in-memory preprocessed dataset used for training.
//!
//! Two folder layouts are recognised:
//!
//! ```text
//! root/<class>/*.{png,jpg,jpeg}
//! root/{Training,Testing}/<class>/*.{png,jpg,jpeg}
//! ```
//!
//! Classes are ordered lexicographically by folder name; records are ordered
//! by split, then class, then file name.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use leancnn_core::preprocess::{preprocess_gray, GrayImage, PreprocessConfig};
use leancnn_core::sampling::{few_shot_indices, split_indices};
use leancnn_core::{Rng, Tensor};
use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// Folder names treated as the negative class when binarizing by default.
pub const NEGATIVE_CLASS_NAMES: [&str; 5] = ["no", "notumor", "no_tumor", "normal", "healthy"];

pub const MANIFEST_VERSION: u32 = 1;

const TRAIN_DIRS: [&str; 2] = ["Training", "train"];
const TEST_DIRS: [&str; 2] = ["Testing", "test"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    /// Path relative to the manifest root, `/`-separated.
    pub path: String,
    pub label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitTag>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub root: PathBuf,
    pub class_names: Vec<String>,
    pub records: Vec<Record>,
}

/// How to divide a manifest into train and test records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SplitMode {
    /// Shipped Training/Testing folders when present, otherwise a seeded
    /// ratio split.
    Auto { ratio: f64, seed: u64 },
    /// Shipped folders only; an error when the manifest has none.
    Folders,
    /// Seeded ratio split ignoring any shipped folders.
    Ratio { ratio: f64, seed: u64 },
}

impl Default for SplitMode {
    fn default() -> Self {
        SplitMode::Auto {
            ratio: 0.8,
            seed: 42,
        }
    }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.iter().any(|x| x.eq_ignore_ascii_case(e)))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if entry.file_name().to_string_lossy().starts_with('.') {
            continue;
        }
        out.push(entry.path());
    }
    out.sort();
    Ok(out)
}

fn subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(sorted_entries(dir)?
        .into_iter()
        .filter(|p| p.is_dir())
        .collect())
}

fn find_child(root: &Path, names: &[&str]) -> Option<PathBuf> {
    names.iter().map(|n| root.join(n)).find(|p| p.is_dir())
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn relative(root: &Path, p: &Path) -> String {
    p.strip_prefix(root)
        .unwrap_or(p)
        .components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

impl DatasetManifest {
    /// Lists every image under `root`. Empty class folders and unreadable
    /// files are skipped with a warning.
    pub fn scan(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        if !root.is_dir() {
            return Err(Error::Data(format!("path not found: {}", root.display())));
        }
        let split_dirs = match (find_child(root, &TRAIN_DIRS), find_child(root, &TEST_DIRS)) {
            (Some(train), Some(test)) => {
                vec![(Some(SplitTag::Train), train), (Some(SplitTag::Test), test)]
            }
            _ => vec![(None, root.to_path_buf())],
        };

        // class name -> files per split
        let mut classes: BTreeMap<String, Vec<(Option<SplitTag>, PathBuf)>> = BTreeMap::new();
        for (tag, dir) in &split_dirs {
            for class_dir in subdirs(dir)? {
                let files = classes.entry(file_name(&class_dir)).or_default();
                let before = files.len();
                for f in sorted_entries(&class_dir)? {
                    if !f.is_file() || !is_image(&f) {
                        continue;
                    }
                    if let Err(e) = fs::File::open(&f) {
                        warn!("skipping unreadable file {}: {e}", f.display());
                        continue;
                    }
                    files.push((*tag, f));
                }
                if files.len() == before {
                    warn!("class folder {} has no images", class_dir.display());
                }
            }
        }
        if classes.is_empty() {
            return Err(Error::Data(format!(
                "no classes found in {}",
                root.display()
            )));
        }
        let class_names: Vec<String> = classes.keys().cloned().collect();
        let mut records: Vec<Record> = classes
            .into_values()
            .enumerate()
            .flat_map(|(label, files)| {
                files.into_iter().map(move |(split, p)| Record {
                    path: relative(root, &p),
                    label,
                    split,
                })
            })
            .collect();
        records.sort_by(|a, b| (a.split, a.label, &a.path).cmp(&(b.split, b.label, &b.path)));
        Ok(Self {
            version: MANIFEST_VERSION,
            root: root.to_path_buf(),
            class_names,
            records,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn has_predefined_split(&self) -> bool {
        self.records.iter().any(|r| r.split.is_some())
    }

    /// Record count per class.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes()];
        for r in &self.records {
            h[r.label] += 1;
        }
        h
    }

    pub fn count_split(&self, tag: SplitTag) -> usize {
        self.records.iter().filter(|r| r.split == Some(tag)).count()
    }

    pub fn path_of(&self, index: usize) -> PathBuf {
        self.root.join(&self.records[index].path)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text)?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Format(format!(
                "manifest version {} is not supported (expected {MANIFEST_VERSION})",
                m.version
            )));
        }
        if let Some(r) = m.records.iter().find(|r| r.label >= m.class_names.len()) {
            return Err(Error::Format(format!(
                "record {} has label {} out of range",
                r.path, r.label
            )));
        }
        Ok(m)
    }

    /// Classes that are not in [`NEGATIVE_CLASS_NAMES`].
    pub fn default_positive_classes(&self) -> Vec<String> {
        self.class_names
            .iter()
            .filter(|c| {
                !NEGATIVE_CLASS_NAMES
                    .iter()
                    .any(|n| n.eq_ignore_ascii_case(c))
            })
            .cloned()
            .collect()
    }

    /// Maps `positive` classes to label 1 and the rest to 0. The new class
    /// names join the members of each side with `+`.
    pub fn binarize<S: AsRef<str>>(&self, positive: &[S]) -> Result<Self> {
        if positive.is_empty() {
            return Err(Error::Config("positive class set is empty".into()));
        }
        let mut is_pos = vec![false; self.num_classes()];
        for p in positive {
            let p = p.as_ref();
            let i = self
                .class_names
                .iter()
                .position(|c| c == p)
                .ok_or_else(|| Error::Config(format!("unknown class name: {p}")))?;
            is_pos[i] = true;
        }
        let side = |want: bool| {
            self.class_names
                .iter()
                .zip(&is_pos)
                .filter(|(_, &p)| p == want)
                .map(|(c, _)| c.as_str())
                .collect::<Vec<_>>()
                .join("+")
        };
        let neg_name = side(false);
        let class_names = vec![
            if neg_name.is_empty() {
                "negative".into()
            } else {
                neg_name
            },
            side(true),
        ];
        let records = self
            .records
            .iter()
            .map(|r| Record {
                label: usize::from(is_pos[r.label]),
                ..r.clone()
            })
            .collect();
        Ok(Self {
            version: self.version,
            root: self.root.clone(),
            class_names,
            records,
        })
    }

    /// Record indices for the train and test sides.
    pub fn split(&self, mode: SplitMode) -> Result<(Vec<usize>, Vec<usize>)> {
        let folders = || {
            let pick = |t| {
                (0..self.len())
                    .filter(|&i| self.records[i].split == Some(t))
                    .collect()
            };
            (pick(SplitTag::Train), pick(SplitTag::Test))
        };
        match mode {
            SplitMode::Folders if !self.has_predefined_split() => Err(Error::Config(
                "dataset has no Training/Testing folders; use a ratio split".into(),
            )),
            SplitMode::Folders => Ok(folders()),
            SplitMode::Auto { .. } if self.has_predefined_split() => Ok(folders()),
            SplitMode::Auto { ratio, seed } | SplitMode::Ratio { ratio, seed } => {
                let (mut train, mut test) = split_indices(self.len(), ratio, seed)?;
                train.sort_unstable();
                test.sort_unstable();
                Ok((train, test))
            }
        }
    }
}

/// Decodes PNG/JPEG bytes and runs the grayscale, resize, blur and scaling
/// chain.
pub fn preprocess_bytes(bytes: &[u8], cfg: &PreprocessConfig) -> Result<Tensor<f32>> {
    let img = image::load_from_memory(bytes)
        .map_err(|e| Error::Data(format!("cannot decode image: {e}")))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let gray = GrayImage::from_rgb8(w as usize, h as usize, img.as_raw(), cfg.luma_weights)?;
    Ok(preprocess_gray(&gray, cfg)?)
}

pub fn load_image(path: &Path, cfg: &PreprocessConfig) -> Result<Tensor<f32>> {
    let bytes =
        fs::read(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    preprocess_bytes(&bytes, cfg).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Preprocessed images held in memory, with a record of which samples have
/// been handed out as batches.
#[derive(Debug)]
pub struct Dataset {
    sample_dims: Vec<usize>,
    images: Vec<f32>,
    labels: Vec<usize>,
    class_names: Vec<String>,
    accessed: Mutex<BTreeSet<usize>>,
}

impl Clone for Dataset {
    fn clone(&self) -> Self {
        Self {
            sample_dims: self.sample_dims.clone(),
            images: self.images.clone(),
            labels: self.labels.clone(),
            class_names: self.class_names.clone(),
            accessed: Mutex::default(),
        }
    }
}

impl Dataset {
    pub fn new(
        sample_dims: &[usize],
        images: Vec<f32>,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let per: usize = sample_dims.iter().product();
        if per == 0 || images.len() != per * labels.len() {
            return Err(Error::Data(format!(
                "{} values do not hold {} samples of {sample_dims:?}",
                images.len(),
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::Data(format!(
                "label {l} out of range for {} classes",
                class_names.len()
            )));
        }
        Ok(Self {
            sample_dims: sample_dims.to_vec(),
            images,
            labels,
            class_names,
            accessed: Mutex::default(),
        })
    }

    /// Decodes and preprocesses the selected manifest records. Workers fill
    /// pre-assigned slots, so the order never depends on scheduling.
    pub fn load(
        manifest: &DatasetManifest,
        indices: &[usize],
        cfg: &PreprocessConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let tensors: Vec<Tensor<f32>> = indices
            .par_iter()
            .map(|&i| load_image(&manifest.path_of(i), cfg))
            .collect::<Result<_>>()?;
        let labels = indices.iter().map(|&i| manifest.records[i].label).collect();
        let s = cfg.target_size;
        let images = tensors.into_iter().flat_map(Tensor::into_vec).collect();
        Self::new(&[1, s, s], images, labels, manifest.class_names.clone())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn sample_dims(&self) -> &[usize] {
        &self.sample_dims
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let per = self.images.len() / self.len().max(1);
        &self.images[i * per..(i + 1) * per]
    }

    /// Stacks the given samples into `[B, ...]` and records the access.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<f32>, Vec<usize>)> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::Data(format!(
                "sample index {bad} out of range for {} samples",
                self.len()
            )));
        }
        let mut data = Vec::with_capacity(indices.len() * self.sample(0).len());
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        let mut dims = vec![indices.len()];
        dims.extend_from_slice(&self.sample_dims);
        self.accessed.lock().expect("audit lock").extend(indices);
        Ok((
            Tensor::from_vec(&dims, data)?,
            indices.iter().map(|&i| self.labels[i]).collect(),
        ))
    }

    /// Number of distinct samples handed out by [`Dataset::batch`].
    pub fn accessed(&self) -> usize {
        self.accessed.lock().expect("audit lock").len()
    }

    pub fn reset_audit(&self) {
        self.accessed.lock().expect("audit lock").clear();
    }

    /// A new dataset holding copies of the selected samples.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut images = Vec::with_capacity(indices.len() * self.sample(0).len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Data(format!("sample index {i} out of range")));
            }
            images.extend_from_slice(self.sample(i));
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Self::new(&self.sample_dims, images, labels, self.class_names.clone())
    }

    /// Exactly `k` samples per class, drawn with `seed`.
    pub fn few_shot(&self, k: usize, seed: u64) -> Result<Self> {
        let idx =
            few_shot_indices(&self.labels, self.num_classes(), k, seed).map_err(|e| match e {
                leancnn_core::Error::Data(msg) => {
                    let named = self
                        .class_names
                        .iter()
                        .enumerate()
                        .fold(msg, |m, (i, name)| {
                            m.replace(&format!("class {i} "), &format!("class {name} "))
                        });
                    Error::Data(named)
                }
                other => other.into(),
            })?;
        if idx.is_empty() {
            return Ok(Self {
                sample_dims: self.sample_dims.clone(),
                images: Vec::new(),
                labels: Vec::new(),
                class_names: self.class_names.clone(),
                accessed: Mutex::default(),
            });
        }
        self.subset(&idx)
    }
}

/// Two-class images, constant dark (label 0) or bright (label 1) plus
/// uniform noise of amplitude `noise`. Separable by mean intensity.
pub fn synthetic_dark_bright(
    per_class: usize,
    size: usize,
    noise: f32,
    seed: u64,
) -> Result<Dataset> {
    let mut rng = Rng::new(seed);
    let per = size * size;
    let mut images = Vec::with_capacity(2 * per_class * per);
    let mut labels = Vec::with_capacity(2 * per_class);
    for i in 0..2 * per_class {
        let label = i % 2;
        let base = if label == 0 { 0.2f32 } else { 0.8 };
        images.extend((0..per).map(|_| base + rng.uniform(-noise, noise)));
        labels.push(label);
    }
    Dataset::new(
        &[1, size, size],
        images,
        labels,
        vec!["dark".into(), "bright".into()],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_png(path: &Path, value: u8, size: u32) {
        let img = image::GrayImage::from_pixel(size, size, image::Luma([value]));
        img.save(path).unwrap();
    }

    fn layout(root: &Path, split: bool) {
        for (dir, n) in [("no", 3), ("yes", 2)] {
            let base = if split {
                root.join("Training").join(dir)
            } else {
                root.join(dir)
            };
            fs::create_dir_all(&base).unwrap();
            for i in 0..n {
                write_png(&base.join(format!("img{i}.png")), 40 * i as u8, 12);
            }
            if split {
                let t = root.join("Testing").join(dir);
                fs::create_dir_all(&t).unwrap();
                write_png(&t.join("t.png"), 7, 12);
            }
        }
    }

    #[test]
    fn flat_layout() {
        let dir = tempfile::tempdir().unwrap();
        layout(dir.path(), false);
        fs::write(dir.path().join("yes").join("notes.txt"), "x").unwrap();
        let m = DatasetManifest::scan(dir.path()).unwrap();
        assert_eq!(m.class_names, ["no", "yes"]);
        assert_eq!(m.class_histogram(), [3, 2]);
        assert!(!m.has_predefined_split());
        assert_eq!(m.records[0].path, "no/img0.png");
        assert_eq!(m.default_positive_classes(), ["yes"]);
    }

    #[test]
    fn split_layout_uses_folders() {
        let dir = tempfile::tempdir().unwrap();
        layout(dir.path(), true);
        let m = DatasetManifest::scan(dir.path()).unwrap();
        assert_eq!(m.count_split(SplitTag::Train), 5);
        assert_eq!(m.count_split(SplitTag::Test), 2);
        let (train, test) = m.split(SplitMode::default()).unwrap();
        assert_eq!((train.len(), test.len()), (5, 2));
        let (train, test) = m
            .split(SplitMode::Ratio {
                ratio: 0.5,
                seed: 1,
            })
            .unwrap();
        assert_eq!((train.len(), test.len()), (3, 4));
    }

    #[test]
    fn empty_root_has_no_classes() {
        let dir = tempfile::tempdir().unwrap();
        let err = DatasetManifest::scan(dir.path()).unwrap_err();
        assert!(err.to_string().contains("no classes found"));
        let err = DatasetManifest::scan(dir.path().join("missing")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().starts_with("data error: path not found"));
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        layout(dir.path(), true);
        let m = DatasetManifest::scan(dir.path()).unwrap();
        let path = dir.path().join("manifest.json");
        m.save(&path).unwrap();
        assert_eq!(DatasetManifest::load(&path).unwrap(), m);
    }

    #[test]
    fn binarize_rules() {
        let m = DatasetManifest {
            version: MANIFEST_VERSION,
            root: PathBuf::new(),
            class_names: ["glioma", "meningioma", "notumor", "pituitary"]
                .map(String::from)
                .to_vec(),
            records: (0..8)
                .map(|i| Record {
                    path: format!("{i}.png"),
                    label: i % 4,
                    split: None,
                })
                .collect(),
        };
        let pos = m.default_positive_classes();
        assert_eq!(pos, ["glioma", "meningioma", "pituitary"]);
        let b = m.binarize(&pos).unwrap();
        assert_eq!(b.class_names, ["notumor", "glioma+meningioma+pituitary"]);
        assert_eq!(b.class_histogram(), [2, 6]);
        let all = m.binarize(&m.class_names).unwrap();
        assert!(all.records.iter().all(|r| r.label == 1));
        assert!(matches!(m.binarize::<&str>(&[]), Err(Error::Config(_))));
        assert!(matches!(m.binarize(&["tumour"]), Err(Error::Config(_))));
    }

    #[test]
    fn decode_and_preprocess() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.png");
        write_png(&p, 100, 30);
        let cfg = PreprocessConfig {
            target_size: 16,
            ..PreprocessConfig::default()
        };
        let t = load_image(&p, &cfg).unwrap();
        assert_eq!(t.dims(), &[1, 16, 16]);
        assert!(t.data().iter().all(|&v| (v - 100.0 / 255.0).abs() < 1e-6));
        assert_eq!(load_image(&p, &cfg).unwrap(), t);
        let bad = dir.path().join("bad.png");
        fs::write(&bad, b"not an image").unwrap();
        let err = load_image(&bad, &cfg).unwrap_err();
        assert!(matches!(&err, Error::Data(m) if m.contains("bad.png")));
    }

    #[test]
    fn batches_and_audit() {
        let d = synthetic_dark_bright(4, 8, 0.05, 1).unwrap();
        assert_eq!(d.len(), 8);
        let (x, y) = d.batch(&[0, 1, 1]).unwrap();
        assert_eq!(x.dims(), &[3, 1, 8, 8]);
        assert_eq!(y, [0, 1, 1]);
        assert_eq!(d.accessed(), 2);
        let few = d.few_shot(2, 3).unwrap();
        assert_eq!(few.len(), 4);
        assert_eq!(few.accessed(), 0);
        assert!(
            matches!(d.few_shot(5, 3), Err(Error::Data(m)) if m.contains("dark") || m.contains("bright"))
        );
        assert!(d.few_shot(0, 3).unwrap().is_empty());
    }
}
