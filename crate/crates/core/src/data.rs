//! Datasets, IDX files, pixel transforms and synthetic task generators.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lifelong::{Task, TaskStream};
use crate::nnkit::{Rng, Tensor};

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

/// `n × dim` samples in `[0, 1]`, optionally labelled and with a known image shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub data: Tensor,
    pub labels: Option<Vec<u8>>,
    /// `(rows, cols)` when each sample is a flattened image.
    pub image: Option<(usize, usize)>,
}

impl Dataset {
    pub fn new(data: Tensor, labels: Option<Vec<u8>>, image: Option<(usize, usize)>) -> Result<Self> {
        if data.shape().len() != 2 || data.rows() == 0 {
            return Err(Error::contract(format!("a dataset needs n >= 1 rows, got shape {:?}", data.shape())));
        }
        if let Some(bad) = data.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::contract(format!("dataset value {bad} outside [0, 1]")));
        }
        if let Some(l) = &labels {
            if l.len() != data.rows() {
                return Err(Error::dim("dataset labels", data.rows(), l.len()));
            }
        }
        if let Some((r, c)) = image {
            if r * c != data.cols() {
                return Err(Error::dim("dataset image shape", data.cols(), r * c));
            }
        }
        Ok(Dataset { data, labels, image })
    }

    /// Square images are inferred when `dim` is a perfect square.
    pub fn from_tensor(data: Tensor) -> Result<Self> {
        let image = square_side(data.cols()).map(|s| (s, s));
        Self::new(data, None, image)
    }

    pub fn len(&self) -> usize {
        self.data.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        Dataset::new(
            self.data.select_rows(idx),
            self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
            self.image,
        )
    }

    pub fn take(&self, n: usize) -> Result<Dataset> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }
}

fn square_side(dim: usize) -> Option<usize> {
    let s = (dim as f64).sqrt().round() as usize;
    (s * s == dim && s > 0).then_some(s)
}

// ---------------------------------------------------------------------------
// IDX

/// Contents of one IDX file.
#[derive(Clone, Debug, PartialEq)]
pub enum IdxFile {
    Images(Dataset),
    Labels(Vec<u8>),
}

fn read_u32(bytes: &[u8], offset: usize, file: &str) -> Result<u32> {
    let b = bytes.get(offset..offset + 4).ok_or_else(|| Error::Format {
        file: file.to_string(),
        offset,
        message: "truncated header".into(),
    })?;
    Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

pub fn parse_idx(bytes: &[u8], file: &str) -> Result<IdxFile> {
    let magic = read_u32(bytes, 0, file)?;
    let fmt = |offset: usize, message: String| Error::Format {
        file: file.to_string(),
        offset,
        message,
    };
    match magic {
        IDX_IMAGES => {
            let n = read_u32(bytes, 4, file)? as usize;
            let rows = read_u32(bytes, 8, file)? as usize;
            let cols = read_u32(bytes, 12, file)? as usize;
            let need = n * rows * cols;
            let body = &bytes[16..];
            if body.len() < need {
                return Err(fmt(16 + body.len(), format!("expected {need} pixel bytes, found {}", body.len())));
            }
            let data: Vec<f64> = body[..need].iter().map(|&b| b as f64 / 255.0).collect();
            let t = Tensor::new(vec![n, rows * cols], data)?;
            if n == 0 {
                return Err(fmt(4, "image count is zero".into()));
            }
            Ok(IdxFile::Images(Dataset::new(t, None, Some((rows, cols)))?))
        }
        IDX_LABELS => {
            let n = read_u32(bytes, 4, file)? as usize;
            let body = &bytes[8..];
            if body.len() < n {
                return Err(fmt(8 + body.len(), format!("expected {n} label bytes, found {}", body.len())));
            }
            Ok(IdxFile::Labels(body[..n].to_vec()))
        }
        other => Err(fmt(0, format!("bad magic 0x{other:08x}"))),
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn load_idx(path: &Path) -> Result<IdxFile> {
    parse_idx(&read_file(path)?, &path.display().to_string())
}

/// An image file with an optional matching label file.
pub fn load_idx_pair(images: &Path, labels: Option<&Path>) -> Result<Dataset> {
    let IdxFile::Images(mut ds) = load_idx(images)? else {
        return Err(Error::Format {
            file: images.display().to_string(),
            offset: 0,
            message: "expected an image file".into(),
        });
    };
    if let Some(lp) = labels {
        let IdxFile::Labels(l) = load_idx(lp)? else {
            return Err(Error::Format {
                file: lp.display().to_string(),
                offset: 0,
                message: "expected a label file".into(),
            });
        };
        ds = Dataset::new(ds.data, Some(l), ds.image)?;
    }
    Ok(ds)
}

/// Pixels are written as `round(255 · v)`.
pub fn encode_idx_images(ds: &Dataset) -> Vec<u8> {
    let (rows, cols) = ds.image.unwrap_or((1, ds.dim()));
    let mut out = Vec::with_capacity(16 + ds.data.len());
    out.extend(IDX_IMAGES.to_be_bytes());
    out.extend((ds.len() as u32).to_be_bytes());
    out.extend((rows as u32).to_be_bytes());
    out.extend((cols as u32).to_be_bytes());
    out.extend(ds.data.data().iter().map(|v| (v * 255.0).round() as u8));
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend(IDX_LABELS.to_be_bytes());
    out.extend((labels.len() as u32).to_be_bytes());
    out.extend(labels);
    out
}

pub fn save_idx(ds: &Dataset, images: &Path, labels: Option<&Path>) -> Result<()> {
    std::fs::write(images, encode_idx_images(ds)).map_err(|e| Error::io(images, e))?;
    if let (Some(p), Some(l)) = (labels, &ds.labels) {
        std::fs::write(p, encode_idx_labels(l)).map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Transforms

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum Transform {
    Invert,
    Rotate90,
    /// `x > threshold ↦ 1`, otherwise `0`.
    Binarize { threshold: f64 },
    /// Each pixel becomes `1` with probability equal to its value.
    StochasticBinarize { seed: u64 },
    /// 2×2 mean pooling.
    Downsample,
}

pub fn transform(d: &Dataset, t: Transform) -> Result<Dataset> {
    match t {
        Transform::Invert => Dataset::new(d.data.map(|v| 1.0 - v), d.labels.clone(), d.image),
        Transform::Binarize { threshold } => {
            Dataset::new(d.data.map(|v| if v > threshold { 1.0 } else { 0.0 }), d.labels.clone(), d.image)
        }
        Transform::StochasticBinarize { seed } => {
            let mut rng = Rng::new(seed);
            let data = d.data.map(|v| if rng.bernoulli(v) { 1.0 } else { 0.0 });
            Dataset::new(data, d.labels.clone(), d.image)
        }
        Transform::Rotate90 => rotate90(d),
        Transform::Downsample => downsample2x2(d),
    }
}

pub fn apply_all(d: &Dataset, ts: &[Transform]) -> Result<Dataset> {
    let mut out = d.clone();
    for &t in ts {
        out = transform(&out, t)?;
    }
    Ok(out)
}

/// Clockwise quarter turn of square images.
fn rotate90(d: &Dataset) -> Result<Dataset> {
    let Some((r, c)) = d.image.filter(|(r, c)| r == c) else {
        return Err(Error::contract(format!("rotate90 needs square images, got {:?} for dim {}", d.image, d.dim())));
    };
    let n = r;
    let mut out = Tensor::zeros(d.data.shape());
    for s in 0..d.len() {
        let src = d.data.row(s);
        let dst = out.row_mut(s);
        for i in 0..n {
            for j in 0..c {
                // (i, j) moves to (j, n − 1 − i)
                dst[j * n + (n - 1 - i)] = src[i * c + j];
            }
        }
    }
    Dataset::new(out, d.labels.clone(), d.image)
}

pub fn downsample2x2(d: &Dataset) -> Result<Dataset> {
    let Some((r, c)) = d.image.filter(|(r, c)| r % 2 == 0 && c % 2 == 0) else {
        return Err(Error::contract(format!("2x2 pooling needs even image sides, got {:?}", d.image)));
    };
    let (r2, c2) = (r / 2, c / 2);
    let mut out = Tensor::zeros(&[d.len(), r2 * c2]);
    for s in 0..d.len() {
        let src = d.data.row(s);
        let dst = out.row_mut(s);
        for i in 0..r2 {
            for j in 0..c2 {
                let a = src[(2 * i) * c + 2 * j];
                let b = src[(2 * i) * c + 2 * j + 1];
                let e = src[(2 * i + 1) * c + 2 * j];
                let f = src[(2 * i + 1) * c + 2 * j + 1];
                dst[i * c2 + j] = 0.25 * (a + b + e + f);
            }
        }
    }
    Dataset::new(out, d.labels.clone(), Some((r2, c2)))
}

// ---------------------------------------------------------------------------
// Label splits

fn filter_labels(d: &Dataset, group: &BTreeSet<u8>) -> Result<Option<Dataset>> {
    let labels = d.labels.as_ref().ok_or_else(|| Error::config("labels", "label split needs labelled data"))?;
    let idx: Vec<usize> = labels
        .iter()
        .enumerate()
        .filter(|(_, l)| group.contains(l))
        .map(|(i, _)| i)
        .collect();
    if idx.is_empty() {
        return Ok(None);
    }
    Ok(Some(d.subset(&idx)?))
}

pub fn filter_by_labels(d: &Dataset, labels: &[u8]) -> Result<Dataset> {
    let group: BTreeSet<u8> = labels.iter().copied().collect();
    filter_labels(d, &group)?.ok_or_else(|| Error::config("labels", format!("no samples carry labels {labels:?}")))
}

/// One task per label group, `task_k` named after its labels.
pub fn split_by_labels(train: &Dataset, test: &Dataset, groups: &[Vec<u8>]) -> Result<TaskStream> {
    let mut seen = BTreeSet::new();
    let mut tasks = Vec::new();
    for (i, g) in groups.iter().enumerate() {
        if g.is_empty() {
            return Err(Error::config(format!("groups[{i}]"), "empty label group"));
        }
        let set: BTreeSet<u8> = g.iter().copied().collect();
        if let Some(dup) = set.iter().find(|l| seen.contains(*l)) {
            return Err(Error::config(format!("groups[{i}]"), format!("label {dup} appears in two groups")));
        }
        seen.extend(set.iter().copied());
        let name = format!("split-{}", g.iter().map(u8::to_string).collect::<Vec<_>>().join(""));
        let tr = filter_labels(train, &set)?
            .ok_or_else(|| Error::config(format!("groups[{i}]"), "no training samples for this group"))?;
        let te = filter_labels(test, &set)?
            .ok_or_else(|| Error::config(format!("groups[{i}]"), "no test samples for this group"))?;
        tasks.push(Task::new(&name, tr, te)?);
    }
    TaskStream::new(tasks)
}

/// `{0,1}, {2,3}, …, {8,9}`.
pub fn default_split_groups() -> Vec<Vec<u8>> {
    (0..5).map(|k| vec![2 * k, 2 * k + 1]).collect()
}

// ---------------------------------------------------------------------------
// Synthetic generators

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SyntheticKind {
    /// Each top-half pixel on with probability ½; bottom half empty.
    HalfActiveTop,
    HalfActiveBottom,
    /// Even columns, each fully on with probability 0.8.
    Bars,
    /// Even rows, each fully on with probability 0.8.
    Stripes,
    /// A jittered Gaussian bump around a centre given in unit coordinates.
    GaussBlob { center: [f64; 2] },
    /// Seven-segment digits 0–9 with jittered position and stroke, labelled.
    Glyphs,
}

impl SyntheticKind {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "half-active-top" => SyntheticKind::HalfActiveTop,
            "half-active-bottom" => SyntheticKind::HalfActiveBottom,
            "bars" => SyntheticKind::Bars,
            "stripes" => SyntheticKind::Stripes,
            "gauss-blob" => SyntheticKind::GaussBlob { center: [0.5, 0.5] },
            "glyphs" => SyntheticKind::Glyphs,
            other => return Err(Error::config("kind", format!("unknown synthetic kind `{other}`"))),
        })
    }
}

/// Segment endpoints of a seven-segment display in unit coordinates `(x, y)`.
const SEGMENTS: [[(f64, f64); 2]; 7] = [
    [(0.0, 0.0), (1.0, 0.0)], // a: top
    [(1.0, 0.0), (1.0, 0.5)], // b: upper right
    [(1.0, 0.5), (1.0, 1.0)], // c: lower right
    [(0.0, 1.0), (1.0, 1.0)], // d: bottom
    [(0.0, 0.5), (0.0, 1.0)], // e: lower left
    [(0.0, 0.0), (0.0, 0.5)], // f: upper left
    [(0.0, 0.5), (1.0, 0.5)], // g: middle
];

const DIGITS: [&[usize]; 10] = [
    &[0, 1, 2, 3, 4, 5],
    &[1, 2],
    &[0, 1, 6, 4, 3],
    &[0, 1, 6, 2, 3],
    &[5, 6, 1, 2],
    &[0, 5, 6, 2, 3],
    &[0, 5, 6, 4, 2, 3],
    &[0, 1, 2],
    &[0, 1, 2, 3, 4, 5, 6],
    &[0, 1, 2, 3, 5, 6],
];

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0);
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

fn glyph(label: usize, side: usize, rng: &mut Rng, out: &mut [f64]) {
    let s = side as f64;
    let w = s * rng.uniform_range(0.35, 0.5);
    let h = s * rng.uniform_range(0.6, 0.75);
    let x0 = rng.uniform_range(0.1 * s, s - w - 0.1 * s);
    let y0 = rng.uniform_range(0.08 * s, s - h - 0.08 * s);
    let thick = rng.uniform_range(0.06, 0.1) * s;
    let slant = rng.uniform_range(-0.15, 0.15);
    let segs: Vec<[(f64, f64); 2]> = DIGITS[label]
        .iter()
        .map(|&k| {
            let map = |(u, v): (f64, f64)| (x0 + w * (u + slant * (1.0 - v)), y0 + h * v);
            [map(SEGMENTS[k][0]), map(SEGMENTS[k][1])]
        })
        .collect();
    for r in 0..side {
        for c in 0..side {
            let p = (c as f64 + 0.5, r as f64 + 0.5);
            let d = segs.iter().map(|sg| segment_distance(p, sg[0], sg[1])).fold(f64::INFINITY, f64::min);
            out[r * side + c] = (1.0 - (d - thick).max(0.0)).clamp(0.0, 1.0);
        }
    }
}

/// `n` samples of a `dim = side²` generator.
pub fn synthetic_task(kind: SyntheticKind, n: usize, dim: usize, rng: &mut Rng) -> Result<Dataset> {
    let side = square_side(dim).ok_or_else(|| Error::contract(format!("synthetic dim {dim} is not a square")))?;
    if n == 0 {
        return Err(Error::contract("synthetic task needs n >= 1"));
    }
    let mut data = Tensor::zeros(&[n, dim]);
    let mut labels = None;
    match kind {
        SyntheticKind::HalfActiveTop | SyntheticKind::HalfActiveBottom => {
            let top = matches!(kind, SyntheticKind::HalfActiveTop);
            for s in 0..n {
                let row = data.row_mut(s);
                for r in 0..side {
                    let in_half = if top { r < side / 2 } else { r >= side - side / 2 };
                    if !in_half {
                        continue;
                    }
                    for c in 0..side {
                        row[r * side + c] = if rng.bernoulli(0.5) { 1.0 } else { 0.0 };
                    }
                }
            }
        }
        SyntheticKind::Bars | SyntheticKind::Stripes => {
            let vertical = matches!(kind, SyntheticKind::Bars);
            for s in 0..n {
                let row = data.row_mut(s);
                for line in (0..side).step_by(2) {
                    if !rng.bernoulli(0.8) {
                        continue;
                    }
                    for k in 0..side {
                        let idx = if vertical { k * side + line } else { line * side + k };
                        row[idx] = 1.0;
                    }
                }
            }
        }
        SyntheticKind::GaussBlob { center } => {
            let sf = side as f64;
            for s in 0..n {
                let cx = center[0] * sf + rng.uniform_range(-1.0, 1.0);
                let cy = center[1] * sf + rng.uniform_range(-1.0, 1.0);
                let width = sf * rng.uniform_range(0.08, 0.16);
                let row = data.row_mut(s);
                for r in 0..side {
                    for c in 0..side {
                        let d2 = (c as f64 + 0.5 - cx).powi(2) + (r as f64 + 0.5 - cy).powi(2);
                        row[r * side + c] = (-d2 / (2.0 * width * width)).exp();
                    }
                }
            }
        }
        SyntheticKind::Glyphs => {
            let mut ls = Vec::with_capacity(n);
            for s in 0..n {
                let label = rng.below(10);
                glyph(label, side, rng, data.row_mut(s));
                ls.push(label as u8);
            }
            labels = Some(ls);
        }
    }
    Dataset::new(data, labels, Some((side, side)))
}

// ---------------------------------------------------------------------------
// Task specifications

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Source {
    Idx {
        train_images: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        train_labels: Option<PathBuf>,
        test_images: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_labels: Option<PathBuf>,
    },
    Synthetic {
        generator: SyntheticKind,
        dim: usize,
        n_train: usize,
        n_test: usize,
        /// Defaults to a seed derived from the run seed and the task name.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
}

/// How to build one task of a stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub name: String,
    pub source: Source,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub transforms: Vec<Transform>,
    /// Keep only samples carrying one of these labels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_train: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_test: Option<usize>,
}

impl TaskSpec {
    /// `desk_scale` prepends 2×2 pooling to file-backed sources with even sides.
    pub fn build(&self, run_seed: u64, desk_scale: bool) -> Result<Task> {
        let (mut train, mut test) = match &self.source {
            Source::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => (
                load_idx_pair(train_images, train_labels.as_deref())?,
                load_idx_pair(test_images, test_labels.as_deref())?,
            ),
            Source::Synthetic {
                generator,
                dim,
                n_train,
                n_test,
                seed,
            } => {
                let base = Rng::new(seed.unwrap_or(run_seed)).derive(&format!("data/{}", self.name));
                (
                    synthetic_task(*generator, *n_train, *dim, &mut base.derive("train"))?,
                    synthetic_task(*generator, *n_test, *dim, &mut base.derive("test"))?,
                )
            }
        };
        if let Some(l) = &self.labels {
            train = filter_by_labels(&train, l)?;
            test = filter_by_labels(&test, l)?;
        }
        if let Some(n) = self.max_train {
            train = train.take(n)?;
        }
        if let Some(n) = self.max_test {
            test = test.take(n)?;
        }
        let pool = desk_scale
            && matches!(self.source, Source::Idx { .. })
            && train.image.is_some_and(|(r, c)| r % 2 == 0 && c % 2 == 0);
        if pool {
            train = downsample2x2(&train)?;
            test = downsample2x2(&test)?;
        }
        train = apply_all(&train, &self.transforms)?;
        test = apply_all(&test, &self.transforms)?;
        Task::new(&self.name, train, test)
    }
}

pub fn build_stream(specs: &[TaskSpec], run_seed: u64, desk_scale: bool) -> Result<TaskStream> {
    if specs.is_empty() {
        return Err(Error::config("stream", "a stream needs at least one task"));
    }
    let tasks = specs
        .iter()
        .map(|s| s.build(run_seed, desk_scale))
        .collect::<Result<Vec<_>>>()?;
    TaskStream::new(tasks)
}
