//! Datasets: synthetic separable generation, CSV and IDX loading.
//!
//! Every row stored in a [`Dataset`] has Euclidean norm at most one. Loaders
//! rescale their input to meet that bound; constructors reject data that
//! violates it.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm2, scale};
use crate::scalar::Scalar;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Label of a single example.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    /// `-1` or `+1`.
    Binary(i8),
    /// Class index in `0..classes`.
    Class(usize),
}

impl Label {
    /// Sign of a binary label as a scalar.
    pub fn sign<T: Scalar>(self) -> T {
        match self {
            Label::Binary(y) if y > 0 => T::one(),
            Label::Binary(_) => -T::one(),
            Label::Class(_) => panic!("sign() on a class label"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Labels {
    Binary(Vec<i8>),
    Classes { labels: Vec<usize>, classes: usize },
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Binary(v) => v.len(),
            Labels::Classes { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> Label {
        match self {
            Labels::Binary(v) => Label::Binary(v[i]),
            Labels::Classes { labels, .. } => Label::Class(labels[i]),
        }
    }

    fn select(&self, idx: &[usize]) -> Labels {
        match self {
            Labels::Binary(v) => Labels::Binary(idx.iter().map(|&i| v[i]).collect()),
            Labels::Classes { labels, classes } => Labels::Classes {
                labels: idx.iter().map(|&i| labels[i]).collect(),
                classes: *classes,
            },
        }
    }
}

/// Feature matrix with labels and optional known separator.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    features: Vec<T>,
    n: usize,
    d: usize,
    labels: Labels,
    separator: Option<Vec<T>>,
    margin: Option<T>,
    domain: Option<(T, T)>,
    rescale: T,
    name: String,
}

fn norm_slack<T: Scalar>() -> T {
    T::epsilon() * T::lit(16.0)
}

impl<T: Scalar> Dataset<T> {
    /// Builds a dataset from row-major features; fails if any row has norm above one.
    pub fn new(features: Vec<T>, d: usize, labels: Labels, name: impl Into<String>) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        if features.len() % d != 0 {
            return Err(Error::Consistency(format!(
                "{} feature values do not form rows of length {d}",
                features.len()
            )));
        }
        let n = features.len() / d;
        if labels.len() != n {
            return Err(Error::Consistency(format!(
                "{} labels for {n} feature rows",
                labels.len()
            )));
        }
        if let Labels::Binary(v) = &labels {
            if let Some(bad) = v.iter().find(|y| **y != 1 && **y != -1) {
                return Err(Error::invalid(format!("binary label {bad} not in {{-1, +1}}")));
            }
        }
        if let Labels::Classes { labels, classes } = &labels {
            if let Some(bad) = labels.iter().find(|c| **c >= *classes) {
                return Err(Error::invalid(format!("class {bad} >= class count {classes}")));
            }
        }
        let limit = T::one() + norm_slack::<T>();
        for (i, row) in features.chunks_exact(d).enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("row {i} has non-finite entries")));
            }
            let nr = norm2(row);
            if nr > limit {
                return Err(Error::invalid(format!("row {i} has norm {nr} > 1")));
            }
        }
        Ok(Self {
            features,
            n,
            d,
            labels,
            separator: None,
            margin: None,
            domain: None,
            rescale: T::one(),
            name: name.into(),
        })
    }

    /// Attaches a unit separator and margin, verifying `min_i y_i x_i·u ≥ γ`.
    pub fn with_separator(mut self, u: Vec<T>, gamma: T) -> Result<Self> {
        if u.len() != self.d {
            return Err(Error::Consistency("separator dimension mismatch".into()));
        }
        let tol = T::lit(1e-12).max(norm_slack::<T>());
        if (norm2(&u) - T::one()).abs() > tol {
            return Err(Error::invalid("separator must have unit norm"));
        }
        if gamma <= T::zero() {
            return Err(Error::invalid("margin must be positive"));
        }
        let m = self.margin_wrt(&u)?;
        if m < gamma - tol {
            return Err(Error::Consistency(format!(
                "data margin {m} along separator is below {gamma}"
            )));
        }
        self.separator = Some(u);
        self.margin = Some(gamma);
        Ok(self)
    }

    /// Declares a box domain that perturbed inputs are clamped to.
    pub fn with_domain(mut self, lo: T, hi: T) -> Self {
        self.domain = Some((lo, hi));
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.features.chunks_exact(self.d)
    }

    pub fn features(&self) -> &[T] {
        &self.features
    }

    pub fn label(&self, i: usize) -> Label {
        self.labels.get(i)
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn is_binary(&self) -> bool {
        matches!(self.labels, Labels::Binary(_))
    }

    /// Number of classes (2 for binary data).
    pub fn classes(&self) -> usize {
        match &self.labels {
            Labels::Binary(_) => 2,
            Labels::Classes { classes, .. } => *classes,
        }
    }

    pub fn separator(&self) -> Option<&[T]> {
        self.separator.as_deref()
    }

    pub fn margin(&self) -> Option<T> {
        self.margin
    }

    pub fn domain(&self) -> Option<(T, T)> {
        self.domain
    }

    /// Factor every loaded row was multiplied by (1 when no rescale happened).
    pub fn rescale_factor(&self) -> T {
        self.rescale
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// `min_i y_i (x_i · direction)`; negative when some point is misclassified.
    pub fn margin_wrt(&self, direction: &[T]) -> Result<T> {
        let Labels::Binary(ys) = &self.labels else {
            return Err(Error::Unsupported("margin of a multi-class dataset".into()));
        };
        if direction.len() != self.d {
            return Err(Error::Consistency("direction dimension mismatch".into()));
        }
        if (norm2(direction) - T::one()).abs() > T::lit(1e-9).max(norm_slack::<T>()) {
            return Err(Error::invalid("direction must have unit norm"));
        }
        if self.n == 0 {
            return Err(Error::EmptyDataset);
        }
        Ok(self
            .rows()
            .zip(ys)
            .map(|(x, &y)| T::lit(y as f64) * dot(x, direction))
            .fold(T::infinity(), T::min))
    }

    /// Examples at the given indices; the separator is kept since subsets stay separable.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let mut features = Vec::with_capacity(idx.len() * self.d);
        for &i in idx {
            features.extend_from_slice(self.row(i));
        }
        Self {
            features,
            n: idx.len(),
            d: self.d,
            labels: self.labels.select(idx),
            separator: self.separator.clone(),
            margin: self.margin,
            domain: self.domain,
            rescale: self.rescale,
            name: self.name.clone(),
        }
    }

    /// Deterministic shuffled split; `test_fraction` of the rows go to the second set.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(Self, Self)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::invalid("test fraction must lie in [0, 1)"));
        }
        let mut idx: Vec<usize> = (0..self.n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_test = (self.n as f64 * test_fraction).round() as usize;
        let (test, train) = idx.split_at(n_test);
        Ok((
            self.subset(train).with_name(format!("{}-train", self.name)),
            self.subset(test).with_name(format!("{}-test", self.name)),
        ))
    }

    /// Writes `label,f0,..,f{d-1}` with shortest round-trip float formatting.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["label".to_string()];
        header.extend((0..self.d).map(|j| format!("f{j}")));
        w.write_record(&header)?;
        for i in 0..self.n {
            let mut rec = Vec::with_capacity(self.d + 1);
            rec.push(match self.label(i) {
                Label::Binary(y) => y.to_string(),
                Label::Class(c) => c.to_string(),
            });
            rec.extend(self.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Samples a dataset that is linearly separable with margin `gamma`.
///
/// A unit separator `u` is drawn at random. Labels are split
/// ⌈n/2⌉ positive / ⌊n/2⌋ negative. Each point is drawn from the uniform
/// distribution on the unit ball conditioned on `y·x·u ≥ gamma`, which is
/// the distribution produced by rejecting ball samples with `|x·u| < gamma`.
/// With `gamma = 1` the only admissible point is `x = y·u`.
pub fn generate_separable<T: Scalar>(d: usize, n: usize, gamma: T, seed: u64) -> Result<Dataset<T>> {
    if d == 0 {
        return Err(Error::invalid("dimension must be at least 1"));
    }
    if n < 2 {
        return Err(Error::invalid("need at least two points"));
    }
    if !(gamma > T::zero()) || gamma > T::one() {
        return Err(Error::invalid(format!(
            "margin {gamma} must lie in (0, 1]; no point with norm <= 1 attains a larger margin"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut u: Vec<T> = loop {
        let v: Vec<T> = (0..d).map(|_| T::standard_normal(&mut rng)).collect();
        if norm2(&v) > T::lit(1e-6) {
            break v;
        }
    };
    let nu = norm2(&u);
    scale(T::one() / nu, &mut u);

    let n_pos = n.div_ceil(2);
    let mut ys: Vec<i8> = (0..n).map(|i| if i < n_pos { 1 } else { -1 }).collect();
    ys.shuffle(&mut rng);

    let mut features = Vec::with_capacity(n * d);
    let half_dm1 = T::lit((d as f64 - 1.0) / 2.0);
    let one_minus_g2 = T::one() - gamma * gamma;
    for &y in &ys {
        let ys = T::lit(y as f64);
        if gamma == T::one() {
            features.extend(u.iter().map(|v| ys * *v));
            continue;
        }
        // projection onto u, density ∝ (1 - t²)^((d-1)/2) on [gamma, 1]
        let t = loop {
            let t = gamma + (T::one() - gamma) * T::unit_uniform(&mut rng);
            if d == 1 {
                break t;
            }
            let ratio = ((T::one() - t * t) / one_minus_g2).max(T::zero());
            if T::unit_uniform(&mut rng) <= ratio.powf(half_dm1) {
                break t;
            }
        };
        let mut x: Vec<T> = u.iter().map(|v| ys * t * *v).collect();
        if d > 1 {
            let mut w: Vec<T> = loop {
                let mut w: Vec<T> = (0..d).map(|_| T::standard_normal(&mut rng)).collect();
                let p = dot(&w, &u);
                for (wi, ui) in w.iter_mut().zip(&u) {
                    *wi -= p * *ui;
                }
                if norm2(&w) > T::lit(1e-9) {
                    break w;
                }
            };
            let nw = norm2(&w);
            let radius = (T::one() - t * t).max(T::zero()).sqrt()
                * T::unit_uniform(&mut rng).powf(T::one() / T::lit(d as f64 - 1.0))
                * (T::one() - norm_slack::<T>());
            scale(radius / nw, &mut w);
            for (xi, wi) in x.iter_mut().zip(&w) {
                *xi += *wi;
            }
        }
        let nx = norm2(&x);
        if nx > T::one() {
            scale(T::one() / nx, &mut x);
        }
        features.extend(x);
    }
    Dataset::new(features, d, Labels::Binary(ys), format!("separable-d{d}-n{n}-seed{seed}"))?
        .with_separator(u, gamma)
}

fn classify_labels(raw: &[f64]) -> Result<Labels> {
    if raw.iter().all(|v| *v == 1.0 || *v == -1.0) {
        return Ok(Labels::Binary(raw.iter().map(|v| *v as i8).collect()));
    }
    if raw.iter().all(|v| *v >= 0.0 && v.fract() == 0.0 && *v < 1e6) {
        let labels: Vec<usize> = raw.iter().map(|v| *v as usize).collect();
        let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
        return Ok(Labels::Classes { labels, classes });
    }
    Err(Error::Schema(
        "labels must be -1/+1 or non-negative class indices".into(),
    ))
}

/// Divides every row by the largest row norm when it exceeds one; returns the factor used.
fn rescale_global<T: Scalar>(features: &mut [T], d: usize) -> T {
    let max_norm = features
        .chunks_exact(d)
        .map(norm2)
        .fold(T::zero(), T::max);
    if max_norm > T::one() {
        let f = T::one() / max_norm;
        scale(f, features);
        f
    } else {
        T::one()
    }
}

/// Reads a CSV with a header row; `label_column` names the label field.
pub fn load_csv<T: Scalar>(path: impl AsRef<Path>, label_column: &str) -> Result<Dataset<T>> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::Schema(format!("{}: empty file", path.display())));
    }
    let label_idx = headers
        .iter()
        .position(|h| h.trim() == label_column)
        .ok_or_else(|| Error::Schema(format!("no `{label_column}` column")))?;
    let d = headers.len() - 1;
    if d == 0 {
        return Err(Error::Schema("no feature columns".into()));
    }
    let mut features: Vec<T> = Vec::new();
    let mut raw_labels = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != headers.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", headers.len(), rec.len()),
            });
        }
        for (j, field) in rec.iter().enumerate() {
            let field = field.trim();
            if j == label_idx {
                let y: f64 = field.parse().map_err(|_| {
                    Error::Schema(format!("non-numeric label `{field}` at line {line}"))
                })?;
                raw_labels.push(y);
            } else {
                let v: f64 = field.parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("non-numeric feature `{field}`"),
                })?;
                features.push(T::lit(v));
            }
        }
    }
    if raw_labels.is_empty() {
        return Err(Error::Schema(format!("{}: no data rows", path.display())));
    }
    let labels = classify_labels(&raw_labels)?;
    let factor = rescale_global(&mut features, d);
    let name = path
        .file_stem()
        .map_or_else(|| "csv".to_string(), |s| s.to_string_lossy().into_owned());
    let mut ds = Dataset::new(features, d, labels, name)?;
    ds.rescale = factor;
    Ok(ds)
}

fn read_be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("{what}: truncated header")))
}

/// Loads an MNIST-layout IDX image/label pair.
///
/// Pixels are mapped to `[0, 1]`; each flattened image whose norm exceeds one
/// is divided by its own norm. At most `limit` examples are returned.
pub fn load_idx<T: Scalar>(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    limit: usize,
) -> Result<Dataset<T>> {
    if limit == 0 {
        return Err(Error::EmptyDataset);
    }
    let images = fs::read(images_path.as_ref())?;
    let labels = fs::read(labels_path.as_ref())?;

    let magic = read_be_u32(&images, 0, "images")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "image file magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"
        )));
    }
    let magic = read_be_u32(&labels, 0, "labels")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "label file magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"
        )));
    }
    let n_images = read_be_u32(&images, 4, "images")? as usize;
    let rows = read_be_u32(&images, 8, "images")? as usize;
    let cols = read_be_u32(&images, 12, "images")? as usize;
    let n_labels = read_be_u32(&labels, 4, "labels")? as usize;
    if n_images != n_labels {
        return Err(Error::Consistency(format!(
            "{n_images} images but {n_labels} labels"
        )));
    }
    let d = rows * cols;
    if images.len() < 16 + n_images * d || labels.len() < 8 + n_labels {
        return Err(Error::Format("IDX payload shorter than its header declares".into()));
    }
    let n = n_images.min(limit);
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let inv255 = T::one() / T::lit(255.0);
    let mut features = Vec::with_capacity(n * d);
    for i in 0..n {
        let px = &images[16 + i * d..16 + (i + 1) * d];
        let start = features.len();
        features.extend(px.iter().map(|&p| T::lit(p as f64) * inv255));
        let row = &mut features[start..];
        let nr = norm2(row);
        if nr > T::one() {
            scale(T::one() / nr, row);
        }
    }
    let ys: Vec<usize> = labels[8..8 + n].iter().map(|&b| b as usize).collect();
    let classes = ys.iter().copied().max().unwrap_or(0) + 1;
    let name = images_path
        .as_ref()
        .file_name()
        .map_or_else(|| "idx".to_string(), |s| s.to_string_lossy().into_owned());
    Ok(Dataset::new(features, d, Labels::Classes { labels: ys, classes }, name)?.with_domain(T::zero(), T::one()))
}

/// Writes an IDX image/label pair (unsigned byte pixels).
pub fn write_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    pixels: &[u8],
    rows: usize,
    cols: usize,
    labels: &[u8],
) -> Result<()> {
    let n = labels.len();
    if pixels.len() != n * rows * cols {
        return Err(Error::Consistency("pixel count does not match labels".into()));
    }
    let mut f = fs::File::create(images_path)?;
    for v in [IDX_IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        f.write_all(&v.to_be_bytes())?;
    }
    f.write_all(pixels)?;
    let mut f = fs::File::create(labels_path)?;
    for v in [IDX_LABELS_MAGIC, n as u32] {
        f.write_all(&v.to_be_bytes())?;
    }
    f.write_all(labels)?;
    Ok(())
}
