//! Dataset preparation and file formats.
//!
//! Formats:
//!
//! * features CSV: header `f0,f1,…`, one row per subject;
//! * labels CSV: header `label`, one integer in `{1, 2}` per row;
//! * time-courses CSV: `C` rows × `T` columns, no header;
//! * block manifest: JSON array of `{"name", "start", "end"}`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{seeds, Error, Result};

pub const CLASS_LOW: usize = 1;
pub const CLASS_HIGH: usize = 2;

/// Column range `[start, end)` belonging to one modality.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub start: usize,
    pub end: usize,
}

impl Block {
    pub fn width(&self) -> usize {
        self.end - self.start
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: DMatrix<f64>,
    labels: Vec<usize>,
    blocks: Vec<Block>,
}

impl Dataset {
    /// Validates shapes, labels in `{1, 2}` with both classes present, and
    /// that `blocks` partition the columns in order.
    pub fn new(features: DMatrix<f64>, labels: Vec<usize>, blocks: Vec<Block>) -> Result<Self> {
        let ds = Self::unchecked_classes(features, labels, blocks)?;
        if !ds.has_both_classes() {
            return Err(Error::ClassCollapse("dataset needs at least one subject of each class".into()));
        }
        Ok(ds)
    }

    /// Single block named `features` covering every column.
    pub fn single_block(features: DMatrix<f64>, labels: Vec<usize>) -> Result<Self> {
        let blocks = vec![Block {
            name: "features".into(),
            start: 0,
            end: features.ncols(),
        }];
        Self::new(features, labels, blocks)
    }

    fn unchecked_classes(features: DMatrix<f64>, labels: Vec<usize>, blocks: Vec<Block>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::InvalidInput(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("features contain non-finite values".into()));
        }
        if let Some(bad) = labels.iter().find(|&&l| l != CLASS_LOW && l != CLASS_HIGH) {
            return Err(Error::InvalidInput(format!("label {bad} is not 1 or 2")));
        }
        validate_blocks(&blocks, features.ncols())?;
        Ok(Self {
            features,
            labels,
            blocks,
        })
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.features.ncols()
    }

    pub fn has_both_classes(&self) -> bool {
        self.labels.contains(&CLASS_LOW) && self.labels.contains(&CLASS_HIGH)
    }

    /// Rows `rows` in the given order; class balance is not checked.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(rows.iter()),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            blocks: self.blocks.clone(),
        }
    }

    pub fn with_features(&self, features: DMatrix<f64>) -> Result<Dataset> {
        Self::unchecked_classes(features, self.labels.clone(), self.blocks.clone())
    }
}

fn validate_blocks(blocks: &[Block], width: usize) -> Result<()> {
    let mut cursor = 0;
    for b in blocks {
        if b.start != cursor || b.end <= b.start {
            return Err(Error::InvalidInput(format!(
                "block '{}' [{}, {}) does not continue the partition at column {cursor}",
                b.name, b.start, b.end
            )));
        }
        cursor = b.end;
    }
    if cursor != width {
        return Err(Error::InvalidInput(format!("blocks cover {cursor} of {width} columns")));
    }
    Ok(())
}

/// Component time courses of one subject, `C × T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeCourses {
    components: DMatrix<f64>,
}

impl TimeCourses {
    pub fn new(components: DMatrix<f64>) -> Result<Self> {
        let (c, t) = components.shape();
        if c < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 components, got {c}")));
        }
        if t < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 time points for a covariance, got {t}"
            )));
        }
        if components.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("time courses contain non-finite values".into()));
        }
        Ok(Self { components })
    }

    pub fn components(&self) -> &DMatrix<f64> {
        &self.components
    }
}

/// Sample covariance (denominator `T − 1`) between component rows, flattened
/// strictly above the diagonal in row-major order: `(0,1), (0,2), …,
/// (1,2), …`. Length `C(C − 1)/2`.
pub fn fc_from_timecourses(tc: &TimeCourses) -> Vec<f64> {
    let m = &tc.components;
    let (c, t) = m.shape();
    let centred: Vec<Vec<f64>> = (0..c)
        .map(|i| {
            let row: Vec<f64> = m.row(i).iter().copied().collect();
            let mean = row.iter().sum::<f64>() / t as f64;
            row.into_iter().map(|v| v - mean).collect()
        })
        .collect();
    let denom = (t - 1) as f64;
    let mut out = Vec::with_capacity(c * (c - 1) / 2);
    for i in 0..c {
        for j in i + 1..c {
            let s: f64 = centred[i].iter().zip(&centred[j]).map(|(a, b)| a * b).sum();
            out.push(s / denom);
        }
    }
    out
}

/// z-scores ages with the sample standard deviation and keeps subjects with
/// `|z| > z_cut`: `z < −z_cut` becomes class 1, `z > z_cut` class 2.
pub fn binarize_ages(ages: &[f64], z_cut: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    if ages.len() < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 subjects, got {}", ages.len())));
    }
    if ages.iter().any(|a| !a.is_finite()) || !(z_cut.is_finite() && z_cut >= 0.0) {
        return Err(Error::InvalidInput("ages and z cut must be finite, z cut >= 0".into()));
    }
    let n = ages.len() as f64;
    let mean = ages.iter().sum::<f64>() / n;
    let var = ages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    if sd == 0.0 {
        return Err(Error::DegenerateData("all ages are equal".into()));
    }
    let mut kept = Vec::new();
    let mut labels = Vec::new();
    for (i, a) in ages.iter().enumerate() {
        let z = (a - mean) / sd;
        if z < -z_cut {
            kept.push(i);
            labels.push(CLASS_LOW);
        } else if z > z_cut {
            kept.push(i);
            labels.push(CLASS_HIGH);
        }
    }
    if !labels.contains(&CLASS_LOW) || !labels.contains(&CLASS_HIGH) {
        return Err(Error::ClassCollapse(format!(
            "after |z| > {z_cut} filtering {} subjects remain in a single class",
            kept.len()
        )));
    }
    Ok((kept, labels))
}

/// Per-column statistics fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub means: Vec<f64>,
    /// Sample standard deviations; columns with zero spread are only centred.
    pub stds: Vec<f64>,
}

impl Normalizer {
    pub fn fit(train: &DMatrix<f64>) -> Result<Self> {
        let (n, p) = train.shape();
        if n < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 training rows, got {n}")));
        }
        let mut means = Vec::with_capacity(p);
        let mut stds = Vec::with_capacity(p);
        for col in train.column_iter() {
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
            let sd = var.sqrt();
            means.push(mean);
            stds.push(if sd > 1e-12 * mean.abs().max(1.0) { sd } else { 0.0 });
        }
        Ok(Self { means, stds })
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.means.len() {
            return Err(Error::InvalidArgument(format!(
                "normaliser fitted on {} columns, got {}",
                self.means.len(),
                x.ncols()
            )));
        }
        let mut out = x.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            let (m, s) = (self.means[j], self.stds[j]);
            for v in col.iter_mut() {
                *v -= m;
                if s > 0.0 {
                    *v /= s;
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct Normalized {
    pub train: DMatrix<f64>,
    pub test: DMatrix<f64>,
    pub stats: Normalizer,
}

/// Fits statistics on `train` only and applies them to both matrices.
pub fn normalize(train: &DMatrix<f64>, test: &DMatrix<f64>) -> Result<Normalized> {
    if train.ncols() != test.ncols() {
        return Err(Error::InvalidArgument(format!(
            "train has {} columns, test {}",
            train.ncols(),
            test.ncols()
        )));
    }
    let stats = Normalizer::fit(train)?;
    Ok(Normalized {
        train: stats.apply(train)?,
        test: stats.apply(test)?,
        stats,
    })
}

/// Horizontal concatenation of named modality matrices.
pub fn concat_modalities(parts: &[(String, DMatrix<f64>)]) -> Result<(DMatrix<f64>, Vec<Block>)> {
    let Some((_, first)) = parts.first() else {
        return Err(Error::InvalidInput("no modalities given".into()));
    };
    let rows = first.nrows();
    let mut blocks = Vec::with_capacity(parts.len());
    let mut start = 0;
    for (name, m) in parts {
        if m.nrows() != rows {
            return Err(Error::InvalidInput(format!(
                "modality '{name}' has {} rows, expected {rows}",
                m.nrows()
            )));
        }
        if blocks.iter().any(|b: &Block| &b.name == name) {
            return Err(Error::InvalidInput(format!("duplicate modality name '{name}'")));
        }
        blocks.push(Block {
            name: name.clone(),
            start,
            end: start + m.ncols(),
        });
        start += m.ncols();
    }
    let mut out = DMatrix::zeros(rows, start);
    for ((_, m), b) in parts.iter().zip(&blocks) {
        out.columns_mut(b.start, b.width()).copy_from(m);
    }
    Ok((out, blocks))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            train_fraction: 0.9,
            seed,
        }
    }
}

/// Uniform random partition; each side keeps ascending row order.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction must be in (0, 1), got {}",
            spec.train_fraction
        )));
    }
    let n = dataset.len();
    let n_train = (spec.train_fraction * n as f64).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::InvalidArgument(format!(
            "split of {n} rows at {} leaves an empty partition",
            spec.train_fraction
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeds::rng(spec.seed));
    let (train, test) = order.split_at_mut(n_train);
    train.sort_unstable();
    test.sort_unstable();
    Ok((dataset.subset(train), dataset.subset(test)))
}

/// One block of synthetic features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalitySpec {
    pub name: String,
    pub width: usize,
    pub informative: usize,
}

/// Two balanced classes (alternating labels). Informative columns are
/// shifted by `∓separation/2` for class 1/2; every column gets additive
/// Gaussian noise with standard deviation `noise_std`. Returns the dataset
/// and the sorted informative column ids.
pub fn gen_synthetic_with(
    subjects: usize,
    modalities: &[ModalitySpec],
    noise_std: f64,
    separation: f64,
    seed: u64,
) -> Result<(Dataset, Vec<usize>)> {
    if subjects < 4 {
        return Err(Error::InvalidArgument(format!("need at least 4 subjects, got {subjects}")));
    }
    if modalities.is_empty() {
        return Err(Error::InvalidArgument("need at least one modality".into()));
    }
    if !(noise_std.is_finite() && noise_std >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise std must be >= 0, got {noise_std}")));
    }
    let mut rng = seeds::rng(seed);
    let labels: Vec<usize> = (0..subjects).map(|j| 1 + j % 2).collect();
    let mut parts = Vec::with_capacity(modalities.len());
    let mut informative = Vec::new();
    let mut offset = 0;
    for m in modalities {
        if m.width == 0 || m.informative > m.width {
            return Err(Error::InvalidArgument(format!(
                "modality '{}' needs width >= informative >= 0 and width >= 1",
                m.name
            )));
        }
        let mut cols: Vec<usize> = (0..m.width).collect();
        cols.shuffle(&mut rng);
        let mut chosen = cols[..m.informative].to_vec();
        chosen.sort_unstable();
        let mut is_informative = vec![false; m.width];
        for &c in &chosen {
            is_informative[c] = true;
        }
        let mut x = DMatrix::zeros(subjects, m.width);
        for j in 0..subjects {
            let sign = if labels[j] == CLASS_HIGH { 0.5 } else { -0.5 };
            for c in 0..m.width {
                let z: f64 = StandardNormal.sample(&mut rng);
                let shift = if is_informative[c] { sign * separation } else { 0.0 };
                x[(j, c)] = shift + noise_std * z;
            }
        }
        informative.extend(chosen.iter().map(|c| c + offset));
        offset += m.width;
        parts.push((m.name.clone(), x));
    }
    let (features, blocks) = concat_modalities(&parts)?;
    Ok((Dataset::new(features, labels, blocks)?, informative))
}

/// [`gen_synthetic_with`] with class means one unit apart.
pub fn gen_synthetic(
    subjects: usize,
    modalities: &[ModalitySpec],
    noise_std: f64,
    seed: u64,
) -> Result<(Dataset, Vec<usize>)> {
    gen_synthetic_with(subjects, modalities, noise_std, 1.0, seed)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
            Error::format(path, line, format!("ragged row: expected {expected_len} fields, found {len}"))
        }
        other => Error::format(path, line, format!("{other:?}")),
    }
}

fn open_csv(path: &Path, has_headers: bool) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(has_headers)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn parse_rows(path: &Path, has_headers: bool) -> Result<(Vec<Vec<f64>>, usize)> {
    let mut reader = open_csv(path, has_headers)?;
    let mut rows = Vec::new();
    let mut width = None;
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let row = record
            .iter()
            .enumerate()
            .map(|(c, field)| {
                field
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::format(path, line, format!("column {c}: '{field}' is not a finite number")))
            })
            .collect::<Result<Vec<f64>>>()?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::format(
                    path,
                    line,
                    format!("ragged row: expected {w} fields, found {}", row.len()),
                ))
            }
            _ => {}
        }
        rows.push(row);
    }
    Ok((rows, width.unwrap_or(0)))
}

fn rows_to_matrix(rows: &[Vec<f64>], width: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), width, |r, c| rows[r][c])
}

pub fn load_features(path: &Path) -> Result<DMatrix<f64>> {
    let (rows, width) = parse_rows(path, true)?;
    if rows.is_empty() {
        return Err(Error::format(path, 1, "no data rows"));
    }
    Ok(rows_to_matrix(&rows, width))
}

pub fn load_labels(path: &Path) -> Result<Vec<usize>> {
    let mut reader = open_csv(path, true)?;
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != 1 {
            return Err(Error::format(path, line, format!("expected 1 field, found {}", record.len())));
        }
        let label = match record[0].parse::<usize>() {
            Ok(l @ (CLASS_LOW | CLASS_HIGH)) => l,
            _ => {
                return Err(Error::format(
                    path,
                    line,
                    format!("label '{}' is not one of 1, 2", &record[0]),
                ))
            }
        };
        labels.push(label);
    }
    Ok(labels)
}

pub fn load_blocks(path: &Path) -> Result<Vec<Block>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.line(), e.to_string()))
}

/// Reads the features and labels CSVs; blocks come from `manifest` or
/// default to one block spanning all columns.
pub fn load_dataset(features: &Path, labels: &Path, manifest: Option<&Path>) -> Result<Dataset> {
    let x = load_features(features)?;
    let y = load_labels(labels)?;
    if x.nrows() != y.len() {
        return Err(Error::format(
            labels,
            y.len() + 1,
            format!("{} labels for {} feature rows", y.len(), x.nrows()),
        ));
    }
    match manifest {
        Some(m) => Dataset::new(x, y, load_blocks(m)?),
        None => Dataset::single_block(x, y),
    }
}

pub fn load_timecourses(path: &Path) -> Result<TimeCourses> {
    let (rows, width) = parse_rows(path, false)?;
    TimeCourses::new(rows_to_matrix(&rows, width))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// Writes `f0,f1,…` then one row per subject. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn save_features(path: &Path, x: &DMatrix<f64>) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    let header: Vec<String> = (0..x.ncols()).map(|c| format!("f{c}")).collect();
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for row in x.row_iter() {
        let fields: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        writeln!(w, "{}", fields.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn save_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "label").map_err(io)?;
    for l in labels {
        writeln!(w, "{l}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn save_blocks(path: &Path, blocks: &[Block]) -> Result<()> {
    let text = serde_json::to_string_pretty(blocks)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn save_dataset(features: &Path, labels: &Path, manifest: Option<&Path>, ds: &Dataset) -> Result<()> {
    save_features(features, ds.features())?;
    save_labels(labels, ds.labels())?;
    if let Some(m) = manifest {
        save_blocks(m, ds.blocks())?;
    }
    Ok(())
}
