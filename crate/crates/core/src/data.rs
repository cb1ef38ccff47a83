//! Datasets: synthetic Gaussian mixtures, an out-of-distribution variant,
//! CSV ingestion and stratified splitting.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution as _, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CudError, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub name: String,
}

impl Dataset {
    pub fn new(
        features: Vec<Vec<f64>>,
        labels: Vec<usize>,
        num_classes: usize,
        name: impl Into<String>,
    ) -> Result<Self> {
        if features.is_empty() {
            return Err(CudError::Parameter("dataset must have at least one row".into()));
        }
        if features.len() != labels.len() {
            return Err(CudError::Dimension {
                expected: features.len(),
                actual: labels.len(),
            });
        }
        let dim = features[0].len();
        for (i, row) in features.iter().enumerate() {
            if row.len() != dim {
                return Err(CudError::Dimension {
                    expected: dim,
                    actual: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(CudError::Domain(format!("non-finite feature in row {i}")));
            }
        }
        if let Some(bad) = labels.iter().find(|l| **l >= num_classes) {
            return Err(CudError::Parameter(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Dataset {
            features,
            labels,
            num_classes,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features[0].len()
    }

    pub fn subset(&self, indices: &[usize], name: impl Into<String>) -> Dataset {
        Dataset {
            features: indices.iter().map(|&i| self.features[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            name: name.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixtureSpec {
    pub num_classes: usize,
    pub dims: usize,
    /// Radius of the sphere the class means lie on, in units of the noise
    /// standard deviation.
    pub class_separation: f64,
    pub samples_per_class: usize,
    pub seed: u64,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        MixtureSpec {
            num_classes: 20,
            dims: 16,
            class_separation: 1.5,
            samples_per_class: 400,
            seed: 0,
        }
    }
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.dims < 2 || self.samples_per_class == 0 {
            return Err(CudError::Parameter(format!("invalid mixture spec {self:?}")));
        }
        if !(self.class_separation.is_finite() && self.class_separation > 0.0) {
            return Err(CudError::Parameter("class_separation must be positive".into()));
        }
        Ok(())
    }
}

fn normal_vector(stream: &mut rng::Stream, dims: usize) -> Vec<f64> {
    (0..dims).map(|_| StandardNormal.sample(stream)).collect()
}

fn point_on_sphere(stream: &mut rng::Stream, dims: usize, radius: f64) -> Vec<f64> {
    loop {
        let v = normal_vector(stream, dims);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| radius * x / norm).collect();
        }
    }
}

/// Class means of the mixture, drawn on a sphere of radius `class_separation`.
pub fn mixture_means(spec: &MixtureSpec) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    let mut stream = rng::stream(spec.seed, "mixture-means");
    Ok((0..spec.num_classes)
        .map(|_| point_on_sphere(&mut stream, spec.dims, spec.class_separation))
        .collect())
}

fn sample_around(means: &[Vec<f64>], spec: &MixtureSpec, stream: &mut rng::Stream, name: &str) -> Result<Dataset> {
    let mut features = Vec::with_capacity(means.len() * spec.samples_per_class);
    let mut labels = Vec::with_capacity(features.capacity());
    for (class, mean) in means.iter().enumerate() {
        for _ in 0..spec.samples_per_class {
            let noise = normal_vector(stream, spec.dims);
            features.push(mean.iter().zip(noise).map(|(m, e)| m + e).collect());
            labels.push(class);
        }
    }
    Dataset::new(features, labels, means.len(), name)
}

/// Isotropic unit-variance Gaussian around each class mean, rows grouped by class.
pub fn gaussian_mixture_generate(spec: &MixtureSpec) -> Result<Dataset> {
    let means = mixture_means(spec)?;
    let mut stream = rng::stream(spec.seed, "mixture-samples");
    sample_around(&means, spec, &mut stream, "mixture")
}

/// Means of the shifted mixture: same sphere, but every mean is at least
/// `class_separation` away from every in-distribution mean.
pub fn ood_means(spec: &MixtureSpec, shift_seed: u64) -> Result<Vec<Vec<f64>>> {
    if shift_seed == spec.seed {
        return Err(CudError::Parameter(
            "shift_seed must differ from the in-distribution seed".into(),
        ));
    }
    let ind = mixture_means(spec)?;
    let mut stream = rng::stream(shift_seed, "ood-means");
    let mut out = Vec::with_capacity(spec.num_classes);
    const MAX_TRIES: usize = 100_000;
    for _ in 0..spec.num_classes {
        let mut tries = 0;
        let mean = loop {
            let cand = point_on_sphere(&mut stream, spec.dims, spec.class_separation);
            if ind.iter().all(|m| euclidean(m, &cand) >= spec.class_separation) {
                break cand;
            }
            tries += 1;
            if tries >= MAX_TRIES {
                return Err(CudError::Numerical(
                    "could not place OOD means away from the in-distribution means".into(),
                ));
            }
        };
        out.push(mean);
    }
    Ok(out)
}

/// A fresh mixture over a disjoint label space, used as out-of-distribution data.
pub fn ood_shift_generate(spec: &MixtureSpec, shift_seed: u64) -> Result<Dataset> {
    let means = ood_means(spec, shift_seed)?;
    let mut stream = rng::stream(shift_seed, "ood-samples");
    sample_around(&means, spec, &mut stream, "ood")
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Reads a headered CSV. Every column except `label_column` must be numeric.
/// Labels that all parse as non-negative integers are used as class indices;
/// otherwise labels are mapped to indices in order of first appearance.
pub fn load_csv(path: &Path, label_column: &str) -> Result<Dataset> {
    let shown = path.display().to_string();
    let ingest = |row: usize, message: String| CudError::Ingest {
        path: shown.clone(),
        row,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| ingest(0, e.to_string()))?;
    let headers = reader.headers().map_err(|e| ingest(1, e.to_string()))?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(ingest(1, "empty file".into()));
    }
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| ingest(1, format!("no column named {label_column:?}")))?;

    let mut features = Vec::new();
    let mut raw_labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| ingest(line, e.to_string()))?;
        if record.len() != headers.len() {
            return Err(ingest(
                line,
                format!("expected {} fields, found {}", headers.len(), record.len()),
            ));
        }
        let mut row = Vec::with_capacity(headers.len() - 1);
        for (j, cell) in record.iter().enumerate() {
            if j == label_idx {
                raw_labels.push(cell.trim().to_string());
                continue;
            }
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| ingest(line, format!("non-numeric value {cell:?} in column {:?}", &headers[j])))?;
            if !v.is_finite() {
                return Err(ingest(line, format!("non-finite value {cell:?} in column {:?}", &headers[j])));
            }
            row.push(v);
        }
        features.push(row);
    }
    if features.is_empty() {
        return Err(ingest(1, "no data rows".into()));
    }

    let numeric: Option<Vec<usize>> = raw_labels.iter().map(|l| l.parse::<usize>().ok()).collect();
    let (labels, num_classes) = match numeric {
        Some(ls) => {
            let c = ls.iter().max().map_or(0, |m| m + 1).max(2);
            (ls, c)
        }
        None => {
            let mut index: HashMap<&str, usize> = HashMap::new();
            let mut ls = Vec::with_capacity(raw_labels.len());
            for l in &raw_labels {
                let next = index.len();
                ls.push(*index.entry(l.as_str()).or_insert(next));
            }
            (ls, index.len().max(2))
        }
    };
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(features, labels, num_classes, name)
}

/// Writes `f0..f{d-1}` feature columns followed by the label column.
pub fn write_csv(dataset: &Dataset, path: &Path, label_column: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..dataset.dim()).map(|j| format!("f{j}")).collect();
    header.push(label_column.to_string());
    w.write_record(&header)?;
    for (row, label) in dataset.features.iter().zip(&dataset.labels) {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(label.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| CudError::io(path, e))
}

/// Largest-remainder apportionment of `total` over `weights` (sum of weights > 0).
fn apportion(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let ideal: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = ideal.iter().map(|x| x.floor() as usize).collect();
    let mut remaining = total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = ideal[a] - ideal[a].floor();
        let fb = ideal[b] - ideal[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        counts[i] += 1;
        remaining -= 1;
    }
    counts
}

/// Per-class split sizes: every cell is the floor or ceiling of
/// `class_count * fraction`, rows sum to the class counts and columns sum to
/// the largest-remainder global sizes. Residual units are placed with a
/// small max-flow so all three constraints hold at once.
fn stratified_counts(class_counts: &[usize], fractions: [f64; 3]) -> Vec<[usize; 3]> {
    let n: usize = class_counts.iter().sum();
    let global = apportion(&fractions, n);
    let mut cells: Vec<[usize; 3]> = Vec::with_capacity(class_counts.len());
    let mut can_raise: Vec<[bool; 3]> = Vec::with_capacity(class_counts.len());
    let fsum: f64 = fractions.iter().sum();
    for &nc in class_counts {
        let mut row = [0usize; 3];
        let mut raise = [false; 3];
        for s in 0..3 {
            let ideal = nc as f64 * fractions[s] / fsum;
            row[s] = (ideal + 1e-9).floor() as usize;
            raise[s] = ideal - row[s] as f64 > 1e-9;
        }
        cells.push(row);
        can_raise.push(raise);
    }
    let mut class_residual: Vec<usize> = class_counts
        .iter()
        .zip(&cells)
        .map(|(nc, row)| nc - row.iter().sum::<usize>())
        .collect();
    let mut split_residual: Vec<isize> = (0..3)
        .map(|s| global[s] as isize - cells.iter().map(|r| r[s]).sum::<usize>() as isize)
        .collect();

    // Augmenting paths: class -> split (+1 if raisable) or split -> class
    // (undo a previous raise). Graphs are tiny (3 split nodes).
    let mut raised: Vec<[bool; 3]> = vec![[false; 3]; class_counts.len()];
    while let Some(start) = class_residual.iter().position(|r| *r > 0) {
        // BFS over classes; reaching a split with positive residual ends the path.
        let mut prev_class: Vec<Option<(usize, usize)>> = vec![None; class_counts.len()];
        let mut visited = vec![false; class_counts.len()];
        let mut split_from: [Option<usize>; 3] = [None; 3];
        let mut queue = std::collections::VecDeque::from([start]);
        visited[start] = true;
        let mut found = None;
        'bfs: while let Some(c) = queue.pop_front() {
            for s in 0..3 {
                if !can_raise[c][s] || raised[c][s] || split_from[s].is_some() {
                    continue;
                }
                split_from[s] = Some(c);
                if split_residual[s] > 0 {
                    found = Some(s);
                    break 'bfs;
                }
                for c2 in 0..class_counts.len() {
                    if !visited[c2] && raised[c2][s] {
                        visited[c2] = true;
                        prev_class[c2] = Some((c, s));
                        queue.push_back(c2);
                    }
                }
            }
        }
        let Some(mut s) = found else {
            // Infeasible only through float noise; fall back to the first raisable split.
            let c = start;
            let s = (0..3).find(|&s| !raised[c][s]).unwrap_or(0);
            cells[c][s] += 1;
            class_residual[c] -= 1;
            split_residual[s] -= 1;
            continue;
        };
        split_residual[s] -= 1;
        let mut c = split_from[s].unwrap();
        loop {
            raised[c][s] = true;
            cells[c][s] += 1;
            match prev_class[c] {
                None => break,
                Some((pc, ps)) => {
                    // c gave up its raise on ps to pc
                    raised[c][ps] = false;
                    cells[c][ps] -= 1;
                    c = pc;
                    s = ps;
                }
            }
        }
        class_residual[c] -= 1;
    }
    cells
}

/// Stratified, deterministic split into (train, val, test). Row order within
/// each part follows the input order.
pub fn split(dataset: &Dataset, fractions: [f64; 3], seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let parts = split_indices(dataset, fractions, seed)?;
    let name = &dataset.name;
    let make = |idx: &[usize], tag: &str| Dataset {
        features: idx.iter().map(|&i| dataset.features[i].clone()).collect(),
        labels: idx.iter().map(|&i| dataset.labels[i]).collect(),
        num_classes: dataset.num_classes,
        name: format!("{name}/{tag}"),
    };
    let train = if parts[0].len() == dataset.len() {
        dataset.clone()
    } else {
        make(&parts[0], "train")
    };
    Ok((train, make(&parts[1], "val"), make(&parts[2], "test")))
}

/// Indices of the split parts, exposed for auditing.
pub fn split_indices(dataset: &Dataset, fractions: [f64; 3], seed: u64) -> Result<[Vec<usize>; 3]> {
    if fractions.iter().any(|f| !(f.is_finite() && *f >= 0.0)) || fractions.iter().sum::<f64>() <= 0.0 {
        return Err(CudError::Parameter(format!("invalid split fractions {fractions:?}")));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes];
    for (i, &y) in dataset.labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let counts: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let cells = stratified_counts(&counts, fractions);
    let mut stream = rng::stream(seed, "split");
    let mut parts: [Vec<usize>; 3] = Default::default();
    for (members, cell) in by_class.iter_mut().zip(&cells) {
        members.shuffle(&mut stream);
        let mut it = members.iter().copied();
        for (s, part) in parts.iter_mut().enumerate() {
            part.extend(it.by_ref().take(cell[s]));
        }
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok(parts)
}
