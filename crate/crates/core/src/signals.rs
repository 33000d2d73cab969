//! Data model and ingestion: per-subject multivariate time series, dataset
//! manifests, row standardization, and a seeded synthetic generator with
//! known directed coupling.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum series length; the transfer-entropy prior needs history.
pub const MIN_TIMEPOINTS: usize = 8;

/// Relative tolerance under which a row counts as constant.
const CONSTANT_ROW_TOL: f64 = 1e-12;

/// Per-subject multivariate time series: one row per region, one column per
/// time point.
#[derive(Debug, Clone, PartialEq)]
pub struct BoldMatrix {
    values: Array2<f64>,
    region_ids: Vec<String>,
}

impl BoldMatrix {
    pub fn new(values: Array2<f64>, region_ids: Vec<String>) -> Result<Self> {
        let (n, t) = values.dim();
        if n < 2 {
            return Err(Error::Schema(format!("need at least 2 regions, got {n}")));
        }
        if t < MIN_TIMEPOINTS {
            return Err(Error::Schema(format!(
                "need at least {MIN_TIMEPOINTS} time points, got {t}"
            )));
        }
        if region_ids.len() != n {
            return Err(Error::Schema(format!(
                "{} region ids for {} rows",
                region_ids.len(),
                n
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Schema("non-finite entry in time series".into()));
        }
        Ok(BoldMatrix { values, region_ids })
    }

    /// Rows with generated `roi_<k>` identifiers.
    pub fn from_values(values: Array2<f64>) -> Result<Self> {
        let ids = (0..values.nrows()).map(|i| format!("roi_{i}")).collect();
        BoldMatrix::new(values, ids)
    }

    pub fn n_regions(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_timepoints(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn region_ids(&self) -> &[String] {
        &self.region_ids
    }

    /// Standardize every row to mean 0 and unit population variance.
    /// Constant rows become all-zero and are reported by index.
    pub fn zscore_rows(&self) -> (BoldMatrix, Vec<usize>) {
        let mut out = self.values.clone();
        let mut constant = Vec::new();
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            match zscore_row(row.as_slice().expect("row is contiguous")) {
                Some(z) => {
                    for (dst, src) in row.iter_mut().zip(z) {
                        *dst = src;
                    }
                }
                None => {
                    row.fill(0.0);
                    constant.push(i);
                }
            }
        }
        (
            BoldMatrix {
                values: out,
                region_ids: self.region_ids.clone(),
            },
            constant,
        )
    }
}

/// Standardize one series with the population (1/T) variance.
/// Returns `None` for constant input.
pub fn zscore_row(row: &[f64]) -> Option<Vec<f64>> {
    let t = row.len() as f64;
    let mean = row.iter().sum::<f64>() / t;
    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t;
    let scale = CONSTANT_ROW_TOL * mean.abs().max(1.0);
    if var.sqrt() <= scale {
        return None;
    }
    let std = var.sqrt();
    Some(row.iter().map(|v| (v - mean) / std).collect())
}

/// One subject: identifier, series, and an optional class label.
#[derive(Debug, Clone)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub bold: BoldMatrix,
    pub label: Option<u8>,
}

/// A fully materialized dataset.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub name: String,
    pub subjects: Vec<SubjectRecord>,
    pub n_regions: usize,
    /// Time points of the first subject; individual subjects may differ.
    pub n_timepoints: usize,
    pub labeled: bool,
}

impl DatasetManifest {
    pub fn new(name: String, subjects: Vec<SubjectRecord>, labeled: bool) -> Result<Self> {
        let first = subjects
            .first()
            .ok_or_else(|| Error::Schema("dataset has no subjects".into()))?;
        let n_regions = first.bold.n_regions();
        let n_timepoints = first.bold.n_timepoints();
        let mut seen = std::collections::HashSet::new();
        for s in &subjects {
            if !seen.insert(s.subject_id.clone()) {
                return Err(Error::Schema(format!(
                    "duplicate subject id `{}`",
                    s.subject_id
                )));
            }
            if s.bold.n_regions() != n_regions {
                return Err(Error::Schema(format!(
                    "subject `{}` has {} regions, expected {}",
                    s.subject_id,
                    s.bold.n_regions(),
                    n_regions
                )));
            }
            if labeled {
                match s.label {
                    Some(0) | Some(1) => {}
                    Some(other) => {
                        return Err(Error::Schema(format!(
                            "subject `{}` has label {other}, expected 0 or 1",
                            s.subject_id
                        )))
                    }
                    None => {
                        return Err(Error::Schema(format!(
                            "labeled dataset but subject `{}` has no label",
                            s.subject_id
                        )))
                    }
                }
            }
        }
        Ok(DatasetManifest {
            name,
            subjects,
            n_regions,
            n_timepoints,
            labeled,
        })
    }

    /// The shared time-point count, if all subjects agree.
    pub fn uniform_timepoints(&self) -> Option<usize> {
        let t = self.n_timepoints;
        self.subjects
            .iter()
            .all(|s| s.bold.n_timepoints() == t)
            .then_some(t)
    }

    /// Copy with labels removed, for pretraining corpora.
    pub fn without_labels(&self) -> DatasetManifest {
        let mut out = self.clone();
        out.labeled = false;
        for s in &mut out.subjects {
            s.label = None;
        }
        out
    }

    pub fn find_subject(&self, id: &str) -> Result<&SubjectRecord> {
        self.subjects
            .iter()
            .find(|s| s.subject_id == id)
            .ok_or_else(|| Error::UnknownSubject(id.to_string()))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestFile {
    name: String,
    n_regions: usize,
    labeled: bool,
    subjects: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    id: String,
    path: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<u8>,
}

/// Load a dataset from its JSON manifest. Per-subject CSV paths are
/// resolved relative to the manifest's directory.
pub fn load_dataset(manifest_path: &Path) -> Result<DatasetManifest> {
    let text =
        fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: ManifestFile = serde_json::from_str(&text).map_err(|e| {
        Error::Schema(format!("manifest {}: {e}", manifest_path.display()))
    })?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut subjects = Vec::with_capacity(manifest.subjects.len());
    for entry in &manifest.subjects {
        let csv_path = base.join(&entry.path);
        let values = read_csv_matrix(&csv_path)?;
        if values.nrows() != manifest.n_regions {
            return Err(Error::Schema(format!(
                "subject `{}` has {} rows, manifest declares {} regions",
                entry.id,
                values.nrows(),
                manifest.n_regions
            )));
        }
        let bold = BoldMatrix::from_values(values)?;
        let label = if manifest.labeled { entry.label } else { None };
        if manifest.labeled && label.is_none() {
            return Err(Error::Schema(format!(
                "labeled dataset but subject `{}` has no label",
                entry.id
            )));
        }
        subjects.push(SubjectRecord {
            subject_id: entry.id.clone(),
            bold,
            label,
        });
    }
    DatasetManifest::new(manifest.name, subjects, manifest.labeled)
}

/// Write a dataset as `manifest.json` plus one headerless CSV per subject.
/// Values print in shortest round-trip form, so read-back is exact.
pub fn save_dataset(dataset: &DatasetManifest, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(dataset.subjects.len());
    for subject in &dataset.subjects {
        let file_name = format!("{}.csv", subject.subject_id);
        write_csv_matrix(&dir.join(&file_name), subject.bold.values())?;
        entries.push(ManifestEntry {
            id: subject.subject_id.clone(),
            path: file_name,
            label: if dataset.labeled { subject.label } else { None },
        });
    }
    let manifest = ManifestFile {
        name: dataset.name.clone(),
        n_regions: dataset.n_regions,
        labeled: dataset.labeled,
        subjects: entries,
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Schema(format!("manifest serialization: {e}")))?;
    crate::checkpoint::atomic_write(&dir.join("manifest.json"), text.as_bytes())
}

fn read_csv_matrix(path: &Path) -> Result<Array2<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for (c, cell) in line.split(',').enumerate() {
            let value: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                row: r + 1,
                column: c + 1,
                message: format!("not a number: `{}`", cell.trim()),
            })?;
            row.push(value);
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    row: r + 1,
                    column: row.len(),
                    message: format!("expected {} columns, got {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Schema(format!("{}: empty CSV", path.display())));
    }
    let n = rows.len();
    let t = rows[0].len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((n, t), flat)
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

fn write_csv_matrix(path: &Path, values: &Array2<f64>) -> Result<()> {
    let mut out = String::new();
    for row in values.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    crate::checkpoint::atomic_write(path, out.as_bytes())
}

/// Export an N x N matrix as CSV (priors, learned graphs).
pub fn write_square_csv(path: &Path, values: &Array2<f64>) -> Result<()> {
    write_csv_matrix(path, values)
}

/// Parameters of the synthetic vector-autoregressive benchmark generator.
///
/// Each subject follows `x_t = coupling * C_k x_{t-1} + eps_t` with a sparse
/// class-specific directed coupling template `C_k` (unit spectral radius, so
/// `coupling < 1` keeps the process stationary) and iid Gaussian noise.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub n_regions: usize,
    pub n_timepoints: usize,
    pub n_classes: usize,
    pub coupling_strength: f64,
    pub noise_std: f64,
    pub seed: u64,
}

/// Steps discarded before recording, so series start near stationarity.
const SYNTH_BURN_IN: usize = 100;

/// Self-coupling shared by every region in every class template, relative
/// to the unit cross-edge weight.
const SELF_MEMORY: f64 = 1.0;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 {
            return Err(Error::Config("n_subjects must be >= 1".into()));
        }
        if self.n_regions < 2 {
            return Err(Error::Config("n_regions must be >= 2".into()));
        }
        if self.n_timepoints < MIN_TIMEPOINTS {
            return Err(Error::Config(format!(
                "n_timepoints must be >= {MIN_TIMEPOINTS}"
            )));
        }
        if !(self.n_classes == 1 || self.n_classes == 2) {
            return Err(Error::Config("n_classes must be 1 or 2".into()));
        }
        if !self.coupling_strength.is_finite()
            || self.coupling_strength < 0.0
            || self.coupling_strength >= 1.0
        {
            return Err(Error::Config(
                "coupling_strength must lie in [0, 1)".into(),
            ));
        }
        if !self.noise_std.is_finite() || self.noise_std < 0.0 {
            return Err(Error::Config("noise_std must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// The class coupling templates, `templates()[k][target][source] > 0`
    /// meaning region `source` drives region `target`. Templates are scaled
    /// to unit spectral radius.
    ///
    /// Both classes carry the same self-memory on every region (BOLD-like
    /// temporal persistence, which is what makes lagged coupling visible in
    /// zero-lag correlation). They differ only in cross-region topology:
    /// class 0 spreads one outgoing edge per region, class 1 adds hub
    /// regions that each drive half the brain. The edge sets differ in well
    /// over a quarter of their entries and the degree structure separates
    /// the classes even under region-permutation-invariant readouts.
    pub fn templates(&self) -> Vec<Array2<f64>> {
        let mut rng = template_rng(self.seed);
        let n = self.n_regions;
        let class0 = distributed_edges(n, &mut rng);
        let mut templates = vec![edges_to_matrix(n, &class0)];
        if self.n_classes == 2 {
            // Deterministic retry in case a small-n draw overlaps too much.
            let mut class1 = hub_edges(n, &mut rng);
            for _ in 0..16 {
                if edge_difference(&class0, &class1) * 4 >= class0.len().max(class1.len()) {
                    break;
                }
                class1 = hub_edges(n, &mut rng);
            }
            templates.push(edges_to_matrix(n, &class1));
        }
        for t in &mut templates {
            for k in 0..n {
                t[[k, k]] = SELF_MEMORY;
            }
            let radius = spectral_radius(t);
            if radius > 1e-6 {
                t.mapv_inplace(|v| v / radius);
            }
        }
        templates
    }

    /// Generate the dataset. A fixed `(seed, parameters)` pair reproduces
    /// bit-identical values.
    pub fn generate(&self) -> Result<DatasetManifest> {
        self.validate()?;
        let templates = self.templates();
        let mut rng = series_rng(self.seed);
        let n = self.n_regions;
        let total_steps = SYNTH_BURN_IN + self.n_timepoints;
        let width = self.n_subjects.to_string().len().max(4);
        let mut subjects = Vec::with_capacity(self.n_subjects);
        for s in 0..self.n_subjects {
            let label = (s % self.n_classes) as u8;
            let transition = templates[label as usize].mapv(|v| v * self.coupling_strength);
            let mut x = Array1::<f64>::zeros(n);
            for v in x.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v = z * self.noise_std;
            }
            let mut values = Array2::<f64>::zeros((n, self.n_timepoints));
            for t in 0..total_steps {
                let mut next = transition.dot(&x);
                for v in next.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *v += z * self.noise_std;
                }
                x = next;
                if t >= SYNTH_BURN_IN {
                    values.column_mut(t - SYNTH_BURN_IN).assign(&x);
                }
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(
                    "generated series diverged; coupling template is non-stationary".into(),
                ));
            }
            subjects.push(SubjectRecord {
                subject_id: format!("subj_{s:0width$}"),
                bold: BoldMatrix::from_values(values)?,
                label: Some(label),
            });
        }
        DatasetManifest::new(
            format!("synth_seed{}", self.seed),
            subjects,
            true,
        )
    }
}

/// One-call form of [`SynthConfig::generate`].
#[allow(clippy::too_many_arguments)]
pub fn synth_generate(
    n_subjects: usize,
    n_regions: usize,
    n_timepoints: usize,
    n_classes: usize,
    coupling_strength: f64,
    noise_std: f64,
    seed: u64,
) -> Result<DatasetManifest> {
    SynthConfig {
        n_subjects,
        n_regions,
        n_timepoints,
        n_classes,
        coupling_strength,
        noise_std,
        seed,
    }
    .generate()
}

fn template_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(1))
}

fn series_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn edges_to_matrix(n: usize, edges: &[(usize, usize)]) -> Array2<f64> {
    let mut m = Array2::<f64>::zeros((n, n));
    for &(source, target) in edges {
        m[[target, source]] = 1.0;
    }
    m
}

/// Every region drives one seeded random target.
fn distributed_edges(n: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let mut edges = Vec::with_capacity(n);
    for source in 0..n {
        let mut targets: Vec<usize> = (0..n).filter(|&t| t != source).collect();
        targets.shuffle(rng);
        edges.push((source, targets[0]));
    }
    edges.sort_unstable();
    edges
}

/// A few hub regions drive half the brain each; every other region sends a
/// single edge.
fn hub_edges(n: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let n_hubs = 2.max(n / 8).min(n / 2);
    let hub_out = (n / 2).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let hubs: Vec<usize> = order[..n_hubs].to_vec();
    let mut edges = Vec::new();
    for &hub in &hubs {
        let mut targets: Vec<usize> = (0..n).filter(|&t| t != hub).collect();
        targets.shuffle(rng);
        for &target in &targets[..hub_out] {
            edges.push((hub, target));
        }
    }
    for source in 0..n {
        if hubs.contains(&source) {
            continue;
        }
        let mut targets: Vec<usize> = (0..n).filter(|&t| t != source).collect();
        targets.shuffle(rng);
        edges.push((source, targets[0]));
    }
    edges.sort_unstable();
    edges.dedup();
    edges
}

fn edge_difference(a: &[(usize, usize)], b: &[(usize, usize)]) -> usize {
    let sa: std::collections::HashSet<_> = a.iter().collect();
    let sb: std::collections::HashSet<_> = b.iter().collect();
    sa.symmetric_difference(&sb).count()
}

/// Spectral radius estimate by norm growth of repeated application,
/// adequate for nonnegative templates.
fn spectral_radius(m: &Array2<f64>) -> f64 {
    let n = m.nrows();
    let mut v = Array1::<f64>::from_elem(n, 1.0 / (n as f64).sqrt());
    let mut radius = 0.0;
    for _ in 0..200 {
        let next = m.dot(&v);
        let norm = next.dot(&next).sqrt();
        if norm < 1e-300 {
            return 0.0;
        }
        radius = norm;
        v = next.mapv(|x| x / norm);
    }
    radius
}
