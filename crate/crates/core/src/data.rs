//! Dataset manifests, matrix CSV files, ingestion normalization and the
//! synthetic two-view connectome generator.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::multiplex::BrainNetwork;
use crate::numerics::{DenseTensor, Prng};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
/// Largest tolerated `|M(i,j) - M(j,i)|` in an input file.
pub const INPUT_SYMMETRY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    /// `+1` or `-1`.
    pub label: i8,
    pub source: BrainNetwork,
    pub target: Option<BrainNetwork>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewRange {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n: usize,
    pub source_view: String,
    pub target_view: Option<String>,
    /// Raw per-view ranges the loaded matrices were scaled from.
    pub normalization: BTreeMap<String, ViewRange>,
    pub subjects: Vec<Subject>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn labels(&self) -> Vec<i8> {
        self.subjects.iter().map(|s| s.label).collect()
    }

    pub fn has_targets(&self) -> bool {
        self.subjects.iter().all(|s| s.target.is_some())
    }

    /// First subject lacking a target, as a `MissingTarget` error.
    pub fn require_targets(&self) -> Result<()> {
        match self.subjects.iter().find(|s| s.target.is_none()) {
            Some(s) => Err(Error::MissingTarget(s.id.clone())),
            None => Ok(()),
        }
    }

    /// Copy of the dataset with labels permuted by `rng`.
    pub fn with_shuffled_labels(&self, rng: &mut Prng) -> Self {
        let mut labels = self.labels();
        rng.shuffle(&mut labels);
        let mut out = self.clone();
        for (s, l) in out.subjects.iter_mut().zip(labels) {
            s.label = l;
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestSubject {
    id: String,
    label: String,
    source: String,
    target: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    n: usize,
    source_view: String,
    target_view: Option<String>,
    normalization: Option<BTreeMap<String, ViewRange>>,
    subjects: Vec<ManifestSubject>,
}

fn parse_label(raw: &str, path: &Path) -> Result<i8> {
    match raw.trim() {
        "+1" | "1" => Ok(1),
        "-1" => Ok(-1),
        other => Err(Error::Parse {
            path: path.to_path_buf(),
            message: format!("label must be \"+1\" or \"-1\", got {other:?}"),
        }),
    }
}

fn format_label(label: i8) -> &'static str {
    if label > 0 {
        "+1"
    } else {
        "-1"
    }
}

/// Reads an `n × n` CSV matrix; checks shape and symmetry, returns it raw.
pub fn read_matrix_csv(path: &Path, n: usize) -> Result<DenseTensor> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|field| {
                field.trim().parse::<f64>().map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    message: format!("line {}: {field:?}: {e}", line_no + 1),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let count = rows.len();
    for (r, row) in rows.iter().enumerate() {
        if row.len() != count {
            return Err(Error::NonSquare {
                path: path.to_path_buf(),
                rows: count,
                row: r,
                cols: row.len(),
            });
        }
    }
    if count != n {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            message: format!("expected a {n}x{n} matrix, found {count}x{count}"),
        });
    }
    let m = DenseTensor::from_rows(&rows)?;
    if !m.is_finite() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            message: "non-finite entry".into(),
        });
    }
    for i in 0..n {
        for j in i + 1..n {
            let gap = (m[(i, j)] - m[(j, i)]).abs();
            if gap > INPUT_SYMMETRY_TOL {
                return Err(Error::Asymmetry {
                    path: path.to_path_buf(),
                    i,
                    j,
                    gap,
                });
            }
        }
    }
    Ok(m)
}

pub fn write_matrix_csv(path: &Path, m: &DenseTensor) -> Result<()> {
    let mut out = String::new();
    for i in 0..m.rows() {
        let line: Vec<String> = m.row(i).iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn symmetrize_zero_diag(m: &mut DenseTensor) {
    let n = m.rows();
    for i in 0..n {
        m[(i, i)] = 0.0;
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

fn off_diagonal_range<'a>(mats: impl Iterator<Item = &'a DenseTensor>) -> Option<ViewRange> {
    let mut range: Option<ViewRange> = None;
    for m in mats {
        let n = m.rows();
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let v = m[(i, j)];
                let r = range.get_or_insert(ViewRange { min: v, max: v });
                r.min = r.min.min(v);
                r.max = r.max.max(v);
            }
        }
    }
    range
}

fn normalize_view(mats: &mut [DenseTensor], range: ViewRange) {
    let span = range.max - range.min;
    for m in mats {
        let n = m.rows();
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = if i == j {
                    0.0
                } else {
                    ((m[(i, j)] - range.min) / span).clamp(0.0, 1.0)
                };
            }
        }
    }
}

fn view_range(
    manifest: &Manifest,
    view: &str,
    mats: &[DenseTensor],
    path: &Path,
) -> Result<ViewRange> {
    let range = match manifest.normalization.as_ref().and_then(|m| m.get(view)) {
        Some(r) => *r,
        None => off_diagonal_range(mats.iter()).ok_or(Error::EmptyDataset)?,
    };
    if !(range.min.is_finite() && range.max.is_finite() && range.min < range.max) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            message: format!("view {view:?} has degenerate range [{}, {}]", range.min, range.max),
        });
    }
    Ok(range)
}

/// Loads a dataset: symmetrizes, zeroes diagonals and min-max scales each view
/// with its global range (from the manifest when recorded, else computed).
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let manifest_path = if manifest_path.is_dir() {
        manifest_path.join(MANIFEST_FILE)
    } else {
        manifest_path.to_path_buf()
    };
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: manifest_path.clone(),
        message: e.to_string(),
    })?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::Parse {
            path: manifest_path,
            message: format!("unsupported manifest version {}", manifest.version),
        });
    }
    if manifest.subjects.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let root = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let n = manifest.n;

    let mut seen = std::collections::HashSet::new();
    let mut labels = Vec::new();
    let mut sources = Vec::new();
    let mut targets: Vec<Option<DenseTensor>> = Vec::new();
    for s in &manifest.subjects {
        if !seen.insert(s.id.clone()) {
            return Err(Error::DuplicateId(s.id.clone()));
        }
        labels.push(parse_label(&s.label, &manifest_path)?);
        let mut m = read_matrix_csv(&root.join(&s.source), n)?;
        symmetrize_zero_diag(&mut m);
        sources.push(m);
        targets.push(match &s.target {
            Some(rel) => {
                let mut m = read_matrix_csv(&root.join(rel), n)?;
                symmetrize_zero_diag(&mut m);
                Some(m)
            }
            None => None,
        });
    }

    let mut normalization = BTreeMap::new();
    let source_range = view_range(&manifest, &manifest.source_view, &sources, &manifest_path)?;
    normalize_view(&mut sources, source_range);
    normalization.insert(manifest.source_view.clone(), source_range);

    let target_view = manifest.target_view.clone();
    let present: Vec<usize> = (0..targets.len()).filter(|&k| targets[k].is_some()).collect();
    if !present.is_empty() {
        let view = target_view.clone().unwrap_or_else(|| "target".to_string());
        let mut mats: Vec<DenseTensor> = present.iter().map(|&k| targets[k].take().unwrap()).collect();
        let range = view_range(&manifest, &view, &mats, &manifest_path)?;
        normalize_view(&mut mats, range);
        normalization.insert(view, range);
        for (k, m) in present.into_iter().zip(mats) {
            targets[k] = Some(m);
        }
    }

    let source_label = manifest.source_view.clone();
    let target_label = target_view.clone().unwrap_or_else(|| "target".to_string());
    let subjects = manifest
        .subjects
        .iter()
        .zip(labels)
        .zip(sources.into_iter().zip(targets))
        .map(|((s, label), (src, tgt))| {
            Ok(Subject {
                id: s.id.clone(),
                label,
                source: BrainNetwork::new(src, source_label.clone())?,
                target: tgt.map(|t| BrainNetwork::new(t, target_label.clone())).transpose()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Dataset {
        n,
        source_view: manifest.source_view,
        target_view,
        normalization,
        subjects,
    })
}

/// Writes `manifest.json` plus one CSV per network into `dir`. Matrices are
/// already normalized, so the manifest records the identity range `[0, 1]`.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let identity = ViewRange { min: 0.0, max: 1.0 };
    let mut normalization = BTreeMap::new();
    normalization.insert(dataset.source_view.clone(), identity);
    if let Some(v) = &dataset.target_view {
        normalization.insert(v.clone(), identity);
    }
    let mut subjects = Vec::with_capacity(dataset.subjects.len());
    for s in &dataset.subjects {
        let source = format!("{}_source.csv", s.id);
        write_matrix_csv(&dir.join(&source), s.source.weights())?;
        let target = match &s.target {
            Some(t) => {
                let name = format!("{}_target.csv", s.id);
                write_matrix_csv(&dir.join(&name), t.weights())?;
                Some(name)
            }
            None => None,
        };
        subjects.push(ManifestSubject {
            id: s.id.clone(),
            label: format_label(s.label).to_string(),
            source,
            target,
        });
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        n: dataset.n,
        source_view: dataset.source_view.clone(),
        target_view: dataset.target_view.clone(),
        normalization: Some(normalization),
        subjects,
    };
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMap {
    /// `mix · s² + (1 − mix) · s[π, π]` for a fixed node permutation `π`.
    Mixed,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub subjects: usize,
    pub n: usize,
    /// Fraction of subjects labelled `+1`.
    pub positive_fraction: f64,
    /// Mean edge weight of the source base field.
    pub base_mean: f64,
    /// Std of the per-subject node latents; the base is `m + (z_i + z_j)/2`.
    pub node_scale: f64,
    pub source_noise: f64,
    pub target_map: TargetMap,
    /// Weight of the squared term in [`TargetMap::Mixed`].
    pub target_mix: f64,
    /// The class signal lives on all edges among this many randomly chosen nodes.
    pub signal_nodes: usize,
    /// Mean source offset between the classes on the signal edges.
    pub delta: f64,
    /// Within-class std of the per-subject signal severity, in units of the
    /// class gap. Severity is `[label = +1] + signal_spread * N(0, 1)` and
    /// scales both the source and the target offsets.
    pub signal_spread: f64,
    /// Target offset added to class `+1` on the target signal edges.
    pub target_delta: f64,
    /// The target signal lives on every edge touching a target signal node.
    /// Those nodes are the source signal nodes unless this is set.
    pub independent_target_signal: bool,
    pub target_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            subjects: 120,
            n: 35,
            positive_fraction: 0.5,
            base_mean: 0.8,
            node_scale: 0.15,
            source_noise: 0.03,
            target_map: TargetMap::Mixed,
            target_mix: 0.5,
            signal_nodes: 8,
            delta: 0.03,
            signal_spread: 0.35,
            target_delta: 0.05,
            independent_target_signal: false,
            target_noise: 0.02,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.subjects < 4 {
            return fail(format!("need at least 4 subjects, got {}", self.subjects));
        }
        if self.n < 2 {
            return fail(format!("need n >= 2, got {}", self.n));
        }
        if !(self.positive_fraction > 0.0 && self.positive_fraction < 1.0) {
            return fail("positive_fraction must lie in (0, 1)".into());
        }
        if self.signal_nodes > self.n {
            return fail(format!("signal_nodes {} exceeds n {}", self.signal_nodes, self.n));
        }
        if !(0.0..=1.0).contains(&self.target_mix) {
            return fail("target_mix must lie in [0, 1]".into());
        }
        let nonneg = [
            ("delta", self.delta),
            ("target_delta", self.target_delta),
            ("signal_spread", self.signal_spread),
            ("node_scale", self.node_scale),
            ("source_noise", self.source_noise),
            ("target_noise", self.target_noise),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return fail(format!("{name} must be a non-negative number"));
            }
        }
        if !self.base_mean.is_finite() {
            return fail("base_mean must be finite".into());
        }
        Ok(())
    }
}

fn node_subset(rng: &mut Prng, n: usize, k: usize) -> Vec<bool> {
    let mut member = vec![false; n];
    for &i in rng.permutation(n).iter().take(k) {
        member[i] = true;
    }
    member
}

/// Synthetic two-view dataset; every network is a valid [`BrainNetwork`].
/// Structure shared by every subject of a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignalLayout {
    /// The source class signal sits on edges with both endpoints here.
    pub source_nodes: Vec<usize>,
    /// The target class signal sits on edges touching at least one of these.
    pub target_nodes: Vec<usize>,
    /// Node permutation of the mixed target map.
    pub permutation: Vec<usize>,
}

impl SignalLayout {
    pub fn is_source_signal_edge(&self, i: usize, j: usize) -> bool {
        i != j && self.source_nodes.contains(&i) && self.source_nodes.contains(&j)
    }

    pub fn is_target_signal_edge(&self, i: usize, j: usize) -> bool {
        i != j && (self.target_nodes.contains(&i) || self.target_nodes.contains(&j))
    }
}

fn members(mask: &[bool]) -> Vec<usize> {
    (0..mask.len()).filter(|&i| mask[i]).collect()
}

/// The signal layout `generate_synthetic(cfg)` plants.
pub fn synthetic_layout(cfg: &SynthConfig) -> Result<SignalLayout> {
    cfg.validate()?;
    let n = cfg.n;
    let mut structure = Prng::new(cfg.seed).split("structure");
    let source = node_subset(&mut structure, n, cfg.signal_nodes);
    let independent = node_subset(&mut structure, n, cfg.signal_nodes);
    let permutation = structure.permutation(n);
    Ok(SignalLayout {
        source_nodes: members(&source),
        target_nodes: members(if cfg.independent_target_signal { &independent } else { &source }),
        permutation,
    })
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    let layout = synthetic_layout(cfg)?;
    let n = cfg.n;
    let root = Prng::new(cfg.seed);
    let perm = &layout.permutation;

    let positives = ((cfg.subjects as f64) * cfg.positive_fraction).round() as usize;
    let mut labels: Vec<i8> = (0..cfg.subjects).map(|k| if k < positives { 1 } else { -1 }).collect();
    root.split("labels").shuffle(&mut labels);

    let mut subjects = Vec::with_capacity(cfg.subjects);
    for (k, &label) in labels.iter().enumerate() {
        let mut rng = root.split(&format!("subject.{k}"));
        let z: Vec<f64> = (0..n).map(|_| cfg.node_scale * rng.normal()).collect();
        let on = if label > 0 { 1.0 } else { 0.0 };
        let severity = on + cfg.signal_spread * rng.normal();

        let mut s = DenseTensor::zeros(&[n, n]);
        for i in 0..n {
            for j in 0..i {
                let signal = if layout.is_source_signal_edge(i, j) { cfg.delta * severity } else { 0.0 };
                let v = cfg.base_mean + 0.5 * (z[i] + z[j]) + cfg.source_noise * rng.normal() + signal;
                let v = v.clamp(0.0, 1.0);
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }

        let mut t = DenseTensor::zeros(&[n, n]);
        for i in 0..n {
            for j in 0..i {
                let mapped = match cfg.target_map {
                    TargetMap::Mixed => {
                        cfg.target_mix * s[(i, j)] * s[(i, j)] + (1.0 - cfg.target_mix) * s[(perm[i], perm[j])]
                    }
                    TargetMap::Identity => s[(i, j)],
                };
                let signal = if layout.is_target_signal_edge(i, j) {
                    cfg.target_delta * severity
                } else {
                    0.0
                };
                let noise = if cfg.target_noise > 0.0 { cfg.target_noise * rng.normal() } else { 0.0 };
                let v = (mapped + signal + noise).clamp(0.0, 1.0);
                t[(i, j)] = v;
                t[(j, i)] = v;
            }
        }

        subjects.push(Subject {
            id: format!("sub-{:04}", k + 1),
            label,
            source: BrainNetwork::new(s, "source")?,
            target: Some(BrainNetwork::new(t, "target")?),
        });
    }

    let mut normalization = BTreeMap::new();
    normalization.insert("source".to_string(), ViewRange { min: 0.0, max: 1.0 });
    normalization.insert("target".to_string(), ViewRange { min: 0.0, max: 1.0 });
    Ok(Dataset {
        n,
        source_view: "source".into(),
        target_view: Some("target".into()),
        normalization,
        subjects,
    })
}
