//! Multi-domain data: synthetic rotated-cluster tasks, the fixed-budget
//! resampler and drop-last mini-batching.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::seq::{index, SliceRandom};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};
use crate::neural::Matrix;
use crate::seeds::{self, Purpose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

/// Labeled samples from a single domain.
///
/// A dataset can be marked as held out; training code refuses such datasets,
/// so the target domain can only ever be evaluated on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainDataset {
    domain_id: String,
    class_count: usize,
    samples: Vec<Sample>,
    #[serde(default)]
    held_out: bool,
}

impl DomainDataset {
    pub fn new(domain_id: impl Into<String>, class_count: usize, samples: Vec<Sample>) -> Result<Self> {
        let domain_id = domain_id.into();
        if domain_id.is_empty() || domain_id.chars().any(char::is_whitespace) {
            return Err(FedError::Config(format!(
                "domain id must be non-empty without whitespace, got {domain_id:?}"
            )));
        }
        let first = samples
            .first()
            .ok_or_else(|| FedError::Config(format!("domain {domain_id} has no samples")))?;
        let dim = first.features.len();
        for (i, s) in samples.iter().enumerate() {
            if s.features.len() != dim {
                return Err(FedError::Shape(format!(
                    "domain {domain_id}: sample {i} has {} features, expected {dim}",
                    s.features.len()
                )));
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(FedError::Domain(format!("domain {domain_id}: sample {i} is not finite")));
            }
            if s.label >= class_count {
                return Err(FedError::Domain(format!(
                    "domain {domain_id}: sample {i} has label {} but only {class_count} classes",
                    s.label
                )));
            }
        }
        Ok(DomainDataset {
            domain_id,
            class_count,
            samples,
            held_out: false,
        })
    }

    pub fn domain_id(&self) -> &str {
        &self.domain_id
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn feature_dim(&self) -> usize {
        self.samples[0].features.len()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn is_held_out(&self) -> bool {
        self.held_out
    }

    /// Taints the dataset as the unseen target domain.
    pub fn into_held_out(mut self) -> Self {
        self.held_out = true;
        self
    }

    fn with_samples(&self, samples: Vec<Sample>) -> Self {
        DomainDataset {
            domain_id: self.domain_id.clone(),
            class_count: self.class_count,
            samples,
            held_out: self.held_out,
        }
    }

    /// Features as a `len x d_in` matrix plus the label column.
    pub fn to_matrix(&self) -> (Matrix, Vec<usize>) {
        let rows: Vec<&[f64]> = self.samples.iter().map(|s| s.features.as_slice()).collect();
        let m = Matrix::from_rows(&rows).expect("dataset invariants hold");
        (m, self.samples.iter().map(|s| s.label).collect())
    }

    /// Writes the plain-text table: a `# domain=<id> d_in=<n> M=<m>` header,
    /// then one `f_1,...,f_n,label` line per sample with 17 significant digits.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "# domain={} d_in={} M={}",
            self.domain_id,
            self.feature_dim(),
            self.class_count
        )?;
        let mut line = String::new();
        for s in &self.samples {
            line.clear();
            for f in &s.features {
                write!(line, "{f:.16e},").expect("writing to a String");
            }
            writeln!(line, "{}", s.label).expect("writing to a String");
            w.write_all(line.as_bytes())?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = match lines.next() {
            Some(line) => line.map_err(|e| FedError::io("<dataset>", e))?,
            None => return Err(FedError::parse("header", "empty dataset file")),
        };
        let mut domain = None;
        let mut d_in = None;
        let mut m = None;
        let body = header
            .strip_prefix('#')
            .ok_or_else(|| FedError::parse("header", "expected a line starting with '#'"))?;
        for field in body.split_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| FedError::parse("header", format!("malformed field {field:?}")))?;
            match k {
                "domain" => domain = Some(v.to_string()),
                "d_in" => d_in = Some(parse_count("d_in", v)?),
                "M" => m = Some(parse_count("M", v)?),
                other => return Err(FedError::parse(other, "unknown header field")),
            }
        }
        let domain = domain.ok_or_else(|| FedError::parse("domain", "missing from header"))?;
        let d_in = d_in.ok_or_else(|| FedError::parse("d_in", "missing from header"))?;
        let m = m.ok_or_else(|| FedError::parse("M", "missing from header"))?;

        let mut samples = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line.map_err(|e| FedError::io("<dataset>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let key = format!("line {}", n + 2);
            if fields.len() != d_in + 1 {
                return Err(FedError::parse(
                    key,
                    format!("expected {} fields, found {}", d_in + 1, fields.len()),
                ));
            }
            let features = fields[..d_in]
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| FedError::parse(key.clone(), e.to_string()))?;
            let label = parse_count(&key, fields[d_in])?;
            samples.push(Sample { features, label });
        }
        DomainDataset::new(domain, m, samples)
    }
}

fn parse_count(key: &str, v: &str) -> Result<usize> {
    v.trim()
        .parse()
        .map_err(|_| FedError::parse(key, format!("expected a non-negative integer, got {v:?}")))
}

/// Rotated Gaussian-cluster task description.
///
/// Class `c` sits at radius `cluster_radius` and angle `2*pi*c/M` in the
/// first two feature coordinates; each domain rotates that plane by its own
/// angle. Remaining coordinates (when `feature_dim > 2`) are pure noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTaskSpec {
    pub class_count: usize,
    pub feature_dim: usize,
    pub domain_angles: Vec<f64>,
    pub domain_sizes: Vec<usize>,
    pub noise_sigma: f64,
    pub cluster_radius: f64,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        SyntheticTaskSpec {
            class_count: 4,
            feature_dim: 2,
            domain_angles: vec![0.0, 25.0, 50.0, 75.0],
            domain_sizes: vec![256, 512, 1024, 4096],
            noise_sigma: 0.35,
            cluster_radius: 1.0,
        }
    }
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(FedError::Config(format!(
                "class_count must be at least 2, got {}",
                self.class_count
            )));
        }
        if self.feature_dim < 2 {
            return Err(FedError::Config(format!(
                "feature_dim must be at least 2, got {}",
                self.feature_dim
            )));
        }
        if self.domain_angles.len() != self.domain_sizes.len() {
            return Err(FedError::Config(format!(
                "{} domain angles but {} domain sizes",
                self.domain_angles.len(),
                self.domain_sizes.len()
            )));
        }
        if self.domain_angles.len() < 2 {
            return Err(FedError::Config("a task needs at least two domains".into()));
        }
        if let Some(a) = self.domain_angles.iter().find(|a| !a.is_finite()) {
            return Err(FedError::Config(format!("domain angle {a} is not finite")));
        }
        if let Some(s) = self.domain_sizes.iter().find(|&&s| s < self.class_count) {
            return Err(FedError::Config(format!(
                "domain size {s} is smaller than class_count {}",
                self.class_count
            )));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(FedError::Config(format!(
                "noise_sigma must be non-negative, got {}",
                self.noise_sigma
            )));
        }
        if !(self.cluster_radius.is_finite() && self.cluster_radius > 0.0) {
            return Err(FedError::Config(format!(
                "cluster_radius must be positive, got {}",
                self.cluster_radius
            )));
        }
        Ok(())
    }

    /// Class centers in the unrotated plane.
    pub fn centers(&self) -> Vec<[f64; 2]> {
        let m = self.class_count as f64;
        (0..self.class_count)
            .map(|c| {
                let theta = std::f64::consts::TAU * c as f64 / m;
                [self.cluster_radius * theta.cos(), self.cluster_radius * theta.sin()]
            })
            .collect()
    }

    /// Scales sizes down by `factor` (at least `class_count` per domain).
    pub fn scaled(&self, factor: usize) -> SyntheticTaskSpec {
        let mut out = self.clone();
        for s in &mut out.domain_sizes {
            *s = (*s / factor.max(1)).max(self.class_count);
        }
        out
    }
}

pub fn domain_name(angle_deg: f64) -> String {
    format!("rot{angle_deg}")
}

/// Rotates `(x, y)` counter-clockwise by `angle_deg` degrees.
pub fn rotate(point: [f64; 2], angle_deg: f64) -> [f64; 2] {
    let (s, c) = angle_deg.to_radians().sin_cos();
    [c * point[0] - s * point[1], s * point[0] + c * point[1]]
}

/// One domain of the task: `size` samples with labels cycling through the
/// classes, Gaussian noise around each center, then rotated.
pub fn generate_domain(
    spec: &SyntheticTaskSpec,
    domain_id: impl Into<String>,
    angle_deg: f64,
    size: usize,
    seed: u64,
) -> Result<DomainDataset> {
    spec.validate()?;
    let normal = Normal::new(0.0, spec.noise_sigma)
        .map_err(|e| FedError::Config(format!("noise_sigma: {e}")))?;
    let centers = spec.centers();
    let mut rng = seeds::rng(seed);
    let samples = (0..size)
        .map(|i| {
            let label = i % spec.class_count;
            let c = centers[label];
            let planar = [c[0] + normal.sample(&mut rng), c[1] + normal.sample(&mut rng)];
            let rotated = rotate(planar, angle_deg);
            let mut features = Vec::with_capacity(spec.feature_dim);
            features.extend_from_slice(&rotated);
            features.extend((2..spec.feature_dim).map(|_| normal.sample(&mut rng)));
            Sample { features, label }
        })
        .collect();
    DomainDataset::new(domain_id, spec.class_count, samples)
}

/// All domains of the task, each with its own derived seed.
pub fn generate_task(spec: &SyntheticTaskSpec, seed: u64) -> Result<Vec<DomainDataset>> {
    spec.validate()?;
    spec.domain_angles
        .iter()
        .zip(&spec.domain_sizes)
        .enumerate()
        .map(|(d, (&angle, &size))| {
            let id = format!("d{d}-{}", domain_name(angle));
            generate_domain(spec, id, angle, size, seeds::derive_seed(seed, Purpose::Domain, d as u64, 0))
        })
        .collect()
}

/// Index form of [`budget_resample`]: `budget` indices into `0..len`.
///
/// With `len >= budget` the indices are distinct and drawn uniformly without
/// replacement. Otherwise every index appears `budget / len` times, plus
/// `budget % len` distinct extra indices. The result is shuffled.
pub fn budget_indices(len: usize, budget: usize, seed: u64) -> Result<Vec<usize>> {
    if budget == 0 {
        return Err(FedError::Config("budget must be at least 1".into()));
    }
    if len == 0 {
        return Err(FedError::Config("cannot resample an empty dataset".into()));
    }
    let mut rng = seeds::rng(seed);
    let mut out = Vec::with_capacity(budget);
    if len >= budget {
        out.extend(index::sample(&mut rng, len, budget).iter());
    } else {
        for _ in 0..budget / len {
            out.extend(0..len);
        }
        out.extend(index::sample(&mut rng, len, budget % len).iter());
    }
    out.shuffle(&mut rng);
    Ok(out)
}

/// Forces a dataset to exactly `budget` samples (subsampling or balanced
/// oversampling). The held-out taint, if any, carries over.
pub fn budget_resample(dataset: &DomainDataset, budget: usize, seed: u64) -> Result<DomainDataset> {
    let idx = budget_indices(dataset.len(), budget, seed)?;
    let samples = idx.into_iter().map(|i| dataset.samples[i].clone()).collect();
    Ok(dataset.with_samples(samples))
}

/// A mini-batch ready for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
}

/// Shuffled index partition into `len / batch_size` full batches; the
/// trailing `len % batch_size` indices are dropped.
pub fn batch_indices(len: usize, batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(FedError::Config("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut seeds::rng(seed));
    Ok(order
        .chunks_exact(batch_size)
        .map(<[usize]>::to_vec)
        .collect())
}

pub fn batches(dataset: &DomainDataset, batch_size: usize, seed: u64) -> Result<Vec<Batch>> {
    let parts = batch_indices(dataset.len(), batch_size, seed)?;
    Ok(parts
        .into_iter()
        .map(|idx| {
            let rows: Vec<&[f64]> = idx.iter().map(|&i| dataset.samples[i].features.as_slice()).collect();
            Batch {
                inputs: Matrix::from_rows(&rows).expect("dataset invariants hold"),
                labels: idx.iter().map(|&i| dataset.samples[i].label).collect(),
            }
        })
        .collect())
}
