//! Sparse text datasets and the synthetic analog generator.
//!
//! One sample per line: `label idx:val idx:val ...`, label 0 or 1, indices
//! 1-based and strictly increasing. Blank lines are ignored.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::sparse::{l2_norm_sq, Dataset, Sample, SparseVector};

/// Reads a dataset. Its dimension is the largest index seen, or `dim` when
/// given (which must cover every index).
pub fn read_sparse_text(path: impl AsRef<Path>, dim: Option<usize>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_sparse_text(BufReader::new(file), path, dim)
}

/// [`read_sparse_text`] over any reader; `path` only labels errors.
pub fn parse_sparse_text(reader: impl BufRead, path: &Path, dim: Option<usize>) -> Result<Dataset> {
    let fail = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rows: Vec<(u8, Vec<(usize, f64)>)> = Vec::new();
    let mut max_index = 0usize;
    for (n, line) in reader.lines().enumerate() {
        let lineno = n + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut tokens = line.split_ascii_whitespace();
        let Some(label) = tokens.next() else { continue };
        let label = match label {
            "0" => 0u8,
            "1" => 1u8,
            other => return Err(fail(lineno, format!("label must be 0 or 1, found {other:?}"))),
        };
        let mut entries = Vec::new();
        let mut prev = 0usize;
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| fail(lineno, format!("expected idx:val, found {tok:?}")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| fail(lineno, format!("bad index in {tok:?}")))?;
            if idx == 0 {
                return Err(fail(lineno, "indices are 1-based; found 0".into()));
            }
            if idx <= prev {
                return Err(fail(lineno, format!("indices must be strictly ascending ({prev} then {idx})")));
            }
            let val: f64 = val
                .parse()
                .map_err(|_| fail(lineno, format!("bad value in {tok:?}")))?;
            if !val.is_finite() {
                return Err(fail(lineno, format!("non-finite value in {tok:?}")));
            }
            prev = idx;
            entries.push((idx - 1, val));
        }
        max_index = max_index.max(prev);
        rows.push((label, entries));
    }
    let dim = match dim {
        Some(d) if d < max_index => {
            return Err(fail(0, format!("index {max_index} exceeds the declared dimension {d}")));
        }
        Some(d) => d,
        None => max_index,
    };
    let samples = rows
        .into_iter()
        .map(|(label, entries)| Sample::new(SparseVector::new(entries, dim)?, label))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(samples, dim)
}

/// Writes `d` in the text format. Values use the shortest decimal form that
/// parses back to the same `f64`.
pub fn write_sparse_text(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    format_sparse_text(d, &mut out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn format_sparse_text(d: &Dataset, out: &mut impl Write) -> std::io::Result<()> {
    for s in d.samples() {
        write!(out, "{}", s.label())?;
        for (i, v) in s.features.iter() {
            write!(out, " {}:{}", i + 1, v)?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Re-labels both datasets with the larger of their dimensions.
pub fn align_dims(a: Dataset, b: Dataset) -> Result<(Dataset, Dataset)> {
    let dim = a.dim().max(b.dim());
    Ok((with_dim(a, dim)?, with_dim(b, dim)?))
}

pub fn with_dim(d: Dataset, dim: usize) -> Result<Dataset> {
    if d.dim() == dim {
        return Ok(d);
    }
    let samples = d
        .into_samples()
        .into_iter()
        .map(|s| {
            let label = s.label();
            Sample::new(s.features.with_dim(dim)?, label)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(samples, dim)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub dim: usize,
    pub nnz_min: usize,
    pub nnz_max: usize,
    pub seed: u64,
    pub normalize: bool,
}

impl GenSpec {
    /// 100,000 dimensions, 460,000 training and 40,000 test instances with
    /// 5 to 10 features each.
    pub fn full_scale(seed: u64) -> Self {
        Self {
            n_train: 460_000,
            n_test: 40_000,
            dim: 100_000,
            nnz_min: 5,
            nnz_max: 10,
            seed,
            normalize: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.n_train == 0 || self.n_test == 0 {
            bad.push("n_train and n_test must be at least 1".to_string());
        }
        if !(1 <= self.nnz_min && self.nnz_min <= self.nnz_max && self.nnz_max <= self.dim) {
            bad.push(format!(
                "need 1 <= nnz_min <= nnz_max <= dim, got nnz_min = {}, nnz_max = {}, dim = {}",
                self.nnz_min, self.nnz_max, self.dim
            ));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }
}

/// `y = Σ x_i (i mod 4) (−1)^i` over 1-based positions `i`.
pub fn analog_score(x: &SparseVector) -> f64 {
    x.iter()
        .map(|(i, v)| {
            let pos = i + 1;
            let sign = if pos % 2 == 0 { 1.0 } else { -1.0 };
            v * (pos % 4) as f64 * sign
        })
        .sum()
}

/// Label 1 iff the analog score is strictly positive.
pub fn analog_label(x: &SparseVector) -> u8 {
    u8::from(analog_score(x) > 0.0)
}

/// Draws the training set, then the test set, from one seeded stream.
pub fn generate_analog(spec: &GenSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let train = draw(&mut rng, spec, spec.n_train)?;
    let test = draw(&mut rng, spec, spec.n_test)?;
    Ok((train, test))
}

fn draw(rng: &mut ChaCha8Rng, spec: &GenSpec, n: usize) -> Result<Dataset> {
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let nnz = rng.gen_range(spec.nnz_min..=spec.nnz_max);
        let mut positions = index::sample(rng, spec.dim, nnz).into_vec();
        positions.sort_unstable();
        // uniform on (0, 1]
        let entries: Vec<(usize, f64)> = positions.into_iter().map(|p| (p, 1.0 - rng.gen::<f64>())).collect();
        let x = SparseVector::new(entries, spec.dim)?;
        let label = analog_label(&x);
        let x = if spec.normalize {
            x.scaled(1.0 / l2_norm_sq(&x).sqrt())
        } else {
            x
        };
        samples.push(Sample::new(x, label)?);
    }
    Dataset::new(samples, spec.dim)
}
