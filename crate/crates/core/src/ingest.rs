//! Dataset ingestion: LIBSVM text files and seeded synthetic generators.
//!
//! Indices are 1-based on disk and 0-based in memory. Labels are normalized
//! to `{-1, +1}` through a [`LabelMap`]; the automatic map only accepts label
//! sets that are already `{-1, +1}` or `{0, 1}`.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::numeric::{dot, norm_sq};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: malformed entry `{token}`")]
    Malformed { line: usize, token: String },
    #[error("line {line}: non-numeric token `{token}`")]
    NonNumeric { line: usize, token: String },
    #[error("line {line}: feature index {index} is not strictly increasing")]
    NonIncreasingIndex { line: usize, index: usize },
    #[error("line {line}: non-finite value")]
    NonFinite { line: usize },
    #[error("no examples in input")]
    Empty,
    #[error("label {0} has no mapping to -1/+1; supply an explicit label map")]
    UnmappedLabel(f64),
    #[error("dimension override {requested} is smaller than the largest index {seen}")]
    DimensionTooSmall { requested: usize, seen: usize },
    #[error("invalid generator parameter: {0}")]
    InvalidParameter(String),
}

/// One labeled sparse sample. Feature indices are 0-based and strictly
/// increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseExample {
    pub label: f64,
    pub features: Vec<(usize, f64)>,
}

impl SparseExample {
    pub fn dot(&self, w: &[f64]) -> f64 {
        self.features.iter().map(|&(j, v)| v * w[j]).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.features.iter().map(|&(_, v)| v * v).sum()
    }
}

/// The sample set of a finite sum.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    examples: Vec<SparseExample>,
    dim: usize,
}

impl Dataset {
    /// Validates the dataset invariants: at least one example, every index
    /// below `dim`, indices strictly increasing, all values finite.
    pub fn new(examples: Vec<SparseExample>, dim: usize) -> Result<Self, IngestError> {
        if examples.is_empty() {
            return Err(IngestError::Empty);
        }
        if dim == 0 {
            return Err(IngestError::InvalidParameter("dimension must be positive".into()));
        }
        for (k, ex) in examples.iter().enumerate() {
            let line = k + 1;
            if !ex.label.is_finite() {
                return Err(IngestError::NonFinite { line });
            }
            let mut prev: Option<usize> = None;
            for &(j, v) in &ex.features {
                if prev.is_some_and(|p| j <= p) {
                    return Err(IngestError::NonIncreasingIndex { line, index: j + 1 });
                }
                if j >= dim {
                    return Err(IngestError::DimensionTooSmall { requested: dim, seen: j + 1 });
                }
                if !v.is_finite() {
                    return Err(IngestError::NonFinite { line });
                }
                prev = Some(j);
            }
        }
        Ok(Self { examples, dim })
    }

    pub fn n(&self) -> usize {
        self.examples.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn examples(&self) -> &[SparseExample] {
        &self.examples
    }

    /// Counts of `(+1, -1)` labels.
    pub fn label_counts(&self) -> (usize, usize) {
        let pos = self.examples.iter().filter(|e| e.label > 0.0).count();
        (pos, self.n() - pos)
    }

    pub fn max_row_norm_sq(&self) -> f64 {
        self.examples.iter().map(SparseExample::norm_sq).fold(0.0, f64::max)
    }

    /// Divides every feature by its largest absolute value over the dataset.
    /// All-zero columns are left untouched.
    pub fn scale_max_abs(&self) -> Dataset {
        let mut scale = vec![0.0f64; self.dim];
        for ex in &self.examples {
            for &(j, v) in &ex.features {
                scale[j] = scale[j].max(v.abs());
            }
        }
        let examples = self
            .examples
            .iter()
            .map(|ex| SparseExample {
                label: ex.label,
                features: ex
                    .features
                    .iter()
                    .map(|&(j, v)| (j, if scale[j] > 0.0 { v / scale[j] } else { v }))
                    .collect(),
            })
            .collect();
        Dataset { examples, dim: self.dim }
    }
}

/// How raw file labels become `{-1, +1}`.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum LabelMap {
    /// `{-1, +1}` passes through, `{0, 1}` maps `0 -> -1`.
    #[default]
    Auto,
    /// Explicit `(raw, mapped)` pairs. Every raw label must be listed.
    Explicit(Vec<(f64, f64)>),
}

impl LabelMap {
    fn resolve(&self, labels: &[f64]) -> Result<Vec<f64>, IngestError> {
        match self {
            LabelMap::Explicit(pairs) => labels
                .iter()
                .map(|&l| {
                    pairs
                        .iter()
                        .find(|(raw, _)| *raw == l)
                        .map(|&(_, m)| m)
                        .ok_or(IngestError::UnmappedLabel(l))
                })
                .collect(),
            LabelMap::Auto => {
                if labels.iter().all(|&l| l == 1.0 || l == -1.0) {
                    Ok(labels.to_vec())
                } else if labels.iter().all(|&l| l == 1.0 || l == 0.0) {
                    Ok(labels.iter().map(|&l| if l == 0.0 { -1.0 } else { 1.0 }).collect())
                } else {
                    let bad = labels
                        .iter()
                        .copied()
                        .find(|&l| l != 1.0 && l != -1.0 && l != 0.0)
                        .unwrap_or(0.0);
                    Err(IngestError::UnmappedLabel(bad))
                }
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParseOptions {
    pub label_map: LabelMap,
    /// Raise the dimension above the largest index seen.
    pub dim_override: Option<usize>,
}

fn parse_number(token: &str, line: usize) -> Result<f64, IngestError> {
    let v: f64 = token.parse().map_err(|_| IngestError::NonNumeric {
        line,
        token: token.to_string(),
    })?;
    if !v.is_finite() {
        return Err(IngestError::NonFinite { line });
    }
    Ok(v)
}

/// Parses LIBSVM text (`<label> <idx>:<val> ...`, 1-based indices).
pub fn parse_libsvm<R: Read>(input: R, opts: &ParseOptions) -> Result<Dataset, IngestError> {
    let reader = BufReader::new(input);
    let mut labels = Vec::new();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut max_index = 0usize;

    for (k, line) in reader.lines().enumerate() {
        let line_no = k + 1;
        let line = line?;
        let content = match line.find('#') {
            Some(pos) => &line[..pos],
            None => &line[..],
        };
        let mut tokens = content.split_whitespace();
        let Some(label_tok) = tokens.next() else {
            continue;
        };
        labels.push(parse_number(label_tok, line_no)?);

        let mut features = Vec::new();
        let mut prev = 0usize;
        for tok in tokens {
            let (idx, val) = tok.split_once(':').ok_or_else(|| IngestError::Malformed {
                line: line_no,
                token: tok.to_string(),
            })?;
            let idx: usize = idx.parse().map_err(|_| IngestError::NonNumeric {
                line: line_no,
                token: tok.to_string(),
            })?;
            if idx == 0 {
                return Err(IngestError::Malformed { line: line_no, token: tok.to_string() });
            }
            if idx <= prev {
                return Err(IngestError::NonIncreasingIndex { line: line_no, index: idx });
            }
            prev = idx;
            max_index = max_index.max(idx);
            features.push((idx - 1, parse_number(val, line_no)?));
        }
        rows.push(features);
    }

    if rows.is_empty() {
        return Err(IngestError::Empty);
    }
    let dim = match opts.dim_override {
        Some(d) if d < max_index => {
            return Err(IngestError::DimensionTooSmall { requested: d, seen: max_index })
        }
        Some(d) => d,
        None => max_index.max(1),
    };
    let mapped = opts.label_map.resolve(&labels)?;
    let examples = mapped
        .into_iter()
        .zip(rows)
        .map(|(label, features)| SparseExample { label, features })
        .collect();
    Dataset::new(examples, dim)
}

/// Reads a LIBSVM file; names ending in `.gz` are decompressed on the fly.
pub fn read_libsvm_file(path: &Path, opts: &ParseOptions) -> Result<Dataset, IngestError> {
    let file = File::open(path)?;
    if path.extension().is_some_and(|e| e == "gz") {
        parse_libsvm(GzDecoder::new(file), opts)
    } else {
        parse_libsvm(file, opts)
    }
}

pub fn write_libsvm<W: Write>(data: &Dataset, mut out: W) -> io::Result<()> {
    for ex in data.examples() {
        write!(out, "{}", ex.label)?;
        for &(j, v) in &ex.features {
            write!(out, " {}:{}", j + 1, v)?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Noise layout for the quartic recovery instance. Ratios are energies
/// relative to `sum_i y_clean_i^2`.
#[derive(Debug, Clone, PartialEq)]
pub enum NoisePlan {
    None,
    /// Every component carries noise; total energy is `ratio` of the clean
    /// signal energy.
    Uniform { ratio: f64 },
    /// The first `count` components share `large_ratio` of the energy, the
    /// remaining ones share `small_ratio`.
    LargePrefix { count: usize, large_ratio: f64, small_ratio: f64 },
}

impl NoisePlan {
    /// All noise small: 1% of the clean energy.
    pub fn small() -> Self {
        NoisePlan::Uniform { ratio: 0.01 }
    }

    /// First `floor(0.4 n)` components at 25% of the clean energy, the rest
    /// at 1%.
    pub fn large_prefix(n: usize) -> Self {
        NoisePlan::LargePrefix {
            count: (2 * n) / 5,
            large_ratio: 0.25,
            small_ratio: 0.01,
        }
    }
}

/// Observations `y_i = (a_i^T w_hat)^2 + e_i` of a planted signal.
#[derive(Debug, Clone)]
pub struct QuarticInstance {
    /// Row-major `n x d` measurement vectors.
    pub a: Vec<f64>,
    pub y: Vec<f64>,
    pub y_clean: Vec<f64>,
    pub noise: Vec<f64>,
    pub w_hat: Vec<f64>,
    pub n: usize,
    pub d: usize,
}

impl QuarticInstance {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.a[i * self.d..(i + 1) * self.d]
    }

    pub fn clean_energy(&self) -> f64 {
        norm_sq(&self.y_clean)
    }
}

pub fn generate_quartic(
    n: usize,
    w_hat: &[f64],
    plan: &NoisePlan,
    seed: u64,
) -> Result<QuarticInstance, IngestError> {
    let d = w_hat.len();
    if n == 0 || d == 0 {
        return Err(IngestError::InvalidParameter("n and d must be positive".into()));
    }
    if norm_sq(w_hat) == 0.0 || w_hat.iter().any(|x| !x.is_finite()) {
        return Err(IngestError::InvalidParameter(
            "planted signal must be finite and nonzero".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: Vec<f64> = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
    let y_clean: Vec<f64> = (0..n)
        .map(|i| {
            let s = dot(&a[i * d..(i + 1) * d], w_hat);
            s * s
        })
        .collect();
    let energy = norm_sq(&y_clean);
    let raw: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();

    let mut noise = vec![0.0; n];
    let mut fill = |range: std::ops::Range<usize>, ratio: f64| -> Result<(), IngestError> {
        if !(ratio >= 0.0 && ratio.is_finite()) {
            return Err(IngestError::InvalidParameter(format!("noise ratio {ratio}")));
        }
        if range.is_empty() || ratio == 0.0 {
            return Ok(());
        }
        let raw_energy = norm_sq(&raw[range.clone()]);
        let scale = (ratio * energy / raw_energy).sqrt();
        for i in range {
            noise[i] = scale * raw[i];
        }
        Ok(())
    };
    match *plan {
        NoisePlan::None => {}
        NoisePlan::Uniform { ratio } => fill(0..n, ratio)?,
        NoisePlan::LargePrefix { count, large_ratio, small_ratio } => {
            if count > n {
                return Err(IngestError::InvalidParameter(format!(
                    "large-noise prefix {count} exceeds n = {n}"
                )));
            }
            fill(0..count, large_ratio)?;
            fill(count..n, small_ratio)?;
        }
    }
    let y = y_clean.iter().zip(&noise).map(|(c, e)| c + e).collect();
    Ok(QuarticInstance {
        a,
        y,
        y_clean,
        noise,
        w_hat: w_hat.to_vec(),
        n,
        d,
    })
}

/// Parameters of a planted-hyperplane classification dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticLogisticSpec {
    pub n: usize,
    pub d: usize,
    /// Probability that a planted label is flipped; 0 keeps the data
    /// separable by the planted hyperplane.
    pub flip_probability: f64,
    pub seed: u64,
}

/// Gaussian features with labels `sign(x^T w_plant)`, optionally flipped.
/// Returns the dataset and the planted direction.
pub fn generate_synthetic_logistic(
    spec: &SyntheticLogisticSpec,
) -> Result<(Dataset, Vec<f64>), IngestError> {
    if spec.n == 0 || spec.d == 0 {
        return Err(IngestError::InvalidParameter("n and d must be positive".into()));
    }
    if !(0.0..=1.0).contains(&spec.flip_probability) {
        return Err(IngestError::InvalidParameter(format!(
            "flip probability {} outside [0, 1]",
            spec.flip_probability
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let plant: Vec<f64> = (0..spec.d).map(|_| rng.sample(StandardNormal)).collect();
    let examples = (0..spec.n)
        .map(|_| {
            let x: Vec<f64> = (0..spec.d).map(|_| rng.sample(StandardNormal)).collect();
            let mut label = if dot(&x, &plant) >= 0.0 { 1.0 } else { -1.0 };
            let u: f64 = rng.random();
            if u < spec.flip_probability {
                label = -label;
            }
            SparseExample {
                label,
                features: x.into_iter().enumerate().collect(),
            }
        })
        .collect();
    Ok((Dataset::new(examples, spec.d)?, plant))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str) -> Result<Dataset, IngestError> {
        parse_libsvm(text.as_bytes(), &ParseOptions::default())
    }

    #[test]
    fn parses_basic_file() {
        let ds = parse("+1 3:0.5 7:1.25\n-1 1:2.0").unwrap();
        assert_eq!(ds.n(), 2);
        assert_eq!(ds.dim(), 7);
        let labels: Vec<f64> = ds.examples().iter().map(|e| e.label).collect();
        assert_eq!(labels, vec![1.0, -1.0]);
        assert_eq!(ds.examples()[0].features, vec![(2, 0.5), (6, 1.25)]);
    }

    #[test]
    fn zero_one_labels_are_mapped() {
        let ds = parse("1 1:1\n0 1:2").unwrap();
        let labels: Vec<f64> = ds.examples().iter().map(|e| e.label).collect();
        assert_eq!(labels, vec![1.0, -1.0]);

        let explicit = ParseOptions {
            label_map: LabelMap::Explicit(vec![(1.0, 1.0), (0.0, -1.0)]),
            dim_override: None,
        };
        let ds = parse_libsvm("1 1:1\n0 1:2".as_bytes(), &explicit).unwrap();
        assert_eq!(ds.examples()[1].label, -1.0);
    }

    #[test]
    fn other_label_sets_need_a_map() {
        assert!(matches!(parse("1 1:1\n2 1:2"), Err(IngestError::UnmappedLabel(l)) if l == 2.0));
        let opts = ParseOptions {
            label_map: LabelMap::Explicit(vec![(1.0, 1.0), (2.0, -1.0)]),
            dim_override: None,
        };
        let ds = parse_libsvm("1 1:1\n2 1:2".as_bytes(), &opts).unwrap();
        assert_eq!(ds.label_counts(), (1, 1));
    }

    #[test]
    fn duplicate_index_rejected_with_line() {
        match parse("1 2:1 2:3") {
            Err(IngestError::NonIncreasingIndex { line: 1, index: 2 }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match parse("1 1:1\n-1 3:1 2:1") {
            Err(IngestError::NonIncreasingIndex { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_inputs() {
        assert!(matches!(parse(""), Err(IngestError::Empty)));
        assert!(matches!(parse("\n\n"), Err(IngestError::Empty)));
        assert!(matches!(parse("1 3"), Err(IngestError::Malformed { line: 1, .. })));
        assert!(matches!(parse("1 0:1"), Err(IngestError::Malformed { line: 1, .. })));
        assert!(matches!(parse("1 1:1\n1 a:1"), Err(IngestError::NonNumeric { line: 2, .. })));
        assert!(matches!(parse("x 1:1"), Err(IngestError::NonNumeric { line: 1, .. })));
        assert!(matches!(parse("1 1:nan"), Err(IngestError::NonFinite { line: 1 })));
    }

    #[test]
    fn dimension_override() {
        let opts = ParseOptions { dim_override: Some(10), ..Default::default() };
        assert_eq!(parse_libsvm("1 3:1".as_bytes(), &opts).unwrap().dim(), 10);
        let opts = ParseOptions { dim_override: Some(2), ..Default::default() };
        assert!(matches!(
            parse_libsvm("1 3:1".as_bytes(), &opts),
            Err(IngestError::DimensionTooSmall { requested: 2, seen: 3 })
        ));
    }

    #[test]
    fn empty_feature_list_and_comments() {
        let ds = parse("1\n-1 2:1 # trailing comment\n# only a comment\n").unwrap();
        assert_eq!(ds.n(), 2);
        assert!(ds.examples()[0].features.is_empty());
    }

    #[test]
    fn max_abs_scaler() {
        let ds = parse("1 1:2 2:-4\n-1 1:-1").unwrap().scale_max_abs();
        assert_eq!(ds.examples()[0].features, vec![(0, 1.0), (1, -1.0)]);
        assert_eq!(ds.examples()[1].features, vec![(0, -0.5)]);
    }

    #[test]
    fn quartic_noise_energies() {
        let w = [1.0, -0.5];
        let inst = generate_quartic(100, &w, &NoisePlan::small(), 7).unwrap();
        let ratio = norm_sq(&inst.noise) / inst.clean_energy();
        assert!((ratio - 0.01).abs() < 1e-12);

        let inst = generate_quartic(100, &w, &NoisePlan::large_prefix(100), 7).unwrap();
        let big = norm_sq(&inst.noise[..40]) / inst.clean_energy();
        let small = norm_sq(&inst.noise[40..]) / inst.clean_energy();
        assert!((big - 0.25).abs() < 1e-12);
        assert!((small - 0.01).abs() < 1e-12);

        let clean = generate_quartic(100, &w, &NoisePlan::None, 7).unwrap();
        for i in 0..clean.n {
            let s = dot(clean.row(i), &w);
            assert_eq!(clean.y[i], s * s);
        }
    }

    #[test]
    fn quartic_rejects_bad_parameters() {
        assert!(generate_quartic(0, &[1.0], &NoisePlan::None, 1).is_err());
        assert!(generate_quartic(5, &[0.0, 0.0], &NoisePlan::small(), 1).is_err());
        assert!(generate_quartic(5, &[1.0], &NoisePlan::large_prefix(100), 1).is_err());
    }

    #[test]
    fn synthetic_logistic_is_separable_and_deterministic() {
        let spec = SyntheticLogisticSpec { n: 50, d: 5, flip_probability: 0.0, seed: 1 };
        let (ds, plant) = generate_synthetic_logistic(&spec).unwrap();
        for ex in ds.examples() {
            assert!(ex.label * ex.dot(&plant) > 0.0);
        }
        let (again, _) = generate_synthetic_logistic(&spec).unwrap();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        write_libsvm(&ds, &mut a).unwrap();
        write_libsvm(&again, &mut b).unwrap();
        assert_eq!(a, b);

        let bad = SyntheticLogisticSpec { n: 0, ..spec };
        assert!(generate_synthetic_logistic(&bad).is_err());
    }

    fn arb_dataset() -> impl Strategy<Value = Dataset> {
        let example = (
            prop::bool::ANY,
            prop::collection::btree_map(0usize..30, -1e6f64..1e6, 0..8),
        )
            .prop_map(|(pos, feats)| SparseExample {
                label: if pos { 1.0 } else { -1.0 },
                features: feats.into_iter().collect(),
            });
        (prop::collection::vec(example, 1..20), 0usize..5)
            .prop_map(|(examples, extra)| Dataset::new(examples, 30 + extra).unwrap())
    }

    proptest! {
        #[test]
        fn libsvm_round_trip(ds in arb_dataset()) {
            let mut buf = Vec::new();
            write_libsvm(&ds, &mut buf).unwrap();
            let opts = ParseOptions { dim_override: Some(ds.dim()), ..Default::default() };
            let back = parse_libsvm(buf.as_slice(), &opts).unwrap();
            prop_assert_eq!(back, ds);
        }
    }
}
