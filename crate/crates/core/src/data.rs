//! Synthetic generators, CSV ingestion and the constraint / held-out /
//! training split.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{Cholesky, Matrix2, Vector2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{Sample, Vector};

pub const INTERCEPT: &str = "intercept";

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub feature_names: Vec<String>,
    pub sensitive_name: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn has_intercept(&self) -> bool {
        self.feature_names.last().map(String::as_str) == Some(INTERCEPT)
    }

    /// Appends a constant feature named `intercept`. No-op if already present.
    pub fn with_intercept(mut self) -> Self {
        if self.has_intercept() {
            return self;
        }
        for s in &mut self.samples {
            let d = s.x.len();
            s.x = s.x.clone().insert_row(d, 1.0);
        }
        self.feature_names.push(INTERCEPT.into());
        self
    }

    /// Sanity warnings: a missing sensitive value or label.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        for z in [0u8, 1] {
            if !self.samples.iter().any(|s| s.z == z) {
                w.push(format!("no rows with {}={z}", self.sensitive_name));
            }
        }
        for y in [-1i8, 1] {
            if !self.samples.iter().any(|s| s.y == y) {
                w.push(format!("no rows with label {y}"));
            }
        }
        w
    }
}

fn cholesky2(m: [[f64; 2]; 2]) -> Matrix2<f64> {
    Cholesky::new(Matrix2::new(m[0][0], m[0][1], m[1][0], m[1][1]))
        .expect("covariance is positive definite")
        .l()
}

fn gaussian2(rng: &mut ChaCha8Rng, mean: [f64; 2], l: &Matrix2<f64>) -> Vector2<f64> {
    let g = Vector2::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
    Vector2::new(mean[0], mean[1]) + l * g
}

fn xy_names() -> Vec<String> {
    vec!["x1".into(), "x2".into()]
}

/// Gaussian class-conditionals for the disparate-impact design.
pub struct DiDesign;

impl DiDesign {
    pub const MEAN_POS: [f64; 2] = [1.5, 1.5];
    pub const COV_POS: [[f64; 2]; 2] = [[0.4, 0.2], [0.2, 0.3]];
    pub const MEAN_NEG: [f64; 2] = [-1.5, -1.5];
    pub const COV_NEG: [[f64; 2]; 2] = [[0.6, 0.1], [0.1, 0.4]];
    pub const P_POSITIVE: f64 = 0.5;

    fn density(x: Vector2<f64>, mean: [f64; 2], cov: [[f64; 2]; 2]) -> f64 {
        let m = Matrix2::new(cov[0][0], cov[0][1], cov[1][0], cov[1][1]);
        let d = x - Vector2::new(mean[0], mean[1]);
        let inv = m.try_inverse().expect("covariance is invertible");
        (-0.5 * d.dot(&(inv * d))).exp() / (2.0 * std::f64::consts::PI * m.determinant().sqrt())
    }

    /// The point rotated by π/3.
    pub fn rotate(x: Vector2<f64>) -> Vector2<f64> {
        let (s, c) = (std::f64::consts::FRAC_PI_3).sin_cos();
        Matrix2::new(c, -s, s, c) * x
    }

    /// `P(z = 1 | x)`: the positive-class share of the two densities at the
    /// rotated point.
    pub fn p_sensitive(x: Vector2<f64>) -> f64 {
        let r = Self::rotate(x);
        let a = Self::density(r, Self::MEAN_POS, Self::COV_POS);
        let b = Self::density(r, Self::MEAN_NEG, Self::COV_NEG);
        if a + b == 0.0 {
            0.5
        } else {
            a / (a + b)
        }
    }
}

pub fn gen_synthetic_di(n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("n", "must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lp = cholesky2(DiDesign::COV_POS);
    let ln = cholesky2(DiDesign::COV_NEG);
    let samples = (0..n)
        .map(|_| {
            let pos = rng.random_bool(DiDesign::P_POSITIVE);
            let x = if pos {
                gaussian2(&mut rng, DiDesign::MEAN_POS, &lp)
            } else {
                gaussian2(&mut rng, DiDesign::MEAN_NEG, &ln)
            };
            let z = u8::from(rng.random_bool(DiDesign::p_sensitive(x)));
            Sample::new(Vector::from_column_slice(x.as_slice()), z, if pos { 1 } else { -1 })
        })
        .collect::<Result<_>>()?;
    Ok(Dataset {
        samples,
        feature_names: xy_names(),
        sensitive_name: "z".into(),
    })
}

/// Gaussian cell-conditionals for the disparate-mistreatment design.
pub struct DmDesign;

impl DmDesign {
    pub const COV: [[f64; 2]; 2] = [[3.0, 1.0], [1.0, 3.0]];
    /// Cells in order (z=0,y=+1), (z=1,y=+1), (z=0,y=−1), (z=1,y=−1).
    pub const CELLS: [(u8, i8, [f64; 2]); 4] = [
        (0, 1, [2.0, 2.0]),
        (1, 1, [2.0, 2.0]),
        (0, -1, [1.0, 1.0]),
        (1, -1, [-2.0, -2.0]),
    ];
    pub const UNIFORM: [f64; 4] = [0.25; 4];
}

/// `weights` gives the probability of each cell in [`DmDesign::CELLS`] order.
pub fn gen_synthetic_dm(n: usize, seed: u64, weights: [f64; 4]) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("n", "must be >= 1"));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || weights.iter().sum::<f64>() <= 0.0 {
        return Err(Error::invalid("dm-weights", "must be nonnegative with a positive sum"));
    }
    let total: f64 = weights.iter().sum();
    let mut cum = [0.0; 4];
    let mut acc = 0.0;
    for (c, w) in cum.iter_mut().zip(weights) {
        acc += w / total;
        *c = acc;
    }
    let l = cholesky2(DmDesign::COV);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let cell = cum.iter().position(|&c| u < c).unwrap_or(3);
            let (z, y, mean) = DmDesign::CELLS[cell];
            let x = gaussian2(&mut rng, mean, &l);
            Sample::new(Vector::from_column_slice(x.as_slice()), z, y)
        })
        .collect::<Result<_>>()?;
    Ok(Dataset {
        samples,
        feature_names: xy_names(),
        sensitive_name: "z".into(),
    })
}

/// Column roles for [`load_csv`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvSchema {
    pub label_column: String,
    pub sensitive_column: String,
    pub positive_label: String,
    /// When set, labels must equal either this or `positive_label`.
    pub negative_label: Option<String>,
    pub categorical_columns: Vec<String>,
    /// Sensitive value mapped to `z = 1`. Without it the column must hold 0/1.
    pub protected_value: Option<String>,
}

impl CsvSchema {
    /// Schema of the canonical form written by [`write_csv`].
    pub fn canonical() -> Self {
        Self {
            label_column: "y".into(),
            sensitive_column: "z".into(),
            positive_label: "1".into(),
            negative_label: Some("-1".into()),
            categorical_columns: vec![],
            protected_value: None,
        }
    }

    /// Parses `key=value` lines: `label`, `sensitive`, `positive_label`,
    /// `negative_label`, `categorical` (comma separated), `protected_value`.
    pub fn parse(text: &str) -> Result<Self> {
        let kv = parse_key_values(text)?;
        let get = |k: &str| kv.get(k).cloned();
        let need = |k: &str| get(k).ok_or_else(|| Error::invalid(format!("schema.{k}"), "is required"));
        let known = ["label", "sensitive", "positive_label", "negative_label", "categorical", "protected_value"];
        if let Some(k) = kv.keys().find(|k| !known.contains(&k.as_str())) {
            return Err(Error::invalid(format!("schema.{k}"), "unknown key"));
        }
        Ok(Self {
            label_column: need("label")?,
            sensitive_column: need("sensitive")?,
            positive_label: need("positive_label")?,
            negative_label: get("negative_label"),
            categorical_columns: get("categorical")
                .map(|v| v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect())
                .unwrap_or_default(),
            protected_value: get("protected_value"),
        })
    }
}

/// `key=value` lines; `#` starts a comment; blank lines ignored.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("line {}", i + 1), "expected key=value"))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    read_csv(std::fs::File::open(path)?, schema)
}

/// Parses delimited text. Numeric columns pass through, categorical columns
/// are one-hot encoded over their sorted levels, and an intercept column is
/// appended. Row numbers in errors count the header as row 1.
pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.into()))
    };
    let label_idx = col(&schema.label_column)?;
    let sens_idx = col(&schema.sensitive_column)?;
    let cat_idx: Vec<usize> = schema.categorical_columns.iter().map(|c| col(c)).collect::<Result<_>>()?;

    let mut records = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = rec.position().map_or(i + 2, |p| p.line() as usize);
        if rec.len() != header.len() {
            return Err(Error::RaggedRow {
                row,
                expected: header.len(),
                got: rec.len(),
            });
        }
        records.push((row, rec));
    }
    if records.is_empty() {
        return Err(Error::EmptyInput("csv rows"));
    }

    let mut levels: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for &c in &cat_idx {
        let set: BTreeSet<String> = records.iter().map(|(_, r)| r[c].trim().to_string()).collect();
        levels.insert(c, set.into_iter().collect());
    }

    let mut feature_names = Vec::new();
    for (c, h) in header.iter().enumerate() {
        if c == label_idx || c == sens_idx {
            continue;
        }
        match levels.get(&c) {
            Some(lv) => feature_names.extend(lv.iter().map(|l| format!("{h}={l}"))),
            None => feature_names.push(h.clone()),
        }
    }

    let mut samples = Vec::with_capacity(records.len());
    for (row, rec) in &records {
        let mut x = Vec::with_capacity(feature_names.len() + 1);
        for (c, h) in header.iter().enumerate() {
            if c == label_idx || c == sens_idx {
                continue;
            }
            let cell = rec[c].trim();
            match levels.get(&c) {
                Some(lv) => x.extend(lv.iter().map(|l| if l == cell { 1.0 } else { 0.0 })),
                None => {
                    let v: f64 = cell.parse().map_err(|_| Error::NonNumeric {
                        row: *row,
                        column: h.clone(),
                        value: cell.into(),
                    })?;
                    if !v.is_finite() {
                        return Err(Error::NonNumeric {
                            row: *row,
                            column: h.clone(),
                            value: cell.into(),
                        });
                    }
                    x.push(v);
                }
            }
        }
        x.push(1.0);
        let y = map_label(rec[label_idx].trim(), schema).ok_or_else(|| Error::Unmappable {
            row: *row,
            column: schema.label_column.clone(),
            value: rec[label_idx].trim().into(),
        })?;
        let z = map_sensitive(rec[sens_idx].trim(), schema).ok_or_else(|| Error::Unmappable {
            row: *row,
            column: schema.sensitive_column.clone(),
            value: rec[sens_idx].trim().into(),
        })?;
        samples.push(Sample::new(Vector::from_vec(x), z, y)?);
    }
    feature_names.push(INTERCEPT.into());
    Ok(Dataset {
        samples,
        feature_names,
        sensitive_name: schema.sensitive_column.clone(),
    })
}

fn map_label(v: &str, schema: &CsvSchema) -> Option<i8> {
    if v == schema.positive_label {
        return Some(1);
    }
    match &schema.negative_label {
        Some(neg) => (v == neg).then_some(-1),
        None => (!v.is_empty()).then_some(-1),
    }
}

fn map_sensitive(v: &str, schema: &CsvSchema) -> Option<u8> {
    match &schema.protected_value {
        Some(p) => (!v.is_empty()).then(|| u8::from(v == p)),
        None => match v.parse::<f64>().ok()? {
            0.0 => Some(0),
            1.0 => Some(1),
            _ => None,
        },
    }
}

/// Floats with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Canonical form: feature columns (without the intercept), then `z`, `y`.
pub fn write_csv<W: Write>(ds: &Dataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let d = if ds.has_intercept() { ds.dim() - 1 } else { ds.dim() };
    let mut header: Vec<&str> = ds.feature_names[..d].iter().map(String::as_str).collect();
    header.extend(["z", "y"]);
    w.write_record(&header)?;
    for s in &ds.samples {
        let mut rec: Vec<String> = s.x.iter().take(d).map(|&v| fmt_f64(v)).collect();
        rec.push(s.z.to_string());
        rec.push(s.y.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitConfig {
    pub n_constraint: usize,
    pub n_heldout: usize,
    pub stream_length: u64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Split {
    pub dprime: Vec<Sample>,
    pub dtilde: Vec<Sample>,
    pub stream: StreamSource,
}

/// Shuffles the rows, takes `D′` then `D̃`, and leaves the rest as the
/// training pool.
pub fn split(ds: &Dataset, cfg: &SplitConfig) -> Result<Split> {
    if cfg.n_constraint == 0 || cfg.n_heldout == 0 {
        return Err(Error::invalid("split", "constraint and held-out sizes must be positive"));
    }
    let need = cfg.n_constraint + cfg.n_heldout + 1;
    if ds.len() < need {
        return Err(Error::invalid(
            "split",
            format!("dataset has {} rows, need at least {need}", ds.len()),
        ));
    }
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let take = |r: std::ops::Range<usize>| idx[r].iter().map(|&i| ds.samples[i].clone()).collect::<Vec<_>>();
    let a = cfg.n_constraint;
    let b = a + cfg.n_heldout;
    Ok(Split {
        dprime: take(0..a),
        dtilde: take(a..b),
        stream: StreamSource::new(Arc::new(take(b..ds.len())), cfg.stream_length, mix_seed(cfg.seed, 0x5354_5245_414d))?,
    })
}

/// Draws with replacement from a fixed pool.
#[derive(Debug, Clone)]
pub struct StreamSource {
    pool: Arc<Vec<Sample>>,
    remaining: u64,
    rng: ChaCha8Rng,
}

impl StreamSource {
    pub fn new(pool: Arc<Vec<Sample>>, length: u64, seed: u64) -> Result<Self> {
        if pool.is_empty() {
            return Err(Error::EmptyInput("training pool"));
        }
        Ok(Self {
            pool,
            remaining: length,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn pool(&self) -> &Arc<Vec<Sample>> {
        &self.pool
    }

    /// Same pool, new length and seed.
    pub fn reseeded(&self, length: u64, seed: u64) -> Self {
        Self {
            pool: Arc::clone(&self.pool),
            remaining: length,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Iterator for StreamSource {
    type Item = Sample;

    fn next(&mut self) -> Option<Sample> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let i = self.rng.random_range(0..self.pool.len());
        Some(self.pool[i].clone())
    }
}

/// SplitMix64 finalizer applied to `master + (index + 1)·φ`, used to derive
/// independent seeds for repetitions and sub-streams.
pub fn mix_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_cov(rows: &[&Sample]) -> (Vector2<f64>, Matrix2<f64>) {
        let n = rows.len() as f64;
        let m = rows.iter().fold(Vector2::zeros(), |a, s| a + Vector2::new(s.x[0], s.x[1])) / n;
        let c = rows.iter().fold(Matrix2::zeros(), |a, s| {
            let d = Vector2::new(s.x[0], s.x[1]) - m;
            a + d * d.transpose()
        }) / n;
        (m, c)
    }

    #[test]
    fn di_generator_moments() {
        let ds = gen_synthetic_di(100_000, 1).unwrap();
        let pos: Vec<&Sample> = ds.samples.iter().filter(|s| s.y == 1).collect();
        let (m, _) = mean_cov(&pos);
        assert!((m[0] - 1.5).abs() <= 0.02 && (m[1] - 1.5).abs() <= 0.02);
        let share = pos.len() as f64 / 1e5;
        assert!((share - 0.5).abs() <= 3.0 * (0.25f64 / 1e5).sqrt());
        assert!(ds.samples.iter().all(|s| s.x.iter().all(|v| v.is_finite())));
        assert!(ds.warnings().is_empty());
    }

    #[test]
    fn di_p_half_at_equal_density_point() {
        // Find a point on the segment between the means where the two
        // densities are equal, then undo the rotation.
        let f = |t: f64| {
            let r = Vector2::new(-1.5 + 3.0 * t, -1.5 + 3.0 * t);
            DiDesign::density(r, DiDesign::MEAN_POS, DiDesign::COV_POS) - DiDesign::density(r, DiDesign::MEAN_NEG, DiDesign::COV_NEG)
        };
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let t = 0.5 * (lo + hi);
        let r = Vector2::new(-1.5 + 3.0 * t, -1.5 + 3.0 * t);
        let (s, c) = std::f64::consts::FRAC_PI_3.sin_cos();
        let x = Matrix2::new(c, s, -s, c) * r;
        assert!((DiDesign::p_sensitive(x) - 0.5).abs() <= 1e-9);
    }

    #[test]
    fn dm_generator_moments() {
        let ds = gen_synthetic_dm(100_000, 2, DmDesign::UNIFORM).unwrap();
        let sigma = Matrix2::new(3.0, 1.0, 1.0, 3.0);
        for (z, y, mean) in DmDesign::CELLS {
            let rows: Vec<&Sample> = ds.samples.iter().filter(|s| s.z == z && s.y == y).collect();
            let (m, c) = mean_cov(&rows);
            assert!((m[0] - mean[0]).abs() <= 0.05 && (m[1] - mean[1]).abs() <= 0.05);
            assert!((c - sigma).norm() <= 0.05 * sigma.norm());
        }
        let skew = gen_synthetic_dm(1000, 2, [1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(skew.samples.iter().all(|s| s.z == 0 && s.y == 1));
        assert!(!skew.warnings().is_empty());
        assert!(gen_synthetic_dm(10, 2, [0.0; 4]).is_err());
    }

    #[test]
    fn generators_deterministic() {
        assert_eq!(gen_synthetic_di(500, 9).unwrap(), gen_synthetic_di(500, 9).unwrap());
        assert_ne!(gen_synthetic_di(500, 9).unwrap(), gen_synthetic_di(500, 10).unwrap());
        assert_eq!(gen_synthetic_dm(500, 9, DmDesign::UNIFORM).unwrap(), gen_synthetic_dm(500, 9, DmDesign::UNIFORM).unwrap());
        assert!(gen_synthetic_di(0, 1).is_err());
    }

    fn schema() -> CsvSchema {
        CsvSchema {
            label_column: "income".into(),
            sensitive_column: "sex".into(),
            positive_label: "yes".into(),
            negative_label: Some("no".into()),
            categorical_columns: vec![],
            protected_value: Some("f".into()),
        }
    }

    #[test]
    fn csv_two_rows() {
        let text = "age,sex,income\n30,f,yes\n40,m,no\n";
        let ds = read_csv(text.as_bytes(), &schema()).unwrap();
        assert_eq!(ds.samples.iter().map(|s| s.y).collect::<Vec<_>>(), vec![1, -1]);
        assert_eq!(ds.samples.iter().map(|s| s.z).collect::<Vec<_>>(), vec![1, 0]);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.samples[1].x.as_slice(), &[40.0, 1.0]);
    }

    #[test]
    fn csv_one_hot() {
        let text = "job,age,sex,income\nb,1,f,yes\na,2,m,no\nc,3,m,no\nb,4,f,no\n";
        let mut sc = schema();
        sc.categorical_columns = vec!["job".into()];
        let ds = read_csv(text.as_bytes(), &sc).unwrap();
        assert_eq!(ds.feature_names, vec!["job=a", "job=b", "job=c", "age", "intercept"]);
        assert_eq!(ds.samples[0].x.as_slice(), &[0.0, 1.0, 0.0, 1.0, 1.0]);
        assert_eq!(ds.samples[2].x.as_slice(), &[0.0, 0.0, 1.0, 3.0, 1.0]);
    }

    #[test]
    fn csv_errors() {
        let sc = schema();
        assert!(matches!(read_csv("age,sex\n1,f\n".as_bytes(), &sc), Err(Error::MissingColumn(c)) if c == "income"));
        assert!(matches!(
            read_csv("age,sex,income\n1,f,maybe\n".as_bytes(), &sc),
            Err(Error::Unmappable { row: 2, ref column, .. }) if column == "income"
        ));
        assert!(matches!(
            read_csv("age,sex,income\n1,f,yes\nx,m,no\n".as_bytes(), &sc),
            Err(Error::NonNumeric { row: 3, ref column, .. }) if column == "age"
        ));
        assert!(matches!(
            read_csv("age,sex,income\n1,f,yes\n2,m\n".as_bytes(), &sc),
            Err(Error::RaggedRow { row: 3, expected: 3, got: 2 })
        ));
        let mut numeric = sc.clone();
        numeric.protected_value = None;
        assert!(matches!(
            read_csv("age,sex,income\n1,2,yes\n".as_bytes(), &numeric),
            Err(Error::Unmappable { ref column, .. }) if column == "sex"
        ));
    }

    #[test]
    fn canonical_round_trip() {
        let ds = gen_synthetic_di(50, 3).unwrap().with_intercept();
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf).unwrap();
        let back = read_csv(buf.as_slice(), &CsvSchema::canonical()).unwrap();
        assert_eq!(back, ds);
        let mut again = Vec::new();
        write_csv(&back, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn schema_parsing() {
        let sc = CsvSchema::parse("label=income\nsensitive = sex\npositive_label=>50K\ncategorical=a, b\n# note\n").unwrap();
        assert_eq!(sc.positive_label, ">50K");
        assert_eq!(sc.categorical_columns, vec!["a", "b"]);
        assert!(CsvSchema::parse("label=income\n").is_err());
        assert!(CsvSchema::parse("label=a\nsensitive=b\npositive_label=c\nbogus=1\n").is_err());
    }

    #[test]
    fn split_partitions() {
        let ds = gen_synthetic_di(300, 4).unwrap().with_intercept();
        // tag each row by its first feature, which is unique with probability one
        let cfg = SplitConfig { n_constraint: 50, n_heldout: 30, stream_length: 1000, seed: 5 };
        let sp = split(&ds, &cfg).unwrap();
        let key = |s: &Sample| s.x[0].to_bits();
        let a: BTreeSet<u64> = sp.dprime.iter().map(key).collect();
        let b: BTreeSet<u64> = sp.dtilde.iter().map(key).collect();
        let c: BTreeSet<u64> = sp.stream.pool().iter().map(key).collect();
        assert_eq!(a.len() + b.len() + c.len(), 300);
        assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
        let drawn: Vec<Sample> = sp.stream.clone().collect();
        assert_eq!(drawn.len(), 1000);
        assert!(drawn.iter().all(|s| c.contains(&key(s))));

        let again = split(&ds, &cfg).unwrap();
        assert_eq!(again.dprime, sp.dprime);
        assert_eq!(again.stream.collect::<Vec<_>>(), drawn);
        assert!(split(&ds, &SplitConfig { n_constraint: 250, n_heldout: 50, ..cfg }).is_err());
    }

    #[test]
    fn seed_mixing_spreads() {
        let s: BTreeSet<u64> = (0..1000).map(|i| mix_seed(42, i)).collect();
        assert_eq!(s.len(), 1000);
        assert_ne!(mix_seed(1, 0), mix_seed(0, 1));
    }
}
