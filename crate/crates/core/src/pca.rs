//! Principal component analysis of small embedding sets via power iteration
//! with deflation, plus CSV output of the projected coordinates.

use std::fs::{self, File};
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::features::decode_lmel;
use crate::rng::sample_stream;

pub const TOLERANCE: f64 = 1e-12;
pub const MAX_ITERATIONS: usize = 10_000;
/// Adjacent eigenvalues closer than this ratio make the basis ambiguous.
pub const DEGENERATE_GAP_RATIO: f64 = 1.0 + 1e-9;

/// `N × D` embeddings with one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    data: Array2<f64>,
    labels: Vec<String>,
}

impl EmbeddingSet {
    pub fn new(data: Array2<f64>, labels: Vec<String>) -> Result<Self> {
        let (n, d) = data.dim();
        if n < 2 || d < 2 {
            return Err(Error::ShapeMismatch(format!(
                "embedding set must be at least 2x2, got {n}x{d}"
            )));
        }
        if labels.len() != n {
            return Err(Error::DimensionMismatch {
                left: n,
                right: labels.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("embeddings", "entries must be finite"));
        }
        Ok(Self { data, labels })
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjection {
    /// `N × k` projected coordinates.
    pub coords: Array2<f64>,
    /// `k × D` orthonormal principal axes, sign-canonicalized.
    pub components: Array2<f64>,
    pub eigenvalues: Vec<f64>,
    /// Fraction of total variance carried by each component, descending.
    pub explained_variance_ratio: Vec<f64>,
    /// Two adjacent eigenvalues (including the one after the k-th) are
    /// nearly equal, so the corresponding axes are not unique.
    pub degenerate_gap: bool,
    /// Every eigenpair reached the residual tolerance within the iteration cap.
    pub converged: bool,
}

/// Sample covariance (1/(N−1)) of the rows of `data`, and the column means.
pub fn covariance(data: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let mean = data.mean_axis(Axis(0)).expect("nonempty");
    let centered = data - &mean;
    let n = data.nrows() as f64;
    (centered.t().dot(&centered) / (n - 1.0), mean)
}

struct EigenPair {
    value: f64,
    vector: Array1<f64>,
    converged: bool,
}

fn orthogonalize(v: &mut Array1<f64>, basis: &[Array1<f64>]) {
    for b in basis {
        let p = v.dot(b);
        v.scaled_add(-p, b);
    }
}

fn dominant_eigenpair(a: &Array2<f64>, found: &[Array1<f64>], scale: f64, seed: u64) -> EigenPair {
    let dim = a.nrows();
    let mut rng = sample_stream(0x7063_615f_7374_6172, seed);
    let mut v = Array1::from_shape_fn(dim, |_| rng.gen_range(-1.0..1.0));
    orthogonalize(&mut v, found);
    let norm = v.dot(&v).sqrt();
    v /= norm;

    let mut value = 0.0;
    for _ in 0..MAX_ITERATIONS {
        let mut w = a.dot(&v);
        orthogonalize(&mut w, found);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return EigenPair {
                value: 0.0,
                vector: v,
                converged: true,
            };
        }
        v = w / norm;
        let av = a.dot(&v);
        value = v.dot(&av);
        let residual = &av - &(&v * value);
        if residual.dot(&residual).sqrt() <= TOLERANCE * scale {
            return EigenPair {
                value,
                vector: v,
                converged: true,
            };
        }
    }
    EigenPair {
        value,
        vector: v,
        converged: false,
    }
}

/// Flip `v` so its largest-magnitude entry (first on ties) is positive.
fn canonical_sign(v: &mut Array1<f64>) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.mapv_inplace(|x| -x);
    }
}

/// Leading eigenpairs of a symmetric positive semidefinite matrix, in
/// descending order, by power iteration with Hotelling deflation.
fn leading_eigenpairs(cov: &Array2<f64>, count: usize) -> Vec<EigenPair> {
    let scale = cov.diag().sum().max(f64::MIN_POSITIVE);
    let mut deflated = cov.clone();
    let mut pairs: Vec<EigenPair> = Vec::with_capacity(count);
    for i in 0..count {
        let found: Vec<Array1<f64>> = pairs.iter().map(|p| p.vector.clone()).collect();
        let mut pair = dominant_eigenpair(&deflated, &found, scale, i as u64);
        pair.value = pair.value.max(0.0);
        canonical_sign(&mut pair.vector);
        let v = pair.vector.view().insert_axis(Axis(1));
        deflated -= &(v.dot(&v.t()) * pair.value);
        pairs.push(pair);
    }
    pairs
}

/// Project the embeddings onto their top `k` principal components.
pub fn pca_project(e: &EmbeddingSet, k: usize) -> Result<PcaProjection> {
    let (n, d) = e.data.dim();
    if k == 0 || k > (n - 1).min(d) {
        return Err(Error::config(
            "k",
            format!("must lie in [1, {}] for {n}x{d} embeddings", (n - 1).min(d)),
        ));
    }
    let (cov, mean) = covariance(&e.data);
    let total = cov.diag().sum();
    let pairs = leading_eigenpairs(&cov, (k + 1).min(d));

    let nonzero = pairs
        .iter()
        .take_while(|p| total > 0.0 && p.value > TOLERANCE * total)
        .count();
    if nonzero < k {
        return Err(Error::RankDeficient {
            requested: k,
            available: nonzero,
        });
    }

    let degenerate_gap = pairs
        .windows(2)
        .take(k)
        .any(|w| w[1].value > TOLERANCE * total && w[0].value / w[1].value < DEGENERATE_GAP_RATIO);

    let mut components = Array2::zeros((k, d));
    for (mut row, p) in components.rows_mut().into_iter().zip(&pairs) {
        row.assign(&p.vector);
    }
    let centered = &e.data - &mean;
    let coords = centered.dot(&components.t());
    let eigenvalues: Vec<f64> = pairs[..k].iter().map(|p| p.value).collect();
    Ok(PcaProjection {
        coords,
        components,
        explained_variance_ratio: eigenvalues.iter().map(|v| v / total).collect(),
        eigenvalues,
        degenerate_gap,
        converged: pairs.iter().all(|p| p.converged),
    })
}

/// Write `label,pc1,...,pck` CSV, one row per embedding. Values use the
/// shortest representation that parses back to the same f64.
pub fn write_projection(coords: &Array2<f64>, labels: &[String], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if coords.nrows() != labels.len() {
        return Err(Error::DimensionMismatch {
            left: coords.nrows(),
            right: labels.len(),
        });
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let csv_err = |e: csv::Error| Error::io(path, e.into());
    let mut header = vec!["label".to_string()];
    header.extend((1..=coords.ncols()).map(|i| format!("pc{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for (label, row) in labels.iter().zip(coords.rows()) {
        let mut record = vec![label.clone()];
        record.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&record).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read back a file produced by [`write_projection`].
pub fn read_projection(path: impl AsRef<Path>) -> Result<(Vec<String>, Array2<f64>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let bad = |line: usize, message: String| Error::Parse {
        source_name: path.display().to_string(),
        line,
        message,
    };
    let cols = r.headers().map_err(|e| bad(1, e.to_string()))?.len().saturating_sub(1);
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| bad(i + 2, e.to_string()))?;
        labels.push(rec[0].to_string());
        for field in rec.iter().skip(1) {
            values.push(field.parse::<f64>().map_err(|e| bad(i + 2, e.to_string()))?);
        }
    }
    let rows = labels.len();
    let data = Array2::from_shape_vec((rows, cols), values).map_err(|e| bad(0, e.to_string()))?;
    Ok((labels, data))
}

/// Load an embedding matrix from an `LMEL` file or a headerless numeric CSV.
pub fn read_embedding_matrix(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"LMEL") {
        return decode_lmel(&bytes);
    }
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(bytes.as_slice());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let bad = |message: String| Error::Parse {
            source_name: path.display().to_string(),
            line: i + 1,
            message,
        };
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let row: Vec<f64> = rec
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| bad(format!("`{f}`: {e}"))))
            .collect::<Result<_>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(bad(format!("expected {} columns, found {}", first.len(), row.len())));
            }
        }
        rows.push(row);
    }
    let cols = rows.first().map_or(0, Vec::len);
    let n = rows.len();
    Array2::from_shape_vec((n, cols), rows.into_iter().flatten().collect())
        .map_err(|e| Error::ShapeMismatch(e.to_string()))
}

/// One label per nonempty line.
pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i}")).collect()
    }

    #[test]
    fn collinear_recovers_direction() {
        let data = Array2::from_shape_fn((6, 2), |(i, j)| {
            let t = i as f64 - 2.0;
            if j == 0 { 3.0 + t } else { -1.0 + 2.0 * t }
        });
        let e = EmbeddingSet::new(data, labels(6)).unwrap();
        let p = pca_project(&e, 1).unwrap();
        let s5 = 5f64.sqrt();
        assert!((p.components[[0, 0]] - 1.0 / s5).abs() < 1e-12);
        assert!((p.components[[0, 1]] - 2.0 / s5).abs() < 1e-12);
        assert!((p.explained_variance_ratio[0] - 1.0).abs() < 1e-12);
        assert!(matches!(
            pca_project(&e, 2),
            Err(Error::RankDeficient { requested: 2, available: 1 })
        ));
    }

    #[test]
    fn isotropic_cross() {
        let data = array![[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]];
        let e = EmbeddingSet::new(data, labels(4)).unwrap();
        let p = pca_project(&e, 2).unwrap();
        for r in &p.explained_variance_ratio {
            assert!((r - 0.5).abs() < 1e-12);
        }
        assert!(p.degenerate_gap);
        let gram = p.components.dot(&p.components.t());
        assert!((&gram - &Array2::<f64>::eye(2)).iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn k_bounds() {
        let e = EmbeddingSet::new(Array2::from_shape_fn((3, 4), |(i, j)| (i * j) as f64), labels(3))
            .unwrap();
        assert!(pca_project(&e, 0).is_err());
        assert!(matches!(pca_project(&e, 3), Err(Error::InvalidConfig { field: "k", .. })));
    }

    #[test]
    fn set_validation() {
        assert!(EmbeddingSet::new(Array2::zeros((1, 3)), labels(1)).is_err());
        assert!(EmbeddingSet::new(Array2::zeros((3, 1)), labels(3)).is_err());
        assert!(EmbeddingSet::new(Array2::zeros((3, 3)), labels(2)).is_err());
        assert!(EmbeddingSet::new(Array2::from_elem((3, 3), f64::NAN), labels(3)).is_err());
    }

    #[test]
    fn identical_points_are_rank_deficient() {
        let e = EmbeddingSet::new(Array2::from_elem((4, 3), 2.5), labels(4)).unwrap();
        assert!(matches!(pca_project(&e, 1), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn csv_single_row_and_quoting() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        write_projection(&array![[0.0, 0.0]], &["spk1".into()], &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(text.lines().next().unwrap(), "label,pc1,pc2");

        write_projection(&array![[1.5, -2.0]], &["music, 5dB".into()], &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "\"music, 5dB\",1.5,-2");
        assert!(write_projection(&array![[1.0, 2.0]], &[], &path).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let mut r = ChaCha20Rng::seed_from_u64(1);
        let coords = Array2::from_shape_fn((10, 2), |_| r.gen_range(-1e3..1e3) / 7.0);
        let names: Vec<String> = (0..10).map(|i| format!("s\"{i}\",x")).collect();
        write_projection(&coords, &names, &path).unwrap();
        let (back_labels, back) = read_projection(&path).unwrap();
        assert_eq!(back_labels, names);
        for (a, b) in coords.iter().zip(back.iter()) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn embedding_matrix_formats() {
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("e.csv");
        fs::write(&csv_path, "1, 2, 3\n4,5,6\n").unwrap();
        assert_eq!(read_embedding_matrix(&csv_path).unwrap(), array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        fs::write(&csv_path, "1,2\n3\n").unwrap();
        assert!(read_embedding_matrix(&csv_path).is_err());
        let lmel_path = dir.path().join("e.lmel");
        crate::features::write_lmel(&array![[0.5, 1.0], [2.0, 4.0]], &lmel_path).unwrap();
        assert_eq!(read_embedding_matrix(&lmel_path).unwrap(), array![[0.5, 1.0], [2.0, 4.0]]);
    }

    proptest::proptest! {
        #[test]
        fn centering_invariance(seed in 0u64..100) {
            let mut r = ChaCha20Rng::seed_from_u64(seed);
            let data = Array2::from_shape_fn((12, 4), |_| r.gen_range(-1.0..1.0));
            let shift = Array1::from_shape_fn(4, |_| r.gen_range(-50.0..50.0));
            let a = pca_project(&EmbeddingSet::new(data.clone(), labels(12)).unwrap(), 2).unwrap();
            let b = pca_project(&EmbeddingSet::new(&data + &shift, labels(12)).unwrap(), 2).unwrap();
            for (x, y) in a.coords.iter().zip(b.coords.iter()) {
                proptest::prop_assert!((x - y).abs() < 1e-6);
            }
        }

        #[test]
        fn projected_variance_bounded(seed in 0u64..100, k in 1usize..5) {
            let mut r = ChaCha20Rng::seed_from_u64(seed);
            let data = Array2::from_shape_fn((15, 4), |_| r.gen_range(-1.0..1.0));
            let p = pca_project(&EmbeddingSet::new(data.clone(), labels(15)).unwrap(), k).unwrap();
            let total = covariance(&data).0.diag().sum();
            let projected: f64 = p.eigenvalues.iter().sum();
            proptest::prop_assert!(projected <= total * (1.0 + 1e-12));
            if k == 4 {
                proptest::prop_assert!((projected - total).abs() < 1e-9 * total);
            }
            let ratios = &p.explained_variance_ratio;
            proptest::prop_assert!(ratios.windows(2).all(|w| w[0] >= w[1]));
            for row in p.components.rows() {
                let mut best = 0;
                for (i, v) in row.iter().enumerate() {
                    if v.abs() > row[best].abs() { best = i; }
                }
                proptest::prop_assert!(row[best] > 0.0);
            }
        }
    }
}
