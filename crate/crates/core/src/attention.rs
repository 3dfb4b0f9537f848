//! Reference math for the two attention mechanisms used by speaker
//! embedding networks: attentive statistics pooling and squeeze-excitation
//! channel gating. These are plain loops for invariant testing, not training
//! layers.

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};

/// Frame-level features, `T × D`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatures(Array2<f64>);

impl FrameFeatures {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::ShapeMismatch(format!(
                "frame features must be at least 1x1, got {:?}",
                data.dim()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("frame_features", "entries must be finite"));
        }
        Ok(Self(data))
    }

    pub fn frames(&self) -> usize {
        self.0.nrows()
    }

    pub fn dims(&self) -> usize {
        self.0.ncols()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.0
    }
}

/// Per-frame weights on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights(Vec<f64>);

impl AttentionWeights {
    pub const SUM_TOLERANCE: f64 = 1e-9;

    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::config("attention_weights", "must be nonempty"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::config(
                "attention_weights",
                "entries must be finite and nonnegative",
            ));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::config(
                "attention_weights",
                format!("entries sum to {sum}, expected 1"),
            ));
        }
        Ok(Self(weights))
    }

    pub fn uniform(frames: usize) -> Result<Self> {
        Self::new(vec![1.0 / frames as f64; frames])
    }

    /// Numerically stable softmax of raw attention scores.
    pub fn softmax(scores: &[f64]) -> Result<Self> {
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let total: f64 = exp.iter().sum();
        Self::new(exp.into_iter().map(|e| e / total).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Per-dimension mean and population standard deviation, concatenated.
pub fn statistics_pooling(h: &FrameFeatures) -> Array1<f64> {
    let dims = h.dims();
    let mut mean = vec![0.0; dims];
    let mut m2 = vec![0.0; dims];
    // Welford
    for (t, frame) in h.0.axis_iter(Axis(0)).enumerate() {
        let count = (t + 1) as f64;
        for (d, &x) in frame.iter().enumerate() {
            let delta = x - mean[d];
            mean[d] += delta / count;
            m2[d] += delta * (x - mean[d]);
        }
    }
    let frames = h.frames() as f64;
    mean.iter()
        .copied()
        .chain(m2.iter().map(|s| (s / frames).max(0.0).sqrt()))
        .collect()
}

/// Weighted mean and the raw (unclamped) weighted variance per dimension.
pub(crate) fn weighted_moments(h: &FrameFeatures, w: &AttentionWeights) -> (Vec<f64>, Vec<f64>) {
    let dims = h.dims();
    let mut mean = vec![0.0; dims];
    let mut second = vec![0.0; dims];
    for (frame, &wt) in h.0.axis_iter(Axis(0)).zip(&w.0) {
        for (d, &x) in frame.iter().enumerate() {
            mean[d] += wt * x;
            second[d] += wt * x * x;
        }
    }
    let var = mean.iter().zip(&second).map(|(m, s)| s - m * m).collect();
    (mean, var)
}

/// Attention-weighted mean and standard deviation, concatenated. The
/// variance is clamped at zero before the square root.
pub fn attentive_statistics_pooling(
    h: &FrameFeatures,
    w: &AttentionWeights,
) -> Result<Array1<f64>> {
    if w.0.len() != h.frames() {
        return Err(Error::WeightMismatch {
            weights: w.0.len(),
            frames: h.frames(),
        });
    }
    let (mean, var) = weighted_moments(h, w);
    Ok(mean
        .into_iter()
        .chain(var.into_iter().map(|v| v.max(0.0).sqrt()))
        .collect())
}

/// Logistic function, held strictly inside (0, 1) where f64 would round to
/// an endpoint.
fn sigmoid(x: f64) -> f64 {
    (1.0 / (1.0 + (-x).exp())).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Channel gates `sigmoid(w2 · relu(w1 · squeeze(input)))` for a `C × S`
/// input (channels by flattened spatial positions).
pub fn se_gates(input: &Array2<f64>, w1: &Array2<f64>, w2: &Array2<f64>) -> Result<Array1<f64>> {
    let (channels, positions) = input.dim();
    let bottleneck = w1.nrows();
    if channels == 0 || positions == 0 {
        return Err(Error::ShapeMismatch("input needs at least one channel and position".into()));
    }
    if w1.ncols() != channels || bottleneck == 0 || channels % bottleneck != 0 {
        return Err(Error::ShapeMismatch(format!(
            "w1 must be (C/r) x C with r dividing C = {channels}, got {:?}",
            w1.dim()
        )));
    }
    if w2.dim() != (channels, bottleneck) {
        return Err(Error::ShapeMismatch(format!(
            "w2 must be {channels} x {bottleneck}, got {:?}",
            w2.dim()
        )));
    }
    let squeezed = input.mean_axis(Axis(1)).expect("nonempty axis");
    let hidden = w1.dot(&squeezed).mapv_into(|v| v.max(0.0));
    Ok(w2.dot(&hidden).mapv_into(sigmoid))
}

/// Squeeze-and-excitation: scale each channel of `input` by its gate.
pub fn se_block(input: &Array2<f64>, w1: &Array2<f64>, w2: &Array2<f64>) -> Result<Array2<f64>> {
    let gates = se_gates(input, w1, w2)?;
    let mut out = input.clone();
    for (mut channel, g) in out.axis_iter_mut(Axis(0)).zip(gates.iter()) {
        channel.mapv_inplace(|v| v * g);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut r = ChaCha20Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| r.gen_range(-2.0..2.0))
    }

    fn random_simplex(n: usize, seed: u64) -> AttentionWeights {
        let mut r = ChaCha20Rng::seed_from_u64(seed);
        let raw: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..1.0)).collect();
        let total: f64 = raw.iter().sum();
        AttentionWeights::new(raw.iter().map(|v| v / total).collect()).unwrap()
    }

    // two-pass mean then variance
    fn two_pass_oracle(h: &Array2<f64>) -> Vec<f64> {
        let (t, d) = h.dim();
        let mut out = vec![0.0; 2 * d];
        for j in 0..d {
            let mut s = 0.0;
            for i in 0..t {
                s += h[[i, j]];
            }
            let mean = s / t as f64;
            let mut v = 0.0;
            for i in 0..t {
                v += (h[[i, j]] - mean).powi(2);
            }
            out[j] = mean;
            out[d + j] = (v / t as f64).sqrt();
        }
        out
    }

    fn weighted_oracle(h: &Array2<f64>, w: &[f64]) -> Vec<f64> {
        let (t, d) = h.dim();
        let mut out = vec![0.0; 2 * d];
        for j in 0..d {
            let mean: f64 = (0..t).map(|i| w[i] * h[[i, j]]).sum();
            let sq: f64 = (0..t).map(|i| w[i] * h[[i, j]] * h[[i, j]]).sum();
            out[j] = mean;
            out[d + j] = (sq - mean * mean).max(0.0).sqrt();
        }
        out
    }

    #[test]
    fn single_frame_pooling() {
        let h = FrameFeatures::new(array![[1.0, -2.0, 3.0]]).unwrap();
        assert_eq!(statistics_pooling(&h).to_vec(), vec![1.0, -2.0, 3.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn two_frame_pooling() {
        let h = FrameFeatures::new(array![[0.0], [2.0]]).unwrap();
        assert_eq!(statistics_pooling(&h).to_vec(), vec![1.0, 1.0]);
    }

    #[test]
    fn pooling_matches_two_pass() {
        for seed in 0..20 {
            let m = random_matrix(50, 8, seed);
            let got = statistics_pooling(&FrameFeatures::new(m.clone()).unwrap());
            for (a, b) in got.iter().zip(two_pass_oracle(&m)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn asp_uniform_reduces_to_pooling() {
        let m = random_matrix(37, 6, 1);
        let h = FrameFeatures::new(m).unwrap();
        let asp = attentive_statistics_pooling(&h, &AttentionWeights::uniform(37).unwrap()).unwrap();
        for (a, b) in asp.iter().zip(statistics_pooling(&h).iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn asp_one_hot_selects_frame() {
        let m = random_matrix(5, 4, 2);
        let h = FrameFeatures::new(m.clone()).unwrap();
        let w = AttentionWeights::new(vec![0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let asp = attentive_statistics_pooling(&h, &w).unwrap();
        assert_eq!(asp.slice(ndarray::s![..4]).to_vec(), m.row(2).to_vec());
        assert!(asp.slice(ndarray::s![4..]).iter().all(|&s| s == 0.0));
    }

    #[test]
    fn asp_matches_weighted_oracle() {
        for seed in 0..20 {
            let m = random_matrix(30, 5, seed);
            let w = random_simplex(30, seed + 100);
            let got = attentive_statistics_pooling(&FrameFeatures::new(m.clone()).unwrap(), &w)
                .unwrap();
            for (a, b) in got.iter().zip(weighted_oracle(&m, w.as_slice())) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn asp_weight_mismatch() {
        let h = FrameFeatures::new(random_matrix(4, 2, 0)).unwrap();
        let err = attentive_statistics_pooling(&h, &AttentionWeights::uniform(3).unwrap());
        assert!(matches!(err, Err(Error::WeightMismatch { weights: 3, frames: 4 })));
    }

    #[test]
    fn variance_clamp_is_exercised() {
        // constant frames under non-uniform weights: rounding drives the raw
        // variance below zero for some constants
        let mut clamped = 0;
        for i in 1..2000 {
            let c = 0.1 + i as f64 * 1e-3;
            let h = FrameFeatures::new(Array2::from_elem((7, 1), c)).unwrap();
            let w = random_simplex(7, i);
            let (_, var) = weighted_moments(&h, &w);
            let asp = attentive_statistics_pooling(&h, &w).unwrap();
            assert!(asp[1] >= 0.0);
            if var[0] < 0.0 {
                clamped += 1;
                assert_eq!(asp[1], 0.0);
            }
        }
        assert!(clamped > 0);
    }

    #[test]
    fn weights_validation_and_softmax() {
        assert!(AttentionWeights::new(vec![0.5, 0.6]).is_err());
        assert!(AttentionWeights::new(vec![1.5, -0.5]).is_err());
        assert!(AttentionWeights::new(vec![]).is_err());
        let w = AttentionWeights::softmax(&[1000.0, 1000.0]).unwrap();
        assert_eq!(w.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn frame_features_validation() {
        assert!(FrameFeatures::new(Array2::zeros((0, 3))).is_err());
        assert!(FrameFeatures::new(array![[f64::NAN]]).is_err());
    }

    #[test]
    fn se_zero_weights_halve_input() {
        let x = random_matrix(8, 10, 3);
        let out = se_block(&x, &Array2::zeros((2, 8)), &Array2::zeros((8, 2))).unwrap();
        for (o, i) in out.iter().zip(x.iter()) {
            assert_eq!(*o, 0.5 * i);
        }
    }

    // naive loops over every index
    fn se_oracle(x: &Array2<f64>, w1: &Array2<f64>, w2: &Array2<f64>) -> Array2<f64> {
        let (c, s) = x.dim();
        let r = w1.nrows();
        let mut squeeze = vec![0.0; c];
        for ch in 0..c {
            for p in 0..s {
                squeeze[ch] += x[[ch, p]];
            }
            squeeze[ch] /= s as f64;
        }
        let mut hidden = vec![0.0; r];
        for j in 0..r {
            for ch in 0..c {
                hidden[j] += w1[[j, ch]] * squeeze[ch];
            }
            hidden[j] = hidden[j].max(0.0);
        }
        let mut out = x.clone();
        for ch in 0..c {
            let mut z = 0.0;
            for j in 0..r {
                z += w2[[ch, j]] * hidden[j];
            }
            let gate = 1.0 / (1.0 + (-z).exp());
            for p in 0..s {
                out[[ch, p]] = gate * x[[ch, p]];
            }
        }
        out
    }

    #[test]
    fn se_matches_loop_oracle() {
        for seed in 0..10 {
            let x = random_matrix(4, 9, seed);
            let w1 = random_matrix(2, 4, seed + 50);
            let w2 = random_matrix(4, 2, seed + 90);
            let got = se_block(&x, &w1, &w2).unwrap();
            for (a, b) in got.iter().zip(se_oracle(&x, &w1, &w2).iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn se_shape_errors() {
        let x = random_matrix(6, 3, 0);
        assert!(se_block(&x, &Array2::zeros((4, 6)), &Array2::zeros((6, 4))).is_err());
        assert!(se_block(&x, &Array2::zeros((3, 5)), &Array2::zeros((6, 3))).is_err());
        assert!(se_block(&x, &Array2::zeros((3, 6)), &Array2::zeros((6, 2))).is_err());
        assert!(se_block(&Array2::zeros((6, 0)), &Array2::zeros((3, 6)), &Array2::zeros((6, 3))).is_err());
    }

    proptest::proptest! {
        #[test]
        fn se_gates_in_open_unit_interval(seed in 0u64..500, scale in 0.01f64..5.0) {
            let x = random_matrix(6, 5, seed);
            let w1 = random_matrix(3, 6, seed + 1) * scale;
            let w2 = random_matrix(6, 3, seed + 2) * scale;
            let gates = se_gates(&x, &w1, &w2).unwrap();
            proptest::prop_assert!(gates.iter().all(|&g| g > 0.0 && g < 1.0));
            let out = se_block(&x, &w1, &w2).unwrap();
            for (o, i) in out.iter().zip(x.iter()) {
                proptest::prop_assert!(o.abs() <= i.abs());
            }
        }

        #[test]
        fn squeeze_scales_linearly(seed in 0u64..500, g in -4.0f64..4.0) {
            let x = random_matrix(4, 8, seed);
            let s1 = x.mean_axis(Axis(1)).unwrap();
            let s2 = (&x * g).mean_axis(Axis(1)).unwrap();
            for (a, b) in s1.iter().zip(s2.iter()) {
                proptest::prop_assert!((g * a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn asp_uniform_equals_pooling_everywhere(seed in 0u64..1000, t in 1usize..40, d in 1usize..6) {
            let h = FrameFeatures::new(random_matrix(t, d, seed)).unwrap();
            let asp = attentive_statistics_pooling(&h, &AttentionWeights::uniform(t).unwrap()).unwrap();
            for (a, b) in asp.iter().zip(statistics_pooling(&h).iter()) {
                proptest::prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
