//! Trial lists, cosine scoring and equal error rate.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Target,
    Nontarget,
}

impl Label {
    fn parse(token: &str) -> Option<Self> {
        match token {
            "1" | "target" => Some(Label::Target),
            "0" | "nontarget" => Some(Label::Nontarget),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trial {
    pub enroll_id: String,
    pub test_id: String,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredTrial {
    pub trial: Trial,
    pub score: f64,
}

/// Equal error rate as a fraction, and the score threshold where it occurs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EerResult {
    pub eer: f64,
    pub threshold: f64,
}

pub fn cosine_score(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Score every trial by cosine similarity of the two utterances' embeddings.
pub fn score_trials(
    trials: &[Trial],
    embeddings: &HashMap<String, Vec<f64>>,
) -> Result<Vec<ScoredTrial>> {
    let lookup = |id: &str| {
        embeddings.get(id).ok_or_else(|| Error::Parse {
            source_name: "trials".into(),
            line: 0,
            message: format!("no embedding for `{id}`"),
        })
    };
    trials
        .iter()
        .map(|t| {
            let score = cosine_score(lookup(&t.enroll_id)?, lookup(&t.test_id)?)?;
            Ok(ScoredTrial {
                trial: t.clone(),
                score,
            })
        })
        .collect()
}

pub fn compute_eer(scored: &[ScoredTrial]) -> Result<EerResult> {
    let pairs: Vec<(Label, f64)> = scored.iter().map(|s| (s.trial.label, s.score)).collect();
    eer_from_scores(&pairs)
}

/// EER over `(label, score)` pairs.
///
/// Operating points are taken at every distinct score `θ` (plus a final
/// point above all scores) with `FAR(θ)` the fraction of nontargets scoring
/// `≥ θ` and `FRR(θ)` the fraction of targets scoring `< θ`. The EER is
/// linearly interpolated between the two adjacent points where `FAR - FRR`
/// changes sign.
pub fn eer_from_scores(pairs: &[(Label, f64)]) -> Result<EerResult> {
    if let Some((_, s)) = pairs.iter().find(|(_, s)| !s.is_finite()) {
        return Err(Error::config("score", format!("non-finite score {s}")));
    }
    let n_target = pairs.iter().filter(|(l, _)| *l == Label::Target).count();
    let n_nontarget = pairs.len() - n_target;
    if n_target == 0 {
        return Err(Error::MissingClass("target"));
    }
    if n_nontarget == 0 {
        return Err(Error::MissingClass("nontarget"));
    }

    let mut sorted: Vec<(f64, Label)> = pairs.iter().map(|&(l, s)| (s, l)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    // walk thresholds upward; counts below the current threshold
    let (nt, nn) = (n_target as f64, n_nontarget as f64);
    let (mut targets_below, mut nontargets_below) = (0usize, 0usize);
    let mut prev: Option<(f64, f64, f64)> = None; // (threshold, far, frr)
    let mut i = 0;
    loop {
        let (threshold, at_end) = match sorted.get(i) {
            Some(&(s, _)) => (s, false),
            None => (f64::INFINITY, true),
        };
        let far = (n_nontarget - nontargets_below) as f64 / nn;
        let frr = targets_below as f64 / nt;
        let diff = far - frr;
        if diff <= 0.0 {
            let Some((p_thr, p_far, p_frr)) = prev else {
                return Ok(EerResult { eer: far, threshold });
            };
            if diff == 0.0 {
                return Ok(EerResult { eer: far, threshold });
            }
            let p_diff = p_far - p_frr;
            let t = p_diff / (p_diff - diff);
            let eer = p_far + t * (far - p_far);
            let threshold = if at_end {
                p_thr
            } else {
                p_thr + t * (threshold - p_thr)
            };
            return Ok(EerResult { eer, threshold });
        }
        debug_assert!(!at_end, "FAR - FRR is -1 above every score");
        prev = Some((threshold, far, frr));
        while i < sorted.len() && sorted[i].0 == threshold {
            match sorted[i].1 {
                Label::Target => targets_below += 1,
                Label::Nontarget => nontargets_below += 1,
            }
            i += 1;
        }
    }
}

fn parse_error(source: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        source_name: source.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Parse a score file: `label score` per line, label 1 (target) or 0.
pub fn parse_scores(text: &str, source: &Path) -> Result<Vec<(Label, f64)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [label, score] = fields[..] else {
            return Err(parse_error(source, i + 1, "expected `label score`"));
        };
        let label = Label::parse(label)
            .ok_or_else(|| parse_error(source, i + 1, format!("bad label `{label}`")))?;
        let score: f64 = score
            .parse()
            .map_err(|_| parse_error(source, i + 1, format!("bad score `{score}`")))?;
        out.push((label, score));
    }
    Ok(out)
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<(Label, f64)>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scores(&text, path)
}

/// Parse a trial list: `label enroll_path test_path` per line.
pub fn parse_trials(text: &str, source: &Path) -> Result<Vec<Trial>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [label, enroll, test] = fields[..] else {
            return Err(parse_error(source, i + 1, "expected `label enroll test`"));
        };
        let label = Label::parse(label)
            .ok_or_else(|| parse_error(source, i + 1, format!("bad label `{label}`")))?;
        out.push(Trial {
            enroll_id: enroll.to_owned(),
            test_id: test.to_owned(),
            label,
        });
    }
    Ok(out)
}

pub fn read_trials(path: impl AsRef<Path>) -> Result<Vec<Trial>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trials(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    use Label::{Nontarget as N, Target as T};

    /// Counts FAR/FRR from scratch at every distinct score and at +inf,
    /// then interpolates at the first sign change.
    pub(crate) fn brute_force_eer(pairs: &[(Label, f64)]) -> f64 {
        let mut thresholds: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        thresholds.sort_by(f64::total_cmp);
        thresholds.dedup();
        thresholds.push(f64::INFINITY);
        let nt = pairs.iter().filter(|p| p.0 == T).count() as f64;
        let nn = pairs.iter().filter(|p| p.0 == N).count() as f64;
        let points: Vec<(f64, f64)> = thresholds
            .iter()
            .map(|&th| {
                let fa = pairs.iter().filter(|p| p.0 == N && p.1 >= th).count() as f64 / nn;
                let fr = pairs.iter().filter(|p| p.0 == T && p.1 < th).count() as f64 / nt;
                (fa, fr)
            })
            .collect();
        for k in 0..points.len() {
            let (fa, fr) = points[k];
            if fa - fr <= 0.0 {
                if k == 0 || fa == fr {
                    return fa;
                }
                let (pfa, pfr) = points[k - 1];
                let t = (pfa - pfr) / ((pfa - pfr) - (fa - fr));
                return pfa + t * (fa - pfa);
            }
        }
        unreachable!()
    }

    fn random_trials(n: usize, seed: u64, quantize: bool) -> Vec<(Label, f64)> {
        let mut r = ChaCha20Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let label = if r.gen_bool(0.3) { T } else { N };
                let shift = if label == T { 0.8 } else { 0.0 };
                let mut s: f64 = r.gen_range(-1.0..1.0) + shift;
                if quantize {
                    s = (s * 10.0).round() / 10.0;
                }
                (label, s)
            })
            .collect()
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_score(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_score(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine_score(&[0.3, -0.4], &[0.9, -1.2]).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(cosine_score(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroVector)));
        assert!(matches!(
            cosine_score(&[1.0], &[1.0, 0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn perfect_and_inverted_separation() {
        let perfect = [(T, 1.0), (T, 1.0), (N, 0.0), (N, 0.0), (N, 0.0)];
        assert_eq!(eer_from_scores(&perfect).unwrap().eer, 0.0);
        let swapped: Vec<_> = perfect
            .iter()
            .map(|&(l, s)| (if l == T { N } else { T }, s))
            .collect();
        assert_eq!(eer_from_scores(&swapped).unwrap().eer, 1.0);
    }

    #[test]
    fn hand_computed_interpolation() {
        // thresholds 0.1..0.4: (FAR, FRR) = (1,0), (0.5,0), (0.5,0.5), (0,0.5); sign flips
        // between 0.2 and 0.3 where FAR = FRR = 0.5 exactly at 0.3
        let pairs = [(N, 0.1), (T, 0.2), (N, 0.3), (T, 0.4)];
        let r = eer_from_scores(&pairs).unwrap();
        assert_eq!(r.eer, 0.5);
        assert_eq!(r.threshold, 0.3);
    }

    #[test]
    fn all_tied_scores() {
        let r = eer_from_scores(&[(T, 0.5), (N, 0.5)]).unwrap();
        assert_eq!(r.eer, 0.5);
    }

    #[test]
    fn missing_class() {
        assert!(matches!(eer_from_scores(&[(T, 0.1)]), Err(Error::MissingClass("nontarget"))));
        assert!(matches!(eer_from_scores(&[(N, 0.1)]), Err(Error::MissingClass("target"))));
        assert!(eer_from_scores(&[(T, f64::NAN), (N, 0.0)]).is_err());
    }

    #[test]
    fn matches_brute_force() {
        for seed in 0..30 {
            for quantize in [false, true] {
                let pairs = random_trials(1000, seed, quantize);
                let got = eer_from_scores(&pairs).unwrap().eer;
                assert!((got - brute_force_eer(&pairs)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn scored_trials_route() {
        let mut emb = HashMap::new();
        emb.insert("a".to_string(), vec![1.0, 0.0]);
        emb.insert("b".to_string(), vec![1.0, 0.1]);
        emb.insert("c".to_string(), vec![0.0, 1.0]);
        let trials = parse_trials("1 a b\n0 a c\n", Path::new("t")).unwrap();
        let scored = score_trials(&trials, &emb).unwrap();
        assert_eq!(compute_eer(&scored).unwrap().eer, 0.0);
        let missing = parse_trials("1 a z\n", Path::new("t")).unwrap();
        assert!(score_trials(&missing, &emb).is_err());
    }

    #[test]
    fn parsing() {
        let s = parse_scores("1 0.5\n# comment\n\n0 -0.25\n", Path::new("s")).unwrap();
        assert_eq!(s, vec![(T, 0.5), (N, -0.25)]);
        assert!(parse_scores("1\n", Path::new("s")).is_err());
        assert!(parse_scores("2 0.1\n", Path::new("s")).is_err());
        assert!(parse_scores("1 abc\n", Path::new("s")).is_err());
        assert!(parse_trials("1 a\n", Path::new("t")).is_err());
    }

    proptest::proptest! {
        #[test]
        fn invariant_under_monotone_transform(seed in 0u64..200) {
            let pairs = random_trials(300, seed, true);
            let transformed: Vec<_> = pairs.iter().map(|&(l, s)| (l, (3.0 * s).exp() + 7.0)).collect();
            let a = eer_from_scores(&pairs).unwrap().eer;
            let b = eer_from_scores(&transformed).unwrap().eer;
            proptest::prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn negation_with_swapped_labels(seed in 0u64..200, quantize in proptest::bool::ANY) {
            let pairs = random_trials(300, seed, quantize);
            let mirrored: Vec<_> = pairs
                .iter()
                .map(|&(l, s)| (if l == T { N } else { T }, -s))
                .collect();
            let a = eer_from_scores(&pairs).unwrap().eer;
            let b = eer_from_scores(&mirrored).unwrap().eer;
            proptest::prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn eer_in_unit_interval(seed in 0u64..200) {
            let r = eer_from_scores(&random_trials(50, seed, true)).unwrap();
            proptest::prop_assert!((0.0..=1.0).contains(&r.eer));
        }
    }
}
