//! Invalid-action masking: logits of infeasible actions are replaced with a
//! large negative number before the softmax, so sampling can never produce
//! an invalid action and the relative odds of valid actions are preserved.

use ndarray::{Array2, Axis};
use rand::{Rng, RngCore};
use thiserror::Error;

/// Replacement logit for invalid actions. Finite to keep the arithmetic
/// well-defined, but far enough below any realistic logit that the masked
/// probabilities underflow to exactly zero.
pub const MASK_LOGIT: f64 = -1e8;

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("logits ({logits}) and mask ({mask}) lengths differ")]
    LengthMismatch { logits: usize, mask: usize },
    #[error("no valid action in mask")]
    AllInvalid,
}

/// Masked softmax over one logit vector. Invalid entries get probability
/// exactly zero; valid entries keep their relative odds.
pub fn mask_logits(logits: &[f64], valid: &[bool]) -> Result<Vec<f64>, MaskError> {
    if logits.len() != valid.len() {
        return Err(MaskError::LengthMismatch {
            logits: logits.len(),
            mask: valid.len(),
        });
    }
    if !valid.iter().any(|&v| v) {
        return Err(MaskError::AllInvalid);
    }
    let masked: Vec<f64> = logits
        .iter()
        .zip(valid)
        .map(|(&l, &v)| if v { l } else { MASK_LOGIT })
        .collect();
    let max = masked.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = masked.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// One draw from the masked distribution. A single sample suffices; no
/// resampling loop is ever needed because invalid actions carry zero mass.
pub fn sample_masked(
    logits: &[f64],
    valid: &[bool],
    rng: &mut dyn RngCore,
) -> Result<usize, MaskError> {
    let probs = mask_logits(logits, valid)?;
    let draw: f64 = rng.gen::<f64>();
    let mut acc = 0.0;
    let mut last_valid = 0;
    for (i, (&p, &v)) in probs.iter().zip(valid).enumerate() {
        if !v {
            continue;
        }
        last_valid = i;
        acc += p;
        if draw < acc {
            return Ok(i);
        }
    }
    // Rounding can leave acc marginally below 1; fall back to the last
    // valid action.
    Ok(last_valid)
}

/// Row-wise masked softmax for training batches. Returns probabilities and
/// log-probabilities; invalid entries are zero in both so that expectation
/// sums can multiply them through safely. Rows with no valid entry (terminal
/// next states) come back all-zero.
pub fn masked_softmax_batch(logits: &Array2<f64>, mask: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    assert_eq!(logits.dim(), mask.dim());
    let mut probs = Array2::zeros(logits.dim());
    let mut log_probs = Array2::zeros(logits.dim());
    for (row, (l, m)) in logits
        .axis_iter(Axis(0))
        .zip(mask.axis_iter(Axis(0)))
        .enumerate()
    {
        if !m.iter().any(|&v| v > 0.0) {
            continue;
        }
        let masked: Vec<f64> = l
            .iter()
            .zip(m.iter())
            .map(|(&l, &m)| if m > 0.0 { l } else { MASK_LOGIT })
            .collect();
        let max = masked.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = masked.iter().map(|&l| (l - max).exp()).sum();
        let log_sum = sum.ln();
        for (col, (&lm, &mv)) in masked.iter().zip(m.iter()).enumerate() {
            if mv > 0.0 {
                probs[[row, col]] = (lm - max).exp() / sum;
                log_probs[[row, col]] = lm - max - log_sum;
            }
        }
    }
    (probs, log_probs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn all_valid_is_plain_softmax() {
        let probs = mask_logits(&[1.0, 2.0, 3.0], &[true, true, true]).unwrap();
        let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|l| l.exp()).sum();
        for (p, l) in probs.iter().zip([1.0, 2.0, 3.0]) {
            assert!((p - (l as f64).exp() / z).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_valid_pair() {
        let probs = mask_logits(&[0.0, 0.0, 0.0], &[true, true, false]).unwrap();
        assert_eq!(probs[2], 0.0);
        assert!((probs[0] - 0.5).abs() < 1e-12);
        assert!((probs[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn two_of_three_valid_matches_direct_softmax() {
        let probs = mask_logits(&[1.0, 2.0, 3.0], &[true, true, false]).unwrap();
        let z = 1.0f64.exp() + 2.0f64.exp();
        assert!((probs[0] - 1.0f64.exp() / z).abs() < 1e-4);
        assert!((probs[1] - 2.0f64.exp() / z).abs() < 1e-4);
        assert!((probs[0] - 0.2689).abs() < 1e-4);
        assert!((probs[1] - 0.7311).abs() < 1e-4);
        assert_eq!(probs[2], 0.0);
    }

    #[test]
    fn odds_preserved_among_valid() {
        let logits = [0.3, -1.2, 2.5, 0.0, 4.0];
        let valid = [true, false, true, true, false];
        let probs = mask_logits(&logits, &valid).unwrap();
        for a in 0..5 {
            for b in 0..5 {
                if valid[a] && valid[b] {
                    let odds = probs[a] / probs[b];
                    let expected = (logits[a] - logits[b]).exp();
                    assert!((odds - expected).abs() < 1e-12 * expected.max(1.0));
                }
            }
        }
    }

    #[test]
    fn all_invalid_is_an_error() {
        assert!(matches!(
            mask_logits(&[1.0, 2.0], &[false, false]),
            Err(MaskError::AllInvalid)
        ));
    }

    #[test]
    fn single_valid_action_always_sampled() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let a = sample_masked(&[5.0, -2.0, 0.1], &[false, false, true], &mut rng).unwrap();
            assert_eq!(a, 2);
        }
    }

    #[test]
    fn sampling_never_hits_invalid() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let valid = [true, false, true, false, true, true, false, true];
        for _ in 0..100_000 {
            let logits: Vec<f64> = (0..8).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let a = sample_masked(&logits, &valid, &mut rng).unwrap();
            assert!(valid[a]);
        }
    }

    #[test]
    fn uniform_logits_sample_uniformly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let valid = [true; 8];
        let mut hits = [0usize; 8];
        for _ in 0..80_000 {
            hits[sample_masked(&[0.0; 8], &valid, &mut rng).unwrap()] += 1;
        }
        for h in hits {
            assert!((h as f64 / 80_000.0 - 0.125).abs() < 0.01);
        }
    }

    #[test]
    fn batch_matches_single() {
        use ndarray::array;
        let logits = array![[1.0, 2.0, 3.0], [0.5, -0.5, 0.0]];
        let mask = array![[1.0, 1.0, 0.0], [1.0, 1.0, 1.0]];
        let (p, lp) = masked_softmax_batch(&logits, &mask);
        for row in 0..2 {
            let valid: Vec<bool> = mask.row(row).iter().map(|&m| m > 0.0).collect();
            let single = mask_logits(
                logits.row(row).as_slice().unwrap(),
                &valid,
            )
            .unwrap();
            for col in 0..3 {
                assert!((p[[row, col]] - single[col]).abs() < 1e-12);
                if valid[col] {
                    assert!((lp[[row, col]] - single[col].ln()).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn terminal_rows_are_zero() {
        use ndarray::array;
        let logits = array![[1.0, 2.0]];
        let mask = array![[0.0, 0.0]];
        let (p, lp) = masked_softmax_batch(&logits, &mask);
        assert!(p.iter().all(|&x| x == 0.0));
        assert!(lp.iter().all(|&x| x == 0.0));
    }
}
