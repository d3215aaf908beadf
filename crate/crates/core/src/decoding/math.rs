//! Logit-space arithmetic for the decoding strategies.

use crate::backend::LogitVector;
use crate::error::{Error, Result};

/// Normalized exponentials of `z`, computed after subtracting the maximum.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    if z.is_empty() {
        return Vec::new();
    }
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in out.iter_mut() {
        *p /= sum;
    }
    out
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> u32 {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best as u32
}

/// Largest entry of a probability vector, i.e. the model's confidence.
pub fn confidence(p: &[f64]) -> f64 {
    p.iter().copied().fold(0.0, f64::max)
}

/// The `k` most probable tokens, most probable first, lower id first on ties.
pub fn top_k(p: &[f64], k: usize) -> Vec<(u32, f64)> {
    let mut idx: Vec<usize> = (0..p.len()).collect();
    let order = |a: &usize, b: &usize| p[*b].total_cmp(&p[*a]).then(a.cmp(b));
    let k = k.min(idx.len());
    if k == 0 {
        return Vec::new();
    }
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, order);
        idx.truncate(k);
    }
    idx.sort_by(order);
    idx.into_iter().map(|i| (i as u32, p[i])).collect()
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha.is_finite() && alpha >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidAlpha(alpha))
    }
}

fn check_len(a: &LogitVector, b: &LogitVector) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    Ok(())
}

/// `z + alpha * (z_plus - z_minus)`, elementwise.
pub fn combine_contrastive(
    z: &LogitVector,
    z_plus: &LogitVector,
    z_minus: &LogitVector,
    alpha: f64,
) -> Result<LogitVector> {
    check_len(z, z_plus)?;
    check_len(z, z_minus)?;
    check_alpha(alpha)?;
    let out = z
        .scores()
        .iter()
        .zip(z_plus.scores())
        .zip(z_minus.scores())
        .map(|((&a, &p), &m)| a + alpha * (p - m))
        .collect();
    LogitVector::new(out)
}

/// Context-aware decoding: `z_plus + alpha * (z_plus - z)`.
pub fn combine_cad(z: &LogitVector, z_plus: &LogitVector, alpha: f64) -> Result<LogitVector> {
    check_len(z, z_plus)?;
    check_alpha(alpha)?;
    let out = z
        .scores()
        .iter()
        .zip(z_plus.scores())
        .map(|(&a, &p)| p + alpha * (p - a))
        .collect();
    LogitVector::new(out)
}

/// The same distribution as `softmax(combine_contrastive(..))`, computed in
/// probability space as `p(y) * (p_plus(y) / p_minus(y))^alpha`, renormalized.
///
/// Kept as an independent cross-check; it can underflow on extreme logits
/// where the logit-space route cannot.
pub fn ratio_form_probability(
    z: &LogitVector,
    z_plus: &LogitVector,
    z_minus: &LogitVector,
    alpha: f64,
) -> Result<Vec<f64>> {
    check_len(z, z_plus)?;
    check_len(z, z_minus)?;
    check_alpha(alpha)?;
    let p = softmax(z.scores());
    let p_plus = softmax(z_plus.scores());
    let p_minus = softmax(z_minus.scores());
    let mut q: Vec<f64> = p
        .iter()
        .zip(&p_plus)
        .zip(&p_minus)
        .map(|((&base, &pos), &neg)| base * (pos / neg).powf(alpha))
        .collect();
    let total: f64 = q.iter().sum();
    for x in q.iter_mut() {
        *x /= total;
    }
    Ok(q)
}

/// Per-step mixing weight from branch confidences: `1 - C` when the
/// parametric confidence `C` strictly exceeds the relevant-context confidence
/// `C_R`, otherwise `C_R`.
pub fn dynamic_alpha(p_parametric: &[f64], p_relevant: &[f64]) -> f64 {
    let c = confidence(p_parametric);
    let c_r = confidence(p_relevant);
    if c > c_r {
        1.0 - c
    } else {
        c_r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lv(v: &[f64]) -> LogitVector {
        LogitVector::new(v.to_vec()).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn softmax_examples() {
        assert!(close(&softmax(&[0.0, 0.0, 0.0]), &[1.0 / 3.0; 3], 1e-15));
        for c in [-50.0, 0.0, 3.5, 700.0] {
            let p = softmax(&[c, c + 2f64.ln()]);
            assert!(close(&p, &[1.0 / 3.0, 2.0 / 3.0], 1e-12), "c={c}: {p:?}");
        }
        let e = std::f64::consts::E;
        let p = softmax(&[1000.0, 1001.0]);
        assert!(close(&p, &[1.0 / (1.0 + e), e / (1.0 + e)], 1e-15));
    }

    #[test]
    fn argmax_ties_take_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }

    #[test]
    fn top_k_orders_and_breaks_ties() {
        let p = [0.1, 0.3, 0.3, 0.05, 0.25];
        assert_eq!(top_k(&p, 3), vec![(1, 0.3), (2, 0.3), (4, 0.25)]);
        assert_eq!(top_k(&p, 10).len(), 5);
        assert!(top_k(&p, 0).is_empty());
    }

    #[test]
    fn contrastive_examples() {
        let z = lv(&[1.0, 0.0]);
        let out = combine_contrastive(&z, &lv(&[0.0, 2.0]), &lv(&[1.0, 0.0]), 1.0).unwrap();
        assert_eq!(out.scores(), &[0.0, 2.0]);
        let zero = combine_contrastive(&z, &lv(&[5.0, -3.0]), &lv(&[0.5, 9.0]), 0.0).unwrap();
        assert_eq!(zero.scores(), z.scores());
        let same = lv(&[2.0, -7.0]);
        let cancel = combine_contrastive(&z, &same, &same, 3.7).unwrap();
        assert_eq!(cancel.scores(), z.scores());
    }

    #[test]
    fn cad_examples() {
        let z = lv(&[0.0, 0.0]);
        let zp = lv(&[1.0, -1.0]);
        assert_eq!(combine_cad(&z, &zp, 0.0).unwrap().scores(), zp.scores());
        assert_eq!(combine_cad(&z, &zp, 0.5).unwrap().scores(), &[1.5, -1.5]);
        let w = lv(&[0.3, 4.0]);
        assert_eq!(combine_cad(&w, &w, 2.0).unwrap().scores(), w.scores());
    }

    #[test]
    fn combine_rejects_bad_inputs() {
        let a = lv(&[0.0, 1.0]);
        let b = lv(&[0.0]);
        assert!(matches!(
            combine_contrastive(&a, &b, &a, 1.0),
            Err(Error::LengthMismatch(2, 1))
        ));
        assert!(matches!(combine_cad(&a, &b, 1.0), Err(Error::LengthMismatch(2, 1))));
        assert!(matches!(
            combine_contrastive(&a, &a, &a, -0.5),
            Err(Error::InvalidAlpha(_))
        ));
        assert!(ratio_form_probability(&a, &a, &b, 1.0).is_err());
    }

    #[test]
    fn ratio_form_special_cases() {
        let z = lv(&[0.2, -1.0, 3.0]);
        let zp = lv(&[1.0, 1.0, -2.0]);
        let zm = lv(&[0.0, 2.0, 0.5]);
        assert!(close(&ratio_form_probability(&z, &zp, &zm, 0.0).unwrap(), &softmax(z.scores()), 1e-12));
        assert!(close(&ratio_form_probability(&z, &zp, &zp, 1.5).unwrap(), &softmax(z.scores()), 1e-12));
    }

    #[test]
    fn dynamic_alpha_cases() {
        // C = 0.9 > C_R = 0.5
        assert!((dynamic_alpha(&[0.9, 0.1], &[0.5, 0.5]) - 0.1).abs() < 1e-15);
        // C = 0.3 < C_R = 0.8
        assert_eq!(dynamic_alpha(&[0.3, 0.25, 0.25, 0.2], &[0.8, 0.2]), 0.8);
        // tie takes the second branch
        assert_eq!(dynamic_alpha(&[0.4, 0.3, 0.3], &[0.4, 0.35, 0.25]), 0.4);
    }
}
