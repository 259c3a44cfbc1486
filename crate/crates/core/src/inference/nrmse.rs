//! Normalized RMSE: per item sqrt(MSE(pred, ref) / MSE(0, ref)), averaged
//! over items. Scale-covariant: rescaling both inputs leaves it unchanged.

use super::{EvalError, Result};

/// One item; `index` is only used for error reporting.
pub fn nrmse_pair(pred: &[f32], reference: &[f32], index: usize) -> Result<f64> {
    if pred.len() != reference.len() {
        return Err(EvalError::Shape {
            pred: vec![pred.len()],
            reference: vec![reference.len()],
        });
    }
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for (&p, &r) in pred.iter().zip(reference) {
        let (p, r) = (p as f64, r as f64);
        num += (p - r) * (p - r);
        den += r * r;
    }
    if den == 0.0 {
        return Err(EvalError::ZeroReference { index });
    }
    Ok((num / den).sqrt())
}

/// Mean over items of the per-item normalized root ratio.
pub fn nrmse(preds: &[&[f32]], refs: &[&[f32]]) -> Result<f64> {
    if preds.len() != refs.len() || preds.is_empty() {
        return Err(EvalError::Shape {
            pred: vec![preds.len()],
            reference: vec![refs.len()],
        });
    }
    let mut total = 0.0;
    for (i, (p, r)) in preds.iter().zip(refs).enumerate() {
        total += nrmse_pair(p, r, i)?;
    }
    Ok(total / preds.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unit_identities() {
        let r = vec![1.0f32, -2.0, 0.5, 3.0];
        // pred == ref -> 0
        assert_eq!(nrmse(&[&r], &[&r]).unwrap(), 0.0);
        // pred == 0 -> 1
        let z = vec![0.0f32; 4];
        assert!((nrmse(&[&z], &[&r]).unwrap() - 1.0).abs() < 1e-12);
        // pred == 2 ref -> 1
        let d: Vec<f32> = r.iter().map(|v| 2.0 * v).collect();
        assert!((nrmse(&[&d], &[&r]).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_reference_names_the_item() {
        let r0 = vec![1.0f32, 2.0];
        let rz = vec![0.0f32, 0.0];
        let p = vec![1.0f32, 1.0];
        match nrmse(&[&p, &p], &[&r0, &rz]) {
            Err(EvalError::ZeroReference { index }) => assert_eq!(index, 1),
            other => panic!("expected zero-reference error, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn scale_covariance(
            values in proptest::collection::vec(-10.0f32..10.0, 8..32),
            noise in proptest::collection::vec(-1.0f32..1.0, 8..32),
            a in prop_oneof![0.01f32..100.0, -100.0f32..-0.01],
        ) {
            let n = values.len().min(noise.len());
            let reference: Vec<f32> = values[..n].to_vec();
            prop_assume!(reference.iter().any(|&v| v != 0.0));
            let pred: Vec<f32> = reference.iter().zip(&noise[..n]).map(|(v, e)| v + e).collect();
            let base = nrmse(&[&pred], &[&reference]).unwrap();
            let s_pred: Vec<f32> = pred.iter().map(|v| a * v).collect();
            let s_ref: Vec<f32> = reference.iter().map(|v| a * v).collect();
            let scaled = nrmse(&[&s_pred], &[&s_ref]).unwrap();
            prop_assert!((base - scaled).abs() < 1e-4 * base.max(1.0));
        }
    }
}
