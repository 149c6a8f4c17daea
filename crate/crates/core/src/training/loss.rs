use candle_core::{Tensor, D};

use crate::error::{Error, Result};
use crate::pose::{normalize_quat, quat_norm, Quat};

fn norm3(v: [f64; 3]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::invalid(format!("beta must be positive, got {beta}")));
    }
    Ok(())
}

fn unit_target(q: &Quat) -> Result<Quat> {
    let n = quat_norm(q);
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::InvalidQuaternion(format!("target quaternion {q:?} has zero norm")));
    }
    normalize_quat(*q)
}

/// `||p - p_hat|| + (1/beta) * ||q_hat - q/||q|| ||`.
pub fn pose_loss(p_hat: [f64; 3], q_hat: Quat, p: [f64; 3], q: Quat, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    let qn = unit_target(&q)?;
    let dp = [p[0] - p_hat[0], p[1] - p_hat[1], p[2] - p_hat[2]];
    let dq: f64 = (0..4).map(|i| (q_hat[i] - qn[i]).powi(2)).sum::<f64>().sqrt();
    Ok(norm3(dp) + dq / beta)
}

/// Gradient of [`pose_loss`] with respect to `(p_hat, q_hat)`. Where a norm
/// is exactly zero its term contributes a zero gradient.
pub fn pose_loss_grad(p_hat: [f64; 3], q_hat: Quat, p: [f64; 3], q: Quat, beta: f64) -> Result<([f64; 3], Quat)> {
    check_beta(beta)?;
    let qn = unit_target(&q)?;
    let dp = [p_hat[0] - p[0], p_hat[1] - p[1], p_hat[2] - p[2]];
    let np = norm3(dp);
    let gp = if np > 0.0 { dp.map(|v| v / np) } else { [0.0; 3] };
    let dq = [q_hat[0] - qn[0], q_hat[1] - qn[1], q_hat[2] - qn[2], q_hat[3] - qn[3]];
    let nq = quat_norm(&dq);
    let gq = if nq > 0.0 { dq.map(|v| v / (nq * beta)) } else { [0.0; 4] };
    Ok((gp, gq))
}

/// Batch-mean loss terms; `total = position + quaternion`.
pub struct PoseLossTerms {
    pub total: Tensor,
    pub position: Tensor,
    /// Already divided by beta.
    pub quaternion: Tensor,
}

/// Tensor form of [`pose_loss`] over `(N, 7)` predictions and targets.
pub fn pose_loss_tensor(pred: &Tensor, target: &Tensor, beta: f64) -> Result<PoseLossTerms> {
    check_beta(beta)?;
    let eps = 1e-12;
    let p_hat = pred.narrow(1, 0, 3)?;
    let q_hat = pred.narrow(1, 3, 4)?;
    let p = target.narrow(1, 0, 3)?;
    let q = target.narrow(1, 3, 4)?;
    let q = q.broadcast_div(&q.sqr()?.sum_keepdim(D::Minus1)?.sqrt()?)?;
    let pos = ((p - p_hat)?.sqr()?.sum(D::Minus1)? + eps)?.sqrt()?.mean_all()?;
    let quat = (((q_hat - q)?.sqr()?.sum(D::Minus1)? + eps)?.sqrt()?.mean_all()? / beta)?;
    Ok(PoseLossTerms {
        total: (&pos + &quat)?,
        position: pos,
        quaternion: quat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn hand_computed_values() {
        let q = [0.3, -0.1, 0.5, 0.2];
        let qn = unit_target(&q).unwrap();
        assert_eq!(pose_loss([1.0, 2.0, 3.0], qn, [1.0, 2.0, 3.0], q, 1.0).unwrap(), 0.0);
        let l = pose_loss([1.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0], [0.0; 3], [1.0, 0.0, 0.0, 0.0], 3.0).unwrap();
        assert_eq!(l, 1.0);
        let l = pose_loss([0.0; 3], [0.0, 1.0, 0.0, 0.0], [0.0; 3], [2.0, 0.0, 0.0, 0.0], 2.0).unwrap();
        assert!((l - 2f64.sqrt() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_zero_target_and_bad_beta() {
        assert!(matches!(
            pose_loss([0.0; 3], [1.0, 0.0, 0.0, 0.0], [0.0; 3], [0.0; 4], 1.0),
            Err(Error::InvalidQuaternion(_))
        ));
        assert!(pose_loss([0.0; 3], [1.0, 0.0, 0.0, 0.0], [0.0; 3], [1.0, 0.0, 0.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn tensor_form_matches_scalar_form() {
        let rows = [
            ([0.1, -0.2, 0.3], [0.9, 0.1, 0.0, 0.2], [0.0, 0.1, 0.2], [2.0, 0.0, 0.0, 1.0]),
            ([0.5, 0.5, -0.5], [0.0, 1.0, 0.0, 0.0], [0.4, 0.6, -0.1], [0.0, 0.0, 0.0, 3.0]),
        ];
        let beta = 1.5;
        let mut pred = Vec::new();
        let mut tgt = Vec::new();
        let mut want = 0.0;
        for (ph, qh, p, q) in rows {
            pred.extend(ph.iter().chain(&qh).map(|&v| v as f32));
            tgt.extend(p.iter().chain(&q).map(|&v| v as f32));
            want += pose_loss(ph, qh, p, q, beta).unwrap() / 2.0;
        }
        let pred = Tensor::from_vec(pred, (2, 7), &Device::Cpu).unwrap();
        let tgt = Tensor::from_vec(tgt, (2, 7), &Device::Cpu).unwrap();
        let terms = pose_loss_tensor(&pred, &tgt, beta).unwrap();
        let got = terms.total.to_scalar::<f32>().unwrap() as f64;
        assert!((got - want).abs() < 1e-5, "{got} vs {want}");
        let parts = terms.position.to_scalar::<f32>().unwrap() + terms.quaternion.to_scalar::<f32>().unwrap();
        assert!((parts as f64 - got).abs() < 1e-6);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (p_hat, q_hat, p, q, beta) = ([0.2, -0.4, 0.1], [0.7, 0.1, -0.2, 0.3], [0.0, 0.3, -0.2], [1.0, 2.0, 0.5, -1.0], 0.8);
        let (gp, gq) = pose_loss_grad(p_hat, q_hat, p, q, beta).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            let (mut a, mut b) = (p_hat, p_hat);
            a[i] += h;
            b[i] -= h;
            let fd = (pose_loss(a, q_hat, p, q, beta).unwrap() - pose_loss(b, q_hat, p, q, beta).unwrap()) / (2.0 * h);
            assert!((fd - gp[i]).abs() < 1e-7);
        }
        for i in 0..4 {
            let (mut a, mut b) = (q_hat, q_hat);
            a[i] += h;
            b[i] -= h;
            let fd = (pose_loss(p_hat, a, p, q, beta).unwrap() - pose_loss(p_hat, b, p, q, beta).unwrap()) / (2.0 * h);
            assert!((fd - gq[i]).abs() < 1e-7);
        }
    }
}
