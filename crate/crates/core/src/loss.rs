//! Detection and reasoning losses with their analytic gradients.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::BBox;
use crate::error::{Error, Result};
use crate::math;

/// Clamp applied to every log argument.
pub const LOG_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub ce: f64,
    pub llm: f64,
    pub bbox: f64,
    pub giou: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            ce: 1.0,
            llm: 1.0,
            bbox: 1.0,
            giou: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.ce, self.llm, self.bbox, self.giou];
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config("loss weights must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

/// Per-batch loss components and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub ce: f64,
    pub llm: f64,
    pub bbox: f64,
    pub giou: f64,
    pub total: f64,
}

impl LossReport {
    pub fn new(ce: f64, llm: f64, bbox: f64, giou: f64, w: &LossWeights) -> Self {
        Self {
            ce,
            llm,
            bbox,
            giou,
            total: total_loss([ce, llm, bbox, giou], w),
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.ce, self.llm, self.bbox, self.giou, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// `alpha L_CE + beta L_LLM + gamma L_bbox + delta L_GIoU`.
pub fn total_loss(components: [f64; 4], w: &LossWeights) -> f64 {
    w.ce * components[0] + w.llm * components[1] + w.bbox * components[2] + w.giou * components[3]
}

/// Mean binary cross-entropy with probabilities clamped to `[eps, 1-eps]`.
pub fn bce_loss(p: &[f64], y: &[f64]) -> Result<f64> {
    Ok(bce_loss_grad(p, y)?.0)
}

/// Loss and `dL/dp`; the gradient vanishes where the clamp is active.
pub fn bce_loss_grad(p: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>)> {
    if p.len() != y.len() {
        return Err(Error::shape("bce labels", p.len(), y.len()));
    }
    if p.is_empty() {
        return Err(Error::Empty("bce batch"));
    }
    let b = p.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; p.len()];
    for (i, (&pi, &yi)) in p.iter().zip(y).enumerate() {
        let pc = pi.clamp(LOG_EPS, 1.0 - LOG_EPS);
        loss -= yi * math::ln(pc) + (1.0 - yi) * math::ln(1.0 - pc);
        if pc == pi {
            grad[i] = -(yi / pc - (1.0 - yi) / (1.0 - pc)) / b;
        }
    }
    Ok((loss / b, grad))
}

fn masked_count(mask: &[bool]) -> usize {
    mask.iter().filter(|m| **m).count()
}

/// Mean over masked samples of the summed absolute corner differences.
pub fn bbox_l1_loss(pred: &[BBox], gt: &[BBox], mask: &[bool]) -> Result<f64> {
    Ok(bbox_l1_loss_grad(pred, gt, mask)?.0)
}

pub fn bbox_l1_loss_grad(pred: &[BBox], gt: &[BBox], mask: &[bool]) -> Result<(f64, Vec<[f64; 4]>)> {
    if pred.len() != gt.len() || pred.len() != mask.len() {
        return Err(Error::shape("bbox batch", pred.len(), gt.len().min(mask.len())));
    }
    let mut grads = vec![[0.0; 4]; pred.len()];
    let m = masked_count(mask);
    if m == 0 {
        return Ok((0.0, grads));
    }
    let mut loss = 0.0;
    for i in (0..pred.len()).filter(|&i| mask[i]) {
        let (a, b) = (pred[i].to_array(), gt[i].to_array());
        for k in 0..4 {
            let d = a[k] - b[k];
            loss += math::abs(d);
            grads[i][k] = if d > 0.0 {
                1.0 / m as f64
            } else if d < 0.0 {
                -1.0 / m as f64
            } else {
                0.0
            };
        }
    }
    Ok((loss / m as f64, grads))
}

/// Generalized IoU of two corner-ordered boxes and its gradient with respect
/// to the first box.
pub fn giou(a: &BBox, b: &BBox) -> Result<(f64, [f64; 4])> {
    let wa = a.x2 - a.x1;
    let ha = a.y2 - a.y1;
    let area_a = wa * ha;
    let area_b = (b.x2 - b.x1) * (b.y2 - b.y1);

    let ix = a.x2.min(b.x2) - a.x1.max(b.x1);
    let iy = a.y2.min(b.y2) - a.y1.max(b.y1);
    let (iw, ih) = (ix.max(0.0), iy.max(0.0));
    let inter = iw * ih;
    let union = area_a + area_b - inter;

    let cw = a.x2.max(b.x2) - a.x1.min(b.x1);
    let ch = a.y2.max(b.y2) - a.y1.min(b.y1);
    let enclose = cw * ch;
    if enclose <= 0.0 {
        return Err(Error::DegenerateBox("enclosing box has zero area"));
    }
    let iou = if union > 0.0 { inter / union } else { 0.0 };
    let value = iou - (enclose - union) / enclose;

    // Partials of (area_a, inter, enclose) w.r.t. x1, y1, x2, y2 of `a`.
    let d_area = [-ha, -wa, ha, wa];
    let d_iw = [
        if ix > 0.0 && a.x1 > b.x1 { -1.0 } else { 0.0 },
        0.0,
        if ix > 0.0 && a.x2 < b.x2 { 1.0 } else { 0.0 },
        0.0,
    ];
    let d_ih = [
        0.0,
        if iy > 0.0 && a.y1 > b.y1 { -1.0 } else { 0.0 },
        0.0,
        if iy > 0.0 && a.y2 < b.y2 { 1.0 } else { 0.0 },
    ];
    let d_cw = [
        if a.x1 < b.x1 { -1.0 } else { 0.0 },
        0.0,
        if a.x2 > b.x2 { 1.0 } else { 0.0 },
        0.0,
    ];
    let d_ch = [
        0.0,
        if a.y1 < b.y1 { -1.0 } else { 0.0 },
        0.0,
        if a.y2 > b.y2 { 1.0 } else { 0.0 },
    ];
    let mut grad = [0.0; 4];
    for k in 0..4 {
        let d_inter = d_iw[k] * ih + iw * d_ih[k];
        let d_union = d_area[k] - d_inter;
        let d_enclose = d_cw[k] * ch + cw * d_ch[k];
        let d_iou = if union > 0.0 {
            (d_inter * union - inter * d_union) / (union * union)
        } else {
            0.0
        };
        grad[k] = d_iou + (d_union * enclose - union * d_enclose) / (enclose * enclose);
    }
    Ok((value, grad))
}

/// Mean of `1 - GIoU` over masked samples.
pub fn giou_loss(pred: &[BBox], gt: &[BBox], mask: &[bool]) -> Result<f64> {
    Ok(giou_loss_grad(pred, gt, mask)?.0)
}

pub fn giou_loss_grad(pred: &[BBox], gt: &[BBox], mask: &[bool]) -> Result<(f64, Vec<[f64; 4]>)> {
    if pred.len() != gt.len() || pred.len() != mask.len() {
        return Err(Error::shape("giou batch", pred.len(), gt.len().min(mask.len())));
    }
    let mut grads = vec![[0.0; 4]; pred.len()];
    let m = masked_count(mask);
    if m == 0 {
        return Ok((0.0, grads));
    }
    let mut loss = 0.0;
    for i in (0..pred.len()).filter(|&i| mask[i]) {
        let (g, dg) = giou(&pred[i], &gt[i])?;
        loss += 1.0 - g;
        for k in 0..4 {
            grads[i][k] = -dg[k] / m as f64;
        }
    }
    Ok((loss / m as f64, grads))
}

/// Mean token negative log-likelihood from the probabilities assigned to
/// the target tokens.
pub fn sequence_nll(target_probs: &[f64]) -> Result<f64> {
    if target_probs.is_empty() {
        return Err(Error::Empty("target sequence"));
    }
    Ok(-target_probs
        .iter()
        .map(|q| math::ln(q.clamp(LOG_EPS, 1.0)))
        .sum::<f64>()
        / target_probs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{from_seed, Rng};

    fn bx(a: [f64; 4]) -> BBox {
        BBox { x1: a[0], y1: a[1], x2: a[2], y2: a[3] }
    }

    #[test]
    fn bce_reference_values() {
        assert!((bce_loss(&[0.5], &[1.0]).unwrap() - core::f64::consts::LN_2).abs() < 1e-15);
        assert!(bce_loss(&[1.0, 0.0], &[1.0, 0.0]).unwrap() < 1e-11);
        let expect = -(0.9f64.ln() + 0.9f64.ln()) / 2.0;
        assert!((bce_loss(&[0.9, 0.1], &[1.0, 0.0]).unwrap() - expect).abs() < 1e-15);
        assert!((expect - 0.1054).abs() < 1e-4);
        assert!(bce_loss(&[0.5], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn bce_logit_gradient_at_half() {
        // d/dz BCE(sigmoid(z), 1) = sigmoid(z) - 1
        let (_, g) = bce_loss_grad(&[0.5], &[1.0]).unwrap();
        assert_eq!(g[0] * 0.5 * 0.5, -0.5);
    }

    #[test]
    fn l1_reference_values() {
        let a = bx([0.1, 0.1, 0.5, 0.5]);
        let b = bx([0.2, 0.2, 0.6, 0.6]);
        assert!((bbox_l1_loss(&[a], &[b], &[true]).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(bbox_l1_loss(&[a], &[a], &[true]).unwrap(), 0.0);
        let (l, g) = bbox_l1_loss_grad(&[a], &[b], &[false]).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(g, vec![[0.0; 4]]);
    }

    #[test]
    fn giou_reference_values() {
        let t = 1.0 / 3.0;
        let a = bx([0.0, 0.0, 2.0 * t, 2.0 * t]);
        let b = bx([t, t, 1.0, 1.0]);
        let expect = 1.0 - (1.0 / 7.0 - 2.0 / 9.0);
        assert!((giou_loss(&[a], &[b], &[true]).unwrap() - expect).abs() < 1e-12);
        let c = bx([0.0, 0.0, t, t]);
        let d = bx([2.0 * t, 2.0 * t, 1.0, 1.0]);
        let expect = 1.0 - (0.0 - 7.0 / 9.0);
        assert!((giou_loss(&[c], &[d], &[true]).unwrap() - expect).abs() < 1e-12);
        assert_eq!(giou_loss(&[a], &[a], &[true]).unwrap(), 0.0);
    }

    #[test]
    fn giou_rejects_degenerate_enclosure() {
        let p = bx([0.3, 0.3, 0.3, 0.3]);
        assert!(matches!(giou_loss(&[p], &[p], &[true]), Err(Error::DegenerateBox(_))));
    }

    fn random_box(rng: &mut crate::rng::StreamRng) -> BBox {
        let x1: f64 = rng.gen_range(0.0..0.8);
        let y1: f64 = rng.gen_range(0.0..0.8);
        bx([x1, y1, rng.gen_range(x1 + 0.01..1.0), rng.gen_range(y1 + 0.01..1.0)])
    }

    #[test]
    fn giou_gradient_matches_finite_differences() {
        let mut rng = from_seed(12);
        let h = 1e-7;
        for _ in 0..200 {
            let a = random_box(&mut rng);
            let b = random_box(&mut rng);
            let (_, g) = giou(&a, &b).unwrap();
            for k in 0..4 {
                let mut p = a.to_array();
                p[k] += h;
                let mut m = a.to_array();
                m[k] -= h;
                let fd = (giou(&bx(p), &b).unwrap().0 - giou(&bx(m), &b).unwrap().0) / (2.0 * h);
                assert!((fd - g[k]).abs() <= 1e-5 * fd.abs().max(1.0), "{fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn total_loss_examples() {
        let ones = LossWeights::default();
        assert_eq!(total_loss([1.0, 2.0, 3.0, 4.0], &ones), 10.0);
        let zero = LossWeights { ce: 0.0, llm: 0.0, bbox: 0.0, giou: 0.0 };
        assert_eq!(total_loss([1.5, 2.0, 3.0, 4.0], &zero), 0.0);
        let w = LossWeights { ce: 2.0, llm: 0.0, bbox: 0.0, giou: 0.0 };
        assert_eq!(total_loss([0.5, 9.0, 9.0, 9.0], &w), 1.0);
        assert!(LossWeights { ce: -1.0, ..ones }.validate().is_err());
    }

    #[test]
    fn sequence_nll_reference() {
        let expect = (2f64.ln() + 4f64.ln()) / 2.0;
        assert!((sequence_nll(&[0.5, 0.25]).unwrap() - expect).abs() < 1e-15);
        assert!((expect - 1.0397).abs() < 1e-4);
        assert_eq!(sequence_nll(&[1.0, 1.0]).unwrap(), 0.0);
    }
}
