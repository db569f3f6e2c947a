//! Cross-entropy and Lovász-softmax over per-pixel class scores.

use ldg_tensor::{Element, Tensor, TensorError, Var};

use crate::error::{ModelError, Result};

/// Per-pixel class indices for a batch, `[N, H, W]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labels {
    pub shape: [usize; 3],
    pub data: Vec<u8>,
}

impl Labels {
    pub fn new(data: Vec<u8>, shape: [usize; 3]) -> Result<Self> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(ModelError::Contract(format!(
                "labels: {} values do not fill shape {shape:?}",
                data.len()
            )));
        }
        Ok(Labels { shape, data })
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Concatenates label maps along the batch axis.
    pub fn stack(parts: &[&Labels]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| ModelError::Contract("labels: nothing to stack".into()))?;
        let [_, h, w] = first.shape;
        let mut data = Vec::new();
        let mut n = 0;
        for p in parts {
            if p.shape[1..] != [h, w] {
                return Err(ModelError::Contract(format!("labels: cannot stack {:?} with {:?}", p.shape, first.shape)));
            }
            data.extend_from_slice(&p.data);
            n += p.shape[0];
        }
        Labels::new(data, [n, h, w])
    }
}

/// Checks `scores: [N,K,H,W]` against the labels and returns `(N, K, H*W)`.
fn check<T: Element>(op: &'static str, scores: &Var<T>, labels: &Labels) -> Result<(usize, usize, usize)> {
    let s = scores.shape();
    if s.len() != 4 || s[0] != labels.shape[0] || s[2..] != labels.shape[1..] {
        return Err(TensorError::shape(op, &s, &labels.shape).into());
    }
    let k = s[1];
    if let Some(bad) = labels.data.iter().find(|&&v| v as usize >= k) {
        return Err(TensorError::contract(op, format!("label {bad} outside the {k} classes")).into());
    }
    Ok((s[0], k, s[2] * s[3]))
}

/// Mean over pixels of `-log softmax(logits)[label]`.
pub fn cross_entropy<T: Element>(logits: &Var<T>, labels: &Labels) -> Result<Var<T>> {
    let (n, k, hw) = check("cross_entropy", logits, labels)?;
    let pixels = n * hw;
    if pixels == 0 {
        return Err(TensorError::contract("cross_entropy", "empty batch").into());
    }
    let inv = T::one() / T::lit(pixels as f64);
    let mut total = T::zero();
    // softmax probabilities, reused by the backward rule
    let mut probs = vec![T::zero(); n * k * hw];
    {
        let lv = logits.value();
        let x = lv.data();
        for b in 0..n {
            for p in 0..hw {
                let at = |c: usize| (b * k + c) * hw + p;
                let m = (0..k).map(|c| x[at(c)]).fold(T::neg_infinity(), T::max);
                let z: T = (0..k).map(|c| (x[at(c)] - m).exp()).sum();
                let y = labels.data[b * hw + p] as usize;
                total += z.ln() + m - x[at(y)];
                for c in 0..k {
                    probs[at(c)] = (x[at(c)] - m).exp() / z;
                }
            }
        }
    }
    let labels = labels.data.clone();
    let shape = logits.shape();
    Ok(Var::from_op(Tensor::scalar(total * inv), "cross_entropy", &[logits], move |ctx| {
        let g = ctx.grad().data()[0] * inv;
        let mut dx = probs.clone();
        for b in 0..n {
            for p in 0..hw {
                let y = labels[b * hw + p] as usize;
                dx[(b * k + y) * hw + p] -= T::one();
            }
        }
        dx.iter_mut().for_each(|v| *v *= g);
        Ok(vec![Some(Tensor::new(dx, shape.clone())?)])
    }))
}

/// Gradient of the Lovász extension of the Jaccard loss with respect to
/// errors sorted in decreasing order; `fg_sorted` is the ground truth in
/// that same order.
pub fn lovasz_grad(fg_sorted: &[bool]) -> Vec<f64> {
    let gts = fg_sorted.iter().filter(|&&f| f).count() as f64;
    let mut out = Vec::with_capacity(fg_sorted.len());
    let (mut cum_fg, mut cum_bg) = (0.0, 0.0);
    let mut prev = 0.0;
    for &f in fg_sorted {
        if f {
            cum_fg += 1.0;
        } else {
            cum_bg += 1.0;
        }
        let inter = gts - cum_fg;
        let union = gts + cum_bg;
        let jac = 1.0 - inter / union;
        out.push(jac - prev);
        prev = jac;
    }
    out
}

/// Lovász-softmax on class probabilities `[N,K,H,W]`, pooled over every
/// pixel of the batch and averaged over the classes present in `labels`.
/// Zero when no class is present.
pub fn lovasz_from_probs<T: Element>(probs: &Var<T>, labels: &Labels) -> Result<Var<T>> {
    let (n, k, hw) = check("lovasz_softmax", probs, labels)?;
    let pixels = n * hw;
    let mut loss = 0.0f64;
    let mut dprobs = vec![0.0f64; n * k * hw];
    let mut present = 0usize;
    {
        let pv = probs.value();
        let pd = pv.data();
        let mut errs = vec![0.0f64; pixels];
        let mut fg = vec![false; pixels];
        let mut perm: Vec<usize> = Vec::with_capacity(pixels);
        for c in 0..k {
            let mut any = false;
            for b in 0..n {
                for p in 0..hw {
                    let i = b * hw + p;
                    fg[i] = labels.data[i] as usize == c;
                    any |= fg[i];
                    let pc = pd[(b * k + c) * hw + p].f64();
                    errs[i] = if fg[i] { 1.0 - pc } else { pc };
                }
            }
            if !any {
                continue;
            }
            present += 1;
            perm.clear();
            perm.extend(0..pixels);
            // descending error; equal errors keep pixel order
            perm.sort_by(|&a, &b| errs[b].total_cmp(&errs[a]).then(a.cmp(&b)));
            let fg_sorted: Vec<bool> = perm.iter().map(|&i| fg[i]).collect();
            let w = lovasz_grad(&fg_sorted);
            for (r, &i) in perm.iter().enumerate() {
                loss += errs[i] * w[r];
                let (b, p) = (i / hw, i % hw);
                dprobs[(b * k + c) * hw + p] = if fg[i] { -w[r] } else { w[r] };
            }
        }
    }
    let scale = if present == 0 { 0.0 } else { 1.0 / present as f64 };
    let value = Tensor::scalar(T::lit(loss * scale));
    let shape = probs.shape();
    Ok(Var::from_op(value, "lovasz_softmax", &[probs], move |ctx| {
        let g = ctx.grad().data()[0].f64() * scale;
        let dx: Vec<T> = dprobs.iter().map(|&d| T::lit(d * g)).collect();
        Ok(vec![Some(Tensor::new(dx, shape.clone())?)])
    }))
}

pub fn lovasz_softmax<T: Element>(logits: &Var<T>, labels: &Labels) -> Result<Var<T>> {
    lovasz_from_probs(&logits.softmax(1)?, labels)
}

/// Unweighted sum of cross-entropy and Lovász-softmax.
pub fn total_loss<T: Element>(logits: &Var<T>, labels: &Labels) -> Result<Var<T>> {
    Ok(cross_entropy(logits, labels)?.add(&lovasz_softmax(logits, labels)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln2() {
        let logits = Var::constant(Tensor::<f64>::zeros(&[1, 2, 2, 2]));
        let labels = Labels::new(vec![0, 1, 1, 0], [1, 2, 2]).unwrap();
        let l = cross_entropy(&logits, &labels).unwrap().value().item().unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn rejects_out_of_range_labels() {
        let logits = Var::constant(Tensor::<f64>::zeros(&[1, 2, 1, 2]));
        let labels = Labels::new(vec![0, 2], [1, 1, 2]).unwrap();
        assert!(cross_entropy(&logits, &labels).is_err());
        assert!(lovasz_softmax(&logits, &labels).is_err());
    }

    #[test]
    fn jaccard_weights_sum_to_final_loss() {
        // all-wrong ordering reaches jaccard 1 at the end
        let w = lovasz_grad(&[true, false, true, false]);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
}
