use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::labels::LabelMap;
use crate::tensor::{Float, Tensor};

/// Mean over non-ignored pixels of `−log softmax(logits)[label]`.
pub fn softmax_cross_entropy<'t, T: Float>(
    logits: Var<'t, T>,
    labels: &LabelMap,
    ignore_index: u32,
) -> Result<Var<'t, T>> {
    let lv = logits.value();
    let (n, c, h, w) = lv.dims4("softmax_cross_entropy")?;
    if labels.shape() != [n, h, w] {
        return Err(Error::mismatch("softmax_cross_entropy labels", &labels.shape(), &[n, h, w]));
    }
    let plane = h * w;
    let mut valid = 0usize;
    for &l in labels.data() {
        if l == ignore_index {
            continue;
        }
        if l as usize >= c {
            return Err(Error::Label { label: l as usize, classes: c });
        }
        valid += 1;
    }
    if valid == 0 {
        return Err(Error::NoValidPixels);
    }

    // Softmax probabilities per pixel, kept for the backward pass.
    let mut probs = vec![0.0f64; n * c * plane];
    let mut total = 0.0f64;
    let data = lv.data();
    for s in 0..n {
        for p in 0..plane {
            let at = |k: usize| (s * c + k) * plane + p;
            let max = (0..c).map(|k| data[at(k)].as_f64()).fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = (0..c).map(|k| (data[at(k)].as_f64() - max).exp()).sum();
            for k in 0..c {
                probs[at(k)] = (data[at(k)].as_f64() - max).exp() / denom;
            }
            let l = labels.data()[s * plane + p];
            if l != ignore_index {
                total += denom.ln() - (data[at(l as usize)].as_f64() - max);
            }
        }
    }
    let loss = Tensor::scalar(T::from_f64_lossy(total / valid as f64));
    drop(lv);

    let labels = labels.clone();
    logits.tape().record("softmax_cross_entropy", &[logits], loss, move |ctx| {
        let scale = ctx.grad.data()[0].as_f64() / valid as f64;
        let mut g = vec![T::zero(); n * c * plane];
        for s in 0..n {
            for p in 0..plane {
                let l = labels.data()[s * plane + p];
                if l == ignore_index {
                    continue;
                }
                for k in 0..c {
                    let at = (s * c + k) * plane + p;
                    let onehot = if k == l as usize { 1.0 } else { 0.0 };
                    g[at] = T::from_f64_lossy((probs[at] - onehot) * scale);
                }
            }
        }
        Ok(vec![Some(Tensor::from_vec(&[n, c, h, w], g)?)])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;
    use crate::labels::IGNORE_INDEX;

    fn loss_of(logits: &[f64], c: usize, label: u32) -> f64 {
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(&[1, c, 1, 1], logits.to_vec()).unwrap());
        let labels = LabelMap::new(1, 1, 1, vec![label]).unwrap();
        softmax_cross_entropy(x, &labels, IGNORE_INDEX).unwrap().value().data()[0]
    }

    #[test]
    fn uniform_logits() {
        assert!((loss_of(&[0.0, 0.0], 2, 0) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn confident_logits() {
        // ln(1 + e^-10), evaluated with ln_1p.
        let expected = (-10.0f64).exp().ln_1p();
        assert!((loss_of(&[10.0, 0.0], 2, 0) - expected).abs() < 1e-15);
        assert!((expected - 4.5398899e-5).abs() < 1e-12);
    }

    #[test]
    fn large_logits_stay_finite() {
        let l = loss_of(&[1000.0, -1000.0, 0.0], 3, 1);
        assert!((l - 2000.0).abs() < 1e-9);
    }

    #[test]
    fn all_ignored_is_an_error() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::<f64>::zeros(&[1, 2, 1, 2]).unwrap());
        let labels = LabelMap::new(1, 1, 2, vec![IGNORE_INDEX; 2]).unwrap();
        assert!(matches!(
            softmax_cross_entropy(x, &labels, IGNORE_INDEX),
            Err(Error::NoValidPixels)
        ));
    }

    #[test]
    fn out_of_range_label() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::<f64>::zeros(&[1, 2, 1, 1]).unwrap());
        let labels = LabelMap::new(1, 1, 1, vec![2]).unwrap();
        assert!(matches!(
            softmax_cross_entropy(x, &labels, IGNORE_INDEX),
            Err(Error::Label { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn gradient_is_softmax_minus_onehot() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(&[1, 2, 1, 2], vec![0.0, 1.0, 0.0, 0.0]).unwrap());
        let labels = LabelMap::new(1, 1, 2, vec![0, IGNORE_INDEX]).unwrap();
        let loss = softmax_cross_entropy(x, &labels, IGNORE_INDEX).unwrap();
        let g = tape.backward(loss).unwrap().wrt(x);
        // Only pixel 0 is scored; its softmax is (0.5, 0.5).
        assert_eq!(g.data(), &[-0.5, 0.0, 0.5, 0.0]);
    }
}
