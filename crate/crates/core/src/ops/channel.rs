use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Channels `[start, start + len)` of an `N×C×H×W` tensor.
pub fn narrow_channels<T: Float>(x: Var<'_, T>, start: usize, len: usize) -> Result<Var<'_, T>> {
    let xv = x.value();
    let (n, c, h, w) = xv.dims4("narrow_channels")?;
    if len == 0 || start + len > c {
        return Err(Error::InvalidShape {
            shape: xv.shape().to_vec(),
            reason: format!("cannot take channels {start}..{} of {c}", start + len),
        });
    }
    let plane = h * w;
    let data = xv
        .data()
        .chunks(c * plane)
        .flat_map(|s| &s[start * plane..(start + len) * plane])
        .copied()
        .collect();
    let out = Tensor::from_vec(&[n, len, h, w], data)?;
    drop(xv);
    x.tape().record("narrow_channels", &[x], out, move |ctx| {
        let mut gx = Tensor::zeros_like(ctx.input(0));
        for (dst, src) in gx.data_mut().chunks_mut(c * plane).zip(ctx.grad.data().chunks(len * plane)) {
            dst[start * plane..(start + len) * plane].copy_from_slice(src);
        }
        Ok(vec![Some(gx)])
    })
}

/// Split into the first and second half of the channels.
pub fn channel_split<T: Float>(x: Var<'_, T>) -> Result<(Var<'_, T>, Var<'_, T>)> {
    let (_, c, _, _) = x.value().dims4("channel_split")?;
    if c % 2 != 0 {
        return Err(Error::Split { channels: c });
    }
    Ok((narrow_channels(x, 0, c / 2)?, narrow_channels(x, c / 2, c / 2)?))
}

/// Channels of `a` followed by channels of `b`.
pub fn channel_concat<'t, T: Float>(a: Var<'t, T>, b: Var<'t, T>) -> Result<Var<'t, T>> {
    let av = a.value();
    let bv = b.value();
    let (n, ca, h, w) = av.dims4("channel_concat")?;
    let (nb, cb, hb, wb) = bv.dims4("channel_concat")?;
    if (n, h, w) != (nb, hb, wb) {
        return Err(Error::mismatch("channel_concat", av.shape(), bv.shape()));
    }
    let plane = h * w;
    let mut data = Vec::with_capacity(av.numel() + bv.numel());
    for (sa, sb) in av.data().chunks(ca * plane).zip(bv.data().chunks(cb * plane)) {
        data.extend_from_slice(sa);
        data.extend_from_slice(sb);
    }
    let out = Tensor::from_vec(&[n, ca + cb, h, w], data)?;
    drop((av, bv));
    a.tape().record("channel_concat", &[a, b], out, move |ctx| {
        let mut ga = Vec::with_capacity(n * ca * plane);
        let mut gb = Vec::with_capacity(n * cb * plane);
        for s in ctx.grad.data().chunks((ca + cb) * plane) {
            ga.extend_from_slice(&s[..ca * plane]);
            gb.extend_from_slice(&s[ca * plane..]);
        }
        Ok(vec![
            ctx.needs[0].then(|| Tensor::from_vec(&[n, ca, h, w], ga)).transpose()?,
            ctx.needs[1].then(|| Tensor::from_vec(&[n, cb, h, w], gb)).transpose()?,
        ])
    })
}

/// Source channel for each output channel: reshape `C → (g, C/g)`,
/// transpose, flatten. Output channel `j·g + k` reads input `k·(C/g) + j`.
pub fn shuffle_permutation(channels: usize, groups: usize) -> Result<Vec<usize>> {
    if groups == 0 || !channels.is_multiple_of(groups) {
        return Err(Error::Groups { channels, groups });
    }
    let per = channels / groups;
    Ok((0..channels).map(|o| (o % groups) * per + o / groups).collect())
}

pub fn channel_shuffle<T: Float>(x: Var<'_, T>, groups: usize) -> Result<Var<'_, T>> {
    let xv = x.value();
    let (n, c, h, w) = xv.dims4("channel_shuffle")?;
    let perm = shuffle_permutation(c, groups)?;
    let plane = h * w;
    let gather = move |src: &[T], perm: &[usize]| -> Vec<T> {
        let mut out = Vec::with_capacity(src.len());
        for s in src.chunks(c * plane) {
            for &from in perm {
                out.extend_from_slice(&s[from * plane..(from + 1) * plane]);
            }
        }
        out
    };
    let out = Tensor::from_vec(&[n, c, h, w], gather(xv.data(), &perm))?;
    drop(xv);
    let mut inverse = vec![0; c];
    for (to, &from) in perm.iter().enumerate() {
        inverse[from] = to;
    }
    x.tape().record("channel_shuffle", &[x], out, move |ctx| {
        Ok(vec![Some(Tensor::from_vec(&[n, c, h, w], gather(ctx.grad.data(), &inverse))?)])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;
    use crate::ops::{sum, weighted_sum};

    /// Channel `k` filled with the value `k`.
    fn labelled(n: usize, c: usize, h: usize, w: usize) -> Tensor<f64> {
        let data = (0..n * c * h * w).map(|i| ((i / (h * w)) % c) as f64).collect();
        Tensor::from_vec(&[n, c, h, w], data).unwrap()
    }

    fn channel_ids(t: &Tensor<f64>) -> Vec<usize> {
        let (_, c, h, w) = t.dims4("test").unwrap();
        (0..c).map(|k| t.data()[k * h * w] as usize).collect()
    }

    #[test]
    fn split_halves() {
        let tape = Tape::new();
        let x = tape.constant(labelled(1, 4, 2, 2));
        let (a, b) = channel_split(x).unwrap();
        assert_eq!(channel_ids(&a.value()), vec![0, 1]);
        assert_eq!(channel_ids(&b.value()), vec![2, 3]);
        let back = channel_concat(a, b).unwrap();
        assert_eq!(*back.value(), *x.value());
    }

    #[test]
    fn split_rejects_odd_channels() {
        let tape = Tape::new();
        let x = tape.constant(labelled(1, 3, 2, 2));
        assert!(matches!(channel_split(x), Err(Error::Split { channels: 3 })));
    }

    #[test]
    fn split_gradient_touches_only_its_half() {
        let tape = Tape::new();
        let x = tape.leaf(labelled(2, 4, 2, 3));
        let (a, _) = channel_split(x).unwrap();
        let g = tape.backward(sum(a).unwrap()).unwrap().wrt(x);
        for (i, &v) in g.data().iter().enumerate() {
            let ch = (i / 6) % 4;
            assert_eq!(v, if ch < 2 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn concat_shapes() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::<f64>::ones(&[1, 3, 2, 2]).unwrap());
        let b = tape.constant(Tensor::<f64>::zeros(&[1, 5, 2, 2]).unwrap());
        assert_eq!(channel_concat(a, b).unwrap().shape(), vec![1, 8, 2, 2]);
        let c = tape.constant(Tensor::<f64>::zeros(&[1, 5, 2, 3]).unwrap());
        assert!(channel_concat(a, c).is_err());
    }

    #[test]
    fn shuffle_reference_order() {
        assert_eq!(shuffle_permutation(6, 2).unwrap(), vec![0, 3, 1, 4, 2, 5]);
        assert_eq!(shuffle_permutation(5, 1).unwrap(), vec![0, 1, 2, 3, 4]);
        assert!(matches!(shuffle_permutation(6, 4), Err(Error::Groups { .. })));

        let tape = Tape::new();
        let x = tape.constant(labelled(2, 6, 1, 2));
        let y = channel_shuffle(x, 2).unwrap().value();
        assert_eq!(channel_ids(&y), vec![0, 3, 1, 4, 2, 5]);
    }

    #[test]
    fn shuffle_backward_inverts_forward() {
        let tape = Tape::new();
        let x = tape.leaf(labelled(1, 8, 2, 2));
        let y = channel_shuffle(x, 2).unwrap();
        // Weighting output channel j by j pulls gradient j back to input perm[j].
        let weights = labelled(1, 8, 2, 2);
        let g = tape.backward(weighted_sum(y, &weights).unwrap()).unwrap().wrt(x);
        let perm = shuffle_permutation(8, 2).unwrap();
        for (j, &from) in perm.iter().enumerate() {
            assert_eq!(g.data()[from * 4], j as f64);
        }
    }
}
