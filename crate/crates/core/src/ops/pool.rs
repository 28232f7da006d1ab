use crate::autograd::Var;
use crate::error::Result;
use crate::tensor::{Float, Tensor};

/// 2×2 max pooling with stride 2. Odd extents behave as if padded with −∞,
/// so the output extent is `ceil(H/2) × ceil(W/2)`. Ties go to the first
/// element of the window in row-major order.
pub fn maxpool2d<T: Float>(x: Var<'_, T>) -> Result<Var<'_, T>> {
    let xv = x.value();
    let (n, c, h, w) = xv.dims4("maxpool2d")?;
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for (p, plane) in xv.data().chunks(h * w).enumerate() {
        for oy in 0..oh {
            for ox in 0..ow {
                let first = 2 * oy * w + 2 * ox;
                let mut best = (first, plane[first]);
                for iy in 2 * oy..(2 * oy + 2).min(h) {
                    for ix in 2 * ox..(2 * ox + 2).min(w) {
                        let v = plane[iy * w + ix];
                        if v > best.1 {
                            best = (iy * w + ix, v);
                        }
                    }
                }
                out.push(best.1);
                argmax.push(p * h * w + best.0);
            }
        }
    }
    let out = Tensor::from_vec(&[n, c, oh, ow], out)?;
    drop(xv);
    x.tape().record("maxpool2d", &[x], out, move |ctx| {
        let mut gx = Tensor::zeros_like(ctx.input(0));
        let dst = gx.data_mut();
        for (&src, &g) in argmax.iter().zip(ctx.grad.data()) {
            dst[src] += g;
        }
        Ok(vec![Some(gx)])
    })
}

/// Mean over the spatial extent of each channel: `N×C×H×W → N×C×1×1`.
pub fn global_avg_pool<T: Float>(x: Var<'_, T>) -> Result<Var<'_, T>> {
    let xv = x.value();
    let (n, c, h, w) = xv.dims4("global_avg_pool")?;
    let area = T::from_usize(h * w).expect("area fits the float type");
    let out = xv
        .data()
        .chunks(h * w)
        .map(|plane| plane.iter().copied().sum::<T>() / area)
        .collect();
    let out = Tensor::from_vec(&[n, c, 1, 1], out)?;
    drop(xv);
    x.tape().record("global_avg_pool", &[x], out, move |ctx| {
        let data = ctx
            .grad
            .data()
            .iter()
            .flat_map(|&g| std::iter::repeat_n(g / area, h * w))
            .collect();
        Ok(vec![Some(Tensor::from_vec(&[n, c, h, w], data)?)])
    })
}
