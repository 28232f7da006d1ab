use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Source taps `(i0, i1, weight of i1)` for each output index along one axis,
/// using half-pixel centres (`align_corners = false`).
fn taps(len: usize, scale: usize) -> Vec<(usize, usize, f64)> {
    (0..len * scale)
        .map(|dst| {
            let src = ((dst as f64 + 0.5) / scale as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear upsampling by an integer factor.
pub fn upsample_bilinear<T: Float>(x: Var<'_, T>, scale: usize) -> Result<Var<'_, T>> {
    if scale == 0 {
        return Err(Error::Config("upsampling scale must be at least 1".into()));
    }
    let xv = x.value();
    let (n, c, h, w) = xv.dims4("upsample_bilinear")?;
    let (oh, ow) = (h * scale, w * scale);
    let ty = taps(h, scale);
    let tx = taps(w, scale);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in xv.data().chunks(h * w) {
        for &(y0, y1, ly) in &ty {
            for &(x0, x1, lx) in &tx {
                let v = |yy: usize, xx: usize| plane[yy * w + xx].as_f64();
                let top = v(y0, x0) * (1.0 - lx) + v(y0, x1) * lx;
                let bottom = v(y1, x0) * (1.0 - lx) + v(y1, x1) * lx;
                out.push(T::from_f64_lossy(top * (1.0 - ly) + bottom * ly));
            }
        }
    }
    let out = Tensor::from_vec(&[n, c, oh, ow], out)?;
    drop(xv);
    x.tape().record("upsample_bilinear", &[x], out, move |ctx| {
        let mut gx = Tensor::zeros_like(ctx.input(0));
        for (dst, gplane) in gx.data_mut().chunks_mut(h * w).zip(ctx.grad.data().chunks(oh * ow)) {
            let mut rows = gplane.chunks(ow);
            for &(y0, y1, ly) in &ty {
                let grow = rows.next().expect("row count");
                for (&(x0, x1, lx), &g) in tx.iter().zip(grow) {
                    let g = g.as_f64();
                    let mut put = |yy: usize, xx: usize, wgt: f64| dst[yy * w + xx] += T::from_f64_lossy(g * wgt);
                    put(y0, x0, (1.0 - ly) * (1.0 - lx));
                    put(y0, x1, (1.0 - ly) * lx);
                    put(y1, x0, ly * (1.0 - lx));
                    put(y1, x1, ly * lx);
                }
            }
        }
        Ok(vec![Some(gx)])
    })
}
