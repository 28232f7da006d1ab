use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Geometry of a zero-padded 2-D cross-correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvParams {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub dilation: (usize, usize),
    pub has_bias: bool,
}

impl ConvParams {
    /// Stride 1, no padding, no dilation, no bias.
    pub fn new(in_channels: usize, out_channels: usize, kernel: (usize, usize)) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride: (1, 1),
            padding: (0, 0),
            dilation: (1, 1),
            has_bias: false,
        }
    }

    pub fn stride(mut self, sh: usize, sw: usize) -> Self {
        self.stride = (sh, sw);
        self
    }

    pub fn padding(mut self, ph: usize, pw: usize) -> Self {
        self.padding = (ph, pw);
        self
    }

    pub fn dilation(mut self, dh: usize, dw: usize) -> Self {
        self.dilation = (dh, dw);
        self
    }

    pub fn bias(mut self, has_bias: bool) -> Self {
        self.has_bias = has_bias;
        self
    }

    /// Dilate by `(dh, dw)` and pad so that a stride-1 output keeps the input
    /// extent (odd kernels only).
    pub fn same(mut self, dh: usize, dw: usize) -> Self {
        self.dilation = (dh, dw);
        self.padding = (dh * (self.kernel.0 - 1) / 2, dw * (self.kernel.1 - 1) / 2);
        self
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel.0, self.kernel.1]
    }

    pub fn is_pointwise(&self) -> bool {
        self.kernel == (1, 1)
    }

    pub fn param_count(&self) -> usize {
        self.weight_shape().iter().product::<usize>() + if self.has_bias { self.out_channels } else { 0 }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.in_channels > 0
            && self.out_channels > 0
            && self.kernel.0 > 0
            && self.kernel.1 > 0
            && self.stride.0 > 0
            && self.stride.1 > 0
            && self.dilation.0 > 0
            && self.dilation.1 > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid convolution parameters {self:?}")))
        }
    }

    /// Output `(H', W')` for an `H×W` input.
    pub fn output_extent(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let axis = |len: usize, k: usize, s: usize, p: usize, d: usize| -> Option<usize> {
            let span = d * (k - 1) + 1;
            let padded = len + 2 * p;
            (padded >= span).then(|| (padded - span) / s + 1)
        };
        let oh = axis(h, self.kernel.0, self.stride.0, self.padding.0, self.dilation.0);
        let ow = axis(w, self.kernel.1, self.stride.1, self.padding.1, self.dilation.1);
        match (oh, ow) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => Err(Error::InvalidShape {
                shape: vec![h, w],
                reason: format!("convolution {self:?} leaves no output positions"),
            }),
        }
    }

    /// Multiply-accumulates for an `H×W` input (per image).
    pub fn macs(&self, h: usize, w: usize) -> Result<u64> {
        let (oh, ow) = self.output_extent(h, w)?;
        Ok((oh * ow * self.out_channels * self.in_channels * self.kernel.0 * self.kernel.1) as u64)
    }
}

struct Geometry {
    p: ConvParams,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn k(&self) -> usize {
        self.p.in_channels * self.p.kernel.0 * self.p.kernel.1
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// 1×1, stride 1, no padding: the image itself is the column matrix.
    fn is_direct(&self) -> bool {
        self.p.is_pointwise() && self.p.stride == (1, 1) && self.p.padding == (0, 0)
    }

    /// Unfold one image (`Cin×H×W`) into a `K×(H'·W')` column matrix.
    fn im2col<T: Float>(&self, img: &[T], cols: &mut [T]) {
        let (kh, kw) = self.p.kernel;
        let (sh, sw) = self.p.stride;
        let (ph, pw) = self.p.padding;
        let (dh, dw) = self.p.dilation;
        let npos = self.positions();
        for ci in 0..self.p.in_channels {
            let plane = &img[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for i in 0..kh {
                for j in 0..kw {
                    let row = &mut cols[((ci * kh + i) * kw + j) * npos..][..npos];
                    for oy in 0..self.oh {
                        let iy = (oy * sh + i * dh) as isize - ph as isize;
                        let dst = &mut row[oy * self.ow..(oy + 1) * self.ow];
                        if iy < 0 || iy >= self.h as isize {
                            dst.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * sw + j * dw) as isize - pw as isize;
                            *d = if ix >= 0 && ix < self.w as isize {
                                src[ix as usize]
                            } else {
                                T::zero()
                            };
                        }
                    }
                }
            }
        }
    }

    /// Fold a column-matrix gradient back onto one image, accumulating.
    fn col2im<T: Float>(&self, cols: &[T], img: &mut [T]) {
        let (kh, kw) = self.p.kernel;
        let (sh, sw) = self.p.stride;
        let (ph, pw) = self.p.padding;
        let (dh, dw) = self.p.dilation;
        let npos = self.positions();
        for ci in 0..self.p.in_channels {
            let plane = &mut img[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for i in 0..kh {
                for j in 0..kw {
                    let row = &cols[((ci * kh + i) * kw + j) * npos..][..npos];
                    for oy in 0..self.oh {
                        let iy = (oy * sh + i * dh) as isize - ph as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, &g) in row[oy * self.ow..(oy + 1) * self.ow].iter().enumerate() {
                            let ix = (ox * sw + j * dw) as isize - pw as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] += g;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Zero-padded 2-D cross-correlation of `x` (`N×Cin×H×W`) with `w`
/// (`Cout×Cin×kh×kw`) plus an optional per-channel bias.
pub fn conv2d<'t, T: Float>(
    x: Var<'t, T>,
    w: Var<'t, T>,
    b: Option<Var<'t, T>>,
    p: ConvParams,
) -> Result<Var<'t, T>> {
    let xv = x.value();
    let wv = w.value();
    let (n, cin, h, wd) = xv.dims4("conv2d")?;
    if cin != p.in_channels {
        return Err(Error::mismatch("conv2d input channels", &[cin], &[p.in_channels]));
    }
    if wv.shape() != p.weight_shape() {
        return Err(Error::mismatch("conv2d weight", wv.shape(), &p.weight_shape()));
    }
    if p.has_bias != b.is_some() {
        return Err(Error::Config(format!(
            "conv2d: has_bias = {} but bias {} supplied",
            p.has_bias,
            if b.is_some() { "was" } else { "was not" }
        )));
    }
    let bias = match b {
        Some(b) => {
            let bv = b.value();
            if bv.shape() != [p.out_channels] {
                return Err(Error::mismatch("conv2d bias", bv.shape(), &[p.out_channels]));
            }
            Some(bv)
        }
        None => None,
    };
    let (oh, ow) = p.output_extent(h, wd)?;
    let geo = Geometry { p, h, w: wd, oh, ow };
    let (k, npos, cout) = (geo.k(), geo.positions(), p.out_channels);

    let mut out = vec![T::zero(); n * cout * npos];
    let mut cols = if geo.is_direct() { Vec::new() } else { vec![T::zero(); k * npos] };
    let in_stride = cin * h * wd;
    for (img, dst) in xv.data().chunks(in_stride).zip(out.chunks_mut(cout * npos)) {
        let cols: &[T] = if geo.is_direct() {
            img
        } else {
            geo.im2col(img, &mut cols);
            &cols
        };
        T::gemm(cout, k, npos, T::one(), wv.data(), k as isize, 1, cols, npos as isize, 1, T::zero(), dst, npos as isize, 1);
        if let Some(bias) = &bias {
            for (plane, &bv) in dst.chunks_mut(npos).zip(bias.data()) {
                plane.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    let out = Tensor::from_vec(&[n, cout, oh, ow], out)?;
    drop((xv, wv, bias));

    let inputs: Vec<Var<'t, T>> = std::iter::once(x).chain(std::iter::once(w)).chain(b).collect();
    x.tape().record("conv2d", &inputs, out, move |ctx| {
        let (x, w, g) = (ctx.input(0), ctx.input(1), ctx.grad);
        let (need_x, need_w) = (ctx.needs[0], ctx.needs[1]);
        let need_b = ctx.needs.get(2).copied().unwrap_or(false);
        let mut gx = need_x.then(|| Tensor::zeros_like(x));
        let mut gw = need_w.then(|| Tensor::zeros_like(w));
        let mut cols = vec![T::zero(); if geo.is_direct() { 0 } else { k * npos }];
        for (s, (img, gout)) in x.data().chunks(in_stride).zip(g.data().chunks(cout * npos)).enumerate() {
            if let Some(gw) = gw.as_mut() {
                let cols: &[T] = if geo.is_direct() {
                    img
                } else {
                    geo.im2col(img, &mut cols);
                    &cols
                };
                // dW += dY · colsᵀ
                T::gemm(cout, npos, k, T::one(), gout, npos as isize, 1, cols, 1, npos as isize, T::one(), gw.data_mut(), k as isize, 1);
            }
            if let Some(gx) = gx.as_mut() {
                let dst = &mut gx.data_mut()[s * in_stride..(s + 1) * in_stride];
                if geo.is_direct() {
                    // dX = Wᵀ · dY
                    T::gemm(k, cout, npos, T::one(), w.data(), 1, k as isize, gout, npos as isize, 1, T::zero(), dst, npos as isize, 1);
                } else {
                    T::gemm(k, cout, npos, T::one(), w.data(), 1, k as isize, gout, npos as isize, 1, T::zero(), &mut cols, npos as isize, 1);
                    geo.col2im(&cols, dst);
                }
            }
        }
        let mut grads = vec![gx, gw];
        if ctx.inputs.len() == 3 {
            grads.push(need_b.then(|| {
                let mut gb = vec![T::zero(); cout];
                for sample in g.data().chunks(cout * npos) {
                    for (acc, plane) in gb.iter_mut().zip(sample.chunks(npos)) {
                        *acc += plane.iter().copied().sum::<T>();
                    }
                }
                Tensor::from_vec(&[cout], gb).expect("bias gradient shape")
            }));
        }
        Ok(grads)
    })
}
