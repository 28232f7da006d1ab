use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Add,
    Sub,
    Mul,
}

impl Kind {
    fn name(self) -> &'static str {
        match self {
            Kind::Add => "add",
            Kind::Sub => "sub",
            Kind::Mul => "mul",
        }
    }

    #[inline]
    fn apply<T: Float>(self, a: T, b: T) -> T {
        match self {
            Kind::Add => a + b,
            Kind::Sub => a - b,
            Kind::Mul => a * b,
        }
    }
}

/// Layout of `b` relative to `a`.
#[derive(Debug, Clone, Copy)]
enum Layout {
    Same,
    /// `b` is `N×C×1×1`; each value covers `plane` consecutive elements of `a`.
    PerChannel { plane: usize },
}

fn layout(op: &'static str, a: &[usize], b: &[usize]) -> Result<Layout> {
    if a == b {
        return Ok(Layout::Same);
    }
    match (a, b) {
        ([n, c, h, w], [bn, bc, 1, 1]) if n == bn && c == bc => Ok(Layout::PerChannel { plane: h * w }),
        _ => Err(Error::mismatch(op, a, b)),
    }
}

fn binary<'t, T: Float>(kind: Kind, a: Var<'t, T>, b: Var<'t, T>) -> Result<Var<'t, T>> {
    let av = a.value();
    let bv = b.value();
    let lay = layout(kind.name(), av.shape(), bv.shape())?;
    let out = match lay {
        Layout::Same => av.zip_map(&bv, kind.name(), |x, y| kind.apply(x, y))?,
        Layout::PerChannel { plane } => {
            let data = av
                .data()
                .chunks(plane)
                .zip(bv.data())
                .flat_map(|(chunk, &y)| chunk.iter().map(move |&x| kind.apply(x, y)))
                .collect();
            Tensor::from_vec(av.shape(), data)?
        }
    };
    drop((av, bv));
    a.tape().record(kind.name(), &[a, b], out, move |ctx| {
        let g = ctx.grad;
        let (x, y) = (ctx.input(0), ctx.input(1));
        let ga = if ctx.needs[0] {
            Some(match (kind, lay) {
                (Kind::Add | Kind::Sub, _) => g.clone(),
                (Kind::Mul, Layout::Same) => g.zip_map(y, "mul", |g, y| g * y)?,
                (Kind::Mul, Layout::PerChannel { plane }) => {
                    let data = g
                        .data()
                        .chunks(plane)
                        .zip(y.data())
                        .flat_map(|(chunk, &yv)| chunk.iter().map(move |&gv| gv * yv))
                        .collect();
                    Tensor::from_vec(g.shape(), data)?
                }
            })
        } else {
            None
        };
        let gb = if ctx.needs[1] {
            let sign = if kind == Kind::Sub { -T::one() } else { T::one() };
            Some(match (kind, lay) {
                (Kind::Add | Kind::Sub, Layout::Same) => g.map(|v| sign * v),
                (Kind::Mul, Layout::Same) => g.zip_map(x, "mul", |g, x| g * x)?,
                (_, Layout::PerChannel { plane }) => {
                    let data = g
                        .data()
                        .chunks(plane)
                        .zip(x.data().chunks(plane))
                        .map(|(gc, xc)| match kind {
                            Kind::Mul => gc.iter().zip(xc).map(|(&g, &x)| g * x).sum(),
                            _ => sign * gc.iter().copied().sum::<T>(),
                        })
                        .collect();
                    Tensor::from_vec(y.shape(), data)?
                }
            })
        } else {
            None
        };
        Ok(vec![ga, gb])
    })
}

/// `a + b`; `b` may be `N×C×1×1` against an `N×C×H×W` `a`.
pub fn add<'t, T: Float>(a: Var<'t, T>, b: Var<'t, T>) -> Result<Var<'t, T>> {
    binary(Kind::Add, a, b)
}

pub fn sub<'t, T: Float>(a: Var<'t, T>, b: Var<'t, T>) -> Result<Var<'t, T>> {
    binary(Kind::Sub, a, b)
}

/// `a ⊙ b`; `b` may be `N×C×1×1` against an `N×C×H×W` `a`.
pub fn mul<'t, T: Float>(a: Var<'t, T>, b: Var<'t, T>) -> Result<Var<'t, T>> {
    binary(Kind::Mul, a, b)
}

/// Sum of all elements, as a one-element tensor.
pub fn sum<T: Float>(x: Var<'_, T>) -> Result<Var<'_, T>> {
    let v = x.value();
    let out = Tensor::scalar(v.sum());
    let shape = v.shape().to_vec();
    x.tape().record("sum", &[x], out, move |ctx| {
        Ok(vec![Some(Tensor::full(&shape, ctx.grad.data()[0])?)])
    })
}

/// `Σ x ⊙ weights` for a fixed weight tensor. Used to turn any tensor output
/// into a scalar with a non-degenerate gradient.
pub fn weighted_sum<'t, T: Float>(x: Var<'t, T>, weights: &Tensor<T>) -> Result<Var<'t, T>> {
    let v = x.value();
    if v.shape() != weights.shape() {
        return Err(Error::mismatch("weighted_sum", v.shape(), weights.shape()));
    }
    let total = v.data().iter().zip(weights.data()).map(|(&a, &b)| a * b).sum();
    let weights = weights.clone();
    x.tape().record("weighted_sum", &[x], Tensor::scalar(total), move |ctx| {
        let g = ctx.grad.data()[0];
        Ok(vec![Some(weights.map(|w| w * g))])
    })
}
