use crate::autograd::Var;
use crate::error::Result;
use crate::tensor::Float;

pub fn relu<T: Float>(x: Var<'_, T>) -> Result<Var<'_, T>> {
    let out = x.value().map(|v| v.max(T::zero()));
    x.tape().record("relu", &[x], out, |ctx| {
        let gx = ctx
            .input(0)
            .zip_map(ctx.grad, "relu", |x, g| if x > T::zero() { g } else { T::zero() })?;
        Ok(vec![Some(gx)])
    })
}
