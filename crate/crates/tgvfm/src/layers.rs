//! Small composable layers over the tape: named conv / linear building
//! blocks that register their weights through a [`Ctx`].

use crate::params::{Ctx, Init};
use crate::tape::Var;

/// 3x3 (or kxk) convolution with bias; weights named `{name}.w` / `{name}.b`.
pub fn conv(
    ctx: &mut Ctx,
    name: &str,
    x: Var,
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Var {
    let fan_in = cin * k * k;
    let w = ctx.p(&format!("{name}.w"), &[cout, cin, k, k], Init::ScaledUniform { fan_in });
    let b = ctx.p(&format!("{name}.b"), &[cout], Init::ScaledUniform { fan_in });
    ctx.tape.conv2d(x, w, b, stride, pad)
}

/// Row-wise affine map `[N,cin] -> [N,cout]`.
pub fn linear(ctx: &mut Ctx, name: &str, x: Var, cin: usize, cout: usize) -> Var {
    let w = ctx.p(&format!("{name}.w"), &[cin, cout], Init::ScaledUniform { fan_in: cin });
    let b = ctx.p(&format!("{name}.b"), &[cout], Init::ScaledUniform { fan_in: cin });
    let y = ctx.tape.matmul(x, w);
    ctx.tape.add_row_vec(y, b)
}

/// Linear map whose weight and bias start at exactly zero, so the layer's
/// initial output is zero regardless of input.
pub fn zero_linear(ctx: &mut Ctx, name: &str, x: Var, cin: usize, cout: usize) -> Var {
    let w = ctx.p(&format!("{name}.w"), &[cin, cout], Init::Zeros);
    let b = ctx.p(&format!("{name}.b"), &[cout], Init::Zeros);
    let y = ctx.tape.matmul(x, w);
    ctx.tape.add_row_vec(y, b)
}

/// Bias-free linear map, the projection form used inside attention.
pub fn linear_no_bias(ctx: &mut Ctx, name: &str, x: Var, cin: usize, cout: usize) -> Var {
    let w = ctx.p(&format!("{name}.w"), &[cin, cout], Init::ScaledUniform { fan_in: cin });
    ctx.tape.matmul(x, w)
}

/// Per-row layer norm with learned gain/bias named `{name}.g` / `{name}.b`.
pub fn layer_norm(ctx: &mut Ctx, name: &str, x: Var, c: usize) -> Var {
    let g = ctx.p(&format!("{name}.g"), &[c], Init::Ones);
    let b = ctx.p(&format!("{name}.b"), &[c], Init::Zeros);
    ctx.tape.layernorm_rows(x, g, b, 1e-5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{Bound, ParamStore};
    use crate::tape::Tape;
    use ndarray::{ArrayD, IxDyn};

    #[test]
    fn zero_linear_starts_at_zero_but_learns() {
        let mut store = ParamStore::new(9);
        let mut tape = Tape::new();
        let mut bound = Bound::new();
        let mut ctx = Ctx::new(&mut tape, &mut store, &mut bound);
        let x = ctx.tape.param(ArrayD::from_elem(IxDyn(&[2, 3]), 1.5));
        let y = zero_linear(&mut ctx, "test.zl", x, 3, 2);
        assert!(tape.value(y).iter().all(|&v| v == 0.0), "zero init means zero output");
        let loss = tape.sum_all(y);
        let g = tape.backward(loss);
        let gw = g.get(bound.var("test.zl.w").unwrap()).unwrap();
        assert!(gw.iter().any(|&v| v != 0.0), "weights still receive gradient");
    }

    #[test]
    fn frozen_ctx_blocks_gradients() {
        let mut store = ParamStore::new(9);
        let mut tape = Tape::new();
        let mut bound = Bound::new();
        let mut ctx = Ctx::frozen(&mut tape, &mut store, &mut bound);
        let x = ctx.tape.constant(ArrayD::from_elem(IxDyn(&[2, 3]), 1.0));
        let y = linear(&mut ctx, "test.fr", x, 3, 2);
        assert!(!tape.needs(y), "no parameter leaf, nothing to differentiate");
    }
}
