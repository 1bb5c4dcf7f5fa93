//! Convolutional recurrent cells operating on `[C,H,W]` tape tensors.

use crate::layers::conv;
use crate::params::Ctx;
use crate::tape::Var;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum CellKind {
    ConvGru,
    ConvLstm,
}

/// One recurrent step. `state` is `(h, Some(c))` for LSTM, `(h, None)` for
/// GRU; the returned pair has the same form.
pub fn cell_step(
    ctx: &mut Ctx,
    name: &str,
    kind: CellKind,
    x: Var,
    state: (Var, Option<Var>),
    ch: usize,
) -> (Var, Option<Var>) {
    let (h, c) = state;
    match kind {
        CellKind::ConvGru => {
            let cat = ctx.tape.concat(0, &[x, h]);
            let z = conv(ctx, &format!("{name}.z"), cat, 2 * ch, ch, 3, 1, 1);
            let z = ctx.tape.sigmoid(z);
            let r = conv(ctx, &format!("{name}.r"), cat, 2 * ch, ch, 3, 1, 1);
            let r = ctx.tape.sigmoid(r);
            let rh = ctx.tape.mul(r, h);
            let cat2 = ctx.tape.concat(0, &[x, rh]);
            let n = conv(ctx, &format!("{name}.n"), cat2, 2 * ch, ch, 3, 1, 1);
            let n = ctx.tape.tanh(n);
            let neg_z = ctx.tape.scale(z, -1.0);
            let keep = ctx.tape.add_scalar(neg_z, 1.0);
            let kept = ctx.tape.mul(keep, h);
            let new = ctx.tape.mul(z, n);
            (ctx.tape.add(kept, new), None)
        }
        CellKind::ConvLstm => {
            let c = c.expect("LSTM state carries a cell tensor");
            let cat = ctx.tape.concat(0, &[x, h]);
            let gate = |ctx: &mut Ctx, tag: &str| conv(ctx, &format!("{name}.{tag}"), cat, 2 * ch, ch, 3, 1, 1);
            let i = gate(ctx, "i");
            let i = ctx.tape.sigmoid(i);
            let f = gate(ctx, "f");
            let f = ctx.tape.sigmoid(f);
            let o = gate(ctx, "o");
            let o = ctx.tape.sigmoid(o);
            let g = gate(ctx, "g");
            let g = ctx.tape.tanh(g);
            let fc = ctx.tape.mul(f, c);
            let ig = ctx.tape.mul(i, g);
            let c_next = ctx.tape.add(fc, ig);
            let ct = ctx.tape.tanh(c_next);
            (ctx.tape.mul(o, ct), Some(c_next))
        }
    }
}
