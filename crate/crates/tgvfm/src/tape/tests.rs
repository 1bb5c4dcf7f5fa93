use super::*;
use ndarray::IxDyn;

fn arr(shape: &[usize], v: Vec<f64>) -> ArrayD<f64> {
    ArrayD::from_shape_vec(IxDyn(shape), v).expect("test array shape")
}

/// Deterministic quasi-random filler, kept away from kinks of |x| and sqrt.
fn filled(shape: &[usize], phase: f64) -> ArrayD<f64> {
    let n: usize = shape.iter().product();
    arr(shape, (0..n).map(|i| (i as f64 * 0.7310 + phase).sin() * 0.9 + 0.05).collect())
}

/// Compares backward-pass gradients of `build`'s scalar output against central
/// finite differences for every element of every leaf.
fn fd_check(leaves: &[ArrayD<f64>], tol: f64, build: impl Fn(&mut Tape, &[Var]) -> Var) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|l| tape.param(l.clone())).collect();
    let loss = build(&mut tape, &vars);
    let grads = tape.backward(loss);

    let eval = |ls: &[ArrayD<f64>]| -> f64 {
        let mut t = Tape::new();
        let vs: Vec<Var> = ls.iter().map(|l| t.param(l.clone())).collect();
        let out = build(&mut t, &vs);
        t.scalar_value(out)
    };

    for (li, leaf) in leaves.iter().enumerate() {
        let ga = grads
            .get(vars[li])
            .map(|a| a.as_standard_layout().to_owned())
            .unwrap_or_else(|| ArrayD::zeros(leaf.raw_dim()));
        let gs = ga.as_slice().unwrap();
        for j in 0..leaf.len() {
            let base = leaf.as_slice().unwrap()[j];
            let h = 1e-5 * base.abs().max(1.0);
            let mut plus = leaves.to_vec();
            plus[li].as_slice_mut().unwrap()[j] = base + h;
            let mut minus = leaves.to_vec();
            minus[li].as_slice_mut().unwrap()[j] = base - h;
            let num = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let rel = grad_rel_err(gs[j], num, 1e-7);
            assert!(
                rel < tol,
                "leaf {li} elem {j}: analytic {} vs numeric {num} (rel err {rel:.3e})",
                gs[j]
            );
        }
    }
}

#[test]
fn elementwise_values() {
    let mut t = Tape::new();
    let x = t.constant(arr(&[4], vec![-3.0, 0.0, 1.0, 4.0]));
    let s = t.sigmoid(x);
    assert!((t.value(s)[[1]] - 0.5).abs() < 1e-15, "sigmoid(0) = 1/2");
    let a = t.abs(x);
    assert_eq!(t.value(a).as_slice().unwrap(), &[3.0, 0.0, 1.0, 4.0]);
    let q = t.sqrt(a);
    assert!((t.value(q)[[3]] - 2.0).abs() < 1e-15, "sqrt(4) = 2");
    let e = t.exp(x);
    let l = t.ln(e);
    for i in 0..4 {
        assert!((t.value(l)[[i]] - t.value(x)[[i]]).abs() < 1e-12, "ln(exp(x)) = x");
    }
    let g = t.gelu(x);
    assert_eq!(t.value(g)[[1]], 0.0, "gelu(0) = 0");
    let si = t.silu(x);
    assert_eq!(t.value(si)[[1]], 0.0, "silu(0) = 0");
}

#[test]
fn fd_elementwise_chain() {
    // Smooth composite touching every unary op plus mul/div/add/sub.
    let x = filled(&[2, 3], 0.2);
    fd_check(&[x], 1e-6, |t, v| {
        let x = v[0];
        let a = t.sigmoid(x);
        let b = t.tanh(x);
        let c = t.mul(a, b);
        let d = t.silu(x);
        let e = t.gelu(x);
        let f = t.add(c, d);
        let f = t.add(f, e);
        let sh = t.add_scalar(x, 3.0);
        let q = t.sqrt(sh);
        let ln = t.ln(sh);
        let r = t.div(q, sh);
        let f = t.add(f, r);
        let f = t.add(f, ln);
        let ex = t.exp(b);
        let f = t.sub(f, ex);
        let sc = t.scale(f, 0.7);
        t.mean_all(sc)
    });
}

#[test]
fn fd_abs_away_from_kink() {
    let x = arr(&[3], vec![-1.5, 0.8, 2.0]);
    fd_check(&[x], 1e-6, |t, v| {
        let a = t.abs(v[0]);
        t.sum_all(a)
    });
}

#[test]
fn matmul_value() {
    let mut t = Tape::new();
    let a = t.constant(arr(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]));
    let b = t.constant(arr(&[2, 2], vec![5.0, 6.0, 7.0, 8.0]));
    let c = t.matmul(a, b);
    assert_eq!(t.value(c).as_slice().unwrap(), &[19.0, 22.0, 43.0, 50.0]);
}

#[test]
fn fd_matmul_bmm() {
    let a = filled(&[2, 3], 0.1);
    let b = filled(&[3, 4], 0.5);
    let p = filled(&[2, 2, 3], 0.9);
    let q = filled(&[2, 3, 2], 1.3);
    fd_check(&[a, b, p, q], 1e-6, |t, v| {
        let m = t.matmul(v[0], v[1]);
        let mt = t.transpose2(m);
        let s1 = t.mean_all(mt);
        let bm = t.bmm(v[2], v[3]);
        let bp = t.permute3_021(bm);
        let s2 = t.mean_all(bp);
        t.add(s1, s2)
    });
}

#[test]
fn fd_shape_ops() {
    let x = filled(&[2, 3, 4], 0.3);
    let row = filled(&[4], 1.1);
    fd_check(&[x, row], 1e-6, |t, v| {
        let r = t.reshape(v[0], &[6, 4]);
        let gathered = t.gather_rows(r, &[0, 2, 2, 5]);
        let biased = t.add_row_vec(gathered, v[1]);
        let cat = t.concat(0, &[biased, gathered]);
        let sl = t.slice_axis(cat, 0, 1, 5);
        t.mean_all(sl)
    });
}

#[test]
fn gather_rows_accumulates_duplicates() {
    let mut t = Tape::new();
    let x = t.param(arr(&[3, 2], vec![1.0; 6]));
    let gth = t.gather_rows(x, &[1, 1, 1]);
    let loss = t.sum_all(gth);
    let g = t.backward(loss);
    let gx = g.get(x).unwrap();
    assert_eq!(gx[[0, 0]], 0.0, "ungathered row gets no gradient");
    assert_eq!(gx[[1, 0]], 3.0, "row gathered three times accumulates");
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut t = Tape::new();
    let x = t.constant(filled(&[3, 5], 0.4));
    let s = t.softmax_last(x);
    for row in t.value(s).rows() {
        assert!((row.sum() - 1.0).abs() < 1e-12, "softmax row must sum to 1");
    }
}

#[test]
fn fd_softmax() {
    let x = filled(&[2, 4], 0.6);
    let w = filled(&[2, 4], 1.0);
    fd_check(&[x, w], 1e-6, |t, v| {
        let s = t.softmax_last(v[0]);
        let m = t.mul(s, v[1]);
        t.sum_all(m)
    });
}

#[test]
fn layernorm_normalizes_rows() {
    let mut t = Tape::new();
    let x = t.constant(filled(&[4, 8], 0.7));
    let gain = t.constant(arr(&[8], vec![1.0; 8]));
    let bias = t.constant(arr(&[8], vec![0.0; 8]));
    let y = t.layernorm_rows(x, gain, bias, 1e-8);
    for row in t.value(y).rows() {
        let mean = row.sum() / 8.0;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 8.0;
        assert!(mean.abs() < 1e-12, "normalized row mean ~ 0, got {mean}");
        assert!((var - 1.0).abs() < 1e-6, "normalized row var ~ 1, got {var}");
    }
}

#[test]
fn fd_layernorm() {
    let x = filled(&[3, 5], 0.8);
    let gain = filled(&[5], 1.7);
    let bias = filled(&[5], 2.1);
    fd_check(&[x, gain, bias], 1e-5, |t, v| {
        let y = t.layernorm_rows(v[0], v[1], v[2], 1e-5);
        let sq = t.mul(y, y);
        t.mean_all(sq)
    });
}

#[test]
fn cross_entropy_matches_manual_nll() {
    let mut t = Tape::new();
    let logits = arr(&[3, 3], vec![2.0, 0.0, -1.0, 0.5, 0.5, 0.5, -2.0, 3.0, 0.0]);
    let lv = t.constant(logits.clone());
    let labels = [0i64, -1, 1];
    let loss = t.cross_entropy_logits(lv, &labels);
    let mut expect = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        if y < 0 {
            continue;
        }
        let row: Vec<f64> = (0..3).map(|j| logits[[r, j]]).collect();
        let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
        expect += lse - row[y as usize];
    }
    expect /= 2.0;
    assert!((t.scalar_value(loss) - expect).abs() < 1e-12, "mean NLL over non-ignored rows");
}

#[test]
#[should_panic(expected = "every label ignored")]
fn cross_entropy_rejects_all_ignored() {
    let mut t = Tape::new();
    let lv = t.constant(filled(&[2, 3], 0.2));
    let _ = t.cross_entropy_logits(lv, &[-1, -1]);
}

#[test]
fn fd_cross_entropy() {
    let x = filled(&[4, 3], 0.9);
    fd_check(&[x], 1e-6, |t, v| t.cross_entropy_logits(v[0], &[2, 0, -1, 1]));
}

#[test]
fn conv2d_value_hand_case() {
    let mut t = Tape::new();
    let x = t.constant(arr(&[1, 3, 3], (1..=9).map(f64::from).collect()));
    let w = t.constant(arr(&[1, 1, 2, 2], vec![1.0, 0.0, 0.0, 0.0]));
    let b = t.constant(arr(&[1], vec![0.5]));
    let y = t.conv2d(x, w, b, 1, 0);
    assert_eq!(t.value(y).shape(), &[1, 2, 2]);
    assert_eq!(
        t.value(y).as_slice().unwrap(),
        &[1.5, 2.5, 4.5, 5.5],
        "top-left tap kernel selects the upper-left of each window"
    );
}

#[test]
fn conv2d_stride_and_pad_shapes() {
    let mut t = Tape::new();
    let x = t.constant(filled(&[2, 5, 5], 0.1));
    let w = t.constant(filled(&[3, 2, 3, 3], 0.2));
    let b = t.constant(arr(&[3], vec![0.0; 3]));
    let same = t.conv2d(x, w, b, 1, 1);
    assert_eq!(t.value(same).shape(), &[3, 5, 5], "stride 1 pad 1 keeps spatial size");
    let half = t.conv2d(x, w, b, 2, 1);
    assert_eq!(t.value(half).shape(), &[3, 3, 3], "stride 2 pad 1 halves (round up)");
}

#[test]
fn fd_conv2d() {
    let x = filled(&[2, 4, 4], 0.15);
    let w = filled(&[3, 2, 3, 3], 0.45);
    let b = filled(&[3], 0.75);
    let w2 = filled(&[2, 3, 2, 2], 1.05);
    let b2 = filled(&[2], 1.35);
    fd_check(&[x, w, b, w2, b2], 1e-6, |t, v| {
        let y = t.conv2d(v[0], v[1], v[2], 1, 1);
        let y2 = t.conv2d(y, v[3], v[4], 2, 0);
        let s = t.silu(y2);
        t.mean_all(s)
    });
}

#[test]
fn nearest_up2_value_and_grad() {
    let mut t = Tape::new();
    let x = t.param(arr(&[1, 1, 2], vec![3.0, 7.0]));
    let y = t.nearest_up2(x);
    assert_eq!(t.value(y).shape(), &[1, 2, 4]);
    assert_eq!(t.value(y).as_slice().unwrap(), &[3.0, 3.0, 7.0, 7.0, 3.0, 3.0, 7.0, 7.0]);
    let loss = t.sum_all(y);
    let g = t.backward(loss);
    assert_eq!(
        g.get(x).unwrap().as_slice().unwrap(),
        &[4.0, 4.0],
        "each source pixel feeds a 2x2 block"
    );
}

#[test]
fn bilinear_identity_and_axis_weights() {
    let mut t = Tape::new();
    let x = t.constant(filled(&[2, 3, 3], 0.5));
    let same = t.bilinear_resize(x, 3, 3);
    for (a, b) in t.value(same).iter().zip(t.value(x).iter()) {
        assert!((a - b).abs() < 1e-12, "same-size resize is the identity");
    }
    let pair = t.constant(arr(&[1, 1, 2], vec![1.0, 3.0]));
    let up = t.bilinear_resize(pair, 1, 4);
    let got = t.value(up).as_slice().unwrap().to_vec();
    for (g, e) in got.iter().zip([1.0, 1.5, 2.5, 3.0]) {
        assert!((g - e).abs() < 1e-12, "half-pixel sampling of [1,3] -> {got:?}");
    }
}

#[test]
fn fd_bilinear() {
    let x = filled(&[2, 3, 3], 0.25);
    fd_check(&[x], 1e-6, |t, v| {
        let up = t.bilinear_resize(v[0], 5, 4);
        let down = t.bilinear_resize(up, 2, 2);
        let sq = t.mul(down, down);
        t.mean_all(sq)
    });
}

#[test]
fn gauss_filter_preserves_constants() {
    // Boundary renormalization makes a constant image an exact fixed point.
    let kernel = [0.05, 0.25, 0.4, 0.25, 0.05];
    let mut t = Tape::new();
    let x = t.constant(arr(&[4, 6], vec![3.7; 24]));
    let y = t.gauss_filter(x, &kernel);
    for v in t.value(y).iter() {
        assert!((v - 3.7).abs() < 1e-12, "renormalized filter fixes constants, got {v}");
    }
}

#[test]
fn fd_gauss_filter() {
    let x = filled(&[5, 4], 0.35);
    let kernel = [0.1, 0.2, 0.4, 0.2, 0.1];
    fd_check(&[x], 1e-6, |t, v| {
        let y = t.gauss_filter(v[0], &kernel);
        let sq = t.mul(y, y);
        t.mean_all(sq)
    });
}

#[test]
fn constants_get_no_gradient() {
    let mut t = Tape::new();
    let p = t.param(arr(&[2], vec![1.0, 2.0]));
    let c = t.constant(arr(&[2], vec![3.0, 4.0]));
    let m = t.mul(p, c);
    let loss = t.sum_all(m);
    let g = t.backward(loss);
    assert!(g.get(c).is_none(), "constants carry no gradient");
    assert_eq!(g.get(p).unwrap().as_slice().unwrap(), &[3.0, 4.0]);
}

#[test]
fn reused_var_accumulates_gradient() {
    let mut t = Tape::new();
    let x = t.param(arr(&[3], vec![1.0, -2.0, 0.5]));
    let sq = t.mul(x, x);
    let loss = t.sum_all(sq);
    let g = t.backward(loss);
    assert_eq!(g.get(x).unwrap().as_slice().unwrap(), &[2.0, -4.0, 1.0], "d(x^2)/dx = 2x");
}

#[test]
#[should_panic(expected = "loss must be scalar")]
fn backward_requires_scalar_loss() {
    let mut t = Tape::new();
    let x = t.param(arr(&[2], vec![1.0, 2.0]));
    let _ = t.backward(x);
}
