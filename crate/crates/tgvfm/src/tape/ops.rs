//! Elementwise, linear-algebra, attention and loss ops for the tape.

use super::{Op, Tape, Var};
use ndarray::{concatenate, ArrayD, Axis, Ix2, Ix3, IxDyn};

fn as2(v: &ArrayD<f64>) -> ndarray::ArrayView2<'_, f64> {
    v.view().into_dimensionality::<Ix2>().expect("rank-2 tensor expected")
}

fn as3(v: &ArrayD<f64>) -> ndarray::ArrayView3<'_, f64> {
    v.view().into_dimensionality::<Ix3>().expect("rank-3 tensor expected")
}

impl Tape {
    pub(crate) fn unary(&mut self, a: Var, value: ArrayD<f64>, op: Op) -> Var {
        let needs = self.needs(a);
        self.push(value, op, needs)
    }

    fn binary(&mut self, a: Var, b: Var, value: ArrayD<f64>, op: Op) -> Var {
        let needs = self.needs(a) || self.needs(b);
        self.push(value, op, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "add: shape mismatch");
        let v = self.value(a) + self.value(b);
        self.binary(a, b, v, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "sub: shape mismatch");
        let v = self.value(a) - self.value(b);
        self.binary(a, b, v, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "mul: shape mismatch");
        let v = self.value(a) * self.value(b);
        self.binary(a, b, v, Op::Mul(a.0, b.0))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "div: shape mismatch");
        let v = self.value(a) / self.value(b);
        self.binary(a, b, v, Op::Div(a.0, b.0))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).mapv(|x| x * c);
        self.unary(a, v, Op::Scale(a.0, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).mapv(|x| x + c);
        self.unary(a, v, Op::AddScalar(a.0))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::abs);
        self.unary(a, v, Op::Abs(a.0))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::sqrt);
        self.unary(a, v, Op::Sqrt(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::exp);
        self.unary(a, v, Op::Exp(a.0))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::ln);
        self.unary(a, v, Op::Ln(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.unary(a, v, Op::Sigmoid(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.unary(a, v, Op::Tanh(a.0))
    }

    /// x·σ(x): the smooth activation used by the reconstruction network.
    pub fn silu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x * sigmoid(x));
        self.unary(a, v, Op::Silu(a.0))
    }

    /// tanh-approximated GELU, used inside transformer feed-forward layers.
    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(gelu);
        self.unary(a, v, Op::Gelu(a.0))
    }

    /// `[m,k]·[k,n] -> [m,n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (as2(self.value(a)), as2(self.value(b)));
        assert_eq!(av.ncols(), bv.nrows(), "matmul: inner dims differ");
        let v = av.dot(&bv).into_dyn();
        self.binary(a, b, v, Op::MatMul(a.0, b.0))
    }

    /// Batched matmul `[B,m,k]·[B,k,n] -> [B,m,n]`
    pub fn bmm(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (as3(self.value(a)), as3(self.value(b)));
        assert_eq!(av.shape()[0], bv.shape()[0], "bmm: batch dims differ");
        assert_eq!(av.shape()[2], bv.shape()[1], "bmm: inner dims differ");
        let (bsz, m, n) = (av.shape()[0], av.shape()[1], bv.shape()[2]);
        let mut out = ndarray::Array3::<f64>::zeros((bsz, m, n));
        for i in 0..bsz {
            let prod = av.index_axis(Axis(0), i).dot(&bv.index_axis(Axis(0), i));
            out.index_axis_mut(Axis(0), i).assign(&prod);
        }
        self.binary(a, b, out.into_dyn(), Op::Bmm(a.0, b.0))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let v = self
            .value(a)
            .to_shape(IxDyn(shape))
            .expect("reshape: element count mismatch")
            .to_owned();
        self.unary(a, v, Op::Reshape(a.0))
    }

    /// `[m,n] -> [n,m]` (materialized).
    pub fn transpose2(&mut self, a: Var) -> Var {
        let v = as2(self.value(a)).t().to_owned().into_dyn();
        self.unary(a, v, Op::Transpose2(a.0))
    }

    /// `[a,b,c] -> [a,c,b]` (materialized).
    pub fn permute3_021(&mut self, a: Var) -> Var {
        let v = as3(self.value(a)).permuted_axes([0, 2, 1]).to_owned().into_dyn();
        self.unary(a, v, Op::Permute3_021(a.0))
    }

    pub fn concat(&mut self, axis: usize, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat: no inputs");
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = concatenate(Axis(axis), &views).expect("concat: incompatible shapes");
        let needs = parts.iter().any(|p| self.needs(*p));
        let inputs = parts.iter().map(|p| p.0).collect();
        self.push(v, Op::Concat { inputs, axis }, needs)
    }

    pub fn slice_axis(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Var {
        let v = self
            .value(a)
            .slice_axis(Axis(axis), ndarray::Slice::from(start..start + len))
            .to_owned();
        self.unary(a, v, Op::SliceAxis { input: a.0, axis, start, len })
    }

    /// Select rows of `[N,C]` by index (duplicates allowed) -> `[M,C]`.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let av = as2(self.value(a));
        let mut out = ndarray::Array2::<f64>::zeros((idx.len(), av.ncols()));
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).assign(&av.row(i));
        }
        self.unary(a, out.into_dyn(), Op::GatherRows { input: a.0, idx: idx.to_vec() })
    }

    /// Softmax along the last axis.
    pub fn softmax_last(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        let last = v.ndim() - 1;
        for mut lane in v.lanes_mut(Axis(last)) {
            let max = lane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for x in lane.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            for x in lane.iter_mut() {
                *x /= sum;
            }
        }
        self.unary(a, v, Op::SoftmaxLast(a.0))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = ArrayD::from_elem(IxDyn(&[1]), self.value(a).sum());
        self.unary(a, v, Op::SumAll(a.0))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let v = ArrayD::from_elem(IxDyn(&[1]), self.value(a).sum() / n);
        self.unary(a, v, Op::MeanAll(a.0))
    }

    /// `[N,C] + [C]` broadcast over rows.
    pub fn add_row_vec(&mut self, a: Var, b: Var) -> Var {
        let av = as2(self.value(a));
        let bv = self.value(b);
        assert_eq!(av.ncols(), bv.len(), "add_row_vec: width mismatch");
        let bs = bv.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let v = (&av + &bs).into_dyn();
        self.binary(a, b, v, Op::AddRowVec(a.0, b.0))
    }

    /// Per-row layer normalization of `[N,C]` with learned gain/bias `[C]`.
    pub fn layernorm_rows(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let xv = as2(self.value(x));
        let g = self.value(gain).view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let b = self.value(bias).view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let c = xv.ncols() as f64;
        let mut out = xv.to_owned();
        for mut row in out.rows_mut() {
            let mean = row.sum() / c;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c;
            let inv = 1.0 / (var + eps).sqrt();
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean) * inv * g[j] + b[j];
            }
        }
        let needs = self.needs(x) || self.needs(gain) || self.needs(bias);
        self.push(out.into_dyn(), Op::LayerNormRows { x: x.0, gain: gain.0, bias: bias.0, eps }, needs)
    }

    /// Mean negative log-likelihood of `labels` under row-wise softmax of
    /// `logits [N,K]`. Labels < 0 are ignored; at least one row must remain.
    pub fn cross_entropy_logits(&mut self, logits: Var, labels: &[i64]) -> Var {
        let lv = as2(self.value(logits));
        assert_eq!(lv.nrows(), labels.len(), "cross_entropy: label count mismatch");
        let mut total = 0.0;
        let mut n_valid = 0usize;
        for (row, &y) in lv.rows().into_iter().zip(labels) {
            if y < 0 {
                continue;
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[y as usize];
            n_valid += 1;
        }
        assert!(n_valid > 0, "cross_entropy: every label ignored");
        let v = ArrayD::from_elem(IxDyn(&[1]), total / n_valid as f64);
        self.unary(logits, v, Op::CrossEntropyLogits { logits: logits.0, labels: labels.to_vec() })
    }

    pub(crate) fn backprop_node(&self, i: usize, grad: &ArrayD<f64>, g: &mut [Option<ArrayD<f64>>]) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(g, *a, grad.clone());
                self.acc(g, *b, grad.clone());
            }
            Op::Sub(a, b) => {
                self.acc(g, *a, grad.clone());
                self.acc(g, *b, grad.mapv(|x| -x));
            }
            Op::Mul(a, b) => {
                self.acc(g, *a, grad * &self.nodes[*b].value);
                self.acc(g, *b, grad * &self.nodes[*a].value);
            }
            Op::Div(a, b) => {
                let bv = &self.nodes[*b].value;
                self.acc(g, *a, grad / bv);
                let da = grad * &self.nodes[*a].value;
                self.acc(g, *b, -(da / (bv * bv)));
            }
            Op::Scale(a, c) => self.acc(g, *a, grad.mapv(|x| x * c)),
            Op::AddScalar(a) => self.acc(g, *a, grad.clone()),
            Op::Abs(a) => {
                let sign = self.nodes[*a].value.mapv(|x| {
                    if x > 0.0 {
                        1.0
                    } else if x < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                });
                self.acc(g, *a, grad * &sign);
            }
            Op::Sqrt(a) => {
                let y = &self.nodes[i].value;
                self.acc(g, *a, grad / &y.mapv(|v| 2.0 * v));
            }
            Op::Exp(a) => self.acc(g, *a, grad * &self.nodes[i].value),
            Op::Ln(a) => self.acc(g, *a, grad / &self.nodes[*a].value),
            Op::Sigmoid(a) => {
                let y = &self.nodes[i].value;
                self.acc(g, *a, grad * &y.mapv(|s| s * (1.0 - s)));
            }
            Op::Tanh(a) => {
                let y = &self.nodes[i].value;
                self.acc(g, *a, grad * &y.mapv(|t| 1.0 - t * t));
            }
            Op::Silu(a) => {
                let d = self.nodes[*a].value.mapv(|x| {
                    let s = sigmoid(x);
                    s * (1.0 + x * (1.0 - s))
                });
                self.acc(g, *a, grad * &d);
            }
            Op::Gelu(a) => {
                let d = self.nodes[*a].value.mapv(gelu_deriv);
                self.acc(g, *a, grad * &d);
            }
            Op::MatMul(a, b) => {
                let gv = as2(grad);
                let (av, bv) = (as2(&self.nodes[*a].value), as2(&self.nodes[*b].value));
                self.acc(g, *a, gv.dot(&bv.t()).into_dyn());
                self.acc(g, *b, av.t().dot(&gv).into_dyn());
            }
            Op::Bmm(a, b) => {
                let gv = as3(grad);
                let (av, bv) = (as3(&self.nodes[*a].value), as3(&self.nodes[*b].value));
                let bsz = av.shape()[0];
                let mut da = ndarray::Array3::<f64>::zeros((bsz, av.shape()[1], av.shape()[2]));
                let mut db = ndarray::Array3::<f64>::zeros((bsz, bv.shape()[1], bv.shape()[2]));
                for k in 0..bsz {
                    let gk = gv.index_axis(Axis(0), k);
                    da.index_axis_mut(Axis(0), k)
                        .assign(&gk.dot(&bv.index_axis(Axis(0), k).t()));
                    db.index_axis_mut(Axis(0), k)
                        .assign(&av.index_axis(Axis(0), k).t().dot(&gk));
                }
                self.acc(g, *a, da.into_dyn());
                self.acc(g, *b, db.into_dyn());
            }
            Op::Reshape(a) => {
                let shape = self.nodes[*a].value.shape().to_vec();
                self.acc(g, *a, grad.to_shape(IxDyn(&shape)).unwrap().to_owned());
            }
            Op::Transpose2(a) => self.acc(g, *a, as2(grad).t().to_owned().into_dyn()),
            Op::Permute3_021(a) => {
                self.acc(g, *a, as3(grad).permuted_axes([0, 2, 1]).to_owned().into_dyn())
            }
            Op::Concat { inputs, axis } => {
                let mut offset = 0;
                for &inp in inputs {
                    let len = self.nodes[inp].value.shape()[*axis];
                    let part = grad
                        .slice_axis(Axis(*axis), ndarray::Slice::from(offset..offset + len))
                        .to_owned();
                    self.acc(g, inp, part);
                    offset += len;
                }
            }
            Op::SliceAxis { input, axis, start, len } => {
                let mut dx = ArrayD::<f64>::zeros(self.nodes[*input].value.raw_dim());
                dx.slice_axis_mut(Axis(*axis), ndarray::Slice::from(*start..*start + *len))
                    .assign(grad);
                self.acc(g, *input, dx);
            }
            Op::GatherRows { input, idx } => {
                let gv = as2(grad);
                let shape = as2(&self.nodes[*input].value).raw_dim();
                let mut dx = ndarray::Array2::<f64>::zeros(shape);
                for (r, &srow) in idx.iter().enumerate() {
                    let mut target = dx.row_mut(srow);
                    target += &gv.row(r);
                }
                self.acc(g, *input, dx.into_dyn());
            }
            Op::SoftmaxLast(a) => {
                let y = &self.nodes[i].value;
                let mut dx = y.clone();
                let last = dx.ndim() - 1;
                let gl = grad.lanes(Axis(last));
                let yl = y.lanes(Axis(last));
                for ((mut d, gr), yr) in dx.lanes_mut(Axis(last)).into_iter().zip(gl).zip(yl) {
                    let dot: f64 = gr.iter().zip(yr.iter()).map(|(a, b)| a * b).sum();
                    for (dj, (gj, yj)) in d.iter_mut().zip(gr.iter().zip(yr.iter())) {
                        *dj = yj * (gj - dot);
                    }
                }
                self.acc(g, *a, dx);
            }
            Op::SumAll(a) => {
                let s = grad.iter().next().copied().unwrap();
                self.acc(g, *a, ArrayD::from_elem(self.nodes[*a].value.raw_dim(), s));
            }
            Op::MeanAll(a) => {
                let n = self.nodes[*a].value.len() as f64;
                let s = grad.iter().next().copied().unwrap() / n;
                self.acc(g, *a, ArrayD::from_elem(self.nodes[*a].value.raw_dim(), s));
            }
            Op::AddRowVec(a, b) => {
                self.acc(g, *a, grad.clone());
                let db = as2(grad).sum_axis(Axis(0)).into_dyn();
                self.acc(g, *b, db);
            }
            Op::LayerNormRows { x, gain, bias, eps } => {
                let xv = as2(&self.nodes[*x].value);
                let gv = self.nodes[*gain].value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
                let gr = as2(grad);
                let c = xv.ncols() as f64;
                let mut dx = ndarray::Array2::<f64>::zeros(xv.raw_dim());
                let mut dgain = ndarray::Array1::<f64>::zeros(xv.ncols());
                let mut dbias = ndarray::Array1::<f64>::zeros(xv.ncols());
                for r in 0..xv.nrows() {
                    let row = xv.row(r);
                    let mean = row.sum() / c;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c;
                    let inv = 1.0 / (var + eps).sqrt();
                    let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv).collect();
                    let dy = gr.row(r);
                    let dxhat: Vec<f64> = dy.iter().zip(gv.iter()).map(|(d, gw)| d * gw).collect();
                    let m1 = dxhat.iter().sum::<f64>() / c;
                    let m2 = dxhat.iter().zip(&xhat).map(|(d, h)| d * h).sum::<f64>() / c;
                    for j in 0..xv.ncols() {
                        dx[(r, j)] = (dxhat[j] - m1 - xhat[j] * m2) * inv;
                        dgain[j] += dy[j] * xhat[j];
                        dbias[j] += dy[j];
                    }
                }
                self.acc(g, *x, dx.into_dyn());
                self.acc(g, *gain, dgain.into_dyn());
                self.acc(g, *bias, dbias.into_dyn());
            }
            Op::CrossEntropyLogits { logits, labels } => {
                let lv = as2(&self.nodes[*logits].value);
                let gs = grad.iter().next().copied().unwrap();
                let n_valid = labels.iter().filter(|&&y| y >= 0).count() as f64;
                let mut dx = ndarray::Array2::<f64>::zeros(lv.raw_dim());
                for (r, &y) in labels.iter().enumerate() {
                    if y < 0 {
                        continue;
                    }
                    let row = lv.row(r);
                    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
                    let sum: f64 = exps.iter().sum();
                    for j in 0..row.len() {
                        let p = exps[j] / sum;
                        let onehot = if j == y as usize { 1.0 } else { 0.0 };
                        dx[(r, j)] = gs * (p - onehot) / n_valid;
                    }
                }
                self.acc(g, *logits, dx.into_dyn());
            }
            Op::Conv2d { x, w, b, stride, pad } => {
                self.backprop_conv2d(i, grad, g, *x, *w, *b, *stride, *pad)
            }
            Op::NearestUp2(a) => self.backprop_nearest_up2(grad, g, *a),
            Op::BilinearResize { input, out_h, out_w } => {
                self.backprop_bilinear(grad, g, *input, *out_h, *out_w)
            }
            Op::GaussFilter { input, kernel } => self.backprop_gauss(grad, g, *input, kernel),
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

const GELU_C0: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C1: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C0 * (x + GELU_C1 * x * x * x)).tanh())
}

fn gelu_deriv(x: f64) -> f64 {
    let u = GELU_C0 * (x + GELU_C1 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C0 * (1.0 + 3.0 * GELU_C1 * x * x)
}
