//! Named parameter storage shared by every model in the crate.
//!
//! A [`ParamStore`] maps stable string names to f64 tensors. Initialization is
//! a pure function of `(seed, name, shape)` — insertion order never changes
//! the values, so two models that register overlapping parameter sets agree on
//! the shared ones. Registering the same name twice within one tape pass (via
//! [`Bound`]) yields the same [`Var`], which is how weight sharing works: the
//! tape then sums gradient contributions from every use site.

use crate::rng;
use crate::tape::{Grads, Tape, Var};
use indexmap::IndexMap;
use ndarray::{ArrayD, IxDyn};
use rand::Rng;

#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// Uniform in `±1/sqrt(fan_in)`.
    ScaledUniform { fan_in: usize },
    Uniform { lo: f64, hi: f64 },
    Zeros,
    Ones,
    Value(f64),
}

#[derive(Clone)]
pub struct ParamStore {
    seed: u64,
    tensors: IndexMap<String, ArrayD<f64>>,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore { seed, tensors: IndexMap::new() }
    }

    pub fn from_entries(seed: u64, entries: Vec<(String, ArrayD<f64>)>) -> Self {
        ParamStore { seed, tensors: entries.into_iter().collect() }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Returns the tensor for `name`, creating it from `(seed, name)` if absent.
    pub fn get_or_init(&mut self, name: &str, shape: &[usize], init: Init) -> &ArrayD<f64> {
        if !self.tensors.contains_key(name) {
            let value = materialize(self.seed, name, shape, init);
            self.tensors.insert(name.to_string(), value);
        }
        let t = &self.tensors[name];
        assert_eq!(t.shape(), shape, "parameter {name} registered with a different shape");
        t
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.tensors.get(name)
    }

    pub fn set(&mut self, name: &str, value: ArrayD<f64>) {
        self.tensors.insert(name.to_string(), value);
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    /// Tensor count.
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count across all tensors.
    pub fn n_scalars(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    /// Entries in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<f64>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(|k| k.as_str())
    }

    /// Registers `name` on `tape` for this pass, reusing the Var if `bound`
    /// already holds it (shared parameters resolve to one tape leaf).
    pub fn var(
        &mut self,
        tape: &mut Tape,
        bound: &mut Bound,
        name: &str,
        shape: &[usize],
        init: Init,
    ) -> Var {
        if let Some(v) = bound.vars.get(name) {
            return *v;
        }
        let value = self.get_or_init(name, shape, init).clone();
        let v = tape.param(value);
        bound.vars.insert(name.to_string(), v);
        v
    }
}

/// Name → [`Var`] map for one tape pass.
#[derive(Default)]
pub struct Bound {
    vars: IndexMap<String, Var>,
}

impl Bound {
    pub fn new() -> Self {
        Bound::default()
    }

    pub(crate) fn insert(&mut self, name: String, v: Var) {
        self.vars.insert(name, v);
    }

    pub fn var(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Collects per-parameter gradients in registration order. Parameters the
    /// loss never touched are omitted.
    pub fn grads(&self, grads: &Grads) -> IndexMap<String, ArrayD<f64>> {
        let mut out = IndexMap::new();
        for (name, var) in self.iter() {
            if let Some(g) = grads.get(var) {
                out.insert(name.to_string(), g.clone());
            }
        }
        out
    }
}

/// Everything one model forward pass needs: the tape being recorded, the
/// parameter store, and the name→Var binding. With `frozen` set, parameters
/// enter the tape as constants, which turns the same forward code into a
/// no-gradient inference path.
pub struct Ctx<'a> {
    pub tape: &'a mut Tape,
    pub store: &'a mut ParamStore,
    pub bound: &'a mut Bound,
    pub frozen: bool,
}

impl<'a> Ctx<'a> {
    pub fn new(tape: &'a mut Tape, store: &'a mut ParamStore, bound: &'a mut Bound) -> Self {
        Ctx { tape, store, bound, frozen: false }
    }

    pub fn frozen(tape: &'a mut Tape, store: &'a mut ParamStore, bound: &'a mut Bound) -> Self {
        Ctx { tape, store, bound, frozen: true }
    }

    /// Parameter leaf for this pass; repeated names share one Var.
    pub fn p(&mut self, name: &str, shape: &[usize], init: Init) -> Var {
        if let Some(v) = self.bound.var(name) {
            return v;
        }
        let value = self.store.get_or_init(name, shape, init).clone();
        let v = if self.frozen { self.tape.constant(value) } else { self.tape.param(value) };
        self.bound.insert(name.to_string(), v);
        v
    }
}

fn materialize(seed: u64, name: &str, shape: &[usize], init: Init) -> ArrayD<f64> {
    let n: usize = shape.iter().product();
    let values: Vec<f64> = match init {
        Init::Zeros => vec![0.0; n],
        Init::Ones => vec![1.0; n],
        Init::Value(c) => vec![c; n],
        Init::Uniform { lo, hi } => {
            let mut r = rng::stream(seed, name);
            (0..n).map(|_| r.random_range(lo..hi)).collect()
        }
        Init::ScaledUniform { fan_in } => {
            assert!(fan_in > 0, "fan_in must be positive for {name}");
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut r = rng::stream(seed, name);
            (0..n).map(|_| r.random_range(-bound..bound)).collect()
        }
    };
    ArrayD::from_shape_vec(IxDyn(shape), values).unwrap()
}

/// Adam with bias correction. All state is public so training checkpoints can
/// round-trip it exactly.
#[derive(Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: IndexMap<String, ArrayD<f64>>,
    pub v: IndexMap<String, ArrayD<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: IndexMap::new(),
            v: IndexMap::new(),
        }
    }

    /// One update over every gradient entry, in the given order.
    pub fn step(&mut self, store: &mut ParamStore, grads: &IndexMap<String, ArrayD<f64>>) {
        self.t += 1;
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        for (name, g) in grads {
            let m = self.m.entry(name.clone()).or_insert_with(|| ArrayD::zeros(g.raw_dim()));
            let v = self.v.entry(name.clone()).or_insert_with(|| ArrayD::zeros(g.raw_dim()));
            m.zip_mut_with(g, |mj, &gj| *mj = b1 * *mj + (1.0 - b1) * gj);
            v.zip_mut_with(g, |vj, &gj| *vj = b2 * *vj + (1.0 - b2) * gj * gj);
            let mut next = store.get(name).expect("gradient for unknown parameter").clone();
            ndarray::Zip::from(&mut next).and(&*m).and(&*v).for_each(|p, &mj, &vj| {
                *p -= lr * (mj / bc1) / ((vj / bc2).sqrt() + eps);
            });
            store.set(name, next);
        }
    }
}

/// Worst finite-difference disagreement over a set of probed elements.
pub struct FdReport {
    pub checked: usize,
    pub max_rel: f64,
    pub worst: String,
}

/// Central-difference check of `analytic` gradients: perturbs each probed
/// element of the store, re-evaluates `loss`, and compares. `probes` holds
/// `(parameter name, flat element index)` pairs.
pub fn fd_probe(
    store: &mut ParamStore,
    analytic: &IndexMap<String, ArrayD<f64>>,
    probes: &[(String, usize)],
    mut loss: impl FnMut(&mut ParamStore) -> f64,
) -> FdReport {
    let mut report = FdReport { checked: 0, max_rel: 0.0, worst: String::new() };
    for (name, idx) in probes {
        let base = store.get(name).unwrap_or_else(|| panic!("no parameter named {name}"));
        let orig = base.as_slice().expect("standard layout")[*idx];
        let h = 1e-6 * orig.abs().max(1.0);

        let mut perturbed = |value: f64, store: &mut ParamStore| -> f64 {
            let mut t = store.get(name).unwrap().clone();
            t.as_slice_mut().unwrap()[*idx] = value;
            store.set(name, t);
            let out = loss(store);
            let mut t = store.get(name).unwrap().clone();
            t.as_slice_mut().unwrap()[*idx] = orig;
            store.set(name, t);
            out
        };
        let fp = perturbed(orig + h, store);
        let fm = perturbed(orig - h, store);
        let numeric = (fp - fm) / (2.0 * h);
        let a = analytic
            .get(name)
            .map(|g| g.as_slice().expect("standard layout")[*idx])
            .unwrap_or(0.0);
        let rel = crate::tape::grad_rel_err(a, numeric, 1e-7);
        report.checked += 1;
        if rel > report.max_rel {
            report.max_rel = rel;
            report.worst = format!("{name}[{idx}]: analytic {a} vs numeric {numeric}");
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_order_independent() {
        let mut a = ParamStore::new(7);
        a.get_or_init("w1", &[4], Init::ScaledUniform { fan_in: 4 });
        a.get_or_init("w2", &[4], Init::ScaledUniform { fan_in: 4 });
        let mut b = ParamStore::new(7);
        b.get_or_init("w2", &[4], Init::ScaledUniform { fan_in: 4 });
        b.get_or_init("w1", &[4], Init::ScaledUniform { fan_in: 4 });
        assert_eq!(a.get("w1").unwrap(), b.get("w1").unwrap(), "init depends on name, not order");
        assert_eq!(a.get("w2").unwrap(), b.get("w2").unwrap());
        assert_ne!(a.get("w1").unwrap(), a.get("w2").unwrap(), "distinct names decorrelate");
    }

    #[test]
    fn shared_name_is_one_tape_leaf() {
        let mut store = ParamStore::new(1);
        let mut tape = Tape::new();
        let mut bound = Bound::new();
        let v1 = store.var(&mut tape, &mut bound, "shared.w", &[2], Init::Ones);
        let v2 = store.var(&mut tape, &mut bound, "shared.w", &[2], Init::Ones);
        assert_eq!(v1.0, v2.0, "same name binds to the same Var");
        let prod = tape.mul(v1, v2);
        let loss = tape.sum_all(prod);
        let g = tape.backward(loss);
        let got = bound.grads(&g);
        assert_eq!(
            got["shared.w"].as_slice().unwrap(),
            &[2.0, 2.0],
            "both use sites accumulate into one gradient"
        );
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // With bias correction the first step is exactly lr * sign(g).
        let mut store = ParamStore::new(0);
        store.get_or_init("p", &[3], Init::Value(1.0));
        let mut opt = Adam::new(0.01);
        let mut grads = IndexMap::new();
        grads.insert(
            "p".to_string(),
            ArrayD::from_shape_vec(IxDyn(&[3]), vec![0.5, -2.0, 0.0]).unwrap(),
        );
        opt.step(&mut store, &grads);
        let p = store.get("p").unwrap().as_slice().unwrap().to_vec();
        assert!((p[0] - (1.0 - 0.01)).abs() < 1e-9, "positive grad steps down by ~lr");
        assert!((p[1] - (1.0 + 0.01)).abs() < 1e-9, "negative grad steps up by ~lr");
        assert!((p[2] - 1.0).abs() < 1e-12, "zero grad leaves the value");
    }

    #[test]
    fn fd_probe_agrees_on_quadratic() {
        let mut store = ParamStore::new(3);
        store.get_or_init("q", &[2], Init::Value(1.5));
        let mut analytic = IndexMap::new();
        analytic.insert(
            "q".to_string(),
            ArrayD::from_shape_vec(IxDyn(&[2]), vec![3.0, 3.0]).unwrap(),
        );
        let probes = vec![("q".to_string(), 0), ("q".to_string(), 1)];
        let report = fd_probe(&mut store, &analytic, &probes, |s| {
            s.get("q").unwrap().iter().map(|x| x * x).sum::<f64>()
        });
        assert_eq!(report.checked, 2);
        assert!(report.max_rel < 1e-8, "quadratic loss: {}", report.worst);
    }
}
