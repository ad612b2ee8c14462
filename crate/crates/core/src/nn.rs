//! Named parameter storage and the small layer vocabulary the models share.

use std::collections::HashMap;
use std::ops::{Deref, DerefMut};

use indexmap::IndexMap;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::diff::{DiffError, Gradients, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Insertion-ordered map of named parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.params.contains_key(&name), "duplicate parameter {name}");
        let (idx, _) = self.params.insert_full(name, value);
        ParamId(idx)
    }

    /// Uniform Glorot initialisation scaled by `gain`.
    pub fn register_glorot(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        gain: f64,
        rng: &mut ChaCha8Rng,
    ) -> ParamId {
        let bound = gain * (6.0 / (rows + cols) as f64).sqrt();
        let t = Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-bound..bound));
        self.register(name, t)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        self.params.get_index(id.0).map(|(k, _)| k.as_str()).expect("id")
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.params.get_index_of(name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.params
            .iter()
            .enumerate()
            .map(|(i, (k, v))| (ParamId(i), k.as_str(), v))
    }

    pub fn ids_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        self.iter()
            .filter(|(_, n, _)| n.starts_with(prefix))
            .map(|(id, _, _)| id)
            .collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }
}

/// Which parameters receive gradients during a forward pass.
#[derive(Clone, Debug, Default)]
pub enum Trainable {
    #[default]
    All,
    Nothing,
    /// Everything except names starting with one of these prefixes.
    AllExcept(Vec<String>),
}

impl Trainable {
    fn allows(&self, name: &str) -> bool {
        match self {
            Trainable::All => true,
            Trainable::Nothing => false,
            Trainable::AllExcept(prefixes) => !prefixes.iter().any(|p| name.starts_with(p.as_str())),
        }
    }
}

/// A tape plus lazily bound parameters.
pub struct Session<'a> {
    tape: Tape,
    store: &'a ParamStore,
    bound: HashMap<ParamId, Var>,
    trainable: Trainable,
}

impl<'a> Session<'a> {
    pub fn new(store: &'a ParamStore, trainable: Trainable) -> Self {
        Self {
            tape: Tape::new(),
            store,
            bound: HashMap::new(),
            trainable,
        }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    /// Node for a parameter, created on first use.
    pub fn p(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound.get(&id) {
            return *v;
        }
        let value = self.store.get(id).clone();
        let v = if self.trainable.allows(self.store.name(id)) {
            self.tape.leaf(value)
        } else {
            self.tape.constant(value)
        };
        self.bound.insert(id, v);
        v
    }

    /// Gradients of bound trainable parameters, ordered by id.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<(ParamId, Tensor)> {
        let mut out: Vec<(ParamId, Tensor)> = self
            .bound
            .iter()
            .filter_map(|(id, v)| grads.get(*v).map(|g| (*id, g.clone())))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }

    pub fn into_tape(self) -> Tape {
        self.tape
    }
}

impl Deref for Session<'_> {
    type Target = Tape;
    fn deref(&self) -> &Tape {
        &self.tape
    }
}

impl DerefMut for Session<'_> {
    fn deref_mut(&mut self) -> &mut Tape {
        &mut self.tape
    }
}

/// Affine layer `x W + b` on row vectors.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, inp: usize, out: usize, rng: &mut ChaCha8Rng) -> Self {
        Self::with_gain(store, name, inp, out, 1.0, rng)
    }

    pub fn with_gain(
        store: &mut ParamStore,
        name: &str,
        inp: usize,
        out: usize,
        gain: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w = store.register_glorot(format!("{name}.w"), inp, out, gain, rng);
        let b = store.register(format!("{name}.b"), Tensor::zeros(1, out));
        Self { w, b }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var, DiffError> {
        let w = s.p(self.w);
        let b = s.p(self.b);
        let xw = s.matmul(x, w)?;
        s.add(xw, b)
    }
}

/// Two-layer perceptron with a tanh hidden activation.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub l1: Linear,
    pub l2: Linear,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        inp: usize,
        hidden: usize,
        out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            l1: Linear::new(store, &format!("{name}.l1"), inp, hidden, rng),
            l2: Linear::new(store, &format!("{name}.l2"), hidden, out, rng),
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var, DiffError> {
        let h = self.l1.forward(s, x)?;
        let h = s.tanh(h);
        self.l2.forward(s, h)
    }
}

/// Central-difference check of parameter gradients through a whole forward
/// pass. Probes up to `coords_per_param` coordinates of each listed tensor and
/// returns the worst `|analytic - numeric| / max(1, |numeric|)`.
pub fn grad_check_params<F>(
    store: &ParamStore,
    ids: &[ParamId],
    coords_per_param: usize,
    eps: f64,
    forward: F,
) -> Result<f64, crate::Error>
where
    F: Fn(&mut Session) -> Result<Var, crate::Error>,
{
    let mut s = Session::new(store, Trainable::All);
    let out = forward(&mut s)?;
    let grads = s.backward(out);
    let analytic: HashMap<ParamId, Tensor> = s.param_grads(&grads).into_iter().collect();

    let mut probe = store.clone();
    let eval = |st: &ParamStore| -> Result<f64, crate::Error> {
        let mut s = Session::new(st, Trainable::Nothing);
        let out = forward(&mut s)?;
        let v = s.value(out).item();
        if !v.is_finite() {
            return Err(DiffError::NonFiniteValue(format!("loss = {v}")).into());
        }
        Ok(v)
    };
    let mut worst: f64 = 0.0;
    for &id in ids {
        let n = store.get(id).len();
        let m = coords_per_param.min(n).max(1);
        for k in 0..m {
            let c = k * n / m;
            let base = store.get(id).data()[c];
            probe.get_mut(id).data_mut()[c] = base + eps;
            let fp = eval(&probe)?;
            probe.get_mut(id).data_mut()[c] = base - eps;
            let fm = eval(&probe)?;
            probe.get_mut(id).data_mut()[c] = base;
            let numeric = (fp - fm) / (2.0 * eps);
            let a = analytic.get(&id).map_or(0.0, |g| g.data()[c]);
            worst = worst.max((a - numeric).abs() / numeric.abs().max(1.0));
        }
    }
    Ok(worst)
}
