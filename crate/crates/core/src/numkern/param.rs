use std::collections::HashMap;

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// A named tensor together with its gradient and AdamW moments.
#[derive(Clone, Debug)]
pub struct Param<T: Real = f32> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub learnable: bool,
    m: Tensor<T>,
    v: Tensor<T>,
    steps: u64,
}

impl<T: Real> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let dims = value.dims().to_vec();
        Self {
            name: name.into(),
            grad: Tensor::zeros(&dims),
            m: Tensor::zeros(&dims),
            v: Tensor::zeros(&dims),
            value,
            learnable: true,
            steps: 0,
        }
    }

    pub fn frozen(mut self) -> Self {
        self.learnable = false;
        self
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }
}

/// Index of a parameter inside its [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Ordered, name-addressable parameter collection.
#[derive(Clone, Debug, Default)]
pub struct ParamSet<T: Real = f32> {
    params: Vec<Param<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self { params: Vec::new(), by_name: HashMap::new() }
    }

    pub fn push(&mut self, p: Param<T>) -> ParamId {
        assert!(!self.by_name.contains_key(&p.name), "duplicate parameter {}", p.name);
        let id = self.params.len();
        self.by_name.insert(p.name.clone(), id);
        self.params.push(p);
        ParamId(id)
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.push(Param::new(name, value))
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Param::zero_grad);
    }

    /// Same names and layout, values converted to another precision.
    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        let mut out = ParamSet::new();
        for p in &self.params {
            let mut q = Param::new(p.name.clone(), p.value.cast());
            q.learnable = p.learnable;
            out.push(q);
        }
        out
    }

    /// Replace values from `(name, tensor)` pairs; every parameter must be provided.
    pub fn load_values(&mut self, tensors: &[(String, Tensor<T>)]) -> Result<()> {
        let mut seen = vec![false; self.params.len()];
        for (name, t) in tensors {
            let Some(&i) = self.by_name.get(name) else {
                continue;
            };
            if self.params[i].value.dims() != t.dims() {
                return Err(Error::Checkpoint(format!(
                    "{name}: expected dims {:?}, found {:?}",
                    self.params[i].value.dims(),
                    t.dims()
                )));
            }
            self.params[i].value = t.clone();
            seen[i] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Checkpoint(format!("missing tensor {}", self.params[i].name)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-7 }
    }
}

/// One AdamW update with decoupled weight decay over every learnable param.
pub fn adamw_step<T: Real>(params: &mut ParamSet<T>, opt: &AdamW) {
    let (b1, b2) = (T::of(opt.beta1), T::of(opt.beta2));
    let (lr, eps, wd) = (T::of(opt.lr), T::of(opt.eps), T::of(opt.weight_decay));
    let one = T::one();
    for p in params.iter_mut().filter(|p| p.learnable) {
        p.steps += 1;
        let t = p.steps as i32;
        let c1 = one - T::of(opt.beta1.powi(t));
        let c2 = one - T::of(opt.beta2.powi(t));
        let n = p.value.len();
        let (value, grad, m, v) = (p.value.data_mut(), p.grad.data(), p.m.data_mut(), p.v.data_mut());
        for i in 0..n {
            let g = grad[i];
            m[i] = b1 * m[i] + (one - b1) * g;
            v[i] = b2 * v[i] + (one - b2) * g * g;
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            value[i] -= lr * (mhat / (vhat.sqrt() + eps) + wd * value[i]);
        }
    }
}
