use ndarray::Array2;
use rand::Rng;

use super::rng::RngState;
use super::tape::Mat;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Mat,
}

/// Named, ordered collection of trainable matrices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter name {name}"
        );
        self.params.push(Param { name, value });
        ParamId(self.params.len() - 1)
    }

    /// Weight matrix drawn from uniform(−1/√fan_in, 1/√fan_in).
    pub fn add_weight(&mut self, name: impl Into<String>, rows: usize, cols: usize, fan_in: usize, rng: &mut RngState) -> ParamId {
        let bound = 1.0 / (fan_in as f64).sqrt();
        self.add(name, uniform(rows, cols, bound, rng))
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(name, Array2::zeros((rows, cols)))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Mat {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.iter().all(|v| v.is_finite()))
    }

    /// Sets every parameter to zero.
    pub fn zero_all(&mut self) {
        for p in &mut self.params {
            p.value.fill(0.0);
        }
    }
}

pub fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut RngState) -> Mat {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..bound))
}

/// Per-parameter gradient accumulators, aligned with a [`ParamSet`].
#[derive(Clone, Debug, Default)]
pub struct Grads {
    slots: Vec<Option<Mat>>,
}

impl Grads {
    pub(crate) fn zeros_like_none(n: usize) -> Self {
        Grads { slots: vec![None; n] }
    }

    pub fn get(&self, id: ParamId) -> Option<&Mat> {
        self.slots.get(id.0).and_then(Option::as_ref)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn accumulate(&mut self, id: ParamId, g: Mat) {
        match &mut self.slots[id.0] {
            Some(existing) => *existing += &g,
            slot @ None => *slot = Some(if g.is_standard_layout() { g } else { g.as_standard_layout().into_owned() }),
        }
    }

    /// Adds `other` into `self`, slot by slot.
    pub fn merge(&mut self, other: Grads) {
        if self.slots.is_empty() {
            *self = other;
            return;
        }
        assert_eq!(self.slots.len(), other.slots.len(), "gradient sets differ in length");
        for (i, g) in other.slots.into_iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g);
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.slots.iter().flatten().all(|m| m.iter().all(|v| v.is_finite()))
    }
}
