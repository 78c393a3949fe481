use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use rand::Rng;

use crate::error::{Error, Result};
use crate::flow::Modality;
use crate::numerics::{Graph, Tensor, Var};

/// Which part of the diffuser a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LayerGroup {
    Global,
    Data(Modality),
    Ctx(Modality),
}

impl LayerGroup {
    pub const ALL: [LayerGroup; 5] = [
        LayerGroup::Global,
        LayerGroup::Data(Modality::Image),
        LayerGroup::Data(Modality::Text),
        LayerGroup::Ctx(Modality::Image),
        LayerGroup::Ctx(Modality::Text),
    ];

    /// Stable tag used in checkpoints.
    pub fn tag(self) -> u8 {
        match self {
            LayerGroup::Global => 0,
            LayerGroup::Data(Modality::Image) => 1,
            LayerGroup::Data(Modality::Text) => 2,
            LayerGroup::Ctx(Modality::Image) => 3,
            LayerGroup::Ctx(Modality::Text) => 4,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(tag as usize).copied()
    }

    pub fn key(self) -> &'static str {
        match self {
            LayerGroup::Global => "global",
            LayerGroup::Data(Modality::Image) => "data_image",
            LayerGroup::Data(Modality::Text) => "data_text",
            LayerGroup::Ctx(Modality::Image) => "ctx_image",
            LayerGroup::Ctx(Modality::Text) => "ctx_text",
        }
    }
}

impl fmt::Display for LayerGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for LayerGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|g| g.key() == s).ok_or_else(|| Error::arg(format!("unknown layer group '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub group: LayerGroup,
}

/// Named parameters in insertion order, each tagged with its group.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    params: IndexMap<String, Param>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, group: LayerGroup) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::arg(format!("duplicate parameter '{name}'")));
        }
        self.params.insert(name, Param { value, group });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        self.params.get(name).map(|p| &p.value).ok_or_else(|| Error::arg(format!("no parameter '{name}'")))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params.get_mut(name).map(|p| &mut p.value).ok_or_else(|| Error::arg(format!("no parameter '{name}'")))
    }

    pub fn group(&self, name: &str) -> Option<LayerGroup> {
        self.params.get(name).map(|p| p.group)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn has_group(&self, group: LayerGroup) -> bool {
        self.params.values().any(|p| p.group == group)
    }

    /// Scalar count of all parameters.
    pub fn total(&self) -> usize {
        self.params.values().map(|p| p.value.numel()).sum()
    }

    /// Scalar count per group, in [`LayerGroup::ALL`] order (absent groups count 0).
    pub fn group_counts(&self) -> IndexMap<LayerGroup, usize> {
        let mut out: IndexMap<LayerGroup, usize> = LayerGroup::ALL.iter().map(|&g| (g, 0)).collect();
        for p in self.params.values() {
            out[&p.group] += p.value.numel();
        }
        out
    }

    /// Adds Gaussian noise of the given size to every entry.
    pub fn perturb<R: Rng + ?Sized>(&mut self, std: f64, rng: &mut R) {
        for p in self.params.values_mut() {
            let noise = Tensor::randn(p.value.shape(), rng);
            p.value = p.value.lincomb(1.0, &noise, std).expect("same shape");
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.values().all(|p| p.value.is_finite())
    }

    /// Whether both stores hold the same names, groups and bit patterns.
    pub fn bit_eq(&self, other: &ParameterStore) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|((na, a), (nb, b))| na == nb && a.group == b.group && a.value.bit_eq(&b.value))
    }
}

/// Source of parameter variables for the layer functions.
pub trait ParamSource {
    fn param(&mut self, g: &mut Graph, name: &str) -> Result<Var>;
}

/// Binds store entries into a graph on first use, so parameters a forward
/// pass never touches never become graph nodes.
pub struct ParamBinder<'a> {
    store: &'a ParameterStore,
    bound: HashMap<String, Var>,
    order: Vec<String>,
    differentiable: bool,
}

impl<'a> ParamBinder<'a> {
    pub fn new(store: &'a ParameterStore) -> Self {
        Self { store, bound: HashMap::new(), order: Vec::new(), differentiable: true }
    }

    /// Binds parameters as constants; for inference-only graphs.
    pub fn frozen(store: &'a ParameterStore) -> Self {
        Self { differentiable: false, ..Self::new(store) }
    }

    pub fn store(&self) -> &'a ParameterStore {
        self.store
    }

    /// Names bound so far, in first-use order.
    pub fn bound_names(&self) -> &[String] {
        &self.order
    }

    pub fn var(&self, name: &str) -> Option<Var> {
        self.bound.get(name).copied()
    }
}

impl ParamSource for ParamBinder<'_> {
    fn param(&mut self, g: &mut Graph, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let value = self.store.value(name)?.clone();
        let v = if self.differentiable { g.leaf(value) } else { g.constant(value) };
        self.bound.insert(name.to_string(), v);
        self.order.push(name.to_string());
        Ok(v)
    }
}

/// Name → variable map, for driving layer functions with hand-made leaves.
#[derive(Debug, Default, Clone)]
pub struct VarMap(pub HashMap<String, Var>);

impl ParamSource for VarMap {
    fn param(&mut self, _g: &mut Graph, name: &str) -> Result<Var> {
        self.0.get(name).copied().ok_or_else(|| Error::arg(format!("no variable bound for '{name}'")))
    }
}
