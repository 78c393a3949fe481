use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::flow::{FlowSpec, Modality};
use crate::net::{LayerGroup, ParamBinder, ParameterStore};
use crate::numerics::{Graph, Tensor};

/// Accumulated gradients, one tensor per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientStore {
    grads: IndexMap<String, Tensor>,
}

impl GradientStore {
    pub fn zeros_like(store: &ParameterStore) -> Self {
        Self { grads: store.iter().map(|(n, p)| (n.to_string(), Tensor::zeros(p.value.shape()))).collect() }
    }

    /// Adds the gradients of every parameter bound in `binder` after `g.backward`.
    pub fn accumulate(&mut self, g: &Graph, binder: &ParamBinder<'_>) -> Result<()> {
        for name in binder.bound_names() {
            let v = binder.var(name).expect("bound name has a var");
            let grad = g.grad(v);
            let slot = self
                .grads
                .get_mut(name)
                .ok_or_else(|| Error::arg(format!("gradient for unknown parameter '{name}'")))?;
            slot.data_mut().iter_mut().zip(grad.data()).for_each(|(a, b)| *a += b);
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.grads.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn reset(&mut self) {
        for g in self.grads.values_mut() {
            g.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads.values().all(Tensor::is_finite)
    }

    /// Largest absolute difference against another store with the same names.
    pub fn max_abs_diff(&self, other: &GradientStore) -> Result<f64> {
        let mut worst = 0.0f64;
        for (name, g) in &self.grads {
            let o = other.grads.get(name).ok_or_else(|| Error::arg(format!("'{name}' missing")))?;
            worst = worst.max(g.max_abs_diff(o)?);
        }
        Ok(worst)
    }

    /// Whether any entry of a group's gradients is non-zero.
    pub fn group_touched(&self, store: &ParameterStore, group: LayerGroup) -> bool {
        self.grads.iter().any(|(n, g)| store.group(n) == Some(group) && g.data().iter().any(|&x| x != 0.0))
    }
}

/// Per-group multipliers applied to gradients before the optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct GradScaleConfig {
    scales: IndexMap<LayerGroup, f64>,
}

impl GradScaleConfig {
    pub fn new(pairs: impl IntoIterator<Item = (LayerGroup, f64)>) -> Result<Self> {
        let mut scales = IndexMap::new();
        for (g, s) in pairs {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::Config(format!("gradient scale for {g} must be > 0, got {s}")));
            }
            scales.insert(g, s);
        }
        scales.sort_keys();
        Ok(Self { scales })
    }

    pub fn uniform(groups: &[LayerGroup], value: f64) -> Result<Self> {
        Self::new(groups.iter().map(|&g| (g, value)))
    }

    /// Single-flow row of the reference scale table (image variation).
    pub fn one_flow() -> Self {
        use Modality::*;
        Self::new([(LayerGroup::Global, 0.1), (LayerGroup::Data(Image), 0.1), (LayerGroup::Ctx(Image), 1.0)])
            .expect("valid")
    }

    /// Dual-flow row (image variation + text-to-image).
    pub fn two_flow() -> Self {
        use Modality::*;
        Self::new([
            (LayerGroup::Global, 0.1),
            (LayerGroup::Data(Image), 0.1),
            (LayerGroup::Ctx(Image), 1.0),
            (LayerGroup::Ctx(Text), 1.0),
        ])
        .expect("valid")
    }

    /// Four-flow row.
    pub fn four_flow() -> Self {
        use Modality::*;
        Self::new([
            (LayerGroup::Global, 0.1),
            (LayerGroup::Data(Image), 0.2),
            (LayerGroup::Data(Text), 1.0),
            (LayerGroup::Ctx(Image), 1.0),
            (LayerGroup::Ctx(Text), 1.0),
        ])
        .expect("valid")
    }

    /// Default scales for a flow set: the table row for its size, restricted
    /// to the groups the flows use. Single- and dual-flow rows apply their
    /// data/context entries to whichever modality is in use; three flows take
    /// the four-flow values.
    pub fn preset(flows: &[FlowSpec]) -> Self {
        let four = Self::four_flow();
        let mut groups = vec![LayerGroup::Global];
        for f in flows {
            for g in [LayerGroup::Data(f.output), LayerGroup::Ctx(f.context)] {
                if !groups.contains(&g) {
                    groups.push(g);
                }
            }
        }
        let pick = |g: LayerGroup| match (flows.len(), g) {
            (1 | 2, LayerGroup::Data(_)) => 0.1,
            (1 | 2, LayerGroup::Ctx(_)) => 1.0,
            _ => four.get(g).expect("four-flow row covers every group"),
        };
        Self::new(groups.into_iter().map(|g| (g, pick(g)))).expect("valid")
    }

    pub fn get(&self, g: LayerGroup) -> Option<f64> {
        self.scales.get(&g).copied()
    }

    pub fn set(&mut self, g: LayerGroup, value: f64) -> Result<()> {
        if !(value.is_finite() && value > 0.0) {
            return Err(Error::Config(format!("gradient scale for {g} must be > 0, got {value}")));
        }
        self.scales.insert(g, value);
        self.scales.sort_keys();
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (LayerGroup, f64)> + '_ {
        self.scales.iter().map(|(&g, &s)| (g, s))
    }
}

/// `grad ← g · grad` per parameter group.
pub fn apply_grad_scales(grads: &mut GradientStore, scales: &GradScaleConfig, store: &ParameterStore) -> Result<()> {
    for (name, grad) in grads.grads.iter_mut() {
        let group = store.group(name).ok_or_else(|| Error::arg(format!("unknown parameter '{name}'")))?;
        let s = scales.get(group).ok_or_else(|| Error::Config(format!("no gradient scale for group {group}")))?;
        if s != 1.0 {
            grad.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_rows() {
        let four = GradScaleConfig::four_flow();
        assert_eq!(four.get(LayerGroup::Data(Modality::Image)), Some(0.2));
        assert_eq!(four.get(LayerGroup::Data(Modality::Text)), Some(1.0));
        assert_eq!(four.get(LayerGroup::Global), Some(0.1));
        assert_eq!(four.iter().count(), 5);
        let one = GradScaleConfig::one_flow();
        assert_eq!(one.get(LayerGroup::Data(Modality::Image)), Some(0.1));
        assert_eq!(one.get(LayerGroup::Ctx(Modality::Image)), Some(1.0));
        assert_eq!(one.iter().count(), 3);
    }

    #[test]
    fn presets_follow_flow_sets() {
        assert_eq!(GradScaleConfig::preset(&[FlowSpec::IV]), GradScaleConfig::one_flow());
        assert_eq!(GradScaleConfig::preset(&[FlowSpec::IV, FlowSpec::T2I]), GradScaleConfig::two_flow());
        assert_eq!(GradScaleConfig::preset(&FlowSpec::ALL), GradScaleConfig::four_flow());
        let alt = GradScaleConfig::preset(&[FlowSpec::T2I]);
        assert_eq!(alt.get(LayerGroup::Ctx(Modality::Text)), Some(1.0));
        assert_eq!(alt.get(LayerGroup::Data(Modality::Image)), Some(0.1));
        assert!(alt.get(LayerGroup::Ctx(Modality::Image)).is_none());
    }

    #[test]
    fn scaling_is_exact_and_requires_every_group() {
        let mut store = ParameterStore::new();
        store.insert("a", Tensor::zeros(&[2]), LayerGroup::Global).unwrap();
        store.insert("b", Tensor::zeros(&[2]), LayerGroup::Data(Modality::Text)).unwrap();
        let mut grads = GradientStore::zeros_like(&store);
        grads.get_mut("a").unwrap().data_mut().copy_from_slice(&[1.5, -3.0]);
        grads.get_mut("b").unwrap().data_mut().copy_from_slice(&[0.25, 7.0]);
        let scales =
            GradScaleConfig::new([(LayerGroup::Global, 0.1), (LayerGroup::Data(Modality::Text), 1.0)]).unwrap();
        apply_grad_scales(&mut grads, &scales, &store).unwrap();
        assert_eq!(grads.get("a").unwrap().data(), &[1.5 * 0.1, -3.0 * 0.1]);
        assert_eq!(grads.get("b").unwrap().data(), &[0.25, 7.0]);

        let partial = GradScaleConfig::new([(LayerGroup::Global, 0.1)]).unwrap();
        assert!(apply_grad_scales(&mut grads, &partial, &store).is_err());
        assert!(GradScaleConfig::new([(LayerGroup::Global, 0.0)]).is_err());
    }
}
