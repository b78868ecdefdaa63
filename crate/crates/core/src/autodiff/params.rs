use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Index of a parameter in its store's registration order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named trainable tensors in registration order.
///
/// Registration order is the canonical order used when flattening
/// gradients and when serializing checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<F> {
    names: Vec<String>,
    tensors: Vec<Tensor<F>>,
}

impl<F: Scalar> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore { names: Vec::new(), tensors: Vec::new() }
    }

    pub fn register(&mut self, name: impl Into<String>, tensor: Tensor<F>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<F>)> {
        self.names.iter().zip(&self.tensors).enumerate().map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn tensors(&self) -> &[Tensor<F>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<F>] {
        &mut self.tensors
    }

    /// Total scalar count over all parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Identifier of the canonical ordering: a digest of names and shapes.
    pub fn layout_id(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.names.iter().zip(&self.tensors) {
            h.update(name.as_bytes());
            h.update([0u8]);
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            h.update([0xffu8]);
        }
        crate::short_hex(&h.finalize())
    }

    /// All parameter values concatenated in canonical order.
    pub fn flatten_values(&self) -> Vec<F> {
        let mut out = Vec::with_capacity(self.num_scalars());
        for t in &self.tensors {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Overwrites all values from a flat slice in canonical order.
    pub fn load_flat(&mut self, values: &[F]) -> Result<()> {
        if values.len() != self.num_scalars() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter values, found {}",
                self.num_scalars(),
                values.len()
            )));
        }
        let mut offset = 0;
        for t in &mut self.tensors {
            let n = t.len();
            t.data_mut().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn cast<G: Scalar>(&self) -> ParamStore<G> {
        ParamStore { names: self.names.clone(), tensors: self.tensors.iter().map(Tensor::cast).collect() }
    }
}

/// Per-parameter gradients for one store, `None` where no gradient was
/// produced.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<F> {
    pub(crate) layout_id: String,
    pub(crate) grads: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn empty_for(store: &ParamStore<F>) -> Self {
        Gradients { layout_id: store.layout_id(), grads: vec![None; store.len()] }
    }

    pub fn zeros_for(store: &ParamStore<F>) -> Self {
        Gradients {
            layout_id: store.layout_id(),
            grads: store.tensors().iter().map(|t| Some(Tensor::zeros(t.shape()))).collect(),
        }
    }

    pub fn layout_id(&self) -> &str {
        &self.layout_id
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<F>> {
        self.grads[id.0].as_ref()
    }

    pub fn set(&mut self, id: ParamId, grad: Tensor<F>) {
        self.grads[id.0] = Some(grad);
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Global L2 norm over present gradients.
    pub fn global_norm(&self) -> f64 {
        self.grads.iter().flatten().map(Tensor::sum_sq).sum::<f64>().sqrt()
    }

    /// Rescales so the global norm is at most `max_norm`; returns the norm
    /// before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm.is_finite() {
            let s = max_norm / norm;
            for t in self.grads.iter_mut().flatten() {
                for v in t.data_mut() {
                    *v = F::from_acc(v.to_acc() * s);
                }
            }
        }
        norm
    }

    pub fn is_all_zero(&self) -> bool {
        self.grads.iter().flatten().all(|t| t.data().iter().all(|v| v.is_zero()))
    }

    pub fn scale(&mut self, c: f64) {
        for t in self.grads.iter_mut().flatten() {
            for v in t.data_mut() {
                *v = F::from_acc(v.to_acc() * c);
            }
        }
    }

    /// Concatenates every parameter gradient in canonical order.
    pub fn flatten(&self, store: &ParamStore<F>) -> Result<GradientVector<F>> {
        let layout = store.layout_id();
        if layout != self.layout_id {
            return Err(Error::LayoutMismatch { expected: layout, found: self.layout_id.clone() });
        }
        let mut values = Vec::with_capacity(store.num_scalars());
        for (i, g) in self.grads.iter().enumerate() {
            match g {
                Some(t) => values.extend_from_slice(t.data()),
                None => return Err(Error::IncompleteGradient(store.name(ParamId(i)).to_string())),
            }
        }
        Ok(GradientVector { values, layout_id: layout })
    }

    /// Inverse of [`Gradients::flatten`].
    pub fn unflatten(vector: &GradientVector<F>, store: &ParamStore<F>) -> Result<Self> {
        let layout = store.layout_id();
        if layout != vector.layout_id {
            return Err(Error::LayoutMismatch { expected: layout, found: vector.layout_id.clone() });
        }
        if vector.values.len() != store.num_scalars() {
            return Err(Error::dim(
                "unflatten",
                format!("{} values for {} parameters", vector.values.len(), store.num_scalars()),
            ));
        }
        let mut offset = 0;
        let grads = store
            .tensors()
            .iter()
            .map(|t| {
                let n = t.len();
                let g = Tensor::from_parts(t.shape().to_vec(), vector.values[offset..offset + n].to_vec());
                offset += n;
                Some(g)
            })
            .collect();
        Ok(Gradients { layout_id: layout, grads })
    }
}

/// A flattened gradient: every parameter's gradient, in registration order,
/// each row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientVector<F> {
    pub(crate) values: Vec<F>,
    pub(crate) layout_id: String,
}

impl<F: Scalar> GradientVector<F> {
    pub fn new(values: Vec<F>, layout_id: impl Into<String>) -> Self {
        GradientVector { values, layout_id: layout_id.into() }
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn layout_id(&self) -> &str {
        &self.layout_id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v.to_acc() * v.to_acc()).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, c: f64) -> Self {
        GradientVector {
            values: self.values.iter().map(|v| F::from_acc(v.to_acc() * c)).collect(),
            layout_id: self.layout_id.clone(),
        }
    }

    /// Elementwise mean of equally-laid-out vectors (f64 accumulation).
    pub fn mean(vectors: &[GradientVector<F>]) -> Result<Self> {
        let first = vectors.first().ok_or(Error::EmptyInput("gradient mean"))?;
        let mut acc = vec![0f64; first.len()];
        for v in vectors {
            if v.layout_id != first.layout_id {
                return Err(Error::LayoutMismatch { expected: first.layout_id.clone(), found: v.layout_id.clone() });
            }
            for (a, x) in acc.iter_mut().zip(&v.values) {
                *a += x.to_acc();
            }
        }
        let n = vectors.len() as f64;
        Ok(GradientVector {
            values: acc.into_iter().map(|a| F::from_acc(a / n)).collect(),
            layout_id: first.layout_id.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.register("a", Tensor::zeros(&[2]));
        s.register("b", Tensor::zeros(&[2, 2]));
        s
    }

    #[test]
    fn flatten_concatenates_in_registration_order() {
        let s = store();
        let mut g = Gradients::empty_for(&s);
        g.set(ParamId(0), Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        g.set(ParamId(1), Tensor::new(vec![2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap());
        let v = g.flatten(&s).unwrap();
        assert_eq!(v.values(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(Gradients::unflatten(&v, &s).unwrap(), g);
    }

    #[test]
    fn zero_gradients_flatten_to_full_length_zeros() {
        let s = store();
        let v = Gradients::zeros_for(&s).flatten(&s).unwrap();
        assert_eq!(v.len(), 6);
        assert!(v.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn missing_gradient_is_reported() {
        let s = store();
        let mut g = Gradients::empty_for(&s);
        g.set(ParamId(0), Tensor::zeros(&[2]));
        match g.flatten(&s) {
            Err(Error::IncompleteGradient(name)) => assert_eq!(name, "b"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn layout_id_depends_on_shapes() {
        let mut s2 = ParamStore::<f32>::new();
        s2.register("a", Tensor::zeros(&[2]));
        s2.register("b", Tensor::zeros(&[4]));
        assert_ne!(store().layout_id(), s2.layout_id());
        assert_eq!(store().layout_id(), store().layout_id());
    }

    #[test]
    fn clipping_bounds_global_norm() {
        let s = store();
        let mut g = Gradients::empty_for(&s);
        g.set(ParamId(0), Tensor::new(vec![2], vec![3.0, 4.0]).unwrap());
        g.set(ParamId(1), Tensor::zeros(&[2, 2]));
        let before = g.clip_global_norm(1.0);
        assert!((before - 5.0).abs() < 1e-9);
        assert!((g.global_norm() - 1.0).abs() < 1e-6);
    }
}
