use crate::numerics::Tensor;

/// A fixed, ordered collection of named parameter tensors.
///
/// `entries` and `tensors_mut` must list tensors in the same order; the
/// optimizer and the checkpoint format both rely on it.
pub trait Parameters {
    /// `(name, tensor, decays)`; `decays` marks weights that take weight decay.
    fn entries(&self) -> Vec<(String, &Tensor, bool)>;

    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    fn num_scalars(&self) -> usize {
        self.entries().iter().map(|(_, t, _)| t.len()).sum()
    }
}
