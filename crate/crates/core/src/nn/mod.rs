//! Dense-network engine: tensors, layers, dropout, losses and Adam.

mod adam;
pub mod gradcheck;
mod layer;
pub mod loss;
mod tensor;

pub use adam::AdamState;
pub use layer::{
    dropout_forward, sigmoid, softmax_rows, Activation, DenseCache, DenseGrads, DenseLayer,
    EmbeddingTable, Mode,
};
pub use tensor::Tensor2;

/// Total number of scalars across the given tensors.
pub fn param_count<'a>(tensors: impl IntoIterator<Item = &'a Tensor2>) -> usize {
    tensors.into_iter().map(Tensor2::len).sum()
}
