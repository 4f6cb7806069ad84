//! Differentiable model core: GIN encoder, zero MLPs, classifier and the
//! controlled composition, with hand-derived backward passes.

mod batch;
mod gin;
mod gradcheck;
mod linear;
mod loss;
mod model;
mod optim;
mod suite;

pub use batch::{readout, GraphBatch};
pub use gin::{gin_forward, GinEncoder, GinLayer, GinTape};
pub use gradcheck::{backprop_check, GradientReport, FD_STEP, KINK_TOLERANCE};
pub use linear::Linear;
pub use loss::{argmax_rows, softmax_cross_entropy};
pub use model::{
    graphcontrol_forward, prompt_forward, BatchInput, GraphControlModel, ModelTape, Prompts, Trainable, ZeroMlp,
    HIDDEN_DIM, NUM_LAYERS,
};
pub use suite::{check_model, gradient_suite, SuiteDims};
pub use optim::{Optimizer, OptimizerKind};

/// Named access to parameter tensors in a fixed order.
pub trait Params<T> {
    fn params(&self, prefix: &str) -> Vec<(String, &[T])>;
    fn params_mut(&mut self) -> Vec<&mut [T]>;

    fn num_params(&self) -> usize {
        self.params("").iter().map(|(_, p)| p.len()).sum()
    }
}
