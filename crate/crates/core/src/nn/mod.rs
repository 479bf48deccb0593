//! Graph layers, loss and optimizers.

pub mod dropout;
pub mod layer;
pub mod loss;
pub mod model;
pub mod optim;
pub mod params;

pub use dropout::{Dropout, DropoutPlan};
pub use layer::{aggregate, gather_row, layer_backward, layer_forward, LayerCache, LayerGrads, LayerMath, Propagation};
pub use loss::{accuracy, softmax_xent, LossOutput};
pub use model::{model_backward, model_forward, ModelCache};
pub use optim::{Adam, AdamConfig, Optimizer, Sgd};
pub use params::{Dense, LayerKind, LayerParams, ModelConfig, ModelParams};
