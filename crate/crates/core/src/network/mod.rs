//! Layers, the reference CNN and parameter accounting.

pub mod checkpoint;
pub mod layers;
mod model;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use layers::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, dropout_forward, maxpool2x2_backward,
    maxpool2x2_forward, softmax, softmax_backward, DropoutMode,
};
pub use model::{
    build_paper_model, build_paper_model_with, count_parameters, group_thousands, paper_architecture, Layer,
    LayerDesc, Mode, Model, ParamInfo, ParamRole, SummaryRow, Trace, CIFAR_INPUT,
};
