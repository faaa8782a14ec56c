//! Student/teacher networks with hand-derived reverse-mode gradients.

mod checkpoint;
mod layers;
mod network;
mod optim;
mod params;
mod teacher;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use layers::{bilinear_upsample, bilinear_upsample_backward, conv2d, conv2d_backward, relu_inplace, ConvSpec};
pub use network::{backward, forward, forward_traced, Heads, Output, ProjTrace, SegTrace, Trace, Upstream};
pub use optim::{OptimConfig, OptimState};
pub use params::{init_params, Gradients, Layer, ModelArch, ModelParams, ParamGroup};
pub use teacher::{pseudo_label, pseudo_label_from_probs, PseudoLabel, TeacherState};
