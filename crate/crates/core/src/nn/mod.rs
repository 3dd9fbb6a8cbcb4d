//! Minimal dense numerical kernel: tensors, layers with explicit backward
//! passes, Adam, finite-difference checking and checkpoints.

mod adam;
mod attention;
mod checkpoint;
mod gradcheck;
mod layers;
mod lstm;
mod ops;
pub mod probe;
mod tensor;

pub use adam::{adam_step, Adam, AdamConfig};
pub use attention::{mha_forward, AttentionCache, BlockCache, MultiHeadAttention, TransformerBlock};
pub use checkpoint::{Checkpoint, NamedTensor, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, grad_check_steps, grad_check_strided, GradCheck, FD_STEP};
pub(crate) use layers::join;
pub use layers::{mlp_forward, xavier_uniform, LayerNorm, LayerNormCache, Linear, Mlp, MlpCache, Module, Param};
pub use lstm::{lstm_step, LstmCell, LstmStepCache};
pub use ops::{
    cross_entropy, cross_entropy_grad, smooth_l1, smooth_l1_grad, softmax, softmax_backward, softmax_rows,
    softmax_rows_backward, PROB_FLOOR, SMOOTH_L1_BETA,
};
pub use tensor::Tensor;

/// Seed-stable generator used everywhere randomness is needed.
pub type Rng = rand_xoshiro::Xoshiro256PlusPlus;

pub fn seeded_rng(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
