//! Two-stage bottleneck injection by knowledge distillation.
//!
//! Stage 1 trains an encoder/decoder pair to reproduce a frozen teacher's
//! hidden representation under a rate penalty (the bottleneck carries
//! additive uniform noise standing in for quantization). Stage 2 swaps the
//! bottleneck into the network and fine-tunes it together with the teacher's
//! tail against the frozen teacher's logits, then refits and freezes the
//! latent prior for entropy coding.

mod bottleneck;
mod split;
mod teacher;

pub use bottleneck::{
    rd_log_csv, rd_loss_and_grads, train_bottleneck_stage1, BottleneckConfig,
    BottleneckModelBase, RdGrads, RdLogRow, RdParts,
};
pub use split::{
    finetune_stage2, kd_log_csv, load_split, save_split, KdLogRow, SplitModelBase, Stage2Config,
};
pub use teacher::{train_teacher, verify_teacher, TeacherEpoch, TeacherModelBase};
