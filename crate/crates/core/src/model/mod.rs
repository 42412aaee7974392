//! U-Net masker, L1 loss, ADAM training and checkpoints.

mod checkpoint;
mod gradcheck;
pub mod ops;
mod train;
mod unet;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointHeader, FORMAT_VERSION, MAGIC,
};
pub use gradcheck::{check_gradients, GradCheckReport};
pub use train::{
    best_checkpoint_path, train, train_sources, validation_loss, Adam, EarlyStopping, EpochRecord, Progress,
    TrainConfig, TrainReport,
};
pub use unet::{l1_masked_loss, ForwardOutput, Gradient, UNet, UNetConfig};
