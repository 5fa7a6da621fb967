//! The fringe transformation network: an encoder-decoder of downsampling,
//! factorized residual and upsampling layers, trained with plain MSE.

pub mod checkpoint;
pub mod gradcheck;
pub mod network;
pub mod ops;
pub mod optim;
pub mod spec;
pub mod tensor;
pub mod train;

pub use network::{ForwardCache, Gradients, Mode, Network, Param, PAD_MULTIPLE};
pub use optim::{Adam, AdamConfig};
pub use spec::{
    build_network, select_variant, validate_fl_choice, LayerSpec, LowFrequencyAdvice, NetworkSpec, OutputStack,
    Variant, VariantKind,
};
pub use tensor::Tensor;
pub use train::{infer, mse_loss, train, EpochRecord, Sample, TrainConfig};
