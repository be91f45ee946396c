//! The self-supervised beamforming network: a stack of
//! Dense -> ReLU -> BatchNorm -> Dropout blocks whose output is reinterpreted
//! as complex beamformers and scaled to the transmit power budget. The loss is
//! the negative mean user rate, so no labels are needed.

mod config;
mod net;
mod params;
mod power;
mod rate;
mod train;

pub use config::NetConfig;
pub use net::{
    backward, batch_loss, beamformers, decode_csi, encode_csi, evaluate_rates, forward, forward_loss, Backward, Batch,
    ForwardCache, Mode,
};
pub use params::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, BatchNorm, Block, BlockGrad, Dense,
    NetGradients, NetParams,
};
pub use power::{normalize_power, Beamformer};
pub use rate::{beam_gain, sum_rate, user_rate};
pub use train::{train, Schedule};
