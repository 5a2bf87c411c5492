//! Differentiable search over the encoder/decoder backbone.
//!
//! The backbone has a fixed stem and decoder around 14 searchable blocks,
//! each choosing one of nine operations ([`BlockKind`]). During search every
//! block outputs a Gumbel-Softmax weighted sum of all candidates; weights and
//! architecture logits are updated together on the negative Pearson loss
//! plus `lambda` times the expected MAC count in giga-MACs. The derived
//! network takes the argmax op of each block and is retrained from scratch.

mod data;
mod net;
mod space;
mod supernet;
mod train;

pub use data::{BatchSampler, Samples};
pub use net::{init_params, predict, transfer_params};
pub use space::{
    block_grid, count_macs, fixed_macs, network_macs, search_space_size, BlockKind, LayerDims, LayerKind, LayerSpec,
    NetworkSpec, DEFAULT_WIDTH, GRID, NUM_BLOCKS, NUM_OPS,
};
pub use supernet::{
    alpha_header, depth_violation, derive_network, dns_step, expected_macs, expected_macs_on_tape, search,
    supernet_forward, write_alpha_rows, DnsConfig, MixWeights, SearchOutcome, StepStats, SupernetPass, SupernetState,
};
pub use train::{evaluate, fit, train_network, EpochLosses, EvalReport, TrainConfig, TrainedNetwork};
