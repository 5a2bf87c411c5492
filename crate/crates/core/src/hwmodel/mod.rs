//! Analytical latency model of a multi-chunk accelerator.
//!
//! Each layer runs as a two-level loop nest. The outer (DRAM) level walks
//! global-buffer tiles of size `tile_gb` in `loop_order_dram`; the inner
//! (GB) level walks PE-array tiles of size `tile_pe` in `loop_order_gb`,
//! and `tile_pe` is unrolled spatially over the PEs. Layers are assigned to
//! ten pipelined sub-accelerators.
//!
//! Data movement follows one revisit rule at both levels: a tensor tile is
//! refetched once per iteration of every loop from the outermost one down to
//! the innermost loop (with more than one trip) that indexes a dimension the
//! tensor depends on, and is held across everything inside it.
//!
//! ```
//! use ecg_cosearch::hwmodel::{estimate_layer, Mapping, Noc, Platform};
//! use ecg_cosearch::nas::LayerDims;
//!
//! let layer = LayerDims::conv("c", 3, 3, 3, 3, 1);
//! let cost = estimate_layer(&layer, &Mapping::single_pe(&layer), Noc::OutputParallel, 1, &Platform::default());
//! assert_eq!(cost.compute_cycles, 729);
//! ```

mod cost;
mod design;

pub use cost::{
    enumerate_tilings, estimate_layer, estimate_network, pipeline_metrics, write_report_csv, CostReport, LayerCost,
};
pub use design::{spatial_dims, AcceleratorDesign, Dim, Mapping, Noc, Platform, NUM_SUB_ACCELERATORS};
