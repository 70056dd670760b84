//! Cost and quality accounting: effective MACs, storage, activation
//! sparsity, SI-SNR and layer-wise mismatch.

mod density;
mod latency;
mod macs;
mod memory;
mod mismatch;
mod sisnr;

pub use density::{
    densities_from_stats, measured_densities, with_event_weights, with_static_weights, Activity,
    ActivityStats, LayerActivity,
};
pub use latency::{LatencyStats, FRAME_BUDGET};
pub use macs::{
    effective_macs, Component, DensitySet, LayerDensities, LayerMacs, MacProfile, MacRecord,
    MacTally,
};
pub use memory::{fxp_memory, model_memory, Layout, MemoryReport, TensorBytes};
pub use mismatch::{compare_taps, mismatch_report, MismatchReport, MismatchRow};
pub use sisnr::{si_snr, SI_SNR_CAP_DB};
