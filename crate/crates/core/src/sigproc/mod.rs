//! Pre-processing and time-frequency transforms for paired EGM/ECG beats.

mod beats;
mod filter;
pub mod io;
mod stats;
mod stft;

pub(crate) use beats::normalize_channels;
pub use beats::{detect_beats, segment_beats, BeatRecord, Dataset, Recording, Segmented, Split};
pub use filter::{design_bandpass, filtfilt, IirCascade, Sos};
pub use stats::{pearson, Pearson};
pub use stft::{istft, stft, StftConfig, TfGrid};

/// Number of EGM channels sensed by the implanted leads.
pub const EGM_CHANNELS: usize = 5;
/// Number of surface ECG leads reconstructed.
pub const ECG_CHANNELS: usize = 12;
/// Sample rate of the recordings.
pub const SAMPLE_RATE_HZ: f64 = 1000.0;

pub const ECG_LEAD_NAMES: [&str; ECG_CHANNELS] =
    ["I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6"];
pub const EGM_CHANNEL_NAMES: [&str; EGM_CHANNELS] = ["RV", "RA", "LV1", "LV2", "CAN"];
