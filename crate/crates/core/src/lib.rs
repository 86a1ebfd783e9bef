//! Measurement of weekly retail price rigidity: sales filters, change
//! frequencies and durations, magnitude statistics, two-sample tests,
//! synchronization, a stratified Cox model and a panel simulator.

pub mod error;
pub mod filters;
pub mod hazard;
pub mod inference;
pub mod magnitude;
pub mod panel;
pub mod report;
pub mod rigidity;
pub mod simgen;

pub use error::{Error, Result};
pub use filters::{EndpointPolicy, FilterParams, FilterResult, SeriesKind};
pub use panel::{LoadOptions, Price, PricePanel, StoreFormat};

/// Derives an independent 64-bit seed for the stream at `path` under `seed`.
pub fn substream(seed: u64, path: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    path.iter().fold(mix(seed), |h, &p| mix(h ^ mix(p.wrapping_add(0x632B_E59B_D9B4_E019))))
}
