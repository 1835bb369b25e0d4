//! Network building blocks on `(N, C, H, W)` real tensors.

mod attention;
mod block;
mod config;
mod dense;
mod layers;

pub use attention::ChannelMsa;
pub use block::{BlockOptions, FeatureMaps, Gff, Gfr, RecurrentBlock, Sfe, Stage};
pub use config::{BlockConfig, Domain};
pub use dense::{Drdb, Plde};
pub use layers::{Conv, ConvSpec};
