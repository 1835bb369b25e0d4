//! Synthetic phantoms, the on-disk image container, dataset splits and
//! image-quality metrics.

mod container;
mod dataset;
mod metrics;
mod phantom;

pub use container::{
    read_container, write_container, Container, CONTAINER_HEADER_LEN, CONTAINER_MAGIC,
    CONTAINER_VERSION,
};
pub use dataset::{Dataset, DatasetManifest, DatasetSpec, Split, SplitManifest, MANIFEST_VERSION};
pub use metrics::{
    evaluate, mse, normalized_pair, psnr, ssim, Aggregate, ImageMetrics, Magnitude, Method,
    MetricsReport, REPORT_VERSION, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW,
};
pub use phantom::{generate_phantom, render, Ellipse, PhantomSpec, SmoothPhase};
