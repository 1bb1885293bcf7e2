//! Downstream procedures and the synthetic corpus.

pub mod dataset;
pub mod forecast;
pub mod inpaint;
pub mod synth;

pub use dataset::{build_dataset, DatasetContainer, SplitRatios, SplitTag, Splits};
pub use forecast::{forecast, forecast_interval, ForecastConfig, ForecastResult};
pub use inpaint::{gap_patches, inpaint, Inpainted};
pub use synth::{generate_synthetic, SyntheticSpec};
