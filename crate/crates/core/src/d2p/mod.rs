//! Digital-to-physical colour calibration.
//!
//! A printed and re-photographed sticker does not look like its digital
//! source. This module builds the calibration palette, simulates a
//! print/photograph channel for desk experiments, fits the per-pixel colour
//! mapping network and scores how close two stickers are.

mod channel;
mod mapper;
mod metrics;
mod palette;

pub use channel::{simulate_channel, ChannelParams};
pub use mapper::{train_d2p, D2PMapper, D2PTape, TrainConfig, TrainOutcome};
pub use metrics::{image_metrics, ImageMetrics, PSNR_CAP_DB};
pub use palette::{
    extract_palette_from_photo, make_digital_palette, palette_image, ColorPalette, BLOCK_SIZE,
    PALETTE_COLS, PALETTE_LEVELS, PALETTE_ROWS,
};
