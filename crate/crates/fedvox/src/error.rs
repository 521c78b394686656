use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("pixel ({x}, {y}) outside image of {width}x{height}")]
    PixelOutOfBounds { x: f64, y: f64, width: u32, height: u32 },

    #[error("direction is not unit length (norm {norm})")]
    NotUnitLength { norm: f64 },

    #[error("point ({x}, {y}, {z}) outside grid bounds")]
    OutOfBounds { x: f64, y: f64, z: f64 },

    #[error("invalid sample range: near {near} must be below far {far}")]
    BadSampleRange { near: f64, far: f64 },

    #[error("image dimensions differ: {a_width}x{a_height} vs {b_width}x{b_height}")]
    DimensionMismatch { a_width: u32, a_height: u32, b_width: u32, b_height: u32 },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("k_max {k_max} exceeds camera count {cameras}")]
    BadPartition { k_max: usize, cameras: usize },

    #[error("modeled regions of local and global fields do not overlap")]
    EmptyOverlap,

    #[error("non-finite alignment loss for candidate pose")]
    NonFiniteLoss,

    #[error("invalid {what}: {detail}")]
    Invalid { what: &'static str, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed {format} data: {detail}")]
    Format { format: &'static str, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Invalid { what, detail: detail.into() }
    }

    pub fn format(format: &'static str, detail: impl Into<String>) -> Self {
        Error::Format { format, detail: detail.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
