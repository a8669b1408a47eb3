use thiserror::Error;

#[derive(Debug, Error)]
pub enum VoxError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("invalid resolution {0}")]
    InvalidResolution(u64),
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
    #[error("voxel {0:?} not covered by any patch")]
    Uncovered([usize; 3]),
    #[error("threshold {0} outside (0, 1)")]
    Threshold(f32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
