//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two operands whose shapes must agree do not.
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    /// A mask cannot be built because the keep probability for the
    /// off-center columns would leave [0, 1].
    #[error(
        "infeasible mask: width {width} with acceleration {acceleration} and \
         {center_columns} center columns gives keep probability {q}"
    )]
    InfeasibleMask {
        width: usize,
        acceleration: u32,
        center_columns: usize,
        q: f64,
    },

    /// A configuration value is invalid or inconsistent.
    #[error("invalid config: {0}")]
    Config(String),

    /// A gradient-injection coupling was evaluated without its conditioning
    /// input.
    #[error("coupling requires a conditioning input but none was supplied")]
    MissingConditioning,

    /// The reversible backward pass reconstructed a state that disagrees
    /// with the forward trajectory by more than the guard tolerance.
    #[error(
        "state reconstruction diverged at step {step}: residual {residual:.3e} \
         exceeds guard {guard:.3e}"
    )]
    ReconstructionDiverged {
        step: usize,
        residual: f64,
        guard: f64,
    },

    /// SSIM is undefined when the target's data range is zero.
    #[error("SSIM data range is zero (constant-zero target)")]
    ZeroDataRange,

    /// A mini-batch must contain at least one item.
    #[error("batch must contain at least one item")]
    EmptyBatch,

    /// NMSE is undefined against an all-zero reference image.
    #[error("reference image is all zeros")]
    ZeroReference,

    /// Binary file format violations (datasets and checkpoints).
    #[error(transparent)]
    Format(#[from] FormatError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Distinct failure modes when decoding the on-disk formats.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },

    #[error("unsupported format version {got} (expected {expected})")]
    VersionMismatch { expected: u32, got: u32 },

    #[error("file truncated while reading {context}")]
    Truncated { context: &'static str },

    #[error("checksum mismatch in record {index}")]
    ChecksumMismatch { index: usize },

    #[error("invalid metadata byte {0} (one-hot index must be < 4)")]
    InvalidMeta(u8),

    #[error("empty record list")]
    EmptyRecordList,
}
