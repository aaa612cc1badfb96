use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violated an operation's precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The client and server disagree about the shape of the stored state
    /// (unknown area, slot out of range, deleted slot, mismatched reply).
    #[error("protocol error: {0}")]
    Protocol(String),

    /// A ciphertext failed its embedded checksum under the expected context.
    #[error("decryption failure at {area} epoch {epoch} slot {slot}")]
    DecryptionFailure { area: u32, epoch: u64, slot: u64 },

    /// The short-queue shuffle exceeded its client queue budget.
    #[error("shuffle failure: queue occupancy {occupancy} exceeded threshold {threshold:.1}")]
    ShuffleFailure { occupancy: usize, threshold: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}

pub(crate) fn protocol<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Protocol(msg.into()))
}
