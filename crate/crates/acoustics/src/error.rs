use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point {0:?} lies outside the room")]
    OutsideRoom([f64; 3]),
    #[error("source and microphone are {0:.4} m apart (minimum 0.01 m)")]
    TooClose(f64),
    #[error("invalid room: {0}")]
    InvalidRoom(String),
    #[error("requested T60 of {t60} s needs absorption {alpha:.3} >= 1")]
    T60TooShort { t60: f64, alpha: f64 },
    #[error("signal of {len} samples is shorter than one {frame}-sample frame")]
    TooShort { len: usize, frame: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("target signal has zero power")]
    SilentTarget,
    #[error("gcc-phat: input frame is all zeros")]
    ZeroFrame,
    #[error("clip pool: {0}")]
    Pool(String),
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
