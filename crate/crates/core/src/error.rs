use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("normal requested at signed distance {distance:e}, outside the trusted band {band:e}")]
    QueryOutsideBand { distance: f64, band: f64 },

    #[error("boundary crossing could not be bracketed along the flight segment")]
    RootNotBracketed,

    #[error("particle {particle} exceeded {limit} reflections in one step at t = {t}")]
    MaxReflectionsExceeded { particle: usize, limit: usize, t: f64 },

    #[error("initial support margin {margin} is not below the domain inradius {inradius}")]
    UnsatisfiableSupport { margin: f64, inradius: f64 },

    #[error("trajectory has no recorded common-noise path")]
    MissingCommonPath,

    #[error("trajectory must record every step (record_every = 1)")]
    MissingSnapshots,

    #[error("trajectory has no recorded idiosyncratic noise increments")]
    MissingIdiosyncraticPaths,

    #[error("layer width {delta} is not below the normal band {band}")]
    LayerExceedsBand { delta: f64, band: f64 },

    #[error("particle {particle} reflected at t = {t} while inside a test-function support")]
    StepTooCoarse { particle: usize, t: f64 },
}

impl Error {
    /// Failures caused by the numerics of a run rather than by its inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RootNotBracketed
                | Error::MaxReflectionsExceeded { .. }
                | Error::StepTooCoarse { .. }
                | Error::QueryOutsideBand { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
