use num_complex::Complex64;

/// Errors produced by the toolkit.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("integration failed at t = {t}: {reason}")]
    Integration { t: f64, reason: String },

    #[error("direction did not return to the base fiber before t = {t_max} (closest approach {closest})")]
    NotReturned { t_max: f64, closest: f64 },

    #[error("quadrature under-resolved: coarse {coarse}, refined {fine}")]
    UnderResolved { coarse: Complex64, fine: Complex64 },

    #[error("mollification target {target} not reached at band limit {band}: achieved {achieved}")]
    MollifyUnreachable {
        target: f64,
        band: usize,
        achieved: f64,
    },

    #[error("field not representable at band limit {band}: relative tail mass {tail}")]
    NotRepresentable { band: usize, tail: f64 },

    #[error("momentum support exceeds the grid Nyquist band: {0}")]
    Nyquist(String),

    #[error("h = {h} is not admissible for this construction (nearest admissible {nearest})")]
    InadmissibleH { h: f64, nearest: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
