use thiserror::Error;

/// Errors raised while building or evaluating a model.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{field}: mean photon number must be finite and non-negative, got {value}")]
    NegativeIntensity { field: String, value: f64 },

    #[error("{field}: value {value} outside [{min}, {max}]")]
    OutOfRange {
        field: String,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("{field}: weights must sum to 1, got {sum}")]
    NotNormalized { field: String, sum: f64 },

    #[error("eve model: p_correct + p_wrong + 2*p_noncompat = {total} exceeds 1")]
    InvalidEveModel { total: f64 },

    #[error("qber undefined: total sifted rate is zero")]
    UndefinedQber,
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

pub(crate) fn check_range(field: &str, value: f64, min: f64, max: f64) -> Result<()> {
    if value.is_finite() && value >= min && value <= max {
        Ok(())
    } else {
        Err(ModelError::OutOfRange {
            field: field.to_string(),
            value,
            min,
            max,
        })
    }
}

pub(crate) fn check_intensity(field: &str, value: f64) -> Result<()> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(ModelError::NegativeIntensity {
            field: field.to_string(),
            value,
        })
    }
}
