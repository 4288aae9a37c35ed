//! Material constants and their rescaled, dimensionless counterparts.

use serde::{Deserialize, Serialize};

use crate::error::{NeelError, Result};

/// Smallest accepted value for the rescaled constants κ and ε.
pub const MIN_RESCALED: f64 = 1e-6;

/// Physical thin-film constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalParameters {
    /// Exchange length.
    pub d: f64,
    /// Film thickness.
    pub delta: f64,
    /// Quality factor.
    #[serde(rename = "q")]
    pub quality: f64,
    /// Ratio of the gyromagnetic and damping terms.
    pub alpha: f64,
}

/// Dimensionless constants of the rescaled model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RescaledParameters {
    pub kappa: f64,
    pub epsilon: f64,
    pub alpha: f64,
}

impl Default for RescaledParameters {
    fn default() -> Self {
        Self {
            kappa: 1.0,
            epsilon: 0.1,
            alpha: 0.5,
        }
    }
}

impl PhysicalParameters {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [("d", self.d), ("delta", self.delta), ("q", self.quality)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(NeelError::InvalidParameter(format!(
                    "{name} must be positive and finite, got {value}"
                )));
            }
        }
        if !self.alpha.is_finite() {
            return Err(NeelError::InvalidParameter("alpha must be finite".into()));
        }
        Ok(())
    }
}

impl RescaledParameters {
    pub fn new(kappa: f64, epsilon: f64, alpha: f64) -> Result<Self> {
        let params = Self { kappa, epsilon, alpha };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [("kappa", self.kappa), ("epsilon", self.epsilon)] {
            if !value.is_finite() || value < MIN_RESCALED {
                return Err(NeelError::InvalidParameter(format!(
                    "{name} must be at least {MIN_RESCALED:e}, got {value}"
                )));
            }
        }
        if !self.alpha.is_finite() {
            return Err(NeelError::InvalidParameter("alpha must be finite".into()));
        }
        Ok(())
    }

    pub fn with_alpha(self, alpha: f64) -> Self {
        Self { alpha, ..self }
    }
}

/// κ = δ⁻² d² Q and ε = Q; α is carried through unchanged.
pub fn rescale(params: &PhysicalParameters) -> Result<RescaledParameters> {
    params.validate()?;
    let kappa = params.d * params.d * params.quality / (params.delta * params.delta);
    Ok(RescaledParameters {
        kappa,
        epsilon: params.quality,
        alpha: params.alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn physical(d: f64, delta: f64, quality: f64, alpha: f64) -> PhysicalParameters {
        PhysicalParameters {
            d,
            delta,
            quality,
            alpha,
        }
    }

    #[test]
    fn rescale_unit_film() {
        let r = rescale(&physical(1.0, 1.0, 0.1, 0.5)).unwrap();
        assert_eq!(r.kappa, 0.1);
        assert_eq!(r.epsilon, 0.1);
        assert_eq!(r.alpha, 0.5);
    }

    #[test]
    fn rescale_thick_exchange() {
        let r = rescale(&physical(2.0, 1.0, 0.25, 1.0)).unwrap();
        assert_eq!(r.kappa, 1.0);
        assert_eq!(r.epsilon, 0.25);
        assert_eq!(r.alpha, 1.0);
    }

    #[test]
    fn rescale_rejects_zero_thickness() {
        let err = rescale(&physical(1.0, 0.0, 0.1, 0.0)).unwrap_err();
        assert!(matches!(err, NeelError::InvalidParameter(_)));
    }

    #[test]
    fn rescaled_rejects_degenerate_epsilon() {
        assert!(RescaledParameters::new(1.0, 1e-7, 0.5).is_err());
        assert!(RescaledParameters::new(0.0, 0.1, 0.5).is_err());
        assert!(RescaledParameters::new(1.0, 0.1, f64::NAN).is_err());
    }
}
