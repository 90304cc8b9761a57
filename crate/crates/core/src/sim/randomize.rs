//! Per-episode draws of scene parameters around a base configuration.

use super::{ObjectShape, SceneConfig, SimError};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Uniform ranges for the parameters that vary between episodes. When
/// disabled every episode uses the base scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneRandomization {
    pub enabled: bool,
    pub shapes: Vec<ObjectShape>,
    pub friction_mu: [f64; 2],
    pub restitution: [f64; 2],
    pub object_radius: [f64; 2],
    pub hand_speed: [f64; 2],
}

impl Default for SceneRandomization {
    fn default() -> Self {
        Self {
            enabled: true,
            shapes: vec![ObjectShape::Sphere, ObjectShape::Cube],
            friction_mu: [0.02, 0.8],
            restitution: [0.0, 0.6],
            object_radius: [0.10, 0.16],
            hand_speed: [0.4, 1.0],
        }
    }
}

impl SceneRandomization {
    /// Check that every drawable scene is valid for `base`.
    pub fn validate(&self, base: &SceneConfig) -> Result<(), SimError> {
        if !self.enabled {
            return base.validate();
        }
        if self.shapes.is_empty() {
            return Err(SimError::InvalidConfig("shapes must not be empty".into()));
        }
        for (name, r) in self.ranges() {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
                return Err(SimError::InvalidConfig(format!("{name} must be an ordered pair [lo, hi]")));
            }
        }
        for corner in [0, 1] {
            let c = SceneConfig {
                friction_mu: self.friction_mu[corner],
                restitution: self.restitution[corner],
                object_radius: self.object_radius[corner],
                hand_speed: self.hand_speed[corner],
                ..base.clone()
            };
            c.validate()?;
        }
        Ok(())
    }

    fn ranges(&self) -> [(&'static str, [f64; 2]); 4] {
        [
            ("friction_mu", self.friction_mu),
            ("restitution", self.restitution),
            ("object_radius", self.object_radius),
            ("hand_speed", self.hand_speed),
        ]
    }

    pub fn sample<R: Rng>(&self, base: &SceneConfig, rng: &mut R) -> SceneConfig {
        if !self.enabled {
            return base.clone();
        }
        let mut draw = |r: [f64; 2]| if r[0] < r[1] { rng.gen_range(r[0]..r[1]) } else { r[0] };
        let friction_mu = draw(self.friction_mu);
        let restitution = draw(self.restitution);
        let object_radius = draw(self.object_radius);
        let hand_speed = draw(self.hand_speed);
        let object_shape = self.shapes[rng.gen_range(0..self.shapes.len())];
        SceneConfig { object_shape, friction_mu, restitution, object_radius, hand_speed, ..base.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    #[test]
    fn draws_stay_in_range() {
        let r = SceneRandomization::default();
        let base = SceneConfig::default();
        r.validate(&base).unwrap();
        let mut rng = rng_from(3);
        for _ in 0..200 {
            let c = r.sample(&base, &mut rng);
            c.validate().unwrap();
            assert!((0.02..0.8).contains(&c.friction_mu));
            assert!((0.10..0.16).contains(&c.object_radius));
        }
    }

    #[test]
    fn disabled_returns_base() {
        let r = SceneRandomization { enabled: false, ..Default::default() };
        let base = SceneConfig { friction_mu: 1.1, ..Default::default() };
        assert_eq!(r.sample(&base, &mut rng_from(1)), base);
    }

    #[test]
    fn reversed_range_is_rejected() {
        let r = SceneRandomization { hand_speed: [1.0, 0.5], ..Default::default() };
        assert!(r.validate(&SceneConfig::default()).is_err());
    }
}
