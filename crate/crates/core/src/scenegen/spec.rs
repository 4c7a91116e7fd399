use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Everything needed to regenerate a benchmark scene from scratch. The same
/// spec always produces byte-identical datasets.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    /// Total number of views on the camera orbit.
    pub views: usize,
    /// Appearance variants cycled over the views; at least two.
    pub variants: usize,
    /// Fraction of views that carry occluder sprites.
    pub occluded_fraction: f64,
    /// Occluders per affected view, capped at three.
    pub max_occluders: usize,
    /// Samples in the initial point cloud file.
    pub points: usize,
    pub orbit_radius: f64,
    pub orbit_height: f64,
    /// Focal length in pixels (applied to both axes).
    pub focal: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            seed: 7,
            width: 64,
            height: 64,
            views: 48,
            variants: 4,
            occluded_fraction: 0.5,
            max_occluders: 3,
            points: 4000,
            orbit_radius: 3.5,
            orbit_height: 1.4,
            focal: 64.0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Validation("image extent must be positive".into()));
        }
        if self.width % 8 != 0 || self.height % 8 != 0 {
            return Err(Error::Validation("image extent must be divisible by 8".into()));
        }
        if self.views == 0 {
            return Err(Error::Validation("need at least one view".into()));
        }
        if self.variants < 2 {
            return Err(Error::Validation("need at least two appearance variants".into()));
        }
        if self.max_occluders > 3 {
            return Err(Error::Validation("at most three occluders per view".into()));
        }
        if !(0.0..=1.0).contains(&self.occluded_fraction) {
            return Err(Error::Validation("occluded fraction must be in [0,1]".into()));
        }
        if self.focal <= 0.0 || self.orbit_radius <= 0.0 {
            return Err(Error::Validation("focal and orbit radius must be positive".into()));
        }
        Ok(())
    }

    /// Appearance variant shown in a given view.
    pub fn variant_of(&self, view: usize) -> usize {
        view % self.variants
    }

    /// Deterministic choice of which views carry occluders: the first
    /// `fraction` of each variant cycle, spread evenly over the orbit.
    pub fn view_occluded(&self, view: usize) -> bool {
        if self.occluded_fraction <= 0.0 || self.max_occluders == 0 {
            return false;
        }
        // even spread: view k occluded iff frac(k * f) wraps
        let f = self.occluded_fraction;
        ((view as f64 + 1.0) * f).floor() > (view as f64 * f).floor()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_spec_is_valid() {
        SceneSpec::default().validate().unwrap();
    }

    #[test]
    fn occluded_fraction_is_respected() {
        let spec = SceneSpec { occluded_fraction: 0.5, ..Default::default() };
        let n = (0..spec.views).filter(|&v| spec.view_occluded(v)).count();
        assert_eq!(n, spec.views / 2);
        let none = SceneSpec { occluded_fraction: 0.0, ..Default::default() };
        assert!((0..none.views).all(|v| !none.view_occluded(v)));
    }

    #[test]
    fn bad_specs_are_rejected() {
        let mut s = SceneSpec { variants: 1, ..Default::default() };
        assert!(s.validate().is_err());
        s.variants = 2;
        s.max_occluders = 4;
        assert!(s.validate().is_err());
        s.max_occluders = 2;
        s.width = 60; // not divisible by 8
        assert!(s.validate().is_err());
    }
}
