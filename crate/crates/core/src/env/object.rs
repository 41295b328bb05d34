use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{geodesic_distance, octahedral_group, quat_compose, UnitQuaternion};

/// An object reduced to the parameters the simulator needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub name: String,
    /// Indices into [`octahedral_group`] of the rotations mapping the shape
    /// onto itself.
    pub symmetry: Vec<usize>,
    pub tipping_susceptibility: f64,
    pub drift_susceptibility: f64,
}

impl ObjectSpec {
    pub const NAMES: [&'static str; 4] = ["cube", "cuboid", "L", "apple"];

    pub fn preset(name: &str) -> Result<Self> {
        let group = octahedral_group();
        let keeps_vertical = |q: &UnitQuaternion| q.rotate([0.0, 0.0, 1.0])[2] > 0.5;
        let flips_or_keeps_vertical = |q: &UnitQuaternion| q.rotate([0.0, 0.0, 1.0])[2].abs() > 0.5;
        // L lying in the x1-x2 plane: half turn about the bisector of its arms.
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let l_flip = UnitQuaternion::new(0.0, s, s, 0.0);
        let select = |pred: &dyn Fn(&UnitQuaternion) -> bool| -> Vec<usize> {
            group.iter().enumerate().filter(|(_, q)| pred(q)).map(|(i, _)| i).collect()
        };
        let (symmetry, tip, drift) = match name {
            "cube" => ((0..group.len()).collect(), 1.0, 1.0),
            "cuboid" => (select(&flips_or_keeps_vertical), 1.3, 1.0),
            "L" => (select(&|q| q.same_rotation(&UnitQuaternion::IDENTITY, 1e-9) || q.same_rotation(&l_flip, 1e-9)), 1.5, 1.2),
            "apple" => (select(&keeps_vertical), 1.0, 2.0),
            other => {
                return Err(Error::config(
                    "object",
                    format!("unknown object `{other}`; expected one of {}", Self::NAMES.join(", ")),
                ))
            }
        };
        Ok(ObjectSpec { name: name.to_string(), symmetry, tipping_susceptibility: tip, drift_susceptibility: drift })
    }

    pub fn symmetry_rotations(&self) -> Vec<UnitQuaternion> {
        let group = octahedral_group();
        self.symmetry.iter().map(|&i| group[i]).collect()
    }

    /// Angle to the nearest symmetry-equivalent copy of `goal`.
    pub fn symmetric_distance(&self, r: UnitQuaternion, goal: UnitQuaternion) -> f64 {
        self.symmetry_rotations()
            .into_iter()
            .map(|h| geodesic_distance(r, quat_compose(goal, h)))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn validate(&self) -> Result<()> {
        let group = octahedral_group();
        if self.symmetry.iter().any(|&i| i >= group.len()) {
            return Err(Error::config("object.symmetry", "index outside the 24-element group"));
        }
        let elems = self.symmetry_rotations();
        if !elems.iter().any(|q| q.same_rotation(&UnitQuaternion::IDENTITY, 1e-9)) {
            return Err(Error::config("object.symmetry", "must contain the identity"));
        }
        for a in &elems {
            for b in &elems {
                let c = quat_compose(*a, *b);
                if !elems.iter().any(|e| e.same_rotation(&c, 1e-6)) {
                    return Err(Error::config("object.symmetry", "not closed under composition"));
                }
            }
        }
        for (path, v) in [
            ("object.tipping_susceptibility", self.tipping_susceptibility),
            ("object.drift_susceptibility", self.drift_susceptibility),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(path, "must be finite and non-negative"));
            }
        }
        Ok(())
    }
}
