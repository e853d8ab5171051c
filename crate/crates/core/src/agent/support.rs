use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed return atoms `z_j = v_min + j * dz`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtomSupport {
    num_atoms: usize,
    v_min: f64,
    v_max: f64,
    atoms: Vec<f64>,
}

impl AtomSupport {
    pub fn new(num_atoms: usize, v_min: f64, v_max: f64) -> Result<Self> {
        if num_atoms < 2 {
            return Err(Error::invalid(format!("need at least 2 atoms, got {num_atoms}")));
        }
        if !(v_min < v_max) || !v_min.is_finite() || !v_max.is_finite() {
            return Err(Error::invalid(format!("support bounds must satisfy v_min < v_max, got [{v_min}, {v_max}]")));
        }
        let dz = (v_max - v_min) / (num_atoms - 1) as f64;
        let atoms = (0..num_atoms).map(|j| v_min + j as f64 * dz).collect();
        Ok(Self { num_atoms, v_min, v_max, atoms })
    }

    pub fn num_atoms(&self) -> usize {
        self.num_atoms
    }

    pub fn v_min(&self) -> f64 {
        self.v_min
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    pub fn delta_z(&self) -> f64 {
        (self.v_max - self.v_min) / (self.num_atoms - 1) as f64
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    /// Splits `mass` located at `value` between the two bracketing atoms.
    fn deposit(&self, row: &mut [f64], value: f64, mass: f64) {
        let b = ((value.clamp(self.v_min, self.v_max) - self.v_min) / self.delta_z()).clamp(0.0, (self.num_atoms - 1) as f64);
        let lower = b.floor() as usize;
        let upper = b.ceil() as usize;
        if lower == upper {
            row[lower] += mass;
        } else {
            row[lower] += mass * (upper as f64 - b);
            row[upper] += mass * (b - lower as f64);
        }
    }

    /// Categorical Bellman projection of `r + (1 - done) * discount * Z'`
    /// back onto the support. `next_dists` has one distribution per column;
    /// the result has the same layout.
    pub fn project_target(
        &self,
        rewards: &[f64],
        dones: &[bool],
        next_dists: &DMatrix<f64>,
        discount: f64,
    ) -> Result<DMatrix<f64>> {
        let batch = rewards.len();
        if dones.len() != batch || next_dists.ncols() != batch || next_dists.nrows() != self.num_atoms {
            return Err(Error::invalid("projection inputs disagree in shape"));
        }
        let mut out = DMatrix::zeros(self.num_atoms, batch);
        for b in 0..batch {
            let mut row = vec![0.0; self.num_atoms];
            if dones[b] {
                self.deposit(&mut row, rewards[b], 1.0);
            } else {
                for (j, &z) in self.atoms.iter().enumerate() {
                    self.deposit(&mut row, rewards[b] + discount * z, next_dists[(j, b)]);
                }
            }
            out.column_mut(b).copy_from_slice(&row);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three() -> AtomSupport {
        AtomSupport::new(3, -1.0, 1.0).unwrap()
    }

    #[test]
    fn atoms_are_evenly_spaced() {
        let s = AtomSupport::new(51, -2.0, 2.0).unwrap();
        assert_eq!(s.atoms()[0], -2.0);
        assert!((s.atoms()[50] - 2.0).abs() < 1e-12);
        assert!((s.delta_z() - 0.08).abs() < 1e-15);
        assert!(AtomSupport::new(1, 0.0, 1.0).is_err());
        assert!(AtomSupport::new(5, 1.0, 1.0).is_err());
    }

    #[test]
    fn aligned_projection_is_identity() {
        let next = DMatrix::from_column_slice(3, 1, &[0.2, 0.5, 0.3]);
        let t = three().project_target(&[0.0], &[false], &next, 1.0).unwrap();
        assert_eq!(t.as_slice(), &[0.2, 0.5, 0.3]);
    }

    #[test]
    fn terminal_mass_splits_between_atoms() {
        let next = DMatrix::from_column_slice(3, 1, &[0.2, 0.5, 0.3]);
        let t = three().project_target(&[0.5], &[true], &next, 0.99).unwrap();
        assert!((t[(0, 0)]).abs() < 1e-15);
        assert!((t[(1, 0)] - 0.5).abs() < 1e-15);
        assert!((t[(2, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn terminal_mass_is_clamped() {
        let next = DMatrix::from_column_slice(3, 1, &[0.2, 0.5, 0.3]);
        let t = three().project_target(&[5.0], &[true], &next, 0.99).unwrap();
        assert_eq!(t.as_slice(), &[0.0, 0.0, 1.0]);
    }
}
