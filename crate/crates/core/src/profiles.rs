//! Initial-data profiles on the grid.

use serde::{Deserialize, Serialize};

use crate::discretization::{Field, Grid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Profile {
    /// `amp Π_i sin(kπx_i/L)`
    Sine {
        k: usize,
        amp: f64,
    },
    /// Smooth compactly supported bump of height `amp` centred in the domain.
    Bump {
        amp: f64,
    },
    Constant {
        c: f64,
    },
}

impl Default for Profile {
    fn default() -> Self {
        Profile::Sine { k: 1, amp: 1.0 }
    }
}

impl Profile {
    pub fn zero() -> Self {
        Profile::Constant { c: 0.0 }
    }

    pub fn sample(&self, grid: &Grid) -> Field {
        let l = grid.length();
        match *self {
            Profile::Sine { k, amp } => {
                let w = k as f64 * std::f64::consts::PI / l;
                grid.sample(|x| amp * x.iter().map(|xi| (w * xi).sin()).product::<f64>())
            }
            Profile::Bump { amp } => grid.sample(|x| {
                let r2: f64 = x.iter().map(|xi| ((2.0 * xi - l) / l).powi(2)).sum::<f64>() / 0.64;
                if r2 < 1.0 {
                    amp * (1.0 - 1.0 / (1.0 - r2)).exp()
                } else {
                    0.0
                }
            }),
            Profile::Constant { c } => Field::constant(grid.node_count(), c),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_sample_expected_shapes() {
        let grid = Grid::unit_1d(3);
        let s = Profile::Sine { k: 1, amp: 2.0 }.sample(&grid);
        assert!((s[1] - 2.0).abs() < 1e-15);
        assert!((s[0] - s[2]).abs() < 1e-15);
        let b = Profile::Bump { amp: 1.5 }.sample(&grid);
        assert!((b[1] - 1.5).abs() < 1e-15);
        assert!(b[0] < b[1] && b[0] > 0.0);
        assert_eq!(Profile::Constant { c: 0.5 }.sample(&grid).0, vec![0.5; 3]);
        let g2 = Grid::new(2, 3, 1.0).unwrap();
        assert!((Profile::default().sample(&g2)[4] - 1.0).abs() < 1e-15);
    }
}
