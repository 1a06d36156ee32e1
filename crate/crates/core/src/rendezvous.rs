//! Planar spacecraft rendezvous in a circular orbit (Clohessy–Wiltshire–Hill
//! relative dynamics) with a line-of-sight cone as the safe set.
//!
//! State `(x, y, ẋ, ẏ)` in km and km/s, input thrust `(F_x, F_y)` in kN, mass
//! in kg, so `F / m` is an acceleration in km/s².

use serde::{Deserialize, Serialize};

use crate::linops::{expm, Matrix};
use crate::scenarios::NoiseModel;
use crate::sets::{InputBox, Polytope, ReachAvoidSpec, SetError, SpecFile, StepBounds};
use crate::system::{LtiSystem, SystemError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CwhConfig {
    pub mass_kg: f64,
    pub altitude_km: f64,
    pub sampling_period_s: f64,
    #[serde(rename = "N")]
    pub horizon: usize,
    pub mu_km3_s2: f64,
    pub earth_radius_km: f64,
    /// Disturbance covariance is `noise_scale * diag(noise_diag)`.
    pub noise_scale: f64,
    pub noise_diag: [f64; 4],
    pub x0: [f64; 4],
    pub input_lo: [f64; 2],
    pub input_hi: [f64; 2],
}

impl Default for CwhConfig {
    fn default() -> Self {
        Self {
            mass_kg: 300.0,
            altitude_km: 850.0,
            sampling_period_s: 20.0,
            horizon: 5,
            mu_km3_s2: 398_600.441_8,
            earth_radius_km: 6378.137,
            noise_scale: 1e-4,
            noise_diag: [1.0, 1.0, 5e-4, 5e-4],
            x0: [-0.75, -0.75, 0.0, 0.0],
            input_lo: [-0.1, -0.1],
            input_hi: [0.1, 0.1],
        }
    }
}

impl CwhConfig {
    /// Mean motion of the reference orbit, rad/s.
    pub fn omega(&self) -> f64 {
        let r0 = self.earth_radius_km + self.altitude_km;
        (self.mu_km3_s2 / (r0 * r0 * r0)).sqrt()
    }

    /// Continuous-time `(A_c, B_c)`.
    pub fn continuous(&self) -> (Matrix, Matrix) {
        let w = self.omega();
        let a = Matrix::from_rows(&[
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [3.0 * w * w, 0.0, 0.0, 2.0 * w],
            [0.0, 0.0, -2.0 * w, 0.0],
        ])
        .expect("finite");
        let im = 1.0 / self.mass_kg;
        let b = Matrix::from_rows(&[[0.0, 0.0], [0.0, 0.0], [im, 0.0], [0.0, im]]).expect("finite");
        (a, b)
    }

    pub fn noise(&self) -> NoiseModel {
        NoiseModel::GaussianDiag {
            mean: vec![0.0; 4],
            variance: self
                .noise_diag
                .iter()
                .map(|d| self.noise_scale * d)
                .collect(),
        }
    }

    pub fn input_box(&self) -> Result<InputBox, SetError> {
        InputBox::per_step(&self.input_lo, &self.input_hi, self.horizon)
    }

    pub fn spec_file(&self) -> SpecFile {
        SpecFile {
            safe: safe_set(),
            target: target_set(),
            horizon: self.horizon,
            input_box: StepBounds {
                lo: self.input_lo.to_vec(),
                hi: self.input_hi.to_vec(),
            },
        }
    }
}

/// Zero-order-hold discretization over the sampling period, from the
/// exponential of the augmented matrix `[A_c B_c; 0 0]`.
pub fn build_cwh_system(cfg: &CwhConfig) -> Result<LtiSystem, SystemError> {
    let (ac, bc) = cfg.continuous();
    let tau = cfg.sampling_period_s;
    let mut aug = Matrix::zeros(6, 6);
    aug.set_block(0, 0, &ac.scale(tau));
    aug.set_block(0, 4, &bc.scale(tau));
    let e = expm(&aug)?;
    LtiSystem::new(e.block(0, 0, 4, 4), e.block(0, 4, 4, 2))
}

/// Line-of-sight cone `|x| ≤ -y`, `y ≥ -1`, speeds at most 0.05 km/s.
pub fn safe_set() -> Polytope {
    let f = Matrix::from_rows(&[
        [1.0, 1.0, 0.0, 0.0],
        [-1.0, 1.0, 0.0, 0.0],
        [0.0, -1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, -1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [0.0, 0.0, 0.0, -1.0],
    ])
    .expect("finite");
    Polytope::new(f, vec![0.0, 0.0, 1.0, 0.05, 0.05, 0.05, 0.05]).expect("valid rows")
}

/// Docking box `|x| ≤ 0.1`, `-0.1 ≤ y ≤ 0` with relative speeds at most
/// 0.01 km/s.
pub fn target_set() -> Polytope {
    Polytope::from_bounds(&[-0.1, -0.1, -0.01, -0.01], &[0.1, 0.0, 0.01, 0.01])
        .expect("valid bounds")
}

/// The benchmark spec with the default horizon of five steps.
pub fn build_rendezvous_spec() -> ReachAvoidSpec {
    ReachAvoidSpec::new(safe_set(), target_set(), CwhConfig::default().horizon)
        .expect("consistent sets")
}
