//! Polytopic safe and target sets, the box input set, and the
//! trajectory-level reach-avoid constraint `F X ≤ h`.

use serde::{Deserialize, Serialize};

use crate::linops::{dot, LinalgError, Matrix};

#[derive(Debug, thiserror::Error)]
pub enum SetError {
    #[error("polytope has {f_rows} rows in f but {h_len} entries in h")]
    RowCount { f_rows: usize, h_len: usize },
    #[error("row {row} of the polytope is identically zero")]
    ZeroRow { row: usize },
    #[error("dimension mismatch: expected {expected}, got {found}")]
    Dimension { expected: usize, found: usize },
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("input bounds invalid at coordinate {index}: [{lo}, {hi}]")]
    BadBounds { index: usize, lo: f64, hi: f64 },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// `{x | f x ≤ h}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolytopeFile", into = "PolytopeFile")]
pub struct Polytope {
    f: Matrix,
    h: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PolytopeFile {
    f: Matrix,
    h: Vec<f64>,
}

impl TryFrom<PolytopeFile> for Polytope {
    type Error = SetError;

    fn try_from(p: PolytopeFile) -> Result<Self, SetError> {
        Polytope::new(p.f, p.h)
    }
}

impl From<Polytope> for PolytopeFile {
    fn from(p: Polytope) -> Self {
        PolytopeFile { f: p.f, h: p.h }
    }
}

impl Polytope {
    pub fn new(f: Matrix, h: Vec<f64>) -> Result<Self, SetError> {
        if f.rows() != h.len() {
            return Err(SetError::RowCount {
                f_rows: f.rows(),
                h_len: h.len(),
            });
        }
        if let Some(row) = f.row_iter().position(|r| r.iter().all(|v| *v == 0.0)) {
            return Err(SetError::ZeroRow { row });
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(SetError::Linalg(LinalgError::NonFinite { row: 0, col: 0 }));
        }
        Ok(Self { f, h })
    }

    /// Axis-aligned box `lo ≤ x ≤ hi`; infinite sides are omitted.
    pub fn from_bounds(lo: &[f64], hi: &[f64]) -> Result<Self, SetError> {
        if lo.len() != hi.len() {
            return Err(SetError::Dimension {
                expected: lo.len(),
                found: hi.len(),
            });
        }
        let d = lo.len();
        let mut f = Matrix::zeros(0, 0);
        let mut h = Vec::new();
        for k in 0..d {
            let mut e = vec![0.0; d];
            if hi[k].is_finite() {
                e[k] = 1.0;
                f.push_row(&e);
                h.push(hi[k]);
            }
            if lo[k].is_finite() {
                e[k] = -1.0;
                f.push_row(&e);
                h.push(-lo[k]);
            }
        }
        Self::new(f, h)
    }

    pub fn f(&self) -> &Matrix {
        &self.f
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }

    pub fn dim(&self) -> usize {
        self.f.cols()
    }

    pub fn num_rows(&self) -> usize {
        self.h.len()
    }

    /// Exact membership test `f x ≤ h`, no tolerance.
    pub fn contains(&self, x: &[f64]) -> Result<bool, SetError> {
        if x.len() != self.dim() {
            return Err(SetError::Dimension {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(self
            .f
            .row_iter()
            .zip(&self.h)
            .all(|(row, h)| dot(row, x) <= *h))
    }
}

/// Free function form of [`Polytope::contains`].
pub fn contains(p: &Polytope, x: &[f64]) -> Result<bool, SetError> {
    p.contains(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachAvoidSpec {
    pub safe: Polytope,
    pub target: Polytope,
    #[serde(rename = "N")]
    pub horizon: usize,
}

impl ReachAvoidSpec {
    pub fn new(safe: Polytope, target: Polytope, horizon: usize) -> Result<Self, SetError> {
        if horizon == 0 {
            return Err(SetError::ZeroHorizon);
        }
        if safe.dim() != target.dim() {
            return Err(SetError::Dimension {
                expected: safe.dim(),
                found: target.dim(),
            });
        }
        Ok(Self {
            safe,
            target,
            horizon,
        })
    }

    pub fn n_x(&self) -> usize {
        self.safe.dim()
    }

    /// `L = (N-1) l_S + l_T`.
    pub fn num_trajectory_rows(&self) -> usize {
        (self.horizon - 1) * self.safe.num_rows() + self.target.num_rows()
    }

    /// Per-step oracle: `x_t ∈ S` for `t < N` and `x_N ∈ T`, with `traj = [x_1..x_N]`.
    pub fn trajectory_satisfies(&self, traj: &[f64]) -> Result<bool, SetError> {
        let n_x = self.n_x();
        if traj.len() != n_x * self.horizon {
            return Err(SetError::Dimension {
                expected: n_x * self.horizon,
                found: traj.len(),
            });
        }
        for t in 0..self.horizon - 1 {
            if !self.safe.contains(&traj[t * n_x..(t + 1) * n_x])? {
                return Ok(false);
            }
        }
        self.target.contains(&traj[(self.horizon - 1) * n_x..])
    }
}

/// Product constraint over the stacked trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConstraint {
    pub f: Matrix,
    pub h: Vec<f64>,
}

impl TrajectoryConstraint {
    pub fn num_rows(&self) -> usize {
        self.h.len()
    }

    /// Exact `F X ≤ h`.
    pub fn contains(&self, traj: &[f64]) -> bool {
        self.f
            .row_iter()
            .zip(&self.h)
            .all(|(row, h)| dot(row, traj) <= *h)
    }
}

/// Block-diagonal `F` with `f_S` on steps `1..N-1` and `f_T` on step `N`.
pub fn build_trajectory_constraint(
    spec: &ReachAvoidSpec,
) -> Result<TrajectoryConstraint, SetError> {
    if spec.horizon == 0 {
        return Err(SetError::ZeroHorizon);
    }
    let n_x = spec.n_x();
    let rows = spec.num_trajectory_rows();
    let mut f = Matrix::zeros(rows, spec.horizon * n_x);
    let mut h = Vec::with_capacity(rows);
    let mut r = 0;
    for t in 0..spec.horizon {
        let set = if t + 1 == spec.horizon {
            &spec.target
        } else {
            &spec.safe
        };
        f.set_block(r, t * n_x, set.f());
        h.extend_from_slice(set.h());
        r += set.num_rows();
    }
    Ok(TrajectoryConstraint { f, h })
}

/// Axis-aligned bounds on the concatenated input `U` (length `N n_u`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl InputBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, SetError> {
        if lo.len() != hi.len() {
            return Err(SetError::Dimension {
                expected: lo.len(),
                found: hi.len(),
            });
        }
        for (index, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if l.is_nan() || h.is_nan() || l > h {
                return Err(SetError::BadBounds {
                    index,
                    lo: *l,
                    hi: *h,
                });
            }
        }
        Ok(Self { lo, hi })
    }

    /// Repeats per-step bounds over the horizon.
    pub fn per_step(lo: &[f64], hi: &[f64], horizon: usize) -> Result<Self, SetError> {
        Self::new(lo.repeat(horizon), hi.repeat(horizon))
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn is_bounded(&self) -> bool {
        self.lo.iter().chain(&self.hi).all(|v| v.is_finite())
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        u.len() == self.dim()
            && u.iter()
                .zip(&self.lo)
                .zip(&self.hi)
                .all(|((v, l), h)| l <= v && v <= h)
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| 0.5 * (l + h))
            .collect()
    }
}

/// Per-step input bounds as stored in the spec file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepBounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// The JSON spec file: `{"safe": .., "target": .., "N": .., "input_box": {"lo": .., "hi": ..}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecFile {
    pub safe: Polytope,
    pub target: Polytope,
    #[serde(rename = "N")]
    pub horizon: usize,
    pub input_box: StepBounds,
}

impl SpecFile {
    pub fn into_parts(self) -> Result<(ReachAvoidSpec, InputBox), SetError> {
        let input = InputBox::per_step(&self.input_box.lo, &self.input_box.hi, self.horizon)?;
        Ok((
            ReachAvoidSpec::new(self.safe, self.target, self.horizon)?,
            input,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_box(d: usize) -> Polytope {
        Polytope::from_bounds(&vec![-1.0; d], &vec![1.0; d]).unwrap()
    }

    #[test]
    fn box_membership() {
        let b = unit_box(2);
        assert!(b.contains(&[0.0, 0.0]).unwrap());
        assert!(!b.contains(&[2.0, 0.0]).unwrap());
        assert!(b.contains(&[1.0, -1.0]).unwrap());
        assert!(b.contains(&[0.0]).is_err());
    }

    #[test]
    fn zero_rows_are_rejected() {
        let f = Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]]).unwrap();
        assert!(matches!(
            Polytope::new(f, vec![1.0, 1.0]),
            Err(SetError::ZeroRow { row: 1 })
        ));
    }

    #[test]
    fn single_step_is_pure_target() {
        let safe = unit_box(1);
        let target = Polytope::new(Matrix::column(&[1.0]), vec![0.0]).unwrap();
        let spec = ReachAvoidSpec::new(safe, target.clone(), 1).unwrap();
        let c = build_trajectory_constraint(&spec).unwrap();
        assert_eq!(&c.f, target.f());
        assert_eq!(c.h, target.h());
    }

    #[test]
    fn scalar_three_step_assembly() {
        let safe = unit_box(1);
        let target = Polytope::new(Matrix::column(&[1.0]), vec![0.0]).unwrap();
        let spec = ReachAvoidSpec::new(safe, target, 3).unwrap();
        let c = build_trajectory_constraint(&spec).unwrap();
        assert_eq!(c.f.shape(), (5, 3));
        assert_eq!(c.h, vec![1.0, 1.0, 1.0, 1.0, 0.0]);
        let want = Matrix::from_rows(&[
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, -1.0, 0.0],
            [0.0, 0.0, 1.0],
        ])
        .unwrap();
        assert_eq!(c.f, want);
        assert_eq!(c.num_rows(), spec.num_trajectory_rows());
    }

    #[test]
    fn random_polytopes_match_inequality_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let d = rng.random_range(1..5);
            let m = rng.random_range(1..8);
            let rows: Vec<Vec<f64>> = (0..m)
                .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let h: Vec<f64> = (0..m).map(|_| rng.random_range(-0.2..1.0)).collect();
            let p = Polytope::new(Matrix::from_rows(&rows).unwrap(), h.clone()).unwrap();
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
            let mut scan = true;
            for (r, hv) in rows.iter().zip(&h) {
                let mut s = 0.0;
                for k in 0..d {
                    s += r[k] * x[k];
                }
                if s > *hv {
                    scan = false;
                }
            }
            assert_eq!(p.contains(&x).unwrap(), scan);
        }
    }

    proptest::proptest! {
        #[test]
        fn trajectory_rows_agree_with_per_step_checks(seed in 0u64..100_000, horizon in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let safe = Polytope::from_bounds(&[-1.0, -0.5], &[1.0, 0.7]).unwrap();
            let target = Polytope::new(
                Matrix::from_rows(&[[1.0, 1.0], [-1.0, 0.5], [0.0, -1.0]]).unwrap(),
                vec![0.5, 0.3, 0.4],
            ).unwrap();
            let spec = ReachAvoidSpec::new(safe, target, horizon).unwrap();
            let c = build_trajectory_constraint(&spec).unwrap();
            proptest::prop_assert_eq!(c.num_rows(), (horizon - 1) * 4 + 3);
            let traj: Vec<f64> = (0..2 * horizon).map(|_| rng.random_range(-1.2..1.2)).collect();
            proptest::prop_assert_eq!(c.contains(&traj), spec.trajectory_satisfies(&traj).unwrap());
        }
    }

    #[test]
    fn spec_file_round_trip() {
        let json = r#"{
            "safe": {"f": [[1.0], [-1.0]], "h": [1.0, 1.0]},
            "target": {"f": [[1.0]], "h": [0.0]},
            "N": 2,
            "input_box": {"lo": [-0.5], "hi": [0.5]}
        }"#;
        let file: SpecFile = serde_json::from_str(json).unwrap();
        let (spec, input) = file.into_parts().unwrap();
        assert_eq!(spec.horizon, 2);
        assert_eq!(input.lo, vec![-0.5, -0.5]);
        assert!(input.is_bounded());
    }
}
