//! Big-M mixed-integer programs over the concatenated input `U` and one
//! indicator per scenario (full problem) or per cell seed (partitioned
//! problem), and a deterministic branch-and-bound for them.
//!
//! Every indicator `i` owns the same row normals `a_ℓ = (F G_u)_ℓ`; only the
//! right-hand sides differ:
//!
//! ```text
//! a_ℓ · U ≤ rhs[i][ℓ] + M[i][ℓ] (1 - z_i),
//! rhs[i][ℓ] = h_ℓ - F_ℓ (G_x x0 + φ_i) - ε[i][ℓ].
//! ```

mod bnb;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::linops::{dot, LinalgError, Matrix};
use crate::partition::PartitionModel;
use crate::scenarios::{predict, ScenarioError, ScenarioSet};
use crate::sets::{InputBox, TrajectoryConstraint};
use crate::system::StackedSystem;

pub use bnb::{solve_milp, SolveOptions, SolveResult};

pub const DEFAULT_BIG_M_MARGIN: f64 = 1.0;

#[derive(Debug, thiserror::Error)]
pub enum MilpError {
    #[error("dimension mismatch in {what}: expected {expected}, got {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("input box must be bounded to derive big-M constants")]
    UnboundedBox,
    #[error("cell counts sum to {found}, expected {expected}")]
    AlphaSum { expected: usize, found: usize },
    #[error("partition has no buffers; compute them before building the program")]
    MissingBuffers,
    #[error("problem has no indicators")]
    Empty,
    #[error("root relaxation is infeasible (big-M constants too small?)")]
    RootInfeasible,
    #[error("LP oracle failed: {0}")]
    Lp(#[from] crate::linops::LpError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MilpProblem {
    /// Shared row normals, `L x n_c`.
    pub coeffs: Matrix,
    /// One row of right-hand sides per indicator, `n_bin x L`.
    pub rhs: Matrix,
    /// Per-row big-M constants, same shape as `rhs`.
    pub big_m: Matrix,
    /// Objective weight of each indicator; they sum to one.
    pub weights: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Common denominator of the weights (`1/K`) when they are all integer
    /// multiples of it; lets the search prune on the value grid.
    pub quantum: Option<f64>,
}

impl MilpProblem {
    pub fn n_continuous(&self) -> usize {
        self.coeffs.cols()
    }

    pub fn n_binary(&self) -> usize {
        self.weights.len()
    }

    pub fn rows_per_binary(&self) -> usize {
        self.coeffs.rows()
    }

    /// Exact indicator values at `u`: `z_i = 1` iff every row of `i` holds.
    pub fn satisfied(&self, u: &[f64]) -> Vec<bool> {
        let act: Vec<f64> = self.coeffs.row_iter().map(|a| dot(a, u)).collect();
        self.rhs
            .row_iter()
            .map(|r| act.iter().zip(r).all(|(a, b)| a <= b))
            .collect()
    }

    /// Total weight of the set indicators. With a quantum `1/K` the value is
    /// computed as an integer count over `K`, so `9` of `10` prints as `0.9`.
    pub fn value_of(&self, z: &[bool]) -> f64 {
        if let Some(q) = self.quantum.filter(|q| *q > 0.0) {
            let units: Option<f64> = z
                .iter()
                .zip(&self.weights)
                .filter(|(z, _)| **z)
                .map(|(_, w)| {
                    let u = (w / q).round();
                    ((w / q - u).abs() < 1e-9).then_some(u)
                })
                .sum();
            let denom = (1.0 / q).round();
            if let Some(units) = units {
                if ((1.0 / q) - denom).abs() < 1e-9 {
                    return units / denom;
                }
            }
        }
        z.iter()
            .zip(&self.weights)
            .filter(|(z, _)| **z)
            .map(|(_, w)| w)
            .sum()
    }

    /// Plain-text dump in the LP file layout understood by common MILP
    /// solvers. Variables are `u<k>` and `z<i>`; rows are `c<i>_<ℓ>`.
    pub fn write_lp<W: Write>(&self, mut out: W) -> Result<(), MilpError> {
        writeln!(out, "\\ big-M reach-avoid program")?;
        writeln!(out, "Maximize")?;
        write!(out, " obj:")?;
        for (i, w) in self.weights.iter().enumerate() {
            write!(out, " + {w:e} z{i}")?;
        }
        writeln!(out)?;
        writeln!(out, "Subject To")?;
        for i in 0..self.n_binary() {
            for (l, a) in self.coeffs.row_iter().enumerate() {
                let m = self.big_m[(i, l)];
                write!(out, " c{i}_{l}:")?;
                for (k, v) in a.iter().enumerate() {
                    if *v != 0.0 {
                        write!(
                            out,
                            " {} {:e} u{k}",
                            if *v < 0.0 { "-" } else { "+" },
                            v.abs()
                        )?;
                    }
                }
                writeln!(out, " + {m:e} z{i} <= {:e}", self.rhs[(i, l)] + m)?;
            }
        }
        writeln!(out, "Bounds")?;
        for (k, (l, h)) in self.lower.iter().zip(&self.upper).enumerate() {
            writeln!(out, " {l:e} <= u{k} <= {h:e}")?;
        }
        writeln!(out, "Binary")?;
        for i in 0..self.n_binary() {
            writeln!(out, " z{i}")?;
        }
        writeln!(out, "End")?;
        Ok(())
    }
}

/// `M[i][ℓ] = max(0, max_{U ∈ box} a_ℓ·U − rhs[i][ℓ]) + margin`, with the
/// box maximum in closed form (`a·c + Σ |a_k| r_k`).
pub fn compute_big_m(
    coeffs: &Matrix,
    rhs: &Matrix,
    input: &InputBox,
    margin: f64,
) -> Result<Matrix, MilpError> {
    if !input.is_bounded() {
        return Err(MilpError::UnboundedBox);
    }
    if input.dim() != coeffs.cols() {
        return Err(MilpError::Dimension {
            what: "input box",
            expected: coeffs.cols(),
            found: input.dim(),
        });
    }
    let center = input.center();
    let support: Vec<f64> = coeffs
        .row_iter()
        .map(|a| {
            let spread: f64 = a
                .iter()
                .zip(input.lo.iter().zip(&input.hi))
                .map(|(v, (l, h))| v.abs() * 0.5 * (h - l))
                .sum();
            dot(a, &center) + spread
        })
        .collect();
    let mut m = Matrix::zeros(rhs.rows(), rhs.cols());
    for i in 0..rhs.rows() {
        for (l, s) in support.iter().enumerate() {
            m[(i, l)] = (s - rhs[(i, l)]).max(0.0) + margin;
        }
    }
    Ok(m)
}

fn check_common(
    stacked: &StackedSystem,
    tc: &TrajectoryConstraint,
    x0: &[f64],
    input: &InputBox,
) -> Result<(), MilpError> {
    let check = |what, expected, found| {
        if expected != found {
            Err(MilpError::Dimension {
                what,
                expected,
                found,
            })
        } else {
            Ok(())
        }
    };
    check("x0", stacked.n_x(), x0.len())?;
    check("constraint columns", stacked.gx.rows(), tc.f.cols())?;
    check("input box", stacked.gu.cols(), input.dim())
}

/// Rows for offsets `φ_i` (one per row of `offsets`), optionally tightened
/// by `buffers` (same shape as the result).
#[allow(clippy::too_many_arguments)]
fn assemble(
    stacked: &StackedSystem,
    tc: &TrajectoryConstraint,
    x0: &[f64],
    offsets: &Matrix,
    buffers: Option<&Matrix>,
    weights: Vec<f64>,
    quantum: f64,
    input: &InputBox,
) -> Result<MilpProblem, MilpError> {
    if offsets.rows() == 0 {
        return Err(MilpError::Empty);
    }
    let coeffs = tc.f.matmul(&stacked.gu)?;
    let free = stacked.gx.mul_vec(x0)?;
    let l_rows = tc.num_rows();
    let mut rhs = Matrix::zeros(offsets.rows(), l_rows);
    let mut traj = vec![0.0; free.len()];
    for i in 0..offsets.rows() {
        for ((t, a), b) in traj.iter_mut().zip(&free).zip(offsets.row(i)) {
            *t = a + b;
        }
        for (l, frow) in tc.f.row_iter().enumerate() {
            let eps = buffers.map_or(0.0, |b| b[(i, l)]);
            rhs[(i, l)] = tc.h[l] - dot(frow, &traj) - eps;
        }
    }
    let big_m = compute_big_m(&coeffs, &rhs, input, DEFAULT_BIG_M_MARGIN)?;
    Ok(MilpProblem {
        coeffs,
        rhs,
        big_m,
        weights,
        lower: input.lo.clone(),
        upper: input.hi.clone(),
        quantum: Some(quantum),
    })
}

/// The sampled program over all `K` scenarios, weights `1/K`.
pub fn build_full(
    stacked: &StackedSystem,
    tc: &TrajectoryConstraint,
    x0: &[f64],
    scenarios: &ScenarioSet,
    input: &InputBox,
) -> Result<MilpProblem, MilpError> {
    check_common(stacked, tc, x0, input)?;
    let phi = predict(scenarios, &stacked.gw)?;
    let k = phi.len();
    assemble(
        stacked,
        tc,
        x0,
        &phi.phi,
        None,
        vec![1.0 / k as f64; k],
        1.0 / k as f64,
        input,
    )
}

/// The program over cell seeds with buffered rows and weights `α_j / K`.
pub fn build_partitioned(
    stacked: &StackedSystem,
    tc: &TrajectoryConstraint,
    x0: &[f64],
    model: &PartitionModel,
    input: &InputBox,
) -> Result<MilpProblem, MilpError> {
    check_common(stacked, tc, x0, input)?;
    let k: usize = model.alpha.iter().sum();
    if k != model.num_points() {
        return Err(MilpError::AlphaSum {
            expected: model.num_points(),
            found: k,
        });
    }
    if model.buffers.shape() != (model.num_cells(), tc.num_rows()) {
        return Err(MilpError::MissingBuffers);
    }
    let weights = model.alpha.iter().map(|&a| a as f64 / k as f64).collect();
    assemble(
        stacked,
        tc,
        x0,
        &model.seeds,
        Some(&model.buffers),
        weights,
        1.0 / k as f64,
        input,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn big_m_closed_form() {
        let coeffs = Matrix::from_rows(&[[1.0, 1.0], [0.0, 0.0]]).unwrap();
        let rhs = Matrix::from_rows(&[[0.0, -0.5], [1.0, 2.0]]).unwrap();
        let b = InputBox::new(vec![-0.1, -0.1], vec![0.1, 0.1]).unwrap();
        let m = compute_big_m(&coeffs, &rhs, &b, 1.0).unwrap();
        assert!((m[(0, 0)] - 1.2).abs() < 1e-15);
        assert_eq!(m[(0, 1)], 1.5);
        assert_eq!(m[(1, 0)], 1.0);
        assert_eq!(m[(1, 1)], 1.0);
        let open = InputBox::new(vec![f64::NEG_INFINITY, 0.0], vec![0.0, 1.0]).unwrap();
        assert!(matches!(
            compute_big_m(&coeffs, &rhs, &open, 1.0),
            Err(MilpError::UnboundedBox)
        ));
    }

    #[test]
    fn big_m_dominates_sampled_violations() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let coeffs =
                Matrix::new(6, 3, (0..18).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let rhs =
                Matrix::new(4, 6, (0..24).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap();
            let b = InputBox::new(vec![-1.0, 0.0, -0.2], vec![0.5, 2.0, 0.2]).unwrap();
            let m = compute_big_m(&coeffs, &rhs, &b, 0.0).unwrap();
            for _ in 0..10_000 {
                let u: Vec<f64> = (0..3)
                    .map(|k| rng.random_range(b.lo[k]..=b.hi[k]))
                    .collect();
                for i in 0..4 {
                    for (l, a) in coeffs.row_iter().enumerate() {
                        assert!(dot(a, &u) - rhs[(i, l)] <= m[(i, l)] + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn lp_dump_layout() {
        let p = MilpProblem {
            coeffs: Matrix::from_rows(&[[1.0, -2.0]]).unwrap(),
            rhs: Matrix::from_rows(&[[0.5], [0.25]]).unwrap(),
            big_m: Matrix::from_rows(&[[1.0], [1.0]]).unwrap(),
            weights: vec![0.5, 0.5],
            lower: vec![-1.0, -1.0],
            upper: vec![1.0, 1.0],
            quantum: Some(0.5),
        };
        let mut buf = Vec::new();
        p.write_lp(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("Maximize"));
        assert!(text.contains(" c1_0: + 1e0 u0 - 2e0 u1 + 1e0 z1 <= 1.25e0"));
        assert!(text.trim_end().ends_with("End"));
    }

    #[test]
    fn exact_satisfaction() {
        let p = MilpProblem {
            coeffs: Matrix::from_rows(&[[1.0], [-1.0]]).unwrap(),
            rhs: Matrix::from_rows(&[[0.5, 0.5], [0.0, 1.0]]).unwrap(),
            big_m: Matrix::zeros(2, 2),
            weights: vec![0.5, 0.5],
            lower: vec![-1.0],
            upper: vec![1.0],
            quantum: Some(0.5),
        };
        assert_eq!(p.satisfied(&[0.0]), vec![true, true]);
        assert_eq!(p.satisfied(&[0.5]), vec![true, false]);
        assert_eq!(p.satisfied(&[-0.75]), vec![false, true]);
        assert_eq!(p.value_of(&[true, false]), 0.5);
    }
}
