//! Discrete-time LTI dynamics `x_{t+1} = A x_t + B u_t + w_t` and their
//! horizon-level stacked form `X = G_x x0 + G_u U + G_w W` with
//! `X = [x_1; ...; x_N]`.

use serde::{Deserialize, Serialize};

use crate::linops::{matmul, LinalgError, Matrix};

#[derive(Debug, thiserror::Error)]
pub enum SystemError {
    #[error("A must be square, got {rows}x{cols}")]
    NonSquareA { rows: usize, cols: usize },
    #[error("B has {b_rows} rows but A is {n_x}x{n_x}")]
    InputRows { b_rows: usize, n_x: usize },
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("{what}: expected length {expected}, got {found}")]
    Length {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LtiSystemFile", into = "LtiSystemFile")]
pub struct LtiSystem {
    a: Matrix,
    b: Matrix,
}

/// On-disk layout: `{"A": [[..]], "B": [[..]]}`.
#[derive(Serialize, Deserialize)]
struct LtiSystemFile {
    #[serde(rename = "A")]
    a: Matrix,
    #[serde(rename = "B")]
    b: Matrix,
}

impl TryFrom<LtiSystemFile> for LtiSystem {
    type Error = SystemError;

    fn try_from(f: LtiSystemFile) -> Result<Self, Self::Error> {
        LtiSystem::new(f.a, f.b)
    }
}

impl From<LtiSystem> for LtiSystemFile {
    fn from(s: LtiSystem) -> Self {
        LtiSystemFile { a: s.a, b: s.b }
    }
}

impl LtiSystem {
    pub fn new(a: Matrix, b: Matrix) -> Result<Self, SystemError> {
        if a.rows() != a.cols() {
            return Err(SystemError::NonSquareA {
                rows: a.rows(),
                cols: a.cols(),
            });
        }
        if b.rows() != a.rows() {
            return Err(SystemError::InputRows {
                b_rows: b.rows(),
                n_x: a.rows(),
            });
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn n_x(&self) -> usize {
        self.a.rows()
    }

    pub fn n_u(&self) -> usize {
        self.b.cols()
    }

    /// One step of the recursion.
    pub fn step(&self, x: &[f64], u: &[f64], w: &[f64]) -> Result<Vec<f64>, SystemError> {
        check_len("state", self.n_x(), x.len())?;
        check_len("input", self.n_u(), u.len())?;
        check_len("disturbance", self.n_x(), w.len())?;
        let ax = self.a.mul_vec(x)?;
        let bu = self.b.mul_vec(u)?;
        Ok(ax
            .iter()
            .zip(&bu)
            .zip(w)
            .map(|((a, b), w)| a + b + w)
            .collect())
    }
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<(), SystemError> {
    if expected != found {
        return Err(SystemError::Length {
            what,
            expected,
            found,
        });
    }
    Ok(())
}

/// Runs the recursion from `x0` and returns the concatenated states
/// `[x_1, ..., x_N]`. `u` and `w` are the concatenated inputs and
/// disturbances; `N` is implied by their lengths.
pub fn propagate(
    sys: &LtiSystem,
    x0: &[f64],
    u: &[f64],
    w: &[f64],
) -> Result<Vec<f64>, SystemError> {
    let (n_x, n_u) = (sys.n_x(), sys.n_u());
    check_len("x0", n_x, x0.len())?;
    let horizon = w.len().checked_div(n_x).unwrap_or(0);
    check_len("disturbance trajectory", horizon * n_x, w.len())?;
    check_len("input trajectory", horizon * n_u, u.len())?;
    let mut out = Vec::with_capacity(horizon * n_x);
    let mut x = x0.to_vec();
    for t in 0..horizon {
        x = sys.step(&x, &u[t * n_u..(t + 1) * n_u], &w[t * n_x..(t + 1) * n_x])?;
        out.extend_from_slice(&x);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedSystem {
    pub gx: Matrix,
    pub gu: Matrix,
    pub gw: Matrix,
    pub horizon: usize,
}

impl StackedSystem {
    pub fn n_x(&self) -> usize {
        self.gx.cols()
    }

    pub fn n_u(&self) -> usize {
        self.gu.cols() / self.horizon
    }

    /// `G_x x0 + G_u U`, the disturbance-free part of the trajectory.
    pub fn nominal(&self, x0: &[f64], u: &[f64]) -> Result<Vec<f64>, SystemError> {
        let gx = self.gx.mul_vec(x0)?;
        let gu = self.gu.mul_vec(u)?;
        Ok(gx.iter().zip(&gu).map(|(a, b)| a + b).collect())
    }

    pub fn trajectory(&self, x0: &[f64], u: &[f64], w: &[f64]) -> Result<Vec<f64>, SystemError> {
        let nominal = self.nominal(x0, u)?;
        let gw = self.gw.mul_vec(w)?;
        Ok(nominal.iter().zip(&gw).map(|(a, b)| a + b).collect())
    }
}

/// Builds `G_x`, `G_u`, `G_w` for horizon `horizon`.
///
/// Block row `t` (1-based) of `G_x` is `A^t`; block `(t, s)` of `G_u` is
/// `A^{t-s-1} B` for `s < t` and zero otherwise; `G_w` has the same pattern
/// with `B` replaced by the identity.
pub fn stack(sys: &LtiSystem, horizon: usize) -> Result<StackedSystem, SystemError> {
    if horizon == 0 {
        return Err(SystemError::ZeroHorizon);
    }
    let (n_x, n_u) = (sys.n_x(), sys.n_u());
    let mut powers = Vec::with_capacity(horizon + 1);
    powers.push(Matrix::identity(n_x));
    for t in 1..=horizon {
        powers.push(matmul(&powers[t - 1], sys.a())?);
    }
    let mut gx = Matrix::zeros(horizon * n_x, n_x);
    let mut gu = Matrix::zeros(horizon * n_x, horizon * n_u);
    let mut gw = Matrix::zeros(horizon * n_x, horizon * n_x);
    let apb: Vec<Matrix> = powers
        .iter()
        .map(|p| matmul(p, sys.b()))
        .collect::<Result<_, _>>()?;
    for t in 1..=horizon {
        let r0 = (t - 1) * n_x;
        gx.set_block(r0, 0, &powers[t]);
        for s in 0..t {
            gu.set_block(r0, s * n_u, &apb[t - s - 1]);
            gw.set_block(r0, s * n_x, &powers[t - s - 1]);
        }
    }
    Ok(StackedSystem {
        gx,
        gu,
        gw,
        horizon,
    })
}
