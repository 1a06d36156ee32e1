//! Disturbance scenarios: sampling, the prediction map, and the Hoeffding
//! sample-size certificate.

use std::io::{Read, Write};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::linops::{cholesky, LinalgError, Matrix};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("violation parameter delta must lie in (0, 1], got {0}")]
    Delta(f64),
    #[error("risk of failure beta must lie in (0, 1], got {0}")]
    Beta(f64),
    #[error(
        "covariance is not symmetric positive semidefinite (min eigenvalue {min_eigenvalue:e})"
    )]
    NotPsd { min_eigenvalue: f64 },
    #[error("noise model is inconsistent: {0}")]
    BadNoise(String),
    #[error("scenario count and horizon must be at least 1")]
    Empty,
    #[error("dimension mismatch: expected {expected}, got {found}")]
    Dimension { expected: usize, found: usize },
    #[error("malformed scenario CSV: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Distribution of a single-step disturbance `w_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    GaussianDiag {
        mean: Vec<f64>,
        variance: Vec<f64>,
    },
    GaussianFull {
        mean: Vec<f64>,
        covariance: Matrix,
    },
    /// Uniform resampling of the rows of an empirical table.
    CustomTable {
        samples: Matrix,
    },
}

impl NoiseModel {
    pub fn dim(&self) -> usize {
        match self {
            NoiseModel::GaussianDiag { mean, .. } | NoiseModel::GaussianFull { mean, .. } => {
                mean.len()
            }
            NoiseModel::CustomTable { samples } => samples.cols(),
        }
    }

    pub fn covariance(&self) -> Matrix {
        match self {
            NoiseModel::GaussianDiag { variance, .. } => Matrix::diag(variance),
            NoiseModel::GaussianFull { covariance, .. } => covariance.clone(),
            NoiseModel::CustomTable { samples } => {
                let (n, d) = samples.shape();
                let mean: Vec<f64> = (0..d)
                    .map(|j| samples.col_vec(j).iter().sum::<f64>() / n as f64)
                    .collect();
                let mut c = Matrix::zeros(d, d);
                for r in samples.row_iter() {
                    for i in 0..d {
                        for j in 0..d {
                            c[(i, j)] += (r[i] - mean[i]) * (r[j] - mean[j]) / n as f64;
                        }
                    }
                }
                c
            }
        }
    }
}

/// Precomputed per-draw transform.
enum Sampler<'a> {
    Gaussian { mean: &'a [f64], factor: Matrix },
    Table(&'a Matrix),
}

impl<'a> Sampler<'a> {
    fn new(noise: &'a NoiseModel) -> Result<Self, ScenarioError> {
        match noise {
            NoiseModel::GaussianDiag { mean, variance } => {
                if mean.len() != variance.len() {
                    return Err(ScenarioError::BadNoise(
                        "mean and variance lengths differ".into(),
                    ));
                }
                if let Some(v) = variance
                    .iter()
                    .find(|v| v.is_nan() || **v < 0.0 || !v.is_finite())
                {
                    return Err(ScenarioError::NotPsd { min_eigenvalue: *v });
                }
                let sd: Vec<f64> = variance.iter().map(|v| v.sqrt()).collect();
                Ok(Sampler::Gaussian {
                    mean,
                    factor: Matrix::diag(&sd),
                })
            }
            NoiseModel::GaussianFull { mean, covariance } => {
                if covariance.shape() != (mean.len(), mean.len()) {
                    return Err(ScenarioError::BadNoise(
                        "covariance shape does not match mean".into(),
                    ));
                }
                Ok(Sampler::Gaussian {
                    mean,
                    factor: psd_factor(covariance)?,
                })
            }
            NoiseModel::CustomTable { samples } => {
                if samples.rows() == 0 {
                    return Err(ScenarioError::BadNoise("empty sample table".into()));
                }
                Ok(Sampler::Table(samples))
            }
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng, out: &mut Vec<f64>) {
        match self {
            Sampler::Gaussian { mean, factor } => {
                let z: Vec<f64> = (0..mean.len())
                    .map(|_| rng.sample(StandardNormal))
                    .collect();
                for (i, m) in mean.iter().enumerate() {
                    let row = factor.row(i);
                    out.push(m + row.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>());
                }
            }
            Sampler::Table(t) => {
                let r = rng.random_range(0..t.rows());
                out.extend_from_slice(t.row(r));
            }
        }
    }
}

/// `L` with `L L^T = cov`: Cholesky when positive definite, otherwise a
/// symmetric eigendecomposition with negligible negative eigenvalues clipped.
pub fn psd_factor(cov: &Matrix) -> Result<Matrix, ScenarioError> {
    let n = cov.rows();
    let scale = cov.max_abs().max(f64::MIN_POSITIVE);
    if !cov.is_symmetric(1e-12 * scale) {
        return Err(ScenarioError::BadNoise(
            "covariance is not symmetric".into(),
        ));
    }
    if let Ok(l) = cholesky(cov) {
        return Ok(l);
    }
    let dm = DMatrix::from_row_slice(n, n, cov.as_slice());
    let eig = SymmetricEigen::new(dm);
    let min = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if min < -1e-10 * scale {
        return Err(ScenarioError::NotPsd {
            min_eigenvalue: min,
        });
    }
    let mut f = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            f[(i, j)] = eig.eigenvectors[(i, j)] * eig.eigenvalues[j].max(0.0).sqrt();
        }
    }
    Ok(f)
}

/// `K` concatenated disturbance trajectories, one per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSet {
    pub w: Matrix,
    pub rng_seed: u64,
    pub horizon: usize,
    pub n_x: usize,
}

impl ScenarioSet {
    pub fn len(&self) -> usize {
        self.w.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.w.rows() == 0
    }

    pub fn scenario(&self, i: usize) -> &[f64] {
        self.w.row(i)
    }

    /// CSV with header `w_t_j` (step `t`, coordinate `j`).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), ScenarioError> {
        let mut wtr = csv::Writer::from_writer(out);
        let header =
            (0..self.horizon).flat_map(|t| (0..self.n_x).map(move |j| format!("w_{t}_{j}")));
        wtr.write_record(header).map_err(csv_err)?;
        for r in self.w.row_iter() {
            wtr.write_record(r.iter().map(|v| format!("{v:e}")))
                .map_err(csv_err)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(
        input: R,
        horizon: usize,
        n_x: usize,
        rng_seed: u64,
    ) -> Result<Self, ScenarioError> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(input);
        let width = rdr.headers().map_err(csv_err)?.len();
        if width != horizon * n_x {
            return Err(ScenarioError::Csv(format!(
                "header has {width} columns, expected {}",
                horizon * n_x
            )));
        }
        let mut w = Matrix::zeros(0, horizon * n_x);
        for row in rdr.deserialize::<Vec<f64>>() {
            w.push_row(&row.map_err(csv_err)?);
        }
        Ok(Self {
            w,
            rng_seed,
            horizon,
            n_x,
        })
    }
}

fn csv_err(e: csv::Error) -> ScenarioError {
    ScenarioError::Csv(e.to_string())
}

/// Metadata sidecar written next to the scenario CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMetadata {
    pub seed: u64,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "N")]
    pub horizon: usize,
    pub n_x: usize,
    pub noise: NoiseModel,
}

/// Draws `k` i.i.d. trajectories of `horizon` steps.
///
/// Scenario `i` uses its own ChaCha8 stream (`seed`, stream `i`), so the first
/// rows do not change when `k` grows.
pub fn sample(
    noise: &NoiseModel,
    horizon: usize,
    k: usize,
    seed: u64,
) -> Result<ScenarioSet, ScenarioError> {
    if k == 0 || horizon == 0 {
        return Err(ScenarioError::Empty);
    }
    let sampler = Sampler::new(noise)?;
    let n_x = noise.dim();
    let mut data = Vec::with_capacity(k * horizon * n_x);
    for i in 0..k {
        let mut rng = scenario_rng(seed, i as u64);
        for _ in 0..horizon {
            sampler.draw(&mut rng, &mut data);
        }
    }
    Ok(ScenarioSet {
        w: Matrix::new(k, horizon * n_x, data)?,
        rng_seed: seed,
        horizon,
        n_x,
    })
}

pub(crate) fn scenario_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seed for the `index`-th independent run derived from a master seed.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    const SALT: u64 = 0xd1b5_4a32_d192_ed03;
    scenario_rng(master ^ SALT, index).random()
}

/// Images of the scenarios under the prediction map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub phi: Matrix,
}

impl PredictionSet {
    pub fn len(&self) -> usize {
        self.phi.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.rows() == 0
    }
}

/// Row-wise `G_w W^(i)`.
pub fn predict(ss: &ScenarioSet, gw: &Matrix) -> Result<PredictionSet, ScenarioError> {
    if gw.cols() != ss.w.cols() {
        return Err(ScenarioError::Dimension {
            expected: gw.cols(),
            found: ss.w.cols(),
        });
    }
    let mut phi = Matrix::zeros(ss.len(), gw.rows());
    for i in 0..ss.len() {
        let img = gw.mul_vec(ss.w.row(i))?;
        phi.row_mut(i).copy_from_slice(&img);
    }
    Ok(PredictionSet { phi })
}

/// Row-wise `G_x x0^(i) + G_w W^(i)` for an uncertain initial state, where
/// `initial` holds one sampled `x0` per scenario.
pub fn predict_with_initial(
    ss: &ScenarioSet,
    gx: &Matrix,
    initial: &Matrix,
    gw: &Matrix,
) -> Result<PredictionSet, ScenarioError> {
    if initial.rows() != ss.len() {
        return Err(ScenarioError::Dimension {
            expected: ss.len(),
            found: initial.rows(),
        });
    }
    let mut p = predict(ss, gw)?;
    for i in 0..ss.len() {
        let shift = gx.mul_vec(initial.row(i))?;
        for (v, s) in p.phi.row_mut(i).iter_mut().zip(shift) {
            *v += s;
        }
    }
    Ok(p)
}

/// Violation parameter and risk of failure of the sample-size certificate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoeffdingQuery {
    delta: f64,
    beta: f64,
}

impl HoeffdingQuery {
    pub fn new(delta: f64, beta: f64) -> Result<Self, ScenarioError> {
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(ScenarioError::Delta(delta));
        }
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(ScenarioError::Beta(beta));
        }
        Ok(Self { delta, beta })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

/// Smallest `K ≥ 1` with `K ≥ -ln(beta) / (2 delta^2)`.
pub fn required_scenarios(q: &HoeffdingQuery) -> usize {
    let bound = -q.beta.ln() / (2.0 * q.delta * q.delta);
    (bound.ceil() as usize).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k(delta: f64, beta: f64) -> usize {
        required_scenarios(&HoeffdingQuery::new(delta, beta).unwrap())
    }

    #[test]
    fn hoeffding_counts() {
        assert_eq!(k(0.05, 0.01), 922);
        assert_eq!(k(0.01, 0.01), 23026);
        assert_eq!(k(1.0, 1.0), 1);
        assert!(HoeffdingQuery::new(0.0, 0.5).is_err());
        assert!(HoeffdingQuery::new(0.5, 0.0).is_err());
        assert!(HoeffdingQuery::new(1.5, 0.5).is_err());
    }

    proptest::proptest! {
        #[test]
        fn hoeffding_is_nonincreasing(d1 in 0.001f64..1.0, d2 in 0.001f64..1.0, b1 in 0.001f64..1.0, b2 in 0.001f64..1.0) {
            let (dl, dh) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            let (bl, bh) = if b1 <= b2 { (b1, b2) } else { (b2, b1) };
            proptest::prop_assert!(k(dl, bl) >= k(dh, bl));
            proptest::prop_assert!(k(dl, bl) >= k(dl, bh));
        }
    }

    fn cwh_like_noise() -> NoiseModel {
        NoiseModel::GaussianDiag {
            mean: vec![0.0; 4],
            variance: vec![1e-4, 1e-4, 5e-8, 5e-8],
        }
    }

    #[test]
    fn zero_covariance_gives_the_mean() {
        let noise = NoiseModel::GaussianFull {
            mean: vec![1.0, -2.0],
            covariance: Matrix::zeros(2, 2),
        };
        let s = sample(&noise, 3, 5, 1).unwrap();
        for r in s.w.row_iter() {
            assert_eq!(r, &[1.0, -2.0, 1.0, -2.0, 1.0, -2.0]);
        }
    }

    #[test]
    fn sampling_is_deterministic_and_prefix_stable() {
        let noise = cwh_like_noise();
        let a = sample(&noise, 5, 20, 42).unwrap();
        let b = sample(&noise, 5, 20, 42).unwrap();
        assert_eq!(a, b);
        let longer = sample(&noise, 5, 30, 42).unwrap();
        for i in 0..20 {
            assert_eq!(a.scenario(i), longer.scenario(i));
        }
        assert_ne!(a, sample(&noise, 5, 20, 43).unwrap());
    }

    #[test]
    fn sample_mean_within_clt_band() {
        let noise = cwh_like_noise();
        let k = 100_000;
        let s = sample(&noise, 1, k, 9).unwrap();
        let var: [f64; 4] = [1e-4, 1e-4, 5e-8, 5e-8];
        for j in 0..4 {
            let mean = s.w.col_vec(j).iter().sum::<f64>() / k as f64;
            let band = 3.0 * var[j].sqrt() / (k as f64).sqrt();
            assert!(mean.abs() <= band, "coordinate {j}: {mean} vs {band}");
        }
    }

    #[test]
    fn sample_covariance_matches_model() {
        let cov =
            Matrix::from_rows(&[[2.0, 0.6, 0.0], [0.6, 1.0, -0.3], [0.0, -0.3, 0.5]]).unwrap();
        let noise = NoiseModel::GaussianFull {
            mean: vec![0.0; 3],
            covariance: cov.clone(),
        };
        let s = sample(&noise, 1, 100_000, 3).unwrap();
        let emp = NoiseModel::CustomTable { samples: s.w }.covariance();
        let err = emp.sub(&cov).unwrap().frobenius_norm() / cov.frobenius_norm();
        assert!(err < 0.1, "relative error {err}");
    }

    #[test]
    fn semidefinite_covariance_uses_eigen_fallback() {
        let cov = Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        let f = psd_factor(&cov).unwrap();
        let back = crate::linops::matmul(&f, &f.transpose()).unwrap();
        assert!(back.sub(&cov).unwrap().max_abs() < 1e-12);
        let bad = Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]).unwrap();
        assert!(matches!(
            psd_factor(&bad),
            Err(ScenarioError::NotPsd { .. })
        ));
        let noise = NoiseModel::GaussianDiag {
            mean: vec![0.0],
            variance: vec![-1.0],
        };
        assert!(sample(&noise, 1, 1, 0).is_err());
    }

    #[test]
    fn custom_table_resamples_rows() {
        let table = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let s = sample(
            &NoiseModel::CustomTable {
                samples: table.clone(),
            },
            2,
            50,
            0,
        )
        .unwrap();
        for r in s.w.row_iter() {
            for t in 0..2 {
                let step = &r[2 * t..2 * t + 2];
                assert!(step == table.row(0) || step == table.row(1));
            }
        }
    }

    #[test]
    fn prediction_map() {
        let noise = cwh_like_noise();
        let s = sample(&noise, 2, 7, 5).unwrap();
        let id = predict(&s, &Matrix::identity(8)).unwrap();
        assert_eq!(id.phi, s.w);

        let zero = ScenarioSet {
            w: Matrix::zeros(3, 8),
            rng_seed: 0,
            horizon: 2,
            n_x: 4,
        };
        let g = Matrix::new(8, 8, (0..64).map(|v| v as f64).collect()).unwrap();
        assert_eq!(predict(&zero, &g).unwrap().phi.max_abs(), 0.0);

        let p = predict(&s, &g).unwrap();
        for i in 0..s.len() {
            for r in 0..8 {
                let mut acc = 0.0;
                for c in 0..8 {
                    acc += g[(r, c)] * s.w[(i, c)];
                }
                assert!((p.phi[(i, r)] - acc).abs() < 1e-15);
            }
        }
        assert!(predict(&s, &Matrix::identity(4)).is_err());
    }

    #[test]
    fn derived_seeds_differ() {
        let seeds: Vec<u64> = (0..50).map(|i| derive_seed(7, i)).collect();
        let mut uniq = seeds.clone();
        uniq.sort_unstable();
        uniq.dedup();
        assert_eq!(uniq.len(), 50);
        assert_eq!(derive_seed(7, 3), seeds[3]);
    }

    #[test]
    fn csv_round_trip() {
        let s = sample(&cwh_like_noise(), 2, 4, 8).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("w_0_0,w_0_1,w_0_2,w_0_3,w_1_0"));
        let back = ScenarioSet::read_csv(&buf[..], 2, 4, 8).unwrap();
        assert_eq!(back, s);
    }
}
