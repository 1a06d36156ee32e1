//! Voronoi partition of the prediction set: k-means seeds, cell assignment,
//! importance counts and the per-cell constraint buffers.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linops::{squared_distance, LinalgError, Matrix};
use crate::scenarios::scenario_rng;

pub const DEFAULT_RESTARTS: usize = 10;
pub const DEFAULT_MAX_ITER: usize = 100;

#[derive(Debug, thiserror::Error)]
pub enum PartitionError {
    #[error("number of cells must be at least 1")]
    ZeroCells,
    #[error("requested {khat} cells but only {k} points")]
    TooManyCells { khat: usize, k: usize },
    #[error("point set is empty")]
    NoPoints,
    #[error("seed set is empty")]
    NoSeeds,
    #[error("dimension mismatch: expected {expected}, got {found}")]
    Dimension { expected: usize, found: usize },
    #[error("cell {0} is empty")]
    EmptyCell(usize),
    #[error("knee detection needs at least 3 curve points, got {0}")]
    ShortCurve(usize),
    #[error("curve grid must be nonempty and strictly increasing")]
    BadGrid,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Seeds `ψ_j`, the cell of every scenario, cell sizes `α_j`, buffers
/// `ε_j` (one row per cell; zero columns until computed) and the WSS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionModel {
    pub seeds: Matrix,
    pub assignment: Vec<usize>,
    pub alpha: Vec<usize>,
    pub buffers: Matrix,
    pub wss: f64,
}

impl PartitionModel {
    pub fn num_cells(&self) -> usize {
        self.seeds.rows()
    }

    pub fn num_points(&self) -> usize {
        self.assignment.len()
    }

    /// Every point its own cell, in the original order.
    pub fn singleton(points: &Matrix) -> Self {
        let k = points.rows();
        Self {
            seeds: points.clone(),
            assignment: (0..k).collect(),
            alpha: vec![1; k],
            buffers: Matrix::zeros(k, 0),
            wss: 0.0,
        }
    }

    pub fn has_buffers(&self) -> bool {
        self.buffers.rows() == self.seeds.rows() && self.buffers.cols() > 0
    }
}

/// Nearest seed for every point (lowest index on ties) and the cell sizes.
pub fn assign(points: &Matrix, seeds: &Matrix) -> Result<(Vec<usize>, Vec<usize>), PartitionError> {
    if seeds.rows() == 0 {
        return Err(PartitionError::NoSeeds);
    }
    if seeds.cols() != points.cols() {
        return Err(PartitionError::Dimension {
            expected: points.cols(),
            found: seeds.cols(),
        });
    }
    let mut assignment = Vec::with_capacity(points.rows());
    let mut alpha = vec![0; seeds.rows()];
    for p in points.row_iter() {
        let (j, _, _) = nearest_two(p, seeds);
        assignment.push(j);
        alpha[j] += 1;
    }
    Ok((assignment, alpha))
}

/// Within-cluster sum of squares of `points` under `model`.
pub fn wss(points: &Matrix, model: &PartitionModel) -> f64 {
    points
        .row_iter()
        .zip(&model.assignment)
        .map(|(p, &j)| squared_distance(p, model.seeds.row(j)))
        .sum()
}

/// `ε[j][ℓ] = max_{φ in cell j} F_ℓ (φ − ψ_j)`.
pub fn compute_buffers(
    points: &Matrix,
    model: &PartitionModel,
    f: &Matrix,
) -> Result<Matrix, PartitionError> {
    if f.cols() != points.cols() {
        return Err(PartitionError::Dimension {
            expected: points.cols(),
            found: f.cols(),
        });
    }
    let khat = model.num_cells();
    let mut buf = Matrix::zeros(khat, f.rows());
    let mut seen = vec![false; khat];
    let mut diff = vec![0.0; points.cols()];
    for (p, &j) in points.row_iter().zip(&model.assignment) {
        for ((d, a), b) in diff.iter_mut().zip(p).zip(model.seeds.row(j)) {
            *d = a - b;
        }
        let v = f.mul_vec(&diff)?;
        let row = buf.row_mut(j);
        if seen[j] {
            for (r, x) in row.iter_mut().zip(&v) {
                if *x > *r {
                    *r = *x;
                }
            }
        } else {
            row.copy_from_slice(&v);
            seen[j] = true;
        }
    }
    if let Some(j) = seen.iter().position(|s| !s) {
        return Err(PartitionError::EmptyCell(j));
    }
    Ok(buf)
}

/// Lloyd's algorithm from k-means++ starts, best of `restarts` by WSS.
///
/// Restart `r` draws from ChaCha8 stream `r` of `seed`, so results do not
/// depend on anything but the arguments. Assignment steps use Hamerly's
/// bounds to skip points whose nearest seed cannot have changed.
pub fn kmeans(
    points: &Matrix,
    khat: usize,
    restarts: usize,
    max_iter: usize,
    seed: u64,
) -> Result<PartitionModel, PartitionError> {
    let k = points.rows();
    if k == 0 {
        return Err(PartitionError::NoPoints);
    }
    if khat == 0 {
        return Err(PartitionError::ZeroCells);
    }
    if khat > k {
        return Err(PartitionError::TooManyCells { khat, k });
    }
    if khat == k {
        return Ok(PartitionModel::singleton(points));
    }
    let mut best: Option<PartitionModel> = None;
    for r in 0..restarts.max(1) {
        let init = plus_plus_init(points, khat, seed, r as u64);
        let model = lloyd(points, init, max_iter);
        if best.as_ref().is_none_or(|b| model.wss < b.wss) {
            best = Some(model);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn plus_plus_init(points: &Matrix, khat: usize, seed: u64, stream: u64) -> Matrix {
    let mut rng = scenario_rng(seed, stream);
    let k = points.rows();
    let mut centers = Matrix::zeros(khat, points.cols());
    let first = rng.random_range(0..k);
    centers.row_mut(0).copy_from_slice(points.row(first));
    let mut d2: Vec<f64> = points
        .row_iter()
        .map(|p| squared_distance(p, centers.row(0)))
        .collect();
    for c in 1..khat {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = k - 1;
            for (i, v) in d2.iter().enumerate() {
                acc += v;
                if acc > target && *v > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..k)
        };
        centers.row_mut(c).copy_from_slice(points.row(pick));
        for (i, p) in points.row_iter().enumerate() {
            let d = squared_distance(p, centers.row(c));
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    centers
}

/// Index of the nearest seed (lowest index on ties), its distance and the
/// distance to the runner-up (infinite with one seed).
fn nearest_two(p: &[f64], seeds: &Matrix) -> (usize, f64, f64) {
    let mut best = (0, f64::INFINITY);
    let mut second = f64::INFINITY;
    for (j, c) in seeds.row_iter().enumerate() {
        let d = squared_distance(p, c);
        if d < best.1 {
            second = best.1;
            best = (j, d);
        } else if d < second {
            second = d;
        }
    }
    (best.0, best.1.sqrt(), second.sqrt())
}

// Relative slack on the Hamerly skip test so rounding in the bound updates
// can never skip a point whose assignment would change.
const BOUND_SLACK: f64 = 1e-10;

/// Moves the point farthest from its seed (among cells that can spare one)
/// into each empty cell. Returns whether anything moved.
fn fill_empty_cells(
    points: &Matrix,
    centers: &Matrix,
    assign: &mut [usize],
    counts: &mut [usize],
) -> bool {
    let mut moved = false;
    while let Some(empty) = counts.iter().position(|&c| c == 0) {
        let mut far = (usize::MAX, -1.0);
        for (i, p) in points.row_iter().enumerate() {
            if counts[assign[i]] < 2 {
                continue;
            }
            let d = squared_distance(p, centers.row(assign[i]));
            if d > far.1 {
                far = (i, d);
            }
        }
        let i = far.0;
        counts[assign[i]] -= 1;
        counts[empty] += 1;
        assign[i] = empty;
        moved = true;
    }
    moved
}

fn lloyd(points: &Matrix, mut centers: Matrix, max_iter: usize) -> PartitionModel {
    let (k, dim) = points.shape();
    let khat = centers.rows();
    let mut assign = vec![0usize; k];
    let mut upper = vec![0.0; k];
    let mut lower = vec![0.0; k];
    for (i, p) in points.row_iter().enumerate() {
        let (j, u, l) = nearest_two(p, &centers);
        assign[i] = j;
        upper[i] = u;
        lower[i] = l;
    }
    let mut counts = vec![0usize; khat];
    let mut moved = vec![0.0; khat];
    let mut half_gap = vec![0.0; khat];
    for _ in 0..max_iter {
        // centroid update
        let mut sums = Matrix::zeros(khat, dim);
        counts.iter_mut().for_each(|c| *c = 0);
        for (p, &j) in points.row_iter().zip(&assign) {
            counts[j] += 1;
            for (s, v) in sums.row_mut(j).iter_mut().zip(p) {
                *s += v;
            }
        }
        let repaired = fill_empty_cells(points, &centers, &mut assign, &mut counts);
        if repaired {
            sums = Matrix::zeros(khat, dim);
            for (p, &j) in points.row_iter().zip(&assign) {
                for (s, v) in sums.row_mut(j).iter_mut().zip(p) {
                    *s += v;
                }
            }
        }
        let mut max_move = (0.0f64, usize::MAX, 0.0f64);
        for j in 0..khat {
            let n = counts[j] as f64;
            let mut shift = 0.0;
            for (c, s) in centers.row_mut(j).iter_mut().zip(sums.row(j)) {
                let new = s / n;
                shift += (new - *c) * (new - *c);
                *c = new;
            }
            moved[j] = shift.sqrt();
            if moved[j] > max_move.0 {
                max_move = (moved[j], j, max_move.0);
            } else if moved[j] > max_move.2 {
                max_move.2 = moved[j];
            }
        }
        for j in 0..khat {
            let mut g = f64::INFINITY;
            for jj in 0..khat {
                if jj != j {
                    g = g.min(squared_distance(centers.row(j), centers.row(jj)));
                }
            }
            half_gap[j] = 0.5 * g.sqrt();
        }
        let mut changes = 0usize;
        for (i, p) in points.row_iter().enumerate() {
            let a = assign[i];
            if repaired {
                let (j, u, l) = nearest_two(p, &centers);
                if j != a {
                    changes += 1;
                }
                assign[i] = j;
                upper[i] = u;
                lower[i] = l;
                continue;
            }
            upper[i] += moved[a];
            lower[i] -= if max_move.1 == a {
                max_move.2
            } else {
                max_move.0
            };
            let bound = half_gap[a].max(lower[i]);
            if upper[i] * (1.0 + BOUND_SLACK) < bound * (1.0 - BOUND_SLACK) {
                continue;
            }
            upper[i] = squared_distance(p, centers.row(a)).sqrt();
            if upper[i] * (1.0 + BOUND_SLACK) < bound * (1.0 - BOUND_SLACK) {
                continue;
            }
            let (j, u, l) = nearest_two(p, &centers);
            if j != a {
                changes += 1;
            }
            assign[i] = j;
            upper[i] = u;
            lower[i] = l;
        }
        if changes == 0 && !repaired {
            break;
        }
    }
    // seeds are the centroids of the final cells; empty cells can only
    // survive here when points coincide
    let mut alpha = vec![0usize; khat];
    for &j in &assign {
        alpha[j] += 1;
    }
    fill_empty_cells(points, &centers, &mut assign, &mut alpha);
    let mut sums = Matrix::zeros(khat, dim);
    for (p, &j) in points.row_iter().zip(&assign) {
        for (s, v) in sums.row_mut(j).iter_mut().zip(p) {
            *s += v;
        }
    }
    for j in 0..khat {
        let n = alpha[j] as f64;
        for (c, s) in centers.row_mut(j).iter_mut().zip(sums.row(j)) {
            *c = s / n;
        }
    }
    let mut model = PartitionModel {
        seeds: centers,
        assignment: assign,
        alpha,
        buffers: Matrix::zeros(khat, 0),
        wss: 0.0,
    };
    model.wss = wss(points, &model);
    model
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WssCurve {
    pub khat_values: Vec<usize>,
    pub wss_values: Vec<f64>,
    /// Wall time per grid point; not serialized so artifacts are reproducible.
    #[serde(default, skip_serializing)]
    pub seconds: Vec<f64>,
}

/// One best-of-`restarts` k-means run per grid value.
pub fn wss_curve(
    points: &Matrix,
    khat_grid: &[usize],
    restarts: usize,
    seed: u64,
) -> Result<WssCurve, PartitionError> {
    if khat_grid.is_empty() || khat_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(PartitionError::BadGrid);
    }
    let mut curve = WssCurve {
        khat_values: Vec::with_capacity(khat_grid.len()),
        wss_values: Vec::with_capacity(khat_grid.len()),
        seconds: Vec::with_capacity(khat_grid.len()),
    };
    for &khat in khat_grid {
        let t = Instant::now();
        let m = kmeans(points, khat, restarts, DEFAULT_MAX_ITER, seed)?;
        curve.seconds.push(t.elapsed().as_secs_f64());
        curve.khat_values.push(khat);
        curve.wss_values.push(m.wss);
    }
    Ok(curve)
}

/// Grid value farthest from the chord joining the first and last curve
/// points, with both axes rescaled to `[0, 1]`. Only interior points are
/// candidates; near-ties go to the smallest `K̂`.
pub fn knee(curve: &WssCurve) -> Result<usize, PartitionError> {
    let n = curve.khat_values.len();
    if n < 3 || curve.wss_values.len() != n {
        return Err(PartitionError::ShortCurve(n));
    }
    let xs: Vec<f64> = curve.khat_values.iter().map(|&k| k as f64).collect();
    let x = normalize(&xs);
    let y = normalize(&curve.wss_values);
    let (dx, dy) = (x[n - 1] - x[0], y[n - 1] - y[0]);
    let len = (dx * dx + dy * dy).sqrt();
    let dist = |i: usize| {
        if len == 0.0 {
            0.0
        } else {
            (dx * (y[i] - y[0]) - dy * (x[i] - x[0])).abs() / len
        }
    };
    let max = (1..n - 1).map(dist).fold(0.0, f64::max);
    let i = (1..n - 1)
        .find(|&i| dist(i) >= max - 1e-12)
        .expect("interior point exists");
    Ok(curve.khat_values[i])
}

fn normalize(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    v.iter()
        .map(|x| if span > 0.0 { (x - lo) / span } else { 0.0 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn col(v: &[f64]) -> Matrix {
        Matrix::column(v)
    }

    fn random_points(seed: u64, k: usize, d: usize) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::new(
            k,
            d,
            (0..k * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn two_clusters_on_a_line() {
        let p = col(&[0.0, 0.1, 10.0, 10.2]);
        let m = kmeans(&p, 2, 10, 100, 0).unwrap();
        let mut seeds = m.seeds.col_vec(0);
        seeds.sort_by(f64::total_cmp);
        assert!((seeds[0] - 0.05).abs() < 1e-12);
        assert!((seeds[1] - 10.1).abs() < 1e-12);
        assert!((m.wss - 0.025).abs() < 1e-12);
    }

    #[test]
    fn brute_force_two_partitions() {
        // every 2-partition of a small 1-D set; k-means must find the best
        let p = col(&[0.0, 0.1, 10.0, 10.2, 3.0, 4.5]);
        let k = p.rows();
        let mut best = f64::INFINITY;
        for mask in 1u32..(1 << k) - 1 {
            let mut total = 0.0;
            for side in [true, false] {
                let pts: Vec<f64> = (0..k)
                    .filter(|i| ((mask >> i) & 1 == 1) == side)
                    .map(|i| p[(i, 0)])
                    .collect();
                let mean = pts.iter().sum::<f64>() / pts.len() as f64;
                total += pts.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
            }
            best = best.min(total);
        }
        let m = kmeans(&p, 2, 10, 100, 1).unwrap();
        assert!((m.wss - best).abs() < 1e-9, "{} vs {best}", m.wss);
    }

    #[test]
    fn trivial_cell_counts() {
        let p = random_points(3, 12, 3);
        let m = kmeans(&p, 12, 10, 100, 0).unwrap();
        assert_eq!(m.wss, 0.0);
        assert_eq!(m.assignment, (0..12).collect::<Vec<_>>());
        assert_eq!(m.seeds, p);

        let m = kmeans(&p, 1, 3, 100, 0).unwrap();
        let mut total = 0.0;
        for j in 0..3 {
            let c = p.col_vec(j);
            let mean = c.iter().sum::<f64>() / 12.0;
            assert!((m.seeds[(0, j)] - mean).abs() < 1e-12);
            total += c.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
        }
        assert!((m.wss - total).abs() < 1e-12);

        let m = kmeans(&col(&[-1.0, 1.0]), 1, 1, 10, 0).unwrap();
        assert_eq!(m.seeds[(0, 0)], 0.0);
        assert_eq!(m.wss, 2.0);

        assert!(matches!(
            kmeans(&p, 0, 1, 1, 0),
            Err(PartitionError::ZeroCells)
        ));
        assert!(matches!(
            kmeans(&p, 13, 1, 1, 0),
            Err(PartitionError::TooManyCells { .. })
        ));
    }

    #[test]
    fn kmeans_output_invariants() {
        for seed in 0..10 {
            let p = random_points(seed, 200, 4);
            let m = kmeans(&p, 7, 3, 100, seed).unwrap();
            assert_eq!(m.alpha.iter().sum::<usize>(), 200);
            assert!(m.alpha.iter().all(|&a| a >= 1));
            let (a, alpha) = assign(&p, &m.seeds).unwrap();
            assert_eq!(a, m.assignment);
            assert_eq!(alpha, m.alpha);
            assert!((wss(&p, &m) - m.wss).abs() < 1e-10);
            let again = kmeans(&p, 7, 3, 100, seed).unwrap();
            assert_eq!(again, m);
        }
    }

    #[test]
    fn more_restarts_never_hurt() {
        let p = random_points(5, 300, 3);
        let one = kmeans(&p, 9, 1, 100, 4).unwrap();
        let ten = kmeans(&p, 9, 10, 100, 4).unwrap();
        assert!(ten.wss <= one.wss);
    }

    #[test]
    fn assign_rules() {
        let seeds = col(&[-1.0, 1.0]);
        let (a, alpha) = assign(&col(&[0.0, 2.0]), &seeds).unwrap();
        assert_eq!(a, vec![0, 1]);
        assert_eq!(alpha, vec![1, 1]);
        let p = random_points(1, 5, 2);
        let (a, alpha) = assign(&p, &p).unwrap();
        assert_eq!(a, vec![0, 1, 2, 3, 4]);
        assert_eq!(alpha, vec![1; 5]);
        assert!(matches!(
            assign(&p, &Matrix::zeros(0, 2)),
            Err(PartitionError::NoSeeds)
        ));
    }

    #[test]
    fn assign_matches_exhaustive_scan() {
        let p = random_points(7, 100, 3);
        let s = random_points(8, 6, 3);
        let (a, _) = assign(&p, &s).unwrap();
        for i in 0..100 {
            let d: Vec<f64> = (0..6)
                .map(|j| squared_distance(p.row(i), s.row(j)))
                .collect();
            let min = d.iter().copied().fold(f64::INFINITY, f64::min);
            assert_eq!(a[i], d.iter().position(|&v| v == min).unwrap());
        }
    }

    #[test]
    fn buffer_examples() {
        let p = col(&[0.0, 2.0]);
        let model = PartitionModel {
            seeds: col(&[1.0]),
            assignment: vec![0, 0],
            alpha: vec![2],
            buffers: Matrix::zeros(1, 0),
            wss: 2.0,
        };
        let b = compute_buffers(&p, &model, &Matrix::identity(1)).unwrap();
        assert_eq!(b[(0, 0)], 1.0);

        let q = random_points(2, 6, 3);
        let single = PartitionModel::singleton(&q);
        let f = random_points(3, 5, 3);
        assert_eq!(compute_buffers(&q, &single, &f).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn buffers_match_double_loop() {
        let p = random_points(11, 80, 4);
        let m = kmeans(&p, 5, 2, 100, 0).unwrap();
        let f = random_points(12, 9, 4);
        let b = compute_buffers(&p, &m, &f).unwrap();
        for j in 0..5 {
            for l in 0..9 {
                let mut max = f64::NEG_INFINITY;
                for i in 0..80 {
                    if m.assignment[i] == j {
                        let mut v = 0.0;
                        for c in 0..4 {
                            v += f[(l, c)] * (p[(i, c)] - m.seeds[(j, c)]);
                        }
                        max = max.max(v);
                    }
                }
                assert!((b[(j, l)] - max).abs() < 1e-12);
                assert!(b[(j, l)] >= -1e-12);
            }
        }
    }

    #[test]
    fn translation_invariance() {
        let p = random_points(21, 150, 3);
        let shift = [5.0, -3.0, 0.25];
        let mut q = p.clone();
        for i in 0..150 {
            for (c, s) in q.row_mut(i).iter_mut().zip(&shift) {
                *c += s;
            }
        }
        let a = kmeans(&p, 6, 4, 100, 9).unwrap();
        let b = kmeans(&q, 6, 4, 100, 9).unwrap();
        assert_eq!(a.assignment, b.assignment);
        for j in 0..6 {
            for c in 0..3 {
                assert!((a.seeds[(j, c)] + shift[c] - b.seeds[(j, c)]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn curve_endpoints() {
        let p = random_points(4, 30, 2);
        let c = wss_curve(&p, &[30], 2, 0).unwrap();
        assert_eq!(c.wss_values, vec![0.0]);
        let c = wss_curve(&p, &[1], 2, 0).unwrap();
        let total = kmeans(&p, 1, 1, 10, 0).unwrap().wss;
        assert_eq!(c.wss_values, vec![total]);
        assert!(wss_curve(&p, &[], 1, 0).is_err());
        assert!(wss_curve(&p, &[3, 2], 1, 0).is_err());
    }

    fn curve(points: &[(usize, f64)]) -> WssCurve {
        WssCurve {
            khat_values: points.iter().map(|p| p.0).collect(),
            wss_values: points.iter().map(|p| p.1).collect(),
            seconds: vec![0.0; points.len()],
        }
    }

    #[test]
    fn knee_examples() {
        assert_eq!(
            knee(&curve(&[(1, 100.0), (2, 10.0), (3, 9.0), (4, 8.0)])).unwrap(),
            2
        );
        assert_eq!(
            knee(&curve(&[(1, 4.0), (2, 3.0), (3, 2.0), (4, 1.0)])).unwrap(),
            2
        );
        assert!(matches!(
            knee(&curve(&[(1, 4.0), (2, 3.0)])),
            Err(PartitionError::ShortCurve(2))
        ));
    }

    proptest::proptest! {
        #[test]
        fn alpha_sums_to_k(seed in 0u64..1000, k in 1usize..40, khat in 1usize..8) {
            let p = random_points(seed, k, 2);
            let khat = khat.min(k);
            let m = kmeans(&p, khat, 2, 50, seed).unwrap();
            proptest::prop_assert_eq!(m.alpha.iter().sum::<usize>(), k);
            proptest::prop_assert!(m.alpha.iter().all(|&a| a >= 1));
        }
    }
}
