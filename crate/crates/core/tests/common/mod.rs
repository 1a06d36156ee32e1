#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vreach::linops::{solve_lp, LpOptions, LpProblem, LpStatus};
use vreach::milp::MilpProblem;
use vreach::scenarios::NoiseModel;
use vreach::sets::{InputBox, Polytope, ReachAvoidSpec};
use vreach::system::LtiSystem;
use vreach::Matrix;

pub struct Instance {
    pub sys: LtiSystem,
    pub spec: ReachAvoidSpec,
    pub input_box: InputBox,
    pub noise: NoiseModel,
    pub x0: Vec<f64>,
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Small reach-avoid problem with a box safe set, an off-center box target
/// and Gaussian noise, tuned so probabilities are neither 0 nor 1.
pub fn random_instance(seed: u64, n_x: usize, horizon: usize, n_u: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = Matrix::identity(n_x);
    for (i, v) in uniform(&mut rng, n_x * n_x, -0.3, 0.3)
        .into_iter()
        .enumerate()
    {
        a[(i / n_x, i % n_x)] += v;
    }
    let b = Matrix::new(n_x, n_u, uniform(&mut rng, n_x * n_u, -1.0, 1.0)).unwrap();
    let sys = LtiSystem::new(a, b).unwrap();
    let safe = Polytope::from_bounds(&vec![-2.0; n_x], &vec![2.0; n_x]).unwrap();
    let c = uniform(&mut rng, n_x, -1.0, 1.0);
    let half = rng.random_range(0.3..0.8);
    let lo: Vec<f64> = c.iter().map(|v| v - half).collect();
    let hi: Vec<f64> = c.iter().map(|v| v + half).collect();
    let target = Polytope::from_bounds(&lo, &hi).unwrap();
    let spec = ReachAvoidSpec::new(safe, target, horizon).unwrap();
    let input_box = InputBox::per_step(&vec![-1.0; n_u], &vec![1.0; n_u], horizon).unwrap();
    let var = rng.random_range(0.05..0.3);
    let noise = NoiseModel::GaussianDiag {
        mean: vec![0.0; n_x],
        variance: vec![var; n_x],
    };
    let x0 = uniform(&mut rng, n_x, -1.0, 1.0);
    Instance {
        sys,
        spec,
        input_box,
        noise,
        x0,
    }
}

/// Best indicator subset by enumeration: a subset is achievable iff the
/// intersection of its rows has a point in the box (one LP per subset).
pub fn enumerate_optimum(p: &MilpProblem) -> f64 {
    let k = p.n_binary();
    assert!(k <= 16);
    let l = p.rows_per_binary();
    let mut best = 0.0;
    for mask in 1u32..(1 << k) {
        let members: Vec<usize> = (0..k).filter(|i| mask >> i & 1 == 1).collect();
        let weight: f64 = members.iter().map(|&i| p.weights[i]).sum();
        if weight <= best + 1e-12 {
            continue;
        }
        let mut r = vec![f64::INFINITY; l];
        for &i in &members {
            for (a, b) in r.iter_mut().zip(p.rhs.row(i)) {
                *a = a.min(*b);
            }
        }
        let lp = LpProblem {
            objective: vec![0.0; p.n_continuous()],
            constraints: p.coeffs.clone(),
            rhs: r,
            lower: p.lower.clone(),
            upper: p.upper.clone(),
        };
        if solve_lp(&lp, &LpOptions::default()).unwrap().status == LpStatus::Optimal {
            best = weight;
        }
    }
    best
}
