#![allow(dead_code)]
//! Sparse propagation against a dense matrix chain on a five-cell safe set.

use clamc::abstraction::{propagate, GridConfig, Plan, RewardRule, TargetRegion};
use clamc::cla::{kernel_step, ProjectedStats};
use clamc::gauss::{interval_prob, Interval};
use nalgebra::{DMatrix, DVector};

pub const DZ: f64 = 0.1;
pub const CELLS: [i64; 5] = [-2, -1, 0, 1, 2];
pub const STEPS: usize = 12;

/// Time-inhomogeneous one-dimensional statistics with a drift to the right.
pub fn stats() -> ProjectedStats {
    let h = 0.5;
    let mut mean = Vec::new();
    let mut var = Vec::new();
    let mut cross = Vec::new();
    for k in 0..=STEPS {
        let t = k as f64 * h;
        mean.push(DVector::from_element(1, 0.04 * t));
        var.push(DMatrix::from_element(1, 1, 0.02 * t + 0.001 * t * t));
    }
    for k in 0..STEPS {
        let (a, b) = (var[k][(0, 0)], var[k + 1][(0, 0)]);
        cross.push(DMatrix::from_element(1, 1, 0.9 * (a * b).sqrt()));
    }
    ProjectedStats {
        h,
        system_size: 1.0,
        mean,
        var,
        cross,
    }
}

/// States 0..5 are the cells, 5 is the goal, 6 is failure.
pub fn dense_success(stats: &ProjectedStats, window: (usize, usize), grid: &GridConfig) -> Vec<f64> {
    let goal_lo = 5.0 * DZ;
    let mut v = DVector::zeros(7);
    v[2] = 1.0;
    let mut out = vec![0.0];
    for k in 0..STEPS {
        let step = kernel_step(stats, k).unwrap();
        let sd = step.residual[(0, 0)].max(0.0).sqrt();
        let absorbing = (window.0..=window.1).contains(&(k + 1));
        let mut t = DMatrix::zeros(7, 7);
        for (i, &ci) in CELLS.iter().enumerate() {
            let mu = step.intercept[0] + step.gain[(0, 0)] * grid.center(ci);
            let mut stay = 0.0;
            for (j, &cj) in CELLS.iter().enumerate() {
                let (a, b) = grid.cell_bounds(cj);
                let p = interval_prob(mu, sd, a, b);
                t[(j, i)] = p;
                stay += p;
            }
            let up = interval_prob(mu, sd, goal_lo, f64::INFINITY);
            if absorbing {
                t[(5, i)] = up;
                t[(6, i)] = 1.0 - stay - up;
            } else {
                t[(6, i)] = 1.0 - stay;
            }
        }
        t[(5, 5)] = 1.0;
        t[(6, 6)] = 1.0;
        v = t * v;
        out.push(v[5]);
    }
    out
}

pub fn sparse_success(stats: &ProjectedStats, window: (usize, usize), grid: &GridConfig) -> Vec<f64> {
    let plan = Plan {
        survive: TargetRegion {
            bounds: vec![Interval::new(-5.0 * DZ, 5.0 * DZ)],
        },
        success: TargetRegion {
            bounds: vec![Interval::new(5.0 * DZ, f64::INFINITY)],
        },
        window,
        last_step: STEPS,
        reward: None,
        reward_rule: RewardRule::default(),
        snapshot_step: None,
    };
    propagate(stats, &plan, grid).unwrap().success
}

/// Largest difference between the dense and sparse success series over a
/// few absorption windows.
pub fn max_discrepancy() -> f64 {
    let stats = stats();
    let grid = GridConfig {
        th: 0.0,
        ..GridConfig::new(DZ)
    };
    let mut worst: f64 = 0.0;
    for window in [(0, STEPS), (4, STEPS), (3, 8)] {
        let dense = dense_success(&stats, window, &grid);
        let sparse = sparse_success(&stats, window, &grid);
        assert_eq!(dense.len(), sparse.len());
        for (d, s) in dense.iter().zip(&sparse) {
            worst = worst.max((d - s).abs());
        }
    }
    worst
}
