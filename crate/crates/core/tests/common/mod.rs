//! Reference implementations shared by the integration tests. Each is written
//! independently of the library code it checks.

#![allow(dead_code)]

use icpi::dataset::{DatasetMeta, Generator, ImprovementDataset, ImprovementExample};
use icpi::envs::{TaskFamily, GRAVITY, TOOL_RADIUS};
use rand::Rng;

/// Puck state after a strike, found by stepping the tool and then the puck
/// at a fixed `dt`. Contact time is refined by bisection inside the step
/// where the tool first reaches the puck.
pub fn stepped_slide_final(
    start: [f64; 2],
    angle: f64,
    distance: f64,
    duration: f64,
    puck: [f64; 2],
    puck_radius: f64,
    friction: f64,
    dt: f64,
) -> [f64; 2] {
    let speed = distance / duration;
    let dir = [angle.cos(), angle.sin()];
    let tool = |t: f64| [start[0] + dir[0] * speed * t, start[1] + dir[1] * speed * t];
    let gap = |t: f64| {
        let p = tool(t);
        ((p[0] - puck[0]).powi(2) + (p[1] - puck[1]).powi(2)).sqrt() - (puck_radius + TOOL_RADIUS)
    };
    let mut t = 0.0;
    let mut contact = None;
    while t < duration {
        let next = (t + dt).min(duration);
        if gap(next) <= 0.0 {
            let (mut lo, mut hi) = (t, next);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if gap(mid) <= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            contact = Some(hi);
            break;
        }
        t = next;
    }
    let Some(tc) = contact else {
        return puck;
    };
    let p = tool(tc);
    let reach = ((puck[0] - p[0]).powi(2) + (puck[1] - p[1]).powi(2)).sqrt();
    let n = [(puck[0] - p[0]) / reach, (puck[1] - p[1]) / reach];
    let mut v = speed * (dir[0] * n[0] + dir[1] * n[1]);
    let decel = friction * GRAVITY;
    let mut s = 0.0;
    while v > 0.0 {
        let h = dt.min(v / decel);
        s += v * h - 0.5 * decel * h * h;
        v -= decel * h;
        if h < dt {
            break;
        }
    }
    [puck[0] + n[0] * s, puck[1] + n[1] * s]
}

/// k nearest by full sort on `(squared distance, index)`, returned farthest first.
pub fn exhaustive_knn(keys: &[[f64; 5]], query: &[f64; 5], k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(f64, usize)> = keys
        .iter()
        .enumerate()
        .map(|(i, key)| {
            let mut d = 0.0;
            for j in 0..5 {
                d += (key[j] - query[j]) * (key[j] - query[j]);
            }
            (d, i)
        })
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    all.truncate(k);
    all.reverse();
    all.into_iter().map(|(d, i)| (i, d.sqrt())).collect()
}

/// Solves `a x = b` by Gauss-Jordan elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in 0..n {
            if row != col {
                let f = a[row][col] / a[col][col];
                for c in col..n {
                    a[row][c] -= f * a[col][c];
                }
                b[row] -= f * b[col];
            }
        }
    }
    (0..n).map(|i| b[i] / a[i][i]).collect()
}

/// Ridge regression with an unpenalized intercept, predicted at `query`.
pub fn ridge_predict(inputs: &[Vec<f64>], outputs: &[Vec<f64>], lambda: f64, query: &[f64]) -> Vec<f64> {
    let n = inputs.len() as f64;
    let d = inputs[0].len();
    let mx: Vec<f64> = (0..d).map(|j| inputs.iter().map(|x| x[j]).sum::<f64>() / n).collect();
    let mut gram = vec![vec![0.0; d]; d];
    for x in inputs {
        for i in 0..d {
            for j in 0..d {
                gram[i][j] += (x[i] - mx[i]) * (x[j] - mx[j]);
            }
        }
    }
    for (i, row) in gram.iter_mut().enumerate() {
        row[i] += lambda;
    }
    (0..outputs[0].len())
        .map(|o| {
            let my = outputs.iter().map(|y| y[o]).sum::<f64>() / n;
            let rhs: Vec<f64> = (0..d)
                .map(|i| inputs.iter().zip(outputs).map(|(x, y)| (x[i] - mx[i]) * (y[o] - my)).sum())
                .collect();
            let w = solve(gram.clone(), rhs);
            my + (0..d).map(|i| w[i] * (query[i] - mx[i])).sum::<f64>()
        })
        .collect()
}

/// Rounds to three decimals the way a pattern prompt shows a value.
pub fn round3(x: f64) -> f64 {
    format!("{:.3}", x).parse().unwrap()
}

/// Dataset of uniform `(theta, error)` points with zero labels.
pub fn random_dataset<R: Rng>(family: TaskFamily, n: usize, rng: &mut R) -> ImprovementDataset {
    let bounds = family.bounds();
    let examples = (0..n)
        .map(|i| ImprovementExample {
            family,
            task_seed: i as u64,
            theta: bounds.sample(rng).0,
            error: [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)],
            delta_theta: [0.0; 3],
            generator: Generator::Hindsight,
            epsilon: 1e-9,
        })
        .collect();
    ImprovementDataset {
        family,
        meta: DatasetMeta {
            generator: Generator::Hindsight,
            epsilon: 1e-9,
            seed: 0,
        },
        examples,
    }
}
