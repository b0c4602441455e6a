//! Lloyd k-means with k-means++ seeding over flat row-major points.

use rand::Rng;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone)]
pub struct KMeans {
    pub centers: Vec<f64>,
    pub assignments: Vec<usize>,
    /// Objective after seeding and after each Lloyd iteration.
    pub objective_trace: Vec<f64>,
}

fn assign(points: &[f64], dim: usize, centers: &[f64], assignments: &mut [usize]) -> f64 {
    let k = centers.len() / dim;
    let mut total = 0.0;
    for (i, p) in points.chunks_exact(dim).enumerate() {
        let mut best = (f64::INFINITY, 0);
        for c in 0..k {
            let d = sq_dist(p, &centers[c * dim..(c + 1) * dim]);
            if d < best.0 {
                best = (d, c);
            }
        }
        assignments[i] = best.1;
        total += best.0;
    }
    total
}

/// Clusters `points` (`n × dim`, flat) into `k` centers. Requires `n ≥ k ≥ 1`.
pub fn kmeans(points: &[f64], dim: usize, k: usize, max_iters: usize, rng: &mut impl Rng) -> KMeans {
    let n = points.len() / dim;
    assert!(k >= 1 && n >= k, "kmeans needs n >= k >= 1");
    let row = |i: usize| &points[i * dim..(i + 1) * dim];

    let mut centers = Vec::with_capacity(k * dim);
    centers.extend_from_slice(row(rng.gen_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(row(i), &centers[..dim])).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    chosen = i;
                    break;
                }
                u -= w;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        centers.extend_from_slice(row(pick));
        let newc = &centers[c * dim..(c + 1) * dim];
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(row(i), newc));
        }
    }

    let mut assignments = vec![0; n];
    let mut trace = vec![assign(points, dim, &centers, &mut assignments)];
    for _ in 0..max_iters {
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &a) in assignments.iter().enumerate() {
            counts[a] += 1;
            for (s, v) in sums[a * dim..(a + 1) * dim].iter_mut().zip(row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            // Empty clusters keep their previous center.
            if counts[c] > 0 {
                for d in 0..dim {
                    centers[c * dim + d] = sums[c * dim + d] / counts[c] as f64;
                }
            }
        }
        let prev = assignments.clone();
        let obj = assign(points, dim, &centers, &mut assignments);
        trace.push(obj);
        if prev == assignments {
            break;
        }
    }
    KMeans {
        centers,
        assignments,
        objective_trace: trace,
    }
}
