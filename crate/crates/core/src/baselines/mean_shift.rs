//! Flat-kernel mean shift seeded at every point.

/// Neighbour quantile used by [`estimate_bandwidth`].
pub const MEAN_SHIFT_QUANTILE: f64 = 0.3;

#[derive(Debug, Clone, PartialEq)]
pub struct MeanShiftParams {
    /// `None` estimates it with [`estimate_bandwidth`].
    pub bandwidth: Option<f64>,
    pub max_iter: usize,
    /// Convergence threshold as a fraction of the bandwidth.
    pub stop_fraction: f64,
    /// Modes closer than `merge_fraction * bandwidth` collapse into one.
    pub merge_fraction: f64,
}

impl Default for MeanShiftParams {
    fn default() -> Self {
        Self {
            bandwidth: None,
            max_iter: 300,
            stop_fraction: 1e-3,
            merge_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanShiftResult {
    pub bandwidth: f64,
    /// Surviving modes, densest first.
    pub modes: Vec<Vec<f64>>,
    /// For each mode, the index of the nearest input point; deduplicated.
    pub representatives: Vec<usize>,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean over points of the distance to their `⌊quantile·n⌋`-th nearest
/// neighbour, the point itself counting as the first.
pub fn estimate_bandwidth(points: &[Vec<f64>], quantile: f64) -> f64 {
    let n = points.len();
    if n == 0 {
        return 0.0;
    }
    let k = ((n as f64 * quantile) as usize).clamp(1, n);
    let total: f64 = points
        .iter()
        .map(|p| {
            let mut d: Vec<f64> = points.iter().map(|q| dist(p, q)).collect();
            d.sort_by(f64::total_cmp);
            d[k - 1]
        })
        .sum();
    total / n as f64
}

pub fn mean_shift(points: &[Vec<f64>], params: &MeanShiftParams) -> MeanShiftResult {
    if points.is_empty() {
        return MeanShiftResult { bandwidth: 0.0, modes: Vec::new(), representatives: Vec::new() };
    }
    let bw = params
        .bandwidth
        .unwrap_or_else(|| estimate_bandwidth(points, MEAN_SHIFT_QUANTILE));
    if bw.is_nan() || bw <= 0.0 {
        // Every point coincides (or no scale is available): a single mode.
        return MeanShiftResult {
            bandwidth: bw,
            modes: vec![points[0].clone()],
            representatives: vec![0],
        };
    }
    let d = points[0].len();
    let stop = params.stop_fraction * bw;
    let mut found: Vec<(Vec<f64>, usize, usize)> = Vec::with_capacity(points.len());
    for (seed_idx, seed) in points.iter().enumerate() {
        let mut mean = seed.clone();
        let mut support = 0;
        for _ in 0..params.max_iter {
            let mut next = vec![0.0; d];
            let mut count = 0usize;
            for p in points.iter().filter(|p| dist(p, &mean) <= bw) {
                next.iter_mut().zip(p).for_each(|(a, b)| *a += b);
                count += 1;
            }
            if count == 0 {
                break;
            }
            next.iter_mut().for_each(|a| *a /= count as f64);
            let shift = dist(&next, &mean);
            mean = next;
            support = count;
            if shift < stop {
                break;
            }
        }
        if support > 0 {
            found.push((mean, support, seed_idx));
        }
    }
    found.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    let radius = params.merge_fraction * bw;
    let mut modes: Vec<Vec<f64>> = Vec::new();
    for (m, _, _) in found {
        if modes.iter().all(|k| dist(k, &m) >= radius) {
            modes.push(m);
        }
    }
    let mut representatives = Vec::with_capacity(modes.len());
    for m in &modes {
        let nearest = (0..points.len())
            .min_by(|&a, &b| dist(&points[a], m).total_cmp(&dist(&points[b], m)).then(a.cmp(&b)))
            .expect("points is nonempty");
        if !representatives.contains(&nearest) {
            representatives.push(nearest);
        }
    }
    MeanShiftResult { bandwidth: bw, modes, representatives }
}
