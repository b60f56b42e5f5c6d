//! k-means over normalized link-interval metrics and regime labelling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::metrics::LinkIntervalMetrics;
use super::select::NormContext;
use super::FreqselError;
use crate::rng;

pub const DEFAULT_K: usize = 8;
pub const DEFAULT_RESTARTS: usize = 10;
const MAX_ITERS: usize = 300;

pub type Point = [f64; 4];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeLabel {
    Interference,
    Fading,
    Good,
    Poor,
}

impl RegimeLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Interference => "interference",
            Self::Fading => "fading",
            Self::Good => "good",
            Self::Poor => "poor",
        }
    }
}

/// Labels a centroid given as normalized (noise, snr, rssi, prr).
pub fn label_centroid(c: &Point) -> RegimeLabel {
    let [n, s, _, p] = *c;
    if n > 0.7 && s < 0.4 {
        RegimeLabel::Interference
    } else if n < 0.3 && s > 0.6 && p < 0.6 {
        RegimeLabel::Fading
    } else if p > 0.9 {
        RegimeLabel::Good
    } else {
        RegimeLabel::Poor
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansRun {
    pub centroids: Vec<Point>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    /// Inertia after each assignment step.
    pub history: Vec<f64>,
}

fn dist2(a: &Point, b: &Point) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn nearest(p: &Point, centroids: &[Point]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = dist2(p, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn plus_plus_init<R: Rng>(points: &[Point], k: usize, rng: &mut R) -> Vec<Point> {
    let mut centroids = vec![points[rng.random_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total <= 0.0 {
            rng.random_range(0..points.len())
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        };
        let c = points[idx];
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Lloyd iterations from a k-means++ start.
pub fn kmeans_once<R: Rng>(points: &[Point], k: usize, rng: &mut R) -> KMeansRun {
    let mut centroids = plus_plus_init(points, k, rng);
    let mut assignments = vec![usize::MAX; points.len()];
    let mut history = Vec::new();
    for _ in 0..MAX_ITERS {
        let mut changed = false;
        let mut inertia = 0.0;
        for (a, p) in assignments.iter_mut().zip(points) {
            let (i, d) = nearest(p, &centroids);
            inertia += d;
            if *a != i {
                *a = i;
                changed = true;
            }
        }
        history.push(inertia);
        if !changed {
            break;
        }
        let mut sums = vec![[0.0; 4]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assignments.iter().zip(points) {
            counts[a] += 1;
            for j in 0..4 {
                sums[a][j] += p[j];
            }
        }
        for c in 0..k {
            // empty clusters keep their previous centroid
            if counts[c] > 0 {
                for j in 0..4 {
                    centroids[c][j] = sums[c][j] / counts[c] as f64;
                }
            }
        }
    }
    let inertia = points.iter().zip(&assignments).map(|(p, &a)| dist2(p, &centroids[a])).sum();
    KMeansRun { centroids, assignments, inertia, history }
}

/// Best of `restarts` runs by final inertia; earlier runs win ties.
pub fn kmeans(points: &[Point], k: usize, restarts: usize, seed: u64) -> Result<KMeansRun, FreqselError> {
    if k == 0 || points.len() < k {
        return Err(FreqselError::TooFewPoints { points: points.len(), k });
    }
    let mut best: Option<KMeansRun> = None;
    for r in 0..restarts.max(1) {
        let mut g = rng::keyed(seed, &[r as u64]);
        let run = kmeans_once(points, k, &mut g);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub features: Vec<Point>,
    pub run: KMeansRun,
    pub labels: Vec<RegimeLabel>,
}

impl Clustering {
    pub fn point_label(&self, i: usize) -> RegimeLabel {
        self.labels[self.run.assignments[i]]
    }
}

/// Clusters scored link intervals (records with traffic) on normalized
/// (noise, snr, rssi, prr) and labels every cluster.
pub fn cluster_links(records: &[LinkIntervalMetrics], k: usize, restarts: usize, seed: u64) -> Result<(Vec<usize>, Clustering), FreqselError> {
    let idx: Vec<usize> = (0..records.len()).filter(|&i| records[i].tx > 0 && !records[i].link_id.is_scan()).collect();
    let ctx = NormContext::from_population(idx.iter().map(|&i| &records[i]));
    let features: Vec<Point> = idx.iter().map(|&i| ctx.features(&records[i])).collect();
    let run = kmeans(&features, k, restarts, seed)?;
    let labels = run.centroids.iter().map(label_centroid).collect();
    Ok((idx, Clustering { features, run, labels }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn centroid_rules() {
        assert_eq!(label_centroid(&[0.9, 0.1, 0.3, 0.2]), RegimeLabel::Interference);
        assert_eq!(label_centroid(&[0.1, 0.8, 0.8, 0.4]), RegimeLabel::Fading);
        assert_eq!(label_centroid(&[0.2, 0.5, 0.5, 0.95]), RegimeLabel::Good);
        assert_eq!(label_centroid(&[0.5, 0.5, 0.5, 0.5]), RegimeLabel::Poor);
    }

    fn blobs() -> (Vec<Point>, Vec<usize>) {
        let mut g = ChaCha8Rng::seed_from_u64(11);
        let centers = [[0.1, 0.1, 0.1, 0.1], [0.9, 0.9, 0.1, 0.5], [0.5, 0.1, 0.9, 0.9]];
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..40 {
                let mut p = *center;
                for v in &mut p {
                    *v += g.random_range(-0.05..0.05);
                }
                pts.push(p);
                truth.push(c);
            }
        }
        (pts, truth)
    }

    #[test]
    fn separated_blobs_recovered_exactly() {
        let (pts, truth) = blobs();
        let run = kmeans(&pts, 3, 10, 5).unwrap();
        // same partition up to relabelling: points share a cluster iff they share a blob
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                assert_eq!(truth[i] == truth[j], run.assignments[i] == run.assignments[j]);
            }
        }
    }

    #[test]
    fn inertia_never_increases() {
        let (pts, _) = blobs();
        let mut g = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let run = kmeans_once(&pts, 5, &mut g);
            for w in run.history.windows(2) {
                assert!(w[1] <= w[0] + 1e-12);
            }
        }
    }

    #[test]
    fn restarts_never_worsen() {
        let (pts, _) = blobs();
        let one = kmeans(&pts, 6, 1, 3).unwrap();
        let ten = kmeans(&pts, 6, 10, 3).unwrap();
        assert!(ten.inertia <= one.inertia);
    }

    #[test]
    fn too_few_points() {
        assert!(matches!(kmeans(&[[0.0; 4]; 3], 8, 10, 1), Err(FreqselError::TooFewPoints { points: 3, k: 8 })));
    }
}
