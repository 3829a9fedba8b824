use crate::cloud::{Point3, PointCloud};
use crate::error::{Error, Result};

use super::kdtree::dist_sq;

/// Greedy farthest point sampling.
///
/// Starts at `start`; each following pick maximizes the minimum distance to
/// the points selected so far. Ties go to the lower index and points that
/// were already selected are never picked again, so exact duplicates are
/// taken in index order once everything else is exhausted.
pub fn fps(cloud: &PointCloud, m: usize, start: usize) -> Result<Vec<usize>> {
    fps_points(cloud.points(), m, start)
}

pub fn fps_points(points: &[Point3], m: usize, start: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if m > n {
        return Err(Error::InsufficientPoints {
            required: m,
            available: n,
        });
    }
    if m == 0 {
        return Ok(Vec::new());
    }
    if start >= n {
        return Err(Error::InvalidConfig(format!("fps start {start} out of range for {n} points")));
    }
    let mut buckets = Vec::new();
    let mut ids: Vec<usize> = (0..n).collect();
    partition(points, &mut ids, &mut buckets);
    let mut bucket_of = vec![0; n];
    for (b, bucket) in buckets.iter().enumerate() {
        for &i in &bucket.members {
            bucket_of[i] = b;
        }
    }

    let mut selected = Vec::with_capacity(m);
    let mut taken = vec![false; n];
    let mut min_d = vec![f64::INFINITY; n];
    let mut current = start;
    for _ in 0..m {
        selected.push(current);
        taken[current] = true;
        let c = points[current];
        for (b, bucket) in buckets.iter_mut().enumerate() {
            // Rounding is monotone, so no member can be closer than the box
            // and a skipped bucket's untaken minima are unchanged.
            if b != bucket_of[current] && bucket.box_dist_sq(&c) >= bucket.best_d {
                continue;
            }
            bucket.best_d = f64::NEG_INFINITY;
            bucket.best = usize::MAX;
            for &i in &bucket.members {
                let d = dist_sq(&points[i], &c);
                let md = &mut min_d[i];
                if d < *md {
                    *md = d;
                }
                if !taken[i] && *md > bucket.best_d {
                    bucket.best_d = *md;
                    bucket.best = i;
                }
            }
        }
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for bucket in &buckets {
            if bucket.best_d > best.0 || (bucket.best_d == best.0 && bucket.best < best.1) {
                best = (bucket.best_d, bucket.best);
            }
        }
        current = best.1;
    }
    Ok(selected)
}

const BUCKET_SIZE: usize = 64;

/// A spatially compact group of points with the running maximum of their
/// (untaken) min-distances.
struct Bucket {
    members: Vec<usize>,
    lo: [f64; 3],
    hi: [f64; 3],
    best_d: f64,
    best: usize,
}

impl Bucket {
    fn box_dist_sq(&self, p: &Point3) -> f64 {
        let mut acc = 0.0;
        for a in 0..3 {
            let d = if p[a] < self.lo[a] {
                self.lo[a] - p[a]
            } else if p[a] > self.hi[a] {
                p[a] - self.hi[a]
            } else {
                0.0
            };
            acc += d * d;
        }
        acc
    }
}

fn partition(points: &[Point3], ids: &mut [usize], out: &mut Vec<Bucket>) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in ids.iter() {
        for a in 0..3 {
            lo[a] = lo[a].min(points[i][a]);
            hi[a] = hi[a].max(points[i][a]);
        }
    }
    if ids.len() <= BUCKET_SIZE {
        let mut members = ids.to_vec();
        // ascending order makes the strict `>` scan prefer lower indices
        members.sort_unstable();
        out.push(Bucket {
            members,
            lo,
            hi,
            best_d: f64::INFINITY,
            best: usize::MAX,
        });
        return;
    }
    let axis = (0..3).max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b]))).unwrap();
    let mid = ids.len() / 2;
    ids.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b)));
    let (left, right) = ids.split_at_mut(mid);
    partition(points, left, out);
    partition(points, right, out);
}
