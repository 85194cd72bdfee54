//! Motion error metrics and small statistics helpers.
//!
//! Sequences are `(T, V, 3)` arrays. Errors are Euclidean distances in the
//! units of the input (millimetres for the synthetic corpus).

use ndarray::{Array2, ArrayView2, ArrayView3, Axis};

use crate::error::{Error, Result};

fn same_shape(pred: &ArrayView3<f32>, gt: &ArrayView3<f32>) -> Result<()> {
    if pred.shape() != gt.shape() {
        return Err(Error::Shape(format!("prediction {:?} vs ground truth {:?}", pred.shape(), gt.shape())));
    }
    if pred.shape()[2] != 3 || pred.shape()[0] == 0 {
        return Err(Error::Shape(format!("expected non-empty T×V×3, got {:?}", pred.shape())));
    }
    Ok(())
}

fn check_mask(mask: &[usize], vertices: usize) -> Result<()> {
    if mask.is_empty() {
        return Err(Error::Range("lip mask is empty".into()));
    }
    if let Some(&bad) = mask.iter().find(|&&v| v >= vertices) {
        return Err(Error::Range(format!("lip vertex {bad} outside [0, {vertices})")));
    }
    Ok(())
}

fn vertex_error(pred: &ArrayView3<f32>, gt: &ArrayView3<f32>, t: usize, v: usize) -> f64 {
    (0..3)
        .map(|k| {
            let d = pred[[t, v, k]] as f64 - gt[[t, v, k]] as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Mean per-vertex Euclidean error over all frames and vertices.
pub fn fve(pred: ArrayView3<f32>, gt: ArrayView3<f32>) -> Result<f64> {
    same_shape(&pred, &gt)?;
    let (t, v, _) = pred.dim();
    let mut sum = 0.0;
    for ti in 0..t {
        for vi in 0..v {
            sum += vertex_error(&pred, &gt, ti, vi);
        }
    }
    Ok(sum / (t * v) as f64)
}

/// Per-frame maximum lip-vertex error, averaged over frames.
pub fn lve(pred: ArrayView3<f32>, gt: ArrayView3<f32>, lip_mask: &[usize]) -> Result<f64> {
    same_shape(&pred, &gt)?;
    check_mask(lip_mask, pred.dim().1)?;
    let t = pred.dim().0;
    let total: f64 = (0..t)
        .map(|ti| lip_mask.iter().map(|&v| vertex_error(&pred, &gt, ti, v)).fold(0.0, f64::max))
        .sum();
    Ok(total / t as f64)
}

/// Dynamic time warping with Euclidean frame distance and steps
/// (1,0), (0,1), (1,1). Among minimum-cost alignments the shortest is used,
/// and the cost is divided by its length.
pub fn dtw(x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<f64> {
    let (n, d) = x.dim();
    let (m, dy) = y.dim();
    if n == 0 || m == 0 {
        return Err(Error::Shape("DTW needs non-empty sequences".into()));
    }
    if d != dy {
        return Err(Error::Shape(format!("DTW frame widths {d} and {dy} differ")));
    }
    let dist = |i: usize, j: usize| -> f64 {
        x.row(i).iter().zip(y.row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    };
    // (cost, length) compared lexicographically.
    let mut acc = vec![(f64::INFINITY, 0usize); n * m];
    for i in 0..n {
        for j in 0..m {
            let c = dist(i, j);
            let best = if i == 0 && j == 0 {
                (0.0, 0)
            } else {
                let mut cands = Vec::with_capacity(3);
                if i > 0 {
                    cands.push(acc[(i - 1) * m + j]);
                }
                if j > 0 {
                    cands.push(acc[i * m + j - 1]);
                }
                if i > 0 && j > 0 {
                    cands.push(acc[(i - 1) * m + j - 1]);
                }
                cands
                    .into_iter()
                    .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                    .expect("at least one predecessor")
            };
            acc[i * m + j] = (best.0 + c, best.1 + 1);
        }
    }
    let (cost, len) = acc[n * m - 1];
    Ok(cost / len as f64)
}

/// Per-frame concatenated lip coordinates, `(T, 3·|mask|)`.
pub fn lip_trajectory(seq: ArrayView3<f32>, lip_mask: &[usize]) -> Result<Array2<f64>> {
    check_mask(lip_mask, seq.dim().1)?;
    let t = seq.dim().0;
    let mut out = Array2::zeros((t, lip_mask.len() * 3));
    for ti in 0..t {
        for (j, &v) in lip_mask.iter().enumerate() {
            for k in 0..3 {
                out[[ti, 3 * j + k]] = seq[[ti, v, k]] as f64;
            }
        }
    }
    Ok(out)
}

/// DTW distance between lip trajectories.
pub fn ldtw(pred: ArrayView3<f32>, gt: ArrayView3<f32>, lip_mask: &[usize]) -> Result<f64> {
    if pred.shape()[1..] != gt.shape()[1..] {
        return Err(Error::Shape(format!("prediction {:?} vs ground truth {:?}", pred.shape(), gt.shape())));
    }
    dtw(lip_trajectory(pred, lip_mask)?.view(), lip_trajectory(gt, lip_mask)?.view())
}

/// Population standard deviation.
pub fn pop_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Temporal std of each lip vertex's displacement magnitude.
pub fn lip_dynamics(motion: ArrayView3<f32>, lip_mask: &[usize]) -> Result<Vec<f64>> {
    check_mask(lip_mask, motion.dim().1)?;
    if motion.dim().0 < 2 {
        return Err(Error::Range("lip dynamics need at least 2 frames".into()));
    }
    Ok(lip_mask
        .iter()
        .map(|&v| {
            let mags: Vec<f64> = motion
                .index_axis(Axis(1), v)
                .rows()
                .into_iter()
                .map(|r| r.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt())
                .collect();
            pop_std(&mags)
        })
        .collect())
}

/// Mean absolute difference of lip dynamics. Inputs are displacements.
pub fn ldd(pred: ArrayView3<f32>, gt: ArrayView3<f32>, lip_mask: &[usize]) -> Result<f64> {
    if pred.shape()[1..] != gt.shape()[1..] {
        return Err(Error::Shape(format!("prediction {:?} vs ground truth {:?}", pred.shape(), gt.shape())));
    }
    let a = lip_dynamics(pred, lip_mask)?;
    let b = lip_dynamics(gt, lip_mask)?;
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb).max(1e-12)).clamp(-1.0, 1.0)
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

/// Mean silhouette coefficient with Euclidean distances. Points in
/// singleton clusters score 0.
pub fn silhouette(points: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    let n = points.nrows();
    if n != labels.len() || n < 2 {
        return Err(Error::Shape(format!("{n} points with {} labels", labels.len())));
    }
    let mut clusters: Vec<usize> = labels.to_vec();
    clusters.sort_unstable();
    clusters.dedup();
    if clusters.len() < 2 {
        return Err(Error::Range("silhouette needs at least two clusters".into()));
    }
    let dist = |i: usize, j: usize| -> f64 {
        points.row(i).iter().zip(points.row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    };
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; clusters.len()];
        let mut counts = vec![0usize; clusters.len()];
        for j in 0..n {
            if i != j {
                let k = clusters.binary_search(&labels[j]).expect("label present");
                sums[k] += dist(i, j);
                counts[k] += 1;
            }
        }
        let own = clusters.binary_search(&labels[i]).expect("label present");
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..clusters.len())
            .filter(|&k| k != own && counts[k] > 0)
            .map(|k| sums[k] / counts[k] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

/// Per-frame distance between two vertices.
pub fn lip_distance_curve(mesh: ArrayView3<f32>, lip_mask: &[usize], pair: [usize; 2]) -> Result<Vec<f64>> {
    for p in pair {
        if !lip_mask.contains(&p) {
            return Err(Error::Range(format!("vertex {p} is not in the lip mask")));
        }
        if p >= mesh.dim().1 {
            return Err(Error::Range(format!("vertex {p} outside [0, {})", mesh.dim().1)));
        }
    }
    Ok((0..mesh.dim().0)
        .map(|t| {
            (0..3)
                .map(|k| {
                    let d = mesh[[t, pair[0], k]] as f64 - mesh[[t, pair[1], k]] as f64;
                    d * d
                })
                .sum::<f64>()
                .sqrt()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array3};

    #[test]
    fn fve_hand_case() {
        let gt = Array3::<f32>::zeros((1, 1, 3));
        let pred = Array3::from_shape_vec((1, 1, 3), vec![3.0, 4.0, 0.0]).unwrap();
        assert_eq!(fve(pred.view(), gt.view()).unwrap(), 5.0);
        assert_eq!(fve(gt.view(), gt.view()).unwrap(), 0.0);
    }

    #[test]
    fn lve_hand_case() {
        let gt = Array3::<f32>::zeros((2, 3, 3));
        let mut pred = gt.clone();
        pred[[0, 1, 0]] = 3.0;
        pred[[0, 1, 1]] = 4.0;
        assert!((lve(pred.view(), gt.view(), &[0, 1]).unwrap() - 2.5).abs() < 1e-12);
        let mut off = gt.clone();
        off[[1, 2, 2]] = 7.0;
        assert_eq!(lve(off.view(), gt.view(), &[0, 1]).unwrap(), 0.0);
        assert!(lve(gt.view(), gt.view(), &[]).is_err());
    }

    #[test]
    fn dtw_hand_cases() {
        let x = array![[0.0], [1.0]];
        let y = array![[0.0], [1.0], [1.0]];
        assert_eq!(dtw(x.view(), y.view()).unwrap(), 0.0);
        let x = array![[0.0], [2.0]];
        let y = array![[0.0], [0.0]];
        assert_eq!(dtw(x.view(), y.view()).unwrap(), 1.0);
    }

    #[test]
    fn ldd_hand_cases() {
        let gt = Array3::<f32>::zeros((4, 2, 3));
        let mut pred = gt.clone();
        for (t, x) in [1.0f32, -1.0, 1.0, -1.0].iter().enumerate() {
            pred[[t, 0, 0]] = *x;
        }
        assert_eq!(ldd(pred.view(), gt.view(), &[0, 1]).unwrap(), 0.0);
        let mut pred = gt.clone();
        for (t, x) in [0.0f32, 2.0, 0.0, 2.0].iter().enumerate() {
            pred[[t, 0, 0]] = *x;
        }
        assert!((ldd(pred.view(), gt.view(), &[0, 1]).unwrap() - 0.5).abs() < 1e-12);
        assert!(ldd(gt.slice(ndarray::s![..1, .., ..]), gt.slice(ndarray::s![..1, .., ..]), &[0]).is_err());
    }

    #[test]
    fn spearman_and_silhouette() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        let pts = array![[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]];
        let s = silhouette(pts.view(), &[0, 0, 1, 1]).unwrap();
        assert!(s > 0.9);
        let mixed = silhouette(pts.view(), &[0, 1, 0, 1]).unwrap();
        assert!(mixed < 0.0);
    }

    #[test]
    fn lip_curve_cases() {
        let mut mesh = Array3::<f32>::zeros((3, 2, 3));
        assert_eq!(lip_distance_curve(mesh.view(), &[0, 1], [0, 1]).unwrap(), vec![0.0; 3]);
        mesh[[0, 1, 1]] = 2.0;
        mesh[[1, 1, 1]] = 2.0;
        mesh[[2, 1, 1]] = 2.0;
        assert_eq!(lip_distance_curve(mesh.view(), &[0, 1], [0, 1]).unwrap(), vec![2.0; 3]);
        assert!(lip_distance_curve(mesh.view(), &[0], [0, 1]).is_err());
    }
}
