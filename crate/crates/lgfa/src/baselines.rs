//! Reference registrars for comparison: trimmed point-to-point ICP and a
//! single-grid 2D NDT. Both are class-blind and operate on merged point sets.

use std::collections::HashMap;

use thiserror::Error;

use crate::geom::{Point2, PointIndex};
use crate::localization::{pose_diff, weighted_procrustes};
use crate::map_model::Pose2D;

#[derive(Error, Debug)]
pub enum BaselineError {
    #[error("insufficient input: {0}")]
    InsufficientInput(String),
}

/// Pose-update convergence threshold shared by both baselines.
const STEP_EPS: f64 = 1e-4;
/// Meters-per-radian scale of the ICP pose-update norm.
const POSE_DIFF_SCALE: f64 = 5.0;

/// Trimmed point-to-point ICP.
///
/// Per iteration: nearest-neighbor correspondences within `radius`, keep the
/// smallest-residual `trim` fraction, unweighted rigid update. Stops on the
/// iteration budget or a pose update below `1e-4`.
pub fn icp_trimmed(
    src: &[Point2],
    dst: &[Point2],
    theta0: &Pose2D,
    iters: usize,
    radius: f64,
    trim: f64,
) -> Result<Pose2D, BaselineError> {
    if src.len() < 3 || dst.len() < 3 {
        return Err(BaselineError::InsufficientInput(format!(
            "need at least 3 points per side, got {} and {}",
            src.len(),
            dst.len()
        )));
    }
    let index = PointIndex::build(dst, 0.5_f64.max(radius / 4.0));
    let mut theta = *theta0;

    for _ in 0..iters {
        let mut pairs: Vec<(f64, usize, Point2)> = Vec::new();
        for (i, x) in src.iter().enumerate() {
            let p = theta.apply(*x);
            let (j, d) = index.nearest(&p);
            if d <= radius {
                pairs.push((d, i, dst[j]));
            }
        }
        if pairs.len() < 3 {
            break;
        }
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let keep = ((pairs.len() as f64 * trim).floor() as usize).max(3).min(pairs.len());
        let fit: Vec<(Point2, Point2, f64)> =
            pairs[..keep].iter().map(|(_, i, y)| (src[*i], *y, 1.0)).collect();
        let Ok(theta_new) = weighted_procrustes(&fit) else { break };
        let step = pose_diff(&theta_new, &theta, POSE_DIFF_SCALE);
        theta = theta_new;
        if step < STEP_EPS {
            break;
        }
    }
    Ok(theta)
}

/// One cell's Gaussian model.
#[derive(Debug, Clone)]
struct CellGaussian {
    mean: Point2,
    /// Inverse covariance, symmetric: [a, b; b, c].
    inv: [f64; 3],
}

/// Per-cell Gaussians over `dst` at the given grid resolution. Cells with
/// fewer than 5 points carry no Gaussian. Covariances get a 1e-3 m^2
/// diagonal regularization.
#[derive(Debug)]
pub struct NdtGrid {
    resolution: f64,
    cells: HashMap<(i64, i64), CellGaussian>,
}

impl NdtGrid {
    pub fn build(dst: &[Point2], resolution: f64) -> Result<Self, BaselineError> {
        assert!(resolution > 0.0);
        let mut buckets: HashMap<(i64, i64), Vec<Point2>> = HashMap::new();
        for p in dst {
            let key = ((p.x / resolution).floor() as i64, (p.y / resolution).floor() as i64);
            buckets.entry(key).or_default().push(*p);
        }
        let mut cells = HashMap::new();
        for (key, pts) in buckets {
            if pts.len() < 5 {
                continue;
            }
            let n = pts.len() as f64;
            let mean = Point2::new(
                pts.iter().map(|p| p.x).sum::<f64>() / n,
                pts.iter().map(|p| p.y).sum::<f64>() / n,
            );
            let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
            for p in &pts {
                let dx = p.x - mean.x;
                let dy = p.y - mean.y;
                sxx += dx * dx;
                sxy += dx * dy;
                syy += dy * dy;
            }
            sxx = sxx / n + 1e-3;
            sxy /= n;
            syy = syy / n + 1e-3;
            let det = sxx * syy - sxy * sxy;
            let inv = [syy / det, -sxy / det, sxx / det];
            cells.insert(key, CellGaussian { mean, inv });
        }
        if cells.is_empty() {
            return Err(BaselineError::InsufficientInput(
                "no grid cell holds 5 or more target points".into(),
            ));
        }
        Ok(Self { resolution, cells })
    }

    fn cell_for(&self, p: &Point2) -> Option<&CellGaussian> {
        let key =
            ((p.x / self.resolution).floor() as i64, (p.y / self.resolution).floor() as i64);
        self.cells.get(&key)
    }

    /// NDT score of the transformed source: the sum over points of
    /// `exp(-0.5 * mahalanobis^2)` against the Gaussian of the containing cell.
    pub fn score(&self, src: &[Point2], theta: &Pose2D) -> f64 {
        src.iter()
            .map(|x| {
                let p = theta.apply(*x);
                match self.cell_for(&p) {
                    None => 0.0,
                    Some(g) => {
                        let qx = p.x - g.mean.x;
                        let qy = p.y - g.mean.y;
                        let m = g.inv[0] * qx * qx + 2.0 * g.inv[1] * qx * qy + g.inv[2] * qy * qy;
                        (-0.5 * m).exp()
                    }
                }
            })
            .sum()
    }

    /// Analytic gradient of the score with respect to `(tx, ty, phi)`.
    pub fn score_gradient(&self, src: &[Point2], theta: &Pose2D) -> [f64; 3] {
        let (s, c) = theta.phi.sin_cos();
        let mut grad = [0.0; 3];
        for x in src {
            let p = theta.apply(*x);
            let Some(g) = self.cell_for(&p) else { continue };
            let qx = p.x - g.mean.x;
            let qy = p.y - g.mean.y;
            let lx = g.inv[0] * qx + g.inv[1] * qy;
            let ly = g.inv[1] * qx + g.inv[2] * qy;
            let m = qx * lx + qy * ly;
            let e = (-0.5 * m).exp();
            // d(R x + t) / d phi = R'(phi) x
            let dpx = -s * x.x - c * x.y;
            let dpy = c * x.x - s * x.y;
            grad[0] += -e * lx;
            grad[1] += -e * ly;
            grad[2] += -e * (lx * dpx + ly * dpy);
        }
        grad
    }

    /// Gauss-Newton surrogate for the score curvature.
    fn approx_hessian(&self, src: &[Point2], theta: &Pose2D) -> [[f64; 3]; 3] {
        let (s, c) = theta.phi.sin_cos();
        let mut h = [[0.0; 3]; 3];
        for x in src {
            let p = theta.apply(*x);
            let Some(g) = self.cell_for(&p) else { continue };
            let qx = p.x - g.mean.x;
            let qy = p.y - g.mean.y;
            let m = g.inv[0] * qx * qx + 2.0 * g.inv[1] * qx * qy + g.inv[2] * qy * qy;
            let e = (-0.5 * m).exp();
            let dpx = -s * x.x - c * x.y;
            let dpy = c * x.x - s * x.y;
            // Jacobian of p(theta): columns [1,0,dpx] and [0,1,dpy].
            let j = [[1.0, 0.0, dpx], [0.0, 1.0, dpy]];
            for a in 0..3 {
                for b in 0..3 {
                    let ja = [j[0][a], j[1][a]];
                    let jb = [j[0][b], j[1][b]];
                    let lam_jb = [
                        g.inv[0] * jb[0] + g.inv[1] * jb[1],
                        g.inv[1] * jb[0] + g.inv[2] * jb[1],
                    ];
                    h[a][b] += e * (ja[0] * lam_jb[0] + ja[1] * lam_jb[1]);
                }
            }
        }
        h
    }
}

fn solve3(a: &[[f64; 3]; 3], b: &[f64; 3]) -> Option<[f64; 3]> {
    // Gaussian elimination with partial pivoting.
    let mut m = [[0.0f64; 4]; 3];
    for i in 0..3 {
        m[i][..3].copy_from_slice(&a[i]);
        m[i][3] = b[i];
    }
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap())?;
        if m[piv][col].abs() < 1e-12 {
            return None;
        }
        m.swap(col, piv);
        for row in 0..3 {
            if row == col {
                continue;
            }
            let f = m[row][col] / m[col][col];
            for k in col..4 {
                m[row][k] -= f * m[col][k];
            }
        }
    }
    Some([m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]])
}

/// Maximum source points fed into the NDT optimizer.
pub const NDT_SOURCE_CAP: usize = 8_000;

/// 2D NDT alignment: maximizes the NDT score by Gauss-Newton ascent with
/// step halving (at most 10 halvings per iteration), so the score never
/// decreases across accepted steps. Stops on the iteration budget, a step
/// norm below `1e-4`, or an unproductive step.
pub fn ndt_2d(
    src: &[Point2],
    dst: &[Point2],
    theta0: &Pose2D,
    iters: usize,
    grid: f64,
) -> Result<Pose2D, BaselineError> {
    let grid_model = NdtGrid::build(dst, grid)?;
    Ok(ndt_align(&grid_model, src, theta0, iters))
}

/// NDT alignment against a prebuilt grid (lets callers reuse the Gaussians
/// across many solves).
pub fn ndt_align(grid_model: &NdtGrid, src: &[Point2], theta0: &Pose2D, iters: usize) -> Pose2D {
    let src_capped: Vec<Point2> = if src.len() > NDT_SOURCE_CAP {
        let k = src.len().div_ceil(NDT_SOURCE_CAP);
        src.iter().step_by(k).copied().collect()
    } else {
        src.to_vec()
    };

    let mut theta = *theta0;
    let mut score = grid_model.score(&src_capped, &theta);

    for _ in 0..iters {
        let g = grid_model.score_gradient(&src_capped, &theta);
        let mut h = grid_model.approx_hessian(&src_capped, &theta);
        for (i, row) in h.iter_mut().enumerate() {
            row[i] += 1e-9;
        }
        // Ascent direction: solve H * step = gradient.
        let Some(step) = solve3(&h, &g) else { break };
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=10 {
            let cand = Pose2D::new(
                theta.tx + scale * step[0],
                theta.ty + scale * step[1],
                theta.phi + scale * step[2],
            );
            let cand_score = grid_model.score(&src_capped, &cand);
            if cand_score >= score {
                let norm =
                    (step[0] * step[0] + step[1] * step[1] + step[2] * step[2]).sqrt() * scale;
                theta = cand;
                score = cand_score;
                accepted = true;
                if norm < STEP_EPS {
                    return theta;
                }
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    theta
}
