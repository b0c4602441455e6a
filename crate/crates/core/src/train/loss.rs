use nalgebra::{Matrix2x3, Vector3};

use crate::error::{Error, Result};
use crate::geom::{is_valid, unproject, CameraIntrinsics, Keypoint, Pose, ValidityConfig};
use crate::linalg::Matrix;

/// Robust-loss bandwidth: `√(1−t²)·τ_max + τ_min`.
pub fn tau(t: f64, tau_min: f64, tau_max: f64) -> f64 {
    (1.0 - t * t).max(0.0).sqrt() * tau_max + tau_min
}

/// Consistency weight: `(1 + cos 2πt)/2` on `[0, 0.5]`, then 0.
pub fn lambda_weight(t: f64) -> f64 {
    if t <= 0.5 {
        (1.0 + (std::f64::consts::TAU * t).cos()) / 2.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RobustKernel {
    Tanh,
    GemanMcClure,
}

impl RobustKernel {
    pub fn rho(self, x: f64) -> f64 {
        match self {
            RobustKernel::Tanh => x.tanh(),
            RobustKernel::GemanMcClure => {
                let s = 9.0 * x * x;
                s / (s + 4.0)
            }
        }
    }

    pub fn rho_prime(self, x: f64) -> f64 {
        match self {
            RobustKernel::Tanh => 1.0 - x.tanh().powi(2),
            RobustKernel::GemanMcClure => {
                let d = 9.0 * x * x + 4.0;
                72.0 * x / (d * d)
            }
        }
    }
}

/// `τ(t)·ρ(e/τ(t))`.
pub fn robust_dynamic(e: f64, t: f64, tau_min: f64, tau_max: f64, kernel: RobustKernel) -> f64 {
    let tt = tau(t, tau_min, tau_max);
    tt * kernel.rho(e / tt)
}

/// Depth-adjusted error `(e2/σ₂)·√(d²/(d² + (σ₃/σ₂)²))`.
pub fn depth_adjusted_error(e2: f64, d: f64, sigma2: f64, sigma3: f64) -> Result<f64> {
    if d <= 0.0 {
        return Err(Error::NonPositiveDepth { depth: d });
    }
    Ok(e2 / sigma2 * depth_factor(d, sigma3 / sigma2))
}

/// `d/√(d² + k²)` for `d > 0`.
fn depth_factor(d: f64, k: f64) -> f64 {
    d / (d * d + k * k).sqrt()
}

fn depth_factor_prime(d: f64, k: f64) -> f64 {
    let s = d * d + k * k;
    k * k / (s * s.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub tau_min: f64,
    pub tau_max_coarse: f64,
    pub tau_max_final: f64,
    pub sigma2: f64,
    /// 0 disables the depth adjustment.
    pub sigma3: f64,
    pub validity: ValidityConfig,
    pub depth_supervision: bool,
    /// Treat the coarse depth as a constant inside the adjustment factor.
    pub detach_depth: bool,
    /// Send the consistency gradient into `y0` as well as `y`.
    pub consistency_into_coarse: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau_min: 1.0,
            tau_max_coarse: 50.0,
            tau_max_final: 25.0,
            sigma2: 1.0,
            sigma3: 3.0,
            validity: ValidityConfig::default(),
            depth_supervision: false,
            detach_depth: true,
            consistency_into_coarse: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.tau_min > 0.0
            && self.tau_max_coarse > 0.0
            && self.tau_max_final > 0.0
            && self.sigma2 > 0.0
            && self.sigma3 >= 0.0;
        if !ok {
            return Err(Error::InvalidConfig("loss bandwidths and sigmas out of range".into()));
        }
        self.validity.validate()
    }
}

/// Observation context of one training row.
#[derive(Debug, Clone, Copy)]
pub struct LossRow<'a> {
    pub keypoint: Keypoint,
    pub pose: &'a Pose,
    pub intrinsics: &'a CameraIntrinsics,
    pub gt_depth: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowDiagnostics {
    /// Reprojection error of the final output (`∞` behind the camera).
    pub e2: f64,
    /// Camera-frame depth of the final output.
    pub depth: f64,
    pub valid_coarse: bool,
    pub valid_final: bool,
}

#[derive(Debug, Clone)]
pub struct BatchLoss {
    pub loss: f64,
    pub dy0: Matrix,
    pub dy: Matrix,
    pub rows: Vec<RowDiagnostics>,
}

struct Reproj {
    e2: f64,
    depth: f64,
    /// `∂e2/∂y`; zero when `e2 = 0`.
    grad: Vector3<f64>,
    /// Third row of `R`: `∂depth/∂y`.
    depth_grad: Vector3<f64>,
}

fn reproj(x: &Keypoint, k: &CameraIntrinsics, r: &nalgebra::Matrix3<f64>, t: &Vector3<f64>, y: &Vector3<f64>) -> Reproj {
    let p = r * y + t;
    let depth_grad = r.row(2).transpose();
    if p.z <= 1e-9 {
        return Reproj {
            e2: f64::INFINITY,
            depth: p.z,
            grad: Vector3::zeros(),
            depth_grad,
        };
    }
    let iz = 1.0 / p.z;
    let u = k.fx * p.x * iz + k.cx - x.x;
    let v = k.fy * p.y * iz + k.cy - x.y;
    let e2 = (u * u + v * v).sqrt();
    let grad = if e2 > 0.0 {
        let j = Matrix2x3::new(k.fx * iz, 0.0, -k.fx * p.x * iz * iz, 0.0, k.fy * iz, -k.fy * p.y * iz * iz);
        (j * r).transpose() * nalgebra::Vector2::new(u / e2, v / e2)
    } else {
        Vector3::zeros()
    };
    Reproj { e2, depth: p.z, grad, depth_grad }
}

/// `(‖a − b‖, ∂/∂a)`, with a zero gradient at coincidence.
fn dist(a: &Vector3<f64>, b: &Vector3<f64>) -> (f64, Vector3<f64>) {
    let d = a - b;
    let n = d.norm();
    (n, if n > 0.0 { d / n } else { Vector3::zeros() })
}

fn row3(m: &Matrix, r: usize) -> Vector3<f64> {
    let s = m.row(r);
    Vector3::new(s[0], s[1], s[2])
}

fn add_row(m: &mut Matrix, r: usize, v: &Vector3<f64>, scale: f64) {
    let s = m.row_mut(r);
    for a in 0..3 {
        s[a] += scale * v[a];
    }
}

/// Mean training loss over rows at relative time `t`, with adjoints for both outputs.
pub fn batch_loss(y0: &Matrix, y: &Matrix, rows: &[LossRow<'_>], t: f64, cfg: &LossConfig) -> BatchLoss {
    let n = rows.len();
    assert_eq!(y0.shape(), (n, 3));
    assert_eq!(y.shape(), (n, 3));
    let mut dy0 = Matrix::zeros(n, 3);
    let mut dy = Matrix::zeros(n, 3);
    let mut diags = Vec::with_capacity(n);
    let mut total = 0.0;
    let inv_n = if n > 0 { 1.0 / n as f64 } else { 0.0 };
    let lam = lambda_weight(t);
    let tau_c = tau(t, cfg.tau_min, cfg.tau_max_coarse);
    let tau_f = tau(t, cfg.tau_min, cfg.tau_max_final);
    let k = cfg.sigma3 / cfg.sigma2;

    for (i, row) in rows.iter().enumerate() {
        let r = row.pose.rotation_matrix();
        let tr = row.pose.translation;
        let p0 = row3(y0, i);
        let p = row3(y, i);
        let valid0 = is_valid(&p0, &row.keypoint, row.intrinsics, row.pose, &cfg.validity);
        let valid = is_valid(&p, &row.keypoint, row.intrinsics, row.pose, &cfg.validity);
        let pseudo = || unproject(&row.keypoint, row.intrinsics, row.pose, cfg.validity.d_target).expect("d_target > 0");

        let mut l = 0.0;
        let mut g0 = Vector3::zeros();
        let mut g = Vector3::zeros();

        let rp0 = reproj(&row.keypoint, row.intrinsics, &r, &tr, &p0);
        if valid0 {
            let s = depth_factor(rp0.depth, k);
            let e3 = rp0.e2 / cfg.sigma2 * s;
            l += tau_c * RobustKernel::GemanMcClure.rho(e3 / tau_c);
            let w = RobustKernel::GemanMcClure.rho_prime(e3 / tau_c);
            g0 += rp0.grad * (w * s / cfg.sigma2);
            if !cfg.detach_depth {
                g0 += rp0.depth_grad * (w * rp0.e2 / cfg.sigma2 * depth_factor_prime(rp0.depth, k));
            }
        } else {
            let (d, dd) = dist(&p0, &pseudo());
            l += d;
            g0 += dd;
        }

        let rp = reproj(&row.keypoint, row.intrinsics, &r, &tr, &p);
        if valid {
            l += tau_f * RobustKernel::Tanh.rho(rp.e2 / tau_f);
            g += rp.grad * RobustKernel::Tanh.rho_prime(rp.e2 / tau_f);
        } else {
            let (d, dd) = dist(&p, &pseudo());
            l += d;
            g += dd;
        }

        if lam > 0.0 {
            match row.gt_depth.filter(|_| cfg.depth_supervision) {
                Some(depth) => {
                    let gt = unproject(&row.keypoint, row.intrinsics, row.pose, depth).expect("positive gt depth");
                    let (a, da) = dist(&p, &gt);
                    let (b, db) = dist(&p0, &gt);
                    l += lam * (a + b);
                    g += da * lam;
                    g0 += db * lam;
                }
                None => {
                    let (d, dd) = dist(&p, &p0);
                    l += lam * d;
                    g += dd * lam;
                    if cfg.consistency_into_coarse {
                        g0 -= dd * lam;
                    }
                }
            }
        }

        total += l;
        add_row(&mut dy0, i, &g0, inv_n);
        add_row(&mut dy, i, &g, inv_n);
        diags.push(RowDiagnostics {
            e2: rp.e2,
            depth: rp.depth,
            valid_coarse: valid0,
            valid_final: valid,
        });
    }
    BatchLoss {
        loss: total * inv_n,
        dy0,
        dy,
        rows: diags,
    }
}
