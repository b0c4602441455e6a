//! Lambda Twist P3P (Persson and Nordberg), in double precision.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geom::Pose;

/// Up to four poses with `λᵢ·fᵢ = R·xᵢ + t` for unit bearings `fᵢ` and world
/// points `xᵢ`.
pub fn p3p(bearings: &[Vector3<f64>; 3], world: &[Vector3<f64>; 3]) -> Result<Vec<Pose>> {
    let d12 = world[0] - world[1];
    let d13 = world[0] - world[2];
    let d23 = world[1] - world[2];
    let cross = d12.cross(&d13);
    let scale = d12.norm() * d13.norm();
    if scale < 1e-12 || cross.norm() < 1e-9 * scale {
        return Err(Error::DegenerateSample);
    }
    let f1 = bearings[0].normalize();
    let f2 = bearings[1].normalize();
    let f3 = bearings[2].normalize();

    let a12 = d12.norm_squared();
    let a13 = d13.norm_squared();
    let a23 = d23.norm_squared();
    let c12 = f1.dot(&f2);
    let c23 = f2.dot(&f3);
    let c31 = f3.dot(&f1);
    let blob = c12 * c23 * c31 - 1.0;
    let s12 = 1.0 - c12 * c12;
    let s23 = 1.0 - c23 * c23;
    let s31 = 1.0 - c31 * c31;
    let b12 = -2.0 * c12;
    let b13 = -2.0 * c31;
    let b23 = -2.0 * c23;

    let p3 = a13 * (a23 * s31 - a13 * s23);
    let p2 = 2.0 * blob * a23 * a13 + a13 * (2.0 * a12 + a13) * s23 + a23 * (a23 - a12) * s31;
    let p1 = a23 * (a13 - a23) * s12 - a12 * a12 * s23 - 2.0 * a12 * (blob * a23 + a13 * s23);
    let p0 = a12 * (a12 * s23 - a23 * s12);
    if p3.abs() < 1e-300 {
        return Err(Error::DegenerateSample);
    }
    let g = cubic_root(p2 / p3, p1 / p3, p0 / p3);

    let d0 = Matrix3::new(
        a23 * (1.0 - g),
        -(a23 * c12),
        a23 * c31 * g,
        -(a23 * c12),
        a23 - a12 + a13 * g,
        -c23 * (a13 * g - a12),
        a23 * c31 * g,
        -c23 * (a13 * g - a12),
        g * (a13 - a23) - a12,
    );
    let (vecs, vals) = eigen_singular(&d0);
    let ratio = (-vals[1] / vals[0]).max(0.0).sqrt();

    let mut lambdas: Vec<Vector3<f64>> = Vec::with_capacity(4);
    for s in [ratio, -ratio] {
        let w2 = 1.0 / (s * vecs[(0, 1)] - vecs[(0, 0)]);
        let w0 = w2 * (vecs[(1, 0)] - s * vecs[(1, 1)]);
        let w1 = w2 * (vecs[(2, 0)] - s * vecs[(2, 1)]);
        let a = 1.0 / ((a13 - a12) * w1 * w1 - a12 * b13 * w1 - a12);
        let b = a * (a13 * b12 * w1 - a12 * b13 * w0 - 2.0 * w0 * w1 * (a12 - a13));
        let c = a * ((a13 - a12) * w0 * w0 + a13 * b12 * w0 + a13);
        if !(b * b - 4.0 * c >= 0.0) {
            continue;
        }
        let (_, t1, t2) = quadratic_roots(b, c);
        for tau in [t1, t2] {
            if tau <= 0.0 {
                continue;
            }
            let d = a23 / (tau * (b23 + tau) + 1.0);
            if d > 0.0 {
                let l2 = d.sqrt();
                let l3 = tau * l2;
                let l1 = w0 * l2 + w1 * l3;
                if l1 >= 0.0 {
                    lambdas.push(Vector3::new(l1, l2, l3));
                }
            }
        }
    }

    let x = Matrix3::from_columns(&[d12, d13, cross]);
    let x_inv = x.try_inverse().ok_or(Error::DegenerateSample)?;
    let mut poses = Vec::with_capacity(lambdas.len());
    for l in lambdas {
        let l = refine_lambda(l, a12, a13, a23, b12, b13, b23);
        let r1 = l[0] * f1;
        let r2 = l[1] * f2;
        let r3 = l[2] * f3;
        let y1 = r1 - r2;
        let y2 = r1 - r3;
        let y = Matrix3::from_columns(&[y1, y2, y1.cross(&y2)]);
        let rot = y * x_inv;
        if !rot.iter().all(|v| v.is_finite()) {
            continue;
        }
        let t = r1 - rot * world[0];
        poses.push(Pose::from_matrix(&rot, t));
    }
    Ok(poses)
}

fn refine_lambda(lambda: Vector3<f64>, a12: f64, a13: f64, a23: f64, b12: f64, b13: f64, b23: f64) -> Vector3<f64> {
    let residual = |l: &Vector3<f64>| {
        Vector3::new(
            l.x * l.x + l.y * l.y + b12 * l.x * l.y - a12,
            l.x * l.x + l.z * l.z + b13 * l.x * l.z - a13,
            l.y * l.y + l.z * l.z + b23 * l.y * l.z - a23,
        )
    };
    let mut l = lambda;
    let mut r = residual(&l);
    for _ in 0..5 {
        if r.lp_norm(1) < 1e-14 {
            break;
        }
        let d11 = 2.0 * l.x + b12 * l.y;
        let d12 = 2.0 * l.y + b12 * l.x;
        let d21 = 2.0 * l.x + b13 * l.z;
        let d23 = 2.0 * l.z + b13 * l.x;
        let d32 = 2.0 * l.y + b23 * l.z;
        let d33 = 2.0 * l.z + b23 * l.y;
        let det = 1.0 / (-d11 * d23 * d32 - d12 * d21 * d33);
        let j = Matrix3::new(
            -d23 * d32,
            -d12 * d33,
            d12 * d23,
            -d21 * d33,
            d11 * d33,
            -d11 * d23,
            d21 * d32,
            -d11 * d32,
            -d12 * d21,
        );
        let next = l - det * (j * r);
        let rn = residual(&next);
        if !(rn.lp_norm(1) < r.lp_norm(1)) {
            break;
        }
        l = next;
        r = rn;
    }
    l
}

/// Real roots of `r² + b·r + c`, in the cancellation-free form.
fn quadratic_roots(b: f64, c: f64) -> (bool, f64, f64) {
    let disc = b * b - 4.0 * c;
    if disc < 0.0 {
        return (false, 0.5 * b, 0.5 * b);
    }
    let y = disc.sqrt();
    if b < 0.0 {
        (true, 0.5 * (-b + y), 0.5 * (-b - y))
    } else {
        (true, 2.0 * c / (-b + y), 2.0 * c / (-b - y))
    }
}

/// One real root of `r³ + b·r² + c·r + d` with a large derivative, by Newton
/// iteration from a start chosen by the stationary points.
fn cubic_root(b: f64, c: f64, d: f64) -> f64 {
    let h = |r: f64| ((r + b) * r + c) * r + d;
    let hp = |r: f64| (3.0 * r + 2.0 * b) * r + c;
    let mut r0;
    if b * b >= 3.0 * c {
        let v = (b * b - 3.0 * c).sqrt();
        let t1 = (-b - v) / 3.0;
        let k = h(t1);
        if k > 0.0 {
            r0 = t1 - (-k / (3.0 * t1 + b)).sqrt();
        } else {
            let t2 = (-b + v) / 3.0;
            let k2 = h(t2);
            r0 = t2 + (-k2 / (3.0 * t2 + b)).sqrt();
        }
    } else {
        r0 = -b / 3.0;
        if hp(r0).abs() < 1e-4 {
            r0 += 1.0;
        }
    }
    for i in 0..50 {
        let fx = h(r0);
        if i >= 7 && fx.abs() < 1e-13 {
            break;
        }
        let fpx = hp(r0);
        if fpx == 0.0 {
            break;
        }
        r0 -= fx / fpx;
    }
    r0
}

/// Eigen-decomposition of a symmetric 3×3 matrix known to have a zero
/// eigenvalue; columns of the first output are eigenvectors, the null
/// vector last, and `|λ₀| ≥ |λ₁|`.
fn eigen_singular(x: &Matrix3<f64>) -> (Matrix3<f64>, [f64; 2]) {
    let (m11, m12, m13) = (x[(0, 0)], x[(0, 1)], x[(0, 2)]);
    let (m22, m23, m33) = (x[(1, 1)], x[(1, 2)], x[(2, 2)]);
    // Column-major flat indices as in the reference implementation.
    let v3 = Vector3::new(
        x[(1, 0)] * x[(2, 1)] - x[(2, 0)] * x[(1, 1)],
        x[(2, 0)] * x[(0, 1)] - x[(2, 1)] * x[(0, 0)],
        x[(1, 1)] * x[(0, 0)] - x[(1, 0)] * x[(0, 1)],
    )
    .normalize();
    let b = -m11 - m22 - m33;
    let c = -m12 * m12 - m13 * m13 - m23 * m23 + m11 * (m22 + m33) + m22 * m33;
    let (_, mut e1, mut e2) = quadratic_roots(b, c);
    if e1.abs() < e2.abs() {
        std::mem::swap(&mut e1, &mut e2);
    }
    let mx0011 = -m11 * m22;
    let prec0 = m12 * m23 - m13 * m22;
    let prec1 = m12 * m13 - m11 * m23;
    let vec = |e: f64| {
        let tmp = 1.0 / (e * (m11 + m22) + mx0011 - e * e + m12 * m12);
        let a1 = -(e * m13 + prec0) * tmp;
        let a2 = -(e * m23 + prec1) * tmp;
        let rn = 1.0 / (a1 * a1 + a2 * a2 + 1.0).sqrt();
        Vector3::new(a1 * rn, a2 * rn, rn)
    };
    (Matrix3::from_columns(&[vec(e1), vec(e2), v3]), [e1, e2])
}
