//! Rotation and hypersphere utilities: Euler Y-X-Z angles to unit
//! quaternions, sign-invariant rotation distance, and approximately
//! equispaced point sets on the 2-sphere and 3-sphere.
//!
//! Quaternions use the Hamilton convention with the scalar first. `q` and
//! `-q` encode the same rotation; nothing here collapses the two.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use nalgebra::Matrix3;

use crate::error::{Error, Result};

/// Unit quaternion `w + xi + yj + zk`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Normalizes the components; fails on zero or non-finite input.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::invalid("quaternion must be finite and nonzero"));
        }
        Ok(Quaternion {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        })
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(&self, o: &Quaternion) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn neg(&self) -> Quaternion {
        Quaternion {
            w: -self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    /// Rotation matrix acting on column vectors.
    pub fn to_rotation_matrix(&self) -> Matrix3<f64> {
        let Quaternion { w, x, y, z } = *self;
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }
}

/// Euler angles in radians under the Y-X-Z convention: the rotation is
/// `R_y(phi1) R_x(phi2) R_z(phi3)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerYXZ {
    pub phi1: f64,
    pub phi2: f64,
    pub phi3: f64,
}

impl EulerYXZ {
    pub fn new(phi1: f64, phi2: f64, phi3: f64) -> Result<Self> {
        if !(phi1.is_finite() && phi2.is_finite() && phi3.is_finite()) {
            return Err(Error::NonFinite("Euler angles"));
        }
        Ok(EulerYXZ { phi1, phi2, phi3 })
    }
}

/// Half-angle product form of `q_y(phi1) q_x(phi2) q_z(phi3)`.
pub fn euler_yxz_to_quaternion(e: EulerYXZ) -> Quaternion {
    let (s1, c1) = (e.phi1 / 2.0).sin_cos();
    let (s2, c2) = (e.phi2 / 2.0).sin_cos();
    let (s3, c3) = (e.phi3 / 2.0).sin_cos();
    let w = s1 * s2 * s3 + c1 * c2 * c3;
    let x = s1 * c2 * s3 + c1 * s2 * c3;
    let y = s1 * c2 * c3 - c1 * s2 * s3;
    let z = c1 * c2 * s3 - s1 * s2 * c3;
    // The product of unit quaternions is unit; this only trims rounding.
    Quaternion::new(w, x, y, z).expect("finite angles give a unit quaternion")
}

/// Rotation angle between two orientations, `2 acos |a . b|`, in `[0, pi]`.
pub fn quaternion_geodesic_distance(a: &Quaternion, b: &Quaternion) -> Result<f64> {
    for q in [a, b] {
        if (q.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!("quaternion norm {} is not 1", q.norm())));
        }
    }
    Ok(2.0 * a.dot(b).abs().min(1.0).acos())
}

/// Equal-area spiral points on the unit 2-sphere for a target area per point.
/// Points lie on latitude rings spaced about `sqrt(area)` apart.
fn deserno_with_area(area: f64) -> Vec<[f64; 3]> {
    let d = area.sqrt();
    let m_theta = ((PI / d).round() as usize).max(1);
    let d_theta = PI / m_theta as f64;
    let d_phi = area / d_theta;
    let mut out = Vec::new();
    for m in 0..m_theta {
        let theta = PI * (m as f64 + 0.5) / m_theta as f64;
        let m_phi = ((2.0 * PI * theta.sin() / d_phi).round() as usize).max(1);
        for n in 0..m_phi {
            let phi = 2.0 * PI * n as f64 / m_phi as f64;
            out.push([theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()]);
        }
    }
    out
}

fn sphere3(n: usize) -> Vec<[f64; 3]> {
    if n == 1 {
        return vec![[0.0, 0.0, 1.0]];
    }
    deserno_with_area(4.0 * PI / n as f64)
}

/// Points on the 3-sphere: the polar angle from the `w` axis is cut into
/// bands, each band gets a count proportional to its `sin^2` weighted area,
/// and the 2-sphere construction spreads that count within the band.
fn sphere4_with_area(area: f64) -> Vec<[f64; 4]> {
    let d = area.cbrt();
    let m_psi = ((PI / d).round() as usize).max(1);
    let d_psi = PI / m_psi as f64;
    let mut out = Vec::new();
    for m in 0..m_psi {
        let psi = PI * (m as f64 + 0.5) / m_psi as f64;
        let (s, c) = psi.sin_cos();
        let band = 4.0 * PI * s * s * d_psi;
        let count = (band / area).round() as usize;
        if count == 0 {
            continue;
        }
        for p in sphere3(count) {
            out.push([c, s * p[0], s * p[1], s * p[2]]);
        }
    }
    out
}

fn sphere4(n: usize) -> Vec<[f64; 4]> {
    if n == 1 {
        return vec![[1.0, 0.0, 0.0, 0.0]];
    }
    sphere4_with_area(2.0 * PI * PI / n as f64)
}

/// Rescales the per-point area a few times so the banded construction lands
/// close to `n`, keeping the closest attempt.
fn fit_count<T>(n: usize, base_area: f64, build: impl Fn(f64) -> Vec<T>) -> Vec<T> {
    let mut area = base_area;
    let mut best = build(area);
    for _ in 0..16 {
        let err = best.len() as f64 / n as f64 - 1.0;
        if err.abs() <= 0.01 {
            break;
        }
        area *= best.len().max(1) as f64 / n as f64;
        let next = build(area);
        if (next.len() as f64 - n as f64).abs() < (best.len() as f64 - n as f64).abs() {
            best = next;
        }
    }
    best
}

/// About `n` roughly equispaced unit vectors on the sphere in `dim`
/// dimensions (3 or 4). The ring construction cannot hit every count exactly;
/// the result is within a few percent of `n` for moderate `n`. `n = 1` gives
/// the pole: `(0, 0, 1)` in 3D and the identity quaternion in 4D.
pub fn equispaced_hypersphere(n: usize, dim: usize) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::invalid("point count must be at least 1"));
    }
    match dim {
        3 => {
            if n == 1 {
                return Ok(vec![sphere3(1)[0].to_vec()]);
            }
            Ok(fit_count(n, 4.0 * PI / n as f64, deserno_with_area)
                .into_iter()
                .map(|p| p.to_vec())
                .collect())
        }
        4 => {
            if n == 1 {
                return Ok(vec![sphere4(1)[0].to_vec()]);
            }
            Ok(fit_count(n, 2.0 * PI * PI / n as f64, sphere4_with_area)
                .into_iter()
                .map(|p| p.to_vec())
                .collect())
        }
        _ => Err(Error::invalid(format!("dimension must be 3 or 4, got {dim}"))),
    }
}

/// One point per line, coordinates space-separated, after a `#` header.
pub fn write_points<W: Write>(mut w: W, points: &[Vec<f64>]) -> std::io::Result<()> {
    let k = points.first().map_or(0, |p| p.len());
    let header: Vec<String> = (0..k).map(|i| format!("x_{i}")).collect();
    writeln!(w, "# {}", header.join(" "))?;
    for p in points {
        let fields: Vec<String> = p.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", fields.join(" "))?;
    }
    Ok(())
}

pub fn read_points<R: BufRead>(r: R) -> std::result::Result<Vec<Vec<f64>>, String> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| format!("line {}: {e}", i + 1))?;
        if let Some(first) = out.first() {
            if first.len() != vals.len() {
                return Err(format!("line {}: {} fields, expected {}", i + 1, vals.len(), first.len()));
            }
        }
        out.push(vals);
    }
    Ok(out)
}
