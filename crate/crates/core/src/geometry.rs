//! Poses, quaternion helpers and the workspace box.

use serde::{Deserialize, Serialize};

/// End-effector (or camera) pose: position in meters and a unit quaternion
/// stored as `(w, x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: [f64; 3],
    pub orientation: [f64; 4],
}

impl Pose {
    pub const IDENTITY_ORIENTATION: [f64; 4] = [1.0, 0.0, 0.0, 0.0];

    pub fn new(position: [f64; 3], orientation: [f64; 4]) -> Self {
        Self { position, orientation }
    }

    pub fn at(position: [f64; 3]) -> Self {
        Self::new(position, Self::IDENTITY_ORIENTATION)
    }

    /// Tool pointing straight down (local +z maps to world -z).
    pub fn looking_down(position: [f64; 3]) -> Self {
        // rotation of pi about the x axis
        Self::new(position, [0.0, 1.0, 0.0, 0.0])
    }

    pub fn is_valid(&self) -> bool {
        let finite = self.position.iter().chain(self.orientation.iter()).all(|v| v.is_finite());
        finite && (quat_norm(&self.orientation) - 1.0).abs() <= 1e-6
    }

    pub fn distance(&self, other: &Pose) -> f64 {
        norm3(&sub3(&self.position, &other.position))
    }

    /// Geodesic angle between the two orientations, radians.
    pub fn angle_to(&self, other: &Pose) -> f64 {
        quat_angle(&self.orientation, &other.orientation)
    }

    pub fn rotate(&self, v: &[f64; 3]) -> [f64; 3] {
        quat_rotate(&self.orientation, v)
    }

    /// Expresses a world point in this pose's local frame.
    pub fn to_local(&self, world: &[f64; 3]) -> [f64; 3] {
        let d = sub3(world, &self.position);
        quat_rotate(&quat_conj(&self.orientation), &d)
    }
}

pub fn sub3(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn norm3(a: &[f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

pub fn lerp3(a: &[f64; 3], b: &[f64; 3], s: f64) -> [f64; 3] {
    [a[0] + (b[0] - a[0]) * s, a[1] + (b[1] - a[1]) * s, a[2] + (b[2] - a[2]) * s]
}

pub fn quat_norm(q: &[f64; 4]) -> f64 {
    q.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn quat_normalize(q: &[f64; 4]) -> [f64; 4] {
    let n = quat_norm(q);
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

pub fn quat_conj(q: &[f64; 4]) -> [f64; 4] {
    [q[0], -q[1], -q[2], -q[3]]
}

pub fn quat_mul(a: &[f64; 4], b: &[f64; 4]) -> [f64; 4] {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

pub fn quat_rotate(q: &[f64; 4], v: &[f64; 3]) -> [f64; 3] {
    let p = [0.0, v[0], v[1], v[2]];
    let r = quat_mul(&quat_mul(q, &p), &quat_conj(q));
    [r[1], r[2], r[3]]
}

fn quat_dot(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn quat_angle(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let d = quat_dot(a, b).abs().min(1.0);
    2.0 * d.acos()
}

/// Spherical linear interpolation along the shorter arc.
pub fn slerp(a: &[f64; 4], b: &[f64; 4], s: f64) -> [f64; 4] {
    let mut b = *b;
    let mut dot = quat_dot(a, &b);
    if dot < 0.0 {
        b = [-b[0], -b[1], -b[2], -b[3]];
        dot = -dot;
    }
    if dot > 0.9995 {
        let q =
            [a[0] + (b[0] - a[0]) * s, a[1] + (b[1] - a[1]) * s, a[2] + (b[2] - a[2]) * s, a[3] + (b[3] - a[3]) * s];
        return quat_normalize(&q);
    }
    let theta = dot.acos();
    let sin_theta = theta.sin();
    let wa = ((1.0 - s) * theta).sin() / sin_theta;
    let wb = (s * theta).sin() / sin_theta;
    quat_normalize(&[wa * a[0] + wb * b[0], wa * a[1] + wb * b[1], wa * a[2] + wb * b[2], wa * a[3] + wb * b[3]])
}

/// Axis-aligned reachable workspace for the simulated arm and its camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Default for Workspace {
    fn default() -> Self {
        Self { min: [-0.8, -0.8, 0.0], max: [0.8, 0.8, 1.2] }
    }
}

impl Workspace {
    pub fn contains(&self, p: &[f64; 3]) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn looking_down_points_camera_axis_at_table() {
        let p = Pose::looking_down([0.0, 0.0, 0.5]);
        let z = p.rotate(&[0.0, 0.0, 1.0]);
        assert!((z[2] + 1.0).abs() < 1e-12);
        let local = p.to_local(&[0.0, 0.0, 0.0]);
        assert!((local[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn slerp_endpoints_and_midpoint() {
        let a = [1.0, 0.0, 0.0, 0.0];
        let half = std::f64::consts::FRAC_PI_4;
        let b = [half.cos(), 0.0, 0.0, half.sin()]; // 90 deg about z
        let mid = slerp(&a, &b, 0.5);
        assert!((quat_angle(&a, &mid) - std::f64::consts::FRAC_PI_4).abs() < 1e-9);
        assert!(quat_angle(&slerp(&a, &b, 1.0), &b) < 1e-7);
        assert!((quat_norm(&mid) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pose_validity() {
        assert!(Pose::at([0.0; 3]).is_valid());
        assert!(!Pose::new([0.0; 3], [1.0, 1.0, 0.0, 0.0]).is_valid());
        assert!(!Pose::at([f64::NAN, 0.0, 0.0]).is_valid());
    }
}
