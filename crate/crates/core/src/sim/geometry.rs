use serde::{Deserialize, Serialize};

pub type Point3 = [f64; 3];

#[inline]
pub fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add_scaled(a: Point3, d: Point3, t: f64) -> Point3 {
    [a[0] + t * d[0], a[1] + t * d[1], a[2] + t * d[2]]
}

#[inline]
pub fn norm(a: Point3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

#[inline]
pub fn dist(a: Point3, b: Point3) -> f64 {
    norm(sub(a, b))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoxKind {
    Building,
    Vehicle,
}

/// Axis-aligned box resting on the ground plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
    pub kind: BoxKind,
}

const EDGE_EPS: f64 = 1e-9;

impl Aabb {
    pub fn new(min: Point3, max: Point3, kind: BoxKind) -> Self {
        Aabb { min, max, kind }
    }

    /// Box with footprint centred on `(cx, cy)`.
    pub fn centered(cx: f64, cy: f64, len: f64, width: f64, height: f64, kind: BoxKind) -> Self {
        Aabb {
            min: [cx - len / 2.0, cy - width / 2.0, 0.0],
            max: [cx + len / 2.0, cy + width / 2.0, height],
            kind,
        }
    }

    pub fn volume(&self) -> f64 {
        (0..3).map(|k| self.max[k] - self.min[k]).product()
    }

    pub fn contains(&self, p: Point3) -> bool {
        (0..3).all(|k| p[k] > self.min[k] && p[k] < self.max[k])
    }

    pub fn center(&self) -> Point3 {
        [
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        ]
    }

    pub fn diagonal(&self) -> f64 {
        dist(self.min, self.max)
    }

    /// Parametric entry/exit of the line `o + t·d` through the box, if any.
    fn slab(&self, o: Point3, d: Point3) -> Option<(f64, f64)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for k in 0..3 {
            if d[k].abs() < 1e-300 {
                if o[k] < self.min[k] || o[k] > self.max[k] {
                    return None;
                }
            } else {
                let inv = 1.0 / d[k];
                let (mut a, mut b) = ((self.min[k] - o[k]) * inv, (self.max[k] - o[k]) * inv);
                if a > b {
                    std::mem::swap(&mut a, &mut b);
                }
                t0 = t0.max(a);
                t1 = t1.min(b);
                if t0 > t1 {
                    return None;
                }
            }
        }
        Some((t0, t1))
    }

    /// True when the open segment `a → b` passes through the box interior
    /// for a positive length. Grazing contact at the endpoints does not count.
    pub fn blocks_segment(&self, a: Point3, b: Point3) -> bool {
        let d = sub(b, a);
        match self.slab(a, d) {
            Some((t0, t1)) => {
                let lo = t0.max(0.0);
                let hi = t1.min(1.0);
                hi - lo > EDGE_EPS
            }
            None => false,
        }
    }

    /// Distance along a unit ray to its first intersection with the box,
    /// ignoring hits behind the origin.
    pub fn ray_hit(&self, o: Point3, dir: Point3) -> Option<f64> {
        let (t0, t1) = self.slab(o, dir)?;
        if t1 < 0.0 {
            None
        } else if t0 >= 0.0 {
            Some(t0)
        } else {
            // origin inside the box: the ray exits through t1
            Some(t1)
        }
    }

    /// Distance from `p` to the box surface (0 when on the boundary).
    pub fn surface_distance(&self, p: Point3) -> f64 {
        let mut outside = 0.0;
        let mut inside = f64::INFINITY;
        for k in 0..3 {
            let below = self.min[k] - p[k];
            let above = p[k] - self.max[k];
            let d = below.max(above);
            if d > 0.0 {
                outside += d * d;
            } else {
                inside = inside.min(-d);
            }
        }
        if outside > 0.0 {
            outside.sqrt()
        } else {
            inside
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_blockage() {
        let b = Aabb::new([0.0, 0.0, 0.0], [1.0, 1.0, 1.0], BoxKind::Building);
        assert!(b.blocks_segment([-1.0, 0.5, 0.5], [2.0, 0.5, 0.5]));
        assert!(!b.blocks_segment([-1.0, 0.5, 1.5], [2.0, 0.5, 1.5]));
        assert!(!b.blocks_segment([-1.0, 0.5, 0.5], [-0.5, 0.5, 0.5]));
        // ends exactly on the face
        assert!(!b.blocks_segment([-1.0, 0.5, 0.5], [0.0, 0.5, 0.5]));
    }

    #[test]
    fn ray_hit_front_face() {
        let b = Aabb::new([5.0, -1.0, 0.0], [6.0, 1.0, 2.0], BoxKind::Vehicle);
        let t = b.ray_hit([0.0, 0.0, 1.0], [1.0, 0.0, 0.0]).unwrap();
        assert!((t - 5.0).abs() < 1e-12);
        assert!(b.ray_hit([0.0, 0.0, 1.0], [-1.0, 0.0, 0.0]).is_none());
        assert!(b.surface_distance([5.0, 0.0, 1.0]) < 1e-12);
    }
}
