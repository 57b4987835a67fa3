//! Parametric surfaces with exact normals and part labels.

use std::f64::consts::{PI, TAU};

use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vec3::{self, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeClass {
    Sphere,
    Cube,
    Cylinder,
    Cone,
    Torus,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 5] = [
        ShapeClass::Sphere,
        ShapeClass::Cube,
        ShapeClass::Cylinder,
        ShapeClass::Cone,
        ShapeClass::Torus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeClass::Sphere => "sphere",
            ShapeClass::Cube => "cube",
            ShapeClass::Cylinder => "cylinder",
            ShapeClass::Cone => "cone",
            ShapeClass::Torus => "torus",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == name)
            .ok_or_else(|| Error::invalid(format!("unknown shape class `{name}`")))
    }

    /// Number of parts: sphere hemispheres, cube axis pairs, cylinder
    /// side/top/bottom, cone side/base, torus outer/inner half.
    pub fn part_count(self) -> usize {
        match self {
            ShapeClass::Sphere | ShapeClass::Cone | ShapeClass::Torus => 2,
            ShapeClass::Cube | ShapeClass::Cylinder => 3,
        }
    }
}

/// A concrete surface. Every shape is centred at the origin with its axis
/// along z.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum Surface {
    Sphere { radius: f64 },
    /// Axis-aligned box with the given half-extents.
    Cube { half: Vec3 },
    Cylinder { radius: f64, height: f64 },
    /// Base disk at `z = -height/2`, apex at `z = height/2`.
    Cone { radius: f64, height: f64 },
    Torus { major: f64, minor: f64 },
}

/// One surface sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfacePoint {
    pub point: Vec3,
    pub normal: Vec3,
    pub part: usize,
}

fn unit_gaussian(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = [0; 3].map(|_| StandardNormal.sample(rng));
        if let Some(u) = vec3::normalize(v) {
            return u;
        }
    }
}

fn disk(rng: &mut ChaCha8Rng, radius: f64) -> (f64, f64) {
    let r = radius * rng.random::<f64>().sqrt();
    let t = rng.random_range(0.0..TAU);
    (r * t.cos(), r * t.sin())
}

impl Surface {
    pub fn class(&self) -> ShapeClass {
        match self {
            Surface::Sphere { .. } => ShapeClass::Sphere,
            Surface::Cube { .. } => ShapeClass::Cube,
            Surface::Cylinder { .. } => ShapeClass::Cylinder,
            Surface::Cone { .. } => ShapeClass::Cone,
            Surface::Torus { .. } => ShapeClass::Torus,
        }
    }

    /// Random proportions for `class`. Sizes vary the aspect ratio, which is
    /// what survives unit-sphere normalization.
    pub fn random(class: ShapeClass, rng: &mut ChaCha8Rng) -> Self {
        let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
        match class {
            ShapeClass::Sphere => Surface::Sphere { radius: u(0.8, 1.2) },
            ShapeClass::Cube => Surface::Cube {
                half: [u(0.8, 1.2), u(0.8, 1.2), u(0.8, 1.2)],
            },
            ShapeClass::Cylinder => Surface::Cylinder {
                radius: u(0.4, 0.7),
                height: u(1.2, 2.0),
            },
            ShapeClass::Cone => Surface::Cone {
                radius: u(0.5, 0.9),
                height: u(1.2, 2.0),
            },
            ShapeClass::Torus => Surface::Torus {
                major: u(0.7, 1.0),
                minor: u(0.2, 0.35),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        let ok = match *self {
            Surface::Sphere { radius } => positive(radius),
            Surface::Cube { half } => half.iter().all(|&h| positive(h)),
            Surface::Cylinder { radius, height } | Surface::Cone { radius, height } => {
                positive(radius) && positive(height)
            }
            Surface::Torus { major, minor } => positive(minor) && positive(major) && minor < major,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid surface parameters {self:?}")))
        }
    }

    /// Draws one point uniformly by area.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> SurfacePoint {
        match *self {
            Surface::Sphere { radius } => {
                let n = unit_gaussian(rng);
                SurfacePoint {
                    point: vec3::scale(n, radius),
                    normal: n,
                    part: usize::from(n[2] < 0.0),
                }
            }
            Surface::Cube { half: [a, b, c] } => {
                let areas = [b * c, a * c, a * b];
                let pick = rng.random_range(0.0..2.0 * (areas[0] + areas[1] + areas[2]));
                let (axis, sign) = {
                    let mut acc = 0.0;
                    let mut chosen = (2, 1.0);
                    'outer: for (axis, area) in areas.iter().enumerate() {
                        for sign in [1.0, -1.0] {
                            acc += area;
                            if pick < acc {
                                chosen = (axis, sign);
                                break 'outer;
                            }
                        }
                    }
                    chosen
                };
                let half = [a, b, c];
                let mut point = [0.0; 3];
                for (d, p) in point.iter_mut().enumerate() {
                    *p = if d == axis {
                        sign * half[d]
                    } else {
                        rng.random_range(-half[d]..half[d])
                    };
                }
                let mut normal = [0.0; 3];
                normal[axis] = sign;
                SurfacePoint { point, normal, part: axis }
            }
            Surface::Cylinder { radius, height } => {
                let side = TAU * radius * height;
                let cap = PI * radius * radius;
                let pick = rng.random_range(0.0..side + 2.0 * cap);
                if pick < side {
                    let t = rng.random_range(0.0..TAU);
                    let z = rng.random_range(-height / 2.0..height / 2.0);
                    SurfacePoint {
                        point: [radius * t.cos(), radius * t.sin(), z],
                        normal: [t.cos(), t.sin(), 0.0],
                        part: 0,
                    }
                } else {
                    let top = pick < side + cap;
                    let (x, y) = disk(rng, radius);
                    let s = if top { 1.0 } else { -1.0 };
                    SurfacePoint {
                        point: [x, y, s * height / 2.0],
                        normal: [0.0, 0.0, s],
                        part: if top { 1 } else { 2 },
                    }
                }
            }
            Surface::Cone { radius, height } => {
                let slant = (radius * radius + height * height).sqrt();
                let side = PI * radius * slant;
                let base = PI * radius * radius;
                if rng.random_range(0.0..side + base) < side {
                    // Area grows linearly with distance from the apex.
                    let f = rng.random::<f64>().sqrt();
                    let t = rng.random_range(0.0..TAU);
                    let r = radius * f;
                    SurfacePoint {
                        point: [r * t.cos(), r * t.sin(), height / 2.0 - height * f],
                        normal: vec3::scale([height * t.cos(), height * t.sin(), radius], 1.0 / slant),
                        part: 0,
                    }
                } else {
                    let (x, y) = disk(rng, radius);
                    SurfacePoint {
                        point: [x, y, -height / 2.0],
                        normal: [0.0, 0.0, -1.0],
                        part: 1,
                    }
                }
            }
            Surface::Torus { major, minor } => {
                // Rejection on the tube angle: the area element is
                // proportional to major + minor·cos φ.
                let phi = loop {
                    let phi = rng.random_range(0.0..TAU);
                    if rng.random::<f64>() * (major + minor) <= major + minor * phi.cos() {
                        break phi;
                    }
                };
                let t = rng.random_range(0.0..TAU);
                let ring = major + minor * phi.cos();
                SurfacePoint {
                    point: [ring * t.cos(), ring * t.sin(), minor * phi.sin()],
                    normal: [phi.cos() * t.cos(), phi.cos() * t.sin(), phi.sin()],
                    part: usize::from(phi.cos() < 0.0),
                }
            }
        }
    }
}
