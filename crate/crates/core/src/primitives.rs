//! Generated test objects. All meshes are closed, wound counter-clockwise
//! around outward normals and centered on the object origin.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::geometry::TriangleMesh;
use crate::math::Vec3;

/// Prism over a counter-clockwise polygon in the xy plane, `depth` along z.
/// `cap` triangulates the polygon with indices into it.
fn extrude(polygon: &[(f64, f64)], cap: &[[u32; 3]], depth: f64) -> TriangleMesh {
    let n = polygon.len() as u32;
    let h = depth / 2.0;
    let mut v: Vec<Vec3> = polygon.iter().map(|&(x, y)| Vec3::new(x, y, -h)).collect();
    v.extend(polygon.iter().map(|&(x, y)| Vec3::new(x, y, h)));
    let mut f = Vec::new();
    for i in 0..n {
        let j = (i + 1) % n;
        f.push([i, j, n + j]);
        f.push([i, n + j, n + i]);
    }
    for c in cap {
        f.push([n + c[0], n + c[1], n + c[2]]);
        f.push([c[0], c[2], c[1]]);
    }
    TriangleMesh::new(v, f).expect("generated mesh is valid")
}

pub fn cuboid(sx: f64, sy: f64, sz: f64) -> TriangleMesh {
    let (a, b) = (sx / 2.0, sy / 2.0);
    extrude(&[(-a, -b), (a, -b), (a, b), (-a, b)], &[[0, 1, 2], [0, 2, 3]], sz)
}

/// Closed cylinder along z with a center vertex on each cap.
pub fn cylinder(radius: f64, height: f64, segments: u32) -> TriangleMesh {
    assert!(segments >= 3);
    let h = height / 2.0;
    let ring = |z: f64| {
        (0..segments).map(move |j| {
            let (s, c) = libm::sincos(2.0 * PI * j as f64 / segments as f64);
            Vec3::new(radius * c, radius * s, z)
        })
    };
    let mut v: Vec<Vec3> = ring(-h).collect();
    v.extend(ring(h));
    let (bottom, top) = (2 * segments, 2 * segments + 1);
    v.push(Vec3::new(0.0, 0.0, -h));
    v.push(Vec3::new(0.0, 0.0, h));
    let mut f = Vec::new();
    for i in 0..segments {
        let j = (i + 1) % segments;
        f.push([i, j, segments + j]);
        f.push([i, segments + j, segments + i]);
        f.push([top, segments + i, segments + j]);
        f.push([bottom, j, i]);
    }
    TriangleMesh::new(v, f).expect("generated mesh is valid")
}

/// Latitude-longitude sphere with single-vertex poles.
pub fn uv_sphere(radius: f64, stacks: u32, slices: u32) -> TriangleMesh {
    assert!(stacks >= 2 && slices >= 3);
    let mut v = alloc::vec![Vec3::new(0.0, 0.0, radius)];
    for i in 1..stacks {
        let (st, ct) = libm::sincos(PI * i as f64 / stacks as f64);
        for j in 0..slices {
            let (sp, cp) = libm::sincos(2.0 * PI * j as f64 / slices as f64);
            v.push(Vec3::new(radius * st * cp, radius * st * sp, radius * ct));
        }
    }
    let south = v.len() as u32;
    v.push(Vec3::new(0.0, 0.0, -radius));
    let ring = |i: u32, j: u32| 1 + i * slices + (j % slices);
    let mut f = Vec::new();
    for j in 0..slices {
        f.push([0, ring(0, j), ring(0, j + 1)]);
    }
    for i in 0..stacks - 2 {
        for j in 0..slices {
            let (a0, a1, b0, b1) = (ring(i, j), ring(i, j + 1), ring(i + 1, j), ring(i + 1, j + 1));
            f.push([a0, b0, b1]);
            f.push([a0, b1, a1]);
        }
    }
    for j in 0..slices {
        f.push([south, ring(stacks - 2, j + 1), ring(stacks - 2, j)]);
    }
    TriangleMesh::new(v, f).expect("generated mesh is valid")
}

/// L-shaped prism: legs of length `long` and `short` with width `thickness`,
/// extruded by `depth`. Centered on its bounding box.
pub fn l_shape(long: f64, short: f64, thickness: f64, depth: f64) -> TriangleMesh {
    let (cx, cy) = (long / 2.0, short / 2.0);
    let t = thickness;
    let poly = [(0.0, 0.0), (long, 0.0), (long, t), (t, t), (t, short), (0.0, short), (0.0, t)];
    let poly: Vec<(f64, f64)> = poly.iter().map(|&(x, y)| (x - cx, y - cy)).collect();
    extrude(&poly, &[[0, 1, 2], [0, 2, 3], [0, 3, 6], [6, 3, 4], [6, 4, 5]], depth)
}

/// The generated evaluation objects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Primitive {
    Box,
    Sphere,
    Cylinder,
    LShape,
    Can,
}

impl Primitive {
    pub const ALL: [Primitive; 5] = [Primitive::Box, Primitive::Sphere, Primitive::Cylinder, Primitive::LShape, Primitive::Can];

    pub fn name(&self) -> &'static str {
        match self {
            Primitive::Box => "box",
            Primitive::Sphere => "sphere",
            Primitive::Cylinder => "cylinder",
            Primitive::LShape => "l_shape",
            Primitive::Can => "can",
        }
    }

    pub fn from_name(name: &str) -> Option<Primitive> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }

    pub fn mesh(&self) -> TriangleMesh {
        match self {
            Primitive::Box => cuboid(0.12, 0.08, 0.05),
            Primitive::Sphere => uv_sphere(0.045, 12, 16),
            Primitive::Cylinder => cylinder(0.03, 0.10, 16),
            Primitive::LShape => l_shape(0.14, 0.07, 0.035, 0.05),
            Primitive::Can => cylinder(0.035, 0.12, 32),
        }
    }

    /// Whether pose error is measured with ADD-S rather than ADD.
    pub fn symmetric(&self) -> bool {
        !matches!(self, Primitive::LShape)
    }

    /// Convex meshes, for which about half the faces point away from any
    /// outside viewer.
    pub fn convex(&self) -> bool {
        !matches!(self, Primitive::LShape)
    }
}
