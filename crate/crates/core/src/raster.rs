//! Software depth rasterizer restricted to a per-sample bounding box.
//!
//! Each triangle is transformed into the camera frame, optionally culled when
//! it faces away from the camera, clipped against the near plane and scanned
//! over the pixel centers of the box. Depth is interpolated perspective
//! correctly (1/z is affine in screen space) and resolved with a min z-buffer.
//!
//! Coverage follows the top-left fill rule. Edge functions for a shared edge
//! are always evaluated from the same base vertex, so the two triangles that
//! share it see exactly negated values and a pixel center on the edge is owned
//! by exactly one of them. Every per-pixel quantity is computed from absolute
//! pixel coordinates, which makes a partial render bit-identical to the
//! matching crop of a full render.

use alloc::vec;
use alloc::vec::Vec;
use alloc::format;

use crate::geometry::{CameraIntrinsics, RigidTransform, TriangleMesh};
use crate::math::Vec3;
use crate::{Error, Result};

/// Triangles are clipped against this camera-frame depth, in meters.
pub const NEAR_PLANE: f64 = 1e-4;

/// Inclusive pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BoundingBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl BoundingBox {
    pub fn new(x_min: u32, y_min: u32, x_max: u32, y_max: u32) -> Result<Self> {
        if x_min > x_max || y_min > y_max {
            return Err(Error::InvalidBox(format!("[{x_min}, {y_min}, {x_max}, {y_max}] has min > max")));
        }
        Ok(Self { x_min, y_min, x_max, y_max })
    }

    /// Box that is additionally checked against an image size.
    pub fn within(x_min: u32, y_min: u32, x_max: u32, y_max: u32, width: u32, height: u32) -> Result<Self> {
        let b = Self::new(x_min, y_min, x_max, y_max)?;
        b.check_fits(width, height)?;
        Ok(b)
    }

    pub fn full(width: u32, height: u32) -> Self {
        Self { x_min: 0, y_min: 0, x_max: width - 1, y_max: height - 1 }
    }

    pub fn check_fits(&self, width: u32, height: u32) -> Result<()> {
        if self.x_max >= width || self.y_max >= height {
            return Err(Error::InvalidBox(format!(
                "[{}, {}, {}, {}] exceeds {width}x{height} image",
                self.x_min, self.y_min, self.x_max, self.y_max
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> u32 {
        self.x_max - self.x_min + 1
    }

    pub fn height(&self) -> u32 {
        self.y_max - self.y_min + 1
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    pub fn contains_box(&self, o: &BoundingBox) -> bool {
        self.contains(o.x_min, o.y_min) && self.contains(o.x_max, o.y_max)
    }

    pub fn intersect(&self, o: &BoundingBox) -> Option<BoundingBox> {
        let b = BoundingBox {
            x_min: self.x_min.max(o.x_min),
            y_min: self.y_min.max(o.y_min),
            x_max: self.x_max.min(o.x_max),
            y_max: self.y_max.min(o.y_max),
        };
        (b.x_min <= b.x_max && b.y_min <= b.y_max).then_some(b)
    }

    pub fn to_array(&self) -> [u32; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

/// Rendered depth over a box. Unhit pixels hold [`DepthBuffer::EMPTY`].
#[derive(Debug, Clone, PartialEq)]
pub struct DepthBuffer {
    bbox: BoundingBox,
    depths: Vec<f64>,
}

impl DepthBuffer {
    pub const EMPTY: f64 = 0.0;

    pub fn empty(bbox: BoundingBox) -> Self {
        Self { bbox, depths: vec![Self::EMPTY; bbox.area() as usize] }
    }

    pub fn from_parts(bbox: BoundingBox, depths: Vec<f64>) -> Result<Self> {
        if depths.len() as u64 != bbox.area() {
            return Err(Error::Dimension(format!("{} depths for a box of {} pixels", depths.len(), bbox.area())));
        }
        if depths.iter().any(|&d| !(d >= 0.0 && d.is_finite())) {
            return Err(Error::Dimension("depths must be finite and non-negative".into()));
        }
        Ok(Self { bbox, depths })
    }

    pub fn bbox(&self) -> BoundingBox {
        self.bbox
    }

    pub fn depths(&self) -> &[f64] {
        &self.depths
    }

    /// Depth at absolute pixel `(x, y)`; `None` when empty or outside the box.
    pub fn get(&self, x: u32, y: u32) -> Option<f64> {
        if !self.bbox.contains(x, y) {
            return None;
        }
        let i = (y - self.bbox.y_min) as usize * self.bbox.width() as usize + (x - self.bbox.x_min) as usize;
        let d = self.depths[i];
        (d != Self::EMPTY).then_some(d)
    }

    pub fn filled_count(&self) -> usize {
        self.depths.iter().filter(|&&d| d != Self::EMPTY).count()
    }

    /// Restriction to a sub-box.
    pub fn crop(&self, sub: &BoundingBox) -> Result<DepthBuffer> {
        if !self.bbox.contains_box(sub) {
            return Err(Error::InvalidBox("crop box is not inside the buffer".into()));
        }
        let w = self.bbox.width() as usize;
        let mut out = Vec::with_capacity(sub.area() as usize);
        for y in sub.y_min..=sub.y_max {
            let row = (y - self.bbox.y_min) as usize * w;
            let x0 = row + (sub.x_min - self.bbox.x_min) as usize;
            out.extend_from_slice(&self.depths[x0..x0 + sub.width() as usize]);
        }
        Ok(DepthBuffer { bbox: *sub, depths: out })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RasterStats {
    pub triangles_in: u64,
    pub triangles_culled: u64,
    /// Triangles touching the near plane, either cut or dropped entirely.
    pub triangles_clipped: u64,
    pub triangles_degenerate: u64,
    /// Z-buffer writes, counting overwrites.
    pub pixels_written: u64,
}

impl RasterStats {
    pub fn merge(&mut self, o: &RasterStats) {
        self.triangles_in += o.triangles_in;
        self.triangles_culled += o.triangles_culled;
        self.triangles_clipped += o.triangles_clipped;
        self.triangles_degenerate += o.triangles_degenerate;
        self.pixels_written += o.pixels_written;
    }

    pub fn culled_fraction(&self) -> f64 {
        if self.triangles_in == 0 {
            0.0
        } else {
            self.triangles_culled as f64 / self.triangles_in as f64
        }
    }
}

/// Unnormalized winding normal `(v1 - v0) x (v2 - v0)`, or `None` for a
/// zero-area triangle.
pub fn face_normal(tri: &[Vec3; 3]) -> Option<Vec3> {
    let n = (tri[1] - tri[0]).cross(tri[2] - tri[0]);
    (n.norm_squared() > 0.0).then_some(n)
}

/// True when the face points away from the viewer. `view_ray` runs from the
/// camera center to the face; edge-on faces (dot = 0) count as back faces.
pub fn is_backface(normal: Vec3, view_ray: Vec3) -> bool {
    normal.dot(view_ray) >= 0.0
}

#[derive(Debug, Clone, Copy)]
struct ScreenVertex {
    /// Ordering key used to pick the base vertex of an edge.
    key: u64,
    sx: f64,
    sy: f64,
    inv_z: f64,
}

#[derive(Debug, Clone, Copy)]
struct ClipVertex {
    key: u64,
    p: Vec3,
}

fn project(k: &CameraIntrinsics, key: u64, p: Vec3) -> ScreenVertex {
    ScreenVertex { key, sx: p.x * k.fx / p.z + k.cx, sy: p.y * k.fy / p.z + k.cy, inv_z: 1.0 / p.z }
}

/// Edge function of `p` against the directed edge `a -> b`, evaluated from the
/// lower-keyed endpoint so that `(a, b)` and `(b, a)` give exact negations.
#[inline]
fn edge_value(a: &ScreenVertex, b: &ScreenVertex, px: f64, py: f64) -> f64 {
    if a.key <= b.key {
        (b.sx - a.sx) * (py - a.sy) - (b.sy - a.sy) * (px - a.sx)
    } else {
        -((a.sx - b.sx) * (py - b.sy) - (a.sy - b.sy) * (px - b.sx))
    }
}

#[inline]
fn owns_edge(a: &ScreenVertex, b: &ScreenVertex, orient: f64) -> bool {
    let dx = (b.sx - a.sx) * orient;
    let dy = (b.sy - a.sy) * orient;
    dy < 0.0 || (dy == 0.0 && dx > 0.0)
}

/// Reusable rasterization state. One instance per worker keeps the steady
/// state allocation free.
#[derive(Debug, Default, Clone)]
pub struct Rasterizer {
    camera: Vec<Vec3>,
    screen: Vec<Option<ScreenVertex>>,
    zbuf: Vec<f64>,
}

impl Rasterizer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rasterizes `mesh` under `t` into `bbox` and streams every covered pixel
    /// as `(x, y, depth)` in row-major order once all triangles are resolved.
    pub fn rasterize<F: FnMut(u32, u32, f64)>(
        &mut self,
        mesh: &TriangleMesh,
        t: &RigidTransform,
        k: &CameraIntrinsics,
        bbox: &BoundingBox,
        culling: bool,
        mut sink: F,
    ) -> RasterStats {
        let stats = self.fill(mesh, t, k, bbox, culling);
        let w = bbox.width() as usize;
        for (row, y) in (bbox.y_min..=bbox.y_max).enumerate() {
            let line = &self.zbuf[row * w..(row + 1) * w];
            for (col, &z) in line.iter().enumerate() {
                if z.is_finite() {
                    sink(bbox.x_min + col as u32, y, z);
                }
            }
        }
        stats
    }

    pub fn rasterize_to_buffer(
        &mut self,
        mesh: &TriangleMesh,
        t: &RigidTransform,
        k: &CameraIntrinsics,
        bbox: &BoundingBox,
        culling: bool,
    ) -> (DepthBuffer, RasterStats) {
        let stats = self.fill(mesh, t, k, bbox, culling);
        let depths = self.zbuf.iter().map(|&z| if z.is_finite() { z } else { DepthBuffer::EMPTY }).collect();
        (DepthBuffer { bbox: *bbox, depths }, stats)
    }

    fn fill(
        &mut self,
        mesh: &TriangleMesh,
        t: &RigidTransform,
        k: &CameraIntrinsics,
        bbox: &BoundingBox,
        culling: bool,
    ) -> RasterStats {
        self.zbuf.clear();
        self.zbuf.resize(bbox.area() as usize, f64::INFINITY);
        self.camera.clear();
        self.camera.extend(mesh.vertices().iter().map(|&v| t.apply(v)));
        self.screen.clear();
        self.screen.extend(
            self.camera
                .iter()
                .enumerate()
                .map(|(i, &p)| (p.z >= NEAR_PLANE).then(|| project(k, i as u64, p))),
        );

        let mut stats = RasterStats::default();
        let n_vertices = mesh.vertices().len() as u64;
        for face in mesh.faces() {
            stats.triangles_in += 1;
            let idx = [face[0] as usize, face[1] as usize, face[2] as usize];
            let tri = [self.camera[idx[0]], self.camera[idx[1]], self.camera[idx[2]]];
            let Some(normal) = face_normal(&tri) else {
                stats.triangles_degenerate += 1;
                continue;
            };
            if culling {
                let centroid = (tri[0] + tri[1] + tri[2]).scale(1.0 / 3.0);
                if is_backface(normal, centroid) {
                    stats.triangles_culled += 1;
                    continue;
                }
            }
            match (self.screen[idx[0]], self.screen[idx[1]], self.screen[idx[2]]) {
                (Some(a), Some(b), Some(c)) => {
                    stats.pixels_written += scan_triangle(&mut self.zbuf, bbox, [a, b, c]);
                }
                _ => {
                    stats.triangles_clipped += 1;
                    let verts = [
                        ClipVertex { key: idx[0] as u64, p: tri[0] },
                        ClipVertex { key: idx[1] as u64, p: tri[1] },
                        ClipVertex { key: idx[2] as u64, p: tri[2] },
                    ];
                    let (poly, len) = clip_near(&verts, n_vertices);
                    if len < 3 {
                        continue;
                    }
                    let sv: Vec<ScreenVertex> = poly[..len].iter().map(|v| project(k, v.key, v.p)).collect();
                    for i in 1..len - 1 {
                        stats.pixels_written += scan_triangle(&mut self.zbuf, bbox, [sv[0], sv[i], sv[i + 1]]);
                    }
                }
            }
        }
        stats
    }
}

/// Sutherland-Hodgman against `z >= NEAR_PLANE`. Intersection vertices get
/// keys derived from the (unordered) source edge so shared edges clip to the
/// same point with the same key.
fn clip_near(tri: &[ClipVertex; 3], n_vertices: u64) -> ([ClipVertex; 4], usize) {
    let mut out = [tri[0]; 4];
    let mut len = 0;
    for i in 0..3 {
        let cur = tri[i];
        let next = tri[(i + 1) % 3];
        let cur_in = cur.p.z >= NEAR_PLANE;
        let next_in = next.p.z >= NEAR_PLANE;
        if cur_in {
            out[len] = cur;
            len += 1;
        }
        if cur_in != next_in {
            let (lo, hi) = if cur.key <= next.key { (cur, next) } else { (next, cur) };
            let s = (NEAR_PLANE - lo.p.z) / (hi.p.z - lo.p.z);
            let mut p = lo.p + (hi.p - lo.p).scale(s);
            p.z = NEAR_PLANE;
            let key = n_vertices + lo.key * n_vertices + hi.key;
            out[len] = ClipVertex { key, p };
            len += 1;
        }
    }
    (out, len)
}

/// Floor for finite values well inside the `i64` range (pixel coordinates).
#[inline]
fn floor_small(v: f64) -> f64 {
    let t = v as i64 as f64;
    if t > v {
        t - 1.0
    } else {
        t
    }
}

#[inline]
fn ceil_small(v: f64) -> f64 {
    -floor_small(-v)
}

/// Edge function of one triangle edge in canonical form: evaluated from the
/// lower-keyed endpoint, then multiplied by `sign` (winding times triangle
/// orientation, so the inside is positive).
#[derive(Debug, Clone, Copy)]
struct Edge {
    ax: f64,
    ay: f64,
    dx: f64,
    dy: f64,
    sign: f64,
    owned: bool,
}

impl Edge {
    fn new(p: &ScreenVertex, q: &ScreenVertex, orient: f64) -> Edge {
        let (base, tip, flip) = if p.key <= q.key { (p, q, 1.0) } else { (q, p, -1.0) };
        Edge {
            ax: base.sx,
            ay: base.sy,
            dx: tip.sx - base.sx,
            dy: tip.sy - base.sy,
            sign: flip * orient,
            owned: owns_edge(p, q, orient),
        }
    }

    /// Row term `dx * (py - ay)`; the full value is
    /// `sign * (row - dy * (px - ax))`, the same arithmetic as
    /// [`edge_value`].
    #[inline]
    fn row(&self, py: f64) -> f64 {
        self.dx * (py - self.ay)
    }

    #[inline]
    fn value(&self, row: f64, px: f64) -> f64 {
        (row - self.dy * (px - self.ax)) * self.sign
    }

    #[inline]
    fn inside(&self, row: f64, px: f64) -> bool {
        let e = self.value(row, px);
        e > 0.0 || (e == 0.0 && self.owned)
    }

    /// Conservative x-range on this row, one pixel wider than the exact root.
    #[inline]
    fn clip_span(&self, row: f64, lo: &mut f64, hi: &mut f64) {
        // value(x) = sign * (row + dy * ax) - sign * dy * x
        let slope = -self.dy * self.sign;
        if slope == 0.0 {
            return;
        }
        let root = ((row + self.dy * self.ax) * self.sign / -slope).clamp(-1e9, 1e9);
        if slope > 0.0 {
            *lo = lo.max(floor_small(root) - 1.0);
        } else {
            *hi = hi.min(ceil_small(root) + 1.0);
        }
    }
}

/// Scans one screen-space triangle into the z-buffer; returns the number of
/// depth writes.
fn scan_triangle(zbuf: &mut [f64], bbox: &BoundingBox, v: [ScreenVertex; 3]) -> u64 {
    let [a, b, c] = v;
    let area = edge_value(&a, &b, c.sx, c.sy);
    if area == 0.0 || !area.is_finite() {
        return 0;
    }
    let orient = if area > 0.0 { 1.0 } else { -1.0 };

    let clamp = |v: f64| v.clamp(-1e9, 1e9);
    let min_x = clamp(a.sx.min(b.sx).min(c.sx));
    let max_x = clamp(a.sx.max(b.sx).max(c.sx));
    let min_y = clamp(a.sy.min(b.sy).min(c.sy));
    let max_y = clamp(a.sy.max(b.sy).max(c.sy));
    let x0 = ceil_small(min_x).max(bbox.x_min as f64);
    let x1 = floor_small(max_x).min(bbox.x_max as f64);
    let y0 = ceil_small(min_y).max(bbox.y_min as f64);
    let y1 = floor_small(max_y).min(bbox.y_max as f64);
    if !(x0 <= x1 && y0 <= y1) {
        return 0;
    }
    let (y0, y1) = (y0 as u32, y1 as u32);

    // barycentric weights: edge bc -> a, edge ca -> b, edge ab -> c
    let e_ab = Edge::new(&a, &b, orient);
    let e_bc = Edge::new(&b, &c, orient);
    let e_ca = Edge::new(&c, &a, orient);
    let denom = area * orient;

    let w = bbox.width() as usize;
    let mut writes = 0;
    for y in y0..=y1 {
        let py = y as f64;
        let (r_ab, r_bc, r_ca) = (e_ab.row(py), e_bc.row(py), e_ca.row(py));
        // The span only narrows the scan; coverage is decided per pixel.
        let (mut lo, mut hi) = (x0, x1);
        e_ab.clip_span(r_ab, &mut lo, &mut hi);
        e_bc.clip_span(r_bc, &mut lo, &mut hi);
        e_ca.clip_span(r_ca, &mut lo, &mut hi);
        if !(lo <= hi) {
            continue;
        }
        let row = (y - bbox.y_min) as usize * w;
        for x in lo as u32..=hi as u32 {
            let px = x as f64;
            if !(e_ab.inside(r_ab, px) && e_bc.inside(r_bc, px) && e_ca.inside(r_ca, px)) {
                continue;
            }
            let inv_z = (e_bc.value(r_bc, px) * a.inv_z + e_ca.value(r_ca, px) * b.inv_z + e_ab.value(r_ab, px) * c.inv_z)
                / denom;
            let z = 1.0 / inv_z;
            let slot = &mut zbuf[row + (x - bbox.x_min) as usize];
            if z < *slot {
                *slot = z;
                writes += 1;
            }
        }
    }
    writes
}

pub fn rasterize_sample(
    mesh: &TriangleMesh,
    t: &RigidTransform,
    k: &CameraIntrinsics,
    bbox: &BoundingBox,
    culling: bool,
) -> (DepthBuffer, RasterStats) {
    Rasterizer::new().rasterize_to_buffer(mesh, t, k, bbox, culling)
}

/// Full-image render without culling.
pub fn render_full(mesh: &TriangleMesh, t: &RigidTransform, k: &CameraIntrinsics) -> DepthBuffer {
    let bbox = BoundingBox::full(k.width, k.height);
    rasterize_sample(mesh, t, k, &bbox, false).0
}

/// Pixel box enclosing the projection of the transformed mesh, clamped to the
/// image. `None` when every vertex is behind the near plane. If only some
/// vertices are behind it the projection is unbounded and the full image is
/// returned.
pub fn projected_box(mesh: &TriangleMesh, t: &RigidTransform, k: &CameraIntrinsics) -> Option<BoundingBox> {
    let (mut min_x, mut min_y) = (f64::INFINITY, f64::INFINITY);
    let (mut max_x, mut max_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut behind = 0usize;
    for &v in mesh.vertices() {
        let p = t.apply(v);
        if p.z < NEAR_PLANE {
            behind += 1;
            continue;
        }
        let sx = p.x * k.fx / p.z + k.cx;
        let sy = p.y * k.fy / p.z + k.cy;
        min_x = min_x.min(sx);
        max_x = max_x.max(sx);
        min_y = min_y.min(sy);
        max_y = max_y.max(sy);
    }
    if behind == mesh.vertices().len() {
        return None;
    }
    if behind > 0 {
        return Some(BoundingBox::full(k.width, k.height));
    }
    let clamp = |v: f64, hi: u32| -> u32 {
        if v <= 0.0 {
            0
        } else if v >= hi as f64 {
            hi
        } else {
            v as u32
        }
    };
    let x_min = clamp(libm::ceil(min_x), k.width - 1);
    let y_min = clamp(libm::ceil(min_y), k.height - 1);
    let x_max = clamp(libm::floor(max_x), k.width - 1).max(x_min);
    let y_max = clamp(libm::floor(max_y), k.height - 1).max(y_min);
    Some(BoundingBox { x_min, y_min, x_max, y_max })
}
