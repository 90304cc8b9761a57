//! Fixed pinhole camera and a tiny grayscale rasterizer.

use crate::math::Vec3;
use crate::sim::{Frame, ObjectShape, SceneConfig};
use serde::{Deserialize, Serialize};

pub const BACKGROUND_INTENSITY: f64 = 0.2;
pub const COUNTER_INTENSITY: f64 = 0.35;
pub const OBJECT_INTENSITY: f64 = 0.9;
pub const HAND_INTENSITY: f64 = 0.6;
/// Subsamples per pixel side used for coverage.
const SUPERSAMPLE: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Camera {
    pub position: Vec3,
    pub look_at: Vec3,
    pub up: Vec3,
    /// Vertical field of view, degrees.
    pub vertical_fov: f64,
    pub image_width: usize,
    pub image_height: usize,
}

impl Default for Camera {
    fn default() -> Self {
        Self {
            position: Vec3::new(0.0, -3.0, 1.5),
            look_at: Vec3::new(0.0, 0.0, 0.9),
            up: Vec3::Z,
            vertical_fov: 60.0,
            image_width: 32,
            image_height: 24,
        }
    }
}

/// Camera-space coordinates of a point: right, up, depth along the view axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraPoint {
    pub x: f64,
    pub y: f64,
    pub depth: f64,
}

impl Camera {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.position.is_finite() && self.look_at.is_finite() && self.up.is_finite()) {
            return Err("camera vectors must be finite".into());
        }
        if self.position.distance(self.look_at) < 1e-9 {
            return Err("position must differ from look_at".into());
        }
        if !(self.vertical_fov > 10.0 && self.vertical_fov < 120.0) {
            return Err("vertical_fov must lie in (10, 120) degrees".into());
        }
        if self.image_width == 0 || self.image_height == 0 {
            return Err("image dimensions must be positive".into());
        }
        let f = self.look_at - self.position;
        if f.cross(self.up).norm() < 1e-9 {
            return Err("up must not be parallel to the view direction".into());
        }
        Ok(())
    }

    pub fn aspect(&self) -> f64 {
        self.image_width as f64 / self.image_height as f64
    }

    fn tan_half(&self) -> f64 {
        (self.vertical_fov.to_radians() / 2.0).tan()
    }

    /// Orthonormal (right, up, forward) basis.
    pub fn basis(&self) -> (Vec3, Vec3, Vec3) {
        let f = (self.look_at - self.position).normalized().unwrap_or(Vec3::new(0.0, 1.0, 0.0));
        let r = f.cross(self.up).normalized().unwrap_or(Vec3::new(1.0, 0.0, 0.0));
        (r, r.cross(f), f)
    }

    pub fn to_camera(&self, p: Vec3) -> CameraPoint {
        let (r, u, f) = self.basis();
        let d = p - self.position;
        CameraPoint { x: d.dot(r), y: d.dot(u), depth: d.dot(f) }
    }

    /// Normalized image coordinates without clipping; `None` behind the camera.
    pub fn project_unclipped(&self, p: Vec3) -> Option<[f64; 2]> {
        let c = self.to_camera(p);
        if c.depth <= 1e-9 {
            return None;
        }
        let t = self.tan_half();
        Some([0.5 + c.x / (2.0 * c.depth * t * self.aspect()), 0.5 - c.y / (2.0 * c.depth * t)])
    }

    /// Focal length in pixels.
    fn focal_px(&self) -> f64 {
        self.image_height as f64 / (2.0 * self.tan_half())
    }

    /// Ray direction through continuous pixel coordinate `(px, py)`, scaled so
    /// its forward component is 1 (the ray parameter is then depth).
    fn ray(&self, px: f64, py: f64) -> Vec3 {
        let (r, u, f) = self.basis();
        let t = self.tan_half();
        let su = (px / self.image_width as f64 - 0.5) * 2.0 * t * self.aspect();
        let sv = (py / self.image_height as f64 - 0.5) * 2.0 * t;
        f + r * su - u * sv
    }
}

/// Pinhole projection to normalized `(u, v)` in `[0, 1]`, `v` pointing down.
/// `None` when the point is behind the camera or outside the frame.
pub fn project(camera: &Camera, point: Vec3) -> Option<[f64; 2]> {
    camera
        .project_unclipped(point)
        .filter(|[u, v]| (0.0..=1.0).contains(u) && (0.0..=1.0).contains(v))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl Raster {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }
}

/// Depth at which a ray from `origin` along `dir` enters the box, if it does.
fn ray_box(origin: Vec3, dir: Vec3, lo: Vec3, hi: Vec3) -> Option<f64> {
    let mut t0 = 0.0_f64;
    let mut t1 = f64::INFINITY;
    for (o, d, l, h) in [
        (origin.x, dir.x, lo.x, hi.x),
        (origin.y, dir.y, lo.y, hi.y),
        (origin.z, dir.z, lo.z, hi.z),
    ] {
        if d.abs() < 1e-15 {
            if o < l || o > h {
                return None;
            }
        } else {
            let (a, b) = ((l - o) / d, (h - o) / d);
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
    }
    (t0 <= t1).then_some(t0)
}

/// Static scene layers for one camera and counter: background raster and the
/// counter depth seen by every subsample.
#[derive(Clone, Debug)]
pub struct SceneLayers {
    background: Raster,
    counter_depth: Vec<f64>,
    counter_key: [u64; 3],
}

impl SceneLayers {
    pub fn new(camera: &Camera, scene: &SceneConfig) -> Self {
        let (w, h) = (camera.image_width, camera.image_height);
        let ss = SUPERSAMPLE;
        let lo = Vec3::new(-scene.counter_extent[0], -scene.counter_extent[1], 0.0);
        let hi = Vec3::new(scene.counter_extent[0], scene.counter_extent[1], scene.counter_height);
        let mut counter_depth = vec![f64::INFINITY; w * h * ss * ss];
        let mut pixels = vec![BACKGROUND_INTENSITY; w * h];
        for py in 0..h {
            for px in 0..w {
                let mut hits = 0;
                for sy in 0..ss {
                    for sx in 0..ss {
                        let (fx, fy) = sub_coord(px, py, sx, sy);
                        if let Some(t) = ray_box(camera.position, camera.ray(fx, fy), lo, hi) {
                            counter_depth[sub_index(w, px, py, sx, sy)] = t;
                            hits += 1;
                        }
                    }
                }
                let cov = hits as f64 / (ss * ss) as f64;
                pixels[py * w + px] = BACKGROUND_INTENSITY * (1.0 - cov) + COUNTER_INTENSITY * cov;
            }
        }
        Self {
            background: Raster { width: w, height: h, pixels },
            counter_depth,
            counter_key: counter_key(scene),
        }
    }

    pub fn background(&self) -> &Raster {
        &self.background
    }

    fn matches(&self, scene: &SceneConfig) -> bool {
        self.counter_key == counter_key(scene)
    }
}

fn counter_key(scene: &SceneConfig) -> [u64; 3] {
    [scene.counter_extent[0].to_bits(), scene.counter_extent[1].to_bits(), scene.counter_height.to_bits()]
}

fn sub_coord(px: usize, py: usize, sx: usize, sy: usize) -> (f64, f64) {
    let s = SUPERSAMPLE as f64;
    (px as f64 + (sx as f64 + 0.5) / s, py as f64 + (sy as f64 + 0.5) / s)
}

fn sub_index(w: usize, px: usize, py: usize, sx: usize, sy: usize) -> usize {
    ((py * w + px) * SUPERSAMPLE + sy) * SUPERSAMPLE + sx
}

/// Object footprint in one frame: per-pixel coverage plus how many
/// subsamples were hidden by the counter.
struct Footprint {
    coverage: Vec<(usize, f64)>,
    drawn: usize,
    hidden: usize,
}

fn footprint(camera: &Camera, layers: &SceneLayers, frame: &Frame, scene: &SceneConfig) -> Option<Footprint> {
    let c = camera.to_camera(frame.obj_pos);
    let r = scene.object_radius;
    if c.depth <= r {
        return None;
    }
    let [u, v] = camera.project_unclipped(frame.obj_pos)?;
    let (w, h) = (camera.image_width, camera.image_height);
    let (cx, cy) = (u * w as f64, v * h as f64);
    let rad = r * camera.focal_px() / c.depth;
    let front = c.depth - r;
    let x0 = (cx - rad).floor().max(0.0) as i64;
    let x1 = ((cx + rad).ceil() as i64).min(w as i64 - 1);
    let y0 = (cy - rad).floor().max(0.0) as i64;
    let y1 = ((cy + rad).ceil() as i64).min(h as i64 - 1);
    let ss = SUPERSAMPLE;
    let mut out = Footprint { coverage: Vec::new(), drawn: 0, hidden: 0 };
    for py in y0.max(0)..=y1 {
        for px in x0.max(0)..=x1 {
            let (px, py) = (px as usize, py as usize);
            let mut hits = 0;
            for sy in 0..ss {
                for sx in 0..ss {
                    let (fx, fy) = sub_coord(px, py, sx, sy);
                    let (dx, dy) = (fx - cx, fy - cy);
                    let inside = match scene.object_shape {
                        ObjectShape::Sphere => dx * dx + dy * dy <= rad * rad,
                        ObjectShape::Cube => dx.abs() <= rad && dy.abs() <= rad,
                    };
                    if !inside {
                        continue;
                    }
                    if layers.counter_depth[sub_index(w, px, py, sx, sy)] < front {
                        out.hidden += 1;
                    } else {
                        hits += 1;
                    }
                }
            }
            if hits > 0 {
                out.drawn += hits;
                out.coverage.push((py * w + px, hits as f64 / (ss * ss) as f64));
            }
        }
    }
    Some(out)
}

/// Render a frame: background, counter, object (unless hidden behind the
/// counter), then a plus-shaped hand marker.
pub fn rasterize(camera: &Camera, frame: &Frame, scene: &SceneConfig) -> Raster {
    rasterize_with(camera, &SceneLayers::new(camera, scene), frame, scene)
}

/// [`rasterize`] reusing precomputed static layers.
pub fn rasterize_with(camera: &Camera, layers: &SceneLayers, frame: &Frame, scene: &SceneConfig) -> Raster {
    let owned;
    let layers = if layers.matches(scene) {
        layers
    } else {
        owned = SceneLayers::new(camera, scene);
        &owned
    };
    let mut img = layers.background.clone();
    if let Some(fp) = footprint(camera, layers, frame, scene) {
        for (i, cov) in fp.coverage {
            img.pixels[i] = img.pixels[i] * (1.0 - cov) + OBJECT_INTENSITY * cov;
        }
    }
    if let Some([u, v]) = project(camera, frame.hand_pos) {
        let (w, h) = (camera.image_width as i64, camera.image_height as i64);
        let ix = ((u * w as f64) as i64).min(w - 1);
        let iy = ((v * h as f64) as i64).min(h - 1);
        for (dx, dy) in [(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)] {
            let (x, y) = (ix + dx, iy + dy);
            if (0..w).contains(&x) && (0..h).contains(&y) {
                img.pixels[(y * w + x) as usize] = HAND_INTENSITY;
            }
        }
    }
    img
}

/// Fraction of the object's projected footprint that is hidden by the
/// counter. Out-of-frame objects count as fully hidden.
pub fn occluded_fraction(camera: &Camera, layers: &SceneLayers, frame: &Frame, scene: &SceneConfig) -> f64 {
    match footprint(camera, layers, frame, scene) {
        Some(fp) if fp.drawn + fp.hidden > 0 => fp.hidden as f64 / (fp.drawn + fp.hidden) as f64,
        _ => 1.0,
    }
}
