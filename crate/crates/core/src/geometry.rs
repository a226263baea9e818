//! Hand layouts, the canonical lollipop template and differentiable splatting.
//!
//! A [`Layout`] `(a, x, y, b1, b2)` describes a hand proxy by palm size
//! `s = a²`, palm center `(x, y)` and an un-normalized approach direction
//! `(b1, b2)`. It induces the similarity transform
//!
//! ```text
//!       | s·b̂1  -s·b̂2  x |
//! T_l = | s·b̂2   s·b̂1  y |
//!       |   0      0    1 |
//! ```
//!
//! that carries the canonical template into normalized image space. The
//! template is a unit-peak Gaussian palm at the origin united with a forearm
//! strip trailing along the canonical `-x` axis. Splatting evaluates the
//! template at `T_l⁻¹·p` for every pixel center `p`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::grid::{pixel_center, Grid};

pub const LAYOUT_DIM: usize = 5;

/// Raw layout vector in `(a, x, y, b1, b2)` order.
pub type LayoutVec = [f64; LAYOUT_DIM];

/// Splatted template density on a pixel grid, values in `[0, 1]`.
pub type LayoutMask = Grid;

/// Extent of palm centers accepted by [`Layout::validate`].
pub const MAX_CENTER_ABS: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Layout {
    pub a: f64,
    pub x: f64,
    pub y: f64,
    pub b1: f64,
    pub b2: f64,
}

impl Layout {
    pub const fn new(a: f64, x: f64, y: f64, b1: f64, b2: f64) -> Self {
        Self { a, x, y, b1, b2 }
    }

    pub const fn from_array(v: LayoutVec) -> Self {
        Self::new(v[0], v[1], v[2], v[3], v[4])
    }

    pub const fn to_array(self) -> LayoutVec {
        [self.a, self.x, self.y, self.b1, self.b2]
    }

    /// Palm scale `s = a²`.
    pub fn scale(&self) -> f64 {
        self.a * self.a
    }

    pub fn center(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn direction(&self) -> Result<[f64; 2]> {
        normalize_approach(self.b1, self.b2)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.to_array().iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidLayout(format!("non-finite entry in {self}")));
        }
        if self.a == 0.0 {
            return Err(Error::InvalidLayout("size root a is zero".into()));
        }
        if self.b1 == 0.0 && self.b2 == 0.0 {
            return Err(Error::DegenerateDirection(self.b1, self.b2));
        }
        if self.x.abs() > MAX_CENTER_ABS || self.y.abs() > MAX_CENTER_ABS {
            return Err(Error::InvalidLayout(format!(
                "center ({}, {}) outside [-1.5, 1.5]",
                self.x, self.y
            )));
        }
        Ok(())
    }

    /// Same layout with a positive size root and a unit approach vector.
    pub fn canonical(&self) -> Result<Layout> {
        let [b1, b2] = self.direction()?;
        Ok(Layout::new(self.a.abs(), self.x, self.y, b1, b2))
    }

    /// Serializes as a single line `a x y b1 b2` with 17 significant digits.
    pub fn to_line(&self) -> String {
        self.to_array()
            .iter()
            .map(|v| format!("{v:.16e}"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_line())
    }
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let fields: Vec<&str> = s.split_whitespace().collect();
        if fields.len() != LAYOUT_DIM {
            return Err(Error::InvalidLayout(format!(
                "expected 5 fields, found {}",
                fields.len()
            )));
        }
        let mut v = [0.0; LAYOUT_DIM];
        for (slot, field) in v.iter_mut().zip(&fields) {
            *slot = field
                .parse()
                .map_err(|_| Error::InvalidLayout(format!("bad number {field:?}")))?;
        }
        Ok(Layout::from_array(v))
    }
}

pub fn normalize_approach(b1: f64, b2: f64) -> Result<[f64; 2]> {
    let norm = b1.hypot(b2);
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::DegenerateDirection(b1, b2));
    }
    Ok([b1 / norm, b2 / norm])
}

/// Homogeneous 2D similarity `[[sR, t], [0, 1]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub matrix: [[f64; 3]; 3],
}

impl SimilarityTransform {
    pub fn scale(&self) -> f64 {
        self.matrix[0][0].hypot(self.matrix[1][0])
    }

    pub fn translation(&self) -> [f64; 2] {
        [self.matrix[0][2], self.matrix[1][2]]
    }

    pub fn apply(&self, q: [f64; 2]) -> [f64; 2] {
        let m = &self.matrix;
        [
            m[0][0] * q[0] + m[0][1] * q[1] + m[0][2],
            m[1][0] * q[0] + m[1][1] * q[1] + m[1][2],
        ]
    }

    /// Maps an image point back into the canonical template frame.
    pub fn inverse_apply(&self, p: [f64; 2]) -> Result<[f64; 2]> {
        let m = &self.matrix;
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        if !(det > 0.0) || !det.is_finite() {
            return Err(Error::SingularTransform(det));
        }
        let d = [p[0] - m[0][2], p[1] - m[1][2]];
        // (sR)⁻¹ = Rᵀ / s = (sR)ᵀ / s²
        Ok([
            (m[0][0] * d[0] + m[1][0] * d[1]) / det,
            (m[0][1] * d[0] + m[1][1] * d[1]) / det,
        ])
    }
}

pub fn layout_to_transform(l: &Layout) -> Result<SimilarityTransform> {
    let [c, n] = normalize_approach(l.b1, l.b2)?;
    let s = l.scale();
    Ok(SimilarityTransform {
        matrix: [[s * c, -s * n, l.x], [s * n, s * c, l.y], [0.0, 0.0, 1.0]],
    })
}

/// Shape of the canonical lollipop template.
///
/// The forearm strip has a Gaussian cross-axis profile of std
/// `forearm_sigma` and is supported on `[-forearm_length, 0]` along the
/// canonical axis, ramping from 0 to 1 over `edge_width` at both ends with
/// a quintic step so the density stays C². Palm and forearm are combined as a probabilistic union
/// `1 - (1 - palm)(1 - forearm)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemplateSpec {
    pub palm_sigma: f64,
    pub forearm_sigma: f64,
    pub width_ratio: f64,
    pub forearm_length: f64,
    pub edge_width: f64,
}

impl TemplateSpec {
    pub fn with_width_ratio(width_ratio: f64) -> Self {
        let palm_sigma = 1.0;
        Self {
            palm_sigma,
            forearm_sigma: 2.0 * width_ratio * palm_sigma,
            width_ratio,
            forearm_length: 6.0,
            edge_width: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("palm_sigma", self.palm_sigma),
            ("forearm_sigma", self.forearm_sigma),
            ("width_ratio", self.width_ratio),
            ("forearm_length", self.forearm_length),
            ("edge_width", self.edge_width),
        ];
        for (name, v) in fields {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidTemplate(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.width_ratio > 1.0 {
            return Err(Error::InvalidTemplate(format!(
                "width_ratio must be in (0, 1], got {}",
                self.width_ratio
            )));
        }
        Ok(())
    }
}

impl Default for TemplateSpec {
    fn default() -> Self {
        Self::with_width_ratio(0.8)
    }
}

/// Quintic smoothstep `6u⁵ − 15u⁴ + 10u³` clamped to `[0, 1]`, with its
/// derivative. C² at both ends.
#[inline]
fn smooth_step(u: f64) -> (f64, f64) {
    if u <= 0.0 {
        return (0.0, 0.0);
    }
    if u >= 1.0 {
        return (1.0, 0.0);
    }
    let u2 = u * u;
    (
        u2 * u * (10.0 + u * (6.0 * u - 15.0)),
        30.0 * u2 * (u - 1.0) * (u - 1.0),
    )
}

/// Template density and its gradient with respect to the canonical point.
pub fn template_density_grad(q: [f64; 2], spec: &TemplateSpec) -> (f64, [f64; 2]) {
    let [q1, q2] = q;
    let ps2 = spec.palm_sigma * spec.palm_sigma;
    let palm = (-(q1 * q1 + q2 * q2) / (2.0 * ps2)).exp();
    let palm_grad = [-q1 / ps2 * palm, -q2 / ps2 * palm];

    let w = spec.edge_width;
    let (front, front_d) = smooth_step(-q1 / w);
    let (back, back_d) = smooth_step((q1 + spec.forearm_length) / w);
    let along = front * back;
    let along_d = (front * back_d - front_d * back) / w;
    let fs2 = spec.forearm_sigma * spec.forearm_sigma;
    let cross = (-(q2 * q2) / (2.0 * fs2)).exp();
    let forearm = along * cross;
    let forearm_grad = [along_d * cross, -q2 / fs2 * forearm];

    let value = 1.0 - (1.0 - palm) * (1.0 - forearm);
    let grad = [
        (1.0 - forearm) * palm_grad[0] + (1.0 - palm) * forearm_grad[0],
        (1.0 - forearm) * palm_grad[1] + (1.0 - palm) * forearm_grad[1],
    ];
    (value, grad)
}

pub fn template_density(q: [f64; 2], spec: &TemplateSpec) -> f64 {
    template_density_grad(q, spec).0
}

fn check_splat_args(l: &Layout, width: usize, height: usize, spec: &TemplateSpec) -> Result<()> {
    if width < 8 || height < 8 {
        return Err(Error::ShapeMismatch(format!(
            "splat grid must be at least 8x8, got {width}x{height}"
        )));
    }
    spec.validate()?;
    if l.a == 0.0 || !l.a.is_finite() {
        return Err(Error::SingularTransform(l.scale()));
    }
    Ok(())
}

pub fn splat(l: &Layout, width: usize, height: usize, spec: &TemplateSpec) -> Result<LayoutMask> {
    check_splat_args(l, width, height, spec)?;
    let transform = layout_to_transform(l)?;
    let mut values = Vec::with_capacity(width * height);
    for j in 0..height {
        for i in 0..width {
            let q = transform.inverse_apply(pixel_center(i, j, width, height))?;
            values.push(template_density(q, spec));
        }
    }
    Grid::from_values(width, height, values)
}

/// Per-pixel gradient `∂M/∂(a, x, y, b1, b2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplatJacobian {
    pub width: usize,
    pub height: usize,
    pub grads: Vec<LayoutVec>,
}

impl SplatJacobian {
    pub fn at(&self, i: usize, j: usize) -> &LayoutVec {
        &self.grads[j * self.width + i]
    }
}

/// Splats `l` and returns the mask together with its analytic Jacobian.
pub fn splat_with_jacobian(
    l: &Layout,
    width: usize,
    height: usize,
    spec: &TemplateSpec,
) -> Result<(LayoutMask, SplatJacobian)> {
    check_splat_args(l, width, height, spec)?;
    let [c, n] = normalize_approach(l.b1, l.b2)?;
    let s = l.scale();
    let inv_s = 1.0 / s;
    let b_norm2 = l.b1 * l.b1 + l.b2 * l.b2;
    let dtheta_db = [-l.b2 / b_norm2, l.b1 / b_norm2];

    let mut values = Vec::with_capacity(width * height);
    let mut grads = Vec::with_capacity(width * height);
    for j in 0..height {
        for i in 0..width {
            let [p1, p2] = pixel_center(i, j, width, height);
            let (d1, d2) = (p1 - l.x, p2 - l.y);
            let q1 = (c * d1 + n * d2) * inv_s;
            let q2 = (-n * d1 + c * d2) * inv_s;
            let (m, [g1, g2]) = template_density_grad([q1, q2], spec);

            let da = -2.0 / l.a * (g1 * q1 + g2 * q2);
            let dx = (-c * g1 + n * g2) * inv_s;
            let dy = (-n * g1 - c * g2) * inv_s;
            let dtheta = g1 * q2 - g2 * q1;
            values.push(m);
            grads.push([da, dx, dy, dtheta * dtheta_db[0], dtheta * dtheta_db[1]]);
        }
    }
    Ok((
        Grid::from_values(width, height, values)?,
        SplatJacobian { width, height, grads },
    ))
}

/// Smallest size root and direction norm splatted during training.
pub const MIN_SIZE_ROOT: f64 = 1e-3;
pub const MIN_DIRECTION_NORM: f64 = 1e-6;

/// Clamps a raw (possibly degenerate) layout vector into a splattable one.
///
/// Gradients taken at the clamped layout are passed straight through to the
/// raw vector by callers.
pub fn guard_layout(v: &LayoutVec) -> Layout {
    let mut l = Layout::from_array(*v);
    if l.a.abs() < MIN_SIZE_ROOT {
        l.a = if l.a < 0.0 { -MIN_SIZE_ROOT } else { MIN_SIZE_ROOT };
    }
    let norm = l.b1.hypot(l.b2);
    if norm < MIN_DIRECTION_NORM {
        if norm == 0.0 {
            l.b1 = MIN_DIRECTION_NORM;
            l.b2 = 0.0;
        } else {
            let k = MIN_DIRECTION_NORM / norm;
            l.b1 *= k;
            l.b2 *= k;
        }
    }
    l
}

/// Three conditioning planes: object, mask and `(1 - m)·object + m`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionStack {
    pub object: Grid,
    pub mask: Grid,
    pub blend: Grid,
}

impl ConditionStack {
    pub fn planes(&self) -> [&Grid; 3] {
        [&self.object, &self.mask, &self.blend]
    }
}

pub fn blend_condition(mask: &LayoutMask, object_grid: &Grid) -> Result<ConditionStack> {
    object_grid.same_shape(mask)?;
    let blend: Vec<f64> = mask
        .values()
        .iter()
        .zip(object_grid.values())
        .map(|(&m, &o)| ((1.0 - m) * o + m).clamp(0.0, 1.0))
        .collect();
    Ok(ConditionStack {
        object: object_grid.clone(),
        mask: mask.clone(),
        blend: Grid::from_values(mask.width(), mask.height(), blend)?,
    })
}

/// Interpolates palm center linearly, direction by slerp and scale
/// geometrically. `k = 0` and `k = 1` return the endpoints verbatim.
pub fn interpolate_layouts(l_a: &Layout, l_b: &Layout, k: f64) -> Result<Layout> {
    l_a.validate()?;
    l_b.validate()?;
    if !(0.0..=1.0).contains(&k) {
        return Err(Error::InvalidLayout(format!("interpolation weight {k} outside [0, 1]")));
    }
    let da = l_a.direction()?;
    let db = l_b.direction()?;
    let dot = (da[0] * db[0] + da[1] * db[1]).clamp(-1.0, 1.0);
    if dot <= -1.0 + 1e-12 {
        return Err(Error::AmbiguousPath);
    }
    if k == 0.0 {
        return Ok(*l_a);
    }
    if k == 1.0 {
        return Ok(*l_b);
    }
    let omega = dot.acos();
    let dir = if omega < 1e-9 {
        let v = [da[0] + k * (db[0] - da[0]), da[1] + k * (db[1] - da[1])];
        normalize_approach(v[0], v[1])?
    } else {
        let sin_omega = omega.sin();
        let wa = ((1.0 - k) * omega).sin() / sin_omega;
        let wb = (k * omega).sin() / sin_omega;
        [wa * da[0] + wb * db[0], wa * da[1] + wb * db[1]]
    };
    let s = l_a.scale().powf(1.0 - k) * l_b.scale().powf(k);
    Ok(Layout::new(
        s.sqrt(),
        l_a.x + k * (l_b.x - l_a.x),
        l_a.y + k * (l_b.y - l_a.y),
        dir[0],
        dir[1],
    ))
}

/// Approach angle in radians, `atan2(b2, b1)`.
pub fn approach_angle(l: &Layout) -> f64 {
    l.b2.atan2(l.b1).rem_euclid(2.0 * PI)
}
