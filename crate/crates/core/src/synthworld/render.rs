use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{FeatureMaps, LatentVector, Rendered, WorldConfig};
use crate::seed;
use crate::tensorio::{ImageBuffer, LabelMaskBuffer};

pub const LABEL_COUNT: usize = 9;
pub const SIGNATURE_CHANNELS: usize = 6;
pub(super) const SHAPES_LATENT_DIMS: usize = 16;

pub const PART_NAMES: [&str; LABEL_COUNT] = [
    "background",
    "body",
    "head",
    "ear",
    "eye",
    "snout",
    "legs",
    "tail",
    "tongue",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Background = 0,
    Body = 1,
    Head = 2,
    Ear = 3,
    Eye = 4,
    Snout = 5,
    Legs = 6,
    Tail = 7,
    Tongue = 8,
}

impl Part {
    pub const ALL: [Part; LABEL_COUNT] = [
        Part::Background,
        Part::Body,
        Part::Head,
        Part::Ear,
        Part::Eye,
        Part::Snout,
        Part::Legs,
        Part::Tail,
        Part::Tongue,
    ];

    pub fn label(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        PART_NAMES[self as usize]
    }
}

/// Weight-3 binary codewords: pairwise Hamming distance >= 2.
const SIGNATURES: [[f32; SIGNATURE_CHANNELS]; LABEL_COUNT] = [
    [1., 1., 1., 0., 0., 0.],
    [0., 0., 0., 1., 1., 1.],
    [1., 0., 0., 1., 1., 0.],
    [0., 1., 1., 0., 0., 1.],
    [1., 0., 1., 0., 1., 0.],
    [0., 1., 0., 1., 0., 1.],
    [1., 1., 0., 0., 0., 1.],
    [0., 0., 1., 1., 1., 0.],
    [1., 0., 0., 0., 1., 1.],
];

/// One row of the documented latent → scene-parameter table.
///
/// `value = base + span · tanh(w[dim] / 3)`, strictly increasing in `w[dim]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentMapping {
    pub dim: usize,
    pub parameter: String,
    pub base: f64,
    pub span: f64,
    pub unit: String,
}

const MAPPING: [(&str, f64, f64, &str); SHAPES_LATENT_DIMS] = [
    ("body_size", 1.0, 0.25, "scale"),
    ("head_size", 15.0, 4.0, "px"),
    ("head_lift", 0.0, 6.0, "px"),
    ("ear_size", 1.0, 0.45, "scale"),
    ("eye_size", 2.6, 1.3, "px"),
    ("coat_luminance", 0.5, 0.3, "luma"),
    ("snout_length", 8.0, 4.0, "px"),
    ("leg_length", 16.0, 7.0, "px"),
    ("tail_length", 12.0, 7.0, "px"),
    ("tongue_size", 2.5, 2.5, "px"),
    ("body_tilt", 0.0, 12.0, "deg"),
    ("ear_angle", 25.0, 15.0, "deg"),
    ("background_luminance", 0.72, 0.18, "luma"),
    ("eye_luminance", 0.12, 0.1, "luma"),
    ("horizontal_shift", 0.0, 10.0, "px"),
    ("coat_texture", 0.12, 0.08, "contrast"),
];

pub fn latent_mapping() -> Vec<LatentMapping> {
    MAPPING
        .iter()
        .enumerate()
        .map(|(dim, &(p, base, span, unit))| LatentMapping {
            dim,
            parameter: p.to_string(),
            base,
            span,
            unit: unit.to_string(),
        })
        .collect()
}

fn param(w: &[f64], dim: usize) -> f64 {
    let (_, base, span, _) = MAPPING[dim];
    base + span * (w[dim] / 3.0).tanh()
}

pub(super) fn feature_noise_table(cfg: &WorldConfig) -> Vec<f32> {
    let n = cfg.height * cfg.width * cfg.feature_channels;
    if cfg.feature_noise == 0.0 {
        return vec![0.0; n];
    }
    let normal = Normal::new(0.0, cfg.feature_noise).expect("finite noise std");
    let mut rng = seed::derive_rng(cfg.seed, "feature-noise", 0);
    (0..n).map(|_| normal.sample(&mut rng) as f32).collect()
}

/// Separable low-frequency cosine patterns ordered by total frequency.
pub(super) fn linear_basis(cfg: &WorldConfig) -> Vec<Vec<f64>> {
    let mut freqs = Vec::new();
    let mut s = 0;
    while freqs.len() < cfg.d_w {
        for u in 0..=s {
            if freqs.len() < cfg.d_w {
                freqs.push((u, s - u));
            }
        }
        s += 1;
    }
    let (h, w) = (cfg.height, cfg.width);
    freqs
        .into_iter()
        .map(|(u, v)| {
            let mut plane = Vec::with_capacity(h * w);
            for y in 0..h {
                let cy = (std::f64::consts::PI * v as f64 * (y as f64 + 0.5) / h as f64).cos();
                for x in 0..w {
                    let cx = (std::f64::consts::PI * u as f64 * (x as f64 + 0.5) / w as f64).cos();
                    plane.push(cfg.linear_amplitude * cx * cy);
                }
            }
            plane
        })
        .collect()
}

const LINEAR_BACKGROUND: f64 = 0.5;

fn write_features(
    cfg: &WorldConfig,
    noise: &[f32],
    labels: &[u8],
    luma: &[f64],
    radial: &[f32],
) -> FeatureMaps {
    let f = cfg.feature_channels;
    let n = cfg.height * cfg.width;
    let mut data = noise.to_vec();
    for p in 0..n {
        let px = &mut data[p * f..(p + 1) * f];
        let sig = &SIGNATURES[labels[p] as usize];
        for c in 0..SIGNATURE_CHANNELS {
            px[c] += sig[c];
        }
        px[SIGNATURE_CHANNELS] += luma[p] as f32;
        px[SIGNATURE_CHANNELS + 1] += radial[p];
    }
    FeatureMaps {
        height: cfg.height,
        width: cfg.width,
        channels: f,
        data,
    }
}

pub(super) fn render_linear(
    cfg: &WorldConfig,
    basis: &[Vec<f64>],
    noise: &[f32],
    w: &LatentVector,
) -> Rendered {
    let n = cfg.height * cfg.width;
    let mut img = vec![LINEAR_BACKGROUND; n];
    for (wi, plane) in w.iter().zip(basis) {
        if *wi != 0.0 {
            crate::linalg::axpy(*wi, plane, &mut img);
        }
    }
    let mut clipped = 0;
    for v in img.iter_mut() {
        if !(0.0..=1.0).contains(v) {
            clipped += 1;
            *v = v.clamp(0.0, 1.0);
        }
    }
    let labels = vec![Part::Background.label(); n];
    let features = write_features(cfg, noise, &labels, &img, &vec![0.0; n]);
    Rendered {
        image: ImageBuffer {
            height: cfg.height,
            width: cfg.width,
            channels: 1,
            data: img,
        },
        mask: LabelMaskBuffer {
            height: cfg.height,
            width: cfg.width,
            label_count: LABEL_COUNT,
            labels,
        },
        features,
        clipped,
    }
}

/// Rotated ellipse primitive in pixel coordinates (y pointing down,
/// `angle` counterclockwise on screen, degrees).
#[derive(Clone, Copy, Debug)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    angle: f64,
    part: Part,
    rgb: [f64; 3],
}

impl Ellipse {
    fn local(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.angle.to_radians().sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        ((dx * c - dy * s) / self.a, (dx * s + dy * c) / self.b)
    }

    fn bbox(&self, w: usize, h: usize) -> (usize, usize, usize, usize) {
        let (s, c) = self.angle.to_radians().sin_cos();
        let hx = (self.a * self.a * c * c + self.b * self.b * s * s).sqrt();
        let hy = (self.a * self.a * s * s + self.b * self.b * c * c).sqrt();
        let clampi = |v: f64, hi: usize| v.floor().clamp(0.0, hi as f64) as usize;
        (
            clampi(self.cx - hx - 1.0, w),
            clampi(self.cx + hx + 2.0, w),
            clampi(self.cy - hy - 1.0, h),
            clampi(self.cy + hy + 2.0, h),
        )
    }
}

fn tint(l: f64, k: [f64; 3]) -> [f64; 3] {
    [l * k[0], l * k[1], l * k[2]]
}

/// Scene layout, back to front.
fn scene(w: &[f64], sx: f64, sy: f64) -> Vec<Ellipse> {
    let body_size = param(w, 0);
    let head_r = param(w, 1);
    let head_lift = param(w, 2);
    let ear_scale = param(w, 3);
    let eye_r = param(w, 4);
    let coat = param(w, 5);
    let snout_len = param(w, 6);
    let leg_len = param(w, 7);
    let tail_len = param(w, 8);
    let tongue = param(w, 9);
    let tilt = param(w, 10);
    let ear_angle = param(w, 11);
    let eye_lum = param(w, 13);
    let shift = param(w, 14);

    let coat_rgb = tint(coat, [1.05, 0.85, 0.62]);
    let (cx, cy) = (72.0 + shift, 78.0);
    let (ba, bb) = (28.0 * body_size, 14.0 * body_size);
    let (hx, hy) = (cx - 0.9 * ba, cy - 1.1 * bb - head_lift);

    let mut parts = Vec::with_capacity(16);
    // tail
    let (ax, ay) = (cx + 0.95 * ba, cy - 0.3 * bb);
    let t = 45f64.to_radians();
    parts.push(Ellipse {
        cx: ax + 0.5 * tail_len * t.cos(),
        cy: ay - 0.5 * tail_len * t.sin(),
        a: 0.5 * tail_len + 2.0,
        b: 3.0,
        angle: 45.0,
        part: Part::Tail,
        rgb: tint(coat * 0.92, [1.05, 0.85, 0.62]),
    });
    for k in [-0.65, -0.3, 0.3, 0.65] {
        parts.push(Ellipse {
            cx: cx + k * ba,
            cy: cy + 0.4 * bb + 0.5 * leg_len,
            a: 3.2,
            b: 0.5 * leg_len + 2.0,
            angle: 0.0,
            part: Part::Legs,
            rgb: tint(coat * 0.9, [1.05, 0.85, 0.62]),
        });
    }
    parts.push(Ellipse {
        cx,
        cy,
        a: ba,
        b: bb,
        angle: tilt,
        part: Part::Body,
        rgb: coat_rgb,
    });
    parts.push(Ellipse {
        cx: hx,
        cy: hy,
        a: head_r,
        b: 0.92 * head_r,
        angle: 0.0,
        part: Part::Head,
        rgb: tint(coat * 1.05, [1.05, 0.85, 0.62]),
    });
    for (side, ang) in [(-1.0, ear_angle), (1.0, -ear_angle)] {
        parts.push(Ellipse {
            cx: hx + side * 0.55 * head_r,
            cy: hy - 0.8 * head_r,
            a: 5.5 * ear_scale,
            b: 10.5 * ear_scale,
            angle: ang,
            part: Part::Ear,
            rgb: tint(coat * 0.72, [1.05, 0.85, 0.62]),
        });
    }
    let (snx, sny) = (hx - 0.75 * head_r - 0.35 * snout_len, hy + 0.35 * head_r);
    let snout_b = 0.38 * head_r;
    parts.push(Ellipse {
        cx: snx,
        cy: sny,
        a: 0.7 * snout_len + 3.0,
        b: snout_b,
        angle: 0.0,
        part: Part::Snout,
        rgb: tint((coat * 1.15 + 0.05).min(1.0), [1.0, 0.9, 0.75]),
    });
    if tongue > 0.5 {
        parts.push(Ellipse {
            cx: snx + 0.1 * snout_len,
            cy: sny + 0.9 * snout_b + 0.6 * tongue,
            a: 0.8 * tongue,
            b: 1.2 * tongue,
            angle: 0.0,
            part: Part::Tongue,
            rgb: [0.85, 0.35, 0.4],
        });
    }
    for (ex, ey) in [(hx - 0.45 * head_r, hy - 0.2 * head_r), (hx + 0.05 * head_r, hy - 0.25 * head_r)] {
        parts.push(Ellipse {
            cx: ex,
            cy: ey,
            a: eye_r,
            b: eye_r,
            angle: 0.0,
            part: Part::Eye,
            rgb: [eye_lum, eye_lum, (eye_lum * 1.1).min(1.0)],
        });
    }
    for e in parts.iter_mut() {
        e.cx *= sx;
        e.cy *= sy;
        e.a *= sx;
        e.b *= sy;
    }
    parts
}

pub(super) fn render_shapes(cfg: &WorldConfig, noise: &[f32], w: &LatentVector) -> Rendered {
    let (h, wd) = (cfg.height, cfg.width);
    let n = h * wd;
    let sx = wd as f64 / 128.0;
    let sy = h as f64 / 128.0;
    let parts = scene(w, sx, sy);

    // topmost part index per pixel plus its local coordinates
    let mut top: Vec<u8> = vec![u8::MAX; n];
    let mut uv: Vec<(f32, f32)> = vec![(0.0, 0.0); n];
    for (k, e) in parts.iter().enumerate() {
        let (x0, x1, y0, y1) = e.bbox(wd, h);
        for y in y0..y1 {
            for x in x0..x1 {
                let (u, v) = e.local(x as f64 + 0.5, y as f64 + 0.5);
                if u * u + v * v <= 1.0 {
                    let p = y * wd + x;
                    top[p] = k as u8;
                    uv[p] = (u as f32, v as f32);
                }
            }
        }
    }

    let bg = param(w, 12);
    let tex_amp = param(w, 15);
    let bg_rgb = tint(bg, [0.85, 0.95, 1.0]);
    let tau = std::f64::consts::TAU;
    let mut img = Vec::with_capacity(3 * n);
    let mut labels = Vec::with_capacity(n);
    let mut luma = Vec::with_capacity(n);
    let mut radial = Vec::with_capacity(n);
    let mut clipped = 0;
    for y in 0..h {
        for x in 0..wd {
            let p = y * wd + x;
            let (rgb, mul, label, rho) = if top[p] == u8::MAX {
                let (fx, fy) = (x as f64 / sx, y as f64 / sy);
                let m = 1.0 + 0.1 * (fy / 128.0 - 0.5) + 0.05 * (0.45 * fx).sin() * (0.31 * fy).sin();
                (bg_rgb, m, Part::Background.label(), 0.0)
            } else {
                let e = &parts[top[p] as usize];
                let (u, v) = (uv[p].0 as f64, uv[p].1 as f64);
                let m = 1.0 + tex_amp * (tau * 1.25 * u).sin() * (tau * 1.25 * v).sin();
                (e.rgb, m, e.part.label(), (u * u + v * v).sqrt() as f32)
            };
            let mut l = 0.0;
            for (c, k) in rgb.iter().zip([0.299, 0.587, 0.114]) {
                let mut val = c * mul;
                if !(0.0..=1.0).contains(&val) {
                    clipped += 1;
                    val = val.clamp(0.0, 1.0);
                }
                img.push(val);
                l += k * val;
            }
            labels.push(label);
            luma.push(l);
            radial.push(rho);
        }
    }
    let features = write_features(cfg, noise, &labels, &luma, &radial);
    Rendered {
        image: ImageBuffer {
            height: h,
            width: wd,
            channels: 3,
            data: img,
        },
        mask: LabelMaskBuffer {
            height: h,
            width: wd,
            label_count: LABEL_COUNT,
            labels,
        },
        features,
        clipped,
    }
}
