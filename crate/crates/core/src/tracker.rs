//! Unsupervised change quantification: block-matching correspondences,
//! trimmed least-squares affine alignment and a residual displacement field.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::par::{self, Execution};
use crate::tensorio::{ImageBuffer, LabelMaskBuffer};

pub const METHOD: &str = "grid block matching with normalized cross-correlation (stand-in for a learned dense matcher)";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub block: usize,
    pub search: usize,
    pub stride: usize,
    pub min_score: f64,
    pub trim_fraction: f64,
    pub trim_rounds: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            block: 16,
            search: 12,
            stride: 8,
            min_score: 0.5,
            trim_fraction: 0.2,
            trim_rounds: 2,
        }
    }
}

/// One grid match; coordinates are block centers in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    pub score: f64,
}

impl Correspondence {
    pub fn displacement(&self) -> (f64, f64) {
        (self.x1 - self.x0, self.y1 - self.y0)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceSet {
    pub matches: Vec<Correspondence>,
}

struct Plane {
    h: usize,
    w: usize,
    v: Vec<f64>,
}

impl Plane {
    fn of(img: &ImageBuffer) -> Plane {
        Plane {
            h: img.height,
            w: img.width,
            v: img.luma_plane(),
        }
    }

    /// Mean-centered block and its squared norm.
    fn block(&self, x: usize, y: usize, n: usize) -> (Vec<f64>, f64) {
        let mut out = Vec::with_capacity(n * n);
        for r in y..y + n {
            out.extend_from_slice(&self.v[r * self.w + x..r * self.w + x + n]);
        }
        let mu = linalg::mean(&out);
        out.iter_mut().for_each(|v| *v -= mu);
        let ss = linalg::dot(&out, &out);
        (out, ss)
    }

    fn bilinear(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, (self.w - 1) as f64);
        let y = y.clamp(0.0, (self.h - 1) as f64);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.w - 1), (y0 + 1).min(self.h - 1));
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let at = |xx: usize, yy: usize| self.v[yy * self.w + xx];
        (1.0 - fy) * ((1.0 - fx) * at(x0, y0) + fx * at(x1, y0)) + fy * ((1.0 - fx) * at(x0, y1) + fx * at(x1, y1))
    }
}

fn check_pair(a: &ImageBuffer, b: &ImageBuffer, cfg: &TrackerConfig) -> Result<()> {
    if a.height != b.height || a.width != b.width {
        return Err(Error::dim("tracker image pixels", a.pixels(), b.pixels()));
    }
    if a.height < cfg.block || a.width < cfg.block || cfg.block == 0 || cfg.stride == 0 {
        return Err(Error::Invalid(format!(
            "image {}x{} smaller than block {}",
            a.height, a.width, cfg.block
        )));
    }
    Ok(())
}

fn flat(u: &[f64]) -> bool {
    let peak = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    peak <= 1e-9
}

fn match_planes(pa: &Plane, pb: &Plane, cfg: &TrackerConfig, exec: Execution) -> CorrespondenceSet {
    let n = cfg.block;
    let gx: Vec<usize> = (0..=pa.w - n).step_by(cfg.stride).collect();
    let gy: Vec<usize> = (0..=pa.h - n).step_by(cfg.stride).collect();
    let s = cfg.search as isize;
    let half = n as f64 / 2.0;
    let found = par::map_range(exec, gx.len() * gy.len(), |g| {
        let (x, y) = (gx[g % gx.len()], gy[g / gx.len()]);
        let (ba, na) = pa.block(x, y, n);
        if flat(&ba) {
            return None;
        }
        // (score, squared displacement, dy, dx); ties go to the smaller shift
        let mut best: Option<(f64, isize, isize, isize)> = None;
        for dy in -s..=s {
            for dx in -s..=s {
                let (tx, ty) = (x as isize + dx, y as isize + dy);
                if tx < 0 || ty < 0 || tx as usize + n > pb.w || ty as usize + n > pb.h {
                    continue;
                }
                let (bb, nb) = pb.block(tx as usize, ty as usize, n);
                if flat(&bb) {
                    continue;
                }
                let score = (linalg::dot(&ba, &bb) / (na * nb).sqrt()).clamp(-1.0, 1.0);
                let key = (score, dx * dx + dy * dy, dy, dx);
                let better = match best {
                    None => true,
                    Some(b) => key.0 > b.0 || (key.0 == b.0 && (key.1, key.2, key.3) < (b.1, b.2, b.3)),
                };
                if better {
                    best = Some(key);
                }
            }
        }
        let (score, _, dy, dx) = best?;
        (score >= cfg.min_score).then_some(Correspondence {
            x0: x as f64 + half,
            y0: y as f64 + half,
            x1: x as f64 + half + dx as f64,
            y1: y as f64 + half + dy as f64,
            score,
        })
    });
    CorrespondenceSet {
        matches: found.into_iter().flatten().collect(),
    }
}

/// Best NCC match in `b` for each grid block of `a`; textureless blocks and
/// matches below `min_score` are dropped. Color is reduced to luma.
pub fn find_correspondences(a: &ImageBuffer, b: &ImageBuffer, cfg: &TrackerConfig, exec: Execution) -> Result<CorrespondenceSet> {
    check_pair(a, b, cfg)?;
    Ok(match_planes(&Plane::of(a), &Plane::of(b), cfg, exec))
}

/// `p1 = L p0 + t`, stored as `[[a11, a12, tx], [a21, a22, ty]]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub m: [[f64; 3]; 2],
}

impl AffineTransform {
    pub fn identity() -> Self {
        AffineTransform {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        }
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.m;
        (
            m[0][0] * x + m[0][1] * y + m[0][2],
            m[1][0] * x + m[1][1] * y + m[1][2],
        )
    }

    pub fn det(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn params(&self) -> [f64; 6] {
        let m = &self.m;
        [m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2]]
    }
}

fn least_squares(ms: &[Correspondence]) -> Result<AffineTransform> {
    if ms.len() < 3 {
        return Err(Error::Degenerate(format!("affine fit needs >= 3 matches, got {}", ms.len())));
    }
    let n = ms.len() as f64;
    let (cx, cy) = ms.iter().fold((0.0, 0.0), |(a, b), m| (a + m.x0, b + m.y0));
    let (cx, cy) = (cx / n, cy / n);
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for m in ms {
        let (dx, dy) = (m.x0 - cx, m.y0 - cy);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let det = sxx * syy - sxy * sxy;
    if det <= 1e-10 * (sxx + syy).powi(2) {
        return Err(Error::Degenerate("matches are collinear; affine fit undetermined".into()));
    }
    // centered normal equations, then translation from the centroids
    let gram = Matrix::from_rows(&[vec![sxx, sxy], vec![sxy, syy]])?;
    let mut m = [[0.0; 3]; 2];
    for (k, row) in m.iter_mut().enumerate() {
        let target = |c: &Correspondence| if k == 0 { c.x1 } else { c.y1 };
        let mean_t = ms.iter().map(target).sum::<f64>() / n;
        let (mut bx, mut by) = (0.0, 0.0);
        for c in ms {
            let t = target(c) - mean_t;
            bx += (c.x0 - cx) * t;
            by += (c.y0 - cy) * t;
        }
        let sol = linalg::solve_square(&gram, &[bx, by])?;
        row[0] = sol[0];
        row[1] = sol[1];
        row[2] = mean_t - sol[0] * cx - sol[1] * cy;
    }
    Ok(AffineTransform { m })
}

/// Least squares, then `trim_rounds` refits after dropping the worst
/// `trim_fraction` of residuals.
pub fn fit_affine(set: &CorrespondenceSet, cfg: &TrackerConfig) -> Result<AffineTransform> {
    if !(0.0..1.0).contains(&cfg.trim_fraction) {
        return Err(Error::Invalid(format!("trim fraction {} outside [0, 1)", cfg.trim_fraction)));
    }
    let mut kept = set.matches.clone();
    let mut a = least_squares(&kept)?;
    if cfg.trim_fraction == 0.0 {
        return Ok(a);
    }
    for _ in 0..cfg.trim_rounds {
        let mut scored: Vec<(f64, usize)> = kept
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let (px, py) = a.apply(c.x0, c.y0);
                ((px - c.x1).powi(2) + (py - c.y1).powi(2), i)
            })
            .collect();
        scored.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)));
        let keep = kept.len() - (cfg.trim_fraction * kept.len() as f64).floor() as usize;
        let mut idx: Vec<usize> = scored[..keep].iter().map(|s| s.1).collect();
        idx.sort_unstable();
        kept = idx.into_iter().map(|i| kept[i]).collect();
        a = least_squares(&kept)?;
    }
    Ok(a)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub x: f64,
    pub y: f64,
    pub dx: f64,
    pub dy: f64,
    pub score: f64,
}

impl Residual {
    pub fn magnitude(&self) -> f64 {
        self.dx.hypot(self.dy)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorField {
    pub points: Vec<Residual>,
    pub mean_magnitude: f64,
    pub max_magnitude: f64,
}

/// Aligns `b` onto `a` by sampling `b` at `A p`, then re-matches.
pub fn residual_field(
    a: &ImageBuffer,
    b: &ImageBuffer,
    affine: &AffineTransform,
    cfg: &TrackerConfig,
    exec: Execution,
) -> Result<VectorField> {
    check_pair(a, b, cfg)?;
    if !affine.params().iter().all(|v| v.is_finite()) || affine.det().abs() < 1e-12 {
        return Err(Error::Singular("affine transform is not invertible".into()));
    }
    let pb = Plane::of(b);
    let mut aligned = Plane {
        h: pb.h,
        w: pb.w,
        v: vec![0.0; pb.h * pb.w],
    };
    for y in 0..pb.h {
        for x in 0..pb.w {
            let (sx, sy) = affine.apply(x as f64, y as f64);
            aligned.v[y * pb.w + x] = pb.bilinear(sx, sy);
        }
    }
    let set = match_planes(&Plane::of(a), &aligned, cfg, exec);
    let points: Vec<Residual> = set
        .matches
        .iter()
        .map(|c| Residual {
            x: c.x0,
            y: c.y0,
            dx: c.x1 - c.x0,
            dy: c.y1 - c.y0,
            score: c.score,
        })
        .collect();
    let mags: Vec<f64> = points.iter().map(Residual::magnitude).collect();
    Ok(VectorField {
        mean_magnitude: if mags.is_empty() { 0.0 } else { linalg::mean(&mags) },
        max_magnitude: mags.iter().fold(0.0, |m: f64, &v| m.max(v)),
        points,
    })
}

/// Mean residual magnitude at grid points whose label (in any of `masks`)
/// is in `labels`, versus all other points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskedMagnitude {
    pub inside_mean: f64,
    pub outside_mean: f64,
    pub inside_count: usize,
    pub outside_count: usize,
}

pub fn masked_magnitude(field: &VectorField, masks: &[&LabelMaskBuffer], labels: &[u8]) -> MaskedMagnitude {
    let (mut si, mut so, mut ni, mut no) = (0.0, 0.0, 0, 0);
    for p in &field.points {
        let inside = masks.iter().any(|m| {
            let (x, y) = (p.x as usize, p.y as usize);
            x < m.width && y < m.height && labels.contains(&m.labels[y * m.width + x])
        });
        if inside {
            si += p.magnitude();
            ni += 1;
        } else {
            so += p.magnitude();
            no += 1;
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    MaskedMagnitude {
        inside_mean: mean(si, ni),
        outside_mean: mean(so, no),
        inside_count: ni,
        outside_count: no,
    }
}
