//! SIFT keypoint descriptors and the closest-pair aggregate distance used
//! as a retrieval baseline.
//!
//! Detection and description follow the OpenCV layout of the algorithm:
//! a doubled seed image, `n_octave_layers + 3` Gaussians per octave,
//! DoG extrema refined by quadratic interpolation, 36-bin orientation
//! histograms and 4×4×8 trilinear gradient histograms. Descriptors are
//! kept as unit-length floats rather than quantized to bytes.

use image::Rgb32FImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DESCRIPTOR_LEN: usize = 128;

const INIT_SIGMA: f32 = 0.5;
const IMG_BORDER: usize = 5;
const MAX_INTERP_STEPS: usize = 5;
const ORI_HIST_BINS: usize = 36;
const ORI_SIG_FCTR: f32 = 1.5;
const ORI_RADIUS: f32 = 3.0 * ORI_SIG_FCTR;
const ORI_PEAK_RATIO: f32 = 0.8;
const DESCR_WIDTH: usize = 4;
const DESCR_HIST_BINS: usize = 8;
const DESCR_SCL_FCTR: f32 = 3.0;
const DESCR_MAG_THR: f32 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SiftParams {
    pub n_octave_layers: usize,
    pub sigma: f32,
    pub contrast_threshold: f32,
    pub edge_threshold: f32,
    /// Double the image before building the pyramid.
    pub upsample: bool,
}

impl Default for SiftParams {
    fn default() -> Self {
        SiftParams {
            n_octave_layers: 3,
            sigma: 1.6,
            contrast_threshold: 0.04,
            edge_threshold: 10.0,
            upsample: true,
        }
    }
}

/// `t × 128` descriptor matrix, row-major.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SiftDescriptorSet {
    data: Vec<f32>,
}

impl SiftDescriptorSet {
    pub fn from_flat(data: Vec<f32>) -> Result<Self> {
        if !data.len().is_multiple_of(DESCRIPTOR_LEN) {
            return Err(Error::Shape(format!(
                "{} values is not a whole number of {DESCRIPTOR_LEN}-d descriptors",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sift descriptor"));
        }
        Ok(SiftDescriptorSet { data })
    }

    pub fn from_rows(rows: &[[f32; DESCRIPTOR_LEN]]) -> Result<Self> {
        Self::from_flat(rows.iter().flatten().copied().collect())
    }

    pub fn len(&self) -> usize {
        self.data.len() / DESCRIPTOR_LEN
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn descriptor(&self, i: usize) -> &[f32] {
        &self.data[i * DESCRIPTOR_LEN..(i + 1) * DESCRIPTOR_LEN]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(DESCRIPTOR_LEN)
    }

    pub fn as_flat(&self) -> &[f32] {
        &self.data
    }
}

fn l2(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Sum over query descriptors of the L2 distance to the nearest candidate
/// descriptor. Not symmetric. Empty sets are incomparable.
pub fn sift_distance(query: &SiftDescriptorSet, candidate: &SiftDescriptorSet) -> Result<f64> {
    if query.is_empty() || candidate.is_empty() {
        return Err(Error::EmptyDescriptors);
    }
    Ok(query
        .iter()
        .map(|q| candidate.iter().map(|c| l2(q, c)).fold(f64::INFINITY, f64::min))
        .sum())
}

#[derive(Clone)]
struct Plane {
    w: usize,
    h: usize,
    data: Vec<f32>,
}

impl Plane {
    fn at(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.w + c]
    }
}

fn grayscale(img: &Rgb32FImage) -> Plane {
    let data = img
        .pixels()
        .map(|p| 0.299 * p.0[0] + 0.587 * p.0[1] + 0.114 * p.0[2])
        .collect();
    Plane {
        w: img.width() as usize,
        h: img.height() as usize,
        data,
    }
}

fn upsample2(p: &Plane) -> Plane {
    let (w, h) = (p.w * 2, p.h * 2);
    let mut data = vec![0f32; w * h];
    let axis = |dst: usize, len: usize| {
        let src = ((dst as f32 + 0.5) * 0.5 - 0.5).max(0.0);
        let lo = (src.floor() as usize).min(len - 1);
        (lo, (lo + 1).min(len - 1), src - lo as f32)
    };
    for y in 0..h {
        let (y0, y1, fy) = axis(y, p.h);
        for x in 0..w {
            let (x0, x1, fx) = axis(x, p.w);
            let top = p.at(y0, x0) + (p.at(y0, x1) - p.at(y0, x0)) * fx;
            let bot = p.at(y1, x0) + (p.at(y1, x1) - p.at(y1, x0)) * fx;
            data[y * w + x] = top + (bot - top) * fy;
        }
    }
    Plane { w, h, data }
}

fn downsample2(p: &Plane) -> Plane {
    let (w, h) = (p.w / 2, p.h / 2);
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            data.push(p.at(2 * y, 2 * x));
        }
    }
    Plane { w, h, data }
}

// reflect-101 border: -1 -> 1, len -> len - 2
fn reflect(i: isize, len: usize) -> usize {
    let n = len as isize;
    if n == 1 {
        return 0;
    }
    let mut i = i;
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * n - 2 - i;
        } else {
            return i as usize;
        }
    }
}

fn gaussian_blur(p: &Plane, sigma: f32) -> Plane {
    let size = ((sigma * 8.0 + 1.0).round() as usize) | 1;
    let half = (size / 2) as isize;
    let mut kernel: Vec<f32> = (-half..=half)
        .map(|i| (-((i * i) as f32) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f32 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= sum);

    let mut tmp = vec![0f32; p.w * p.h];
    for y in 0..p.h {
        let row = &p.data[y * p.w..(y + 1) * p.w];
        for x in 0..p.w {
            let mut acc = 0f32;
            for (k, &kv) in kernel.iter().enumerate() {
                acc += kv * row[reflect(x as isize + k as isize - half, p.w)];
            }
            tmp[y * p.w + x] = acc;
        }
    }
    let mut out = vec![0f32; p.w * p.h];
    for y in 0..p.h {
        for (k, &kv) in kernel.iter().enumerate() {
            let src = reflect(y as isize + k as isize - half, p.h);
            let src_row = &tmp[src * p.w..(src + 1) * p.w];
            let dst_row = &mut out[y * p.w..(y + 1) * p.w];
            for (d, &s) in dst_row.iter_mut().zip(src_row) {
                *d += kv * s;
            }
        }
    }
    Plane {
        w: p.w,
        h: p.h,
        data: out,
    }
}

fn subtract(a: &Plane, b: &Plane) -> Plane {
    Plane {
        w: a.w,
        h: a.h,
        data: a.data.iter().zip(&b.data).map(|(x, y)| x - y).collect(),
    }
}

struct Pyramid {
    gauss: Vec<Vec<Plane>>,
    dog: Vec<Vec<Plane>>,
}

fn build_pyramid(base: Plane, params: &SiftParams) -> Pyramid {
    let layers = params.n_octave_layers;
    let min_side = base.w.min(base.h) as f32;
    let octaves = ((min_side.log2() - 2.0).round().max(1.0)) as usize;

    let k = 2f32.powf(1.0 / layers as f32);
    let mut sig = vec![params.sigma; layers + 3];
    for (i, s) in sig.iter_mut().enumerate().skip(1) {
        let prev = k.powi(i as i32 - 1) * params.sigma;
        let total = prev * k;
        *s = (total * total - prev * prev).sqrt();
    }

    let mut gauss: Vec<Vec<Plane>> = Vec::with_capacity(octaves);
    for o in 0..octaves {
        let first = if o == 0 {
            base.clone()
        } else {
            downsample2(&gauss[o - 1][layers])
        };
        if first.w < 2 * IMG_BORDER + 1 || first.h < 2 * IMG_BORDER + 1 {
            break;
        }
        let mut level = Vec::with_capacity(layers + 3);
        level.push(first);
        for s in &sig[1..] {
            let next = gaussian_blur(level.last().unwrap(), *s);
            level.push(next);
        }
        gauss.push(level);
    }
    let dog = gauss
        .iter()
        .map(|level| level.windows(2).map(|w| subtract(&w[1], &w[0])).collect())
        .collect();
    Pyramid { gauss, dog }
}

struct KeyPoint {
    octave: usize,
    layer: usize,
    /// Position in octave pixels.
    x: f32,
    y: f32,
    /// Scale relative to the octave.
    scale: f32,
}

fn is_extremum(dog: &[Plane], layer: usize, r: usize, c: usize, threshold: f32) -> bool {
    let v = dog[layer].at(r, c);
    if v.abs() <= threshold {
        return false;
    }
    for p in &dog[layer - 1..=layer + 1] {
        for rr in r - 1..=r + 1 {
            for cc in c - 1..=c + 1 {
                let n = p.at(rr, cc);
                if (v > 0.0 && n > v) || (v < 0.0 && n < v) {
                    return false;
                }
            }
        }
    }
    true
}

// Solves H x = b by Gaussian elimination with partial pivoting.
#[allow(clippy::needless_range_loop)]
fn solve3(mut h: [[f32; 3]; 3], mut b: [f32; 3]) -> Option<[f32; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| h[i][col].abs().total_cmp(&h[j][col].abs()))?;
        if h[pivot][col].abs() < f32::EPSILON {
            return None;
        }
        h.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let f = h[row][col] / h[col][col];
            for k in col..3 {
                h[row][k] -= f * h[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0f32; 3];
    for row in (0..3).rev() {
        let mut acc = b[row];
        for k in row + 1..3 {
            acc -= h[row][k] * x[k];
        }
        x[row] = acc / h[row][row];
    }
    Some(x)
}

struct Derivatives {
    grad: [f32; 3],
    hess: [[f32; 3]; 3],
}

fn derivatives(dog: &[Plane], layer: usize, r: usize, c: usize) -> Derivatives {
    let (prev, img, next) = (&dog[layer - 1], &dog[layer], &dog[layer + 1]);
    let grad = [
        (img.at(r, c + 1) - img.at(r, c - 1)) * 0.5,
        (img.at(r + 1, c) - img.at(r - 1, c)) * 0.5,
        (next.at(r, c) - prev.at(r, c)) * 0.5,
    ];
    let v2 = img.at(r, c) * 2.0;
    let dxx = img.at(r, c + 1) + img.at(r, c - 1) - v2;
    let dyy = img.at(r + 1, c) + img.at(r - 1, c) - v2;
    let dss = next.at(r, c) + prev.at(r, c) - v2;
    let dxy = (img.at(r + 1, c + 1) - img.at(r + 1, c - 1) - img.at(r - 1, c + 1) + img.at(r - 1, c - 1)) * 0.25;
    let dxs = (next.at(r, c + 1) - next.at(r, c - 1) - prev.at(r, c + 1) + prev.at(r, c - 1)) * 0.25;
    let dys = (next.at(r + 1, c) - next.at(r - 1, c) - prev.at(r + 1, c) + prev.at(r - 1, c)) * 0.25;
    Derivatives {
        grad,
        hess: [[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]],
    }
}

fn refine(
    dog: &[Plane],
    octave: usize,
    mut layer: usize,
    mut r: usize,
    mut c: usize,
    params: &SiftParams,
) -> Option<KeyPoint> {
    let layers = params.n_octave_layers;
    let (w, h) = (dog[0].w, dog[0].h);
    let mut offset = [0f32; 3];
    let mut converged = false;
    for _ in 0..MAX_INTERP_STEPS {
        let d = derivatives(dog, layer, r, c);
        let x = solve3(d.hess, d.grad).unwrap_or([0.0; 3]);
        offset = [-x[0], -x[1], -x[2]];
        if offset.iter().all(|v| v.abs() < 0.5) {
            converged = true;
            break;
        }
        if offset.iter().any(|v| !v.is_finite() || v.abs() > 1e6) {
            return None;
        }
        let nc = c as isize + offset[0].round() as isize;
        let nr = r as isize + offset[1].round() as isize;
        let nl = layer as isize + offset[2].round() as isize;
        if nl < 1
            || nl > layers as isize
            || nc < IMG_BORDER as isize
            || nc >= (w - IMG_BORDER) as isize
            || nr < IMG_BORDER as isize
            || nr >= (h - IMG_BORDER) as isize
        {
            return None;
        }
        c = nc as usize;
        r = nr as usize;
        layer = nl as usize;
    }
    if !converged {
        return None;
    }

    let d = derivatives(dog, layer, r, c);
    let t: f32 = d.grad.iter().zip(&offset).map(|(g, o)| g * o).sum();
    let contrast = dog[layer].at(r, c) + t * 0.5;
    if contrast.abs() * (layers as f32) < params.contrast_threshold {
        return None;
    }
    let (dxx, dyy, dxy) = (d.hess[0][0], d.hess[1][1], d.hess[0][1]);
    let tr = dxx + dyy;
    let det = dxx * dyy - dxy * dxy;
    let e = params.edge_threshold;
    if det <= 0.0 || tr * tr * e >= (e + 1.0) * (e + 1.0) * det {
        return None;
    }
    Some(KeyPoint {
        octave,
        layer,
        x: c as f32 + offset[0],
        y: r as f32 + offset[1],
        scale: params.sigma * 2f32.powf((layer as f32 + offset[2]) / layers as f32),
    })
}

fn gradient(img: &Plane, r: usize, c: usize) -> (f32, f32) {
    (img.at(r, c + 1) - img.at(r, c - 1), img.at(r - 1, c) - img.at(r + 1, c))
}

fn degrees(dy: f32, dx: f32) -> f32 {
    let a = dy.atan2(dx).to_degrees();
    if a < 0.0 {
        a + 360.0
    } else {
        a
    }
}

/// Dominant gradient orientations in degrees.
fn orientations(img: &Plane, kp: &KeyPoint) -> Vec<f32> {
    let n = ORI_HIST_BINS;
    let sigma = ORI_SIG_FCTR * kp.scale;
    let radius = (ORI_RADIUS * kp.scale).round() as isize;
    let exp_scale = -1.0 / (2.0 * sigma * sigma);
    let (pr, pc) = (kp.y.round() as isize, kp.x.round() as isize);

    let mut raw = vec![0f32; n];
    for i in -radius..=radius {
        let y = pr + i;
        if y <= 0 || y >= img.h as isize - 1 {
            continue;
        }
        for j in -radius..=radius {
            let x = pc + j;
            if x <= 0 || x >= img.w as isize - 1 {
                continue;
            }
            let (dx, dy) = gradient(img, y as usize, x as usize);
            let weight = (((i * i + j * j) as f32) * exp_scale).exp();
            let mut bin = ((n as f32 / 360.0) * degrees(dy, dx)).round() as isize;
            bin = bin.rem_euclid(n as isize);
            raw[bin as usize] += weight * (dx * dx + dy * dy).sqrt();
        }
    }

    let at = |i: isize| raw[i.rem_euclid(n as isize) as usize];
    let hist: Vec<f32> = (0..n as isize)
        .map(|i| (at(i - 2) + at(i + 2)) * (1.0 / 16.0) + (at(i - 1) + at(i + 1)) * (4.0 / 16.0) + at(i) * (6.0 / 16.0))
        .collect();
    let max = hist.iter().copied().fold(0f32, f32::max);
    let threshold = max * ORI_PEAK_RATIO;

    let mut out = Vec::new();
    for j in 0..n {
        let l = hist[(j + n - 1) % n];
        let r = hist[(j + 1) % n];
        let v = hist[j];
        if v > l && v > r && v >= threshold {
            let mut bin = j as f32 + 0.5 * (l - r) / (l - 2.0 * v + r);
            if bin < 0.0 {
                bin += n as f32;
            } else if bin >= n as f32 {
                bin -= n as f32;
            }
            out.push((360.0 / n as f32) * bin);
        }
    }
    out
}

fn describe(img: &Plane, kp: &KeyPoint, angle: f32) -> [f32; DESCRIPTOR_LEN] {
    let d = DESCR_WIDTH;
    let n = DESCR_HIST_BINS;
    let (pr, pc) = (kp.y.round() as isize, kp.x.round() as isize);
    let bins_per_deg = n as f32 / 360.0;
    let exp_scale = -1.0 / (d as f32 * d as f32 * 0.5);
    let hist_width = DESCR_SCL_FCTR * kp.scale;
    let diag = ((img.w * img.w + img.h * img.h) as f32).sqrt();
    let radius = ((hist_width * std::f32::consts::SQRT_2 * (d as f32 + 1.0) * 0.5).round()).min(diag) as isize;
    let cos_t = angle.to_radians().cos() / hist_width;
    let sin_t = angle.to_radians().sin() / hist_width;

    let stride_o = n + 2;
    let stride_c = (d + 2) * stride_o;
    let mut hist = vec![0f32; (d + 2) * stride_c];
    let half = d as f32 / 2.0 - 0.5;

    for i in -radius..=radius {
        for j in -radius..=radius {
            let c_rot = j as f32 * cos_t - i as f32 * sin_t;
            let r_rot = j as f32 * sin_t + i as f32 * cos_t;
            let rbin = r_rot + half;
            let cbin = c_rot + half;
            let (r, c) = (pr + i, pc + j);
            if !(rbin > -1.0
                && rbin < d as f32
                && cbin > -1.0
                && cbin < d as f32
                && r > 0
                && r < img.h as isize - 1
                && c > 0
                && c < img.w as isize - 1)
            {
                continue;
            }
            let (dx, dy) = gradient(img, r as usize, c as usize);
            let weight = ((c_rot * c_rot + r_rot * r_rot) * exp_scale).exp();
            let mag = (dx * dx + dy * dy).sqrt() * weight;
            let obin = (degrees(dy, dx) - angle) * bins_per_deg;

            let (r0, c0, o0) = (rbin.floor(), cbin.floor(), obin.floor());
            let (fr, fc, fo) = (rbin - r0, cbin - c0, obin - o0);
            let o0 = (o0 as isize).rem_euclid(n as isize) as usize;
            let idx = (r0 as isize + 1) as usize * stride_c + (c0 as isize + 1) as usize * stride_o + o0;

            let v_r1 = mag * fr;
            let v_r0 = mag - v_r1;
            let v_rc11 = v_r1 * fc;
            let v_rc10 = v_r1 - v_rc11;
            let v_rc01 = v_r0 * fc;
            let v_rc00 = v_r0 - v_rc01;
            let v_rco111 = v_rc11 * fo;
            let v_rco101 = v_rc10 * fo;
            let v_rco011 = v_rc01 * fo;
            let v_rco001 = v_rc00 * fo;
            hist[idx] += v_rc00 - v_rco001;
            hist[idx + 1] += v_rco001;
            hist[idx + stride_o] += v_rc01 - v_rco011;
            hist[idx + stride_o + 1] += v_rco011;
            hist[idx + stride_c] += v_rc10 - v_rco101;
            hist[idx + stride_c + 1] += v_rco101;
            hist[idx + stride_c + stride_o] += v_rc11 - v_rco111;
            hist[idx + stride_c + stride_o + 1] += v_rco111;
        }
    }

    let mut out = [0f32; DESCRIPTOR_LEN];
    for i in 0..d {
        for j in 0..d {
            let idx = (i + 1) * stride_c + (j + 1) * stride_o;
            hist[idx] += hist[idx + n];
            hist[idx + 1] += hist[idx + n + 1];
            for k in 0..n {
                out[(i * d + j) * n + k] = hist[idx + k];
            }
        }
    }

    let norm = out.iter().map(|v| v * v).sum::<f32>().sqrt();
    let cap = norm * DESCR_MAG_THR;
    out.iter_mut().for_each(|v| *v = v.min(cap));
    let norm = out.iter().map(|v| v * v).sum::<f32>().sqrt().max(f32::EPSILON);
    out.iter_mut().for_each(|v| *v /= norm);
    out
}

/// Detects keypoints and returns one 128-d descriptor per keypoint
/// orientation. A featureless image yields an empty set.
pub fn sift_descriptors(img: &Rgb32FImage, params: &SiftParams) -> Result<SiftDescriptorSet> {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if params.n_octave_layers == 0 || !(params.sigma > 0.0) {
        return Err(Error::InvalidArgument(
            "sift needs n_octave_layers >= 1 and sigma > 0".into(),
        ));
    }
    if img.width() == 0 || img.height() == 0 {
        return Ok(SiftDescriptorSet::default());
    }
    let gray = grayscale(img);
    let (seed, seed_sigma) = if params.upsample {
        (upsample2(&gray), INIT_SIGMA * 2.0)
    } else {
        (gray, INIT_SIGMA)
    };
    let diff = (params.sigma * params.sigma - seed_sigma * seed_sigma).max(0.01).sqrt();
    let base = gaussian_blur(&seed, diff);
    let pyr = build_pyramid(base, params);

    let layers = params.n_octave_layers;
    let threshold = 0.5 * params.contrast_threshold / layers as f32;
    let mut data = Vec::new();
    for (octave, dog) in pyr.dog.iter().enumerate() {
        let (w, h) = (dog[0].w, dog[0].h);
        for layer in 1..=layers {
            for r in IMG_BORDER..h - IMG_BORDER {
                for c in IMG_BORDER..w - IMG_BORDER {
                    if !is_extremum(dog, layer, r, c, threshold) {
                        continue;
                    }
                    let Some(kp) = refine(dog, octave, layer, r, c, params) else {
                        continue;
                    };
                    let img = &pyr.gauss[kp.octave][kp.layer];
                    for angle in orientations(img, &kp) {
                        data.extend_from_slice(&describe(img, &kp, angle));
                    }
                }
            }
        }
    }
    SiftDescriptorSet::from_flat(data)
}
