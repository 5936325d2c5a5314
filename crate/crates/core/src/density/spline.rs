//! Monotone rational-quadratic spline on `[-B, B]` with identity tails.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TAIL_BOUND: f64 = 5.0;
pub const MIN_BIN_FRACTION: f64 = 1e-3;
pub const MIN_DERIVATIVE: f64 = 1e-3;

/// Number of unconstrained parameters for `k` bins: `k` widths, `k`
/// heights and `k - 1` interior derivatives.
pub fn num_raw_params(k: usize) -> usize {
    3 * k - 1
}

fn derivative_shift() -> f64 {
    ((1.0 - MIN_DERIVATIVE).exp() - 1.0).ln()
}

fn softplus(x: f64) -> f64 {
    crate::autograd::softplus(x)
}

fn softmax(u: &[f64]) -> Vec<f64> {
    let m = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = u.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Knot positions and derivatives of a monotone spline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplineParams {
    pub tail_bound: f64,
    /// `K + 1` ascending input knots from `-B` to `B`.
    pub knots_x: Vec<f64>,
    /// `K + 1` ascending output knots from `-B` to `B`.
    pub knots_y: Vec<f64>,
    /// `K + 1` positive derivatives; both ends equal 1.
    pub derivatives: Vec<f64>,
}

struct Bin {
    x: f64,
    w: f64,
    y: f64,
    h: f64,
    d0: f64,
    d1: f64,
}

impl SplineParams {
    pub fn identity(k: usize, tail_bound: f64) -> Result<Self> {
        SplineParams::from_raw(&vec![0.0; num_raw_params(k)], k, tail_bound)
    }

    /// Maps unconstrained values to valid spline parameters. All zeros give
    /// the identity map.
    pub fn from_raw(raw: &[f64], k: usize, tail_bound: f64) -> Result<Self> {
        if k < 1 {
            return Err(Error::invalid("spline needs at least one bin"));
        }
        if raw.len() != num_raw_params(k) {
            return Err(Error::shape(
                "rq_spline",
                format!("expected {} raw parameters, got {}", num_raw_params(k), raw.len()),
            ));
        }
        if !(tail_bound > 0.0) {
            return Err(Error::invalid("tail bound must be > 0"));
        }
        let scale = 1.0 - MIN_BIN_FRACTION * k as f64;
        let knots = |u: &[f64]| {
            let s = softmax(u);
            let mut out = Vec::with_capacity(k + 1);
            let mut acc = 0.0;
            out.push(-tail_bound);
            for (i, si) in s.iter().enumerate() {
                acc += MIN_BIN_FRACTION + scale * si;
                out.push(if i + 1 == k {
                    tail_bound
                } else {
                    -tail_bound + 2.0 * tail_bound * acc
                });
            }
            out
        };
        let shift = derivative_shift();
        let mut derivatives = Vec::with_capacity(k + 1);
        derivatives.push(1.0);
        derivatives.extend(raw[2 * k..].iter().map(|&u| MIN_DERIVATIVE + softplus(u + shift)));
        derivatives.push(1.0);
        let p = SplineParams {
            tail_bound,
            knots_x: knots(&raw[..k]),
            knots_y: knots(&raw[k..2 * k]),
            derivatives,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn bins(&self) -> usize {
        self.knots_x.len() - 1
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.knots_x.len();
        if k < 2 || self.knots_y.len() != k || self.derivatives.len() != k {
            return Err(Error::invalid("inconsistent spline knot arrays"));
        }
        let increasing = |v: &[f64]| v.windows(2).all(|w| w[1] > w[0]);
        if !increasing(&self.knots_x) || !increasing(&self.knots_y) {
            return Err(Error::invalid("spline knots must be strictly increasing"));
        }
        if self.derivatives.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
            return Err(Error::invalid("spline derivatives must be positive"));
        }
        Ok(())
    }

    fn bin(&self, i: usize) -> Bin {
        Bin {
            x: self.knots_x[i],
            w: self.knots_x[i + 1] - self.knots_x[i],
            y: self.knots_y[i],
            h: self.knots_y[i + 1] - self.knots_y[i],
            d0: self.derivatives[i],
            d1: self.derivatives[i + 1],
        }
    }

    fn locate(knots: &[f64], v: f64) -> usize {
        let k = knots.len() - 1;
        knots[1..k].partition_point(|&t| t <= v)
    }

    fn inside(&self, v: f64) -> bool {
        v >= -self.tail_bound && v <= self.tail_bound
    }

    /// Returns `(z, log dz/dy)`.
    pub fn forward(&self, y: f64) -> (f64, f64) {
        if !self.inside(y) {
            return (y, 0.0);
        }
        let b = self.bin(Self::locate(&self.knots_x, y));
        let xi = ((y - b.x) / b.w).clamp(0.0, 1.0);
        let s = b.h / b.w;
        let t = xi * (1.0 - xi);
        let den = s + (b.d1 + b.d0 - 2.0 * s) * t;
        let z = b.y + b.h * (s * xi * xi + b.d0 * t) / den;
        let num_d = s * s * (b.d1 * xi * xi + 2.0 * s * t + b.d0 * (1.0 - xi) * (1.0 - xi));
        (z, num_d.ln() - 2.0 * den.ln())
    }

    /// Returns `(y, log dy/dz)`.
    pub fn inverse(&self, z: f64) -> (f64, f64) {
        if !self.inside(z) {
            return (z, 0.0);
        }
        let b = self.bin(Self::locate(&self.knots_y, z));
        let s = b.h / b.w;
        let dz = z - b.y;
        let m = b.d1 + b.d0 - 2.0 * s;
        let qa = b.h * (s - b.d0) + dz * m;
        let qb = b.h * b.d0 - dz * m;
        let qc = -s * dz;
        let disc = (qb * qb - 4.0 * qa * qc).max(0.0);
        let denom = -qb - disc.sqrt();
        let xi = if denom == 0.0 { 0.0 } else { (2.0 * qc / denom).clamp(0.0, 1.0) };
        let y = b.x + xi * b.w;
        let t = xi * (1.0 - xi);
        let den = s + m * t;
        let num_d = s * s * (b.d1 * xi * xi + 2.0 * s * t + b.d0 * (1.0 - xi) * (1.0 - xi));
        (y, -(num_d.ln() - 2.0 * den.ln()))
    }

    pub fn transform(&self, v: f64, direction: Direction) -> (f64, f64) {
        match direction {
            Direction::Forward => self.forward(v),
            Direction::Inverse => self.inverse(v),
        }
    }
}

/// Applies the spline in the given direction, returning `(value, log|J|)`.
pub fn rq_spline_transform(v: f64, params: &SplineParams, direction: Direction) -> Result<(f64, f64)> {
    if !v.is_finite() {
        return Err(Error::NonFinite { op: "rq_spline_transform" });
    }
    Ok(params.transform(v, direction))
}

/// Six-component forward-mode dual number over the local bin quantities
/// `(x_k, w_k, y_k, h_k, d_k, d_{k+1})`.
#[derive(Clone, Copy)]
struct D6 {
    v: f64,
    g: [f64; 6],
}

impl D6 {
    fn var(v: f64, i: usize) -> Self {
        let mut g = [0.0; 6];
        g[i] = 1.0;
        D6 { v, g }
    }
    fn cst(v: f64) -> Self {
        D6 { v, g: [0.0; 6] }
    }
    fn ln(self) -> Self {
        let mut g = self.g;
        g.iter_mut().for_each(|x| *x /= self.v);
        D6 { v: self.v.ln(), g }
    }
}

impl std::ops::Add for D6 {
    type Output = D6;
    fn add(self, o: D6) -> D6 {
        let mut g = self.g;
        for (a, b) in g.iter_mut().zip(o.g) {
            *a += b;
        }
        D6 { v: self.v + o.v, g }
    }
}

impl std::ops::Sub for D6 {
    type Output = D6;
    fn sub(self, o: D6) -> D6 {
        let mut g = self.g;
        for (a, b) in g.iter_mut().zip(o.g) {
            *a -= b;
        }
        D6 { v: self.v - o.v, g }
    }
}

impl std::ops::Mul for D6 {
    type Output = D6;
    fn mul(self, o: D6) -> D6 {
        let mut g = [0.0; 6];
        for (i, x) in g.iter_mut().enumerate() {
            *x = self.g[i] * o.v + self.v * o.g[i];
        }
        D6 { v: self.v * o.v, g }
    }
}

impl std::ops::Div for D6 {
    type Output = D6;
    fn div(self, o: D6) -> D6 {
        let mut g = [0.0; 6];
        let inv = 1.0 / o.v;
        for (i, x) in g.iter_mut().enumerate() {
            *x = (self.g[i] - self.v * inv * o.g[i]) * inv;
        }
        D6 { v: self.v * inv, g }
    }
}

/// Forward transform with gradients of `z` and `log dz/dy` with respect to
/// the raw (unconstrained) parameters.
pub struct RawGradient {
    pub z: f64,
    pub logdet: f64,
    pub dz: Vec<f64>,
    pub dlogdet: Vec<f64>,
}

pub fn forward_with_raw_gradient(raw: &[f64], k: usize, tail_bound: f64, y: f64) -> Result<RawGradient> {
    let p = num_raw_params(k);
    let params = SplineParams::from_raw(raw, k, tail_bound)?;
    let mut out = RawGradient {
        z: y,
        logdet: 0.0,
        dz: vec![0.0; p],
        dlogdet: vec![0.0; p],
    };
    if !params.inside(y) {
        return Ok(out);
    }
    let bin = SplineParams::locate(&params.knots_x, y);
    let b = params.bin(bin);
    let (x, w, yk, h, d0, d1) = (
        D6::var(b.x, 0),
        D6::var(b.w, 1),
        D6::var(b.y, 2),
        D6::var(b.h, 3),
        D6::var(b.d0, 4),
        D6::var(b.d1, 5),
    );
    let one = D6::cst(1.0);
    let two = D6::cst(2.0);
    let xi = (D6::cst(y) - x) / w;
    let s = h / w;
    let t = xi * (one - xi);
    let den = s + (d1 + d0 - two * s) * t;
    let z = yk + h * (s * xi * xi + d0 * t) / den;
    let num_d = s * s * (d1 * xi * xi + two * s * t + d0 * (one - xi) * (one - xi));
    let ld = num_d.ln() - two * den.ln();
    out.z = z.v;
    out.logdet = ld.v;

    let scale = 1.0 - MIN_BIN_FRACTION * k as f64;
    let two_b = 2.0 * tail_bound;
    let back = |offset: usize, g_pos: f64, g_len: f64, sink: &mut [f64]| {
        let s = softmax(&raw[offset..offset + k]);
        let mut gf = vec![0.0; k];
        for v in gf.iter_mut().take(bin) {
            *v += two_b * g_pos;
        }
        gf[bin] += two_b * g_len;
        let dot: f64 = gf.iter().zip(&s).map(|(a, b)| a * b).sum();
        for j in 0..k {
            sink[offset + j] += scale * s[j] * (gf[j] - dot);
        }
    };
    let shift = derivative_shift();
    for (dual, sink) in [(z, &mut out.dz), (ld, &mut out.dlogdet)] {
        back(0, dual.g[0], dual.g[1], sink);
        back(k, dual.g[2], dual.g[3], sink);
        for (slot, gi) in [(bin, dual.g[4]), (bin + 1, dual.g[5])] {
            if slot >= 1 && slot < k {
                let u = raw[2 * k + slot - 1];
                sink[2 * k + slot - 1] += gi * crate::autograd::sigmoid(u + shift);
            }
        }
    }
    Ok(out)
}
