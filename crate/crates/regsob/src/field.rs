//! Graded half-space grids and radial fields stored through the regular factor
//! `ṽ = z^{1-2σ} u`.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::{sphere_area, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grading {
    pub beta_r: f64,
    pub beta_z: f64,
}

impl Default for Grading {
    fn default() -> Self {
        Self { beta_r: 2.0, beta_z: 2.0 }
    }
}

/// Tensor grid on `[0, R_max]²` in `(r, z) = (|x'|, x_n)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HalfSpaceGrid {
    pub n: usize,
    pub r_nodes: Vec<f64>,
    pub z_nodes: Vec<f64>,
    pub r_max: f64,
    /// Hat-function moments `∫ φ_i(r) r^{n-2} dr`.
    pub r_weights: Vec<f64>,
    /// Hat-function moments `∫ φ_j(z) dz`.
    pub z_weights: Vec<f64>,
    pub grading: Grading,
}

impl HalfSpaceGrid {
    pub fn nr(&self) -> usize {
        self.r_nodes.len()
    }

    pub fn nz(&self) -> usize {
        self.z_nodes.len()
    }

    pub fn len(&self) -> usize {
        self.nr() * self.nz()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat r-major index of node `(i, j)`.
    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * self.nz() + j
    }

    /// Interval counts `(N_r, N_z)`.
    pub fn intervals(&self) -> (usize, usize) {
        (self.nr() - 1, self.nz() - 1)
    }

    /// Stable identifier of the grid parameters.
    pub fn hash(&self) -> u64 {
        let desc = format!(
            "{}|{:e}|{}|{}|{:e}|{:e}",
            self.n,
            self.r_max,
            self.nr(),
            self.nz(),
            self.grading.beta_r,
            self.grading.beta_z
        );
        CRC64.checksum(desc.as_bytes())
    }
}

/// Graded grid `r_i = R (i/N_r)^{β_r}`, `z_j = R (j/N_z)^{β_z}`.
pub fn make_grid(n: usize, r_max: f64, n_r: usize, n_z: usize, grading: Grading) -> Result<HalfSpaceGrid> {
    if n < 2 {
        return Err(Error::InvalidParams(format!("dimension n = {n} must be at least 2")));
    }
    if n_r < 4 || n_z < 4 {
        return Err(Error::InvalidParams(format!("need at least 4 intervals per axis, got {n_r} x {n_z}")));
    }
    if !(r_max > 0.0 && r_max.is_finite()) {
        return Err(Error::InvalidParams(format!("R_max = {r_max} must be positive")));
    }
    for b in [grading.beta_r, grading.beta_z] {
        if !(b >= 1.0) {
            return Err(Error::InvalidGrading(b));
        }
    }
    let nodes = |m: usize, beta: f64| -> Vec<f64> {
        (0..=m)
            .map(|i| if i == m { r_max } else { r_max * (i as f64 / m as f64).powf(beta) })
            .collect()
    };
    let r_nodes = nodes(n_r, grading.beta_r);
    let z_nodes = nodes(n_z, grading.beta_z);
    let r_weights = hat_moments(&r_nodes, n - 2);
    let z_weights = hat_moments(&z_nodes, 0);
    Ok(HalfSpaceGrid { n, r_nodes, z_nodes, r_max, r_weights, z_weights, grading })
}

/// `∫ φ_i(x) x^m dx` for the piecewise-linear hat functions on `nodes`.
fn hat_moments(nodes: &[f64], m: usize) -> Vec<f64> {
    let mom = |a: f64, b: f64, k: usize| (b.powi(k as i32 + 1) - a.powi(k as i32 + 1)) / (k as f64 + 1.0);
    let mut w = vec![0.0; nodes.len()];
    for e in 0..nodes.len() - 1 {
        let (a, b) = (nodes[e], nodes[e + 1]);
        let h = b - a;
        let m0 = mom(a, b, m);
        let m1 = mom(a, b, m + 1);
        w[e] += (b * m0 - m1) / h;
        w[e + 1] += (m1 - a * m0) / h;
    }
    w
}

/// Smallest integer `R` for which the `L^{2n/(n-2σ)}` mass of the envelope
/// profile outside `B_R` is below `1e-4` of the total.
pub fn default_r_max(n: usize, sigma: f64) -> f64 {
    let p = crate::critical_exponent(n, sigma);
    let m = (n as f64 + 2.0 * sigma - 2.0) / 2.0;
    let e = n as f64 - 1.0 + p * (2.0 * sigma - 1.0);
    // ρ = tan θ maps [0, ∞) to [0, π/2).
    let radial = |a: f64, b: f64| -> f64 {
        crate::quad::legendre_on(64, a.atan(), b.atan())
            .map(|(th, w)| {
                let rho = th.tan();
                w * rho.powf(e) * (1.0 + rho * rho).powf(-p * m) * (1.0 + rho * rho)
            })
            .sum()
    };
    let total = radial(0.0, 1.0) + radial(1.0, f64::INFINITY);
    let mut r = 1.0;
    while radial(r, f64::INFINITY) > 1e-4 * total {
        r += 1.0;
    }
    r
}

/// Continuation of a field beyond `R_max`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub enum TailModel {
    /// Only the box `[0, R_max]²` is represented; pair integrals stop there.
    #[default]
    Truncated,
    /// The field vanishes outside the box.
    Zero,
    /// `ṽ ≈ a(θ) ρ^{-decay}` with `θ = atan2(z, r)`, `a` tabulated on `angles`.
    PowerLaw { decay: f64, angles: Vec<f64>, amplitudes: Vec<f64> },
}

impl TailModel {
    /// Regular factor of the continuation at `(r, z)`.
    pub fn regular(&self, r: f64, z: f64) -> f64 {
        match self {
            TailModel::Truncated | TailModel::Zero => 0.0,
            TailModel::PowerLaw { decay, angles, amplitudes } => {
                let rho = r.hypot(z);
                if rho == 0.0 {
                    return 0.0;
                }
                let th = z.atan2(r);
                interp1(angles, amplitudes, th) * rho.powf(-decay)
            }
        }
    }

    pub fn extends(&self) -> bool {
        !matches!(self, TailModel::Truncated)
    }
}

fn interp1(x: &[f64], y: &[f64], t: f64) -> f64 {
    if x.len() == 1 || t <= x[0] {
        return y[0];
    }
    if t >= x[x.len() - 1] {
        return y[y.len() - 1];
    }
    let k = x.partition_point(|&v| v <= t) - 1;
    let f = (t - x[k]) / (x[k + 1] - x[k]);
    y[k] * (1.0 - f) + y[k + 1] * f
}

/// Discrete half-space function, `u(r, z) = z^{2σ-1} ṽ(r, z)` with `ṽ` bilinear.
#[derive(Clone, Debug, PartialEq)]
pub struct RadialField {
    pub grid: HalfSpaceGrid,
    /// `ṽ(r_i, z_j)`, r-major.
    pub regular_values: Vec<f64>,
    pub sigma: f64,
    pub nonnegative: bool,
    pub tail: TailModel,
    /// Estimated interpolation error from the last resampling (0 for synthesized fields).
    pub interp_error: f64,
}

impl RadialField {
    pub fn from_regular(grid: HalfSpaceGrid, sigma: f64, regular_values: Vec<f64>) -> Result<Self> {
        if regular_values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid of {} nodes",
                regular_values.len(),
                grid.len()
            )));
        }
        if regular_values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("field values must be finite".into()));
        }
        let nonnegative = regular_values.iter().all(|&v| v >= 0.0);
        Ok(Self { grid, regular_values, sigma, nonnegative, tail: TailModel::Truncated, interp_error: 0.0 })
    }

    /// Samples `ṽ = f(r, z)` at the nodes.
    pub fn from_regular_fn(grid: HalfSpaceGrid, sigma: f64, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let mut v = Vec::with_capacity(grid.len());
        for &r in &grid.r_nodes {
            for &z in &grid.z_nodes {
                v.push(f(r, z));
            }
        }
        Self::from_regular(grid, sigma, v)
    }

    pub fn with_tail(mut self, tail: TailModel) -> Self {
        self.tail = tail;
        self
    }

    pub fn n(&self) -> usize {
        self.grid.n
    }

    pub fn boundary_exponent(&self) -> f64 {
        2.0 * self.sigma - 1.0
    }

    pub fn value_at_node(&self, i: usize, j: usize) -> f64 {
        self.grid.z_nodes[j].powf(self.boundary_exponent()) * self.regular_values[self.grid.idx(i, j)]
    }

    /// Nodal values of `u`.
    pub fn u_values(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.grid.len());
        for i in 0..self.grid.nr() {
            for j in 0..self.grid.nz() {
                out.push(self.value_at_node(i, j));
            }
        }
        out
    }

    /// Bilinear `ṽ` inside the box, the tail model outside; the flag marks extrapolation.
    pub fn eval_regular_flagged(&self, r: f64, z: f64) -> (f64, bool) {
        let g = &self.grid;
        if r > g.r_max || z > g.r_max {
            return (self.tail.regular(r, z), true);
        }
        let (i, fr) = locate(&g.r_nodes, r);
        let (j, fz) = locate(&g.z_nodes, z);
        let v = |a: usize, b: usize| self.regular_values[g.idx(a, b)];
        let val = (1.0 - fr) * ((1.0 - fz) * v(i, j) + fz * v(i, j + 1))
            + fr * ((1.0 - fz) * v(i + 1, j) + fz * v(i + 1, j + 1));
        (val, false)
    }

    pub fn eval_regular(&self, r: f64, z: f64) -> f64 {
        self.eval_regular_flagged(r, z).0
    }

    pub fn scale(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.regular_values.iter_mut().for_each(|v| *v *= c);
        out.nonnegative = out.regular_values.iter().all(|&v| v >= 0.0);
        if let TailModel::PowerLaw { amplitudes, .. } = &mut out.tail {
            amplitudes.iter_mut().for_each(|a| *a *= c);
        }
        out
    }

    /// Replaces the values while keeping grid, tail and flags.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        let mut out = self.clone();
        out.nonnegative = values.iter().all(|&v| v >= 0.0);
        out.regular_values = values;
        out
    }
}

/// Cell index and local coordinate of `x` on `nodes` (clamped to the last cell).
#[inline]
pub(crate) fn locate(nodes: &[f64], x: f64) -> (usize, f64) {
    let last = nodes.len() - 2;
    let k = nodes.partition_point(|&v| v <= x).saturating_sub(1).min(last);
    let f = ((x - nodes[k]) / (nodes[k + 1] - nodes[k])).clamp(0.0, 1.0);
    (k, f)
}

/// `u(r, z)`; beyond `R_max` returns the tail model (0 unless a power-law tail is attached).
pub fn eval_u(field: &RadialField, r: f64, z: f64) -> f64 {
    eval_u_flagged(field, r, z).0
}

pub fn eval_u_flagged(field: &RadialField, r: f64, z: f64) -> (f64, bool) {
    if z <= 0.0 {
        return (0.0, r > field.grid.r_max);
    }
    let (v, flag) = field.eval_regular_flagged(r, z);
    (z.powf(field.boundary_exponent()) * v, flag)
}

/// Interpolates `ṽ` onto `new_grid`; the recorded error is the round-trip defect
/// relative to `max |ṽ|`.
pub fn resample(field: &RadialField, new_grid: &HalfSpaceGrid) -> Result<RadialField> {
    if field.grid.n != new_grid.n {
        return Err(Error::GridMismatch(format!("dimension {} vs {}", field.grid.n, new_grid.n)));
    }
    if field.grid == *new_grid {
        return Ok(field.clone());
    }
    let sample = |src: &RadialField, g: &HalfSpaceGrid| -> Vec<f64> {
        let mut v = Vec::with_capacity(g.len());
        for &r in &g.r_nodes {
            for &z in &g.z_nodes {
                v.push(src.eval_regular(r, z));
            }
        }
        v
    };
    let mut out = field.clone();
    out.grid = new_grid.clone();
    out.regular_values = sample(field, new_grid);
    let back = sample(&out, &field.grid);
    let scale = field.regular_values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let err = back.iter().zip(&field.regular_values).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale;
    out.interp_error = field.interp_error + err;
    if field.nonnegative {
        out.regular_values.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    out.nonnegative = field.nonnegative;
    Ok(out)
}

/// Fits `ṽ ≈ a(θ) ρ^{-(n+2σ-2)}` on nodes with `0.8 R_max ≤ ρ ≤ R_max`.
pub fn fit_power_tail(field: &RadialField) -> TailModel {
    let g = &field.grid;
    let decay = g.n as f64 + 2.0 * field.sigma - 2.0;
    let bins = 8usize;
    let half_pi = std::f64::consts::FRAC_PI_2;
    let mut num = vec![0.0; bins];
    let mut den = vec![0.0; bins];
    for (i, &r) in g.r_nodes.iter().enumerate() {
        for (j, &z) in g.z_nodes.iter().enumerate() {
            let rho = r.hypot(z);
            if rho < 0.8 * g.r_max || rho > g.r_max {
                continue;
            }
            let th = z.atan2(r);
            let b = ((th / half_pi) * bins as f64).floor().min(bins as f64 - 1.0) as usize;
            let basis = rho.powf(-decay);
            num[b] += field.regular_values[g.idx(i, j)] * basis;
            den[b] += basis * basis;
        }
    }
    let mut angles = Vec::new();
    let mut amplitudes = Vec::new();
    for b in 0..bins {
        if den[b] > 0.0 {
            angles.push((b as f64 + 0.5) / bins as f64 * half_pi);
            amplitudes.push(num[b] / den[b]);
        }
    }
    if angles.is_empty() {
        return TailModel::Zero;
    }
    TailModel::PowerLaw { decay, angles, amplitudes }
}

/// Closed-form test profiles on the half-space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Profile {
    /// `u = z^{2σ-1} (1+r²+z²)^{-(n+2σ-2)/2}`.
    Envelope { n: usize, sigma: f64 },
    /// `u = z^{2σ-1} (1-ρ²)_+³`.
    CompactBump { sigma: f64 },
    /// `u = c z^{2σ-1} exp(-1/(1-ρ²))` on `ρ < 1`, scaled so that its maximum is 1
    /// at the interior point `(0, z_star)`.
    GaussianBump { sigma: f64, z_star: f64, scale: f64 },
}

impl Profile {
    pub fn new(kind: &str, n: usize, sigma: f64) -> Result<Self> {
        match kind {
            "envelope" => Ok(Profile::Envelope { n, sigma }),
            "compact-bump" => Ok(Profile::CompactBump { sigma }),
            "gaussian-bump" => {
                let a = 2.0 * sigma - 1.0;
                // Stationarity of a ln z - 1/(1-z²): a (1-z²)² = 2 z².
                let f = |z: f64| a * (1.0 - z * z).powi(2) - 2.0 * z * z;
                let (mut lo, mut hi) = (0.0f64, 1.0f64);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if f(mid) > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let z_star = 0.5 * (lo + hi);
                let peak = z_star.powf(a) * (-1.0 / (1.0 - z_star * z_star)).exp();
                Ok(Profile::GaussianBump { sigma, z_star, scale: 1.0 / peak })
            }
            other => Err(Error::UnknownKind(other.to_string())),
        }
    }

    pub fn sigma(&self) -> f64 {
        match *self {
            Profile::Envelope { sigma, .. } | Profile::CompactBump { sigma } | Profile::GaussianBump { sigma, .. } => sigma,
        }
    }

    /// Regular factor `ṽ = z^{1-2σ} u`.
    pub fn regular(&self, r: f64, z: f64) -> f64 {
        let rho2 = r * r + z * z;
        match *self {
            Profile::Envelope { n, sigma } => (1.0 + rho2).powf(-(n as f64 + 2.0 * sigma - 2.0) / 2.0),
            Profile::CompactBump { .. } => {
                if rho2 >= 1.0 {
                    0.0
                } else {
                    (1.0 - rho2).powi(3)
                }
            }
            Profile::GaussianBump { scale, .. } => {
                if rho2 >= 1.0 {
                    0.0
                } else {
                    scale * (-1.0 / (1.0 - rho2)).exp()
                }
            }
        }
    }

    pub fn u(&self, r: f64, z: f64) -> f64 {
        if z <= 0.0 {
            return 0.0;
        }
        z.powf(2.0 * self.sigma() - 1.0) * self.regular(r, z)
    }

    /// Radius of the support ball, if compact.
    pub fn support_radius(&self) -> Option<f64> {
        match self {
            Profile::Envelope { .. } => None,
            _ => Some(1.0),
        }
    }
}

/// Samples a test profile on `grid`. Compact profiles are zero-extended; the
/// envelope gets a fitted power-law tail.
pub fn synthesize_profile(kind: &str, grid: &HalfSpaceGrid, sigma: f64) -> Result<RadialField> {
    let prof = Profile::new(kind, grid.n, sigma)?;
    let f = RadialField::from_regular_fn(grid.clone(), sigma, |r, z| prof.regular(r, z))?;
    let tail = match prof {
        Profile::Envelope { .. } => fit_power_tail(&f),
        _ => TailModel::Zero,
    };
    Ok(f.with_tail(tail))
}

pub(crate) const CRC64: crc::Crc<u64> = crc::Crc::<u64>::new(&crc::CRC_64_ECMA_182);
pub const MAGIC: &[u8; 4] = b"RSOB";
pub const FORMAT_VERSION: u32 = 1;

/// Serializes a header and payload into the container layout:
/// magic, version, length-prefixed JSON header, length-prefixed f64 array, CRC64.
pub fn encode_container(header: &serde_json::Value, data: &[f64]) -> Result<Vec<u8>> {
    let head = serde_json::to_vec(header)?;
    let mut buf = Vec::with_capacity(28 + head.len() + 8 * data.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(head.len() as u64).to_le_bytes());
    buf.extend_from_slice(&head);
    buf.extend_from_slice(&(data.len() as u64).to_le_bytes());
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let crc = CRC64.checksum(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

pub fn decode_container(bytes: &[u8]) -> Result<(serde_json::Value, Vec<f64>)> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::CorruptHeader("missing RSOB magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch { found: version, expected: FORMAT_VERSION });
    }
    if bytes.len() < 16 + 8 + 8 {
        return Err(Error::ChecksumFailure("file truncated".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
    if CRC64.checksum(body) != stored {
        return Err(Error::ChecksumFailure("CRC64 mismatch".into()));
    }
    let read_u64 = |at: usize| -> Result<u64> {
        body.get(at..at + 8)
            .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
            .ok_or_else(|| Error::CorruptHeader("length field out of range".into()))
    };
    let hlen = read_u64(8)? as usize;
    let head = body
        .get(16..16 + hlen)
        .ok_or_else(|| Error::CorruptHeader("header length out of range".into()))?;
    let header: serde_json::Value =
        serde_json::from_slice(head).map_err(|e| Error::CorruptHeader(format!("header JSON: {e}")))?;
    let dlen = read_u64(16 + hlen)? as usize;
    let start = 24 + hlen;
    if body.len() != start + 8 * dlen {
        return Err(Error::CorruptHeader("payload length mismatch".into()));
    }
    let data = body[start..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((header, data))
}

fn field_header(field: &RadialField) -> serde_json::Value {
    let (n_r, n_z) = field.grid.intervals();
    json!({
        "kind": "field",
        "n": field.grid.n,
        "sigma": field.sigma,
        "N_r": n_r,
        "N_z": n_z,
        "R_max": field.grid.r_max,
        "grading": [field.grid.grading.beta_r, field.grid.grading.beta_z],
        "flags": {
            "nonnegative": field.nonnegative,
            "tail": field.tail,
            "interp_error": field.interp_error,
        },
    })
}

pub fn field_to_bytes(field: &RadialField) -> Result<Vec<u8>> {
    encode_container(&field_header(field), &field.regular_values)
}

pub fn field_from_bytes(bytes: &[u8]) -> Result<RadialField> {
    let (h, data) = decode_container(bytes)?;
    let bad = |what: &str| Error::CorruptHeader(format!("missing or invalid `{what}`"));
    if h.get("kind").and_then(|k| k.as_str()) != Some("field") {
        return Err(bad("kind"));
    }
    let n = h["n"].as_u64().ok_or_else(|| bad("n"))? as usize;
    let sigma = h["sigma"].as_f64().ok_or_else(|| bad("sigma"))?;
    let n_r = h["N_r"].as_u64().ok_or_else(|| bad("N_r"))? as usize;
    let n_z = h["N_z"].as_u64().ok_or_else(|| bad("N_z"))? as usize;
    let r_max = h["R_max"].as_f64().ok_or_else(|| bad("R_max"))?;
    let gr = h["grading"].as_array().filter(|a| a.len() == 2).ok_or_else(|| bad("grading"))?;
    let grading = Grading {
        beta_r: gr[0].as_f64().ok_or_else(|| bad("grading"))?,
        beta_z: gr[1].as_f64().ok_or_else(|| bad("grading"))?,
    };
    let flags = &h["flags"];
    let grid = make_grid(n, r_max, n_r, n_z, grading).map_err(|e| Error::CorruptHeader(e.to_string()))?;
    if data.len() != grid.len() {
        return Err(Error::CorruptHeader(format!("{} values for {} nodes", data.len(), grid.len())));
    }
    let tail: TailModel = serde_json::from_value(flags["tail"].clone()).map_err(|_| bad("flags.tail"))?;
    Ok(RadialField {
        grid,
        regular_values: data,
        sigma,
        nonnegative: flags["nonnegative"].as_bool().ok_or_else(|| bad("flags.nonnegative"))?,
        tail,
        interp_error: flags["interp_error"].as_f64().unwrap_or(0.0),
    })
}

pub fn save_field(field: &RadialField, path: impl AsRef<Path>) -> Result<()> {
    let bytes = field_to_bytes(field)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_field(path: impl AsRef<Path>) -> Result<RadialField> {
    field_from_bytes(&std::fs::read(path)?)
}

/// Kernel tables share the container; masked entries are stored as `+∞`.
pub fn kernel_table_to_bytes(t: &crate::kernel::KernelTable) -> Result<Vec<u8>> {
    let header = json!({
        "kind": "kernel-table",
        "params": t.params,
        "r_nodes": t.r_nodes,
        "s_nodes": t.s_nodes,
        "t_nodes": t.t_nodes,
    });
    encode_container(&header, &t.values)
}

pub fn kernel_table_from_bytes(bytes: &[u8]) -> Result<crate::kernel::KernelTable> {
    let (h, values) = decode_container(bytes)?;
    if h.get("kind").and_then(|k| k.as_str()) != Some("kernel-table") {
        return Err(Error::CorruptHeader("not a kernel table".into()));
    }
    let get = |k: &str| -> Result<Vec<f64>> {
        serde_json::from_value(h[k].clone()).map_err(|_| Error::CorruptHeader(format!("missing `{k}`")))
    };
    let params = serde_json::from_value(h["params"].clone()).map_err(|_| Error::CorruptHeader("params".into()))?;
    let (r_nodes, s_nodes, t_nodes) = (get("r_nodes")?, get("s_nodes")?, get("t_nodes")?);
    if values.len() != r_nodes.len() * s_nodes.len() * t_nodes.len() {
        return Err(Error::CorruptHeader("table size mismatch".into()));
    }
    let near_diag_mask = values.iter().map(|v| v.is_infinite()).collect();
    Ok(crate::kernel::KernelTable { params, r_nodes, s_nodes, t_nodes, values, near_diag_mask })
}

/// `|S^{n-2}|`, the angular factor of the reduced measure.
pub fn angular_factor(n: usize) -> f64 {
    sphere_area(n - 2)
}
