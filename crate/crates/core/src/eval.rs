//! Grid mixture-of-Gaussians data and 2-D sample-quality metrics.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::LabRng;
use crate::tensor::Tensor;

/// `grid_k × grid_k` isotropic Gaussians on a centered square grid, equally
/// weighted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MogSpec {
    pub grid_k: usize,
    pub spacing: f64,
    pub sigma: f64,
}

impl Default for MogSpec {
    fn default() -> Self {
        Self {
            grid_k: 5,
            spacing: 2.0,
            sigma: 0.1,
        }
    }
}

impl MogSpec {
    pub fn validate(&self) -> Result<()> {
        if self.grid_k == 0 {
            return Err(Error::InvalidArgument("grid_k must be >= 1".into()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(Error::InvalidArgument(format!("spacing must be > 0, got {}", self.spacing)));
        }
        Ok(())
    }

    pub fn num_modes(&self) -> usize {
        self.grid_k * self.grid_k
    }

    /// Row-major in `x`, each coordinate running over
    /// `spacing · (i - (k - 1) / 2)`.
    pub fn centers(&self) -> Vec<[f64; 2]> {
        let half = (self.grid_k as f64 - 1.0) / 2.0;
        let coord = |i: usize| self.spacing * (i as f64 - half);
        let mut out = Vec::with_capacity(self.num_modes());
        for i in 0..self.grid_k {
            for j in 0..self.grid_k {
                out.push([coord(i), coord(j)]);
            }
        }
        out
    }
}

/// Per sample: mode index, then the two Gaussian coordinates.
pub fn mog_sample(spec: &MogSpec, n: usize, rng: &mut LabRng) -> Result<Tensor> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be >= 1".into()));
    }
    let centers = spec.centers();
    let mut data = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let c = centers[rng.below(centers.len())];
        data.push(c[0] + spec.sigma * rng.normal());
        data.push(c[1] + spec.sigma * rng.normal());
    }
    Tensor::matrix(n, 2, data)
}

fn check_points(x: &Tensor, min_rows: usize, what: &str) -> Result<()> {
    if x.shape().len() != 2 || x.cols() != 2 {
        return Err(Error::InvalidArgument(format!("{what}: expected [n, 2] samples, got {:?}", x.shape())));
    }
    if x.rows() < min_rows {
        return Err(Error::InvalidArgument(format!(
            "{what}: need at least {min_rows} samples, got {}",
            x.rows()
        )));
    }
    if !x.is_finite() {
        return Err(Error::InvalidArgument(format!("{what}: samples contain non-finite values")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub modes_covered: usize,
    pub hq_fraction: f64,
    /// Samples assigned to each mode.
    pub counts: Vec<usize>,
}

/// Assigns each sample to its nearest center. A mode is covered when at least
/// `⌈min_count_frac · n⌉` of its samples lie within `r_hq`.
pub fn mode_coverage(samples: &Tensor, spec: &MogSpec, r_hq: f64, min_count_frac: f64) -> Result<Coverage> {
    spec.validate()?;
    check_points(samples, 1, "mode_coverage")?;
    let centers = spec.centers();
    let n = samples.rows();
    let need = ((min_count_frac * n as f64).ceil() as usize).max(1);
    let mut counts = vec![0usize; centers.len()];
    let mut close = vec![0usize; centers.len()];
    let mut hq = 0usize;
    for i in 0..n {
        let p = samples.row(i);
        let (best, d2) = centers
            .iter()
            .map(|c| (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2))
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (k, d)| if d < acc.1 { (k, d) } else { acc });
        counts[best] += 1;
        if d2 <= r_hq * r_hq {
            close[best] += 1;
            hq += 1;
        }
    }
    Ok(Coverage {
        modes_covered: close.iter().filter(|&&c| c >= need).count(),
        hq_fraction: hq as f64 / n as f64,
        counts,
    })
}

/// Mean and unbiased covariance `[[a, b], [b, c]]` of 2-D points.
pub fn fit_gaussian_2d(x: &Tensor) -> Result<([f64; 2], [f64; 3])> {
    check_points(x, 2, "fit_gaussian_2d")?;
    let n = x.rows() as f64;
    let mut mean = [0.0; 2];
    for i in 0..x.rows() {
        mean[0] += x.get(i, 0);
        mean[1] += x.get(i, 1);
    }
    mean[0] /= n;
    mean[1] /= n;
    let mut cov = [0.0; 3];
    for i in 0..x.rows() {
        let dx = x.get(i, 0) - mean[0];
        let dy = x.get(i, 1) - mean[1];
        cov[0] += dx * dx;
        cov[1] += dx * dy;
        cov[2] += dy * dy;
    }
    for v in &mut cov {
        *v /= n - 1.0;
    }
    Ok((mean, cov))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frechet {
    pub distance: f64,
    /// `det(Σ1 Σ2)` was negative from rounding and was clipped to zero.
    pub det_clipped: bool,
}

fn check_psd(cov: &[f64; 3]) -> Result<()> {
    let trace = cov[0] + cov[2];
    let det = cov[0] * cov[2] - cov[1] * cov[1];
    let scale = trace.abs().max(f64::MIN_POSITIVE);
    if cov[0] < 0.0 || cov[2] < 0.0 || det < -1e-12 * scale * scale {
        return Err(Error::NotPsd { det, trace });
    }
    Ok(())
}

/// Squared Fréchet distance between Gaussians fitted to each set.
pub fn frechet_gaussian_2d(real: &Tensor, gen: &Tensor) -> Result<Frechet> {
    let (m1, s1) = fit_gaussian_2d(real)?;
    let (m2, s2) = fit_gaussian_2d(gen)?;
    check_psd(&s1)?;
    check_psd(&s2)?;
    frechet_from_moments(m1, s1, m2, s2)
}

pub fn frechet_from_moments(m1: [f64; 2], s1: [f64; 3], m2: [f64; 2], s2: [f64; 3]) -> Result<Frechet> {
    let [a1, b1, c1] = s1;
    let [a2, b2, c2] = s2;
    // Σ1 Σ2 for symmetric 2×2 inputs.
    let p00 = a1 * a2 + b1 * b2;
    let p01 = a1 * b2 + b1 * c2;
    let p10 = b1 * a2 + c1 * b2;
    let p11 = b1 * b2 + c1 * c2;
    let tr = p00 + p11;
    let mut det = p00 * p11 - p01 * p10;
    let det_clipped = det < 0.0;
    if det_clipped {
        det = 0.0;
    }
    let inner = tr + 2.0 * det.sqrt();
    if inner < 0.0 {
        return Err(Error::NotPsd { det, trace: tr });
    }
    let tr_sqrt = inner.sqrt();
    let dm = (m1[0] - m2[0]).powi(2) + (m1[1] - m2[1]).powi(2);
    let d = dm + a1 + c1 + a2 + c2 - 2.0 * tr_sqrt;
    Ok(Frechet {
        distance: d.max(0.0),
        det_clipped,
    })
}

pub const SLICED_DIRECTIONS: usize = 128;

/// Root of the mean squared 1-D Wasserstein-2 distance over directions
/// `θ_k = πk/K`. The larger set is truncated to the first rows of the smaller
/// set's size.
pub fn sliced_w2(real: &Tensor, gen: &Tensor, directions: usize) -> Result<f64> {
    check_points(real, 1, "sliced_w2")?;
    check_points(gen, 1, "sliced_w2")?;
    if directions == 0 {
        return Err(Error::InvalidArgument("need at least one direction".into()));
    }
    let n = real.rows().min(gen.rows());
    let mut total = 0.0;
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    for k in 0..directions {
        let theta = std::f64::consts::PI * k as f64 / directions as f64;
        let (c, s) = (theta.cos(), theta.sin());
        for i in 0..n {
            a[i] = c * real.get(i, 0) + s * real.get(i, 1);
            b[i] = c * gen.get(i, 0) + s * gen.get(i, 1);
        }
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        total += a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n as f64;
    }
    Ok((total / directions as f64).sqrt())
}

/// Mean metrics between independent `n`-sample draws of the mixture, over
/// `trials` pairs; trial `i` draws from stream `i` of `seed`.
pub fn real_vs_real_floor(spec: &MogSpec, n: usize, trials: usize, seed: u64) -> Result<NoiseFloor> {
    if trials == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    let mut floor = NoiseFloor {
        frechet: 0.0,
        sliced_w2: 0.0,
    };
    for i in 0..trials {
        let mut rng = LabRng::derived(seed, i as u64);
        let a = mog_sample(spec, n, &mut rng)?;
        let b = mog_sample(spec, n, &mut rng)?;
        floor.frechet += frechet_gaussian_2d(&a, &b)?.distance / trials as f64;
        floor.sliced_w2 += sliced_w2(&a, &b, SLICED_DIRECTIONS)? / trials as f64;
    }
    Ok(floor)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseFloor {
    pub frechet: f64,
    pub sliced_w2: f64,
}

/// [`real_vs_real_floor`] for the default mixture at `n = 10⁴`, 20 trials,
/// seed 0. Pinned so training targets do not drift with the metric code.
pub const PINNED_NOISE_FLOOR: NoiseFloor = NoiseFloor {
    frechet: 0.0048280613868982416,
    sliced_w2: 0.11021979347316645,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub modes_covered: usize,
    pub hq_fraction: f64,
    pub frechet: f64,
    pub sliced_w2: f64,
    pub n_samples: usize,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub det_clipped: bool,
}

/// Metrics of `samples` against a fresh reference draw of the same size.
pub fn evaluate(samples: &Tensor, spec: &MogSpec, rng: &mut LabRng) -> Result<MetricsReport> {
    check_points(samples, 2, "evaluate")?;
    let reference = mog_sample(spec, samples.rows(), rng)?;
    evaluate_against(samples, &reference, spec)
}

pub fn evaluate_against(samples: &Tensor, reference: &Tensor, spec: &MogSpec) -> Result<MetricsReport> {
    let cov = mode_coverage(samples, spec, 3.0 * spec.sigma, 0.001)?;
    let f = frechet_gaussian_2d(reference, samples)?;
    Ok(MetricsReport {
        modes_covered: cov.modes_covered,
        hq_fraction: cov.hq_fraction,
        frechet: f.distance,
        sliced_w2: sliced_w2(reference, samples, SLICED_DIRECTIONS)?,
        n_samples: samples.rows(),
        det_clipped: f.det_clipped,
    })
}

/// Writes `x,y` rows with shortest round-trip formatting, via a temporary
/// file renamed into place.
pub fn write_samples_csv(path: &Path, samples: &Tensor) -> Result<()> {
    check_points(samples, 0, "write_samples_csv")?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["x", "y"]).map_err(|e| Error::Parse(e.to_string()))?;
    for i in 0..samples.rows() {
        let r = samples.row(i);
        w.write_record([r[0].to_string(), r[1].to_string()])
            .map_err(|e| Error::Parse(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    write_atomic(path, &bytes)
}

pub fn read_samples_csv(path: &Path) -> Result<Tensor> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse(format!("{}: {other:?}", path.display())),
    })?;
    let headers = r.headers().map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    if headers.iter().map(str::trim).collect::<Vec<_>>() != ["x", "y"] {
        return Err(Error::Parse(format!("{}: expected header `x,y`", path.display())));
    }
    let mut data = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        if rec.len() != 2 {
            return Err(Error::Parse(format!("{}: row {} has {} fields", path.display(), line + 2, rec.len())));
        }
        for field in rec.iter() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("{}: row {}: bad number `{field}`", path.display(), line + 2)))?;
            data.push(v);
        }
    }
    let n = data.len() / 2;
    Tensor::matrix(n, 2, data)
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
