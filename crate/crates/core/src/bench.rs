//! Forward-pass timing of activation kinds across input sizes.
//!
//! Each measurement runs a warm-up, then nine timed batches of `iters / 9`
//! calls over a pre-generated input vector, and reports the median batch.
//! Parameters are one shared tuple (the layer-wise path), so no per-element
//! parameter lookup is timed.

use std::hint::black_box;
use std::path::Path;
use std::time::{Duration, Instant};

use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::activations::{activation_forward_slice, ActivationKind};
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

pub const DEFAULT_SIZES: [usize; 4] = [100, 1_000, 10_000, 100_000];
pub const DEFAULT_ITERS: usize = 100_000;
pub const DEFAULT_KINDS: [ActivationKind; 4] = [
    ActivationKind::Relu,
    ActivationKind::Prelu,
    ActivationKind::DoubleRelu,
    ActivationKind::Pilu,
];

const BATCHES: usize = 9;
/// Batches shorter than this are too close to the timer resolution.
const MIN_BATCH: Duration = Duration::from_micros(200);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchResult {
    pub kind: ActivationKind,
    pub size: usize,
    /// Calls actually timed; larger than requested when `resolution_flag` is set.
    pub iters: usize,
    /// Wall time of all timed batches.
    pub total_time: Duration,
    /// Median batch time divided by calls per batch.
    pub per_call: Duration,
    pub rel_to_relu: f64,
    /// Iterations were increased because batches were too short to time.
    pub resolution_flag: bool,
}

impl BenchResult {
    pub fn per_call_ns(&self) -> f64 {
        self.per_call.as_secs_f64() * 1e9
    }
}

fn time_kind(kind: ActivationKind, x: &[f64], iters: usize) -> (usize, Duration, Duration, bool) {
    let params = kind.default_init();
    let mut y = vec![0.0; x.len()];
    for _ in 0..(iters / 100).clamp(10, 1_000) {
        activation_forward_slice(kind, params, black_box(x), &mut y);
        black_box(&mut y);
    }
    let mut per_batch = iters.div_ceil(BATCHES).max(1);
    let mut flagged = false;
    loop {
        let mut times = Vec::with_capacity(BATCHES);
        for _ in 0..BATCHES {
            let t = Instant::now();
            for _ in 0..per_batch {
                activation_forward_slice(kind, params, black_box(x), &mut y);
                black_box(&mut y);
            }
            times.push(t.elapsed());
        }
        times.sort_unstable();
        let median = times[BATCHES / 2];
        if median < MIN_BATCH && per_batch < usize::MAX / 2 {
            per_batch *= 2;
            flagged = true;
            continue;
        }
        let total: Duration = times.iter().sum();
        return (per_batch * BATCHES, total, median / per_batch as u32, flagged);
    }
}

/// Times every kind at every size on a seeded standard-normal input.
/// `rel_to_relu` is filled in when ReLU is among `kinds`, and is exactly 1
/// for ReLU itself; otherwise it is NaN.
pub fn bench_activation(
    kinds: &[ActivationKind],
    sizes: &[usize],
    iters: usize,
    seed: u64,
) -> Result<Vec<BenchResult>> {
    if sizes.is_empty() || sizes.contains(&0) || iters == 0 {
        return Err(Error::InvalidArgument("sizes and iters must be positive".into()));
    }
    let mut rng = stream(seed, Stream::Bench);
    let normal = Normal::new(0.0, 1.0).expect("valid");
    let mut out = Vec::new();
    for &size in sizes {
        let x: Vec<f64> = (0..size).map(|_| normal.sample(&mut rng)).collect();
        let start = out.len();
        for &kind in kinds {
            let (iters, total_time, per_call, resolution_flag) = time_kind(kind, &x, iters);
            out.push(BenchResult {
                kind,
                size,
                iters,
                total_time,
                per_call,
                rel_to_relu: f64::NAN,
                resolution_flag,
            });
        }
        let relu = out[start..]
            .iter()
            .find(|r| r.kind == ActivationKind::Relu)
            .map(|r| r.per_call);
        if let Some(relu) = relu {
            for r in &mut out[start..] {
                r.rel_to_relu = if r.kind == ActivationKind::Relu {
                    1.0
                } else {
                    r.per_call.as_secs_f64() / relu.as_secs_f64()
                };
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least-squares line through `(x, y)` points. A perfect fit, including a
/// constant series, has `r_squared == 1`.
pub fn linear_fit(points: &[(f64, f64)]) -> Result<LinearFit> {
    if points.len() < 3 {
        return Err(Error::InvalidArgument(
            "linear fit needs at least 3 points".into(),
        ));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument(
            "linear fit needs distinct x values".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = points
        .iter()
        .map(|p| (p.1 - (slope * p.0 + intercept)).powi(2))
        .sum();
    let ss_tot: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Fit of per-call nanoseconds against size for one kind.
pub fn fit_kind(results: &[BenchResult], kind: ActivationKind) -> Result<LinearFit> {
    let pts: Vec<(f64, f64)> = results
        .iter()
        .filter(|r| r.kind == kind)
        .map(|r| (r.size as f64, r.per_call_ns()))
        .collect();
    linear_fit(&pts)
}

#[derive(Serialize)]
struct CsvRow {
    kind: &'static str,
    size: usize,
    iters: usize,
    per_call_ns: f64,
    rel_to_relu: f64,
    scheme: &'static str,
    resolution_flag: bool,
}

/// Writes `kind, size, iters, per_call_ns, rel_to_relu` plus the parameter
/// path (`scheme`, always `layer`) and the resolution flag.
pub fn write_csv(results: &[BenchResult], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in results {
        w.serialize(CsvRow {
            kind: r.kind.name(),
            size: r.size,
            iters: r.iters,
            per_call_ns: r.per_call_ns(),
            rel_to_relu: r.rel_to_relu,
            scheme: "layer",
            resolution_flag: r.resolution_flag,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
