//! Stereo matching as a grid labeling problem: each pixel of the left
//! image picks a disparity, unary costs measure intensity agreement with
//! the right image sample shifted by that disparity, and truncated-linear
//! smoothness costs tie 4-connected neighbors together. The problem is
//! solved with the simple-form iteration over the horizontal/vertical grid
//! decomposition, using directional sweeps that share messages across all
//! agents of a row or column.

mod pgm;
mod sweep;
mod synthetic;

pub use pgm::{
    disparity_to_image, encode_pgm, load_disparity, load_pgm, parse_pgm, save_disparity, save_pgm,
};
pub use sweep::{sweep_iterate, sweep_solver};
pub use synthetic::{shifted_stripes, SyntheticPair};

use crate::model::{ModelError, Problem};
use crate::solver::RunTrace;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StereoError {
    #[error("malformed PGM header: {detail}")]
    MalformedHeader { detail: String },
    #[error("file ends before the raster does")]
    TruncatedData,
    #[error("image sizes differ: {left_width}x{left_height} vs {right_width}x{right_height}")]
    SizeMismatch {
        left_width: usize,
        left_height: usize,
        right_width: usize,
        right_height: usize,
    },
    #[error("maximum disparity {d_max} needs 1 ..= width-1 = {max_allowed}")]
    DisparityTooLarge { d_max: usize, max_allowed: usize },
    #[error("not a grid: {detail}")]
    NotAGrid { detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Row-major grayscale image with samples in `0..=maxval`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub data: Vec<u16>,
}

impl GrayImage {
    pub fn at(&self, row: usize, col: usize) -> u16 {
        self.data[row * self.width + col]
    }
}

/// How the unary matching cost grows with the intensity difference before
/// truncation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchCost {
    Absolute,
    Squared,
}

/// Cost-function constants and iteration controls. The cost constants are
/// conventional defaults, not values fixed by the method itself.
#[derive(Debug, Clone)]
pub struct StereoConfig {
    /// Disparities range over `0..=d_max`.
    pub d_max: usize,
    pub match_cost: MatchCost,
    /// Truncation of the unary matching cost; also charged when the
    /// shifted sample falls outside the right image.
    pub tau_match: f64,
    /// Weight of the truncated-linear smoothness term.
    pub smooth_weight: f64,
    /// Truncation of the label difference in the smoothness term.
    pub tau_smooth: f64,
    pub alpha: f64,
    pub max_iter: usize,
    pub threads: usize,
}

impl Default for StereoConfig {
    fn default() -> Self {
        StereoConfig {
            d_max: 4,
            match_cost: MatchCost::Absolute,
            tau_match: 20.0,
            smooth_weight: 20.0,
            tau_smooth: 2.0,
            alpha: 0.16,
            max_iter: 16,
            threads: 1,
        }
    }
}

/// Per-pixel disparity labels with the multiplier used for image export.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DisparityMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u16>,
    pub scale: u16,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisparityMetrics {
    /// Share of pixels whose label differs from the truth by strictly more
    /// than the threshold.
    pub bad_fraction: f64,
    /// Root-mean-square label difference.
    pub rms: f64,
}

/// Builds the grid labeling problem for a rectified pair: pixel `(r, c)`
/// with disparity `d` is matched against the right image at `(r, c - d)`,
/// at cost `min(tau_match, |L - R|)` (or the squared difference), with
/// out-of-frame samples charged `tau_match`; 4-connected neighbors pay
/// `smooth_weight * min(tau_smooth, |d_i - d_j|)`.
pub fn build_stereo_problem(
    left: &GrayImage,
    right: &GrayImage,
    cfg: &StereoConfig,
) -> Result<Problem, StereoError> {
    if left.width != right.width || left.height != right.height {
        return Err(StereoError::SizeMismatch {
            left_width: left.width,
            left_height: left.height,
            right_width: right.width,
            right_height: right.height,
        });
    }
    let (w, h) = (left.width, left.height);
    if cfg.d_max == 0 || cfg.d_max >= w {
        return Err(StereoError::DisparityTooLarge {
            d_max: cfg.d_max,
            max_allowed: w.saturating_sub(1),
        });
    }
    let labels = cfg.d_max + 1;
    let mut unaries = Vec::with_capacity(w * h);
    for r in 0..h {
        for c in 0..w {
            let l = f64::from(left.at(r, c));
            let table: Vec<f64> = (0..labels)
                .map(|d| {
                    if d > c {
                        cfg.tau_match
                    } else {
                        let diff = (l - f64::from(right.at(r, c - d))).abs();
                        let raw = match cfg.match_cost {
                            MatchCost::Absolute => diff,
                            MatchCost::Squared => diff * diff,
                        };
                        raw.min(cfg.tau_match)
                    }
                })
                .collect();
            unaries.push(table);
        }
    }
    let mut smooth = Vec::with_capacity(labels * labels);
    for di in 0..labels {
        for dj in 0..labels {
            let gap = (di as f64 - dj as f64).abs();
            smooth.push(cfg.smooth_weight * gap.min(cfg.tau_smooth));
        }
    }
    let mut edges = Vec::with_capacity(2 * w * h);
    for r in 0..h {
        for c in 0..w {
            let v = r * w + c;
            if c + 1 < w {
                edges.push((v, v + 1, smooth.clone()));
            }
            if r + 1 < h {
                edges.push((v, v + w, smooth.clone()));
            }
        }
    }
    Ok(Problem::new(vec![labels; w * h], unaries, edges)?)
}

/// Compares a disparity map against ground truth over all pixels.
pub fn evaluate_disparity(
    result: &DisparityMap,
    truth: &DisparityMap,
    threshold: f64,
) -> Result<DisparityMetrics, StereoError> {
    if result.width != truth.width || result.height != truth.height {
        return Err(StereoError::SizeMismatch {
            left_width: result.width,
            left_height: result.height,
            right_width: truth.width,
            right_height: truth.height,
        });
    }
    let n = result.labels.len() as f64;
    let mut bad = 0usize;
    let mut sq = 0.0;
    for (&a, &b) in result.labels.iter().zip(truth.labels.iter()) {
        let diff = (f64::from(a) - f64::from(b)).abs();
        if diff > threshold {
            bad += 1;
        }
        sq += diff * diff;
    }
    Ok(DisparityMetrics {
        bad_fraction: bad as f64 / n,
        rms: (sq / n).sqrt(),
    })
}

/// The full pipeline's result: the per-iteration trace, the best-energy
/// disparity map, its energy, and the wall-clock time of the solve.
#[derive(Debug)]
pub struct StereoOutcome {
    pub trace: RunTrace,
    pub disparity: DisparityMap,
    pub energy: f64,
    pub seconds: f64,
}

/// Loads a rectified pair, builds the problem, runs the sweep solver, and
/// optionally writes the disparity image scaled by `export_scale`.
pub fn run_stereo(
    left_path: &Path,
    right_path: &Path,
    cfg: &StereoConfig,
    out_path: Option<&Path>,
    export_scale: u16,
) -> Result<StereoOutcome, StereoError> {
    let left = load_pgm(left_path)?;
    let right = load_pgm(right_path)?;
    let problem = build_stereo_problem(&left, &right, cfg)?;
    let start = std::time::Instant::now();
    let (trace, mut disparity) = sweep_solver(&problem, left.height, left.width, cfg)?;
    let seconds = start.elapsed().as_secs_f64();
    disparity.scale = export_scale.max(1);
    let energy = trace
        .records
        .iter()
        .map(|r| r.energy)
        .fold(f64::INFINITY, f64::min);
    if let Some(path) = out_path {
        save_disparity(&disparity, path)?;
    }
    Ok(StereoOutcome {
        trace,
        disparity,
        energy,
        seconds,
    })
}
