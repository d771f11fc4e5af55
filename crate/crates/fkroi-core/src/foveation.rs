//! Sampling-density and token-budget accounting for ROI-augmented
//! multi-view inputs. No model is built here; the module only counts.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::roi::CropRect;

#[derive(Debug, Error)]
pub enum FoveationError {
    #[error("view {index} resolution {resolution} is not divisible by patch size {patch}")]
    NonDivisibleResolution {
        index: usize,
        resolution: u32,
        patch: u32,
    },
    #[error("view {index} resolution {got} differs from {expected}; token accounting assumes one shared resolution")]
    VaryingResolution { index: usize, expected: u32, got: u32 },
    #[error("token accounting needs at least one view")]
    NoViews,
    #[error("patch size must be positive")]
    ZeroPatch,
    #[error("raw frame must be non-empty, got {0}x{1}")]
    EmptyRawFrame(u32, u32),
}

/// Local sampling-density gain of cropping a region before resizing versus
/// reading it out of the downsampled global view.
///
/// `raw_width` and `global_width` are the raw and downsampled global frame
/// widths; `roi_width_raw` is the region's width in the raw frame and
/// `roi_output_width` the fixed ROI output width. All must be positive with
/// `global_width <= raw_width`.
pub fn density_gain(
    raw_width: f64,
    global_width: f64,
    roi_width_raw: f64,
    roi_output_width: f64,
) -> f64 {
    assert!(
        raw_width > 0.0 && global_width > 0.0 && roi_width_raw > 0.0 && roi_output_width > 0.0,
        "density_gain requires positive widths"
    );
    assert!(
        global_width <= raw_width,
        "global width {global_width} must not exceed raw width {raw_width}"
    );
    let scale = global_width / raw_width;
    roi_output_width / (scale * roi_width_raw)
}

/// Pixels the region occupies in the downsampled global view.
pub fn global_footprint_px(raw_width: f64, global_width: f64, roi_width_raw: f64) -> f64 {
    (global_width / raw_width) * roi_width_raw
}

/// Where a view's pixels came from in the raw frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Footprint {
    FullFrame,
    Rect(CropRect),
}

/// One view fed to the tokenizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewSpec {
    /// Square view resolution in pixels.
    pub resolution: u32,
    pub is_roi: bool,
    pub footprint: Footprint,
}

/// Token budget of one multi-view observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenStats {
    pub n_per_view: u64,
    pub n_total: u64,
    pub roi_token_fraction: f64,
    /// Fraction of raw-frame area covered by the union of ROI footprints —
    /// a geometric proxy for content duplication, not an attention weight.
    pub duplication_overlap: f64,
}

/// Counts tokens per view and the geometric duplication of ROI footprints
/// over the raw frame. All views must share one resolution divisible by the
/// patch size.
pub fn token_accounting(
    views: &[ViewSpec],
    patch: u32,
    raw_size: (u32, u32),
) -> Result<TokenStats, FoveationError> {
    if views.is_empty() {
        return Err(FoveationError::NoViews);
    }
    if patch == 0 {
        return Err(FoveationError::ZeroPatch);
    }
    let (raw_w, raw_h) = raw_size;
    if raw_w == 0 || raw_h == 0 {
        return Err(FoveationError::EmptyRawFrame(raw_w, raw_h));
    }
    let expected = views[0].resolution;
    for (index, view) in views.iter().enumerate() {
        if view.resolution != expected {
            return Err(FoveationError::VaryingResolution {
                index,
                expected,
                got: view.resolution,
            });
        }
        if view.resolution % patch != 0 {
            return Err(FoveationError::NonDivisibleResolution {
                index,
                resolution: view.resolution,
                patch,
            });
        }
    }
    let side = (expected / patch) as u64;
    let n_per_view = side * side;
    let n_total = n_per_view * views.len() as u64;
    let roi_tokens: u64 = views.iter().filter(|v| v.is_roi).count() as u64 * n_per_view;
    let roi_token_fraction = roi_tokens as f64 / n_total as f64;

    let clipped: Vec<(i64, i64, i64, i64)> = views
        .iter()
        .filter(|v| v.is_roi)
        .filter_map(|v| match v.footprint {
            Footprint::FullFrame => Some((0, 0, raw_w as i64, raw_h as i64)),
            Footprint::Rect(r) => {
                let x0 = r.u0.max(0);
                let y0 = r.v0.max(0);
                let x1 = (r.u0 + r.w as i64).min(raw_w as i64);
                let y1 = (r.v0 + r.h as i64).min(raw_h as i64);
                if x0 < x1 && y0 < y1 {
                    Some((x0, y0, x1, y1))
                } else {
                    None
                }
            }
        })
        .collect();
    let union = rect_union_area(&clipped);
    let duplication_overlap = union as f64 / (raw_w as u64 * raw_h as u64) as f64;

    Ok(TokenStats {
        n_per_view,
        n_total,
        roi_token_fraction,
        duplication_overlap,
    })
}

/// Exact union area of axis-aligned rectangles via coordinate compression.
fn rect_union_area(rects: &[(i64, i64, i64, i64)]) -> u64 {
    if rects.is_empty() {
        return 0;
    }
    let mut xs: Vec<i64> = rects.iter().flat_map(|r| [r.0, r.2]).collect();
    let mut ys: Vec<i64> = rects.iter().flat_map(|r| [r.1, r.3]).collect();
    xs.sort_unstable();
    xs.dedup();
    ys.sort_unstable();
    ys.dedup();
    let mut area = 0u64;
    for xw in xs.windows(2) {
        for yw in ys.windows(2) {
            let covered = rects
                .iter()
                .any(|r| r.0 <= xw[0] && xw[1] <= r.2 && r.1 <= yw[0] && yw[1] <= r.3);
            if covered {
                area += (xw[1] - xw[0]) as u64 * (yw[1] - yw[0]) as u64;
            }
        }
    }
    area
}
