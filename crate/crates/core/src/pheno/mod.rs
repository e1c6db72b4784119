//! Per-frame phenotype statistics from an RGB frame plus a binary mask:
//! channel means, mask area, bounding-box dimensions, the derived ratio
//! features, G-channel heatmap overlays, and the phenotype CSV.

mod heatmap;
pub mod netpbm;

pub use heatmap::{color_bar, render_heatmap, HeatmapConfig};

use std::io::Write;
use std::path::Path;

use chrono::{DateTime, Utc};
use thiserror::Error;

use crate::timefmt::format_utc;

#[derive(Debug, Error)]
pub enum PhenoError {
    #[error("dimension mismatch: frame {frame_w}x{frame_h} vs mask {mask_w}x{mask_h}")]
    DimensionMismatch {
        frame_w: usize,
        frame_h: usize,
        mask_w: usize,
        mask_h: usize,
    },
    #[error("mask has no set pixels")]
    EmptyMask,
    #[error("zero mask dimension")]
    ZeroDimension,
    #[error("frame data: {0}")]
    BadFrame(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One RGB frame, row-major 8-bit triples.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[u8; 3]>,
    pub timestamp: DateTime<Utc>,
}

impl Frame {
    pub fn new(
        width: usize,
        height: usize,
        pixels: Vec<[u8; 3]>,
        timestamp: DateTime<Utc>,
    ) -> Result<Self, PhenoError> {
        if width == 0 || height == 0 {
            return Err(PhenoError::BadFrame("zero frame dimension".into()));
        }
        if pixels.len() != width * height {
            return Err(PhenoError::BadFrame(format!(
                "{} pixels for {width}x{height}",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
            timestamp,
        })
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        self.pixels[row * self.width + col]
    }
}

/// Binary membership mask with the paired frame's dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self, PhenoError> {
        if bits.len() != width * height {
            return Err(PhenoError::BadFrame(format!(
                "{} mask bits for {width}x{height}",
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// One timestamped row of mask-derived plant features.
#[derive(Debug, Clone, PartialEq)]
pub struct PhenotypeRecord {
    pub timestamp: DateTime<Utc>,
    pub object_id: u32,
    pub mean_r: f64,
    pub mean_g: f64,
    pub mean_b: f64,
    pub mask_area: u64,
    pub mask_height: u32,
    pub mask_width: u32,
    pub area_to_height: f64,
    pub height_to_width: f64,
}

/// Exact header of the phenotype CSV.
pub const PHENO_CSV_HEADER: &str =
    "timestamp,object_id,mean_r,mean_g,mean_b,mask_area,mask_height,mask_width,area_to_height,height_to_width";

fn check_dims(frame_w: usize, frame_h: usize, mask: &Mask) -> Result<(), PhenoError> {
    if mask.width != frame_w || mask.height != frame_h {
        return Err(PhenoError::DimensionMismatch {
            frame_w,
            frame_h,
            mask_w: mask.width,
            mask_h: mask.height,
        });
    }
    Ok(())
}

/// Ratio features replacing the raw size channels:
/// (area/height, height/width).
pub fn derive_ratios(area: u64, height: u32, width: u32) -> Result<(f64, f64), PhenoError> {
    if height == 0 || width == 0 {
        return Err(PhenoError::ZeroDimension);
    }
    Ok((area as f64 / height as f64, height as f64 / width as f64))
}

/// Channel means, area, and bounding-box extents of the masked region.
/// Sums accumulate in integers (exact) before one f64 division per channel.
pub fn mask_stats(frame: &Frame, mask: &Mask, object_id: u32) -> Result<PhenotypeRecord, PhenoError> {
    check_dims(frame.width, frame.height, mask)?;
    let mut sum = [0u64; 3];
    let mut area = 0u64;
    let (mut min_row, mut max_row) = (usize::MAX, 0usize);
    let (mut min_col, mut max_col) = (usize::MAX, 0usize);
    for row in 0..frame.height {
        for col in 0..frame.width {
            if !mask.get(row, col) {
                continue;
            }
            let px = frame.pixel(row, col);
            sum[0] += px[0] as u64;
            sum[1] += px[1] as u64;
            sum[2] += px[2] as u64;
            area += 1;
            min_row = min_row.min(row);
            max_row = max_row.max(row);
            min_col = min_col.min(col);
            max_col = max_col.max(col);
        }
    }
    if area == 0 {
        return Err(PhenoError::EmptyMask);
    }
    let mask_height = (max_row - min_row + 1) as u32;
    let mask_width = (max_col - min_col + 1) as u32;
    let (area_to_height, height_to_width) = derive_ratios(area, mask_height, mask_width)?;
    Ok(PhenotypeRecord {
        timestamp: frame.timestamp,
        object_id,
        mean_r: sum[0] as f64 / area as f64,
        mean_g: sum[1] as f64 / area as f64,
        mean_b: sum[2] as f64 / area as f64,
        mask_area: area,
        mask_height,
        mask_width,
        area_to_height,
        height_to_width,
    })
}

/// Intersection over union; 1.0 when both masks are empty by convention.
pub fn mask_iou(a: &Mask, b: &Mask) -> Result<f64, PhenoError> {
    if a.width != b.width || a.height != b.height {
        return Err(PhenoError::DimensionMismatch {
            frame_w: a.width,
            frame_h: a.height,
            mask_w: b.width,
            mask_h: b.height,
        });
    }
    let mut inter = 0u64;
    let mut union = 0u64;
    for (&x, &y) in a.bits.iter().zip(&b.bits) {
        inter += (x && y) as u64;
        union += (x || y) as u64;
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Writes phenotype records (already sorted by timestamp) in the documented
/// CSV schema: reals at 6 decimals, timestamps ISO-8601 UTC.
pub fn write_pheno_csv<W: Write>(records: &[PhenotypeRecord], mut w: W) -> Result<(), PhenoError> {
    debug_assert!(
        records.windows(2).all(|r| r[0].timestamp <= r[1].timestamp),
        "records must be sorted by timestamp"
    );
    writeln!(w, "{PHENO_CSV_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{:.6},{:.6},{:.6},{},{},{},{:.6},{:.6}",
            format_utc(r.timestamp),
            r.object_id,
            r.mean_r,
            r.mean_g,
            r.mean_b,
            r.mask_area,
            r.mask_height,
            r.mask_width,
            r.area_to_height,
            r.height_to_width
        )?;
    }
    Ok(())
}

/// File-path convenience wrapper around [`write_pheno_csv`].
pub fn write_pheno_csv_file(records: &[PhenotypeRecord], path: &Path) -> Result<(), PhenoError> {
    let mut buf = Vec::new();
    write_pheno_csv(records, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

/// Computes stats for a batch of frame/mask pairs; per-frame work runs on the
/// parallel backend, outputs keep input order.
pub fn batch_mask_stats(
    pairs: Vec<(Frame, Mask, u32)>,
) -> Result<Vec<PhenotypeRecord>, PhenoError> {
    crate::exec::try_map_collect(pairs, |(frame, mask, id)| mask_stats(&frame, &mask, id))
}
