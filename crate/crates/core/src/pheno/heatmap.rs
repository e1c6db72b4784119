//! G-channel heatmap overlays: per-pixel green values indexed into a
//! 256-entry color gradient and alpha-blended onto the original frame.

use super::{Frame, Mask, PhenoError};

/// Overlay opacity and color table.
#[derive(Debug, Clone)]
pub struct HeatmapConfig {
    pub alpha: f64,
    pub gradient: Box<[[u8; 3]; 256]>,
}

impl Default for HeatmapConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            gradient: default_gradient(),
        }
    }
}

/// Linear red-to-green ramp: entry v = (255-v, v, 0), so low-G (stressed)
/// regions render red and healthy high-G regions render green.
pub fn default_gradient() -> Box<[[u8; 3]; 256]> {
    let mut g = Box::new([[0u8; 3]; 256]);
    for (v, entry) in g.iter_mut().enumerate() {
        *entry = [255 - v as u8, v as u8, 0];
    }
    g
}

fn blend(alpha: f64, heat: u8, original: u8) -> u8 {
    let v = alpha * heat as f64 + (1.0 - alpha) * original as f64;
    // round half away from zero; v is within [0, 255] by construction
    v.round().clamp(0.0, 255.0) as u8
}

/// Blends the gradient color of each mask pixel's G value onto the frame;
/// non-mask pixels are copied unchanged. Bit-deterministic.
pub fn render_heatmap(frame: &Frame, mask: &Mask, cfg: &HeatmapConfig) -> Result<Frame, PhenoError> {
    if mask.width != frame.width || mask.height != frame.height {
        return Err(PhenoError::DimensionMismatch {
            frame_w: frame.width,
            frame_h: frame.height,
            mask_w: mask.width,
            mask_h: mask.height,
        });
    }
    let mut pixels = frame.pixels.clone();
    for (px, &member) in pixels.iter_mut().zip(&mask.bits) {
        if !member {
            continue;
        }
        let heat = cfg.gradient[px[1] as usize];
        for c in 0..3 {
            px[c] = blend(cfg.alpha, heat[c], px[c]);
        }
    }
    Ok(Frame {
        width: frame.width,
        height: frame.height,
        pixels,
        timestamp: frame.timestamp,
    })
}

/// 256x16 color-bar image of the gradient, emitted once per run alongside
/// the heatmap frames.
pub fn color_bar(cfg: &HeatmapConfig) -> Frame {
    let width = 256;
    let height = 16;
    let mut pixels = Vec::with_capacity(width * height);
    for _row in 0..height {
        for col in 0..width {
            pixels.push(cfg.gradient[col]);
        }
    }
    Frame {
        width,
        height,
        pixels,
        timestamp: chrono::DateTime::<chrono::Utc>::UNIX_EPOCH,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn frame_of(px: [u8; 3]) -> Frame {
        Frame::new(
            2,
            1,
            vec![px, px],
            chrono::Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn gradient_endpoints() {
        let g = default_gradient();
        assert_eq!(g[0], [255, 0, 0]);
        assert_eq!(g[255], [0, 255, 0]);
    }

    #[test]
    fn forced_blend_values() {
        // heat (255,0,0) over original (100,100,100) at alpha 0.5:
        // 0.5*255+0.5*100 = 177.5 -> 178 (half away from zero), rest 50
        assert_eq!(blend(0.5, 255, 100), 178);
        assert_eq!(blend(0.5, 0, 100), 50);
    }

    #[test]
    fn low_green_pixel_renders_red() {
        // pixel with G=0 indexes gradient[0] = (255,0,0)
        let frame = frame_of([100, 0, 100]);
        let mask = Mask::new(2, 1, vec![true, false]).unwrap();
        let out = render_heatmap(&frame, &mask, &HeatmapConfig::default()).unwrap();
        assert_eq!(out.pixels[0], [178, 0, 50]);
        assert_eq!(out.pixels[1], [100, 0, 100], "non-mask pixel untouched");
    }

    #[test]
    fn zero_alpha_is_identity() {
        let frame = frame_of([13, 201, 77]);
        let mask = Mask::new(2, 1, vec![true, true]).unwrap();
        let cfg = HeatmapConfig {
            alpha: 0.0,
            ..Default::default()
        };
        let out = render_heatmap(&frame, &mask, &cfg).unwrap();
        assert_eq!(out.pixels, frame.pixels);
    }

    #[test]
    fn full_alpha_on_max_green() {
        // G=255 -> gradient (0,255,0); blended with black at alpha 1 stays (0,255,0)
        let frame = frame_of([0, 255, 0]);
        let mask = Mask::new(2, 1, vec![true, true]).unwrap();
        let cfg = HeatmapConfig {
            alpha: 1.0,
            ..Default::default()
        };
        let out = render_heatmap(&frame, &mask, &cfg).unwrap();
        assert_eq!(out.pixels[0], [0, 255, 0]);
    }

    #[test]
    fn rendering_is_bit_deterministic() {
        let frame = frame_of([42, 120, 250]);
        let mask = Mask::new(2, 1, vec![true, true]).unwrap();
        let cfg = HeatmapConfig::default();
        let a = render_heatmap(&frame, &mask, &cfg).unwrap();
        let b = render_heatmap(&frame, &mask, &cfg).unwrap();
        assert_eq!(a.pixels, b.pixels);
    }

    #[test]
    fn color_bar_shape() {
        let bar = color_bar(&HeatmapConfig::default());
        assert_eq!(bar.width, 256);
        assert_eq!(bar.height, 16);
        assert_eq!(bar.pixels[0], [255, 0, 0]);
        assert_eq!(bar.pixels[255], [0, 255, 0]);
    }
}
