//! Spectrogram images: fixed 256-entry viridis-like palette, 8-bit RGB PNG.
//! Masked cells are drawn black, a colour the palette never produces.

use std::path::Path;

use crate::dsp::LogMelSpectrogram;
use crate::error::{Error, Result};
use crate::masking::MaskPlan;
use crate::patches::PatchGridSpec;

const ANCHORS: [[u8; 3]; 9] = [
    [68, 1, 84],
    [71, 44, 122],
    [59, 81, 139],
    [44, 113, 142],
    [33, 144, 141],
    [39, 173, 129],
    [92, 200, 99],
    [170, 220, 50],
    [253, 231, 37],
];

pub const MASK_COLOR: [u8; 3] = [0, 0, 0];

pub fn palette() -> [[u8; 3]; 256] {
    let mut out = [[0u8; 3]; 256];
    for (i, c) in out.iter_mut().enumerate() {
        let x = i as f64 / 255.0 * (ANCHORS.len() - 1) as f64;
        let k = (x.floor() as usize).min(ANCHORS.len() - 2);
        let t = x - k as f64;
        for ch in 0..3 {
            let (a, b) = (ANCHORS[k][ch] as f64, ANCHORS[k + 1][ch] as f64);
            c[ch] = (a + t * (b - a)).round() as u8;
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderOptions {
    /// Value range mapped onto the palette; defaults to the image's own range.
    pub range: Option<(f64, f64)>,
    /// Pixels per cell side.
    pub scale: usize,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            range: None,
            scale: 2,
        }
    }
}

pub fn value_range(spec: &LogMelSpectrogram) -> (f64, f64) {
    spec.values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
}

/// Per-cell flags (`frames × bins`, row-major) covering every masked patch.
pub fn cell_mask(
    grid: &PatchGridSpec,
    plan: &MaskPlan,
    frames: usize,
    bins: usize,
) -> Result<Vec<bool>> {
    if plan.n_total != grid.n_patches() {
        return Err(Error::Masking(format!(
            "plan over {} patches, grid has {}",
            plan.n_total,
            grid.n_patches()
        )));
    }
    let (ct, cf) = grid.covered_extent();
    if ct > frames || cf > bins {
        return Err(Error::shape(
            "cell_mask",
            format!("grid covers {ct}x{cf}, image is {frames}x{bins}"),
        ));
    }
    let mut cells = vec![false; frames * bins];
    for &i in &plan.masked_idx {
        let (t, f) = grid.coords(i);
        for dt in 0..grid.patch_t {
            for df in 0..grid.patch_f {
                cells[(t * grid.stride_t + dt) * bins + f * grid.stride_f + df] = true;
            }
        }
    }
    Ok(cells)
}

/// Time runs left to right, low mel bins at the bottom. Returns `(width, height, rgb)`.
pub fn render_rgb(
    spec: &LogMelSpectrogram,
    mask: Option<&[bool]>,
    opts: RenderOptions,
) -> Result<(u32, u32, Vec<u8>)> {
    if let Some(m) = mask {
        if m.len() != spec.values.len() {
            return Err(Error::shape(
                "render",
                format!("{} mask cells for {} values", m.len(), spec.values.len()),
            ));
        }
    }
    if opts.scale == 0 {
        return Err(Error::InvalidArgument(
            "render scale must be positive".into(),
        ));
    }
    let (lo, hi) = opts.range.unwrap_or_else(|| value_range(spec));
    let pal = palette();
    let s = opts.scale;
    let (w, h) = (spec.frames * s, spec.bins * s);
    let mut rgb = vec![0u8; w * h * 3];
    for y in 0..h {
        let f = spec.bins - 1 - y / s;
        for x in 0..w {
            let t = x / s;
            let cell = t * spec.bins + f;
            let c = if mask.is_some_and(|m| m[cell]) {
                MASK_COLOR
            } else {
                let u = if hi > lo {
                    ((spec.values[cell] - lo) / (hi - lo)).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                pal[(u * 255.0).round() as usize]
            };
            rgb[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&c);
        }
    }
    Ok((w as u32, h as u32, rgb))
}

pub fn encode_png(width: u32, height: u32, rgb: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width, height);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let err = |e: png::EncodingError| Error::InvalidArgument(format!("png encoding: {e}"));
        let mut w = enc.write_header().map_err(err)?;
        w.write_image_data(rgb).map_err(err)?;
    }
    Ok(out)
}

pub fn write_png(
    path: impl AsRef<Path>,
    spec: &LogMelSpectrogram,
    mask: Option<&[bool]>,
    opts: RenderOptions,
) -> Result<()> {
    let (w, h, rgb) = render_rgb(spec, mask, opts)?;
    let path = path.as_ref();
    std::fs::write(path, encode_png(w, h, &rgb)?).map_err(|e| Error::io(path, e))
}
