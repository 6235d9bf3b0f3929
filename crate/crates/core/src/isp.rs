//! Post-acquisition processing: normalization, bilinear demosaicking, gamma
//! correction, and a dark-level census for shadow-detail comparisons.
//!
//! Processed data lives in `f64` in `[0, 1]`. The wide type matters: gamma
//! application must compose (`g1` then `g2` equals `g1 * g2`) to within 1e-9,
//! which `f32` storage cannot guarantee.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::parallel;
use crate::pfm;
use crate::sensor::RawFrame;

/// How (and whether) gamma correction runs in a pipeline.
#[derive(Debug, Clone, PartialEq)]
pub enum GammaMode {
    /// No tone curve.
    Off,
    /// Fixed exponent, applied via [`apply_gamma`].
    Fixed(f64),
    /// Exponent chosen from image statistics via [`adaptive_gamma`].
    Adaptive,
}

impl GammaMode {
    /// Canonical string form: `"none"`, the exponent, or `"adaptive"`.
    pub fn label(&self) -> String {
        match self {
            GammaMode::Off => "none".into(),
            GammaMode::Fixed(g) => format!("{g}"),
            GammaMode::Adaptive => "adaptive".into(),
        }
    }

    /// Parses the canonical string form.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(GammaMode::Off),
            "adaptive" => Ok(GammaMode::Adaptive),
            other => {
                let g: f64 = other
                    .parse()
                    .map_err(|_| Error::invalid(format!("bad gamma mode {other:?}")))?;
                if !(g.is_finite() && g > 0.0) {
                    return Err(Error::invalid(format!("gamma must be positive, got {g}")));
                }
                Ok(GammaMode::Fixed(g))
            }
        }
    }
}

/// A planar multi-channel image with values in `[0, 1]` and a record of the
/// processing steps applied so far.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedImage {
    /// Pixels per row.
    pub width: usize,
    /// Rows.
    pub height: usize,
    /// Channel count: 1 (mono), 2 (clear + red), or 3 (RGB).
    pub channels: usize,
    /// Channel-major samples, `channels * width * height` long.
    pub data: Vec<f64>,
    /// Pipe-separated names of the steps applied, e.g.
    /// `"demosaic-bilinear|gamma-0.30"`.
    pub pipeline_tag: String,
}

impl ProcessedImage {
    /// Sample of channel `ch` at `(row, col)`.
    #[inline]
    pub fn sample(&self, ch: usize, row: usize, col: usize) -> f64 {
        self.data[(ch * self.height + row) * self.width + col]
    }

    /// One full channel plane.
    pub fn channel(&self, ch: usize) -> &[f64] {
        let plane = self.width * self.height;
        &self.data[ch * plane..(ch + 1) * plane]
    }

    /// Checks geometry and the `[0, 1]` value invariant.
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.channels == 0 {
            return Err(Error::invalid("processed image has zero extent"));
        }
        if self.data.len() != self.channels * self.width * self.height {
            return Err(Error::invalid("processed image has inconsistent geometry"));
        }
        if self.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("processed image value outside [0, 1]"));
        }
        Ok(())
    }
}

/// Scales digital numbers to `[0, 1]` without any spatial processing. The
/// output is single-channel with the CFA mosaic still interleaved.
pub fn normalize(raw: &RawFrame) -> Result<ProcessedImage> {
    if raw.dn.len() != raw.width * raw.height {
        return Err(Error::invalid("raw frame has inconsistent geometry"));
    }
    let full = raw.dn_max() as f64;
    let mut data = vec![0.0f64; raw.dn.len()];
    parallel::for_each_row(&mut data, raw.width, |r, row| {
        for (c, v) in row.iter_mut().enumerate() {
            *v = raw.dn[r * raw.width + c] as f64 / full;
        }
    });
    Ok(ProcessedImage {
        width: raw.width,
        height: raw.height,
        channels: 1,
        data,
        pipeline_tag: "raw".into(),
    })
}

/// The classic bilinear interpolation stencil. Dividing by the sum of the
/// weights that actually land on same-class samples makes one kernel serve
/// every CFA class and every border case.
const TENT: [[f64; 3]; 3] = [[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]];

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut m = i.rem_euclid(2 * n);
    if m >= n {
        m = 2 * n - 1 - m;
    }
    m as usize
}

/// Fills in the missing CFA samples by bilinear interpolation of same-class
/// neighbors (reflected at borders).
///
/// Output channel order follows the CFA: RGGB gives `{R, G, B}`, RCCC gives
/// `{C, R}` (the clear plane first), and a mono frame passes through as the
/// plain [`normalize`] output. At a pixel whose filter class matches the
/// output channel, the normalized raw value is kept bit-exactly.
pub fn demosaic_bilinear(raw: &RawFrame) -> Result<ProcessedImage> {
    let normalized = normalize(raw)?;
    // Channel order per CFA: indices into raw.cfa.classes.
    let class_order: Vec<usize> = match raw.cfa.name.as_str() {
        "mono" => return Ok(normalized),
        "rggb" => vec![0, 1, 2], // R, G, B
        "rccc" => vec![1, 0],    // C, R
        other => {
            return Err(Error::invalid(format!(
                "demosaicking does not support CFA {other:?}"
            )))
        }
    };
    let (w, h) = (raw.width, raw.height);
    if w < raw.cfa.tile_width || h < raw.cfa.tile_height {
        return Err(Error::invalid(format!(
            "{w}x{h} frame smaller than the {}x{} CFA tile",
            raw.cfa.tile_width, raw.cfa.tile_height
        )));
    }

    let mosaic = &normalized.data;
    let mut data = Vec::with_capacity(class_order.len() * w * h);
    for &class in &class_order {
        let mut plane = vec![0.0f64; w * h];
        parallel::for_each_row(&mut plane, w, |r, row| {
            for (c, out) in row.iter_mut().enumerate() {
                if raw.cfa.class_index_at(r, c) == class {
                    *out = mosaic[r * w + c];
                    continue;
                }
                let mut num = 0.0;
                let mut den = 0.0;
                for (dr, taps) in TENT.iter().enumerate() {
                    let rr = reflect(r as isize + dr as isize - 1, h);
                    for (dc, &t) in taps.iter().enumerate() {
                        let cc = reflect(c as isize + dc as isize - 1, w);
                        if raw.cfa.class_index_at(rr, cc) == class {
                            num += t * mosaic[rr * w + cc];
                            den += t;
                        }
                    }
                }
                debug_assert!(den > 0.0, "no same-class sample near ({r},{c})");
                *out = num / den;
            }
        });
        data.extend_from_slice(&plane);
    }

    Ok(ProcessedImage {
        width: w,
        height: h,
        channels: class_order.len(),
        data,
        pipeline_tag: "demosaic-bilinear".into(),
    })
}

/// Raises every sample to the power `gamma` (which brightens shadows for
/// `gamma < 1`) and appends `gamma-<value>` to the pipeline tag.
pub fn apply_gamma(img: &ProcessedImage, gamma: f64) -> Result<ProcessedImage> {
    img.validate()?;
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::invalid(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    let mut out = img.clone();
    parallel::for_each_row(&mut out.data, img.width, |_, row| {
        for v in row {
            *v = v.powf(gamma);
        }
    });
    out.pipeline_tag = format!("{}|gamma-{gamma:.2}", img.pipeline_tag);
    Ok(out)
}

/// Picks a gamma from the image content — the exponent that would move the
/// mean sample value to 0.5, clamped to `[0.1, 1.0]` — applies it, and
/// returns the value used. The tag records `gamma-adaptive-<value>`.
pub fn adaptive_gamma(img: &ProcessedImage) -> Result<(ProcessedImage, f64)> {
    img.validate()?;
    let mean = parallel::pairwise_sum(&img.data) / img.data.len() as f64;
    let m = mean.max(1e-4);
    let gamma = if m >= 1.0 {
        1.0
    } else {
        (0.5f64.ln() / m.ln()).clamp(0.1, 1.0)
    };
    let mut out = apply_gamma(img, gamma)?;
    out.pipeline_tag = format!("{}|gamma-adaptive-{gamma:.2}", img.pipeline_tag);
    Ok((out, gamma))
}

/// Counts how many distinct digital numbers occur among pixels darker than
/// `fraction` of full scale — a direct measure of shadow tonal resolution.
pub fn dark_level_census(raw: &RawFrame, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "census fraction {fraction} outside (0, 1]"
        )));
    }
    let threshold = fraction * (1u64 << raw.bit_depth) as f64;
    let mut seen = vec![false; 1usize << raw.bit_depth];
    for &dn in &raw.dn {
        if (dn as f64) < threshold {
            seen[dn as usize] = true;
        }
    }
    Ok(seen.iter().filter(|&&s| s).count())
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

fn proc_paths(base: &Path) -> (PathBuf, PathBuf) {
    let with = |ext: &str| {
        let mut name = base.file_name().unwrap_or_default().to_os_string();
        name.push(ext);
        base.with_file_name(name)
    };
    (with(".proc.png"), with(".proc.meta"))
}

/// Writes a processed image as a PNG (`out_depth` 8 or 16 bits per sample;
/// 1, 2, or 3 channels map to grayscale, grayscale+alpha, and RGB) with the
/// pipeline tag in a `.proc.meta` sidecar. Values are `round(v * (2^out_depth
/// - 1))`. Atomic.
pub fn save_processed(img: &ProcessedImage, base: &Path, out_depth: u32) -> Result<()> {
    img.validate()?;
    if out_depth != 8 && out_depth != 16 {
        return Err(Error::invalid(format!(
            "output depth {out_depth} not supported (use 8 or 16)"
        )));
    }
    let (w, h) = (img.width as u32, img.height as u32);
    let plane = img.width * img.height;
    let interleave16 = |scale: f64| -> Vec<u16> {
        let mut out = Vec::with_capacity(img.data.len());
        for i in 0..plane {
            for ch in 0..img.channels {
                out.push((img.data[ch * plane + i] * scale).round() as u16);
            }
        }
        out
    };
    let dynimg = match (img.channels, out_depth) {
        (1, 8) => {
            let px: Vec<u8> = interleave16(255.0).iter().map(|&v| v as u8).collect();
            image::DynamicImage::ImageLuma8(
                image::ImageBuffer::from_vec(w, h, px).expect("geometry validated"),
            )
        }
        (2, 8) => {
            let px: Vec<u8> = interleave16(255.0).iter().map(|&v| v as u8).collect();
            image::DynamicImage::ImageLumaA8(
                image::ImageBuffer::from_vec(w, h, px).expect("geometry validated"),
            )
        }
        (3, 8) => {
            let px: Vec<u8> = interleave16(255.0).iter().map(|&v| v as u8).collect();
            image::DynamicImage::ImageRgb8(
                image::ImageBuffer::from_vec(w, h, px).expect("geometry validated"),
            )
        }
        (1, 16) => image::DynamicImage::ImageLuma16(
            image::ImageBuffer::from_vec(w, h, interleave16(65535.0)).expect("geometry validated"),
        ),
        (2, 16) => image::DynamicImage::ImageLumaA16(
            image::ImageBuffer::from_vec(w, h, interleave16(65535.0)).expect("geometry validated"),
        ),
        (3, 16) => image::DynamicImage::ImageRgb16(
            image::ImageBuffer::from_vec(w, h, interleave16(65535.0)).expect("geometry validated"),
        ),
        (c, _) => {
            return Err(Error::invalid(format!(
                "cannot encode a {c}-channel image as PNG"
            )))
        }
    };

    let mut bytes = Vec::new();
    dynimg
        .write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(|e| Error::invalid(format!("PNG encode failed: {e}")))?;
    let meta = format!(
        "pipeline_tag={}\nchannels={}\n",
        img.pipeline_tag, img.channels
    );

    let (png_path, meta_path) = proc_paths(base);
    let png_tmp = pfm::tmp_path(&png_path);
    let meta_tmp = pfm::tmp_path(&meta_path);
    let result = (|| -> Result<()> {
        std::fs::write(&png_tmp, &bytes).map_err(|e| Error::io(&png_tmp, e))?;
        std::fs::write(&meta_tmp, &meta).map_err(|e| Error::io(&meta_tmp, e))?;
        Ok(())
    })();
    match result {
        Ok(()) => {
            std::fs::rename(&png_tmp, &png_path).map_err(|e| Error::io(&png_path, e))?;
            std::fs::rename(&meta_tmp, &meta_path).map_err(|e| Error::io(&meta_path, e))?;
            Ok(())
        }
        Err(e) => {
            let _ = std::fs::remove_file(&png_tmp);
            let _ = std::fs::remove_file(&meta_tmp);
            Err(e)
        }
    }
}

/// Reads a processed-image bundle written by [`save_processed`]. Values come
/// back quantized to the stored depth.
pub fn load_processed(base: &Path) -> Result<ProcessedImage> {
    let (png_path, meta_path) = proc_paths(base);
    let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let mut pipeline_tag = None;
    let mut channels = None;
    for (i, line) in text.lines().enumerate() {
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::malformed(&meta_path, i + 1, "expected key=value"));
        };
        match k {
            "pipeline_tag" => pipeline_tag = Some(v.to_string()),
            "channels" => {
                channels = Some(v.parse::<usize>().map_err(|_| {
                    Error::malformed(&meta_path, i + 1, format!("bad channels {v:?}"))
                })?)
            }
            other => {
                return Err(Error::malformed(
                    &meta_path,
                    i + 1,
                    format!("unknown key {other:?}"),
                ))
            }
        }
    }
    let pipeline_tag =
        pipeline_tag.ok_or_else(|| Error::malformed(&meta_path, 0, "missing key \"pipeline_tag\""))?;
    let channels =
        channels.ok_or_else(|| Error::malformed(&meta_path, 0, "missing key \"channels\""))?;

    let bytes = std::fs::read(&png_path).map_err(|e| Error::io(&png_path, e))?;
    let decoded = image::load_from_memory(&bytes)
        .map_err(|e| Error::malformed(&png_path, 0, format!("PNG decode failed: {e}")))?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let plane = w * h;
    // Interleaved-to-planar with rescale to [0, 1].
    let deinterleave = |px: &[u16], got: usize, scale: f64| -> Result<Vec<f64>> {
        if got != channels {
            return Err(Error::malformed(
                &png_path,
                0,
                format!("PNG has {got} channels, sidecar says {channels}"),
            ));
        }
        let mut data = vec![0.0f64; channels * plane];
        for i in 0..plane {
            for ch in 0..channels {
                data[ch * plane + i] = px[i * channels + ch] as f64 * scale;
            }
        }
        Ok(data)
    };
    let data = match decoded {
        image::DynamicImage::ImageLuma8(b) => {
            let px: Vec<u16> = b.into_raw().iter().map(|&v| v as u16).collect();
            deinterleave(&px, 1, 1.0 / 255.0)?
        }
        image::DynamicImage::ImageLumaA8(b) => {
            let px: Vec<u16> = b.into_raw().iter().map(|&v| v as u16).collect();
            deinterleave(&px, 2, 1.0 / 255.0)?
        }
        image::DynamicImage::ImageRgb8(b) => {
            let px: Vec<u16> = b.into_raw().iter().map(|&v| v as u16).collect();
            deinterleave(&px, 3, 1.0 / 255.0)?
        }
        image::DynamicImage::ImageLuma16(b) => deinterleave(&b.into_raw(), 1, 1.0 / 65535.0)?,
        image::DynamicImage::ImageLumaA16(b) => deinterleave(&b.into_raw(), 2, 1.0 / 65535.0)?,
        image::DynamicImage::ImageRgb16(b) => deinterleave(&b.into_raw(), 3, 1.0 / 65535.0)?,
        _ => {
            return Err(Error::malformed(
                &png_path,
                0,
                "unsupported PNG pixel layout",
            ))
        }
    };
    Ok(ProcessedImage {
        width: w,
        height: h,
        channels,
        data,
        pipeline_tag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensor::CfaPattern;

    fn raw(width: usize, height: usize, bit_depth: u32, cfa: CfaPattern, dn: Vec<u16>) -> RawFrame {
        RawFrame {
            width,
            height,
            dn,
            bit_depth,
            cfa,
            exposure_s: 0.008,
            sensor_name: "test".into(),
            rng_seed: 0,
            pixel_pitch_um: 3.0,
        }
    }

    #[test]
    fn normalize_maps_endpoints_and_midpoint() {
        let f = raw(3, 1, 8, CfaPattern::monochrome(), vec![0, 128, 255]);
        let img = normalize(&f).unwrap();
        assert_eq!(img.pipeline_tag, "raw");
        assert_eq!(img.channels, 1);
        assert_eq!(img.data[0], 0.0);
        assert_eq!(img.data[1], 128.0 / 255.0);
        assert_eq!(img.data[2], 1.0);
    }

    #[test]
    fn demosaic_of_constant_raw_is_constant_everywhere() {
        for cfa in [CfaPattern::bayer_rggb(), CfaPattern::rccc()] {
            let f = raw(6, 4, 10, cfa, vec![700; 24]);
            let img = demosaic_bilinear(&f).unwrap();
            let want = 700.0 / 1023.0;
            for &v in &img.data {
                assert!((v - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn demosaic_green_at_red_site_averages_four_neighbors() {
        // Green checkerboard: G sites carry full scale on odd rows, zero on
        // even rows. At the interior red site (2,2) the four green
        // neighbors are (1,2)=full, (3,2)=full, (2,1)=0, (2,3)=0.
        let full = 1023u16;
        let mut dn = vec![0u16; 16];
        for r in 0..4 {
            for c in 0..4 {
                if (r + c) % 2 == 1 {
                    dn[r * 4 + c] = if r % 2 == 1 { full } else { 0 };
                }
            }
        }
        let f = raw(4, 4, 10, CfaPattern::bayer_rggb(), dn);
        let img = demosaic_bilinear(&f).unwrap();
        assert_eq!(img.channels, 3);
        // Channel 1 is green; expect exactly (1 + 1 + 0 + 0) / 4.
        assert_eq!(img.sample(1, 2, 2), 0.5);
    }

    #[test]
    fn demosaic_mono_is_plain_normalization() {
        let f = raw(5, 2, 10, CfaPattern::monochrome(), (0..10).map(|i| i * 100).collect());
        assert_eq!(demosaic_bilinear(&f).unwrap(), normalize(&f).unwrap());
    }

    #[test]
    fn demosaic_keeps_sampled_sites_bit_exact() {
        let mut rng = crate::rng::PixelRng::keyed(11, 0);
        let dn: Vec<u16> = (0..8 * 6).map(|_| rng.next_below(1024) as u16).collect();
        let f = raw(8, 6, 10, CfaPattern::bayer_rggb(), dn.clone());
        let img = demosaic_bilinear(&f).unwrap();
        for r in 0..6 {
            for c in 0..8 {
                let ch = match f.cfa.class_at(r, c).name.as_str() {
                    "R" => 0,
                    "G" => 1,
                    _ => 2,
                };
                assert_eq!(img.sample(ch, r, c), dn[r * 8 + c] as f64 / 1023.0);
            }
        }
        // Every interpolated value stays within range.
        assert!(img.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn demosaic_rccc_produces_clear_then_red_planes() {
        let mut rng = crate::rng::PixelRng::keyed(13, 0);
        let dn: Vec<u16> = (0..6 * 4).map(|_| rng.next_below(1024) as u16).collect();
        let f = raw(6, 4, 10, CfaPattern::rccc(), dn.clone());
        let img = demosaic_bilinear(&f).unwrap();
        assert_eq!(img.channels, 2);
        // Clear plane keeps clear sites, red plane keeps the tile origin.
        assert_eq!(img.sample(0, 0, 1), dn[1] as f64 / 1023.0);
        assert_eq!(img.sample(0, 1, 0), dn[6] as f64 / 1023.0);
        assert_eq!(img.sample(1, 0, 0), dn[0] as f64 / 1023.0);
        assert_eq!(img.sample(1, 2, 2), dn[2 * 6 + 2] as f64 / 1023.0);
    }

    #[test]
    fn gamma_identity_fixed_points_and_arithmetic() {
        let img = ProcessedImage {
            width: 4,
            height: 1,
            channels: 1,
            data: vec![0.0, 0.25, 0.7, 1.0],
            pipeline_tag: "raw".into(),
        };
        let id = apply_gamma(&img, 1.0).unwrap();
        assert_eq!(id.data, img.data);
        assert_eq!(id.pipeline_tag, "raw|gamma-1.00");
        let half = apply_gamma(&img, 0.5).unwrap();
        assert_eq!(half.data[0], 0.0);
        assert_eq!(half.data[1], 0.5);
        assert_eq!(half.data[3], 1.0);
        assert!(apply_gamma(&img, 0.0).is_err());
        assert!(apply_gamma(&img, -1.0).is_err());
    }

    #[test]
    fn gamma_composes_and_preserves_order() {
        let data: Vec<f64> = (0..100).map(|i| i as f64 / 99.0).collect();
        let img = ProcessedImage {
            width: 100,
            height: 1,
            channels: 1,
            data,
            pipeline_tag: "raw".into(),
        };
        let composed = apply_gamma(&apply_gamma(&img, 0.6).unwrap(), 0.5).unwrap();
        let direct = apply_gamma(&img, 0.3).unwrap();
        for (a, b) in composed.data.iter().zip(&direct.data) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        for w in direct.data.windows(2) {
            assert!(w[0] <= w[1]);
        }
    }

    #[test]
    fn adaptive_gamma_matches_closed_forms() {
        let constant = |v: f64| ProcessedImage {
            width: 8,
            height: 8,
            channels: 1,
            data: vec![v; 64],
            pipeline_tag: "raw".into(),
        };
        let (out, g) = adaptive_gamma(&constant(0.5)).unwrap();
        assert_eq!(g, 1.0);
        assert_eq!(out.data, constant(0.5).data);

        let (out, g) = adaptive_gamma(&constant(0.25)).unwrap();
        assert!((g - 0.5).abs() < 1e-12);
        let mean = out.data.iter().sum::<f64>() / 64.0;
        assert!((mean - 0.5).abs() < 1e-12);

        let (out, g) = adaptive_gamma(&constant(0.0)).unwrap();
        assert_eq!(g, 0.1);
        assert!(out.data.iter().all(|&v| v == 0.0));
        assert!(out.pipeline_tag.contains("gamma-adaptive-0.10"));
    }

    #[test]
    fn census_counts_distinct_dark_levels() {
        let zero = raw(4, 2, 10, CfaPattern::monochrome(), vec![0; 8]);
        assert_eq!(dark_level_census(&zero, 1.0 / 32.0).unwrap(), 1);

        let few = raw(6, 1, 8, CfaPattern::monochrome(), vec![0, 1, 2, 2, 1, 0]);
        assert_eq!(dark_level_census(&few, 0.5).unwrap(), 3);

        // Value 2 sits above 2/256 of full scale.
        assert_eq!(dark_level_census(&few, 2.0 / 256.0).unwrap(), 2);
        assert!(dark_level_census(&few, 0.0).is_err());
    }

    #[test]
    fn census_sees_four_times_the_levels_at_ten_bits() {
        // The same shadow ramp quantized at 10 and 8 bits. Fraction 1/32 of
        // full scale covers dn < 32 at 10 bits and dn < 8 at 8 bits; a
        // dense voltage ramp populates every level below each threshold.
        use crate::sensor::{quantize, ElectronImage, SensorConfig};
        let n = 4096;
        let mut cfg = SensorConfig::preset("mt9v024-mono", 3.0).unwrap();
        cfg.array_width_px = n;
        cfg.array_height_px = 1;
        let img = ElectronImage {
            width: n,
            height: 1,
            electrons: (0..n).map(|i| i as f64 / n as f64 * 0.2 * 5620.0).collect(),
            exposure_s: 0.008,
            saturated: vec![false; n],
            rng_seed: 0,
        };
        cfg.bit_depth = 10;
        let f10 = quantize(&img, &cfg).unwrap();
        cfg.bit_depth = 8;
        let f8 = quantize(&img, &cfg).unwrap();
        let c10 = dark_level_census(&f10, 1.0 / 32.0).unwrap();
        let c8 = dark_level_census(&f8, 1.0 / 32.0).unwrap();
        assert_eq!(c10, 32);
        assert_eq!(c8, 8);
        assert_eq!(c10, 4 * c8);
    }

    #[test]
    fn processed_png_round_trips_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        for channels in [1usize, 2, 3] {
            for depth in [8u32, 16] {
                let n = 7 * 5;
                let img = ProcessedImage {
                    width: 7,
                    height: 5,
                    channels,
                    data: (0..channels * n)
                        .map(|i| i as f64 / (channels * n - 1) as f64)
                        .collect(),
                    pipeline_tag: "demosaic-bilinear|gamma-0.30".into(),
                };
                let base = dir.path().join(format!("img-{channels}-{depth}"));
                save_processed(&img, &base, depth).unwrap();
                let back = load_processed(&base).unwrap();
                assert_eq!(back.pipeline_tag, img.pipeline_tag);
                assert_eq!(back.channels, channels);
                let step = 1.0 / ((1u32 << depth) - 1) as f64;
                for (a, b) in img.data.iter().zip(&back.data) {
                    assert!(
                        (a - b).abs() <= 0.5 * step + 1e-12,
                        "{a} vs {b} at depth {depth}"
                    );
                }
            }
        }
    }
}
