//! Sensor simulation: optics blur, pixel binning, photon-to-electron
//! conversion with shot and read noise, and ADC quantization.
//!
//! The chain is strictly feed-forward:
//!
//! ```text
//! SceneIrradiance --apply_psf--> SceneIrradiance --resample--> SceneIrradiance
//!     --expose--> ElectronImage --quantize--> RawFrame
//! ```
//!
//! Units: irradiance samples are photons / s / um^2 per band, pixel pitch is
//! in um, so `irradiance * pitch^2 * exposure` is an expected photon count.
//! Electrons are obtained by weighting bands with the pixel's color-filter
//! response and the sensor quantum efficiency. Noise is sampled per pixel
//! from a counter-based generator keyed by `(seed, pixel index)`, which makes
//! images bit-identical for any thread count.

use std::path::{Path, PathBuf};

use rand_distr::Distribution;

use crate::error::{Error, Result};
use crate::parallel;
use crate::pfm;
use crate::rng::PixelRng;
use crate::scene_io::SceneIrradiance;

/// Full width at half maximum of a Gaussian in units of its sigma.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3; // 2 sqrt(2 ln 2)

// ---------------------------------------------------------------------------
// Color filter arrays
// ---------------------------------------------------------------------------

/// One filter class of a CFA: a name and per-band transmission weights.
///
/// A weight vector of length 1 broadcasts over any number of scene bands
/// (used for panchromatic "clear" filters); otherwise its length must equal
/// the scene band count.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterClass {
    /// Short class name, e.g. `"R"` or `"C"`.
    pub name: String,
    /// Per-band weights in `[0, 1]`.
    pub band_weights: Vec<f64>,
}

/// A periodic color-filter-array tile.
#[derive(Debug, Clone, PartialEq)]
pub struct CfaPattern {
    /// Canonical pattern name (`"mono"`, `"rggb"`, `"rccc"`).
    pub name: String,
    /// Tile width in pixels.
    pub tile_width: usize,
    /// Tile height in pixels.
    pub tile_height: usize,
    /// Row-major filter-class index per tile position.
    pub filter_ids: Vec<usize>,
    /// The filter classes indexed by `filter_ids`.
    pub classes: Vec<FilterClass>,
}

impl CfaPattern {
    /// 1x1 panchromatic array: every pixel sees every band.
    pub fn monochrome() -> Self {
        CfaPattern {
            name: "mono".into(),
            tile_width: 1,
            tile_height: 1,
            filter_ids: vec![0],
            classes: vec![FilterClass {
                name: "C".into(),
                band_weights: vec![1.0],
            }],
        }
    }

    /// 2x2 Bayer tile `R G / G B` over three scene bands.
    pub fn bayer_rggb() -> Self {
        CfaPattern {
            name: "rggb".into(),
            tile_width: 2,
            tile_height: 2,
            filter_ids: vec![0, 1, 1, 2],
            classes: vec![
                FilterClass {
                    name: "R".into(),
                    band_weights: vec![1.0, 0.0, 0.0],
                },
                FilterClass {
                    name: "G".into(),
                    band_weights: vec![0.0, 1.0, 0.0],
                },
                FilterClass {
                    name: "B".into(),
                    band_weights: vec![0.0, 0.0, 1.0],
                },
            ],
        }
    }

    /// 2x2 red/clear tile `R C / C C`: red at tile origin, panchromatic
    /// clear elsewhere. Common in automotive sensing.
    pub fn rccc() -> Self {
        CfaPattern {
            name: "rccc".into(),
            tile_width: 2,
            tile_height: 2,
            filter_ids: vec![0, 1, 1, 1],
            classes: vec![
                FilterClass {
                    name: "R".into(),
                    band_weights: vec![1.0, 0.0, 0.0],
                },
                FilterClass {
                    name: "C".into(),
                    band_weights: vec![1.0],
                },
            ],
        }
    }

    /// Looks a canonical pattern up by name.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "mono" => Ok(CfaPattern::monochrome()),
            "rggb" => Ok(CfaPattern::bayer_rggb()),
            "rccc" => Ok(CfaPattern::rccc()),
            other => Err(Error::invalid(format!("unknown CFA pattern {other:?}"))),
        }
    }

    /// Filter-class index under pixel `(row, col)`.
    #[inline]
    pub fn class_index_at(&self, row: usize, col: usize) -> usize {
        self.filter_ids[(row % self.tile_height) * self.tile_width + col % self.tile_width]
    }

    /// Filter class under pixel `(row, col)`.
    #[inline]
    pub fn class_at(&self, row: usize, col: usize) -> &FilterClass {
        &self.classes[self.class_index_at(row, col)]
    }

    fn validate(&self) -> Result<()> {
        if self.tile_width == 0 || self.tile_height == 0 {
            return Err(Error::invalid("CFA tile has zero extent"));
        }
        if self.filter_ids.len() != self.tile_width * self.tile_height {
            return Err(Error::invalid("CFA filter_ids do not cover the tile"));
        }
        if self.classes.is_empty() {
            return Err(Error::invalid("CFA has no filter classes"));
        }
        if self.filter_ids.iter().any(|&id| id >= self.classes.len()) {
            return Err(Error::invalid("CFA filter id out of range"));
        }
        for class in &self.classes {
            if class.band_weights.is_empty() {
                return Err(Error::invalid(format!(
                    "CFA class {:?} has no band weights",
                    class.name
                )));
            }
            if class
                .band_weights
                .iter()
                .any(|&w| !(0.0..=1.0).contains(&w))
            {
                return Err(Error::invalid(format!(
                    "CFA class {:?} has weights outside [0, 1]",
                    class.name
                )));
            }
        }
        Ok(())
    }
}

/// Expands a possibly-broadcast weight vector to one weight per band.
fn resolve_weights(weights: &[f64], bands: usize, what: &str) -> Result<Vec<f64>> {
    if weights.len() == 1 {
        Ok(vec![weights[0]; bands])
    } else if weights.len() == bands {
        Ok(weights.to_vec())
    } else {
        Err(Error::invalid(format!(
            "{what} has {} weights for {bands} scene bands",
            weights.len()
        )))
    }
}

// ---------------------------------------------------------------------------
// Sensor configuration and presets
// ---------------------------------------------------------------------------

/// Electrical and geometric description of a sensor configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorConfig {
    /// Configuration name, recorded in raw-frame metadata.
    pub name: String,
    /// Pixel pitch in micrometers.
    pub pixel_pitch_um: f64,
    /// Active array width in pixels.
    pub array_width_px: usize,
    /// Active array height in pixels.
    pub array_height_px: usize,
    /// Color filter array.
    pub cfa: CfaPattern,
    /// Per-band quantum efficiency in `[0, 1]`; length 1 broadcasts.
    pub qe: Vec<f64>,
    /// Full-well capacity in electrons.
    pub well_capacity_e: f64,
    /// Read-noise standard deviation in electrons.
    pub read_noise_e: f64,
    /// Dark current in electrons per second.
    pub dark_current_e_per_s: f64,
    /// Source-follower conversion gain in volts per electron.
    pub conversion_gain_v_per_e: f64,
    /// Usable voltage swing in volts.
    pub voltage_swing_v: f64,
    /// ADC resolution in bits (1..=16).
    pub bit_depth: u32,
    /// Optics blur full width at half maximum in micrometers (0 = none).
    pub psf_fwhm_um: f64,
    /// When false, exposure returns expected electrons with no sampling.
    pub noise_enabled: bool,
}

/// Active-array dimensions for the fixed-die presets, per pixel pitch.
const PRESET_GEOMETRY: [(f64, usize, usize); 4] = [
    (1.5, 2546, 1188),
    (3.0, 1268, 594),
    (4.5, 950, 446),
    (6.0, 634, 298),
];

impl SensorConfig {
    /// Builds one of the automotive-sensor presets.
    ///
    /// `name` selects the color filter (`"mt9v024-mono"`, `"mt9v024-rgb"`,
    /// `"mt9v024-rccc"`), `pixel_pitch_um` one of `{1.5, 3, 4.5, 6}`. The
    /// presets share the electrical parameters of a 55 dB automotive sensor
    /// (5620 e- full well, 10 e- read noise) and a fixed 1.5 um optics blur;
    /// the array dimensions per pitch are fixed by the die layout.
    pub fn preset(name: &str, pixel_pitch_um: f64) -> Result<Self> {
        let cfa = match name {
            "mt9v024-mono" => CfaPattern::monochrome(),
            "mt9v024-rgb" => CfaPattern::bayer_rggb(),
            "mt9v024-rccc" => CfaPattern::rccc(),
            other => return Err(Error::invalid(format!("unknown sensor preset {other:?}"))),
        };
        let (_, w, h) = PRESET_GEOMETRY
            .iter()
            .find(|(p, _, _)| (p - pixel_pitch_um).abs() < 1e-9)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "preset pitch {pixel_pitch_um} um not in {{1.5, 3, 4.5, 6}}"
                ))
            })?;
        let well = 5620.0;
        let swing = 1.0;
        let config = SensorConfig {
            name: name.to_string(),
            pixel_pitch_um,
            array_width_px: *w,
            array_height_px: *h,
            cfa,
            qe: vec![1.0],
            well_capacity_e: well,
            read_noise_e: 10.0,
            dark_current_e_per_s: 0.0,
            // Full well maps exactly onto the full swing.
            conversion_gain_v_per_e: swing / well,
            voltage_swing_v: swing,
            bit_depth: 10,
            psf_fwhm_um: 1.5,
            noise_enabled: true,
        };
        config.validate()?;
        Ok(config)
    }

    /// Linear dynamic range, `20 log10(well / read_noise)`, in dB.
    pub fn dynamic_range_db(&self) -> f64 {
        20.0 * (self.well_capacity_e / self.read_noise_e).log10()
    }

    /// Largest representable digital number, `2^bit_depth - 1`.
    pub fn dn_max(&self) -> u32 {
        (1u32 << self.bit_depth) - 1
    }

    /// Checks every configuration invariant.
    pub fn validate(&self) -> Result<()> {
        if self.array_width_px == 0 || self.array_height_px == 0 {
            return Err(Error::invalid("sensor array has zero extent"));
        }
        if !(self.pixel_pitch_um.is_finite() && self.pixel_pitch_um > 0.0) {
            return Err(Error::invalid("pixel pitch must be positive"));
        }
        self.cfa.validate()?;
        if self.qe.is_empty() || self.qe.iter().any(|&q| !(0.0..=1.0).contains(&q)) {
            return Err(Error::invalid("quantum efficiency must be in [0, 1]"));
        }
        if !(self.well_capacity_e.is_finite() && self.well_capacity_e > 0.0) {
            return Err(Error::invalid("well capacity must be positive"));
        }
        if !(self.read_noise_e.is_finite() && self.read_noise_e >= 0.0) {
            return Err(Error::invalid("read noise must be non-negative"));
        }
        if !(self.dark_current_e_per_s.is_finite() && self.dark_current_e_per_s >= 0.0) {
            return Err(Error::invalid("dark current must be non-negative"));
        }
        if !(self.conversion_gain_v_per_e.is_finite() && self.conversion_gain_v_per_e > 0.0) {
            return Err(Error::invalid("conversion gain must be positive"));
        }
        if !(self.voltage_swing_v.is_finite() && self.voltage_swing_v > 0.0) {
            return Err(Error::invalid("voltage swing must be positive"));
        }
        if !(1..=16).contains(&self.bit_depth) {
            return Err(Error::invalid(format!(
                "bit depth {} outside 1..=16",
                self.bit_depth
            )));
        }
        if !(self.psf_fwhm_um.is_finite() && self.psf_fwhm_um >= 0.0) {
            return Err(Error::invalid("PSF FWHM must be non-negative"));
        }
        // Saturation must be reachable: a full well must reach the swing.
        let full_well_v = self.well_capacity_e * self.conversion_gain_v_per_e;
        if full_well_v < self.voltage_swing_v * (1.0 - 1e-12) {
            return Err(Error::invalid(format!(
                "full well yields {full_well_v} V, below the {} V swing",
                self.voltage_swing_v
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Optics blur
// ---------------------------------------------------------------------------

/// Mirrors an out-of-range index back into `0..n` (symmetric reflection,
/// edge sample repeated: ..., 1, 0 | 0, 1, ...).
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

/// Normalized Gaussian taps for radius `-r..=r`.
fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil().max(1.0) as isize;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= total;
    }
    taps
}

/// Blurs every band with an isotropic Gaussian point-spread function of the
/// given full width at half maximum (in micrometers on the scene grid).
///
/// The convolution is separable with symmetric-reflection borders, so the
/// total irradiance of each band is conserved to floating-point accuracy.
/// `fwhm_um == 0` returns the scene unchanged.
pub fn apply_psf(scene: &SceneIrradiance, fwhm_um: f64) -> Result<SceneIrradiance> {
    if !(fwhm_um.is_finite() && fwhm_um >= 0.0) {
        return Err(Error::invalid(format!("invalid PSF FWHM {fwhm_um}")));
    }
    let sigma_px = fwhm_um / FWHM_PER_SIGMA / scene.pixel_pitch_um();
    if sigma_px < 1e-9 {
        return Ok(scene.clone());
    }
    let taps = gaussian_taps(sigma_px);
    let radius = (taps.len() / 2) as isize;
    let (w, h) = (scene.width(), scene.height());

    let mut out = Vec::with_capacity(scene.data().len());
    for b in 0..scene.bands() {
        let band = scene.band(b);
        // Horizontal pass in f64 to keep the final rounding step small.
        let mut tmp = vec![0.0f64; w * h];
        parallel::for_each_row(&mut tmp, w, |r, row| {
            let src = &band[r * w..(r + 1) * w];
            for (c, out_v) in row.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (k, &t) in taps.iter().enumerate() {
                    let i = reflect(c as isize + k as isize - radius, w);
                    acc += src[i] as f64 * t;
                }
                *out_v = acc;
            }
        });
        // Vertical pass.
        let mut blurred = vec![0.0f32; w * h];
        parallel::for_each_row(&mut blurred, w, |r, row| {
            for (c, out_v) in row.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (k, &t) in taps.iter().enumerate() {
                    let i = reflect(r as isize + k as isize - radius, h);
                    acc += tmp[i * w + c] * t;
                }
                *out_v = acc as f32;
            }
        });
        out.extend_from_slice(&blurred);
    }

    Ok(SceneIrradiance::from_parts_unchecked(
        scene.scene_id().to_string(),
        w,
        h,
        scene.bands(),
        scene.pixel_pitch_um(),
        scene.band_names().to_vec(),
        out,
    ))
}

// ---------------------------------------------------------------------------
// Resampling and cropping
// ---------------------------------------------------------------------------

/// Bins a scene down to the sensor pitch by averaging `r x r` blocks, where
/// `r = sensor_pitch / scene_pitch` must be a positive integer. Output
/// dimensions are `floor(input / r)`; trailing rows and columns that do not
/// fill a block are dropped. Averaging (not summing) keeps the per-area
/// irradiance convention, so the expected photon count per area is
/// conserved.
pub fn resample_scene_to_sensor(
    scene: &SceneIrradiance,
    config: &SensorConfig,
) -> Result<SceneIrradiance> {
    let ratio = config.pixel_pitch_um / scene.pixel_pitch_um();
    let r = ratio.round();
    if !(ratio.is_finite() && r >= 1.0 && (ratio - r).abs() <= 1e-9 * r) {
        return Err(Error::invalid(format!(
            "sensor pitch {} um is not an integer multiple of scene pitch {} um",
            config.pixel_pitch_um,
            scene.pixel_pitch_um()
        )));
    }
    let r = r as usize;
    if r == 1 {
        let mut out = scene.clone();
        // Adopt the sensor's pitch verbatim so downstream equality checks
        // are exact even when the input differed in the last ulp.
        out = SceneIrradiance::from_parts_unchecked(
            out.scene_id().to_string(),
            out.width(),
            out.height(),
            out.bands(),
            config.pixel_pitch_um,
            out.band_names().to_vec(),
            out.data().to_vec(),
        );
        return Ok(out);
    }
    let out_w = scene.width() / r;
    let out_h = scene.height() / r;
    if out_w == 0 || out_h == 0 {
        return Err(Error::invalid(format!(
            "scene {}x{} too small to bin by {r}",
            scene.width(),
            scene.height()
        )));
    }

    let in_w = scene.width();
    let inv = 1.0 / (r * r) as f64;
    let mut out = Vec::with_capacity(out_w * out_h * scene.bands());
    for b in 0..scene.bands() {
        let band = scene.band(b);
        let mut plane = vec![0.0f32; out_w * out_h];
        parallel::for_each_row(&mut plane, out_w, |or, row| {
            for (oc, out_v) in row.iter_mut().enumerate() {
                let mut acc = 0.0f64;
                for dr in 0..r {
                    let base = (or * r + dr) * in_w + oc * r;
                    for dc in 0..r {
                        acc += band[base + dc] as f64;
                    }
                }
                *out_v = (acc * inv) as f32;
            }
        });
        out.extend_from_slice(&plane);
    }

    Ok(SceneIrradiance::from_parts_unchecked(
        scene.scene_id().to_string(),
        out_w,
        out_h,
        scene.bands(),
        config.pixel_pitch_um,
        scene.band_names().to_vec(),
        out,
    ))
}

/// Keeps the top-left `width x height` window of a scene. Anchoring at the
/// origin means label coordinates survive unchanged.
pub fn crop_scene(scene: &SceneIrradiance, width: usize, height: usize) -> Result<SceneIrradiance> {
    if width == 0 || height == 0 || width > scene.width() || height > scene.height() {
        return Err(Error::invalid(format!(
            "cannot crop {}x{} out of {}x{}",
            width,
            height,
            scene.width(),
            scene.height()
        )));
    }
    if width == scene.width() && height == scene.height() {
        return Ok(scene.clone());
    }
    let mut out = Vec::with_capacity(width * height * scene.bands());
    for b in 0..scene.bands() {
        let band = scene.band(b);
        for r in 0..height {
            out.extend_from_slice(&band[r * scene.width()..r * scene.width() + width]);
        }
    }
    Ok(SceneIrradiance::from_parts_unchecked(
        scene.scene_id().to_string(),
        width,
        height,
        scene.bands(),
        scene.pixel_pitch_um(),
        scene.band_names().to_vec(),
        out,
    ))
}

/// Makes a scene compatible with a sensor: integer-ratio binning down to the
/// sensor pitch followed by a top-left crop to the active array. Errors if
/// the binned scene is smaller than the array.
pub fn prepare_scene_for_sensor(
    scene: &SceneIrradiance,
    config: &SensorConfig,
) -> Result<SceneIrradiance> {
    let binned = resample_scene_to_sensor(scene, config)?;
    if binned.width() < config.array_width_px || binned.height() < config.array_height_px {
        return Err(Error::invalid(format!(
            "scene {:?} bins to {}x{}, smaller than the {}x{} array",
            scene.scene_id(),
            binned.width(),
            binned.height(),
            config.array_width_px,
            config.array_height_px
        )));
    }
    crop_scene(&binned, config.array_width_px, config.array_height_px)
}

// ---------------------------------------------------------------------------
// Exposure and quantization
// ---------------------------------------------------------------------------

/// Collected photo-electrons per pixel after one exposure.
#[derive(Debug, Clone)]
pub struct ElectronImage {
    /// Pixels per row.
    pub width: usize,
    /// Rows.
    pub height: usize,
    /// Electrons per pixel, clamped to `[0, well_capacity]`.
    pub electrons: Vec<f64>,
    /// Exposure duration in seconds.
    pub exposure_s: f64,
    /// True where the pre-clip electron count reached the well capacity.
    pub saturated: Vec<bool>,
    /// Seed the noise was drawn under (recorded for provenance).
    pub rng_seed: u64,
}

/// A quantized sensor readout.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFrame {
    /// Pixels per row.
    pub width: usize,
    /// Rows.
    pub height: usize,
    /// Digital numbers, each `< 2^bit_depth`.
    pub dn: Vec<u16>,
    /// ADC resolution in bits.
    pub bit_depth: u32,
    /// CFA the frame was captured through.
    pub cfa: CfaPattern,
    /// Exposure duration in seconds.
    pub exposure_s: f64,
    /// Name of the producing sensor configuration.
    pub sensor_name: String,
    /// Seed the noise was drawn under.
    pub rng_seed: u64,
    /// Pixel pitch of the producing sensor, in micrometers.
    pub pixel_pitch_um: f64,
}

impl RawFrame {
    /// Digital number at `(row, col)`.
    #[inline]
    pub fn dn_at(&self, row: usize, col: usize) -> u16 {
        self.dn[row * self.width + col]
    }

    /// Largest representable digital number.
    pub fn dn_max(&self) -> u32 {
        (1u32 << self.bit_depth) - 1
    }
}

/// Per-class effective band weights (filter transmission times QE),
/// resolved against a concrete band count.
fn effective_weights(config: &SensorConfig, bands: usize) -> Result<Vec<Vec<f64>>> {
    let qe = resolve_weights(&config.qe, bands, "quantum efficiency")?;
    config
        .cfa
        .classes
        .iter()
        .map(|class| {
            let w = resolve_weights(
                &class.band_weights,
                bands,
                &format!("CFA class {:?}", class.name),
            )?;
            Ok(w.iter().zip(&qe).map(|(a, b)| a * b).collect())
        })
        .collect()
}

/// Expected electrons per second at one pixel (photo current plus dark
/// current), used by both exposure and metering so the two can never
/// disagree.
#[inline]
fn electron_rate(
    scene: &SceneIrradiance,
    weights: &[Vec<f64>],
    config: &SensorConfig,
    row: usize,
    col: usize,
) -> f64 {
    let area = config.pixel_pitch_um * config.pixel_pitch_um;
    let w = &weights[config.cfa.class_index_at(row, col)];
    let plane = scene.width() * scene.height();
    let idx = row * scene.width() + col;
    let mut rate = 0.0;
    for (b, wb) in w.iter().enumerate() {
        rate += scene.data()[b * plane + idx] as f64 * wb;
    }
    rate * area + config.dark_current_e_per_s
}

/// Expected electrons per second for every pixel, row-major. This is the
/// noise-free quantity exposure metering operates on.
pub fn electron_rates(scene: &SceneIrradiance, config: &SensorConfig) -> Result<Vec<f64>> {
    check_scene_matches_sensor(scene, config)?;
    let weights = effective_weights(config, scene.bands())?;
    let (w, h) = (scene.width(), scene.height());
    let mut rates = vec![0.0f64; w * h];
    parallel::for_each_row(&mut rates, w, |r, row| {
        for (c, v) in row.iter_mut().enumerate() {
            *v = electron_rate(scene, &weights, config, r, c);
        }
    });
    Ok(rates)
}

fn check_scene_matches_sensor(scene: &SceneIrradiance, config: &SensorConfig) -> Result<()> {
    config.validate()?;
    if scene.width() != config.array_width_px || scene.height() != config.array_height_px {
        return Err(Error::invalid(format!(
            "scene {:?} is {}x{}, sensor array is {}x{}",
            scene.scene_id(),
            scene.width(),
            scene.height(),
            config.array_width_px,
            config.array_height_px
        )));
    }
    let rel = (scene.pixel_pitch_um() - config.pixel_pitch_um).abs() / config.pixel_pitch_um;
    if rel > 1e-9 {
        return Err(Error::invalid(format!(
            "scene pitch {} um does not match sensor pitch {} um",
            scene.pixel_pitch_um(),
            config.pixel_pitch_um
        )));
    }
    Ok(())
}

/// Integrates a scene on the sensor for `exposure_s` seconds.
///
/// Each pixel's expected electron count is its band-weighted photon count
/// plus dark current. With noise enabled, the realized count is a Poisson
/// draw (shot noise) plus zero-mean Gaussian read noise, each from the
/// pixel's own `(seed, index)`-keyed generator; with noise disabled the
/// expectation is returned directly. Counts are clamped to
/// `[0, well_capacity]` and the saturation mask records where the pre-clip
/// value reached the well.
pub fn expose(
    scene: &SceneIrradiance,
    config: &SensorConfig,
    exposure_s: f64,
    seed: u64,
) -> Result<ElectronImage> {
    check_scene_matches_sensor(scene, config)?;
    if !(exposure_s.is_finite() && exposure_s > 0.0) {
        return Err(Error::invalid(format!(
            "exposure duration must be positive, got {exposure_s}"
        )));
    }
    let weights = effective_weights(config, scene.bands())?;
    let (w, h) = (scene.width(), scene.height());
    let well = config.well_capacity_e;
    let read = config.read_noise_e;
    let noise = config.noise_enabled;

    let rows: Vec<(Vec<f64>, Vec<bool>)> = parallel::map_indices(h, |r| {
        let mut electrons = Vec::with_capacity(w);
        let mut saturated = Vec::with_capacity(w);
        for c in 0..w {
            let mean = electron_rate(scene, &weights, config, r, c) * exposure_s;
            let e = if noise {
                let mut rng = PixelRng::keyed(seed, (r * w + c) as u64);
                let shot = if mean > 0.0 {
                    rand_distr::Poisson::new(mean)
                        .expect("positive finite mean")
                        .sample(&mut rng)
                } else {
                    0.0
                };
                let readout = if read > 0.0 {
                    rand_distr::Normal::new(0.0, read)
                        .expect("positive finite sigma")
                        .sample(&mut rng)
                } else {
                    0.0
                };
                shot + readout
            } else {
                mean
            };
            saturated.push(e >= well);
            electrons.push(e.clamp(0.0, well));
        }
        (electrons, saturated)
    });

    let mut electrons = Vec::with_capacity(w * h);
    let mut saturated = Vec::with_capacity(w * h);
    for (e, s) in rows {
        electrons.extend_from_slice(&e);
        saturated.extend_from_slice(&s);
    }
    Ok(ElectronImage {
        width: w,
        height: h,
        electrons,
        exposure_s,
        saturated,
        rng_seed: seed,
    })
}

/// Converts electrons to digital numbers through the source follower and a
/// floor ADC: `dn = min(2^N - 1, floor(v / swing * 2^N))` with
/// `v = electrons * conversion_gain` clamped to `[0, swing]`.
///
/// Because `t * 2^N` only rescales `t = v / swing` by a power of two, the
/// same voltage quantized at depths `N + k` and `N` satisfies
/// `floor(dn_{N+k} / 2^k) == dn_N` exactly.
pub fn quantize(image: &ElectronImage, config: &SensorConfig) -> Result<RawFrame> {
    config.validate()?;
    if image.electrons.len() != image.width * image.height {
        return Err(Error::invalid("electron image has inconsistent geometry"));
    }
    let swing = config.voltage_swing_v;
    let gain = config.conversion_gain_v_per_e;
    let levels = (1u64 << config.bit_depth) as f64;
    let dn_cap = config.dn_max() as f64;

    let mut dn = vec![0u16; image.electrons.len()];
    parallel::for_each_row(&mut dn, image.width, |r, row| {
        for (c, out) in row.iter_mut().enumerate() {
            let v = (image.electrons[r * image.width + c] * gain).clamp(0.0, swing);
            let t = v / swing;
            *out = (t * levels).floor().min(dn_cap) as u16;
        }
    });

    Ok(RawFrame {
        width: image.width,
        height: image.height,
        dn,
        bit_depth: config.bit_depth,
        cfa: config.cfa.clone(),
        exposure_s: image.exposure_s,
        sensor_name: config.name.clone(),
        rng_seed: image.rng_seed,
        pixel_pitch_um: config.pixel_pitch_um,
    })
}

// ---------------------------------------------------------------------------
// Raw frame persistence
// ---------------------------------------------------------------------------

fn raw_paths(base: &Path) -> (PathBuf, PathBuf) {
    let with = |ext: &str| {
        let mut name = base.file_name().unwrap_or_default().to_os_string();
        name.push(ext);
        base.with_file_name(name)
    };
    (with(".raw.png"), with(".raw.meta"))
}

/// Writes a raw frame as a 16-bit grayscale PNG (digital numbers stored
/// verbatim, not bit-aligned) plus a `.raw.meta` sidecar. Atomic.
pub fn save_raw(frame: &RawFrame, base: &Path) -> Result<()> {
    if frame.dn.len() != frame.width * frame.height {
        return Err(Error::invalid("raw frame has inconsistent geometry"));
    }
    let cap = frame.dn_max() as u16;
    if frame.dn.iter().any(|&v| v > cap) {
        return Err(Error::invalid(format!(
            "raw frame contains values above 2^{} - 1",
            frame.bit_depth
        )));
    }
    let (png_path, meta_path) = raw_paths(base);

    let buffer: image::ImageBuffer<image::Luma<u16>, Vec<u16>> =
        image::ImageBuffer::from_vec(frame.width as u32, frame.height as u32, frame.dn.clone())
            .expect("geometry checked above");
    let mut bytes = Vec::new();
    image::DynamicImage::ImageLuma16(buffer)
        .write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(|e| Error::invalid(format!("PNG encode failed: {e}")))?;

    let meta = format!(
        "bit_depth={}\ncfa={}\nexposure_s={}\nsensor_name={}\nrng_seed={}\npixel_pitch_um={}\n",
        frame.bit_depth,
        frame.cfa.name,
        frame.exposure_s,
        frame.sensor_name,
        frame.rng_seed,
        frame.pixel_pitch_um
    );

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

/// Reads a raw frame bundle written by [`save_raw`]. `base` may be the
/// bundle base, the `.raw.png`, or the `.raw.meta` path.
pub fn load_raw(path: &Path) -> Result<RawFrame> {
    let s = path.to_string_lossy();
    let base = if let Some(b) = s.strip_suffix(".raw.png") {
        PathBuf::from(b)
    } else if let Some(b) = s.strip_suffix(".raw.meta") {
        PathBuf::from(b)
    } else {
        path.to_path_buf()
    };
    let (png_path, meta_path) = raw_paths(&base);

    let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let mut bit_depth = None;
    let mut cfa = None;
    let mut exposure_s = None;
    let mut sensor_name = None;
    let mut rng_seed = None;
    let mut pixel_pitch_um = None;
    for (i, line) in text.lines().enumerate() {
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::malformed(&meta_path, i + 1, "expected key=value"));
        };
        let bad = |what: &str| Error::malformed(&meta_path, i + 1, format!("bad {what} {v:?}"));
        match k {
            "bit_depth" => bit_depth = Some(v.parse::<u32>().map_err(|_| bad("bit_depth"))?),
            "cfa" => cfa = Some(CfaPattern::from_name(v)?),
            "exposure_s" => exposure_s = Some(v.parse::<f64>().map_err(|_| bad("exposure_s"))?),
            "sensor_name" => sensor_name = Some(v.to_string()),
            "rng_seed" => rng_seed = Some(v.parse::<u64>().map_err(|_| bad("rng_seed"))?),
            "pixel_pitch_um" => {
                pixel_pitch_um = Some(v.parse::<f64>().map_err(|_| bad("pixel_pitch_um"))?)
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
    let missing = |what: &str| Error::malformed(&meta_path, 0, format!("missing key {what:?}"));
    let bit_depth = bit_depth.ok_or_else(|| missing("bit_depth"))?;
    if !(1..=16).contains(&bit_depth) {
        return Err(Error::malformed(&meta_path, 0, "bit_depth outside 1..=16"));
    }

    let bytes = std::fs::read(&png_path).map_err(|e| Error::io(&png_path, e))?;
    let decoded = image::load_from_memory(&bytes)
        .map_err(|e| Error::malformed(&png_path, 0, format!("PNG decode failed: {e}")))?;
    let gray = match decoded {
        image::DynamicImage::ImageLuma16(buf) => buf,
        other => other.to_luma16(),
    };
    let (width, height) = (gray.width() as usize, gray.height() as usize);
    let dn: Vec<u16> = gray.into_raw();
    let cap = ((1u32 << bit_depth) - 1) as u16;
    if dn.iter().any(|&v| v > cap) {
        return Err(Error::malformed(
            &png_path,
            0,
            format!("sample above 2^{bit_depth} - 1"),
        ));
    }

    Ok(RawFrame {
        width,
        height,
        dn,
        bit_depth,
        cfa: cfa.ok_or_else(|| missing("cfa"))?,
        exposure_s: exposure_s.ok_or_else(|| missing("exposure_s"))?,
        sensor_name: sensor_name.ok_or_else(|| missing("sensor_name"))?,
        rng_seed: rng_seed.ok_or_else(|| missing("rng_seed"))?,
        pixel_pitch_um: pixel_pitch_um.ok_or_else(|| missing("pixel_pitch_um"))?,
    })
}
