//! Exposure control: global, center-weighted, and bracketed policies, plus
//! HDR combination of bracketed captures.
//!
//! Metering works on the noise-free expected voltage rate (volts per second
//! of integration) so that a given scene always meters to the same duration.
//! The metering statistic is a high percentile rather than the maximum, which
//! keeps single-pixel speculars from driving the exposure.

use crate::error::{Error, Result};
use crate::parallel;
use crate::scene_io::SceneIrradiance;
use crate::sensor::{self, RawFrame, SensorConfig};

/// Which exposure-control algorithm to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    /// Meter over the whole frame.
    Global,
    /// Meter over a configurable normalized window (default: the road area
    /// in front of the car).
    CenterWeighted,
    /// Skip metering; capture a fixed ladder of durations and fuse them.
    Bracketed,
}

impl PolicyKind {
    /// Parses `"global"`, `"center-weighted"`, or `"bracketed"`.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "global" => Ok(PolicyKind::Global),
            "center-weighted" => Ok(PolicyKind::CenterWeighted),
            "bracketed" => Ok(PolicyKind::Bracketed),
            other => Err(Error::invalid(format!(
                "unknown exposure policy {other:?} (expected global, center-weighted, or bracketed)"
            ))),
        }
    }

    /// Canonical name of the policy.
    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::Global => "global",
            PolicyKind::CenterWeighted => "center-weighted",
            PolicyKind::Bracketed => "bracketed",
        }
    }
}

/// Axis-aligned rectangle in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormRect {
    /// Left edge in `[0, 1)`.
    pub x0: f64,
    /// Right edge in `(x0, 1]`.
    pub x1: f64,
    /// Top edge in `[0, 1)`.
    pub y0: f64,
    /// Bottom edge in `(y0, 1]`.
    pub y1: f64,
}

impl NormRect {
    /// Full-frame window.
    pub fn full() -> Self {
        NormRect {
            x0: 0.0,
            x1: 1.0,
            y0: 0.0,
            y1: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = 0.0 <= self.x0
            && self.x0 < self.x1
            && self.x1 <= 1.0
            && 0.0 <= self.y0
            && self.y0 < self.y1
            && self.y1 <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "degenerate metering window x [{}, {}], y [{}, {}]",
                self.x0, self.x1, self.y0, self.y1
            )))
        }
    }

    /// Pixel bounds `(col0..col1, row0..row1)` on a `w x h` grid. Edges map
    /// outward (floor on the low edge, ceil on the high edge) so a valid
    /// rectangle always covers at least one pixel.
    fn pixel_bounds(&self, w: usize, h: usize) -> (usize, usize, usize, usize) {
        let c0 = (self.x0 * w as f64).floor() as usize;
        let c1 = ((self.x1 * w as f64).ceil() as usize).min(w);
        let r0 = (self.y0 * h as f64).floor() as usize;
        let r1 = ((self.y1 * h as f64).ceil() as usize).min(h);
        (c0, c1.max(c0 + 1), r0, r1.max(r0 + 1))
    }
}

impl Default for NormRect {
    /// The drive-scene default: middle third horizontally, lower middle
    /// vertically.
    fn default() -> Self {
        NormRect {
            x0: 1.0 / 3.0,
            x1: 2.0 / 3.0,
            y0: 0.5,
            y1: 5.0 / 6.0,
        }
    }
}

/// Exposure-control settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposurePolicy {
    /// The algorithm.
    pub kind: PolicyKind,
    /// Fraction of the voltage swing the metering statistic should reach.
    pub target_fraction: f64,
    /// Hard upper bound on exposure duration (frame-rate constraint).
    pub max_duration_s: f64,
    /// Ladder of durations for bracketed capture, ascending.
    pub bracket_durations_s: Vec<f64>,
    /// Percentile of the per-pixel voltage rate used as "brightest region".
    pub metering_percentile: f64,
    /// Metering window for [`PolicyKind::CenterWeighted`].
    pub center_window: NormRect,
}

impl Default for ExposurePolicy {
    /// Center-weighted at 90% of swing, capped at 16 ms (60 fps), with a
    /// 2/4/8 ms bracket ladder.
    fn default() -> Self {
        ExposurePolicy {
            kind: PolicyKind::CenterWeighted,
            target_fraction: 0.9,
            max_duration_s: 0.016,
            bracket_durations_s: vec![0.002, 0.004, 0.008],
            metering_percentile: 99.9,
            center_window: NormRect::default(),
        }
    }
}

impl ExposurePolicy {
    /// Checks every policy invariant.
    pub fn validate(&self) -> Result<()> {
        if !(self.target_fraction > 0.0 && self.target_fraction <= 1.0) {
            return Err(Error::invalid(format!(
                "target fraction {} outside (0, 1]",
                self.target_fraction
            )));
        }
        if !(self.max_duration_s.is_finite() && self.max_duration_s > 0.0) {
            return Err(Error::invalid("max duration must be positive"));
        }
        if self.bracket_durations_s.is_empty() {
            return Err(Error::invalid("bracket ladder is empty"));
        }
        for w in self.bracket_durations_s.windows(2) {
            if !(w[0] < w[1]) {
                return Err(Error::invalid(
                    "bracket durations must be strictly ascending",
                ));
            }
        }
        if !(self.bracket_durations_s[0].is_finite() && self.bracket_durations_s[0] > 0.0) {
            return Err(Error::invalid("bracket durations must be positive"));
        }
        if !(self.metering_percentile > 0.0 && self.metering_percentile <= 100.0) {
            return Err(Error::invalid(format!(
                "metering percentile {} outside (0, 100]",
                self.metering_percentile
            )));
        }
        self.center_window.validate()
    }
}

/// Nearest-rank percentile: the element at rank `ceil(q/100 * n)` (1-based)
/// of the sorted sample. `q = 100` is the maximum.
fn percentile_nearest_rank(mut values: Vec<f64>, q: f64) -> f64 {
    debug_assert!(!values.is_empty());
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len();
    let rank = (q / 100.0 * n as f64).ceil() as usize;
    values[rank.clamp(1, n) - 1]
}

/// Computes the exposure duration a metering policy picks for a scene.
///
/// The per-pixel noise-free voltage rate `r = expected electrons in 1 s *
/// conversion gain` is evaluated over the metering region (the whole frame
/// for Global, the center window for CenterWeighted). With `R` the
/// configured percentile of those rates, the duration is
/// `min(target_fraction * voltage_swing / R, max_duration_s)`; a
/// completely dark region (`R = 0`) meters to the cap.
pub fn meter(
    scene: &SceneIrradiance,
    config: &SensorConfig,
    policy: &ExposurePolicy,
) -> Result<f64> {
    policy.validate()?;
    let window = match policy.kind {
        PolicyKind::Global => NormRect::full(),
        PolicyKind::CenterWeighted => policy.center_window,
        PolicyKind::Bracketed => {
            return Err(Error::invalid("bracketed policy does not meter"));
        }
    };
    let rates = sensor::electron_rates(scene, config)?;
    let (c0, c1, r0, r1) = window.pixel_bounds(scene.width(), scene.height());
    let mut region = Vec::with_capacity((c1 - c0) * (r1 - r0));
    for r in r0..r1 {
        for c in c0..c1 {
            region.push(rates[r * scene.width() + c] * config.conversion_gain_v_per_e);
        }
    }
    let rate_v = percentile_nearest_rank(region, policy.metering_percentile);
    if rate_v <= 0.0 {
        return Ok(policy.max_duration_s);
    }
    Ok((policy.target_fraction * config.voltage_swing_v / rate_v).min(policy.max_duration_s))
}

/// Captures one raw frame under a policy.
///
/// Global and CenterWeighted meter first and expose once with `seed`.
/// Bracketed exposes once per ladder duration with seeds `seed`, `seed + 1`,
/// ... and fuses the results with [`hdr_combine`]; the output records the
/// longest ladder duration as its effective exposure.
pub fn capture(
    scene: &SceneIrradiance,
    config: &SensorConfig,
    policy: &ExposurePolicy,
    seed: u64,
) -> Result<RawFrame> {
    policy.validate()?;
    match policy.kind {
        PolicyKind::Global | PolicyKind::CenterWeighted => {
            let t = meter(scene, config, policy)?;
            let electrons = sensor::expose(scene, config, t, seed)?;
            sensor::quantize(&electrons, config)
        }
        PolicyKind::Bracketed => {
            let frames = parallel::try_map_indices(policy.bracket_durations_s.len(), |i| {
                let t = policy.bracket_durations_s[i];
                let electrons = sensor::expose(scene, config, t, seed.wrapping_add(i as u64))?;
                sensor::quantize(&electrons, config)
            })?;
            hdr_combine(&frames, config)
        }
    }
}

/// Fuses an ascending exposure ladder into one frame.
///
/// Per pixel, every frame whose digital number is below 98% of full scale
/// contributes `dn / exposure_s` to a plain mean, giving a
/// radiance-proportional rate estimate `L`; if every frame is saturated the
/// shortest frame's rate is used alone. The estimate is rescaled to the
/// longest duration, rounded, and clamped to the output range.
pub fn hdr_combine(frames: &[RawFrame], config: &SensorConfig) -> Result<RawFrame> {
    config.validate()?;
    let Some(first) = frames.first() else {
        return Err(Error::invalid("no frames to combine"));
    };
    for f in frames {
        if f.width != first.width || f.height != first.height {
            return Err(Error::invalid("frames to combine differ in geometry"));
        }
        if f.cfa != first.cfa {
            return Err(Error::invalid("frames to combine differ in CFA"));
        }
        if f.bit_depth != config.bit_depth {
            return Err(Error::invalid(format!(
                "frame bit depth {} does not match configured depth {}",
                f.bit_depth, config.bit_depth
            )));
        }
        if f.dn.len() != f.width * f.height {
            return Err(Error::invalid("frame has inconsistent geometry"));
        }
    }
    for w in frames.windows(2) {
        if !(w[0].exposure_s < w[1].exposure_s) {
            return Err(Error::invalid(
                "frames to combine must have strictly ascending exposures",
            ));
        }
    }

    let dn_max = config.dn_max() as f64;
    let saturation_dn = 0.98 * dn_max;
    let t_long = frames[frames.len() - 1].exposure_s;

    let mut dn = vec![0u16; first.width * first.height];
    parallel::for_each_row(&mut dn, first.width, |r, row| {
        for (c, out) in row.iter_mut().enumerate() {
            let idx = r * first.width + c;
            let mut sum = 0.0;
            let mut count = 0u32;
            for f in frames {
                let v = f.dn[idx] as f64;
                if v < saturation_dn {
                    sum += v / f.exposure_s;
                    count += 1;
                }
            }
            let rate = if count > 0 {
                sum / count as f64
            } else {
                frames[0].dn[idx] as f64 / frames[0].exposure_s
            };
            *out = (rate * t_long).round().clamp(0.0, dn_max) as u16;
        }
    });

    Ok(RawFrame {
        width: first.width,
        height: first.height,
        dn,
        bit_depth: config.bit_depth,
        cfa: first.cfa.clone(),
        exposure_s: t_long,
        sensor_name: first.sensor_name.clone(),
        rng_seed: first.rng_seed,
        pixel_pitch_um: first.pixel_pitch_um,
    })
}
