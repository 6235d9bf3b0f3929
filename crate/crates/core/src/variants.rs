//! Matched dataset-variant generation: render one scene corpus through
//! camera/ISP configurations that differ in exactly one parameter, with
//! correspondingly transformed labels.
//!
//! The experimental-design rules enforced here:
//!
//! * per-scene noise seeds depend only on `(seed_base, scene_id)`, so two
//!   variants see identical noise realizations and differ only through the
//!   varied parameter;
//! * labels are always scaled directly from the base annotation in a single
//!   step (never chained through intermediate resolutions), so coordinates
//!   cannot drift;
//! * each variant's provenance records the varied axis, its value, and a
//!   digest of every *fixed* setting (with the varied field blanked), making
//!   "these manifests differ in exactly one thing" checkable byte-for-byte.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::exposure::{self, ExposurePolicy, PolicyKind};
use crate::isp::{self, GammaMode};
use crate::parallel;
use crate::rng::fnv1a64;
use crate::scene_io::{
    self, DatasetManifest, LabelSet, ManifestEntry,
};
use crate::sensor::{self, CfaPattern, SensorConfig};

/// The camera/ISP parameter a variant family sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariantAxis {
    /// Pixel pitch in micrometers (array geometry follows the preset die).
    PixelPitch,
    /// ADC resolution in bits.
    BitDepth,
    /// Color filter array.
    Cfa,
    /// Exposure-control algorithm.
    ExposurePolicy,
    /// Gamma mode of the processing pipeline.
    Gamma,
    /// Whether demosaicking runs.
    Demosaic,
}

impl VariantAxis {
    /// Canonical axis name used in directory layouts and provenance.
    pub fn name(&self) -> &'static str {
        match self {
            VariantAxis::PixelPitch => "pixel_pitch",
            VariantAxis::BitDepth => "bit_depth",
            VariantAxis::Cfa => "cfa",
            VariantAxis::ExposurePolicy => "exposure_policy",
            VariantAxis::Gamma => "gamma",
            VariantAxis::Demosaic => "demosaic",
        }
    }

    /// Parses a canonical axis name.
    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "pixel_pitch" => VariantAxis::PixelPitch,
            "bit_depth" => VariantAxis::BitDepth,
            "cfa" => VariantAxis::Cfa,
            "exposure_policy" => VariantAxis::ExposurePolicy,
            "gamma" => VariantAxis::Gamma,
            "demosaic" => VariantAxis::Demosaic,
            other => {
                return Err(Error::invalid(format!("unknown variant axis {other:?}")))
            }
        })
    }
}

/// One setting of a variant axis.
#[derive(Debug, Clone, PartialEq)]
pub enum AxisValue {
    /// Pitch in micrometers.
    PixelPitch(f64),
    /// ADC bits.
    BitDepth(u32),
    /// CFA pattern name.
    Cfa(String),
    /// Exposure algorithm.
    ExposurePolicy(PolicyKind),
    /// Gamma mode.
    Gamma(GammaMode),
    /// Demosaicking on or off.
    Demosaic(bool),
}

impl AxisValue {
    /// The axis this value belongs to.
    pub fn axis(&self) -> VariantAxis {
        match self {
            AxisValue::PixelPitch(_) => VariantAxis::PixelPitch,
            AxisValue::BitDepth(_) => VariantAxis::BitDepth,
            AxisValue::Cfa(_) => VariantAxis::Cfa,
            AxisValue::ExposurePolicy(_) => VariantAxis::ExposurePolicy,
            AxisValue::Gamma(_) => VariantAxis::Gamma,
            AxisValue::Demosaic(_) => VariantAxis::Demosaic,
        }
    }

    /// Canonical string form, used in directory names and provenance.
    pub fn label(&self) -> String {
        match self {
            AxisValue::PixelPitch(p) => format!("{p}"),
            AxisValue::BitDepth(b) => format!("{b}"),
            AxisValue::Cfa(name) => name.clone(),
            AxisValue::ExposurePolicy(k) => k.name().to_string(),
            AxisValue::Gamma(g) => g.label(),
            AxisValue::Demosaic(on) => if *on { "on" } else { "off" }.to_string(),
        }
    }

    /// Parses a value for a given axis from its canonical string form.
    pub fn parse(axis: VariantAxis, s: &str) -> Result<Self> {
        let bad = |what: &str| Error::invalid(format!("bad {what} value {s:?}"));
        Ok(match axis {
            VariantAxis::PixelPitch => {
                let p: f64 = s.parse().map_err(|_| bad("pixel pitch"))?;
                if !(p.is_finite() && p > 0.0) {
                    return Err(bad("pixel pitch"));
                }
                AxisValue::PixelPitch(p)
            }
            VariantAxis::BitDepth => {
                AxisValue::BitDepth(s.parse().map_err(|_| bad("bit depth"))?)
            }
            VariantAxis::Cfa => {
                CfaPattern::from_name(s)?; // validate early
                AxisValue::Cfa(s.to_string())
            }
            VariantAxis::ExposurePolicy => AxisValue::ExposurePolicy(PolicyKind::from_name(s)?),
            VariantAxis::Gamma => AxisValue::Gamma(GammaMode::parse(s)?),
            VariantAxis::Demosaic => match s {
                "on" => AxisValue::Demosaic(true),
                "off" => AxisValue::Demosaic(false),
                _ => return Err(bad("demosaic")),
            },
        })
    }
}

/// The ISP half of a variant's fixed settings.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSettings {
    /// Run bilinear demosaicking.
    pub demosaic: bool,
    /// Gamma mode.
    pub gamma: GammaMode,
    /// PNG sample depth for processed output (8 or 16).
    pub out_depth: u32,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        PipelineSettings {
            demosaic: false,
            gamma: GammaMode::Off,
            out_depth: 16,
        }
    }
}

impl PipelineSettings {
    /// True when any processing beyond raw capture runs.
    pub fn is_active(&self) -> bool {
        self.demosaic || self.gamma != GammaMode::Off
    }
}

/// Which boxes survive into a variant's label files.
#[derive(Debug, Clone, PartialEq)]
pub enum LabelingPolicy {
    /// Keep everything.
    None,
    /// Keep boxes strictly taller than a pixel threshold (evaluated at the
    /// variant's resolution, so coarser sensors lose more boxes).
    KittiMinBox {
        /// Minimum height in pixels, exclusive (default 25).
        min_box_height_px: f64,
    },
    /// Keep boxes whose object is at most this far away, regardless of how
    /// small it renders.
    DistanceCutoff {
        /// Maximum distance in meters, inclusive (default 150).
        max_distance_m: f64,
    },
}

impl Default for LabelingPolicy {
    fn default() -> Self {
        LabelingPolicy::None
    }
}

impl LabelingPolicy {
    /// Policy with the conventional 25-pixel minimum height.
    pub fn kitti_min_box() -> Self {
        LabelingPolicy::KittiMinBox {
            min_box_height_px: 25.0,
        }
    }

    /// Policy with the conventional 150-meter cutoff.
    pub fn distance_cutoff() -> Self {
        LabelingPolicy::DistanceCutoff {
            max_distance_m: 150.0,
        }
    }

    /// Canonical provenance label, e.g. `"kitti-min-box-25"`.
    pub fn label(&self) -> String {
        match self {
            LabelingPolicy::None => "none".into(),
            LabelingPolicy::KittiMinBox { min_box_height_px } => {
                format!("kitti-min-box-{min_box_height_px}")
            }
            LabelingPolicy::DistanceCutoff { max_distance_m } => {
                format!("distance-cutoff-{max_distance_m}")
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            LabelingPolicy::None => true,
            LabelingPolicy::KittiMinBox { min_box_height_px } => {
                min_box_height_px.is_finite() && *min_box_height_px > 0.0
            }
            LabelingPolicy::DistanceCutoff { max_distance_m } => {
                max_distance_m.is_finite() && *max_distance_m > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("labeling-policy threshold must be positive"))
        }
    }
}

/// Multiplies every box coordinate by `factor`, leaving class, distance, and
/// score untouched.
pub fn scale_labels(labels: &LabelSet, factor: f64) -> Result<LabelSet> {
    if !(factor.is_finite() && factor > 0.0) {
        return Err(Error::invalid(format!(
            "label scale factor must be positive, got {factor}"
        )));
    }
    let boxes = labels
        .boxes
        .iter()
        .map(|b| {
            let mut out = b.clone();
            out.x_min *= factor;
            out.y_min *= factor;
            out.x_max *= factor;
            out.y_max *= factor;
            out
        })
        .collect();
    Ok(LabelSet {
        scene_id: labels.scene_id.clone(),
        boxes,
    })
}

/// Filters a label set under a labeling policy, preserving order.
///
/// `KittiMinBox` keeps boxes strictly taller than the threshold;
/// `DistanceCutoff` keeps boxes at most `max_distance_m` away (inclusive)
/// and refuses sets whose boxes lack distance metadata.
pub fn apply_policy(labels: &LabelSet, policy: &LabelingPolicy) -> Result<LabelSet> {
    policy.validate()?;
    let boxes = match policy {
        LabelingPolicy::None => labels.boxes.clone(),
        LabelingPolicy::KittiMinBox { min_box_height_px } => labels
            .boxes
            .iter()
            .filter(|b| b.height() > *min_box_height_px)
            .cloned()
            .collect(),
        LabelingPolicy::DistanceCutoff { max_distance_m } => {
            let missing: Vec<usize> = labels
                .boxes
                .iter()
                .enumerate()
                .filter(|(_, b)| b.distance_m.is_none())
                .map(|(i, _)| i)
                .collect();
            if !missing.is_empty() {
                return Err(Error::invalid(format!(
                    "distance cutoff needs distance metadata; scene {:?} lacks it on boxes {missing:?}",
                    labels.scene_id
                )));
            }
            labels
                .boxes
                .iter()
                .filter(|b| b.distance_m.expect("checked above") <= *max_distance_m)
                .cloned()
                .collect()
        }
    };
    Ok(LabelSet {
        scene_id: labels.scene_id.clone(),
        boxes,
    })
}

/// A request to render one scene corpus under several settings of one axis.
#[derive(Debug, Clone)]
pub struct VariantSpec {
    /// The base corpus (scenes + labels at base resolution).
    pub base_manifest: DatasetManifest,
    /// Which parameter varies.
    pub axis: VariantAxis,
    /// The settings to render, in output order.
    pub values: Vec<AxisValue>,
    /// Sensor settings shared by all variants (the varied field, if it
    /// lives here, is substituted per value).
    pub sensor: SensorConfig,
    /// Exposure settings shared by all variants.
    pub exposure: ExposurePolicy,
    /// ISP settings shared by all variants.
    pub pipeline: PipelineSettings,
    /// Label filtering applied to every variant.
    pub labeling: LabelingPolicy,
    /// Base RNG seed; each scene derives its own seed from this and its id.
    pub seed_base: u64,
}

/// Settings for one concrete variant after axis substitution.
struct ResolvedVariant {
    sensor: SensorConfig,
    exposure: ExposurePolicy,
    pipeline: PipelineSettings,
}

fn substitute(spec: &VariantSpec, value: &AxisValue) -> Result<ResolvedVariant> {
    let mut sensor = spec.sensor.clone();
    let mut exposure = spec.exposure.clone();
    let mut pipeline = spec.pipeline.clone();
    match value {
        AxisValue::PixelPitch(p) => {
            // Array geometry is tied to the die, not derivable by scaling
            // (the preset dimensions are not proportional to pitch), so the
            // pitch axis requires a preset sensor to look the geometry up.
            let geometry = SensorConfig::preset(&sensor.name, *p).map_err(|e| {
                Error::invalid(format!(
                    "pixel-pitch axis needs a preset sensor with known per-pitch geometry: {e}"
                ))
            })?;
            sensor.pixel_pitch_um = *p;
            sensor.array_width_px = geometry.array_width_px;
            sensor.array_height_px = geometry.array_height_px;
        }
        AxisValue::BitDepth(b) => sensor.bit_depth = *b,
        AxisValue::Cfa(name) => sensor.cfa = CfaPattern::from_name(name)?,
        AxisValue::ExposurePolicy(k) => exposure.kind = *k,
        AxisValue::Gamma(g) => pipeline.gamma = g.clone(),
        AxisValue::Demosaic(on) => pipeline.demosaic = *on,
    }
    sensor.validate()?;
    exposure.validate()?;
    if pipeline.out_depth != 8 && pipeline.out_depth != 16 {
        return Err(Error::invalid(format!(
            "processed output depth {} not supported (use 8 or 16)",
            pipeline.out_depth
        )));
    }
    Ok(ResolvedVariant {
        sensor,
        exposure,
        pipeline,
    })
}

/// Canonical echo of every fixed setting with the varied field blanked; all
/// variants of one spec hash this to the same digest.
fn fixed_echo(spec: &VariantSpec) -> String {
    let varied = |axis: VariantAxis, value: String| -> String {
        if spec.axis == axis {
            "<varied>".into()
        } else {
            value
        }
    };
    let join = |v: &[f64]| {
        v.iter()
            .map(|x| x.to_string())
            .collect::<Vec<_>>()
            .join(";")
    };
    let s = &spec.sensor;
    let e = &spec.exposure;
    let p = &spec.pipeline;
    let mut out = String::new();
    let _ = writeln!(out, "sensor.name={}", s.name);
    let _ = writeln!(
        out,
        "sensor.pixel_pitch_um={}",
        varied(VariantAxis::PixelPitch, s.pixel_pitch_um.to_string())
    );
    let _ = writeln!(
        out,
        "sensor.array_width_px={}",
        varied(VariantAxis::PixelPitch, s.array_width_px.to_string())
    );
    let _ = writeln!(
        out,
        "sensor.array_height_px={}",
        varied(VariantAxis::PixelPitch, s.array_height_px.to_string())
    );
    let _ = writeln!(out, "sensor.cfa={}", varied(VariantAxis::Cfa, s.cfa.name.clone()));
    let _ = writeln!(out, "sensor.qe={}", join(&s.qe));
    let _ = writeln!(out, "sensor.well_capacity_e={}", s.well_capacity_e);
    let _ = writeln!(out, "sensor.read_noise_e={}", s.read_noise_e);
    let _ = writeln!(out, "sensor.dark_current_e_per_s={}", s.dark_current_e_per_s);
    let _ = writeln!(
        out,
        "sensor.conversion_gain_v_per_e={}",
        s.conversion_gain_v_per_e
    );
    let _ = writeln!(out, "sensor.voltage_swing_v={}", s.voltage_swing_v);
    let _ = writeln!(
        out,
        "sensor.bit_depth={}",
        varied(VariantAxis::BitDepth, s.bit_depth.to_string())
    );
    let _ = writeln!(out, "sensor.psf_fwhm_um={}", s.psf_fwhm_um);
    let _ = writeln!(out, "sensor.noise={}", s.noise_enabled);
    let _ = writeln!(
        out,
        "exposure.kind={}",
        varied(VariantAxis::ExposurePolicy, e.kind.name().to_string())
    );
    let _ = writeln!(out, "exposure.target_fraction={}", e.target_fraction);
    let _ = writeln!(out, "exposure.max_duration_s={}", e.max_duration_s);
    let _ = writeln!(out, "exposure.brackets_s={}", join(&e.bracket_durations_s));
    let _ = writeln!(out, "exposure.metering_percentile={}", e.metering_percentile);
    let _ = writeln!(
        out,
        "exposure.window={};{};{};{}",
        e.center_window.x0, e.center_window.x1, e.center_window.y0, e.center_window.y1
    );
    let _ = writeln!(
        out,
        "isp.demosaic={}",
        varied(
            VariantAxis::Demosaic,
            if p.demosaic { "on" } else { "off" }.to_string()
        )
    );
    let _ = writeln!(
        out,
        "isp.gamma={}",
        varied(VariantAxis::Gamma, p.gamma.label())
    );
    let _ = writeln!(out, "isp.out_depth={}", p.out_depth);
    let _ = writeln!(out, "labeling={}", spec.labeling.label());
    out
}

/// Runs one scene through one variant's full pipeline and writes its files.
/// Returns the manifest entry. Paths in the entry are relative to the
/// variant directory.
fn process_scene(
    spec: &VariantSpec,
    resolved: &ResolvedVariant,
    variant_dir: &Path,
    entry: &ManifestEntry,
) -> Result<ManifestEntry> {
    let scene = scene_io::load_scene(&spec.base_manifest.resolve(&entry.scene_file))?;
    let mut labels = scene_io::load_labels(&spec.base_manifest.resolve(&entry.label_file))?;
    // Loaded label sets are keyed by file stem; the manifest's id is
    // authoritative (it also keys the noise seed).
    labels.scene_id = entry.scene_id.clone();
    let seed = spec.seed_base ^ fnv1a64(entry.scene_id.as_bytes());

    // Geometry first: bin to the sensor pitch, crop to the active array.
    let scale = scene.pixel_pitch_um() / resolved.sensor.pixel_pitch_um;
    let prepared = sensor::prepare_scene_for_sensor(&scene, &resolved.sensor)?;
    let blurred = sensor::apply_psf(&prepared, resolved.sensor.psf_fwhm_um)?;
    let raw = exposure::capture(&blurred, &resolved.sensor, &resolved.exposure, seed)?;

    let scenes_dir = variant_dir.join("scenes");
    let base = scenes_dir.join(&entry.scene_id);
    sensor::save_raw(&raw, &base)?;

    let scene_file = if resolved.pipeline.is_active() {
        let img = if resolved.pipeline.demosaic {
            isp::demosaic_bilinear(&raw)?
        } else {
            isp::normalize(&raw)?
        };
        let img = match &resolved.pipeline.gamma {
            GammaMode::Off => img,
            GammaMode::Fixed(g) => isp::apply_gamma(&img, *g)?,
            GammaMode::Adaptive => isp::adaptive_gamma(&img)?.0,
        };
        isp::save_processed(&img, &base, resolved.pipeline.out_depth)?;
        PathBuf::from(format!("scenes/{}.proc.png", entry.scene_id))
    } else {
        PathBuf::from(format!("scenes/{}.raw.png", entry.scene_id))
    };

    // Labels: one direct scaling from the base annotation, then the policy.
    let scaled = scale_labels(&labels, scale)?;
    let filtered = apply_policy(&scaled, &spec.labeling)?;
    let label_file = PathBuf::from(format!("labels/{}.csv", entry.scene_id));
    scene_io::save_labels(&filtered, &variant_dir.join(&label_file))?;

    Ok(ManifestEntry {
        scene_id: entry.scene_id.clone(),
        scene_file,
        label_file,
    })
}

/// Renders every axis value into `<out_dir>/<axis>=<value>/` and returns the
/// variant manifests in value order.
///
/// Each variant directory holds `scenes/` (raw PNG bundles, plus processed
/// PNGs when the ISP is active), `labels/`, and a `manifest.txt` whose
/// provenance trailer records the axis, the value, the seed base, the
/// labeling policy, and the fixed-settings digest. A variant that fails
/// midway is deleted before the error propagates.
pub fn generate_variants(spec: &VariantSpec, out_dir: &Path) -> Result<Vec<DatasetManifest>> {
    if spec.values.is_empty() {
        return Err(Error::invalid("variant spec has no axis values"));
    }
    let labels: Vec<String> = spec.values.iter().map(|v| v.label()).collect();
    for (i, v) in spec.values.iter().enumerate() {
        if v.axis() != spec.axis {
            return Err(Error::invalid(format!(
                "value {:?} does not belong to axis {:?}",
                labels[i],
                spec.axis.name()
            )));
        }
        if labels[..i].contains(&labels[i]) {
            return Err(Error::invalid(format!(
                "duplicate axis value {:?}",
                labels[i]
            )));
        }
    }
    spec.labeling.validate()?;
    if spec.base_manifest.entries.is_empty() {
        return Err(Error::invalid("base manifest has no scenes"));
    }
    {
        let mut seen = Vec::new();
        for e in &spec.base_manifest.entries {
            if seen.contains(&&e.scene_id) {
                return Err(Error::invalid(format!(
                    "base manifest lists scene {:?} twice",
                    e.scene_id
                )));
            }
            seen.push(&e.scene_id);
        }
    }
    // Fail fast (before writing anything) when the policy cannot apply.
    if matches!(spec.labeling, LabelingPolicy::DistanceCutoff { .. }) {
        let mut offenders = Vec::new();
        for entry in &spec.base_manifest.entries {
            let labels = scene_io::load_labels(&spec.base_manifest.resolve(&entry.label_file))?;
            if labels.boxes.iter().any(|b| b.distance_m.is_none()) {
                offenders.push(entry.scene_id.clone());
            }
        }
        if !offenders.is_empty() {
            return Err(Error::invalid(format!(
                "distance cutoff needs distance metadata; missing in scenes: {}",
                offenders.join(", ")
            )));
        }
    }

    let digest = format!("{:016x}", fnv1a64(fixed_echo(spec).as_bytes()));
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut manifests = Vec::with_capacity(spec.values.len());
    for value in &spec.values {
        let resolved = substitute(spec, value)?;
        let dir_name = format!("{}={}", spec.axis.name(), value.label());
        let variant_dir = out_dir.join(&dir_name);

        let build = || -> Result<DatasetManifest> {
            std::fs::create_dir_all(variant_dir.join("scenes"))
                .map_err(|e| Error::io(&variant_dir, e))?;
            std::fs::create_dir_all(variant_dir.join("labels"))
                .map_err(|e| Error::io(&variant_dir, e))?;
            let entries = parallel::try_map_indices(spec.base_manifest.entries.len(), |i| {
                process_scene(
                    spec,
                    &resolved,
                    &variant_dir,
                    &spec.base_manifest.entries[i],
                )
            })?;
            let manifest = DatasetManifest {
                name: dir_name.clone(),
                root: variant_dir.clone(),
                entries,
                provenance: vec![
                    ("axis".into(), spec.axis.name().into()),
                    ("value".into(), value.label()),
                    ("seed_base".into(), spec.seed_base.to_string()),
                    ("labeling_policy".into(), spec.labeling.label()),
                    ("fixed_digest".into(), digest.clone()),
                ],
            };
            scene_io::save_manifest(&manifest, &variant_dir.join("manifest.txt"))?;
            Ok(manifest)
        };
        match build() {
            Ok(m) => manifests.push(m),
            Err(e) => {
                let _ = std::fs::remove_dir_all(&variant_dir);
                return Err(e);
            }
        }
    }
    Ok(manifests)
}
