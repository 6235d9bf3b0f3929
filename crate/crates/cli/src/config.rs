//! Experiment configuration: a flat `key=value` file with dotted section
//! prefixes. Unknown keys are rejected (with their line number), duplicates
//! are rejected, and every run echoes the fully resolved configuration —
//! including defaults that applied — so a run can be reproduced from its
//! output directory alone.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use camforge_core::error::{Error, Result};
use camforge_core::exposure::{ExposurePolicy, NormRect, PolicyKind};
use camforge_core::isp::GammaMode;
use camforge_core::sensor::CfaPattern;
use camforge_core::variants::{AxisValue, LabelingPolicy, PipelineSettings, VariantAxis};
use camforge_core::SensorConfig;

/// Raw `key = (value, line)` pairs from one config file.
struct RawConfig {
    path: PathBuf,
    pairs: BTreeMap<String, (String, usize)>,
}

impl RawConfig {
    fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut pairs = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::malformed(
                    path,
                    line_no,
                    "expected key=value".to_string(),
                ));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(Error::malformed(path, line_no, "empty key".to_string()));
            }
            if let Some((_, first)) = pairs.insert(key.clone(), (value, line_no)) {
                return Err(Error::malformed(
                    path,
                    line_no,
                    format!("duplicate key {key:?} (first set on line {first})"),
                ));
            }
        }
        Ok(RawConfig {
            path: path.to_path_buf(),
            pairs,
        })
    }

    fn take(&mut self, key: &str) -> Option<(String, usize)> {
        self.pairs.remove(key)
    }

    /// Errors on the first leftover (unknown) key.
    fn finish(self) -> Result<()> {
        if let Some((key, (_, line))) = self.pairs.into_iter().next() {
            return Err(Error::malformed(
                &self.path,
                line,
                format!("unknown key {key:?}"),
            ));
        }
        Ok(())
    }

    fn bad(&self, key: &str, line: usize, what: &str, got: &str) -> Error {
        Error::malformed(&self.path, line, format!("{key}: invalid {what} {got:?}"))
    }

    fn f64(&mut self, key: &str) -> Result<Option<f64>> {
        match self.take(key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse()
                .map(Some)
                .map_err(|_| self.bad(key, line, "number", &v)),
        }
    }

    fn u64(&mut self, key: &str) -> Result<Option<u64>> {
        match self.take(key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse()
                .map(Some)
                .map_err(|_| self.bad(key, line, "integer", &v)),
        }
    }

    fn usize(&mut self, key: &str) -> Result<Option<usize>> {
        match self.take(key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse()
                .map(Some)
                .map_err(|_| self.bad(key, line, "integer", &v)),
        }
    }

    fn bool(&mut self, key: &str) -> Result<Option<bool>> {
        match self.take(key) {
            None => Ok(None),
            Some((v, line)) => match v.as_str() {
                "true" => Ok(Some(true)),
                "false" => Ok(Some(false)),
                _ => Err(self.bad(key, line, "boolean (true/false)", &v)),
            },
        }
    }

    fn f64_list(&mut self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.take(key) {
            None => Ok(None),
            Some((v, line)) => v
                .split(';')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map(Some)
                .map_err(|_| self.bad(key, line, "semicolon-separated numbers", &v)),
        }
    }

    /// Errors from values that fail domain parsing keep their line number.
    fn domain<T>(
        &mut self,
        key: &str,
        f: impl FnOnce(&str) -> Result<T>,
    ) -> Result<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some((v, line)) => f(&v)
                .map(Some)
                .map_err(|e| Error::malformed(&self.path, line, format!("{key}: {e}"))),
        }
    }
}

/// A fully resolved experiment: what to read, how to image it, and where
/// results go.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    /// Base dataset manifest (`input.manifest`), when given.
    pub manifest: Option<PathBuf>,
    /// Experiment seed; per-scene seeds derive from it.
    pub seed: u64,
    /// All outputs land under this directory.
    pub out_dir: PathBuf,
    /// Preset the sensor was seeded from, echoed for readability.
    pub preset: Option<String>,
    /// Resolved sensor.
    pub sensor: SensorConfig,
    /// Resolved exposure policy.
    pub exposure: ExposurePolicy,
    /// Resolved processing settings.
    pub pipeline: PipelineSettings,
    /// Label filtering applied wherever label files are written.
    pub labeling: LabelingPolicy,
    /// Variant axis (`variants.axis`), when given.
    pub axis: Option<VariantAxis>,
    /// Variant values (`variants.values`), when given.
    pub values: Vec<AxisValue>,
    /// Directory of per-scene detection CSVs (`eval.detections`).
    pub detections: Option<PathBuf>,
    /// IoU threshold for matching.
    pub iou_threshold: f64,
    /// Distance-bin edges for distance-resolved AP, when given.
    pub distance_bins: Option<Vec<f64>>,
}

fn require<T>(v: Option<T>, key: &str) -> Result<T> {
    v.ok_or_else(|| {
        Error::invalid(format!(
            "missing required key {key} (no sensor.preset given)"
        ))
    })
}

impl ExperimentConfig {
    /// Loads and fully resolves a config file. Relative paths inside the
    /// file are taken relative to the file's own directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut raw = RawConfig::load(path)?;
        let base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let rel = |p: String| -> PathBuf {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base_dir.join(p)
            }
        };

        let manifest = raw.take("input.manifest").map(|(v, _)| rel(v));
        let seed = raw.u64("seed")?.unwrap_or(0);
        let out_dir = raw
            .take("output.dir")
            .map(|(v, _)| rel(v))
            .unwrap_or_else(|| base_dir.join("out"));

        // Sensor: a preset seeds every field; explicit keys override.
        // Without a preset the electrical and geometric fields are required.
        let preset = raw.take("sensor.preset").map(|(v, _)| v);
        let name = raw.take("sensor.name").map(|(v, _)| v);
        let pitch_um = raw.f64("sensor.pitch_um")?;
        let array_width = raw.usize("sensor.array_width")?;
        let array_height = raw.usize("sensor.array_height")?;
        let cfa = raw.domain("sensor.cfa", CfaPattern::from_name)?;
        let qe = raw.f64_list("sensor.qe")?;
        let well = raw.f64("sensor.well_capacity_e")?;
        let read = raw.f64("sensor.read_noise_e")?;
        let dark = raw.f64("sensor.dark_current_e_per_s")?;
        let gain = raw.f64("sensor.conversion_gain_v_per_e")?;
        let swing = raw.f64("sensor.voltage_swing_v")?;
        let bits = raw.u64("sensor.bit_depth")?.map(|b| b as u32);
        let psf = raw.f64("sensor.psf_fwhm_um")?;
        let noise = raw.bool("sensor.noise")?;

        let mut sensor = match &preset {
            Some(p) => SensorConfig::preset(p, pitch_um.unwrap_or(3.0))?,
            None => SensorConfig {
                name: "custom".into(),
                pixel_pitch_um: require(pitch_um, "sensor.pitch_um")?,
                array_width_px: require(array_width, "sensor.array_width")?,
                array_height_px: require(array_height, "sensor.array_height")?,
                cfa: CfaPattern::monochrome(),
                qe: vec![1.0],
                well_capacity_e: require(well, "sensor.well_capacity_e")?,
                read_noise_e: require(read, "sensor.read_noise_e")?,
                dark_current_e_per_s: 0.0,
                conversion_gain_v_per_e: require(gain, "sensor.conversion_gain_v_per_e")?,
                voltage_swing_v: require(swing, "sensor.voltage_swing_v")?,
                bit_depth: require(bits, "sensor.bit_depth")?,
                psf_fwhm_um: 0.0,
                noise_enabled: true,
            },
        };
        if let Some(v) = name {
            sensor.name = v;
        }
        if let Some(v) = array_width {
            sensor.array_width_px = v;
        }
        if let Some(v) = array_height {
            sensor.array_height_px = v;
        }
        if let Some(v) = cfa {
            sensor.cfa = v;
        }
        if let Some(v) = qe {
            sensor.qe = v;
        }
        if let Some(v) = well {
            sensor.well_capacity_e = v;
        }
        if let Some(v) = read {
            sensor.read_noise_e = v;
        }
        if let Some(v) = dark {
            sensor.dark_current_e_per_s = v;
        }
        if let Some(v) = gain {
            sensor.conversion_gain_v_per_e = v;
        }
        if let Some(v) = swing {
            sensor.voltage_swing_v = v;
        }
        if let Some(v) = bits {
            sensor.bit_depth = v;
        }
        if let Some(v) = psf {
            sensor.psf_fwhm_um = v;
        }
        if let Some(v) = noise {
            sensor.noise_enabled = v;
        }
        sensor.validate()?;

        let mut exposure = ExposurePolicy::default();
        if let Some(k) = raw.domain("exposure.kind", PolicyKind::from_name)? {
            exposure.kind = k;
        }
        if let Some(v) = raw.f64("exposure.target_fraction")? {
            exposure.target_fraction = v;
        }
        if let Some(v) = raw.f64("exposure.max_ms")? {
            exposure.max_duration_s = v / 1000.0;
        }
        if let Some(v) = raw.f64_list("exposure.brackets_ms")? {
            exposure.bracket_durations_s = v.iter().map(|ms| ms / 1000.0).collect();
        }
        if let Some(v) = raw.f64("exposure.metering_percentile")? {
            exposure.metering_percentile = v;
        }
        if let Some((v, line)) = raw.take("exposure.window") {
            let parts: Vec<f64> = v
                .split(';')
                .map(|t| t.trim().parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| raw.bad("exposure.window", line, "x0;x1;y0;y1", &v))?;
            if parts.len() != 4 {
                return Err(raw.bad("exposure.window", line, "x0;x1;y0;y1", &v));
            }
            exposure.center_window = NormRect {
                x0: parts[0],
                x1: parts[1],
                y0: parts[2],
                y1: parts[3],
            };
        }
        exposure.validate()?;

        let mut pipeline = PipelineSettings::default();
        if let Some((v, line)) = raw.take("isp.demosaic") {
            pipeline.demosaic = match v.as_str() {
                "on" => true,
                "off" => false,
                _ => return Err(raw.bad("isp.demosaic", line, "on/off", &v)),
            };
        }
        if let Some(g) = raw.domain("isp.gamma", GammaMode::parse)? {
            pipeline.gamma = g;
        }
        if let Some(v) = raw.u64("isp.out_depth")? {
            pipeline.out_depth = v as u32;
        }
        if pipeline.out_depth != 8 && pipeline.out_depth != 16 {
            return Err(Error::invalid(format!(
                "isp.out_depth {} not supported (use 8 or 16)",
                pipeline.out_depth
            )));
        }

        let min_box = raw.f64("eval.min_box_height_px")?.unwrap_or(25.0);
        let max_dist = raw.f64("eval.max_distance_m")?.unwrap_or(150.0);
        let labeling = match raw.take("eval.policy") {
            None => LabelingPolicy::None,
            Some((v, line)) => match v.as_str() {
                "none" => LabelingPolicy::None,
                "kitti-min-box" => LabelingPolicy::KittiMinBox {
                    min_box_height_px: min_box,
                },
                "distance-cutoff" => LabelingPolicy::DistanceCutoff {
                    max_distance_m: max_dist,
                },
                _ => {
                    return Err(raw.bad(
                        "eval.policy",
                        line,
                        "policy (none/kitti-min-box/distance-cutoff)",
                        &v,
                    ))
                }
            },
        };

        let axis = raw.domain("variants.axis", VariantAxis::from_name)?;
        let values = match raw.take("variants.values") {
            None => Vec::new(),
            Some((v, line)) => {
                let Some(axis) = axis else {
                    return Err(Error::malformed(
                        &path.to_path_buf(),
                        line,
                        "variants.values given without variants.axis".to_string(),
                    ));
                };
                v.split(';')
                    .map(|t| AxisValue::parse(axis, t.trim()))
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| {
                        Error::malformed(&path.to_path_buf(), line, format!("variants.values: {e}"))
                    })?
            }
        };

        let detections = raw.take("eval.detections").map(|(v, _)| rel(v));
        let iou_threshold = raw.f64("eval.iou_threshold")?.unwrap_or(0.5);
        let distance_bins = raw.f64_list("eval.distance_bins")?;

        raw.finish()?;
        Ok(ExperimentConfig {
            manifest,
            seed,
            out_dir,
            preset,
            sensor,
            exposure,
            pipeline,
            labeling,
            axis,
            values,
            detections,
            iou_threshold,
            distance_bins,
        })
    }

    /// The resolved-configuration echo: every setting with its final value,
    /// in a fixed order, reloadable as a config file.
    pub fn echo(&self) -> String {
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(";")
        };
        let mut out = String::new();
        if let Some(m) = &self.manifest {
            let _ = writeln!(out, "input.manifest={}", m.display());
        }
        let _ = writeln!(out, "seed={}", self.seed);
        let _ = writeln!(out, "output.dir={}", self.out_dir.display());
        if let Some(p) = &self.preset {
            let _ = writeln!(out, "sensor.preset={p}");
        }
        let s = &self.sensor;
        let _ = writeln!(out, "sensor.name={}", s.name);
        let _ = writeln!(out, "sensor.pitch_um={}", s.pixel_pitch_um);
        let _ = writeln!(out, "sensor.array_width={}", s.array_width_px);
        let _ = writeln!(out, "sensor.array_height={}", s.array_height_px);
        let _ = writeln!(out, "sensor.cfa={}", s.cfa.name);
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
        let _ = writeln!(out, "sensor.bit_depth={}", s.bit_depth);
        let _ = writeln!(out, "sensor.psf_fwhm_um={}", s.psf_fwhm_um);
        let _ = writeln!(out, "sensor.noise={}", s.noise_enabled);
        let e = &self.exposure;
        let _ = writeln!(out, "exposure.kind={}", e.kind.name());
        let _ = writeln!(out, "exposure.target_fraction={}", e.target_fraction);
        let _ = writeln!(out, "exposure.max_ms={}", e.max_duration_s * 1000.0);
        let _ = writeln!(
            out,
            "exposure.brackets_ms={}",
            join(
                &e.bracket_durations_s
                    .iter()
                    .map(|s| s * 1000.0)
                    .collect::<Vec<_>>()
            )
        );
        let _ = writeln!(out, "exposure.metering_percentile={}", e.metering_percentile);
        let w = &e.center_window;
        let _ = writeln!(out, "exposure.window={};{};{};{}", w.x0, w.x1, w.y0, w.y1);
        let p = &self.pipeline;
        let _ = writeln!(
            out,
            "isp.demosaic={}",
            if p.demosaic { "on" } else { "off" }
        );
        let _ = writeln!(out, "isp.gamma={}", p.gamma.label());
        let _ = writeln!(out, "isp.out_depth={}", p.out_depth);
        match &self.labeling {
            LabelingPolicy::None => {
                let _ = writeln!(out, "eval.policy=none");
            }
            LabelingPolicy::KittiMinBox { min_box_height_px } => {
                let _ = writeln!(out, "eval.policy=kitti-min-box");
                let _ = writeln!(out, "eval.min_box_height_px={min_box_height_px}");
            }
            LabelingPolicy::DistanceCutoff { max_distance_m } => {
                let _ = writeln!(out, "eval.policy=distance-cutoff");
                let _ = writeln!(out, "eval.max_distance_m={max_distance_m}");
            }
        }
        let _ = writeln!(out, "eval.iou_threshold={}", self.iou_threshold);
        if let Some(d) = &self.detections {
            let _ = writeln!(out, "eval.detections={}", d.display());
        }
        if let Some(b) = &self.distance_bins {
            let _ = writeln!(out, "eval.distance_bins={}", join(b));
        }
        if let Some(a) = self.axis {
            let _ = writeln!(out, "variants.axis={}", a.name());
        }
        if !self.values.is_empty() {
            let _ = writeln!(
                out,
                "variants.values={}",
                self.values
                    .iter()
                    .map(|v| v.label())
                    .collect::<Vec<_>>()
                    .join(";")
            );
        }
        out
    }
}
