//! Scene irradiance maps, bounding-box labels, and dataset manifests.
//!
//! A *scene* is the radiometric input to the camera simulation: per-band
//! photon irradiance (photons / s / um^2) sampled on a regular grid whose
//! spacing matches a sensor pixel pitch. Scenes are stored on disk as a
//! `<id>.meta` key=value sidecar plus PFM float payloads (`<id>.pfm` with
//! three interleaved channels when there are exactly three bands, otherwise
//! one grayscale `<id>.b<k>.pfm` per band). Labels are CSV bounding boxes
//! and manifests are plain-text scene listings; all three formats round-trip
//! losslessly and every writer in this module is atomic (temporary file plus
//! rename), so failed writes leave nothing behind.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::pfm::{self, PfmImage};

/// Column header shared by label and detection CSV files.
pub const LABEL_HEADER: &str = "class,x_min,y_min,x_max,y_max,distance_m,score";

/// First line of every dataset manifest.
pub const MANIFEST_HEADER: &str = "# camforge-manifest v1";

// ---------------------------------------------------------------------------
// Scene irradiance
// ---------------------------------------------------------------------------

/// Per-band photon irradiance map in planar `[band][row][col]` layout.
///
/// Samples are photons per second per square micrometer arriving at each
/// grid cell; they must be finite and non-negative. `pixel_pitch_um` is the
/// grid spacing, so `sample * pitch^2 * exposure` is an expected photon
/// count.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneIrradiance {
    width: usize,
    height: usize,
    bands: usize,
    pixel_pitch_um: f64,
    band_names: Vec<String>,
    scene_id: String,
    data: Vec<f32>,
}

/// Conventional band names: "L" for single-band scenes, "R","G","B" for
/// three-band scenes, "b<k>" otherwise.
pub fn default_band_names(bands: usize) -> Vec<String> {
    match bands {
        1 => vec!["L".to_string()],
        3 => vec!["R".to_string(), "G".to_string(), "B".to_string()],
        n => (0..n).map(|k| format!("b{k}")).collect(),
    }
}

impl SceneIrradiance {
    /// Builds a scene from planar data, validating every invariant.
    pub fn new(
        scene_id: impl Into<String>,
        width: usize,
        height: usize,
        bands: usize,
        pixel_pitch_um: f64,
        band_names: Vec<String>,
        data: Vec<f32>,
    ) -> Result<Self> {
        let scene = SceneIrradiance {
            width,
            height,
            bands,
            pixel_pitch_um,
            band_names,
            scene_id: scene_id.into(),
            data,
        };
        scene.validate()?;
        Ok(scene)
    }

    /// Builds a scene by evaluating `f(band, row, col)` at every sample.
    pub fn from_fn(
        scene_id: impl Into<String>,
        width: usize,
        height: usize,
        bands: usize,
        pixel_pitch_um: f64,
        f: impl Fn(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * bands);
        for b in 0..bands {
            for r in 0..height {
                for c in 0..width {
                    data.push(f(b, r, c));
                }
            }
        }
        SceneIrradiance::new(
            scene_id,
            width,
            height,
            bands,
            pixel_pitch_um,
            default_band_names(bands),
            data,
        )
    }

    /// Constant-irradiance scene, mostly useful for calibration and tests.
    pub fn uniform(
        scene_id: impl Into<String>,
        width: usize,
        height: usize,
        bands: usize,
        pixel_pitch_um: f64,
        value: f32,
    ) -> Result<Self> {
        SceneIrradiance::from_fn(scene_id, width, height, bands, pixel_pitch_um, |_, _, _| {
            value
        })
    }

    /// Internal constructor for data already known to be valid.
    pub(crate) fn from_parts_unchecked(
        scene_id: String,
        width: usize,
        height: usize,
        bands: usize,
        pixel_pitch_um: f64,
        band_names: Vec<String>,
        data: Vec<f32>,
    ) -> Self {
        SceneIrradiance {
            width,
            height,
            bands,
            pixel_pitch_um,
            band_names,
            scene_id,
            data,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.bands == 0 {
            return Err(Error::invalid(format!(
                "scene {:?} has empty geometry {}x{}x{}",
                self.scene_id, self.width, self.height, self.bands
            )));
        }
        if !(self.pixel_pitch_um.is_finite() && self.pixel_pitch_um > 0.0) {
            return Err(Error::invalid(format!(
                "scene {:?} has non-positive pixel pitch {}",
                self.scene_id, self.pixel_pitch_um
            )));
        }
        if self.scene_id.is_empty() {
            return Err(Error::invalid("scene id must be non-empty"));
        }
        if self.band_names.len() != self.bands {
            return Err(Error::invalid(format!(
                "scene {:?}: {} band names for {} bands",
                self.scene_id,
                self.band_names.len(),
                self.bands
            )));
        }
        let expected = self.width * self.height * self.bands;
        if self.data.len() != expected {
            return Err(Error::invalid(format!(
                "scene {:?}: {} samples for {}x{}x{} grid",
                self.scene_id,
                self.data.len(),
                self.width,
                self.height,
                self.bands
            )));
        }
        let plane = self.width * self.height;
        for (i, &v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                let (b, r, c) = (i / plane, (i % plane) / self.width, i % self.width);
                return Err(Error::invalid(format!(
                    "non-finite sample at band {b}, ({r},{c})"
                )));
            }
            if v < 0.0 {
                let (b, r, c) = (i / plane, (i % plane) / self.width, i % self.width);
                return Err(Error::invalid(format!(
                    "negative sample at band {b}, ({r},{c})"
                )));
            }
        }
        Ok(())
    }

    /// Grid width in samples.
    pub fn width(&self) -> usize {
        self.width
    }

    /// Grid height in samples.
    pub fn height(&self) -> usize {
        self.height
    }

    /// Number of spectral bands.
    pub fn bands(&self) -> usize {
        self.bands
    }

    /// Grid spacing in micrometers.
    pub fn pixel_pitch_um(&self) -> f64 {
        self.pixel_pitch_um
    }

    /// Identifier tying the scene to manifest rows and label files.
    pub fn scene_id(&self) -> &str {
        &self.scene_id
    }

    /// Band names, one per band.
    pub fn band_names(&self) -> &[String] {
        &self.band_names
    }

    /// All samples in planar `[band][row][col]` order.
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// One band as a `width * height` row-major slice.
    pub fn band(&self, b: usize) -> &[f32] {
        let plane = self.width * self.height;
        &self.data[b * plane..(b + 1) * plane]
    }

    /// Single sample accessor.
    #[inline]
    pub fn sample(&self, b: usize, row: usize, col: usize) -> f32 {
        self.data[b * self.width * self.height + row * self.width + col]
    }

    /// Copy of the scene with a different id (used when deriving variants).
    pub fn with_scene_id(mut self, scene_id: impl Into<String>) -> Self {
        self.scene_id = scene_id.into();
        self
    }

    /// Copy with every sample multiplied by `k` (radiance scaling).
    pub fn scaled(&self, k: f32) -> Result<Self> {
        let data = self.data.iter().map(|v| v * k).collect();
        SceneIrradiance::new(
            self.scene_id.clone(),
            self.width,
            self.height,
            self.bands,
            self.pixel_pitch_um,
            self.band_names.clone(),
            data,
        )
    }
}

/// Strips a known bundle suffix so callers may pass `<id>`, `<id>.meta`,
/// `<id>.pfm`, or `<id>.b<k>.pfm` interchangeably.
fn bundle_base(path: &Path) -> PathBuf {
    let s = path.to_string_lossy();
    for suffix in [".meta", ".pfm"] {
        if let Some(stripped) = s.strip_suffix(suffix) {
            // Also strip a trailing ".b<k>" left over from per-band files.
            if suffix == ".pfm" {
                if let Some(dot) = stripped.rfind('.') {
                    let tail = &stripped[dot + 1..];
                    if tail.len() > 1
                        && tail.starts_with('b')
                        && tail[1..].chars().all(|c| c.is_ascii_digit())
                    {
                        return PathBuf::from(&stripped[..dot]);
                    }
                }
            }
            return PathBuf::from(stripped);
        }
    }
    path.to_path_buf()
}

fn meta_path(base: &Path) -> PathBuf {
    append_ext(base, ".meta")
}

fn append_ext(base: &Path, ext: &str) -> PathBuf {
    let mut name = base.file_name().unwrap_or_default().to_os_string();
    name.push(ext);
    base.with_file_name(name)
}

/// Paths of the PFM payload files for a scene with `bands` bands.
fn payload_paths(base: &Path, bands: usize) -> Vec<PathBuf> {
    if bands == 3 {
        vec![append_ext(base, ".pfm")]
    } else {
        (0..bands)
            .map(|k| append_ext(base, &format!(".b{k}.pfm")))
            .collect()
    }
}

/// Writes a scene bundle (`.meta` sidecar plus PFM payloads) anchored at
/// `path`, which may be the bundle base or any member file name. The whole
/// bundle is staged in temporary files first, so a failure leaves no partial
/// bundle behind.
pub fn save_scene(scene: &SceneIrradiance, path: &Path) -> Result<()> {
    scene.validate()?;
    let base = bundle_base(path);

    let mut meta = String::new();
    let _ = writeln!(meta, "scene_id={}", scene.scene_id);
    let _ = writeln!(meta, "width={}", scene.width);
    let _ = writeln!(meta, "height={}", scene.height);
    let _ = writeln!(meta, "bands={}", scene.bands);
    let _ = writeln!(meta, "pixel_pitch_um={}", scene.pixel_pitch_um);
    let _ = writeln!(meta, "band_names={}", scene.band_names.join(","));

    let payloads = payload_paths(&base, scene.bands);
    let mut staged: Vec<(PathBuf, PathBuf)> = Vec::new();
    let meta_final = meta_path(&base);
    let stage = |final_path: &Path, staged: &mut Vec<(PathBuf, PathBuf)>| {
        let tmp = pfm::tmp_path(final_path);
        staged.push((final_path.to_path_buf(), tmp.clone()));
        tmp
    };

    let result = (|| -> Result<()> {
        let tmp = stage(&meta_final, &mut staged);
        std::fs::write(&tmp, &meta).map_err(|e| Error::io(&tmp, e))?;
        if scene.bands == 3 {
            // Interleave the three planes for the color PFM payload.
            let plane = scene.width * scene.height;
            let mut data = Vec::with_capacity(plane * 3);
            for p in 0..plane {
                data.push(scene.data[p]);
                data.push(scene.data[plane + p]);
                data.push(scene.data[2 * plane + p]);
            }
            let tmp = stage(&payloads[0], &mut staged);
            pfm::write_pfm(
                &tmp,
                &PfmImage {
                    width: scene.width,
                    height: scene.height,
                    channels: 3,
                    data,
                },
            )?;
        } else {
            for (k, payload) in payloads.iter().enumerate() {
                let tmp = stage(payload, &mut staged);
                pfm::write_pfm(
                    &tmp,
                    &PfmImage {
                        width: scene.width,
                        height: scene.height,
                        channels: 1,
                        data: scene.band(k).to_vec(),
                    },
                )?;
            }
        }
        Ok(())
    })();

    match result {
        Ok(()) => {
            for (final_path, tmp) in &staged {
                std::fs::rename(tmp, final_path).map_err(|e| Error::io(final_path, e))?;
            }
            Ok(())
        }
        Err(e) => {
            for (_, tmp) in &staged {
                let _ = std::fs::remove_file(tmp);
            }
            Err(e)
        }
    }
}

/// Parses a strict `key=value` sidecar into `(key, value)` pairs in file
/// order. Blank lines are not allowed; there is nothing optional in a meta
/// file.
fn parse_meta(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::malformed(path, i + 1, "expected key=value"));
        };
        pairs.push((k.to_string(), v.to_string()));
    }
    Ok(pairs)
}

fn meta_get<'a>(pairs: &'a [(String, String)], key: &str, path: &Path) -> Result<&'a str> {
    pairs
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| Error::malformed(path, 0, format!("missing key {key:?}")))
}

/// Loads a scene bundle written by [`save_scene`]. Accepts the bundle base
/// path or any member file name. All metadata is cross-checked against the
/// PFM payloads and every sample is validated.
pub fn load_scene(path: &Path) -> Result<SceneIrradiance> {
    let base = bundle_base(path);
    let meta_file = meta_path(&base);
    let pairs = parse_meta(&meta_file)?;

    let known = [
        "scene_id",
        "width",
        "height",
        "bands",
        "pixel_pitch_um",
        "band_names",
    ];
    for (k, _) in &pairs {
        if !known.contains(&k.as_str()) {
            return Err(Error::malformed(
                &meta_file,
                0,
                format!("unknown key {k:?}"),
            ));
        }
    }

    let parse_usize = |key: &str| -> Result<usize> {
        meta_get(&pairs, key, &meta_file)?
            .parse()
            .map_err(|_| Error::malformed(&meta_file, 0, format!("bad integer for {key:?}")))
    };
    let scene_id = meta_get(&pairs, "scene_id", &meta_file)?.to_string();
    let width = parse_usize("width")?;
    let height = parse_usize("height")?;
    let bands = parse_usize("bands")?;
    let pixel_pitch_um: f64 = meta_get(&pairs, "pixel_pitch_um", &meta_file)?
        .parse()
        .map_err(|_| Error::malformed(&meta_file, 0, "bad pixel_pitch_um"))?;
    let band_names: Vec<String> = meta_get(&pairs, "band_names", &meta_file)?
        .split(',')
        .map(str::to_string)
        .collect();

    let plane = width
        .checked_mul(height)
        .ok_or_else(|| Error::malformed(&meta_file, 0, "scene dimensions overflow"))?;
    let mut data = vec![0.0f32; plane * bands];
    if bands == 3 {
        let payload = &payload_paths(&base, 3)[0];
        let img = pfm::read_pfm(payload)?;
        if img.width != width || img.height != height || img.channels != 3 {
            return Err(Error::malformed(
                payload,
                0,
                format!(
                    "payload is {}x{}x{}, meta says {}x{}x3",
                    img.width, img.height, img.channels, width, height
                ),
            ));
        }
        for p in 0..plane {
            data[p] = img.data[p * 3];
            data[plane + p] = img.data[p * 3 + 1];
            data[2 * plane + p] = img.data[p * 3 + 2];
        }
    } else {
        for (k, payload) in payload_paths(&base, bands).iter().enumerate() {
            let img = pfm::read_pfm(payload)?;
            if img.width != width || img.height != height || img.channels != 1 {
                return Err(Error::malformed(
                    payload,
                    0,
                    format!(
                        "payload is {}x{}x{}, meta says {}x{}x1",
                        img.width, img.height, img.channels, width, height
                    ),
                ));
            }
            data[k * plane..(k + 1) * plane].copy_from_slice(&img.data);
        }
    }

    SceneIrradiance::new(
        scene_id,
        width,
        height,
        bands,
        pixel_pitch_um,
        band_names,
        data,
    )
}

// ---------------------------------------------------------------------------
// Bounding boxes and label sets
// ---------------------------------------------------------------------------

/// An axis-aligned box in pixel coordinates with optional range and score.
///
/// Ground-truth boxes usually carry `distance_m` and leave `score` empty;
/// detector outputs carry `score`. Coordinates follow image conventions
/// (x right, y down) and may be fractional.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundingBox {
    /// Object class label, e.g. `"car"`. May not contain `,` or line breaks.
    pub class: String,
    /// Left edge.
    pub x_min: f64,
    /// Top edge.
    pub y_min: f64,
    /// Right edge; must exceed `x_min`.
    pub x_max: f64,
    /// Bottom edge; must exceed `y_min`.
    pub y_max: f64,
    /// Distance from the camera in meters, when known.
    pub distance_m: Option<f64>,
    /// Detector confidence, when this box is a detection.
    pub score: Option<f64>,
}

impl BoundingBox {
    /// Plain ground-truth box without distance or score.
    pub fn new(class: impl Into<String>, x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        BoundingBox {
            class: class.into(),
            x_min,
            y_min,
            x_max,
            y_max,
            distance_m: None,
            score: None,
        }
    }

    /// Box height in pixels.
    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    /// Box width in pixels.
    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    /// Box area in square pixels.
    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Checks geometric and field invariants.
    pub fn validate(&self) -> Result<()> {
        if self.class.is_empty() || self.class.contains(',') || self.class.contains('\n') {
            return Err(Error::invalid(format!(
                "invalid class label {:?}",
                self.class
            )));
        }
        let coords = [self.x_min, self.y_min, self.x_max, self.y_max];
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite coordinates in box {:?}",
                self
            )));
        }
        if self.x_min >= self.x_max || self.y_min >= self.y_max {
            return Err(Error::invalid(format!(
                "degenerate box [{}, {}, {}, {}]",
                self.x_min, self.y_min, self.x_max, self.y_max
            )));
        }
        if let Some(d) = self.distance_m {
            if !(d.is_finite() && d >= 0.0) {
                return Err(Error::invalid(format!("invalid distance_m {d}")));
            }
        }
        if let Some(s) = self.score {
            if !s.is_finite() {
                return Err(Error::invalid(format!("invalid score {s}")));
            }
        }
        Ok(())
    }
}

/// The boxes annotated (or detected) on one scene.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabelSet {
    /// Scene the boxes belong to; file stem by default when loaded.
    pub scene_id: String,
    /// Boxes in file order.
    pub boxes: Vec<BoundingBox>,
}

/// Detections use the same storage as labels; scores are mandatory, which
/// [`load_detections`] enforces.
pub type DetectionSet = LabelSet;

fn format_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_opt(field: &str, path: &Path, line: usize, what: &str) -> Result<Option<f64>> {
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse::<f64>()
        .map(Some)
        .map_err(|_| Error::malformed(path, line, format!("bad {what} {field:?}")))
}

/// Writes boxes as a label CSV (atomic).
pub fn save_labels(labels: &LabelSet, path: &Path) -> Result<()> {
    let mut text = String::from(LABEL_HEADER);
    text.push('\n');
    for b in &labels.boxes {
        b.validate()?;
        let _ = writeln!(
            text,
            "{},{},{},{},{},{},{}",
            b.class,
            b.x_min,
            b.y_min,
            b.x_max,
            b.y_max,
            format_opt(b.distance_m),
            format_opt(b.score)
        );
    }
    let tmp = pfm::tmp_path(path);
    let result = std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e));
    pfm::commit_tmp(result, &tmp, path)
}

/// Reads a label CSV. The scene id is taken from the file stem; rows fail
/// with their 1-based line number on any malformed field.
pub fn load_labels(path: &Path) -> Result<LabelSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == LABEL_HEADER => {}
        Some((_, header)) => {
            return Err(Error::malformed(
                path,
                1,
                format!("bad header {header:?}, expected {LABEL_HEADER:?}"),
            ))
        }
        None => return Err(Error::malformed(path, 1, "empty label file")),
    }

    let mut boxes = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::malformed(
                path,
                line_no,
                format!("expected 7 fields, got {}", fields.len()),
            ));
        }
        let coord = |idx: usize, what: &str| -> Result<f64> {
            fields[idx]
                .parse::<f64>()
                .map_err(|_| Error::malformed(path, line_no, format!("bad {what} {:?}", fields[idx])))
        };
        let b = BoundingBox {
            class: fields[0].to_string(),
            x_min: coord(1, "x_min")?,
            y_min: coord(2, "y_min")?,
            x_max: coord(3, "x_max")?,
            y_max: coord(4, "y_max")?,
            distance_m: parse_opt(fields[5], path, line_no, "distance_m")?,
            score: parse_opt(fields[6], path, line_no, "score")?,
        };
        b.validate()
            .map_err(|e| Error::malformed(path, line_no, e.to_string()))?;
        boxes.push(b);
    }

    let scene_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(LabelSet { scene_id, boxes })
}

/// Reads a detection CSV: identical format to labels but every row must
/// carry a score.
pub fn load_detections(path: &Path) -> Result<DetectionSet> {
    let set = load_labels(path)?;
    for (i, b) in set.boxes.iter().enumerate() {
        if b.score.is_none() {
            return Err(Error::malformed(
                path,
                i + 2, // header is line 1, rows follow in order
                "detection row is missing a score",
            ));
        }
    }
    Ok(set)
}

// ---------------------------------------------------------------------------
// Dataset manifests
// ---------------------------------------------------------------------------

/// One manifest row: a scene id and the files holding its image and labels.
/// Paths are stored as written in the manifest (usually relative).
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    /// Unique scene identifier.
    pub scene_id: String,
    /// Scene (or derived image) file path.
    pub scene_file: PathBuf,
    /// Label CSV path.
    pub label_file: PathBuf,
}

/// A named list of scenes with provenance metadata.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    /// Dataset name; the manifest file stem when loaded from disk.
    pub name: String,
    /// Directory entries are resolved against (the manifest location).
    pub root: PathBuf,
    /// Scene rows in file order.
    pub entries: Vec<ManifestEntry>,
    /// Ordered `key=value` provenance pairs from the trailer block.
    pub provenance: Vec<(String, String)>,
}

impl DatasetManifest {
    /// Resolves an entry path against the manifest directory.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// First provenance value recorded for `key`.
    pub fn provenance_value(&self, key: &str) -> Option<&str> {
        self.provenance
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

/// Writes a manifest (atomic). Entry paths are written exactly as stored.
pub fn save_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    let mut text = String::from(MANIFEST_HEADER);
    text.push('\n');
    for e in &manifest.entries {
        if e.scene_id.contains(',') {
            return Err(Error::invalid(format!(
                "scene id {:?} may not contain a comma",
                e.scene_id
            )));
        }
        let _ = writeln!(
            text,
            "{},{},{}",
            e.scene_id,
            e.scene_file.display(),
            e.label_file.display()
        );
    }
    for (k, v) in &manifest.provenance {
        let _ = writeln!(text, "# provenance: {k}={v}");
    }
    let tmp = pfm::tmp_path(path);
    let result = std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e));
    pfm::commit_tmp(result, &tmp, path)
}

/// Reads a manifest, checking the header, scene-id uniqueness, and that
/// every referenced file exists (resolved against the manifest directory).
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();

    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == MANIFEST_HEADER => {}
        Some((_, h)) => {
            return Err(Error::malformed(
                path,
                1,
                format!("bad header {h:?}, expected {MANIFEST_HEADER:?}"),
            ))
        }
        None => return Err(Error::malformed(path, 1, "empty manifest")),
    }

    let mut entries = Vec::new();
    let mut provenance = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("# provenance: ") {
            let Some((k, v)) = rest.split_once('=') else {
                return Err(Error::malformed(path, line_no, "provenance needs key=value"));
            };
            provenance.push((k.to_string(), v.to_string()));
            continue;
        }
        if line.starts_with('#') {
            return Err(Error::malformed(path, line_no, "unexpected comment line"));
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::malformed(
                path,
                line_no,
                format!("expected scene_id,scene_file,label_file, got {} fields", fields.len()),
            ));
        }
        if !seen.insert(fields[0].to_string()) {
            return Err(Error::malformed(
                path,
                line_no,
                format!("duplicate scene id {:?}", fields[0]),
            ));
        }
        entries.push(ManifestEntry {
            scene_id: fields[0].to_string(),
            scene_file: PathBuf::from(fields[1]),
            label_file: PathBuf::from(fields[2]),
        });
    }

    let manifest = DatasetManifest {
        name,
        root,
        entries,
        provenance,
    };
    for e in &manifest.entries {
        for f in [&e.scene_file, &e.label_file] {
            let resolved = manifest.resolve(f);
            if !resolved.exists() {
                return Err(Error::invalid(format!(
                    "manifest {} references missing file {}",
                    path.display(),
                    resolved.display()
                )));
            }
        }
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tempdir() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn uniform_scene_round_trips_identically() {
        let dir = tempdir();
        let scene = SceneIrradiance::uniform("flat", 2, 2, 1, 3.0, 5.0).unwrap();
        let base = dir.path().join("flat");
        save_scene(&scene, &base).unwrap();
        let back = load_scene(&base).unwrap();
        assert_eq!(back, scene);
    }

    #[test]
    fn three_band_scene_round_trips_bitwise() {
        let dir = tempdir();
        let scene = SceneIrradiance::from_fn("rgb", 16, 16, 3, 1.5, |b, r, c| {
            ((b * 277 + r * 31 + c * 7) % 997) as f32 * 0.125 + 0.0625
        })
        .unwrap();
        let base = dir.path().join("rgb");
        save_scene(&scene, &base).unwrap();
        // Exactly one payload for three bands.
        assert!(base.with_file_name("rgb.pfm").exists());
        assert!(!base.with_file_name("rgb.b0.pfm").exists());
        let back = load_scene(&base).unwrap();
        let a: Vec<u32> = scene.data().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
        assert_eq!(back, scene);
    }

    #[test]
    fn two_band_scene_uses_per_band_payloads() {
        let dir = tempdir();
        let scene =
            SceneIrradiance::from_fn("two", 4, 3, 2, 6.0, |b, r, c| (b + r + c) as f32).unwrap();
        let base = dir.path().join("two");
        save_scene(&scene, &base).unwrap();
        assert!(base.with_file_name("two.b0.pfm").exists());
        assert!(base.with_file_name("two.b1.pfm").exists());
        assert_eq!(load_scene(&base).unwrap(), scene);
    }

    #[test]
    fn tiny_zero_scene_decodes_to_zero() {
        let dir = tempdir();
        let scene = SceneIrradiance::uniform("zero", 1, 1, 1, 1.5, 0.0).unwrap();
        let base = dir.path().join("zero");
        save_scene(&scene, &base).unwrap();
        let back = load_scene(&base).unwrap();
        assert_eq!(back.sample(0, 0, 0), 0.0);
    }

    #[test]
    fn load_accepts_meta_or_payload_paths() {
        let dir = tempdir();
        let scene = SceneIrradiance::uniform("alias", 2, 2, 1, 3.0, 1.0).unwrap();
        save_scene(&scene, &dir.path().join("alias")).unwrap();
        assert!(load_scene(&dir.path().join("alias.meta")).is_ok());
        assert!(load_scene(&dir.path().join("alias.b0.pfm")).is_ok());
    }

    #[test]
    fn nan_sample_is_reported_with_band_and_position() {
        let dir = tempdir();
        // Build the payload by hand: validation would reject the NaN before
        // save_scene ever wrote it.
        let base = dir.path().join("bad");
        std::fs::write(
            base.with_file_name("bad.meta"),
            "scene_id=bad\nwidth=2\nheight=2\nbands=1\npixel_pitch_um=3\nband_names=L\n",
        )
        .unwrap();
        let mut data = vec![1.0f32, 2.0, 3.0, 4.0];
        data[2] = f32::NAN; // image row 1, col 0
        pfm::write_pfm(
            &base.with_file_name("bad.b0.pfm"),
            &PfmImage {
                width: 2,
                height: 2,
                channels: 1,
                data,
            },
        )
        .unwrap();
        let err = load_scene(&base).unwrap_err();
        assert_eq!(err.to_string(), "non-finite sample at band 0, (1,0)");
    }

    #[test]
    fn negative_sample_is_rejected() {
        let err =
            SceneIrradiance::new("neg", 1, 1, 1, 3.0, vec!["L".into()], vec![-1.0]).unwrap_err();
        assert_eq!(err.to_string(), "negative sample at band 0, (0,0)");
    }

    #[test]
    fn unwritable_target_fails_without_partial_bundle() {
        let dir = tempdir();
        let missing = dir.path().join("no-such-subdir").join("s");
        let scene = SceneIrradiance::uniform("s", 2, 2, 1, 3.0, 1.0).unwrap();
        assert!(save_scene(&scene, &missing).is_err());
        assert!(!missing.with_file_name("s.meta").exists());
        assert!(!missing.with_file_name("s.b0.pfm").exists());
    }

    #[test]
    fn header_only_label_file_is_empty() {
        let dir = tempdir();
        let path = dir.path().join("empty.csv");
        std::fs::write(&path, format!("{LABEL_HEADER}\n")).unwrap();
        let set = load_labels(&path).unwrap();
        assert!(set.boxes.is_empty());
        assert_eq!(set.scene_id, "empty");
    }

    #[test]
    fn optional_fields_parse_as_absent() {
        let dir = tempdir();
        let path = dir.path().join("one.csv");
        std::fs::write(&path, format!("{LABEL_HEADER}\ncar,10,20,50,60,37.5,\n")).unwrap();
        let set = load_labels(&path).unwrap();
        assert_eq!(set.boxes.len(), 1);
        let b = &set.boxes[0];
        assert_eq!(b.class, "car");
        assert_eq!(
            (b.x_min, b.y_min, b.x_max, b.y_max),
            (10.0, 20.0, 50.0, 60.0)
        );
        assert_eq!(b.distance_m, Some(37.5));
        assert_eq!(b.score, None);
    }

    #[test]
    fn malformed_label_row_reports_line_number() {
        let dir = tempdir();
        let path = dir.path().join("bad.csv");
        std::fs::write(
            &path,
            format!("{LABEL_HEADER}\ncar,1,2,3,4,,\ncar,oops,2,3,4,,\n"),
        )
        .unwrap();
        let err = load_labels(&path).unwrap_err();
        match err {
            Error::Malformed { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn random_boxes_round_trip_exactly() {
        let dir = tempdir();
        let path = dir.path().join("rand.csv");
        let mut rng = crate::rng::PixelRng::keyed(11, 0);
        let mut boxes = Vec::new();
        for i in 0..100 {
            let x0 = rng.next_f64() * 500.0;
            let y0 = rng.next_f64() * 300.0;
            let b = BoundingBox {
                class: if i % 2 == 0 { "car".into() } else { "person".into() },
                x_min: x0,
                y_min: y0,
                x_max: x0 + 1.0 + rng.next_f64() * 100.0,
                y_max: y0 + 1.0 + rng.next_f64() * 80.0,
                distance_m: if i % 3 == 0 { None } else { Some(rng.next_f64() * 200.0) },
                score: if i % 5 == 0 { None } else { Some(rng.next_f64()) },
            };
            boxes.push(b);
        }
        let labels = LabelSet {
            scene_id: "rand".into(),
            boxes,
        };
        save_labels(&labels, &path).unwrap();
        let back = load_labels(&path).unwrap();
        assert_eq!(back, labels);
        // A second trip must be byte-stable too.
        let path2 = dir.path().join("rand2.csv");
        save_labels(&back, &path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn detections_require_scores() {
        let dir = tempdir();
        let path = dir.path().join("det.csv");
        std::fs::write(
            &path,
            format!("{LABEL_HEADER}\ncar,1,2,3,4,,0.9\ncar,5,6,7,8,,\n"),
        )
        .unwrap();
        let err = load_detections(&path).unwrap_err();
        assert!(err.to_string().contains("missing a score"), "{err}");
        assert!(err.to_string().contains(":3:"), "{err}");
    }

    #[test]
    fn manifest_round_trips_and_validates() {
        let dir = tempdir();
        let scene = SceneIrradiance::uniform("a", 2, 2, 1, 3.0, 1.0).unwrap();
        save_scene(&scene, &dir.path().join("a")).unwrap();
        save_labels(
            &LabelSet {
                scene_id: "a".into(),
                boxes: vec![BoundingBox::new("car", 0.0, 0.0, 1.0, 1.0)],
            },
            &dir.path().join("a.csv"),
        )
        .unwrap();

        let manifest = DatasetManifest {
            name: "set".into(),
            root: dir.path().to_path_buf(),
            entries: vec![ManifestEntry {
                scene_id: "a".into(),
                scene_file: PathBuf::from("a.meta"),
                label_file: PathBuf::from("a.csv"),
            }],
            provenance: vec![("origin".into(), "unit-test".into())],
        };
        let path = dir.path().join("set.txt");
        save_manifest(&manifest, &path).unwrap();

        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(MANIFEST_HEADER));
        assert!(text.contains("# provenance: origin=unit-test"));

        let back = load_manifest(&path).unwrap();
        assert_eq!(back.entries, manifest.entries);
        assert_eq!(back.provenance, manifest.provenance);
        assert_eq!(back.name, "set");
    }

    #[test]
    fn manifest_rejects_missing_files_and_duplicates() {
        let dir = tempdir();
        let path = dir.path().join("m.txt");
        std::fs::write(
            &path,
            format!("{MANIFEST_HEADER}\nx,gone.meta,gone.csv\n"),
        )
        .unwrap();
        let err = load_manifest(&path).unwrap_err();
        assert!(err.to_string().contains("missing file"), "{err}");

        std::fs::write(
            &path,
            format!("{MANIFEST_HEADER}\nx,a.meta,a.csv\nx,b.meta,b.csv\n"),
        )
        .unwrap();
        let err = load_manifest(&path).unwrap_err();
        assert!(err.to_string().contains("duplicate scene id"), "{err}");
    }
}
