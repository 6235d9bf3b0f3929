//! Subcommand implementations. Every command returns `Ok(())` on success and
//! a single-line error otherwise; `main` turns that into exit codes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use camforge_core::error::{Error, Result};
use camforge_core::eval::{
    ap_by_distance, average_precision, build_matrix, match_detections, matrix_to_csv,
    merge_matches, render_matrix_text, MatchResult, MatrixCell,
};
use camforge_core::exposure;
use camforge_core::isp::{dark_level_census, GammaMode};
use camforge_core::kid::{kid, load_features_csv};
use camforge_core::rng::fnv1a64;
use camforge_core::scene_io::{self, ManifestEntry};
use camforge_core::sensor;
use camforge_core::variants::{self, scale_labels, VariantSpec};
use camforge_core::{DatasetManifest, LabelSet};
use rayon::prelude::*;

use crate::config::ExperimentConfig;

fn require_manifest(cfg: &ExperimentConfig) -> Result<DatasetManifest> {
    let path = cfg
        .manifest
        .as_ref()
        .ok_or_else(|| Error::invalid("config is missing input.manifest"))?;
    scene_io::load_manifest(path)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Renders every scene of the base manifest through the configured sensor
/// and ISP, writing a derived dataset under `<out>/simulated/`.
pub fn cmd_simulate(cfg: &ExperimentConfig) -> Result<()> {
    let base = require_manifest(cfg)?;
    if base.entries.is_empty() {
        return Err(Error::invalid("input manifest has no scenes"));
    }
    let out = cfg.out_dir.join("simulated");
    std::fs::create_dir_all(out.join("scenes")).map_err(|e| Error::io(&out, e))?;
    std::fs::create_dir_all(out.join("labels")).map_err(|e| Error::io(&out, e))?;

    let entries: Vec<ManifestEntry> = base
        .entries
        .par_iter()
        .map(|entry| -> Result<ManifestEntry> {
            let scene = scene_io::load_scene(&base.resolve(&entry.scene_file))?;
            let mut labels = scene_io::load_labels(&base.resolve(&entry.label_file))?;
            labels.scene_id = entry.scene_id.clone();
            let seed = cfg.seed ^ fnv1a64(entry.scene_id.as_bytes());

            let scale = scene.pixel_pitch_um() / cfg.sensor.pixel_pitch_um;
            let prepared = sensor::prepare_scene_for_sensor(&scene, &cfg.sensor)?;
            let blurred = sensor::apply_psf(&prepared, cfg.sensor.psf_fwhm_um)?;
            let raw = exposure::capture(&blurred, &cfg.sensor, &cfg.exposure, seed)?;

            let image_base = out.join("scenes").join(&entry.scene_id);
            sensor::save_raw(&raw, &image_base)?;
            let scene_file = if cfg.pipeline.is_active() {
                let img = if cfg.pipeline.demosaic {
                    camforge_core::isp::demosaic_bilinear(&raw)?
                } else {
                    camforge_core::isp::normalize(&raw)?
                };
                let img = match &cfg.pipeline.gamma {
                    GammaMode::Off => img,
                    GammaMode::Fixed(g) => camforge_core::isp::apply_gamma(&img, *g)?,
                    GammaMode::Adaptive => camforge_core::isp::adaptive_gamma(&img)?.0,
                };
                camforge_core::isp::save_processed(&img, &image_base, cfg.pipeline.out_depth)?;
                PathBuf::from(format!("scenes/{}.proc.png", entry.scene_id))
            } else {
                PathBuf::from(format!("scenes/{}.raw.png", entry.scene_id))
            };

            let scaled = scale_labels(&labels, scale)?;
            let filtered = variants::apply_policy(&scaled, &cfg.labeling)?;
            let label_file = PathBuf::from(format!("labels/{}.csv", entry.scene_id));
            scene_io::save_labels(&filtered, &out.join(&label_file))?;
            Ok(ManifestEntry {
                scene_id: entry.scene_id.clone(),
                scene_file,
                label_file,
            })
        })
        .collect::<Result<_>>()?;

    let manifest = DatasetManifest {
        name: "simulated".into(),
        root: out.clone(),
        entries,
        provenance: vec![
            ("command".into(), "simulate".into()),
            ("seed_base".into(), cfg.seed.to_string()),
            ("sensor".into(), cfg.sensor.name.clone()),
            ("pixel_pitch_um".into(), cfg.sensor.pixel_pitch_um.to_string()),
            ("labeling_policy".into(), cfg.labeling.label()),
        ],
    };
    scene_io::save_manifest(&manifest, &out.join("manifest.txt"))?;
    println!(
        "simulated {} scenes to {}",
        manifest.entries.len(),
        out.display()
    );
    Ok(())
}

/// Generates the configured one-axis variant family under `<out>/variants/`.
pub fn cmd_variants(cfg: &ExperimentConfig) -> Result<()> {
    let axis = cfg
        .axis
        .ok_or_else(|| Error::invalid("config is missing variants.axis"))?;
    if cfg.values.is_empty() {
        return Err(Error::invalid("config is missing variants.values"));
    }
    let spec = VariantSpec {
        base_manifest: require_manifest(cfg)?,
        axis,
        values: cfg.values.clone(),
        sensor: cfg.sensor.clone(),
        exposure: cfg.exposure.clone(),
        pipeline: cfg.pipeline.clone(),
        labeling: cfg.labeling.clone(),
        seed_base: cfg.seed,
    };
    let out = cfg.out_dir.join("variants");
    let manifests = variants::generate_variants(&spec, &out)?;
    for m in &manifests {
        println!("variant {} ({} scenes)", m.name, m.entries.len());
    }
    Ok(())
}

/// Matches per-scene detection CSVs against a dataset's labels and writes
/// the PR curve, summary, and (optionally) distance-binned AP under
/// `<out>/eval/`.
pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<()> {
    let manifest = require_manifest(cfg)?;
    let det_dir = cfg
        .detections
        .as_ref()
        .ok_or_else(|| Error::invalid("config is missing eval.detections"))?;
    if manifest.entries.is_empty() {
        return Err(Error::invalid("input manifest has no scenes"));
    }

    // Disjoint-canvas offset: shifting each scene's boxes far apart lets the
    // corpus-level distance binning run as a single global match with no
    // cross-scene overlap (IoU is translation-invariant within a scene).
    const SCENE_OFFSET: f64 = 1.0e7;

    let mut per_scene: Vec<(String, MatchResult)> = Vec::new();
    let mut global_gts = LabelSet {
        scene_id: "corpus".into(),
        boxes: Vec::new(),
    };
    let mut global_dets = global_gts.clone();
    for (i, entry) in manifest.entries.iter().enumerate() {
        let mut gts = scene_io::load_labels(&manifest.resolve(&entry.label_file))?;
        gts.scene_id = entry.scene_id.clone();
        let gts = variants::apply_policy(&gts, &cfg.labeling)?;
        let det_path = det_dir.join(format!("{}.csv", entry.scene_id));
        let dets = scene_io::load_detections(&det_path)?;
        let m = match_detections(&dets, &gts, cfg.iou_threshold)?;
        per_scene.push((entry.scene_id.clone(), m));

        if cfg.distance_bins.is_some() {
            let dx = i as f64 * SCENE_OFFSET;
            for set in [(&gts, &mut global_gts), (&dets, &mut global_dets)] {
                for b in &set.0.boxes {
                    let mut b = b.clone();
                    b.x_min += dx;
                    b.x_max += dx;
                    set.1.boxes.push(b);
                }
            }
        }
    }

    let merged = merge_matches(
        &per_scene
            .iter()
            .map(|(_, m)| m.clone())
            .collect::<Vec<_>>(),
    )?;
    let curve = average_precision(&merged);

    let out = cfg.out_dir.join("eval");
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;

    let mut pr = String::from("recall,precision\n");
    for (r, p) in &curve.points {
        let _ = writeln!(pr, "{r},{p}");
    }
    write_text(&out.join("pr_curve.csv"), &pr)?;

    let mut scenes_csv = String::from("scene_id,gts,dets,tp,fp,fn\n");
    for (id, m) in &per_scene {
        let _ = writeln!(
            scenes_csv,
            "{id},{},{},{},{},{}",
            m.num_gts(),
            m.detections.len(),
            m.tp,
            m.fp,
            m.fn_count
        );
    }
    write_text(&out.join("per_scene.csv"), &scenes_csv)?;

    let mut summary = String::new();
    let _ = writeln!(summary, "ap={}", curve.ap);
    let _ = writeln!(summary, "iou_threshold={}", cfg.iou_threshold);
    let _ = writeln!(summary, "scenes={}", per_scene.len());
    let _ = writeln!(summary, "gts={}", merged.num_gts());
    let _ = writeln!(summary, "dets={}", merged.detections.len());
    let _ = writeln!(summary, "tp={}", merged.tp);
    let _ = writeln!(summary, "fp={}", merged.fp);
    let _ = writeln!(summary, "fn={}", merged.fn_count);

    if let Some(edges) = &cfg.distance_bins {
        let binned = ap_by_distance(&global_dets, &global_gts, edges, cfg.iou_threshold)?;
        let mut csv = String::from("lo_m,hi_m,gts,dets,ap\n");
        for b in &binned.bins {
            let _ = writeln!(csv, "{},{},{},{},{}", b.lo_m, b.hi_m, b.gts, b.dets, b.ap);
        }
        write_text(&out.join("ap_by_distance.csv"), &csv)?;
        let _ = writeln!(summary, "unassignable_fp={}", binned.unassignable_fp);
    }
    write_text(&out.join("summary.txt"), &summary)?;

    println!(
        "ap={} tp={} fp={} fn={} scenes={}",
        curve.ap,
        merged.tp,
        merged.fp,
        merged.fn_count,
        per_scene.len()
    );
    Ok(())
}

/// Parses a `train,eval,ap,count` CSV into matrix cells.
fn load_cells(path: &Path) -> Result<Vec<MatrixCell>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "train,eval,ap,count" => {}
        _ => {
            return Err(Error::malformed(
                path,
                1,
                "expected header: train,eval,ap,count".to_string(),
            ))
        }
    }
    let mut cells = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(|t| t.trim()).collect();
        if parts.len() != 4 {
            return Err(Error::malformed(
                path,
                line_no,
                format!("expected 4 fields, got {}", parts.len()),
            ));
        }
        let ap: f64 = parts[2]
            .parse()
            .map_err(|_| Error::malformed(path, line_no, format!("bad ap {:?}", parts[2])))?;
        let count: u64 = parts[3]
            .parse()
            .map_err(|_| Error::malformed(path, line_no, format!("bad count {:?}", parts[3])))?;
        cells.push(MatrixCell {
            train: parts[0].to_string(),
            eval: parts[1].to_string(),
            ap,
            count,
        });
    }
    Ok(cells)
}

/// Builds the cross-dataset AP table from a cells CSV, prints it with its
/// asymmetry report, and optionally writes text/CSV renderings.
pub fn cmd_matrix(cells_path: &Path, out_dir: Option<&Path>) -> Result<()> {
    let cells = load_cells(cells_path)?;
    let matrix = build_matrix(&cells, 0.05)?;
    let text = render_matrix_text(&matrix);
    print!("{text}");
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_text(&dir.join("matrix.txt"), &text)?;
        write_text(&dir.join("matrix.csv"), &matrix_to_csv(&matrix))?;
    }
    Ok(())
}

/// Computes the block-averaged kernel distance between two feature CSVs.
pub fn cmd_kid(a: &Path, b: &Path, block_size: usize, seed: u64) -> Result<()> {
    let fa = load_features_csv(a)?;
    let fb = load_features_csv(b)?;
    let est = kid(&fa, &fb, block_size, seed)?;
    if est.dropped_a > 0 || est.dropped_b > 0 {
        log::info!(
            "dropped {} vectors from {} and {} from {} (partial blocks)",
            est.dropped_a,
            fa.source_name,
            est.dropped_b,
            fb.source_name
        );
    }
    println!(
        "kid_mean={} kid_std={} blocks={}",
        est.mean, est.std, est.blocks
    );
    Ok(())
}

/// Counts distinct dark levels in each raw frame of a dataset.
pub fn cmd_census(manifest_path: &Path, fraction: f64) -> Result<()> {
    let manifest = scene_io::load_manifest(manifest_path)?;
    if manifest.entries.is_empty() {
        return Err(Error::invalid("manifest has no scenes"));
    }
    for entry in &manifest.entries {
        let file = manifest.resolve(&entry.scene_file);
        let name = file.to_string_lossy().into_owned();
        let raw_path = if name.ends_with(".raw.png") {
            file
        } else if let Some(stem) = name.strip_suffix(".proc.png") {
            // Processed datasets keep their raw frames alongside.
            PathBuf::from(format!("{stem}.raw.png"))
        } else {
            return Err(Error::invalid(format!(
                "scene {:?} has no raw frame ({} is not a .raw.png)",
                entry.scene_id,
                file.display()
            )));
        };
        let raw = sensor::load_raw(&raw_path)?;
        let distinct = dark_level_census(&raw, fraction)?;
        println!(
            "{} dark_levels={} bit_depth={}",
            entry.scene_id, distinct, raw.bit_depth
        );
    }
    Ok(())
}
