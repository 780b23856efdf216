//! Registration unposing: inverting skinning and pose correctives to express
//! a posed, clothed mesh as canonical-space offsets, then baking those into
//! displacement maps.
//!
//! This is the preprocessing that turns registered scan meshes (fixed
//! topology, annotated with shape/pose) into the raster training data the
//! geometry generator consumes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::body::{
    pose_blendshape, shaped_template, vertex_transforms, BodyModel, BodyShape,
    Pose,
};
use crate::error::{invalid, shape_mismatch, Error, Result};
use crate::math::{sub3, Vec3};
use crate::uv::{bake_dispmap_with_stats, DispMap, UvAtlas};

/// Result of unposing one registration.
#[derive(Debug, Clone)]
pub struct UnposeResult {
    /// Canonical-space clothing offsets, one per vertex.
    pub offsets: Vec<Vec3>,
    /// Vertices whose blended skinning transform was singular; their offsets
    /// are zeroed and flagged here rather than failing the whole mesh.
    pub singular_vertices: Vec<usize>,
}

/// Inverts the forward posing map for a registration with known shape and
/// pose: applies the inverse of each vertex's blended skinning transform,
/// then subtracts the shaped template and the pose correctives.
pub fn unpose_registration(
    model: &BodyModel,
    registered: &[Vec3],
    shape: &BodyShape,
    pose: &Pose,
) -> Result<UnposeResult> {
    if registered.len() != model.vertex_count() {
        return Err(shape_mismatch(
            "unpose_registration vertices",
            &[registered.len(), 3],
            &[model.vertex_count(), 3],
        ));
    }
    if !registered.iter().flatten().all(|v| v.is_finite()) {
        return Err(invalid("registration contains non-finite vertices"));
    }
    let transforms = vertex_transforms(model, shape, pose)?;
    let shaped = shaped_template(model, shape)?;
    let correctives = pose_blendshape(model, pose)?;

    let mut offsets = vec![[0.0; 3]; registered.len()];
    let mut singular_vertices = Vec::new();
    for (v, (reg, tf)) in registered.iter().zip(&transforms).enumerate() {
        match tf.inverse(1e-12) {
            Some(inv) => {
                let canonical = inv.apply(*reg);
                offsets[v] = sub3(sub3(canonical, shaped[v]), correctives[v]);
            }
            None => singular_vertices.push(v),
        }
    }
    Ok(UnposeResult {
        offsets,
        singular_vertices,
    })
}

/// Metadata attached to each produced displacement map.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DispMapRecord {
    pub dispmap: String,
    pub theta: Vec<f64>,
    pub root_orient: Vec<f64>,
    pub betas: Vec<f64>,
    pub c_g: usize,
}

/// Unposes one registration and bakes the offsets into a displacement map.
pub fn registration_to_dispmap(
    model: &BodyModel,
    atlas: &UvAtlas,
    registered: &[Vec3],
    shape: &BodyShape,
    pose: &Pose,
    resolution: usize,
) -> Result<DispMap> {
    let unposed = unpose_registration(model, registered, shape, pose)?;
    if !unposed.singular_vertices.is_empty() {
        eprintln!(
            "registration_to_dispmap: {} vertices had singular blends",
            unposed.singular_vertices.len()
        );
    }
    let (map, _stats) = bake_dispmap_with_stats(&unposed.offsets, &model.faces, atlas, resolution)?;
    Ok(map)
}

/// Sidecar annotations expected next to each registration file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegistrationSidecar {
    pub pose: Vec<f64>,
    #[serde(default)]
    pub root_orient: Option<Vec<f64>>,
    pub betas: Vec<f64>,
    pub clothing_type: String,
}

/// Outcome of a batch run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchUnposeReport {
    pub processed: usize,
    pub failed: usize,
    pub index_path: String,
}

/// Unposes every registration in a directory into displacement maps plus a
/// JSON-lines index. Registrations are `.obj` meshes or `.f32` container
/// dirs, each with a `<stem>.json` sidecar. Files are processed in filename
/// order; per-file failures are logged and skipped, and more than 1%
/// failures makes the whole run fail.
pub fn batch_unpose(
    dataset_dir: &Path,
    out_dir: &Path,
    model: &BodyModel,
    atlas: &UvAtlas,
    resolution: usize,
) -> Result<BatchUnposeReport> {
    fs::create_dir_all(out_dir)?;
    let mut entries: Vec<PathBuf> = fs::read_dir(dataset_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "obj").unwrap_or(false))
        .collect();
    entries.sort();

    let mut records = Vec::new();
    let mut failed = 0usize;
    for path in &entries {
        match unpose_one(path, out_dir, model, atlas, resolution) {
            Ok(record) => records.push(record),
            Err(err) => {
                eprintln!("batch_unpose: skipping {}: {err}", path.display());
                failed += 1;
            }
        }
    }
    let index_path = out_dir.join("index.jsonl");
    let mut text = String::new();
    for r in &records {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    fs::write(&index_path, text)?;

    let total = records.len() + failed;
    if total > 0 && failed as f64 > 0.01 * total as f64 {
        return Err(Error::Validation(format!(
            "batch_unpose: {failed}/{total} registrations failed"
        )));
    }
    Ok(BatchUnposeReport {
        processed: records.len(),
        failed,
        index_path: index_path.to_string_lossy().into_owned(),
    })
}

fn unpose_one(
    path: &Path,
    out_dir: &Path,
    model: &BodyModel,
    atlas: &UvAtlas,
    resolution: usize,
) -> Result<DispMapRecord> {
    let sidecar_path = path.with_extension("json");
    let sidecar: RegistrationSidecar =
        serde_json::from_str(&fs::read_to_string(&sidecar_path).map_err(|e| Error::IoPath {
            path: sidecar_path.clone(),
            source: e,
        })?)?;
    let mesh = crate::obj::import_obj(path)?;
    if mesh.vertices.len() != model.vertex_count() {
        return Err(Error::ModelFormat(format!(
            "registration has {} vertices, model has {}",
            mesh.vertices.len(),
            model.vertex_count()
        )));
    }
    if mesh.faces != model.faces {
        return Err(Error::ModelFormat(
            "registration topology differs from the model's face list".into(),
        ));
    }
    let clothing = crate::labeler::ClothingType::from_name(&sidecar.clothing_type)?;
    let pose = Pose {
        body_pose: sidecar.pose.clone(),
        root_orient: match &sidecar.root_orient {
            Some(v) if v.len() == 3 => [v[0], v[1], v[2]],
            Some(_) => return Err(invalid("root_orient must have 3 entries")),
            None => [0.0; 3],
        },
    };
    let shape = BodyShape {
        betas: sidecar.betas.clone(),
    };
    let map = registration_to_dispmap(model, atlas, &mesh.vertices, &shape, &pose, resolution)?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "reg".into());
    let rel = format!("{stem}_disp");
    map.save_f32(&out_dir.join(&rel))?;
    Ok(DispMapRecord {
        dispmap: rel,
        theta: sidecar.pose,
        root_orient: pose.root_orient.to_vec(),
        betas: sidecar.betas,
        c_g: clothing.code(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::{clothed_template, lbs, pose_clothed_body};
    use crate::datagen::{make_toy_body, sinusoidal_offsets, toy_pose_bank};
    use crate::uv::{bake_dispmap, build_mask, sample_dispmap};

    #[test]
    fn unpose_of_minimal_body_gives_zero_offsets() {
        let (model, atlas) = make_toy_body();
        let pose = &toy_pose_bank(1, 3)[0];
        let shape = BodyShape {
            betas: vec![0.4, -0.6],
        };
        let mask = build_mask(&atlas, 64).unwrap();
        let zero_map = DispMap::zero(64, mask);
        let mesh = pose_clothed_body(&model, &shape, pose, &zero_map, &atlas).unwrap();
        let result = unpose_registration(&model, &mesh.vertices, &shape, pose).unwrap();
        assert!(result.singular_vertices.is_empty());
        let worst = result
            .offsets
            .iter()
            .flatten()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(worst < 1e-9, "max offset {worst}");
    }

    #[test]
    fn unpose_recovers_sampled_offsets() {
        let (model, atlas) = make_toy_body();
        let pose = &toy_pose_bank(2, 9)[1];
        let shape = BodyShape::neutral(2);
        let offsets = sinusoidal_offsets(&model, 0.02);
        let map = bake_dispmap(&offsets, &model.faces, &atlas, 128).unwrap();
        let mesh = pose_clothed_body(&model, &shape, pose, &map, &atlas).unwrap();
        let sampled = sample_dispmap(&map, &atlas).unwrap();

        let result = unpose_registration(&model, &mesh.vertices, &shape, pose).unwrap();
        let mut worst: f64 = 0.0;
        for (a, b) in result.offsets.iter().zip(&sampled) {
            for i in 0..3 {
                worst = worst.max((a[i] - b[i]).abs());
            }
        }
        assert!(worst < 1e-9, "offset recovery error {worst}");
    }

    #[test]
    fn rest_pose_unpose_is_direct_subtraction() {
        let (model, _) = make_toy_body();
        let pose = Pose::rest(2);
        let shape = BodyShape::neutral(2);
        let shaped = shaped_template(&model, &shape).unwrap();
        let mut registered = shaped.clone();
        for v in registered.iter_mut() {
            v[0] += 0.01;
        }
        let result = unpose_registration(&model, &registered, &shape, &pose).unwrap();
        for o in &result.offsets {
            assert!((o[0] - 0.01).abs() < 1e-12);
            assert!(o[1].abs() < 1e-12);
            assert!(o[2].abs() < 1e-12);
        }
    }

    #[test]
    fn unpose_is_translation_removing_via_root() {
        // A global rigid motion expressed through root_orient leaves the
        // recovered offsets unchanged.
        let (model, atlas) = make_toy_body();
        let shape = BodyShape::neutral(2);
        let offsets = sinusoidal_offsets(&model, 0.015);
        let map = bake_dispmap(&offsets, &model.faces, &atlas, 64).unwrap();

        let mut pose = toy_pose_bank(1, 21)[0].clone();
        let plain = pose_clothed_body(&model, &shape, &pose, &map, &atlas).unwrap();
        let got_plain = unpose_registration(&model, &plain.vertices, &shape, &pose).unwrap();

        pose.root_orient = [0.3, -0.8, 0.1];
        let rotated = pose_clothed_body(&model, &shape, &pose, &map, &atlas).unwrap();
        let got_rot = unpose_registration(&model, &rotated.vertices, &shape, &pose).unwrap();

        let mut worst: f64 = 0.0;
        for (a, b) in got_plain.offsets.iter().zip(&got_rot.offsets) {
            for i in 0..3 {
                worst = worst.max((a[i] - b[i]).abs());
            }
        }
        assert!(worst < 1e-9, "offsets changed by {worst} under root motion");
    }

    #[test]
    fn mesh_to_map_to_mesh_roundtrip() {
        let (model, atlas) = make_toy_body();
        let pose = &toy_pose_bank(3, 31)[2];
        let shape = BodyShape::neutral(2);
        let offsets = sinusoidal_offsets(&model, 0.02);
        let map = bake_dispmap(&offsets, &model.faces, &atlas, 256).unwrap();
        let mesh = pose_clothed_body(&model, &shape, pose, &map, &atlas).unwrap();

        let remap =
            registration_to_dispmap(&model, &atlas, &mesh.vertices, &shape, pose, 256).unwrap();
        let remesh = pose_clothed_body(&model, &shape, pose, &remap, &atlas).unwrap();
        let mut worst: f64 = 0.0;
        for (a, b) in remesh.vertices.iter().zip(&mesh.vertices) {
            for i in 0..3 {
                worst = worst.max((a[i] - b[i]).abs());
            }
        }
        assert!(worst < 2e-3, "mesh/map/mesh round trip error {worst}");
    }

    #[test]
    fn rejects_non_finite_registration() {
        let (model, _) = make_toy_body();
        let mut verts = model.template_vertices.clone();
        verts[0][1] = f64::NAN;
        let err = unpose_registration(&model, &verts, &BodyShape::neutral(2), &Pose::rest(2));
        assert!(err.is_err());
    }

    #[test]
    fn pose_clothed_body_composition_matches_two_steps() {
        let (model, atlas) = make_toy_body();
        let pose = &toy_pose_bank(1, 77)[0];
        let shape = BodyShape {
            betas: vec![-0.3, 0.5],
        };
        let offsets = sinusoidal_offsets(&model, 0.01);
        let map = bake_dispmap(&offsets, &model.faces, &atlas, 64).unwrap();

        let composed = pose_clothed_body(&model, &shape, pose, &map, &atlas).unwrap();

        let sampled = sample_dispmap(&map, &atlas).unwrap();
        let canonical = clothed_template(&model, &shape, pose, &sampled).unwrap();
        let two_step = lbs(&model, &canonical, &shape, pose).unwrap();
        for (a, b) in composed.vertices.iter().zip(&two_step.vertices) {
            for i in 0..3 {
                assert!((a[i] - b[i]).abs() < 1e-12);
            }
        }
    }
}
