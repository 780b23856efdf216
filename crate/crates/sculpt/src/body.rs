//! Parametric body model: canonical shape, pose-corrective blendshapes, joint
//! regression and linear blend skinning.
//!
//! The model follows the standard fixed-topology template formulation: a
//! canonical-pose template deformed by a linear shape basis and a linear
//! pose-corrective basis, skinned by blending per-joint rigid transforms.
//! Clothing enters as per-vertex canonical-space offsets added before
//! skinning, so a clothed mesh articulates with the same pose controls as the
//! minimal body.

use std::path::Path;

use crate::container::Container;
use crate::error::{invalid, shape_mismatch, Error, Result};
use crate::math::{add3, Affine3, Mat3, Vec3, IDENTITY3};
use crate::uv::{sample_dispmap, DispMap, UvAtlas};

/// Sentinel parent index marking the kinematic root in container files.
pub const ROOT_SENTINEL: u32 = u32::MAX;

/// Fixed-topology body model with linear shape/pose bases.
///
/// `vertex_count = N`, `joint_count = K_total` (root + articulated joints).
/// SMPL-format models have `N = 6890`, `K_total = 24`; the procedural toy
/// body used in tests has `N ~ 200`, `K_total = 3`.
#[derive(Debug, Clone)]
pub struct BodyModel {
    /// N x 3 canonical-pose template, meters.
    pub template_vertices: Vec<Vec3>,
    /// F x 3 triangle list (shared by every mesh the model produces).
    pub faces: Vec<[u32; 3]>,
    /// N x 3 x S shape basis, flat row-major, meters per unit coefficient.
    pub shape_dirs: Vec<f64>,
    /// N x 3 x (9 * articulated) pose-corrective basis, flat row-major.
    pub pose_dirs: Vec<f64>,
    /// K_total x N joint regressor, flat row-major.
    pub joint_regressor: Vec<f64>,
    /// N x K_total skinning weights, flat row-major; rows sum to 1.
    pub skin_weights: Vec<f64>,
    /// Kinematic parents; `parents[0]` is the root sentinel.
    pub parents: Vec<u32>,
    /// Per-vertex UV coordinates in [0,1], carried alongside the geometry
    /// because the clothing representation lives in UV space.
    pub vertex_uv: Vec<[f64; 2]>,
}

/// Body pose: axis-angle rotations of the articulated joints plus a separate
/// root orientation. The root orientation is a viewpoint/placement concern
/// and defaults to identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    /// 3 * articulated-joint axis-angle values, radians. Length 69 for
    /// SMPL-format models (23 joints).
    pub body_pose: Vec<f64>,
    pub root_orient: Vec3,
}

impl Pose {
    pub fn rest(articulated_joints: usize) -> Pose {
        Pose {
            body_pose: vec![0.0; 3 * articulated_joints],
            root_orient: [0.0; 3],
        }
    }

    pub fn articulated_joints(&self) -> usize {
        self.body_pose.len() / 3
    }

    pub fn validate(&self) -> Result<()> {
        if self.body_pose.len() % 3 != 0 {
            return Err(invalid(format!(
                "body_pose length {} is not a multiple of 3",
                self.body_pose.len()
            )));
        }
        if !self.body_pose.iter().all(|v| v.is_finite())
            || !self.root_orient.iter().all(|v| v.is_finite())
        {
            return Err(invalid("pose contains non-finite values"));
        }
        Ok(())
    }
}

/// Shape coefficients for the linear shape basis.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyShape {
    pub betas: Vec<f64>,
}

impl BodyShape {
    pub fn neutral(count: usize) -> BodyShape {
        BodyShape {
            betas: vec![0.0; count],
        }
    }
}

/// Posed mesh in the model's fixed topology.
#[derive(Debug, Clone)]
pub struct ClothedMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
}

impl BodyModel {
    pub fn vertex_count(&self) -> usize {
        self.template_vertices.len()
    }

    pub fn joint_count(&self) -> usize {
        self.parents.len()
    }

    /// Articulated joints (everything but the root).
    pub fn articulated_joints(&self) -> usize {
        self.joint_count() - 1
    }

    pub fn shape_count(&self) -> usize {
        let n3 = self.vertex_count() * 3;
        if n3 == 0 {
            0
        } else {
            self.shape_dirs.len() / n3
        }
    }

    /// Checks the structural invariants: dimension agreement, weight rows
    /// summing to one, a single acyclic root, faces in range.
    pub fn validate(&self) -> Result<()> {
        let n = self.vertex_count();
        let k = self.joint_count();
        if k == 0 {
            return Err(Error::ModelFormat("model has no joints".into()));
        }
        if self.parents[0] != ROOT_SENTINEL {
            return Err(Error::ModelFormat(
                "parents[0] must be the root sentinel".into(),
            ));
        }
        for (j, &p) in self.parents.iter().enumerate().skip(1) {
            // Parents must precede children; this also rules out cycles and
            // a second root.
            if p as usize >= j {
                return Err(Error::ModelFormat(format!(
                    "joint {j} has parent {p}; parents must precede children"
                )));
            }
        }
        if self.shape_dirs.len() % (n * 3) != 0 {
            return Err(Error::ModelFormat("shape_dirs size mismatch".into()));
        }
        let articulated = k - 1;
        if self.pose_dirs.len() != n * 3 * 9 * articulated {
            return Err(Error::ModelFormat(format!(
                "pose_dirs has {} entries, expected {}",
                self.pose_dirs.len(),
                n * 3 * 9 * articulated
            )));
        }
        if self.joint_regressor.len() != k * n {
            return Err(Error::ModelFormat("joint_regressor size mismatch".into()));
        }
        if self.skin_weights.len() != n * k {
            return Err(Error::ModelFormat("skin_weights size mismatch".into()));
        }
        for v in 0..n {
            let row = &self.skin_weights[v * k..(v + 1) * k];
            let mut sum = 0.0;
            for &w in row {
                if w < 0.0 {
                    return Err(Error::ModelFormat(format!(
                        "negative skin weight at vertex {v}"
                    )));
                }
                sum += w;
            }
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::ModelFormat(format!(
                    "skin weights of vertex {v} sum to {sum}, expected 1"
                )));
            }
        }
        for f in &self.faces {
            if f.iter().any(|&i| i as usize >= n) {
                return Err(Error::ModelFormat("face indexes out-of-range vertex".into()));
            }
        }
        if self.vertex_uv.len() != n {
            return Err(Error::ModelFormat("vertex_uv size mismatch".into()));
        }
        Ok(())
    }

    pub fn check_pose(&self, pose: &Pose) -> Result<()> {
        pose.validate()?;
        if pose.articulated_joints() != self.articulated_joints() {
            return Err(invalid(format!(
                "pose has {} articulated joints, model has {}",
                pose.articulated_joints(),
                self.articulated_joints()
            )));
        }
        Ok(())
    }

    pub fn check_shape(&self, shape: &BodyShape) -> Result<()> {
        if shape.betas.len() != self.shape_count() {
            return Err(invalid(format!(
                "shape has {} betas, model has {}",
                shape.betas.len(),
                self.shape_count()
            )));
        }
        Ok(())
    }

    /// Serializes into the directory container format.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let n = self.vertex_count();
        let k = self.joint_count();
        let s = self.shape_count();
        let mut c = Container::new("body_model");
        c.metadata.insert("vertex_count".into(), n.to_string());
        c.metadata.insert("joint_count".into(), k.to_string());
        c.metadata.insert("shape_count".into(), s.to_string());
        let mut flat = Vec::with_capacity(n * 3);
        for v in &self.template_vertices {
            flat.extend_from_slice(v);
        }
        c.put_f32("template_vertices", &[n, 3], flat);
        c.put_f32("shape_dirs", &[n, 3, s], self.shape_dirs.clone());
        c.put_f32(
            "pose_dirs",
            &[n, 3, 9 * (k - 1)],
            self.pose_dirs.clone(),
        );
        c.put_f32("joint_regressor", &[k, n], self.joint_regressor.clone());
        c.put_f32("skin_weights", &[n, k], self.skin_weights.clone());
        let mut uv = Vec::with_capacity(n * 2);
        for p in &self.vertex_uv {
            uv.extend_from_slice(p);
        }
        c.put_f32("uv_coords", &[n, 2], uv);
        let mut faces = Vec::with_capacity(self.faces.len() * 3);
        for f in &self.faces {
            faces.extend_from_slice(f);
        }
        c.put_u32("faces", &[self.faces.len(), 3], faces);
        c.put_u32("parents", &[k], self.parents.clone());
        c.save(dir)
    }

    pub fn load(dir: &Path) -> Result<BodyModel> {
        let c = Container::load(dir)?;
        if c.kind != "body_model" {
            return Err(Error::ModelFormat(format!(
                "container kind `{}` is not a body model",
                c.kind
            )));
        }
        let (tshape, tdata) = c.get_f32("template_vertices")?;
        if tshape.len() != 2 || tshape[1] != 3 {
            return Err(Error::ModelFormat("template_vertices must be N x 3".into()));
        }
        let n = tshape[0];
        let template_vertices: Vec<Vec3> = tdata
            .chunks_exact(3)
            .map(|v| [v[0], v[1], v[2]])
            .collect();
        let (_, shape_dirs) = c.get_f32("shape_dirs")?;
        let (_, pose_dirs) = c.get_f32("pose_dirs")?;
        let (jshape, joint_regressor) = c.get_f32("joint_regressor")?;
        let k = jshape[0];
        let (_, skin_weights) = c.get_f32("skin_weights")?;
        let (_, uv) = c.get_f32("uv_coords")?;
        let vertex_uv: Vec<[f64; 2]> = uv.chunks_exact(2).map(|p| [p[0], p[1]]).collect();
        let (_, face_data) = c.get_u32("faces")?;
        let faces: Vec<[u32; 3]> = face_data
            .chunks_exact(3)
            .map(|f| [f[0], f[1], f[2]])
            .collect();
        let (pshape, parents) = c.get_u32("parents")?;
        if pshape != [k] {
            return Err(Error::ModelFormat("parents shape mismatch".into()));
        }
        let model = BodyModel {
            template_vertices,
            faces,
            shape_dirs: shape_dirs.to_vec(),
            pose_dirs: pose_dirs.to_vec(),
            joint_regressor: joint_regressor.to_vec(),
            skin_weights: skin_weights.to_vec(),
            parents: parents.to_vec(),
            vertex_uv,
        };
        let _ = n;
        model.validate()?;
        Ok(model)
    }
}

/// Axis-angle to rotation matrix. Uses the closed form above `|w| = 1e-8`
/// and the second-order Taylor expansion of the coefficients below it, so
/// the map stays smooth through zero.
pub fn rodrigues(axis_angle: Vec3) -> Result<Mat3> {
    if !axis_angle.iter().all(|v| v.is_finite()) {
        return Err(invalid("rodrigues: non-finite axis-angle"));
    }
    let [x, y, z] = axis_angle;
    let theta_sq = x * x + y * y + z * z;
    let theta = theta_sq.sqrt();
    let (a, b) = if theta < 1e-8 {
        // sin(t)/t ~ 1 - t^2/6,  (1-cos(t))/t^2 ~ 1/2 - t^2/24
        (1.0 - theta_sq / 6.0, 0.5 - theta_sq / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta_sq)
    };
    // R = I + a K + b K^2 with K the cross-product matrix of axis_angle.
    Ok([
        [
            1.0 + b * (-z * z - y * y),
            -a * z + b * x * y,
            a * y + b * x * z,
        ],
        [
            a * z + b * x * y,
            1.0 + b * (-z * z - x * x),
            -a * x + b * y * z,
        ],
        [
            -a * y + b * x * z,
            a * x + b * y * z,
            1.0 + b * (-y * y - x * x),
        ],
    ])
}

/// Pose-corrective feature: `(R(w_k) - I)` flattened row-major for every
/// articulated joint. Zero at the rest pose by construction.
pub fn pose_feature(pose: &Pose) -> Result<Vec<f64>> {
    pose.validate()?;
    let joints = pose.articulated_joints();
    let mut feat = Vec::with_capacity(9 * joints);
    for k in 0..joints {
        let w = [
            pose.body_pose[3 * k],
            pose.body_pose[3 * k + 1],
            pose.body_pose[3 * k + 2],
        ];
        let r = rodrigues(w)?;
        for row in 0..3 {
            for col in 0..3 {
                feat.push(r[row][col] - IDENTITY3[row][col]);
            }
        }
    }
    Ok(feat)
}

/// Pose-corrective offsets: the pose basis contracted with [`pose_feature`].
pub fn pose_blendshape(model: &BodyModel, pose: &Pose) -> Result<Vec<Vec3>> {
    model.check_pose(pose)?;
    let feat = pose_feature(pose)?;
    Ok(contract_pose_basis(model, &feat))
}

/// Contraction of the pose basis with an arbitrary feature vector; exposed
/// so linearity is testable directly against synthetic features.
pub fn contract_pose_basis(model: &BodyModel, feature: &[f64]) -> Vec<Vec3> {
    let n = model.vertex_count();
    let f = feature.len();
    debug_assert_eq!(model.pose_dirs.len(), n * 3 * f);
    let mut out = vec![[0.0; 3]; n];
    for v in 0..n {
        for axis in 0..3 {
            let base = (v * 3 + axis) * f;
            let row = &model.pose_dirs[base..base + f];
            let mut acc = 0.0;
            for (c, &ft) in row.iter().zip(feature) {
                acc += c * ft;
            }
            out[v][axis] = acc;
        }
    }
    out
}

/// Canonical-pose template under the shape basis:
/// `template + shape_dirs . betas`.
pub fn shaped_template(model: &BodyModel, shape: &BodyShape) -> Result<Vec<Vec3>> {
    model.check_shape(shape)?;
    let n = model.vertex_count();
    let s = model.shape_count();
    let mut out = model.template_vertices.clone();
    for v in 0..n {
        for axis in 0..3 {
            let base = (v * 3 + axis) * s;
            let mut acc = 0.0;
            for (c, &beta) in model.shape_dirs[base..base + s].iter().zip(&shape.betas) {
                acc += c * beta;
            }
            out[v][axis] += acc;
        }
    }
    Ok(out)
}

/// Joint locations regressed from shaped vertices.
pub fn joint_locations(model: &BodyModel, shaped: &[Vec3]) -> Vec<Vec3> {
    let n = model.vertex_count();
    let k = model.joint_count();
    debug_assert_eq!(shaped.len(), n);
    let mut joints = vec![[0.0; 3]; k];
    for j in 0..k {
        let row = &model.joint_regressor[j * n..(j + 1) * n];
        let mut acc = [0.0; 3];
        for (w, v) in row.iter().zip(shaped) {
            acc[0] += w * v[0];
            acc[1] += w * v[1];
            acc[2] += w * v[2];
        }
        joints[j] = acc;
    }
    joints
}

/// Clothed canonical template: shaped template + pose correctives + clothing
/// offsets, all in canonical space.
pub fn clothed_template(
    model: &BodyModel,
    shape: &BodyShape,
    pose: &Pose,
    offsets: &[Vec3],
) -> Result<Vec<Vec3>> {
    if offsets.len() != model.vertex_count() {
        return Err(shape_mismatch(
            "clothed_template offsets",
            &[offsets.len(), 3],
            &[model.vertex_count(), 3],
        ));
    }
    let mut verts = shaped_template(model, shape)?;
    let correctives = pose_blendshape(model, pose)?;
    for ((v, c), d) in verts.iter_mut().zip(&correctives).zip(offsets) {
        *v = add3(add3(*v, *c), *d);
    }
    Ok(verts)
}

/// Per-joint skinning transforms for a pose: world transform of each joint
/// composed down the kinematic chain, expressed relative to the rest-pose
/// joint locations so the rest pose maps every vertex to itself.
pub fn joint_transforms(model: &BodyModel, joints: &[Vec3], pose: &Pose) -> Result<Vec<Affine3>> {
    model.check_pose(pose)?;
    let k = model.joint_count();
    let mut world = Vec::with_capacity(k);
    let root_rot = rodrigues(pose.root_orient)?;
    world.push(Affine3::from_rotation_about(root_rot, joints[0]));
    for j in 1..k {
        let parent = model.parents[j] as usize;
        let w = [
            pose.body_pose[3 * (j - 1)],
            pose.body_pose[3 * (j - 1) + 1],
            pose.body_pose[3 * (j - 1) + 2],
        ];
        let local = Affine3::from_rotation_about(rodrigues(w)?, joints[j]);
        world.push(world[parent].compose(&local));
    }
    Ok(world)
}

/// Per-vertex blended skinning transforms.
pub fn vertex_transforms(
    model: &BodyModel,
    shape: &BodyShape,
    pose: &Pose,
) -> Result<Vec<Affine3>> {
    let shaped = shaped_template(model, shape)?;
    let joints = joint_locations(model, &shaped);
    let per_joint = joint_transforms(model, &joints, pose)?;
    let n = model.vertex_count();
    let k = model.joint_count();
    let mut out = Vec::with_capacity(n);
    for v in 0..n {
        let weights = &model.skin_weights[v * k..(v + 1) * k];
        out.push(Affine3::blend(&per_joint, weights));
    }
    Ok(out)
}

/// Linear blend skinning: poses `canonical_vertices` with the blended joint
/// transforms derived from `shape` and `pose`.
pub fn lbs(
    model: &BodyModel,
    canonical_vertices: &[Vec3],
    shape: &BodyShape,
    pose: &Pose,
) -> Result<ClothedMesh> {
    if canonical_vertices.len() != model.vertex_count() {
        return Err(shape_mismatch(
            "lbs vertices",
            &[canonical_vertices.len(), 3],
            &[model.vertex_count(), 3],
        ));
    }
    let transforms = vertex_transforms(model, shape, pose)?;
    let vertices = canonical_vertices
        .iter()
        .zip(&transforms)
        .map(|(v, tf)| tf.apply(*v))
        .collect();
    Ok(ClothedMesh {
        vertices,
        faces: model.faces.clone(),
    })
}

/// Full generative geometry map: sample clothing offsets from the
/// displacement map, build the clothed canonical template, then skin it.
pub fn pose_clothed_body(
    model: &BodyModel,
    shape: &BodyShape,
    pose: &Pose,
    dispmap: &DispMap,
    atlas: &UvAtlas,
) -> Result<ClothedMesh> {
    let offsets = sample_dispmap(dispmap, atlas)?;
    let canonical = clothed_template(model, shape, pose, &offsets)?;
    lbs(model, &canonical, shape, pose)
}
