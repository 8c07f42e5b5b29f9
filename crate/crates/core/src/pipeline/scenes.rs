//! Sampling one training scene per method.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::spec::RunSpec;
use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::image::ImageRgb;
use crate::objective::{Scene, View, ViewLink};
use crate::renderer::{
    composite, default_max_gamma, make_mesh, multicam_poses, place_patch, project_patch_bbox, render,
    sample_pose, CameraPose, Intrinsics, Mesh, MeshKind, PoseRanges, RenderStatus, TextureSpec,
};
use crate::scalar::Real;
use crate::scene::BackgroundSource;
use crate::target::GroundTruth;
use crate::transforms::{apply_affine, apply_chain, sample_affine, sample_chain, AffineOp, Method};

/// What was drawn for a scene, for diagnostics and tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneInfo {
    pub mesh: Option<MeshKind>,
    pub gamma: Option<f64>,
    pub gamma_clamped: bool,
    pub boxes: Vec<BBox>,
}

/// Immutable sampling context shared by every step of a run.
pub struct SceneSampler {
    pub spec: RunSpec,
    pub backgrounds: BackgroundSource,
    pub meshes: Vec<Mesh>,
    pub intrinsics: Intrinsics,
    pub pose_ranges: PoseRanges,
    pub num_classes: usize,
}

/// Uniform choice from the pool.
pub fn choose_mesh<'m>(pool: &'m [Mesh], rng: &mut impl Rng) -> &'m Mesh {
    &pool[rng.random_range(0..pool.len())]
}

/// Texture side so the placement rectangle holds roughly one texel per patch pixel.
pub fn texture_resolution(patch_size: usize, mesh: &Mesh) -> usize {
    let frac = (mesh.placement.u1 - mesh.placement.u0).min(mesh.placement.v1 - mesh.placement.v0);
    ((patch_size as f64 / frac).ceil() as usize).max(8)
}

impl SceneSampler {
    pub fn new(spec: &RunSpec, num_classes: usize) -> Result<Self> {
        let backgrounds = match &spec.backgrounds {
            Some(dir) => BackgroundSource::from_dir(dir)?,
            None => BackgroundSource::Procedural,
        };
        let meshes = spec.config.mesh_pool.iter().map(|&k| make_mesh(k)).collect();
        Ok(Self {
            spec: spec.clone(),
            backgrounds,
            meshes,
            intrinsics: spec.intrinsics(),
            pose_ranges: spec.effective_pose_ranges(),
            num_classes,
        })
    }

    fn gt(&self, bbox: BBox) -> Result<GroundTruth> {
        GroundTruth::new(bbox, self.spec.target.id, self.num_classes)
    }

    fn background<T: Real>(&self, rng: &mut impl Rng) -> ImageRgb<T> {
        let s = self.spec.image_size;
        self.backgrounds.sample(s, s, rng)
    }

    /// Draws a scene from `pixels` (the unfiltered patch view). `None` means
    /// the sample is skipped. `gamma` forces the multi-camera spacing.
    pub fn sample<T: Real>(
        &self,
        pixels: &ImageRgb<T>,
        rng: &mut impl Rng,
        gamma: Option<f64>,
    ) -> Result<Option<(Scene<T>, SceneInfo)>> {
        let spec = &self.spec;
        let chain = sample_chain(&spec.config.filters, &spec.filter_ranges, rng);
        let (filtered, tape) = apply_chain(&chain, &spec.filter_ranges, pixels)?;
        let bg: ImageRgb<T> = self.background(rng);
        let views = match spec.method {
            Method::ShapeShifter => self.affine_view(&filtered, &bg, rng)?,
            Method::Transcender => self.rendered_views(&filtered, &bg, rng, false, gamma)?,
            Method::TranscenderMc => self.rendered_views(&filtered, &bg, rng, true, gamma)?,
        };
        Ok(views.map(|(views, info)| (Scene { chain: tape, views }, info)))
    }

    fn affine_view<T: Real>(
        &self,
        filtered: &ImageRgb<T>,
        bg: &ImageRgb<T>,
        rng: &mut impl Rng,
    ) -> Result<Option<(Vec<View<T>>, SceneInfo)>> {
        let cfg = &self.spec.config;
        let rotate = cfg.affine.contains(&AffineOp::Rotate);
        let shear = cfg.affine.contains(&AffineOp::Shear);
        let patch = (filtered.width(), filtered.height());
        let canvas = (bg.width(), bg.height());
        // A degenerate placement is resampled once, then skipped.
        for _ in 0..2 {
            let params = sample_affine(&self.spec.affine_ranges, rotate, shear, patch, canvas, rng);
            match apply_affine(&params, filtered, bg) {
                Ok(placed) => {
                    let Ok(bbox) = placed.bbox.clamped() else { continue };
                    let info = SceneInfo {
                        mesh: None,
                        gamma: None,
                        gamma_clamped: false,
                        boxes: vec![bbox],
                    };
                    let view = View {
                        image: placed.image.clone(),
                        gt: self.gt(bbox)?,
                        link: ViewLink::Affine(placed),
                    };
                    return Ok(Some((vec![view], info)));
                }
                Err(Error::DegeneratePlacement(_)) => continue,
                Err(e) => return Err(e),
            }
        }
        Ok(None)
    }

    fn rendered_views<T: Real>(
        &self,
        filtered: &ImageRgb<T>,
        bg: &ImageRgb<T>,
        rng: &mut impl Rng,
        multicam: bool,
        gamma: Option<f64>,
    ) -> Result<Option<(Vec<View<T>>, SceneInfo)>> {
        let mesh = choose_mesh(&self.meshes, rng);
        let color = self.spec.texture_color.unwrap_or_else(|| rng.random());
        let tex_spec = TextureSpec::new(color, mesh.placement, texture_resolution(filtered.width(), mesh));
        let texture = place_patch(&tex_spec, filtered);
        let center = sample_pose(&self.pose_ranges, self.intrinsics, rng);
        let (poses, info_gamma, clamped): (Vec<CameraPose>, Option<f64>, bool) = if multicam {
            let g = match gamma {
                Some(g) => g,
                None => {
                    let hi = default_max_gamma(&center);
                    if hi > 0.0 {
                        rng.random_range(0.0..=hi)
                    } else {
                        0.0
                    }
                }
            };
            let mc = multicam_poses(&center, g, mesh);
            (mc.as_array().to_vec(), Some(mc.gamma), mc.clamped)
        } else {
            (vec![center], None, false)
        };
        let mut views = Vec::with_capacity(poses.len());
        let mut boxes = Vec::with_capacity(poses.len());
        for pose in &poses {
            let out = render(mesh, &texture.image, pose);
            if out.status == RenderStatus::OutOfFrustum {
                return Ok(None);
            }
            let Ok(bbox) = project_patch_bbox(mesh, &mesh.placement, pose) else {
                return Ok(None);
            };
            let image = composite(&out, bg)?;
            boxes.push(bbox);
            views.push(View {
                image,
                gt: self.gt(bbox)?,
                link: ViewLink::Render {
                    texture: texture.clone(),
                    render: out,
                },
            });
        }
        let info = SceneInfo {
            mesh: Some(mesh.kind),
            gamma: info_gamma,
            gamma_clamped: clamped,
            boxes,
        };
        Ok(Some((views, info)))
    }
}
