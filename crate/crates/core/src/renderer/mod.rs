//! Differentiable (w.r.t. texture) rendering of patches on support meshes.

pub mod camera;
pub mod mesh;
pub mod raster;

pub use camera::{
    default_max_gamma, multicam_poses, patch_in_frame, sample_pose, CameraPose, Intrinsics,
    MultiCamPoses, PoseRanges,
};
pub use mesh::{load_obj, make_mesh, Mesh, MeshKind, UvRect, PATCH_SIDE_M, SCREEN_SIDE_M};
pub use raster::{
    composite, place_patch, project_patch_bbox, rasterize, render, AdvTexture, Fragments,
    RenderOutput, RenderStatus, TextureSpec,
};
