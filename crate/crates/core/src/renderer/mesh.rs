//! Procedural support meshes and a minimal OBJ reader.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeshKind {
    Barrel,
    Billboard,
    Sign,
    Tshirt,
    /// Flat display used by the evaluation rig.
    Screen,
}

impl MeshKind {
    /// Meshes a rendered training configuration may draw from.
    pub const TRAINING_POOL: [MeshKind; 3] = [MeshKind::Barrel, MeshKind::Sign, MeshKind::Billboard];

    pub fn name(self) -> &'static str {
        match self {
            MeshKind::Barrel => "barrel",
            MeshKind::Billboard => "billboard",
            MeshKind::Sign => "sign",
            MeshKind::Tshirt => "tshirt",
            MeshKind::Screen => "screen",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let s = s.to_lowercase().replace('-', "");
        [
            MeshKind::Barrel,
            MeshKind::Billboard,
            MeshKind::Sign,
            MeshKind::Tshirt,
            MeshKind::Screen,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| Error::Input(format!("unknown mesh kind {s:?}")))
    }
}

/// Rectangle in UV space, `v` growing downward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UvRect {
    pub u0: f64,
    pub v0: f64,
    pub u1: f64,
    pub v1: f64,
}

impl UvRect {
    pub const FULL: UvRect = UvRect {
        u0: 0.0,
        v0: 0.0,
        u1: 1.0,
        v1: 1.0,
    };

    pub fn new(u0: f64, v0: f64, u1: f64, v1: f64) -> Result<Self> {
        if !(0.0 <= u0 && u0 < u1 && u1 <= 1.0 && 0.0 <= v0 && v0 < v1 && v1 <= 1.0) {
            return Err(Error::Contract(format!(
                "placement rectangle ({u0}, {v0})-({u1}, {v1}) outside unit UV square"
            )));
        }
        Ok(Self { u0, v0, u1, v1 })
    }

    #[inline]
    pub fn contains(&self, u: f64, v: f64) -> bool {
        const EPS: f64 = 1e-9;
        u >= self.u0 - EPS && u <= self.u1 + EPS && v >= self.v0 - EPS && v <= self.v1 + EPS
    }
}

/// Physical side length of the patch on every training mesh, in meters.
pub const PATCH_SIDE_M: f64 = 0.6;
/// Physical side length of the evaluation screen, in meters.
pub const SCREEN_SIDE_M: f64 = 0.55;

const PANEL_SIDE_M: f64 = 1.0;
const TRAINING_PLACEMENT: UvRect = UvRect {
    u0: 0.2,
    v0: 0.2,
    u1: 0.8,
    v1: 0.8,
};

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub kind: MeshKind,
    pub vertices: Vec<[f64; 3]>,
    pub uvs: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    /// Where the patch goes on the texture.
    pub placement: UvRect,
}

impl Mesh {
    pub fn new(
        kind: MeshKind,
        vertices: Vec<[f64; 3]>,
        uvs: Vec<[f64; 2]>,
        triangles: Vec<[usize; 3]>,
        placement: UvRect,
    ) -> Result<Self> {
        if vertices.len() != uvs.len() {
            return Err(Error::Contract("one UV per vertex required".into()));
        }
        if triangles.iter().flatten().any(|&i| i >= vertices.len()) {
            return Err(Error::Contract("triangle index out of range".into()));
        }
        if uvs.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::Contract("non-finite UV".into()));
        }
        Ok(Self {
            kind,
            vertices,
            uvs,
            triangles,
            placement,
        })
    }

    /// Vertices lying in the patch placement rectangle.
    pub fn patch_vertices(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        self.vertices
            .iter()
            .zip(&self.uvs)
            .filter(|(_, uv)| self.placement.contains(uv[0], uv[1]))
            .map(|(p, _)| *p)
    }

    /// Appends a flat-colored box (uses texel `uv`) to the mesh.
    fn push_box(&mut self, min: [f64; 3], max: [f64; 3], uv: [f64; 2]) {
        let base = self.vertices.len();
        for i in 0..8 {
            self.vertices.push([
                if i & 1 == 0 { min[0] } else { max[0] },
                if i & 2 == 0 { min[1] } else { max[1] },
                if i & 4 == 0 { min[2] } else { max[2] },
            ]);
            self.uvs.push(uv);
        }
        const FACES: [[usize; 4]; 6] = [
            [0, 1, 3, 2],
            [4, 5, 7, 6],
            [0, 1, 5, 4],
            [2, 3, 7, 6],
            [0, 2, 6, 4],
            [1, 3, 7, 5],
        ];
        for f in FACES {
            self.triangles.push([base + f[0], base + f[1], base + f[2]]);
            self.triangles.push([base + f[0], base + f[2], base + f[3]]);
        }
    }
}

/// Regular grid over UV space; vertex lines land on multiples of `1/nu`,
/// `1/nv` so placement borders at 0.2/0.8 coincide with grid lines.
fn grid_mesh(
    kind: MeshKind,
    nu: usize,
    nv: usize,
    placement: UvRect,
    surface: impl Fn(f64, f64) -> [f64; 3],
) -> Mesh {
    let mut vertices = Vec::with_capacity((nu + 1) * (nv + 1));
    let mut uvs = Vec::with_capacity(vertices.capacity());
    for j in 0..=nv {
        for i in 0..=nu {
            let (u, v) = (i as f64 / nu as f64, j as f64 / nv as f64);
            vertices.push(surface(u, v));
            uvs.push([u, v]);
        }
    }
    let mut triangles = Vec::with_capacity(nu * nv * 2);
    let idx = |i: usize, j: usize| j * (nu + 1) + i;
    for j in 0..nv {
        for i in 0..nu {
            triangles.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            triangles.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    Mesh {
        kind,
        vertices,
        uvs,
        triangles,
        placement,
    }
}

/// Cylindrical panel spanning `arc` radians with arc length `PANEL_SIDE_M`,
/// bulging toward +z and centered on the origin.
fn cylinder_panel(kind: MeshKind, arc: f64) -> Mesh {
    let radius = PANEL_SIDE_M / arc;
    grid_mesh(kind, 20, 10, TRAINING_PLACEMENT, move |u, v| {
        let phi = (u - 0.5) * arc;
        [
            radius * phi.sin(),
            (0.5 - v) * PANEL_SIDE_M,
            radius * (phi.cos() - 1.0),
        ]
    })
}

/// Builds the procedural mesh of `kind`.
///
/// - billboard: planar 1 m square
/// - sign: 30° cylindrical panel on a pole
/// - barrel: 120° cylinder section
/// - tshirt: square with smooth sinusoidal folds
/// - screen: planar square fully covered by the patch
pub fn make_mesh(kind: MeshKind) -> Mesh {
    match kind {
        MeshKind::Billboard => grid_mesh(kind, 10, 10, TRAINING_PLACEMENT, |u, v| {
            [(u - 0.5) * PANEL_SIDE_M, (0.5 - v) * PANEL_SIDE_M, 0.0]
        }),
        MeshKind::Sign => {
            let mut m = cylinder_panel(kind, 30f64.to_radians());
            m.push_box([-0.03, -1.4, -0.12], [0.03, -0.5, -0.06], [0.01, 0.99]);
            m
        }
        MeshKind::Barrel => cylinder_panel(kind, 120f64.to_radians()),
        MeshKind::Tshirt => grid_mesh(kind, 20, 20, TRAINING_PLACEMENT, |u, v| {
            let fold = 0.04 * (3.0 * PI * u).sin() * (0.6 + 0.4 * (PI * v).cos());
            [(u - 0.5) * PANEL_SIDE_M, (0.5 - v) * PANEL_SIDE_M, fold]
        }),
        MeshKind::Screen => grid_mesh(kind, 1, 1, UvRect::FULL, |u, v| {
            [(u - 0.5) * SCREEN_SIDE_M, (0.5 - v) * SCREEN_SIDE_M, 0.0]
        }),
    }
}

/// Reads `v`, `vt` and `f` records (faces as `v/vt`, polygons fanned).
/// OBJ texture coordinates have `v` pointing up; they are flipped.
pub fn load_obj(path: &Path, kind: MeshKind, placement: UvRect) -> Result<Mesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut positions = Vec::new();
    let mut texcoords = Vec::new();
    let mut vertices = Vec::new();
    let mut uvs = Vec::new();
    let mut lookup = std::collections::HashMap::new();
    let mut triangles = Vec::new();
    let bad = |line: usize, msg: &str| Error::format(path, format!("line {line}: {msg}"));
    for (n, line) in text.lines().enumerate() {
        let n = n + 1;
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it.take(3).map(str::parse).collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad(n, "bad vertex"))?;
                if c.len() != 3 {
                    return Err(bad(n, "vertex needs 3 coordinates"));
                }
                positions.push([c[0], c[1], c[2]]);
            }
            Some("vt") => {
                let c: Vec<f64> = it.take(2).map(str::parse).collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad(n, "bad texture coordinate"))?;
                if c.len() != 2 {
                    return Err(bad(n, "texture coordinate needs 2 values"));
                }
                texcoords.push([c[0], 1.0 - c[1]]);
            }
            Some("f") => {
                let mut corners = Vec::new();
                for tok in it {
                    let mut parts = tok.split('/');
                    let vi: usize = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| bad(n, "bad face index"))?;
                    let ti: usize = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| bad(n, "face corner lacks a texture index"))?;
                    if vi == 0 || vi > positions.len() || ti == 0 || ti > texcoords.len() {
                        return Err(bad(n, "face index out of range"));
                    }
                    let key = (vi - 1, ti - 1);
                    let id = *lookup.entry(key).or_insert_with(|| {
                        vertices.push(positions[key.0]);
                        uvs.push(texcoords[key.1]);
                        vertices.len() - 1
                    });
                    corners.push(id);
                }
                if corners.len() < 3 {
                    return Err(bad(n, "face needs at least 3 corners"));
                }
                for k in 1..corners.len() - 1 {
                    triangles.push([corners[0], corners[k], corners[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Mesh::new(kind, vertices, uvs, triangles, placement)
}
