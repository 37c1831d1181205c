//! Proximity-based mesh conditioning: ball-pivoting surface reconstruction,
//! ray-cast rasterization of the mesh into a target camera, and back-face
//! filtering of the rendered normals.

mod bpa;
mod raster;

pub use bpa::{ball_pivot, estimate_radii, nearest_neighbor_distances};
pub use raster::{normal_mask, rasterize_mesh, ray_triangle, MeshRender};

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Vec3};
use crate::ply::{from_color_bytes, to_color_bytes, PlyData};

/// Faces whose area falls below this are rejected as degenerate.
pub const MIN_FACE_AREA: f64 = 1e-12;

/// Indexed triangle mesh. Face winding defines the normal direction
/// (counter-clockwise seen from the side the normal points to).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    vertex_colors: Option<Vec<[f32; 3]>>,
    faces: Vec<[usize; 3]>,
    face_normals: Vec<Vec3>,
}

impl TriMesh {
    pub fn new(
        vertices: Vec<Vec3>,
        vertex_colors: Option<Vec<[f32; 3]>>,
        faces: Vec<[usize; 3]>,
    ) -> Result<Self> {
        if let Some(c) = &vertex_colors {
            if c.len() != vertices.len() {
                return Err(Error::Shape(format!(
                    "{} colors for {} vertices",
                    c.len(),
                    vertices.len()
                )));
            }
        }
        let mut face_normals = Vec::with_capacity(faces.len());
        for f in &faces {
            if f.iter().any(|&i| i >= vertices.len()) {
                return Err(Error::Precondition(format!(
                    "face {f:?} indexes past {} vertices",
                    vertices.len()
                )));
            }
            let cross = (vertices[f[1]] - vertices[f[0]]).cross(&(vertices[f[2]] - vertices[f[0]]));
            if !(0.5 * cross.norm() > MIN_FACE_AREA) {
                return Err(Error::Precondition(format!("face {f:?} is degenerate")));
            }
            face_normals.push(cross.normalize());
        }
        Ok(Self {
            vertices,
            vertex_colors,
            faces,
            face_normals,
        })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn vertex_colors(&self) -> Option<&[[f32; 3]]> {
        self.vertex_colors.as_deref()
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn face_normals(&self) -> &[Vec3] {
        &self.face_normals
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn face_centroid(&self, face: usize) -> Vec3 {
        let [a, b, c] = self.faces[face];
        (self.vertices[a] + self.vertices[b] + self.vertices[c]) / 3.0
    }

    /// Flips every face whose normal points away from `viewpoint`.
    pub fn orient_towards(&mut self, viewpoint: &Vec3) {
        for i in 0..self.faces.len() {
            if self.face_normals[i].dot(&(viewpoint - self.face_centroid(i))) < 0.0 {
                self.faces[i].swap(1, 2);
                self.face_normals[i] = -self.face_normals[i];
            }
        }
    }

    pub fn to_ply(&self) -> PlyData {
        PlyData {
            positions: self
                .vertices
                .iter()
                .map(|v| [v.x as f32, v.y as f32, v.z as f32])
                .collect(),
            colors: self
                .vertex_colors
                .as_ref()
                .map(|c| c.iter().map(|&rgb| to_color_bytes(rgb)).collect()),
            faces: self
                .faces
                .iter()
                .map(|f| f.map(|i| i as u32))
                .collect(),
        }
    }

    pub fn from_ply(ply: &PlyData) -> Result<Self> {
        TriMesh::new(
            ply.positions
                .iter()
                .map(|p| Vec3::new(p[0] as f64, p[1] as f64, p[2] as f64))
                .collect(),
            ply.colors
                .as_ref()
                .map(|c| c.iter().map(|&rgb| from_color_bytes(rgb)).collect()),
            ply.faces.iter().map(|f| f.map(|i| i as usize)).collect(),
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_ply().write(path, true)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_ply(&PlyData::read(path)?)
    }
}

pub fn cloud_to_ply(cloud: &PointCloud) -> PlyData {
    PlyData {
        positions: cloud
            .positions
            .iter()
            .map(|v| [v.x as f32, v.y as f32, v.z as f32])
            .collect(),
        colors: cloud
            .colors
            .as_ref()
            .map(|c| c.iter().map(|&rgb| to_color_bytes(rgb)).collect()),
        faces: Vec::new(),
    }
}
