use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use super::{MeshError, TriMesh};
use crate::math::{Pt3, Vec3};

/// Mass, centre of mass and inertia tensor about the centre of mass, in the body frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassProperties {
    pub mass: f64,
    pub center_of_mass: Pt3,
    pub inertia: Matrix3<f64>,
    /// Set when the mesh winding was inward and the integrals were negated.
    #[serde(default)]
    pub orientation_flipped: bool,
}

impl MassProperties {
    pub fn new(mass: f64, center_of_mass: Pt3, inertia: Matrix3<f64>) -> Self {
        Self {
            mass,
            center_of_mass,
            inertia,
            orientation_flipped: false,
        }
    }

    pub fn point(mass: f64, at: Pt3) -> Self {
        Self::new(mass, at, Matrix3::zeros())
    }

    pub fn volume(&self, density: f64) -> f64 {
        self.mass / density
    }

    /// Inertia about an arbitrary point (parallel axis theorem).
    pub fn inertia_about(&self, p: &Pt3) -> Matrix3<f64> {
        let d: Vec3 = self.center_of_mass - p;
        self.inertia + self.mass * (Matrix3::identity() * d.norm_squared() - d * d.transpose())
    }

    /// Combined properties of two rigidly attached parts expressed in the same frame.
    pub fn combine(&self, other: &MassProperties) -> MassProperties {
        let mass = self.mass + other.mass;
        let com = Pt3::from((self.center_of_mass.coords * self.mass + other.center_of_mass.coords * other.mass) / mass);
        MassProperties::new(mass, com, self.inertia_about(&com) + other.inertia_about(&com))
    }
}

/// Volume integrals by signed-tetrahedron accumulation (divergence theorem).
pub fn mass_properties(mesh: &TriMesh, density: f64) -> Result<MassProperties, MeshError> {
    mesh.ensure_watertight()?;
    if !(density > 0.0 && density.is_finite()) {
        return Err(MeshError::InvalidParams(format!("density must be positive, got {density}")));
    }
    // Integrate relative to a vertex-centroid reference to limit cancellation on offset meshes.
    let reference = Pt3::from(
        mesh.vertices().iter().map(|v| v.coords).sum::<Vec3>() / mesh.vertices().len() as f64,
    );
    let canonical = Matrix3::new(2.0, 1.0, 1.0, 1.0, 2.0, 1.0, 1.0, 1.0, 2.0) / 120.0;
    let mut volume = 0.0;
    let mut first_moment = Vec3::zeros();
    let mut covariance = Matrix3::zeros();
    for t in 0..mesh.triangle_count() {
        let [a, b, c] = mesh.triangle(t).map(|p| p - reference);
        let basis = Matrix3::from_columns(&[a, b, c]);
        let det = basis.determinant();
        volume += det / 6.0;
        first_moment += det / 24.0 * (a + b + c);
        covariance += det * basis * canonical * basis.transpose();
    }
    let mut orientation_flipped = false;
    if volume < 0.0 {
        log::warn!("mesh has inward winding; mass properties computed with flipped orientation");
        volume = -volume;
        first_moment = -first_moment;
        covariance = -covariance;
        orientation_flipped = true;
    }
    if volume <= 0.0 {
        return Err(MeshError::InvalidParams("mesh encloses zero volume".into()));
    }
    let com_rel = first_moment / volume;
    let centered = covariance - volume * com_rel * com_rel.transpose();
    let inertia = (Matrix3::identity() * centered.trace() - centered) * density;
    Ok(MassProperties {
        mass: volume * density,
        center_of_mass: reference + com_rel,
        inertia: (inertia + inertia.transpose()) * 0.5,
        orientation_flipped,
    })
}
