use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};

use super::validate_rotation;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<Vector3<f64>>,
    /// Per-point RGB in `[0, 1]`; only the color-input baseline reads these.
    pub colors: Option<Vec<[f64; 3]>>,
}

impl PointCloud {
    pub fn new(positions: Vec<Vector3<f64>>, colors: Option<Vec<[f64; 3]>>) -> Result<Self> {
        let cloud = PointCloud { positions, colors };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.positions.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::Config(format!("point {i} has a non-finite position")));
        }
        if let Some(colors) = &self.colors {
            if colors.len() != self.positions.len() {
                return Err(Error::Config(format!(
                    "{} colors for {} points",
                    colors.len(),
                    self.positions.len()
                )));
            }
            if let Some(i) = colors
                .iter()
                .position(|c| !c.iter().all(|v| (0.0..=1.0).contains(v)))
            {
                return Err(Error::Config(format!("color of point {i} is outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn centroid(&self) -> Vector3<f64> {
        if self.is_empty() {
            return Vector3::zeros();
        }
        self.positions.iter().sum::<Vector3<f64>>() / self.len() as f64
    }

    /// Concatenation; colors survive only if both sides carry them.
    pub fn union(&self, other: &PointCloud) -> PointCloud {
        let mut positions = self.positions.clone();
        positions.extend_from_slice(&other.positions);
        let colors = match (&self.colors, &other.colors) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            (Some(a), None) if other.is_empty() => Some(a.clone()),
            (None, Some(b)) if self.is_empty() => Some(b.clone()),
            _ => None,
        };
        PointCloud { positions, colors }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        validate_rotation(&rotation)?;
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::Config("transform translation is not finite".into()));
        }
        Ok(RigidTransform {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn translation(t: Vector3<f64>) -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `(R^T, -R^T t)`.
    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self` after `first`: `p -> self(first(p))`.
    pub fn compose(&self, first: &RigidTransform) -> Self {
        RigidTransform {
            rotation: self.rotation * first.rotation,
            translation: self.rotation * first.translation + self.translation,
        }
    }
}

pub fn apply_transform(cloud: &PointCloud, transform: &RigidTransform) -> PointCloud {
    PointCloud {
        positions: cloud.positions.iter().map(|p| transform.apply(p)).collect(),
        colors: cloud.colors.clone(),
    }
}

/// One centroid per occupied `floor(p / voxel)` cell, in lexicographic cell order.
pub fn voxel_downsample(cloud: &PointCloud, voxel: f64) -> Result<PointCloud> {
    if !(voxel > 0.0 && voxel.is_finite()) {
        return Err(Error::Config(format!("voxel size must be positive, got {voxel}")));
    }
    struct Bucket {
        sum: Vector3<f64>,
        color: [f64; 3],
        count: usize,
    }
    let mut buckets: BTreeMap<[i64; 3], Bucket> = BTreeMap::new();
    for (i, p) in cloud.positions.iter().enumerate() {
        let key = [
            (p.x / voxel).floor() as i64,
            (p.y / voxel).floor() as i64,
            (p.z / voxel).floor() as i64,
        ];
        let b = buckets.entry(key).or_insert(Bucket {
            sum: Vector3::zeros(),
            color: [0.0; 3],
            count: 0,
        });
        b.sum += p;
        if let Some(colors) = &cloud.colors {
            for (acc, c) in b.color.iter_mut().zip(colors[i]) {
                *acc += c;
            }
        }
        b.count += 1;
    }
    let mut positions = Vec::with_capacity(buckets.len());
    let mut colors = cloud.colors.as_ref().map(|_| Vec::with_capacity(buckets.len()));
    for b in buckets.values() {
        let n = b.count as f64;
        positions.push(b.sum / n);
        if let Some(cs) = colors.as_mut() {
            cs.push(b.color.map(|c| (c / n).clamp(0.0, 1.0)));
        }
    }
    Ok(PointCloud { positions, colors })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rot_z(a: f64) -> Matrix3<f64> {
        let (s, c) = a.sin_cos();
        Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
    }

    #[test]
    fn identity_and_translation() {
        let cloud = PointCloud::new(
            vec![Vector3::new(0.5, -1.0, 2.0), Vector3::new(3.0, 0.0, 0.25)],
            Some(vec![[0.1, 0.2, 0.3], [1.0, 0.0, 0.5]]),
        )
        .unwrap();
        assert_eq!(apply_transform(&cloud, &RigidTransform::identity()), cloud);
        let moved = apply_transform(&cloud, &RigidTransform::translation(Vector3::new(1.0, 0.0, 0.0)));
        for (a, b) in moved.positions.iter().zip(&cloud.positions) {
            assert_eq!(a.x, b.x + 1.0);
            assert_eq!((a.y, a.z), (b.y, b.z));
        }
        assert_eq!(moved.colors, cloud.colors);
    }

    #[test]
    fn single_voxel_collapses_to_centroid() {
        let cloud = PointCloud::new(
            vec![
                Vector3::new(0.1, 0.1, 0.1),
                Vector3::new(0.3, 0.2, 0.4),
                Vector3::new(0.2, 0.6, 0.1),
            ],
            None,
        )
        .unwrap();
        let down = voxel_downsample(&cloud, 1.0).unwrap();
        assert_eq!(down.len(), 1);
        assert!((down.positions[0] - Vector3::new(0.2, 0.3, 0.2)).norm() < 1e-15);
    }

    #[test]
    fn separated_points_are_kept() {
        let positions = vec![
            Vector3::new(2.5, 0.5, 0.5),
            Vector3::new(0.5, 0.5, 0.5),
            Vector3::new(0.5, 2.5, 0.5),
        ];
        let cloud = PointCloud::new(positions.clone(), None).unwrap();
        let down = voxel_downsample(&cloud, 1.0).unwrap();
        assert_eq!(down.len(), 3);
        for p in &positions {
            assert!(down.positions.contains(p));
        }
        // lexicographic cell order
        assert_eq!(down.positions[0], positions[1]);
    }

    #[test]
    fn voxel_must_be_positive() {
        assert!(voxel_downsample(&PointCloud::default(), 0.0).is_err());
        assert!(voxel_downsample(&PointCloud::default(), -1.0).is_err());
    }

    #[test]
    fn color_validation() {
        assert!(PointCloud::new(vec![Vector3::zeros()], Some(vec![[1.5, 0.0, 0.0]])).is_err());
        assert!(PointCloud::new(vec![Vector3::zeros()], Some(vec![])).is_err());
    }

    #[test]
    fn inverse_composes_to_identity() {
        let t = RigidTransform::new(rot_z(0.7), Vector3::new(1.0, -2.0, 0.5)).unwrap();
        let id = t.compose(&t.inverse());
        assert!((id.rotation - Matrix3::identity()).amax() < 1e-12);
        assert!(id.translation.norm() < 1e-12);
    }
}
