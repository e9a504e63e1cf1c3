//! Scene datasets on disk and in memory.
//!
//! Directory layout:
//!
//! ```text
//! points.ply          ASCII PLY, x y z [red green blue]
//! cameras.json        [{"image": "000.png", "camera": {...}}, ...]
//! split.json          {"train": [indices], "holdout": [indices]}
//! images/*.png        8-bit RGB targets, extents equal to the camera raster
//! descriptors.npbd    optional fitted descriptors
//! ```

mod metrics;
pub mod synth;

pub use metrics::{l1, psnr, EvalRecord, EvalReport, PSNR_CAP_DB};
pub use synth::{
    generate_synthetic, noise_color, orbit_camera, random_two_planes_camera, OracleStats, Preset, SynthOutput,
    SynthSpec,
};

use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ply::{read_ply, write_ply};
use crate::geometry::{apply_transform, Camera, CameraJson, PointCloud, RigidTransform};
use crate::raster::{load_descriptors, save_descriptors, DescriptorSet};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Holdout,
}

#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub image_name: String,
    pub camera: Camera,
    pub image: RgbImage,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneDataset {
    pub cloud: PointCloud,
    pub descriptors: Option<DescriptorSet<f32>>,
    pub views: Vec<View>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraEntry {
    image: String,
    camera: CameraJson,
}

#[derive(Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct SplitFile {
    train: Vec<usize>,
    holdout: Vec<usize>,
}

impl SceneDataset {
    pub fn validate(&self) -> Result<()> {
        self.cloud.validate()?;
        if let Some(d) = &self.descriptors {
            if d.len() != self.cloud.len() {
                return Err(Error::Extent(format!(
                    "{} descriptor rows for {} points",
                    d.len(),
                    self.cloud.len()
                )));
            }
        }
        let mut names = std::collections::HashSet::new();
        for v in &self.views {
            v.camera.validate()?;
            if (v.image.width() as usize, v.image.height() as usize) != (v.camera.width, v.camera.height) {
                return Err(Error::Extent(format!(
                    "image '{}' is {}x{} but its camera renders {}x{}",
                    v.image_name,
                    v.image.width(),
                    v.image.height(),
                    v.camera.width,
                    v.camera.height
                )));
            }
            if !names.insert(&v.image_name) {
                return Err(Error::Config(format!("duplicate image name '{}'", v.image_name)));
            }
        }
        Ok(())
    }

    pub fn view_indices(&self, split: Split) -> Vec<usize> {
        self.views
            .iter()
            .enumerate()
            .filter(|(_, v)| v.split == split)
            .map(|(i, _)| i)
            .collect()
    }
}

/// `[3, H, W]` reals in `[0, 1]` from 8-bit RGB (`/255`).
pub fn image_to_tensor<R: Real>(img: &RgbImage) -> Tensor<R> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![R::zero(); 3 * w * h];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = R::from_f64(f64::from(px[c]) / 255.0);
        }
    }
    Tensor::from_vec(&[3, h, w], data).expect("extents")
}

/// Rounds `[3, H, W]` reals (clamped to `[0, 1]`) to 8-bit RGB.
pub fn tensor_to_image<R: Real>(t: &Tensor<R>) -> Result<RgbImage> {
    let (c, h, w) = t.chw()?;
    if c != 3 {
        return Err(Error::shape("tensor_to_image", format!("expected 3 channels, got {c}")));
    }
    let d = t.data();
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |ch: usize| {
            let v = d[(ch * h + y as usize) * w + x as usize].as_f64();
            (v.clamp(0.0, 1.0) * 255.0).round() as u8
        };
        image::Rgb([px(0), px(1), px(2)])
    }))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, kind: &'static str) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::malformed(kind, path, e.to_string()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_scene(dir: &Path) -> Result<SceneDataset> {
    let cloud = read_ply(&dir.join("points.ply"))?;
    let cameras_path = dir.join("cameras.json");
    let entries: Vec<CameraEntry> = read_json(&cameras_path, "cameras.json")?;
    let split_path = dir.join("split.json");
    let split: SplitFile = read_json(&split_path, "split.json")?;

    let mut splits = vec![None; entries.len()];
    for (list, tag) in [(&split.train, Split::Train), (&split.holdout, Split::Holdout)] {
        for &i in list {
            let slot = splits.get_mut(i).ok_or_else(|| {
                Error::malformed("split.json", &split_path, format!("view index {i} out of range"))
            })?;
            if slot.is_some() {
                return Err(Error::malformed(
                    "split.json",
                    &split_path,
                    format!("view {i} listed more than once"),
                ));
            }
            *slot = Some(tag);
        }
    }

    let mut views = Vec::with_capacity(entries.len());
    for (i, entry) in entries.into_iter().enumerate() {
        let camera = Camera::try_from(entry.camera)?;
        let split = splits[i].ok_or_else(|| {
            Error::malformed("split.json", &split_path, format!("view {i} is in neither split"))
        })?;
        if entry.image.contains('/') || entry.image.contains('\\') || entry.image.starts_with('.') {
            return Err(Error::malformed(
                "cameras.json",
                &cameras_path,
                format!("image name '{}' must be a plain file name", entry.image),
            ));
        }
        let img_path = dir.join("images").join(&entry.image);
        if !img_path.exists() {
            return Err(Error::MissingFile(img_path));
        }
        let image = image::open(&img_path)
            .map_err(|source| Error::Image {
                path: img_path.clone(),
                source,
            })?
            .to_rgb8();
        views.push(View {
            image_name: entry.image,
            camera,
            image,
            split,
        });
    }

    let desc_path = dir.join("descriptors.npbd");
    let descriptors = if desc_path.exists() {
        Some(load_descriptors(&desc_path)?)
    } else {
        None
    };
    let scene = SceneDataset {
        cloud,
        descriptors,
        views,
    };
    scene.validate()?;
    Ok(scene)
}

pub fn save_scene(dir: &Path, scene: &SceneDataset) -> Result<()> {
    scene.validate()?;
    let images = dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    write_ply(&dir.join("points.ply"), &scene.cloud)?;
    let entries: Vec<CameraEntry> = scene
        .views
        .iter()
        .map(|v| CameraEntry {
            image: v.image_name.clone(),
            camera: v.camera.to_json(),
        })
        .collect();
    write_json(&dir.join("cameras.json"), &entries)?;
    let split = SplitFile {
        train: scene.view_indices(Split::Train),
        holdout: scene.view_indices(Split::Holdout),
    };
    write_json(&dir.join("split.json"), &split)?;
    for v in &scene.views {
        let path = images.join(&v.image_name);
        v.image
            .save_with_format(&path, image::ImageFormat::Png)
            .map_err(|source| Error::Image { path, source })?;
    }
    let desc_path = dir.join("descriptors.npbd");
    match &scene.descriptors {
        Some(d) => save_descriptors(&desc_path, d)?,
        None if desc_path.exists() => {
            std::fs::remove_file(&desc_path).map_err(|e| Error::io(&desc_path, e))?
        }
        None => {}
    }
    Ok(())
}

/// `a` with `b`'s points (moved by `transform`) appended; descriptors are
/// concatenated in the same order and views come from `a`.
pub fn compose_scenes(a: &SceneDataset, b: &SceneDataset, transform: &RigidTransform) -> Result<SceneDataset> {
    let moved = apply_transform(&b.cloud, transform);
    let descriptors = match (&a.descriptors, &b.descriptors) {
        (Some(da), Some(db)) => Some(da.concat(db)?),
        (Some(da), None) if b.cloud.is_empty() => Some(da.clone()),
        (None, None) => None,
        _ => {
            return Err(Error::Config(
                "both scenes need descriptors (or neither) to be composed".into(),
            ))
        }
    };
    let scene = SceneDataset {
        cloud: a.cloud.union(&moved),
        descriptors,
        views: a.views.clone(),
    };
    scene.validate()?;
    Ok(scene)
}
