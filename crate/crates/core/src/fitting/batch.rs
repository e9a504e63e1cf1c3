//! Random zoomed crops of training views.

use image::RgbImage;
use rand::Rng;

use super::FitConfig;
use crate::error::{Error, Result};
use crate::geometry::Camera;
use crate::sceneio::{SceneDataset, Split};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub view: usize,
    pub zoom: f64,
    /// Crop origin in the zoomed image, in pixels.
    pub offset: (usize, usize),
    /// Camera whose viewport is exactly the crop.
    pub camera: Camera,
    /// `[3, crop, crop]` ground truth.
    pub target: Tensor<f32>,
}

/// Bilinear sample with clamp-to-edge at continuous pixel coordinates.
fn sample_bilinear(img: &RgbImage, u: f64, v: f64) -> [f64; 3] {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let (x0, y0) = (u.floor(), v.floor());
    let (fx, fy) = (u - x0, v - y0);
    let at = |x: i64, y: i64| img.get_pixel(x.clamp(0, w - 1) as u32, y.clamp(0, h - 1) as u32).0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let (p00, p10, p01, p11) = (at(x0, y0), at(x0 + 1, y0), at(x0, y0 + 1), at(x0 + 1, y0 + 1));
    let mut out = [0.0; 3];
    for c in 0..3 {
        let top = f64::from(p00[c]) * (1.0 - fx) + f64::from(p10[c]) * fx;
        let bottom = f64::from(p01[c]) * (1.0 - fx) + f64::from(p11[c]) * fx;
        out[c] = (top * (1.0 - fy) + bottom * fy) / 255.0;
    }
    out
}

/// Crop of view `view` at a given zoom and offset. The zoomed image has
/// intrinsics scaled by `zoom` (pixel centers preserved); its pixel `u'` maps
/// back to source pixel `(u' + 0.5) / zoom - 0.5`.
pub fn batch_for(
    scene: &SceneDataset,
    view: usize,
    zoom: f64,
    offset: (usize, usize),
    crop: usize,
) -> Result<Batch> {
    let v = scene
        .views
        .get(view)
        .ok_or_else(|| Error::Config(format!("view {view} does not exist")))?;
    if !(zoom > 0.0 && zoom.is_finite()) {
        return Err(Error::Config(format!("zoom must be positive, got {zoom}")));
    }
    let camera = v
        .camera
        .rescaled_intrinsics(zoom)
        .cropped(offset.0 as f64, offset.1 as f64, crop, crop);
    let mut data = vec![0f32; 3 * crop * crop];
    let identity = zoom == 1.0;
    for y in 0..crop {
        for x in 0..crop {
            let (sx, sy) = (x + offset.0, y + offset.1);
            let rgb = if identity && sx < v.image.width() as usize && sy < v.image.height() as usize {
                v.image.get_pixel(sx as u32, sy as u32).0.map(|c| f64::from(c) / 255.0)
            } else {
                let u = (sx as f64 + 0.5) / zoom - 0.5;
                let w = (sy as f64 + 0.5) / zoom - 0.5;
                sample_bilinear(&v.image, u, w)
            };
            for c in 0..3 {
                data[(c * crop + y) * crop + x] = rgb[c] as f32;
            }
        }
    }
    Ok(Batch {
        view,
        zoom,
        offset,
        camera,
        target: Tensor::from_vec(&[3, crop, crop], data)?,
    })
}

/// Draws a training view, a log-uniform zoom in the configured range (raised
/// if needed so the zoomed image still contains the crop) and a crop offset.
pub fn make_batch<G: Rng>(scene: &SceneDataset, config: &FitConfig, rng: &mut G) -> Result<Batch> {
    let train = scene.view_indices(Split::Train);
    if train.is_empty() {
        return Err(Error::Config("scene has no training views".into()));
    }
    let view = train[rng.gen_range(0..train.len())];
    let cam = &scene.views[view].camera;
    let crop = config.crop;
    if crop > cam.width.min(cam.height) {
        return Err(Error::Config(format!(
            "crop {crop} exceeds the {}x{} view",
            cam.width, cam.height
        )));
    }
    let (lo, hi) = (config.zoom_min.ln(), config.zoom_max.ln());
    let mut zoom = rng.gen_range(lo..=hi).exp();
    zoom = zoom.max(crop as f64 / cam.width.min(cam.height) as f64);
    let span = |extent: usize| ((zoom * extent as f64).floor() as usize).saturating_sub(crop);
    let ox = rng.gen_range(0..=span(cam.width));
    let oy = rng.gen_range(0..=span(cam.height));
    batch_for(scene, view, zoom, (ox, oy), crop)
}
