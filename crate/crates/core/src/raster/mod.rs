//! Z-buffer point rasterization of descriptor-colored clouds.
//!
//! Every visible point lands on exactly one pixel. Per pixel the winner is the
//! point minimizing `(depth, index)` lexicographically, which makes the result
//! independent of traversal order. Empty pixels hold the zero vector.
//!
//! The channel values are a linear function of the descriptors with the
//! winner map fixed, so the backward pass is a scatter-add of upstream pixel
//! gradients onto the winning rows.

mod descriptors;

pub use descriptors::{
    load_descriptors, read_descriptors, save_descriptors, write_descriptors, DescriptorSet,
};

use crate::autodiff::downsample2x_values;
use crate::error::{Error, Result};
use crate::geometry::{camera_halve, camera_upscale, Camera, PointCloud};
use crate::tensor::{Real, Tensor};

/// Winner-map marker for pixels no point reached.
pub const NONE: u32 = u32::MAX;

/// Per-pixel nearest point and its depth, before any descriptors are attached.
#[derive(Clone, Debug, PartialEq)]
pub struct ZBuffer {
    pub width: usize,
    pub height: usize,
    pub winner: Vec<u32>,
    pub depth: Vec<f64>,
}

impl ZBuffer {
    fn empty(width: usize, height: usize) -> Self {
        ZBuffer {
            width,
            height,
            winner: vec![NONE; width * height],
            depth: vec![f64::INFINITY; width * height],
        }
    }

    /// Rasterizes the geometry of `cloud` into a z-buffer.
    pub fn build(cloud: &PointCloud, cam: &Camera) -> Result<Self> {
        if cloud.len() >= NONE as usize {
            return Err(Error::Config(format!("too many points: {}", cloud.len())));
        }
        let mut zb = ZBuffer::empty(cam.width, cam.height);
        for (i, p) in cloud.positions.iter().enumerate() {
            if let Some((x, y, z)) = cam.project_point(p) {
                let k = y * cam.width + x;
                if closer(z, i as u32, zb.depth[k], zb.winner[k]) {
                    zb.depth[k] = z;
                    zb.winner[k] = i as u32;
                }
            }
        }
        Ok(zb)
    }

    pub fn covered(&self) -> usize {
        self.winner.iter().filter(|&&w| w != NONE).count()
    }
}

#[inline]
fn closer(depth: f64, index: u32, cur_depth: f64, cur_index: u32) -> bool {
    depth < cur_depth || (depth == cur_depth && index < cur_index)
}

/// An `M`-channel raw image with its winner and depth maps.
#[derive(Clone, Debug, PartialEq)]
pub struct RawImage<R> {
    /// `[M, H, W]`
    pub channels: Tensor<R>,
    pub winner: Vec<u32>,
    pub depth: Vec<f64>,
    /// Size of the cloud this image was rasterized from; offsets winner indices
    /// when merging.
    pub point_count: usize,
}

impl<R: Real> RawImage<R> {
    pub fn width(&self) -> usize {
        self.channels.shape()[2]
    }

    pub fn height(&self) -> usize {
        self.channels.shape()[1]
    }

    pub fn descriptor_width(&self) -> usize {
        self.channels.shape()[0]
    }

    /// Fills channels from a z-buffer: `channels[:, p] = desc[winner[p]]`.
    pub fn from_zbuffer(zb: ZBuffer, desc: &DescriptorSet<R>) -> Self {
        let m = desc.width();
        let npix = zb.width * zb.height;
        let mut data = vec![R::zero(); m * npix];
        for (k, &w) in zb.winner.iter().enumerate() {
            if w != NONE {
                for (c, &v) in desc.row(w as usize).iter().enumerate() {
                    data[c * npix + k] = v;
                }
            }
        }
        RawImage {
            channels: Tensor::from_vec(&[m, zb.height, zb.width], data).expect("extents"),
            winner: zb.winner,
            depth: zb.depth,
            point_count: desc.len(),
        }
    }

    /// Same raster content (channels, winners, depths), ignoring `point_count`.
    pub fn same_content(&self, other: &RawImage<R>) -> bool {
        self.channels == other.channels
            && self.winner == other.winner
            && self.depth.iter().zip(&other.depth).all(|(a, b)| a.to_bits() == b.to_bits())
            && self.depth.len() == other.depth.len()
    }
}

fn check_counts<R: Real>(cloud: &PointCloud, desc: &DescriptorSet<R>) -> Result<()> {
    if cloud.len() != desc.len() {
        return Err(Error::shape(
            "rasterize",
            format!(
                "point count {} does not match descriptor rows {}",
                cloud.len(),
                desc.len()
            ),
        ));
    }
    Ok(())
}

pub fn rasterize<R: Real>(cloud: &PointCloud, desc: &DescriptorSet<R>, cam: &Camera) -> Result<RawImage<R>> {
    check_counts(cloud, desc)?;
    Ok(RawImage::from_zbuffer(ZBuffer::build(cloud, cam)?, desc))
}

/// Raw images at `T` resolutions; level `t` (0-based here) is `1/2^t` of the
/// full resolution with its own independent z-buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct RawPyramid<R> {
    pub levels: Vec<RawImage<R>>,
}

impl<R: Real> RawPyramid<R> {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn channel_tensors(&self) -> Vec<Tensor<R>> {
        self.levels.iter().map(|l| l.channels.clone()).collect()
    }
}

/// Cameras for pyramid levels `0..levels`, each halving the previous one.
pub fn pyramid_cameras(cam: &Camera, levels: usize) -> Result<Vec<Camera>> {
    if levels == 0 {
        return Err(Error::Config("pyramid needs at least one level".into()));
    }
    let div = 1usize << (levels - 1);
    if cam.width % div != 0 || cam.height % div != 0 {
        return Err(Error::Extent(format!(
            "{}x{} raster is not divisible by 2^{} for a {}-level pyramid",
            cam.width,
            cam.height,
            levels - 1,
            levels
        )));
    }
    let mut cams = vec![cam.clone()];
    for _ in 1..levels {
        let next = camera_halve(cams.last().unwrap())?;
        cams.push(next);
    }
    Ok(cams)
}

pub fn rasterize_pyramid<R: Real>(
    cloud: &PointCloud,
    desc: &DescriptorSet<R>,
    cam: &Camera,
    levels: usize,
) -> Result<RawPyramid<R>> {
    check_counts(cloud, desc)?;
    let levels = pyramid_cameras(cam, levels)?
        .iter()
        .map(|c| rasterize(cloud, desc, c))
        .collect::<Result<_>>()?;
    Ok(RawPyramid { levels })
}

fn scatter_level<R: Real>(level: &RawImage<R>, upstream: &Tensor<R>, grad: &mut [R], m: usize) {
    let npix = level.winner.len();
    let g = upstream.data();
    for (k, &w) in level.winner.iter().enumerate() {
        if w != NONE {
            let row = &mut grad[w as usize * m..(w as usize + 1) * m];
            for (c, r) in row.iter_mut().enumerate() {
                *r += g[c * npix + k];
            }
        }
    }
}

/// `grad[i] = sum over levels and pixels won by i of the upstream pixel vector`.
pub fn rasterize_backward<R: Real>(pyramid: &RawPyramid<R>, upstream: &[Tensor<R>]) -> Result<Tensor<R>> {
    if upstream.len() != pyramid.levels.len() {
        return Err(Error::shape(
            "rasterize_backward",
            format!(
                "{} upstream gradients for {} pyramid levels",
                upstream.len(),
                pyramid.levels.len()
            ),
        ));
    }
    let Some(first) = pyramid.levels.first() else {
        return Err(Error::shape("rasterize_backward", "empty pyramid"));
    };
    let (n, m) = (first.point_count, first.descriptor_width());
    let mut grad = vec![R::zero(); n * m];
    for (t, (level, up)) in pyramid.levels.iter().zip(upstream).enumerate() {
        if up.shape() != level.channels.shape() {
            return Err(Error::shape(
                "rasterize_backward",
                format!(
                    "level {}: upstream {:?} vs raw image {:?}",
                    t + 1,
                    up.shape(),
                    level.channels.shape()
                ),
            ));
        }
        scatter_level(level, up, &mut grad, m);
    }
    Tensor::from_vec(&[n, m], grad)
}

/// Raw image rendered at `factor` times the target resolution and box-averaged
/// back down.
#[derive(Clone, Debug, PartialEq)]
pub struct AntiAliasedRaw<R> {
    /// `[M, H, W]` at the target resolution.
    pub channels: Tensor<R>,
    /// The supersampled raster whose winners route gradients.
    pub source: RawImage<R>,
    pub factor: usize,
}

pub fn rasterize_aa<R: Real>(
    cloud: &PointCloud,
    desc: &DescriptorSet<R>,
    cam: &Camera,
    factor: usize,
) -> Result<AntiAliasedRaw<R>> {
    if !matches!(factor, 1 | 2 | 4) {
        return Err(Error::Config(format!(
            "anti-aliasing factor must be 1, 2 or 4, got {factor}"
        )));
    }
    let source = rasterize(cloud, desc, &camera_upscale(cam, factor))?;
    let mut channels = source.channels.clone();
    let mut f = factor;
    while f > 1 {
        channels = downsample2x_values(&channels)?;
        f /= 2;
    }
    Ok(AntiAliasedRaw {
        channels,
        source,
        factor,
    })
}

/// Descriptor gradient of an anti-aliased raw image: each supersample winner
/// receives its pixel's upstream gradient weighted by `1/factor^2`.
pub fn rasterize_aa_backward<R: Real>(aa: &AntiAliasedRaw<R>, upstream: &Tensor<R>) -> Result<Tensor<R>> {
    if upstream.shape() != aa.channels.shape() {
        return Err(Error::shape(
            "rasterize_aa_backward",
            format!("upstream {:?} vs raw image {:?}", upstream.shape(), aa.channels.shape()),
        ));
    }
    let (m, h, w) = upstream.chw()?;
    let k = aa.factor;
    let (hh, ww) = (h * k, w * k);
    let weight = R::one() / R::from_f64((k * k) as f64);
    let mut fine = vec![R::zero(); m * hh * ww];
    for c in 0..m {
        for y in 0..hh {
            for x in 0..ww {
                fine[(c * hh + y) * ww + x] = upstream.data()[(c * h + y / k) * w + x / k] * weight;
            }
        }
    }
    let fine = Tensor::from_vec(&[m, hh, ww], fine)?;
    let mut grad = vec![R::zero(); aa.source.point_count * m];
    scatter_level(&aa.source, &fine, &mut grad, m);
    Tensor::from_vec(&[aa.source.point_count, m], grad)
}

/// Per pixel keeps the record with smaller `(depth, source, winner)`, where `a`
/// is source 0 and `b` source 1. `b`'s winner indices are shifted by
/// `a.point_count`, matching rasterization of the concatenated cloud.
pub fn merge_rasters<R: Real>(a: &RawImage<R>, b: &RawImage<R>) -> Result<RawImage<R>> {
    if a.channels.shape() != b.channels.shape() {
        return Err(Error::shape(
            "merge_rasters",
            format!("{:?} vs {:?}", a.channels.shape(), b.channels.shape()),
        ));
    }
    let offset = a.point_count as u64;
    if offset + b.point_count as u64 >= NONE as u64 {
        return Err(Error::Config("merged point count overflows winner indices".into()));
    }
    let npix = a.winner.len();
    let m = a.descriptor_width();
    let mut out = a.clone();
    out.point_count = a.point_count + b.point_count;
    for k in 0..npix {
        let (bw, bd) = (b.winner[k], b.depth[k]);
        if bw == NONE {
            continue;
        }
        let take_b = a.winner[k] == NONE || bd < a.depth[k];
        if take_b {
            out.winner[k] = bw + offset as u32;
            out.depth[k] = bd;
            for c in 0..m {
                out.channels.data_mut()[c * npix + k] = b.channels.data()[c * npix + k];
            }
        }
    }
    Ok(out)
}
