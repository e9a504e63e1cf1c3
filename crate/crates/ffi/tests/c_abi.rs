use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use npbg::fitting::render_view;
use npbg::raster::{rasterize, DescriptorSet};
use npbg::rendernet::{RenderNetConfig, RenderNetParams};
use npbg::sceneio::{generate_synthetic, save_scene, SceneDataset, SynthSpec};
use npbg::tensor::Tensor;
use npbg_ffi::*;

fn small_scene(dir: &Path) -> SceneDataset {
    let spec = SynthSpec {
        points: 800,
        views: 3,
        width: 32,
        height: 32,
        ..SynthSpec::default()
    };
    let scene = generate_synthetic(&spec, 3).unwrap().scene;
    save_scene(dir, &scene).unwrap();
    scene
}

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(npbg_last_error_message()) }.to_string_lossy().into_owned()
}

fn load(dir: &Path) -> *mut NpbgScene {
    let mut handle = ptr::null_mut();
    let status = unsafe { npbg_scene_load(cstr(dir).as_ptr(), &mut handle) };
    assert_eq!(status, NpbgStatus::Ok, "{}", last_error());
    handle
}

fn random_descriptors(n: usize, m: usize) -> DescriptorSet<f32> {
    let data = (0..n * m).map(|i| ((i * 7919) % 1000) as f32 / 1000.0).collect();
    DescriptorSet::from_tensor(Tensor::from_vec(&[n, m], data).unwrap()).unwrap()
}

#[test]
fn scene_queries_match_the_library() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = small_scene(tmp.path());
    let h = load(tmp.path());
    let (mut n, mut v) = (0usize, 0usize);
    unsafe {
        assert_eq!(npbg_scene_point_count(h, &mut n), NpbgStatus::Ok);
        assert_eq!(npbg_scene_view_count(h, &mut v), NpbgStatus::Ok);
    }
    assert_eq!((n, v), (scene.cloud.len(), scene.views.len()));
    let mut cam = std::mem::MaybeUninit::<NpbgCamera>::uninit();
    let status = unsafe { npbg_scene_view_camera(h, 1, cam.as_mut_ptr()) };
    assert_eq!(status, NpbgStatus::Ok);
    let cam = unsafe { cam.assume_init() };
    let want = scene.views[1].camera.to_json();
    assert_eq!((cam.fx, cam.cx, cam.rotation, cam.translation), (want.fx, want.cx, want.rotation, want.translation));
    let mut out = cam;
    assert_eq!(unsafe { npbg_scene_view_camera(h, 99, &mut out) }, NpbgStatus::InvalidArgument);
    assert!(last_error().contains("out of range"));
    unsafe { npbg_scene_free(h) };
}

#[test]
fn rasterize_matches_the_library_bitwise() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = small_scene(tmp.path());
    let h = load(tmp.path());
    let m = 5;
    let desc = random_descriptors(scene.cloud.len(), m);
    let mut cam = std::mem::MaybeUninit::<NpbgCamera>::uninit();
    unsafe { npbg_scene_view_camera(h, 0, cam.as_mut_ptr()) };
    let cam = unsafe { cam.assume_init() };
    let (w, hh) = (cam.width as usize, cam.height as usize);
    let mut channels = vec![0f32; m * w * hh];
    let mut winner = vec![0u32; w * hh];
    let status = unsafe {
        npbg_rasterize(
            h,
            desc.values().data().as_ptr(),
            desc.len(),
            m,
            &cam,
            channels.as_mut_ptr(),
            winner.as_mut_ptr(),
        )
    };
    assert_eq!(status, NpbgStatus::Ok, "{}", last_error());
    let want = rasterize(&scene.cloud, &desc, &scene.views[0].camera).unwrap();
    assert_eq!(channels, want.channels.data());
    assert_eq!(winner, want.winner);
    assert!(winner.iter().any(|&w| w != u32::MAX));

    let status = unsafe {
        npbg_rasterize(h, desc.values().data().as_ptr(), desc.len() - 1, m, &cam, channels.as_mut_ptr(), ptr::null_mut())
    };
    assert_eq!(status, NpbgStatus::Extent);
    unsafe { npbg_scene_free(h) };
}

#[test]
fn render_matches_the_library() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = small_scene(&tmp.path().join("scene"));
    let config = RenderNetConfig {
        levels: 2,
        in_channels: 4,
        base_channels: 2,
        pyramid_levels: 2,
    };
    let params = RenderNetParams::<f32>::build(&config, 5).unwrap();
    let ckpt = tmp.path().join("model.ckpt");
    params.save(&ckpt).unwrap();

    let sh = load(&tmp.path().join("scene"));
    let mut mh = ptr::null_mut();
    assert_eq!(unsafe { npbg_model_load(cstr(&ckpt).as_ptr(), &mut mh) }, NpbgStatus::Ok);
    let mut m = 0usize;
    unsafe { npbg_model_in_channels(mh, &mut m) };
    assert_eq!(m, 4);

    let desc = random_descriptors(scene.cloud.len(), m);
    let mut cam = std::mem::MaybeUninit::<NpbgCamera>::uninit();
    unsafe { npbg_scene_view_camera(sh, 2, cam.as_mut_ptr()) };
    let cam = unsafe { cam.assume_init() };
    for aa in [1u32, 2] {
        let mut rgb = vec![0f32; 3 * 32 * 32];
        let status = unsafe {
            npbg_render(mh, sh, desc.values().data().as_ptr(), desc.len(), m, &cam, aa, rgb.as_mut_ptr())
        };
        assert_eq!(status, NpbgStatus::Ok, "{}", last_error());
        let want = render_view(&params, &scene.cloud, &desc, &scene.views[2].camera, aa as usize).unwrap();
        assert_eq!(rgb, want.data());
    }
    let mut rgb = vec![0f32; 3 * 32 * 32];
    let status = unsafe { npbg_render(mh, sh, ptr::null(), 0, 0, &cam, 3, rgb.as_mut_ptr()) };
    assert_eq!(status, NpbgStatus::InvalidArgument);
    unsafe {
        npbg_model_free(mh);
        npbg_scene_free(sh);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { npbg_scene_load(ptr::null(), &mut h) }, NpbgStatus::NullPointer);
    assert!(last_error().contains("null"));

    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope");
    assert_eq!(unsafe { npbg_scene_load(cstr(&missing).as_ptr(), &mut h) }, NpbgStatus::MissingFile);
    assert!(last_error().starts_with("missing_file"));

    let mut n = 0usize;
    assert_eq!(unsafe { npbg_scene_point_count(ptr::null(), &mut n) }, NpbgStatus::NullPointer);

    small_scene(tmp.path());
    let sh = load(tmp.path());
    let mut cam = std::mem::MaybeUninit::<NpbgCamera>::uninit();
    unsafe { npbg_scene_view_camera(sh, 0, cam.as_mut_ptr()) };
    let mut cam = unsafe { cam.assume_init() };
    cam.rotation[0] = 2.0;
    let desc = vec![0f32; n.max(1)];
    unsafe { npbg_scene_point_count(sh, &mut n) };
    let mut out = vec![0f32; 32 * 32];
    let status = unsafe { npbg_rasterize(sh, desc.as_ptr(), n, 1, &cam, out.as_mut_ptr(), ptr::null_mut()) };
    assert_eq!(status, NpbgStatus::InvalidRotation);
    assert!(last_error().contains("invalid rotation"));
    unsafe { npbg_scene_free(sh) };
    assert!(!unsafe { CStr::from_ptr(npbg_version()) }.to_bytes().is_empty());
}

#[test]
fn generated_header_declares_the_api_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/npbg.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in [
        "npbg_last_error_message",
        "npbg_version",
        "npbg_scene_load",
        "npbg_scene_free",
        "npbg_scene_point_count",
        "npbg_scene_view_count",
        "npbg_scene_view_camera",
        "npbg_model_load",
        "npbg_model_free",
        "npbg_model_in_channels",
        "npbg_rasterize",
        "npbg_render",
    ] {
        assert!(text.contains(&format!("{f}(")), "{f} missing from header");
    }
    let Ok(cc) = which_cc() else { return };
    let out = std::process::Command::new(cc)
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn which_cc() -> Result<&'static str, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if std::process::Command::new(cc).arg("--version").output().is_ok() {
            return Ok(cc);
        }
    }
    Err(())
}
