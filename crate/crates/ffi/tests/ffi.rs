use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use bdff::networks::{init_model, NetKind, WidthConfig};
use bdff::nn::{Checkpoint, Mode};
use bdff::tensor::Tensor;
use bdff::train::TrainConfig;
use bdff_ffi::*;

fn last_error() -> String {
    let p = bdff_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn tiny_run(dir: &Path, kind: NetKind) -> (CString, CString) {
    let width = WidthConfig::tiny();
    let mut model = init_model(kind, &width, 7).unwrap();
    let inputs: Vec<(String, Tensor<f32>)> = model
        .graph()
        .inputs
        .iter()
        .map(|i| (i.name.clone(), Tensor::from_fn(&[2, i.channels, 8, 8], |j| (j % 13) as f32 / 13.0)))
        .collect();
    let refs: Vec<(&str, &Tensor<f32>)> = inputs.iter().map(|(n, t)| (n.as_str(), t)).collect();
    model.forward(&refs, Mode::Train).unwrap();
    let ckpt = dir.join(format!("{kind}.ckpt"));
    Checkpoint::from_model(&model, None).write(&ckpt).unwrap();
    let cfg = TrainConfig {
        width,
        ..Default::default()
    };
    let cfg_path = dir.join("train.json");
    std::fs::write(&cfg_path, serde_json::to_string(&cfg).unwrap()).unwrap();
    (cstr(ckpt.to_str().unwrap()), cstr(cfg_path.to_str().unwrap()))
}

fn stack(slices: usize, w: usize, h: usize) -> Vec<f32> {
    (0..slices * w * h * 3).map(|i| ((i * 7919) % 101) as f32 / 100.0).collect()
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(bdff_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn coc_is_zero_at_focus_and_errors_are_reported() {
    let mut out = -1.0;
    // f = 50, s = 51.28 focuses at 2003.125 mm.
    let z_s = 1.0 / (1.0 / 50.0 - 1.0 / 51.28);
    let st = unsafe { bdff_coc_diameter(50.0, 10.0, 51.28, 0.01, z_s, &mut out) };
    assert_eq!(st, BdffStatus::Ok);
    assert!(out.abs() < 1e-9, "{out}");
    assert!(bdff_last_error().is_null());

    let st = unsafe { bdff_coc_diameter(50.0, 10.0, 51.28, 0.01, 20.0, &mut out) };
    assert_eq!(st, BdffStatus::Domain);
    assert!(last_error().contains("focal length"));

    let st = unsafe { bdff_coc_diameter(50.0, 10.0, 40.0, 0.01, 1000.0, &mut out) };
    assert_eq!(st, BdffStatus::Config);

    let st = unsafe { bdff_coc_diameter(50.0, 10.0, 51.28, 0.01, 1000.0, ptr::null_mut()) };
    assert_eq!(st, BdffStatus::NullPointer);
}

#[test]
fn classical_dff_picks_the_textured_slice() {
    let (w, h) = (24, 20);
    let flat = vec![0.5f32; w * h];
    let sharp: Vec<f32> = (0..w * h).map(|i| if (i % w + i / w) % 2 == 0 { 0.9 } else { 0.1 }).collect();
    let packed: Vec<f32> = [flat.clone(), sharp, flat].concat();
    let mut idx = vec![99u32; w * h];
    let mut conf = vec![-1f32; w * h];
    let st = unsafe { bdff_classical_dff(packed.as_ptr(), 3, w, h, 1, idx.as_mut_ptr(), conf.as_mut_ptr()) };
    assert_eq!(st, BdffStatus::Ok, "{}", last_error());
    assert!(idx.iter().all(|&i| i == 1));
    assert!(conf.iter().all(|&c| c > 0.0));
    let st = unsafe { bdff_classical_dff(packed.as_ptr(), 1, w, h, 1, idx.as_mut_ptr(), ptr::null_mut()) };
    assert_ne!(st, BdffStatus::Ok);
    let st = unsafe { bdff_classical_dff(ptr::null(), 3, w, h, 1, idx.as_mut_ptr(), ptr::null_mut()) };
    assert_eq!(st, BdffStatus::NullPointer);
}

#[test]
fn model_load_failures() {
    let mut handle: *mut BdffModel = ptr::null_mut();
    let net = cstr("focus");
    let missing = cstr("/nonexistent/focus.ckpt");
    let st = unsafe { bdff_model_load(net.as_ptr(), missing.as_ptr(), ptr::null(), &mut handle) };
    assert_eq!(st, BdffStatus::Io);
    assert!(handle.is_null());
    assert!(last_error().contains("nonexistent"));

    let bad = cstr("resnet");
    let st = unsafe { bdff_model_load(bad.as_ptr(), missing.as_ptr(), ptr::null(), &mut handle) };
    assert_eq!(st, BdffStatus::InvalidArgument);

    let st = unsafe { bdff_model_load(net.as_ptr(), missing.as_ptr(), ptr::null(), ptr::null_mut()) };
    assert_eq!(st, BdffStatus::NullPointer);

    let dir = tempfile::tempdir().unwrap();
    let (ckpt, cfg) = tiny_run(dir.path(), NetKind::Edof);
    let st = unsafe { bdff_model_load(net.as_ptr(), ckpt.as_ptr(), cfg.as_ptr(), &mut handle) };
    assert_eq!(st, BdffStatus::Checkpoint);

    unsafe { bdff_model_free(ptr::null_mut()) };
    assert_eq!(unsafe { bdff_model_slices(ptr::null()) }, 0);
}

#[test]
fn focus_model_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, cfg) = tiny_run(dir.path(), NetKind::Focus);
    let net = cstr("focus");
    let mut handle: *mut BdffModel = ptr::null_mut();
    let st = unsafe { bdff_model_load(net.as_ptr(), ckpt.as_ptr(), cfg.as_ptr(), &mut handle) };
    assert_eq!(st, BdffStatus::Ok, "{}", last_error());
    let slices = unsafe { bdff_model_slices(handle) };
    let multiple = unsafe { bdff_model_multiple(handle) };
    assert_eq!((slices, multiple), (2, 8));

    let (w, h) = (19, 17);
    let input = stack(slices, w, h);
    let mut depth = vec![-1f32; w * h];
    let (mut ow, mut oh) = (0usize, 0usize);
    let st = unsafe { bdff_model_infer(handle, input.as_ptr(), ptr::null(), w, h, depth.as_mut_ptr(), &mut ow, &mut oh) };
    assert_eq!(st, BdffStatus::Ok, "{}", last_error());
    assert_eq!((ow, oh), (16, 16));
    assert!(depth[..ow * oh].iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(depth[ow * oh..].iter().all(|&v| v == -1.0));

    let mut again = vec![0f32; w * h];
    unsafe { bdff_model_infer(handle, input.as_ptr(), ptr::null(), w, h, again.as_mut_ptr(), ptr::null_mut(), ptr::null_mut()) };
    assert_eq!(depth[..ow * oh], again[..ow * oh]);

    let mut rgb = vec![0f32; w * h * 3];
    let st = unsafe { bdff_model_edof(handle, input.as_ptr(), w, h, rgb.as_mut_ptr(), ptr::null_mut(), ptr::null_mut()) };
    assert_eq!(st, BdffStatus::InvalidArgument);
    unsafe { bdff_model_free(handle) };
}

#[test]
fn stereo_needs_an_edof_network() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, cfg) = tiny_run(dir.path(), NetKind::Stereo);
    let (edof_ckpt, _) = tiny_run(dir.path(), NetKind::Edof);
    let net = cstr("stereo");
    let mut handle: *mut BdffModel = ptr::null_mut();
    assert_eq!(unsafe { bdff_model_load(net.as_ptr(), ckpt.as_ptr(), cfg.as_ptr(), &mut handle) }, BdffStatus::Ok);
    let (w, h) = (16, 16);
    let l = stack(2, w, h);
    let mut depth = vec![0f32; w * h];
    let st = unsafe { bdff_model_infer(handle, l.as_ptr(), l.as_ptr(), w, h, depth.as_mut_ptr(), ptr::null_mut(), ptr::null_mut()) };
    assert_eq!(st, BdffStatus::InvalidArgument);
    assert!(last_error().contains("EDoFNet"));
    assert_eq!(unsafe { bdff_model_attach_edof(handle, edof_ckpt.as_ptr()) }, BdffStatus::Ok);
    let st = unsafe { bdff_model_infer(handle, l.as_ptr(), l.as_ptr(), w, h, depth.as_mut_ptr(), ptr::null_mut(), ptr::null_mut()) };
    assert_eq!(st, BdffStatus::Ok, "{}", last_error());
    unsafe { bdff_model_free(handle) };
}

#[test]
fn edof_handle_produces_colour() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, cfg) = tiny_run(dir.path(), NetKind::Edof);
    let net = cstr("edof");
    let mut handle: *mut BdffModel = ptr::null_mut();
    assert_eq!(unsafe { bdff_model_load(net.as_ptr(), ckpt.as_ptr(), cfg.as_ptr(), &mut handle) }, BdffStatus::Ok);
    let (w, h) = (8, 8);
    let s = stack(2, w, h);
    let mut rgb = vec![-1f32; w * h * 3];
    let (mut ow, mut oh) = (0, 0);
    let st = unsafe { bdff_model_edof(handle, s.as_ptr(), w, h, rgb.as_mut_ptr(), &mut ow, &mut oh) };
    assert_eq!(st, BdffStatus::Ok, "{}", last_error());
    assert_eq!((ow, oh), (8, 8));
    assert!(rgb.iter().all(|v| (0.0..=1.0).contains(v)));
    let mut depth = vec![0f32; w * h];
    let st = unsafe { bdff_model_infer(handle, s.as_ptr(), ptr::null(), w, h, depth.as_mut_ptr(), ptr::null_mut(), ptr::null_mut()) };
    assert_eq!(st, BdffStatus::InvalidArgument);
    unsafe { bdff_model_free(handle) };
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include").join("bdff.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in [
        "bdff_version",
        "bdff_last_error",
        "bdff_model_load",
        "bdff_model_free",
        "bdff_model_infer",
        "bdff_coc_diameter",
        "bdff_classical_dff",
    ] {
        assert!(text.contains(f), "{f} missing from header");
    }
    let Ok(out) = Command::new("cc").args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"]).arg(&header).output() else {
        eprintln!("no C compiler; skipping syntax check");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
