//! Exercises the C ABI from Rust: results, status codes and handles.

use std::ffi::{CStr, CString};
use std::ptr;

use cud_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(cud_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn softmax_and_version() {
    let z = [2.0, 0.0];
    let mut out = [0.0; 2];
    assert_eq!(unsafe { cud_softmax(z.as_ptr(), 2, 2.0, out.as_mut_ptr()) }, CudStatus::Ok);
    assert!((out[0] - 0.731_058_578_630_004_9).abs() < 1e-12);
    assert_eq!(last_error(), "");
    let version = unsafe { CStr::from_ptr(cud_version()) }.to_str().unwrap();
    assert_eq!(version, env!("CARGO_PKG_VERSION"));
}

#[test]
fn w_clip_moves_the_margin_bound_mass() {
    let p = [0.6, 0.3, 0.1];
    let mut out = [0.0; 3];
    let mut delta = 0.0;
    let s = unsafe { cud_w_clip(p.as_ptr(), 3, 1, 0.5, 0.7, out.as_mut_ptr(), &mut delta) };
    assert_eq!(s, CudStatus::Ok);
    assert!((delta - 0.21).abs() < 1e-12);
    for (a, b) in out.iter().zip([0.39, 0.51, 0.10]) {
        assert!((a - b).abs() < 1e-12);
    }
    // delta_out is optional
    let s = unsafe { cud_w_clip(p.as_ptr(), 3, 1, 0.5, 0.7, out.as_mut_ptr(), ptr::null_mut()) };
    assert_eq!(s, CudStatus::Ok);
}

#[test]
fn exact_tilt_reports_its_dual() {
    let p = [0.6, 0.3, 0.1];
    let mut out = [0.0; 3];
    let mut nu = f64::NAN;
    assert_eq!(unsafe { cud_exact_tilt(p.as_ptr(), 3, 0, 0.4, out.as_mut_ptr(), &mut nu) }, CudStatus::Ok);
    assert!(((-nu).exp() - 4.0 / 9.0).abs() < 1e-8);
    assert!((out[0] - 0.4).abs() < 1e-9);
}

#[test]
fn teacher_loss_defaults_and_gradient() {
    let z = [0.0, 0.0];
    let mut loss = 0.0;
    let mut grad = [0.0; 2];
    let s = unsafe { cud_teacher_loss(z.as_ptr(), 2, 0, ptr::null(), &mut loss, grad.as_mut_ptr()) };
    assert_eq!(s, CudStatus::Ok);
    // ln2 (CE) + 2^-10 ln2 (focal) - 0.1 * 0.25 * ln2 (gated entropy)
    let ln2 = std::f64::consts::LN_2;
    assert!((loss - ln2 * (1.0 + 1.0 / 1024.0 - 0.025)).abs() < 1e-12);
    assert!((grad[0] + grad[1]).abs() < 1e-12, "softmax gradients sum to zero");

    let mut params = cud_dus_params_default();
    params.lambda_f = 0.0;
    params.lambda_h = 0.0;
    let s = unsafe { cud_teacher_loss(z.as_ptr(), 2, 0, &params, &mut loss, ptr::null_mut()) };
    assert_eq!(s, CudStatus::Ok);
    assert!((loss - ln2).abs() < 1e-15);

    params.alpha_y = 2.0;
    let s = unsafe { cud_teacher_loss(z.as_ptr(), 2, 0, &params, &mut loss, ptr::null_mut()) };
    assert_eq!(s, CudStatus::InvalidArgument);
    assert!(last_error().contains("alpha_y"));
}

#[test]
fn auroc_counts_ties_as_half() {
    let scores = [0.9, 0.5, 0.5, 0.1];
    let positive = [1u8, 1, 0, 0];
    let mut out = 0.0;
    assert_eq!(unsafe { cud_auroc(scores.as_ptr(), positive.as_ptr(), 4, &mut out) }, CudStatus::Ok);
    assert_eq!(out, 0.875);
    let all = [1u8; 4];
    assert_eq!(unsafe { cud_auroc(scores.as_ptr(), all.as_ptr(), 4, &mut out) }, CudStatus::InvalidArgument);
}

#[test]
fn error_codes_and_messages() {
    let mut out = [0.0; 3];
    let not_a_dist = [0.5, 0.6, 0.1];
    let s = unsafe { cud_w_clip(not_a_dist.as_ptr(), 3, 0, 0.5, 0.7, out.as_mut_ptr(), ptr::null_mut()) };
    assert_eq!(s, CudStatus::Domain);
    assert!(!last_error().is_empty());

    let p = [0.2, 0.7, 0.1];
    let s = unsafe { cud_w_clip(p.as_ptr(), 3, 7, 0.5, 0.7, out.as_mut_ptr(), ptr::null_mut()) };
    assert_eq!(s, CudStatus::InvalidArgument);
    assert!(last_error().contains("out of range"), "{}", last_error());

    let s = unsafe { cud_softmax(ptr::null(), 3, 1.0, out.as_mut_ptr()) };
    assert_eq!(s, CudStatus::NullPointer);
    assert_eq!(last_error(), "logits is null");

    // a success clears the message
    let z = [1.0, 2.0, 3.0];
    assert_eq!(unsafe { cud_softmax(z.as_ptr(), 3, 1.0, out.as_mut_ptr()) }, CudStatus::Ok);
    assert_eq!(last_error(), "");
}

#[test]
fn last_error_is_per_thread() {
    let s = unsafe { cud_softmax(ptr::null(), 2, 1.0, ptr::null_mut()) };
    assert_eq!(s, CudStatus::NullPointer);
    let other = std::thread::spawn(last_error).join().unwrap();
    assert_eq!(other, "");
    assert_eq!(last_error(), "logits is null");
}

fn write_checkpoint(dir: &std::path::Path) -> std::path::PathBuf {
    // 2 inputs -> 2 classes, identity weights.
    let text = r#"{"format": "cud-checkpoint", "version": 1, "layer_dims": [2, 2],
        "layers": [{"weights": [1.0, 0.0, 0.0, 1.0], "bias": [0.0, 0.0]}],
        "seed": 0, "config_hash": "test"}"#;
    let path = dir.join("checkpoint.json");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn classifier_handle_lifecycle() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(write_checkpoint(dir.path()).to_str().unwrap()).unwrap();
    let mut model: *mut CudClassifier = ptr::null_mut();
    assert_eq!(unsafe { cud_classifier_load(path.as_ptr(), &mut model) }, CudStatus::Ok);
    assert!(!model.is_null());
    unsafe {
        assert_eq!(cud_classifier_input_dim(model), 2);
        assert_eq!(cud_classifier_num_classes(model), 2);
    }
    let x = [2.0, 0.0];
    let mut p = [0.0; 2];
    assert_eq!(unsafe { cud_classifier_predict(model, x.as_ptr(), 2, p.as_mut_ptr(), 2) }, CudStatus::Ok);
    assert!((p[0] - 1.0 / (1.0 + (-2.0f64).exp())).abs() < 1e-15);

    let mut wrong = [0.0; 3];
    assert_eq!(
        unsafe { cud_classifier_predict(model, x.as_ptr(), 2, wrong.as_mut_ptr(), 3) },
        CudStatus::Dimension
    );
    assert_eq!(
        unsafe { cud_classifier_predict(model, x.as_ptr(), 1, p.as_mut_ptr(), 2) },
        CudStatus::Dimension
    );
    unsafe { cud_classifier_free(model) };
    unsafe { cud_classifier_free(ptr::null_mut()) };
    assert_eq!(unsafe { cud_classifier_input_dim(ptr::null()) }, 0);
}

#[test]
fn classifier_load_failures() {
    let dir = tempfile::tempdir().unwrap();
    let mut model: *mut CudClassifier = ptr::dangling_mut::<CudClassifier>();
    let missing = CString::new(dir.path().join("none.json").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { cud_classifier_load(missing.as_ptr(), &mut model) }, CudStatus::Io);
    assert!(model.is_null(), "output handle is nulled on failure");

    let garbage = dir.path().join("garbage.json");
    std::fs::write(&garbage, "{not json").unwrap();
    let garbage = CString::new(garbage.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { cud_classifier_load(garbage.as_ptr(), &mut model) }, CudStatus::Format);
    assert_eq!(unsafe { cud_classifier_load(ptr::null(), &mut model) }, CudStatus::NullPointer);
    assert_eq!(unsafe { cud_classifier_load(garbage.as_ptr(), ptr::null_mut()) }, CudStatus::NullPointer);
}
