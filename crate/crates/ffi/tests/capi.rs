use std::ffi::{CStr, CString};
use std::ptr;

use dgssm::scan::{scan_sequential, ScanDirection, ScanParams};
use dgssm::Tensor;
use dgssm_ffi::*;

fn last_error() -> String {
    let p = dgssm_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(dgssm_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn metrics_of_perfect_map() {
    let gt: Vec<f64> = (0..64).map(|i| if i % 8 < 3 { 1.0 } else { 0.0 }).collect();
    let mut s = DgssmScores::default();
    let st = unsafe { dgssm_metrics(gt.as_ptr(), gt.as_ptr(), 8, 8, &mut s) };
    assert_eq!(st, DgssmStatus::Ok);
    assert!((s.s_measure - 1.0).abs() < 1e-12);
    assert!((s.f_measure_mean - 1.0).abs() < 1e-12);
    assert!((s.e_measure_mean - 1.0).abs() < 1e-12);
    assert_eq!(s.mae, 0.0);
}

#[test]
fn errors_set_status_and_message() {
    let gt = [0.0, 1.0, 1.0, 0.0];
    let bad = [0.0, 2.0, 1.0, 0.0];
    let mut s = DgssmScores::default();
    assert_eq!(unsafe { dgssm_metrics(bad.as_ptr(), gt.as_ptr(), 2, 2, &mut s) }, DgssmStatus::InvalidArgument);
    assert!(!last_error().is_empty());
    assert_eq!(unsafe { dgssm_metrics(ptr::null(), gt.as_ptr(), 2, 2, &mut s) }, DgssmStatus::NullPointer);
    assert!(last_error().contains("pred"));
    assert_eq!(unsafe { dgssm_metrics(gt.as_ptr(), gt.as_ptr(), 0, 2, &mut s) }, DgssmStatus::InvalidArgument);

    let missing = CString::new("/nonexistent/dir/model.ckpt").unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { dgssm_model_load(missing.as_ptr(), &mut m) }, DgssmStatus::Io);
    assert!(m.is_null());
}

#[test]
fn scan_matches_the_library() {
    let (din, h, w, dh, dout) = (2, 3, 5, 3, 2);
    let x: Vec<f64> = (0..din * h * w).map(|i| ((i * 7) % 11) as f64 / 11.0 - 0.5).collect();
    let a = vec![0.5, -0.3, 0.9];
    let b: Vec<f64> = (0..dh * din).map(|i| 0.1 * i as f64 - 0.2).collect();
    let c: Vec<f64> = (0..dout * dh).map(|i| 0.3 - 0.05 * i as f64).collect();
    let params = ScanParams::new(
        Tensor::new(&[dh], a.clone()).unwrap(),
        Tensor::new(&[dh, din], b.clone()).unwrap(),
        Tensor::new(&[dout, dh], c.clone()).unwrap(),
    )
    .unwrap();
    let xt = Tensor::new(&[din, h, w], x.clone()).unwrap();
    for (dir, cdir) in [
        (ScanDirection::LeftToRight, DgssmDirection::LeftToRight),
        (ScanDirection::RightToLeft, DgssmDirection::RightToLeft),
        (ScanDirection::TopToBottom, DgssmDirection::TopToBottom),
        (ScanDirection::BottomToTop, DgssmDirection::BottomToTop),
    ] {
        let want = scan_sequential(&xt, &params, dir).unwrap();
        for parallel in [false, true] {
            let mut out = vec![0.0; dout * h * w];
            let st = unsafe {
                dgssm_scan(x.as_ptr(), din, h, w, a.as_ptr(), b.as_ptr(), c.as_ptr(), dh, dout, cdir, parallel, out.as_mut_ptr())
            };
            assert_eq!(st, DgssmStatus::Ok);
            let err = out.iter().zip(want.data()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            assert!(err < 1e-12, "{dir} parallel={parallel}: {err}");
        }
    }
}

#[test]
fn model_lifecycle() {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { dgssm_model_new(7, &mut m) }, DgssmStatus::Ok);
    assert!(!m.is_null());

    let mut count = 0;
    assert_eq!(unsafe { dgssm_model_param_count(m, &mut count) }, DgssmStatus::Ok);
    assert!(count > 0 && count < 5_000_000);

    let (h, w) = (32, 32);
    let rgb: Vec<f32> = (0..3 * h * w).map(|i| ((i * 13) % 255) as f32 / 255.0).collect();
    let aux: Vec<f32> = (0..h * w).map(|i| (i % w) as f32 / w as f32).collect();
    let mut map = vec![-1.0f32; h * w];
    let st = unsafe { dgssm_model_predict(m, rgb.as_ptr(), aux.as_ptr(), h, w, 3, map.as_mut_ptr()) };
    assert_eq!(st, DgssmStatus::Ok, "{}", last_error());
    assert!(map.iter().all(|&v| (0.0..=1.0).contains(&v)));

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.ckpt").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { dgssm_model_save(m, path.as_ptr()) }, DgssmStatus::Ok);
    let mut m2 = ptr::null_mut();
    assert_eq!(unsafe { dgssm_model_load(path.as_ptr(), &mut m2) }, DgssmStatus::Ok);
    let mut map2 = vec![0.0f32; h * w];
    let st = unsafe { dgssm_model_predict(m2, rgb.as_ptr(), aux.as_ptr(), h, w, 3, map2.as_mut_ptr()) };
    assert_eq!(st, DgssmStatus::Ok);
    assert_eq!(map, map2);

    let st = unsafe { dgssm_model_predict(m, rgb.as_ptr(), ptr::null(), 30, 30, 3, map.as_mut_ptr()) };
    assert_eq!(st, DgssmStatus::InvalidArgument);

    unsafe {
        dgssm_model_free(m);
        dgssm_model_free(m2);
        dgssm_model_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/dgssm.h")).unwrap();
    for name in [
        "dgssm_version",
        "dgssm_last_error",
        "dgssm_model_new",
        "dgssm_model_load",
        "dgssm_model_save",
        "dgssm_model_param_count",
        "dgssm_model_predict",
        "dgssm_model_free",
        "dgssm_metrics",
        "dgssm_scan",
        "DgssmStatus",
        "DgssmScores",
        "typedef struct DgssmModel DgssmModel",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
