use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use boat_ffi::*;

const SMALL: &str = r#"{"input_height":32,"input_width":32,"embed_dim":8,"depths":[1,1,1,1],
    "num_heads":[2,2,4,4],"window_size":4,"num_classes":6,"target_cluster_size":8,"overlap":2}"#;

fn last_error() -> String {
    let p = boat_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn tensor_f32(shape: &[usize], data: &[f32]) -> *mut BoatTensor {
    let mut t = ptr::null_mut();
    let s = unsafe { boat_tensor_new_f32(shape.as_ptr(), shape.len(), data.as_ptr(), &mut t) };
    assert_eq!(s, BoatStatus::Ok);
    t
}

#[test]
fn tensor_round_trip_through_file() {
    let data: Vec<f32> = (0..6).map(|i| i as f32 * 0.5 - 1.0).collect();
    let t = tensor_f32(&[2, 3], &data);
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("t.boatt").to_str().unwrap()).unwrap();
    unsafe {
        assert_eq!(boat_tensor_save(t, path.as_ptr()), BoatStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(boat_tensor_load(path.as_ptr(), &mut back), BoatStatus::Ok);
        let (mut ndim, mut shape) = (0usize, [0usize; 4]);
        assert_eq!(boat_tensor_shape(back, &mut ndim, shape.as_mut_ptr(), 4), BoatStatus::Ok);
        assert_eq!((ndim, &shape[..2]), (2, &[2, 3][..]));
        let mut dtype = 9u8;
        assert_eq!(boat_tensor_dtype(back, &mut dtype), BoatStatus::Ok);
        assert_eq!(dtype, 0);
        let mut out = [0f32; 6];
        assert_eq!(boat_tensor_read_f32(back, out.as_mut_ptr(), 6), BoatStatus::Ok);
        assert_eq!(out.to_vec(), data);
        assert_eq!(boat_tensor_read_f32(back, out.as_mut_ptr(), 5), BoatStatus::InvalidArgument);
        boat_tensor_free(back);
        boat_tensor_free(t);
    }
}

#[test]
fn errors_are_reported() {
    unsafe {
        let mut t = ptr::null_mut();
        let shape = [2usize, 2];
        let nan = [0.0f32, f32::NAN, 1.0, 2.0];
        assert_eq!(boat_tensor_new_f32(shape.as_ptr(), 2, nan.as_ptr(), &mut t), BoatStatus::Numeric);
        assert!(t.is_null());
        assert!(last_error().contains("non-finite"));
        assert_eq!(boat_tensor_new_f32(ptr::null(), 2, nan.as_ptr(), &mut t), BoatStatus::NullPointer);

        let missing = CString::new("/nonexistent/x.boatt").unwrap();
        assert_eq!(boat_tensor_load(missing.as_ptr(), &mut t), BoatStatus::Io);
        assert!(last_error().contains("/nonexistent/x.boatt"));

        let tokens = tensor_f32(&[6, 2], &[1.0; 12]);
        let mut a = ptr::null_mut();
        assert_eq!(boat_cluster(tokens, 2, 5, 0, &mut a), BoatStatus::Shape);
        assert!(last_error().contains("divisib"));
        boat_tensor_free(tokens);

        let bad = CString::new(r#"{"input_height":1}"#).unwrap();
        let mut n = 0u64;
        assert_eq!(boat_count_params(bad.as_ptr(), &mut n), BoatStatus::Config);
    }
}

#[test]
fn clustering() {
    let data: Vec<f32> = (0..64 * 3).map(|i| ((i * 37 % 101) as f32).sin()).collect();
    let t = tensor_f32(&[64, 3], &data);
    unsafe {
        let mut a = ptr::null_mut();
        assert_eq!(boat_cluster(t, 3, 5, 2, &mut a), BoatStatus::Ok);
        let mut k = 0;
        assert_eq!(boat_assignment_num_clusters(a, &mut k), BoatStatus::Ok);
        assert_eq!(k, 8);
        let mut size = 0;
        let mut members = vec![0usize; 16];
        assert_eq!(boat_assignment_cluster(a, 0, &mut size, members.as_mut_ptr(), 16), BoatStatus::Ok);
        assert_eq!(size, 10);
        assert!(members[..10].iter().all(|&m| m < 64));
        assert_eq!(boat_assignment_cluster(a, 8, &mut size, ptr::null_mut(), 0), BoatStatus::InvalidArgument);
        boat_assignment_free(a);
        boat_tensor_free(t);
    }
}

#[test]
fn model_forward_and_accounting() {
    let cfg = CString::new(SMALL).unwrap();
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(boat_model_new(cfg.as_ptr(), 5, &mut m), BoatStatus::Ok);
        let img: Vec<f32> = (0..3 * 32 * 32).map(|i| ((i % 17) as f32 - 8.0) / 8.0).collect();
        let x = tensor_f32(&[3, 32, 32], &img);
        let mut logits = ptr::null_mut();
        assert_eq!(boat_model_forward(m, x, &mut logits), BoatStatus::Ok);
        let mut ndim = 0;
        let mut shape = [0usize; 1];
        assert_eq!(boat_tensor_shape(logits, &mut ndim, shape.as_mut_ptr(), 1), BoatStatus::Ok);
        assert_eq!(shape[0], 6);

        let mut params = 0u64;
        assert_eq!(boat_count_params(cfg.as_ptr(), &mut params), BoatStatus::Ok);
        let (mut macs, mut flops) = (0u64, 0u64);
        assert_eq!(boat_estimate_flops(cfg.as_ptr(), &mut macs, &mut flops), BoatStatus::Ok);
        assert_eq!(flops, 2 * macs);

        // Wrong-length weights are rejected; right-length zeros run.
        let w = vec![0f32; params as usize];
        let wt = tensor_f32(&[w.len()], &w);
        let short = tensor_f32(&[10], &w[..10]);
        let mut m2 = ptr::null_mut();
        assert_eq!(boat_model_from_weights(cfg.as_ptr(), short, &mut m2), BoatStatus::Config);
        assert_eq!(boat_model_from_weights(cfg.as_ptr(), wt, &mut m2), BoatStatus::Ok);
        let mut l2 = ptr::null_mut();
        assert_eq!(boat_model_forward(m2, x, &mut l2), BoatStatus::Ok);

        let wrong = tensor_f32(&[3, 16, 16], &img[..768]);
        let mut l3 = ptr::null_mut();
        assert_eq!(boat_model_forward(m, wrong, &mut l3), BoatStatus::Shape);

        for t in [x, logits, wt, short, l2, wrong] {
            boat_tensor_free(t);
        }
        boat_model_free(m);
        boat_model_free(m2);
    }
}

#[test]
fn header_is_valid_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/boat.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["boat_tensor_new_f32", "boat_cluster", "boat_model_forward", "BOAT_STATUS_OK", "boat_last_error"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let status = Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .status()
        .expect("a C compiler is required to check the header");
    assert!(status.success());
}
