use std::ffi::{CStr, CString};
use std::ptr;

use wpsgd_ffi::*;

fn last_error() -> String {
    let p = wpsgd_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn generated() -> (*mut WpsgdDataset, *mut WpsgdDataset) {
    let (mut tr, mut te) = (ptr::null_mut(), ptr::null_mut());
    let s = unsafe { wpsgd_dataset_generate(400, 50, 40, 3, 6, 9, true, &mut tr, &mut te) };
    assert_eq!(s, WpsgdStatus::Ok);
    (tr, te)
}

fn params(algorithm: WpsgdAlgorithm, delays: &[u64]) -> WpsgdTrainParams {
    WpsgdTrainParams {
        algorithm,
        lambda: 0.01,
        eta: 0.05,
        iterations: 300,
        seed: 2,
        init_value: 0.5,
        delays: delays.as_ptr(),
        k: delays.len(),
        shares: ptr::null(),
        partition_seed: 4,
        rate: 0.0,
        span: 0,
        threads: 2,
        max_delay: 0,
        max_delay_root: false,
    }
}

#[test]
fn weights_match_the_hand_example() {
    let mut w = [0.0; 3];
    let s = unsafe { wpsgd_compute_weights([0u64, 1, 2].as_ptr(), 3, 0.5, w.as_mut_ptr()) };
    assert_eq!(s, WpsgdStatus::Ok);
    for (a, b) in w.iter().zip([4.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0]) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!(wpsgd_last_error().is_null());
}

#[test]
fn errors_carry_codes_and_messages() {
    let mut w = [0.0; 2];
    let s = unsafe { wpsgd_compute_weights([3u64, 1].as_ptr(), 2, 0.5, w.as_mut_ptr()) };
    assert_eq!(s, WpsgdStatus::InvalidArgument);
    assert!(!last_error().is_empty());

    let s = unsafe { wpsgd_compute_weights(ptr::null(), 2, 0.5, w.as_mut_ptr()) };
    assert_eq!(s, WpsgdStatus::NullPointer);

    let mut out = ptr::null_mut();
    let missing = CString::new("/nonexistent/data.txt").unwrap();
    assert_eq!(unsafe { wpsgd_dataset_read(missing.as_ptr(), 0, &mut out) }, WpsgdStatus::Io);
    assert!(out.is_null());

    let mut ok = true;
    assert_eq!(unsafe { wpsgd_step_size_valid(1.0, 0.5, 1.0, 1.0, 1, &mut ok) }, WpsgdStatus::Ok);
    assert!(!ok);
    assert_eq!(unsafe { wpsgd_step_size_valid(1.0, 0.5, 1.0, 1.0, 0, &mut ok) }, WpsgdStatus::Config);
}

#[test]
fn corollary_predicate_is_exposed() {
    let mut holds = false;
    assert_eq!(unsafe { wpsgd_corollary4_holds([0u64; 4].as_ptr(), 4, 1.0, &mut holds) }, WpsgdStatus::Ok);
    assert!(holds);
    assert_eq!(unsafe { wpsgd_corollary4_holds([0u64].as_ptr(), 1, 1.0, &mut holds) }, WpsgdStatus::Ok);
    assert!(!holds);
}

#[test]
fn zero_delay_wpsgd_equals_simuparallel_across_the_boundary() {
    let (tr, te) = generated();
    let delays = [0u64; 4];
    let mut a = ptr::null_mut();
    let mut b = ptr::null_mut();
    unsafe {
        assert_eq!(wpsgd_train(tr, &params(WpsgdAlgorithm::Wpsgd, &delays), &mut a), WpsgdStatus::Ok);
        assert_eq!(wpsgd_train(tr, &params(WpsgdAlgorithm::SimuParallel, &delays), &mut b), WpsgdStatus::Ok);
        let dim = wpsgd_model_dim(a);
        assert_eq!(dim, wpsgd_dataset_dim(tr));
        assert_eq!(wpsgd_model_iterations(a), 300);
        let (mut wa, mut wb) = (vec![0.0; dim], vec![0.0; dim]);
        assert_eq!(wpsgd_model_weights(a, wa.as_mut_ptr(), dim), WpsgdStatus::Ok);
        assert_eq!(wpsgd_model_weights(b, wb.as_mut_ptr(), dim), WpsgdStatus::Ok);
        assert_eq!(wa, wb);
        assert_eq!(wpsgd_model_weights(a, wa.as_mut_ptr(), dim - 1), WpsgdStatus::InvalidArgument);

        let (mut obj, mut err) = (0.0, 0.0);
        assert_eq!(wpsgd_model_evaluate(a, te, 0.01, &mut obj, &mut err), WpsgdStatus::Ok);
        assert!(obj.is_finite() && (0.0..=1.0).contains(&err));
        wpsgd_model_free(a);
        wpsgd_model_free(b);
        wpsgd_dataset_free(tr);
        wpsgd_dataset_free(te);
    }
}

#[test]
fn simuparallel_rejects_delays() {
    let (tr, te) = generated();
    let mut m = ptr::null_mut();
    let s = unsafe { wpsgd_train(tr, &params(WpsgdAlgorithm::SimuParallel, &[0, 10]), &mut m) };
    assert_eq!(s, WpsgdStatus::InvalidArgument);
    assert!(m.is_null());
    assert!(last_error().contains("delay"));
    unsafe {
        wpsgd_dataset_free(tr);
        wpsgd_dataset_free(te);
    }
}

#[test]
fn model_files_round_trip() {
    let (tr, te) = generated();
    let dir = std::env::temp_dir().join(format!("wpsgd-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = CString::new(dir.join("m.txt").to_str().unwrap()).unwrap();
    let mut m = ptr::null_mut();
    let mut back = ptr::null_mut();
    unsafe {
        assert_eq!(wpsgd_train(tr, &params(WpsgdAlgorithm::Sequential, &[]), &mut m), WpsgdStatus::Ok);
        assert_eq!(wpsgd_model_write(m, path.as_ptr()), WpsgdStatus::Ok);
        assert_eq!(wpsgd_model_read(path.as_ptr(), &mut back), WpsgdStatus::Ok);
        let dim = wpsgd_model_dim(m);
        let (mut a, mut b) = (vec![0.0; dim], vec![0.0; dim]);
        wpsgd_model_weights(m, a.as_mut_ptr(), dim);
        wpsgd_model_weights(back, b.as_mut_ptr(), dim);
        assert_eq!(a, b);
        wpsgd_model_free(m);
        wpsgd_model_free(back);
        wpsgd_dataset_free(tr);
        wpsgd_dataset_free(te);
    }
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn free_accepts_null() {
    unsafe {
        wpsgd_model_free(ptr::null_mut());
        wpsgd_dataset_free(ptr::null_mut());
    }
    assert_eq!(unsafe { wpsgd_dataset_len(ptr::null()) }, 0);
}
