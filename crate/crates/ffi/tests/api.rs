use std::ffi::{CStr, CString};
use std::ptr;

use corrsurf::dsfm::{fit_factor_model, Bandwidth, FitOptions};
use corrsurf::synth::{factor_panel, SynthConfig};
use corrsurf_ffi::*;

fn last_error() -> String {
    let p = corrsurf_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn price_and_invert() {
    let divs_t = [0.3];
    let divs_a = [1.5];
    let mut price = 0.0;
    let s = unsafe {
        corrsurf_option_price(
            100.0,
            95.0,
            0.03,
            0.75,
            0.4,
            CorrsurfRight::Put,
            CorrsurfStyle::American,
            300,
            divs_t.as_ptr(),
            divs_a.as_ptr(),
            1,
            &mut price,
        )
    };
    assert_eq!(s, CorrsurfStatus::Ok);
    assert!(corrsurf_last_error().is_null());
    let mut vol = 0.0;
    let s = unsafe {
        corrsurf_implied_vol(
            price,
            100.0,
            95.0,
            0.03,
            0.75,
            CorrsurfRight::Put,
            CorrsurfStyle::American,
            300,
            divs_t.as_ptr(),
            divs_a.as_ptr(),
            1,
            &mut vol,
        )
    };
    assert_eq!(s, CorrsurfStatus::Ok);
    assert!((vol - 0.4).abs() < 1e-4);
}

#[test]
fn errors_are_reported() {
    let mut out = 0.0;
    let s = unsafe {
        corrsurf_implied_vol(
            1e6,
            100.0,
            100.0,
            0.0,
            1.0,
            CorrsurfRight::Call,
            CorrsurfStyle::European,
            0,
            ptr::null(),
            ptr::null(),
            0,
            &mut out,
        )
    };
    assert_eq!(s, CorrsurfStatus::Unattainable);
    assert!(last_error().contains("unattainable"));

    assert_eq!(unsafe { corrsurf_fisher_z(1.0, &mut out) }, CorrsurfStatus::Domain);
    assert_eq!(unsafe { corrsurf_fisher_z(0.5, ptr::null_mut()) }, CorrsurfStatus::NullPointer);
    let s = unsafe { corrsurf_basket_variance(ptr::null(), ptr::null(), 2, 0.5, &mut out) };
    assert_eq!(s, CorrsurfStatus::NullPointer);
    assert!(last_error().contains("vols"));
}

#[test]
fn equicorrelation_round_trip() {
    let vols = [0.2, 0.3, 0.25];
    let w = [0.5, 0.3, 0.2];
    let mut var = 0.0;
    assert_eq!(
        unsafe { corrsurf_basket_variance(vols.as_ptr(), w.as_ptr(), 3, 0.37, &mut var) },
        CorrsurfStatus::Ok
    );
    let mut rho = 0.0;
    assert_eq!(
        unsafe { corrsurf_equicorrelation(var, vols.as_ptr(), w.as_ptr(), 3, &mut rho) },
        CorrsurfStatus::Ok
    );
    assert!((rho - 0.37).abs() < 1e-12);

    let mut z = 0.0;
    let mut back = 0.0;
    unsafe {
        corrsurf_fisher_z(-0.6, &mut z);
        corrsurf_fisher_z_inv(z, &mut back);
    }
    assert!((back + 0.6).abs() < 1e-14);
}

#[test]
fn model_handle() {
    let cfg = SynthConfig {
        n_days: 40,
        obs_per_day: 60,
        noise_sd: 0.02,
        ..Default::default()
    };
    let (panel, _) = factor_panel(&cfg).unwrap();
    let opts = FitOptions {
        grid: [9, 9],
        h_mu: Bandwidth::new(0.3, 0.3).unwrap(),
        ..Default::default()
    };
    let model = fit_factor_model(&panel, &opts).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    model.write(std::fs::File::create(&path).unwrap()).unwrap();

    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    let mut handle: *mut CorrsurfModel = ptr::null_mut();
    assert_eq!(unsafe { corrsurf_model_load(c_path.as_ptr(), &mut handle) }, CorrsurfStatus::Ok);
    assert!(!handle.is_null());

    let mut l = 0usize;
    assert_eq!(unsafe { corrsurf_model_factor_count(handle, &mut l) }, CorrsurfStatus::Ok);
    assert_eq!(l, model.l());

    let mut scores = vec![0.0; l];
    let mut n = 0usize;
    assert_eq!(
        unsafe { corrsurf_model_last_scores(handle, scores.as_mut_ptr(), l, &mut n) },
        CorrsurfStatus::Ok
    );
    assert_eq!(n, l);
    assert_eq!(&scores, model.scores.last().unwrap());

    let (kappa, tau) = (1.0, 0.3);
    let mut rho = 0.0;
    assert_eq!(
        unsafe { corrsurf_model_evaluate(handle, scores.as_ptr(), l, kappa, tau, &mut rho) },
        CorrsurfStatus::Ok
    );
    let expected = corrsurf::dsfm::evaluate_surface(&model, &scores, kappa, tau).unwrap();
    assert_eq!(rho, expected);

    let s = unsafe { corrsurf_model_evaluate(handle, scores.as_ptr(), l + 1, kappa, tau, &mut rho) };
    assert_ne!(s, CorrsurfStatus::Ok);
    unsafe { corrsurf_model_free(handle) };
    unsafe { corrsurf_model_free(ptr::null_mut()) };

    let missing = CString::new(dir.path().join("nope.json").to_str().unwrap()).unwrap();
    let mut h2: *mut CorrsurfModel = ptr::null_mut();
    assert_eq!(unsafe { corrsurf_model_load(missing.as_ptr(), &mut h2) }, CorrsurfStatus::Io);
    assert!(h2.is_null());
}
