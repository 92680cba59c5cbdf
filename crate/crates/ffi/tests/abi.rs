use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use petquant_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(pq_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}

fn cpath(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

/// 16×16×16 SUV volume with a hot 3×3×3 cube.
fn hot_cube() -> *mut PqVolume {
    let dims = [16usize, 16, 16];
    let spacing = [4.0f64; 3];
    let mut values = vec![1.0f64; 16 * 16 * 16];
    for z in 7..10 {
        for y in 7..10 {
            for x in 7..10 {
                values[x + 16 * (y + 16 * z)] = 8.0;
            }
        }
    }
    let mut vol = ptr::null_mut();
    let st = unsafe {
        pq_volume_new(
            dims.as_ptr(),
            spacing.as_ptr(),
            values.as_ptr(),
            values.len(),
            PqUnit::Suv,
            &mut vol,
        )
    };
    assert_eq!(st, PqStatus::Ok);
    vol
}

#[test]
fn volume_roundtrip_and_segmentation() {
    let dir = tempfile::tempdir().unwrap();
    let path = cpath(&dir.path().join("v.nii"));
    let vol = hot_cube();
    unsafe {
        assert_eq!(pq_volume_write(vol, path.as_ptr()), PqStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(pq_volume_read(path.as_ptr(), &mut back), PqStatus::Ok);
        let mut dims = [0usize; 3];
        let mut spacing = [0f64; 3];
        assert_eq!(
            pq_volume_geometry(back, dims.as_mut_ptr(), spacing.as_mut_ptr()),
            PqStatus::Ok
        );
        assert_eq!((dims, spacing), ([16, 16, 16], [4.0; 3]));
        let mut unit = PqUnit::Arbitrary;
        assert_eq!(pq_volume_unit(back, &mut unit), PqStatus::Ok);
        assert_eq!(unit, PqUnit::Suv);
        let mut data = ptr::null();
        let mut len = 0;
        assert_eq!(pq_volume_data(back, &mut data, &mut len), PqStatus::Ok);
        assert_eq!(
            std::slice::from_raw_parts(data, len)[8 + 16 * (8 + 16 * 8)],
            8.0
        );

        let mut mask = ptr::null_mut();
        assert_eq!(
            pq_segment(back, PqSegmentMethod::Contrast, 0.0, &mut mask),
            PqStatus::Ok
        );
        let mut n = 0;
        assert_eq!(pq_mask_voxel_count(mask, &mut n), PqStatus::Ok);
        assert_eq!(n, 27);

        let mut bio = PqBiomarkers::default();
        assert_eq!(pq_biomarkers_extract(back, mask, &mut bio), PqStatus::Ok);
        assert_eq!(bio.suv_max, 8.0);
        assert_eq!(bio.voxel_count, 27);
        assert!((bio.mtv_cm3 - 27.0 * 0.064).abs() < 1e-12);

        let mut cmp = PqComparison::default();
        assert_eq!(pq_compare(mask, mask, &mut cmp), PqStatus::Ok);
        assert_eq!(
            (cmp.dsc, cmp.iou, cmp.sensitivity, cmp.hd_mm),
            (1.0, 1.0, 1.0, 0.0)
        );

        let mpath = cpath(&dir.path().join("m.nii"));
        assert_eq!(pq_mask_write(mask, mpath.as_ptr()), PqStatus::Ok);
        let mut mback = ptr::null_mut();
        assert_eq!(pq_mask_read(mpath.as_ptr(), &mut mback), PqStatus::Ok);
        assert_eq!(pq_compare(mask, mback, &mut cmp), PqStatus::Ok);
        assert_eq!(cmp.dsc, 1.0);

        pq_mask_free(mback);
        pq_mask_free(mask);
        pq_volume_free(back);
        pq_volume_free(vol);
        pq_volume_free(ptr::null_mut());
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    unsafe {
        let mut vol = ptr::null_mut();
        let missing = CString::new("/nonexistent/x.nii").unwrap();
        assert_eq!(pq_volume_read(missing.as_ptr(), &mut vol), PqStatus::Io);
        assert!(last_error().contains("/nonexistent/x.nii"));
        assert!(vol.is_null());

        assert_eq!(pq_volume_read(ptr::null(), &mut vol), PqStatus::NullPointer);

        let cube = hot_cube();
        let mut suv = ptr::null_mut();
        assert_eq!(
            pq_volume_to_suv(cube, 180.0, 60.0, &mut suv),
            PqStatus::Unit
        );
        pq_volume_free(cube);

        let mut thr = 0.0;
        assert_eq!(
            pq_qc_derive_threshold(ptr::null(), 0, &mut thr),
            PqStatus::Derivation
        );
        let ratios = [0.25f64; 4];
        assert_eq!(
            pq_qc_derive_threshold(ratios.as_ptr(), 4, &mut thr),
            PqStatus::Ok
        );
        assert_eq!(thr, 4.0);
        assert_eq!(last_error(), "");
    }
}

#[test]
fn activity_to_suv() {
    let dims = [2usize, 1, 1];
    let spacing = [4.0f64; 3];
    let vals = [3.0f64, 6.0];
    unsafe {
        let mut v = ptr::null_mut();
        assert_eq!(
            pq_volume_new(
                dims.as_ptr(),
                spacing.as_ptr(),
                vals.as_ptr(),
                2,
                PqUnit::ActivityConcentration,
                &mut v
            ),
            PqStatus::Ok
        );
        let mut s = ptr::null_mut();
        assert_eq!(pq_volume_to_suv(v, 180.0, 60.0, &mut s), PqStatus::Ok);
        let mut data = ptr::null();
        let mut len = 0;
        pq_volume_data(s, &mut data, &mut len);
        assert_eq!(std::slice::from_raw_parts(data, len), &[1.0, 2.0]);
        pq_volume_free(s);
        pq_volume_free(v);
    }
}

#[test]
fn loss_and_stats() {
    let y = [1.0, 1.0, 1.0, 0.0, 0.0];
    let yhat = [1.0, 1.0, 0.0, 1.0, 0.0];
    let mut p = pq_loss_params_default();
    assert_eq!((p.alpha, p.beta, p.gamma, p.epsilon), (0.7, 0.3, 1.5, 0.7));
    p.epsilon = 1.0;
    p.alpha = 0.5;
    p.beta = 0.5;
    p.gamma = 1.0;
    p.smooth = 1e-15;
    let mut l = 0.0;
    unsafe {
        assert_eq!(
            pq_loss_combined(y.as_ptr(), yhat.as_ptr(), 5, p, &mut l),
            PqStatus::Ok
        );
        assert!((l - 1.0 / 3.0).abs() < 1e-12);
        let soft = [0.9, 0.8, 0.3, 0.6, 0.1];
        let mut g = [0.0; 5];
        assert_eq!(
            pq_loss_grad(
                y.as_ptr(),
                soft.as_ptr(),
                5,
                pq_loss_params_default(),
                g.as_mut_ptr()
            ),
            PqStatus::Ok
        );
        assert!(g[0] < 0.0 && g[3] > 0.0);
        let bad = [1.5, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(
            pq_loss_combined(y.as_ptr(), bad.as_ptr(), 5, p, &mut l),
            PqStatus::Data
        );

        let before = [0.0; 4];
        let after = [1.0, 2.0, 3.0, 4.0];
        let mut t = PqTTest::default();
        assert_eq!(
            pq_paired_ttest(before.as_ptr(), after.as_ptr(), 4, &mut t),
            PqStatus::Ok
        );
        assert_eq!(t.df, 3);
        assert!((t.t - 3.873).abs() < 1e-3 && (t.p - 0.0305).abs() < 5e-4);
        assert_eq!(
            pq_paired_ttest(before.as_ptr(), before.as_ptr(), 4, &mut t),
            PqStatus::Degenerate
        );

        let bl = PqBiomarkers {
            suv_max: 14.36,
            suv_mean: 8.0,
            mtv_cm3: 27.21,
            tlg: 40.69,
            voxel_count: 425,
        };
        let fu = PqBiomarkers {
            suv_max: 9.14,
            suv_mean: 5.0,
            mtv_cm3: 15.42,
            tlg: 21.46,
            voxel_count: 241,
        };
        let mut d = PqDelta::default();
        assert_eq!(pq_biomarkers_delta(&bl, &fu, &mut d), PqStatus::Ok);
        assert!((d.d_suv_max + 5.22).abs() < 1e-12);
        let zero = PqBiomarkers::default();
        assert_eq!(pq_biomarkers_delta(&zero, &fu, &mut d), PqStatus::Ok);
        assert!(d.mtv_ratio.is_nan());
    }
}

/// The generated header must be valid C and C++.
#[test]
fn header_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/petquant.h");
    let text = std::fs::read_to_string(&header).expect("header generated by build.rs");
    for sym in [
        "pq_volume_read",
        "pq_segment",
        "pq_loss_grad",
        "PQ_STATUS_OK",
        "typedef struct PqVolume PqVolume",
    ] {
        assert!(text.contains(sym), "{sym} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(&src, "#include \"petquant.h\"\nint main(void){ PqVolume *v = 0; return (int)pq_volume_read(0, &v) == PQ_STATUS_NULL_POINTER ? 0 : 1; }\n").unwrap();
    for compiler in ["cc", "c++"] {
        let lang = if compiler == "cc" { "c" } else { "c++" };
        match Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang, "-I"])
            .arg(header.parent().unwrap())
            .arg(&src)
            .output()
        {
            Ok(o) => assert!(
                o.status.success(),
                "{compiler}: {}",
                String::from_utf8_lossy(&o.stderr)
            ),
            Err(_) => eprintln!("{compiler} not available; skipping syntax check"),
        }
    }
}
