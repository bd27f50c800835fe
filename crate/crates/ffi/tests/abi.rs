use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use fplab_ffi::*;

fn last_error() -> Option<String> {
    let p = fplab_last_error_message();
    (!p.is_null()).then(|| unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned())
}

#[test]
fn null_arguments_are_reported_not_dereferenced() {
    unsafe {
        assert_eq!(fplab_bundle_random(1, ptr::null_mut()), FplabStatus::NullPointer);
        assert!(last_error().unwrap().contains("null"));
        let mut score = 0.0;
        assert_eq!(fplab_match(ptr::null(), ptr::null(), &mut score), FplabStatus::NullPointer);
        assert_eq!(fplab_image_width(ptr::null()), 0);
        fplab_image_free(ptr::null_mut());
        fplab_bundle_free(ptr::null_mut());
    }
}

#[test]
fn success_clears_the_last_error() {
    unsafe {
        let mut d = 0.0;
        let mut p = 0.0;
        assert_eq!(
            fplab_ks_one_sided(ptr::null(), 0, ptr::null(), 0, &mut d, &mut p),
            FplabStatus::NullPointer
        );
        assert!(last_error().is_some());
        let (a, b) = ([1.0, 2.0, 3.0], [2.0, 3.0, 4.0]);
        assert_eq!(fplab_ks_one_sided(a.as_ptr(), 3, b.as_ptr(), 3, &mut d, &mut p), FplabStatus::Ok);
        assert!((d - 1.0 / 3.0).abs() < 1e-12);
        assert!(last_error().is_none());
    }
}

#[test]
fn empty_samples_map_to_invalid_value() {
    unsafe {
        let a = [1.0];
        let (mut d, mut p) = (0.0, 0.0);
        assert_eq!(
            fplab_ks_one_sided(a.as_ptr(), 0, a.as_ptr(), 1, &mut d, &mut p),
            FplabStatus::InvalidValue
        );
    }
}

#[test]
fn status_names_are_stable() {
    let name = |s: i32| unsafe { CStr::from_ptr(fplab_status_name(s)) }.to_str().unwrap().to_string();
    assert_eq!(name(0), "ok");
    assert_eq!(name(21), "untrained");
    assert_eq!(name(12345), "unknown");
}

#[test]
fn small_buffers_are_rejected_with_the_needed_size() {
    unsafe {
        let mut b = ptr::null_mut();
        assert_eq!(fplab_bundle_random(3, &mut b), FplabStatus::Ok);
        let mut need = 0usize;
        let mut buf = [0 as std::ffi::c_char; 8];
        assert_eq!(
            fplab_bundle_digest(b, buf.as_mut_ptr(), buf.len(), &mut need),
            FplabStatus::BufferTooSmall
        );
        assert_eq!(need, 65);
        let mut buf = vec![0 as std::ffi::c_char; need];
        assert_eq!(fplab_bundle_digest(b, buf.as_mut_ptr(), buf.len(), &mut need), FplabStatus::Ok);
        assert_eq!(CStr::from_ptr(buf.as_ptr()).to_bytes().len(), 64);
        fplab_bundle_free(b);
    }
}

#[test]
fn images_round_trip_through_png() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("p.png").to_str().unwrap()).unwrap();
    unsafe {
        let mut b = ptr::null_mut();
        assert_eq!(fplab_bundle_random(5, &mut b), FplabStatus::Ok);
        let mut img = ptr::null_mut();
        assert_eq!(fplab_synthesize(b, 1, 2, 3, &mut img), FplabStatus::Ok);
        assert_eq!(fplab_image_write_png(img, path.as_ptr()), FplabStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(fplab_image_read_png(path.as_ptr(), &mut back), FplabStatus::Ok);
        let n = fplab_image_width(img) * fplab_image_height(img);
        let (mut x, mut y) = (vec![0f32; n], vec![0f32; n]);
        assert_eq!(fplab_image_copy_pixels(img, x.as_mut_ptr(), n), FplabStatus::Ok);
        assert_eq!(fplab_image_copy_pixels(back, y.as_mut_ptr(), n), FplabStatus::Ok);
        assert!(x.iter().zip(&y).all(|(a, b)| (a - b).abs() <= 0.5 / 255.0 + 1e-6));
        fplab_image_free(back);
        fplab_image_free(img);
        fplab_bundle_free(b);
    }
}

fn library_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(|p| p.parent()).unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_the_header() {
    let lib_dir = library_dir();
    let has_lib = ["libfplab_ffi.so", "libfplab_ffi.dylib", "libfplab_ffi.a"]
        .iter()
        .any(|n| lib_dir.join(n).exists());
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if !has_lib || Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler or no built library in {}", lib_dir.display());
        return;
    }
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let out = tempfile::tempdir().unwrap();
    let exe = out.path().join("smoke");
    let status = Command::new(&cc)
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-std=c11")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg("-L")
        .arg(&lib_dir)
        .arg(format!("-Wl,-rpath,{}", lib_dir.display()))
        .arg("-lfplab_ffi")
        .arg("-lm")
        .arg("-o")
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let run = Command::new(&exe).output().unwrap();
    assert!(
        run.status.success(),
        "smoke program failed: {}",
        String::from_utf8_lossy(&run.stderr)
    );
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok "));
}
