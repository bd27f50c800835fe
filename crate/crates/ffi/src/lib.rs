//! C ABI over the fplab generator and evaluation toolkit.
//!
//! Every fallible function returns an [`FplabStatus`]; on failure the message
//! is available from [`fplab_last_error_message`] on the same thread. Objects
//! are opaque handles released with the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use candle_core::Device;
use fplab::analysis::{image_features, ks_one_sided, match_minutiae, MinutiaSet, MinutiaeConfig};
use fplab::domain::{GrayFingerprint, NoiseTriple};
use fplab::pipeline::{random_bundle, regenerate, PipelineBundle};
use fplab::Error;

/// Result codes. Library errors keep the codes used by the command-line tool.
#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FplabStatus {
    Ok = 0,
    Usage = 2,
    InvalidValue = 3,
    Shape = 4,
    Singular = 5,
    MissingFile = 10,
    HashMismatch = 11,
    DuplicateKey = 12,
    PathCollision = 13,
    ManifestParse = 14,
    Divergence = 20,
    Untrained = 21,
    Incompatible = 22,
    Insufficient = 23,
    Config = 30,
    Io = 40,
    Image = 41,
    Tensor = 50,
    Json = 51,
    NullPointer = 90,
    Utf8 = 91,
    BufferTooSmall = 92,
    Panic = 99,
}

impl FplabStatus {
    fn from_error(e: &Error) -> Self {
        Self::from_code(e.code()).unwrap_or(FplabStatus::Panic)
    }

    fn from_code(code: i32) -> Option<Self> {
        use FplabStatus::*;
        Some(match code {
            0 => Ok,
            2 => Usage,
            3 => InvalidValue,
            4 => Shape,
            5 => Singular,
            10 => MissingFile,
            11 => HashMismatch,
            12 => DuplicateKey,
            13 => PathCollision,
            14 => ManifestParse,
            20 => Divergence,
            21 => Untrained,
            22 => Incompatible,
            23 => Insufficient,
            30 => Config,
            40 => Io,
            41 => Image,
            50 => Tensor,
            51 => Json,
            90 => NullPointer,
            91 => Utf8,
            92 => BufferTooSmall,
            99 => Panic,
            _ => return None,
        })
    }

    fn name(self) -> &'static CStr {
        use FplabStatus::*;
        match self {
            Ok => c"ok",
            Usage => c"usage",
            InvalidValue => c"invalid_value",
            Shape => c"shape_mismatch",
            Singular => c"singular_system",
            MissingFile => c"missing_file",
            HashMismatch => c"hash_mismatch",
            DuplicateKey => c"duplicate_key",
            PathCollision => c"path_collision",
            ManifestParse => c"manifest_parse",
            Divergence => c"divergence",
            Untrained => c"untrained",
            Incompatible => c"incompatible_weights",
            Insufficient => c"insufficient_data",
            Config => c"config",
            Io => c"io",
            Image => c"image",
            Tensor => c"tensor",
            Json => c"json",
            NullPointer => c"null_pointer",
            Utf8 => c"utf8",
            BufferTooSmall => c"buffer_too_small",
            Panic => c"panic",
        }
    }
}

/// Trained or random generator bundle.
pub struct FplabBundle(PipelineBundle);

/// Grayscale fingerprint image.
pub struct FplabImage(GrayFingerprint);

/// Minutiae extracted from one image.
pub struct FplabMinutiae(MinutiaSet);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(FplabStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(FplabStatus::from_error(&e), e.to_string())
    }
}

fn set_last_error(msg: Option<String>) {
    LAST_ERROR.with(|c| {
        *c.borrow_mut() = msg.map(|m| CString::new(m.replace('\0', " ")).unwrap_or_default());
    });
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FplabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error(None);
            FplabStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(Some(msg));
            status
        }
        Err(_) => {
            set_last_error(Some("internal panic".into()));
            FplabStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(FplabStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(FplabStatus::Utf8, format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn put_value<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = value;
    Ok(())
}

/// Static name of a status code, or "unknown".
#[no_mangle]
pub extern "C" fn fplab_status_name(status: i32) -> *const c_char {
    FplabStatus::from_code(status).map_or(c"unknown", FplabStatus::name).as_ptr()
}

/// Message of the last failure on this thread, or NULL after a success.
/// The pointer stays valid until the next fplab call on the same thread.
#[no_mangle]
pub extern "C" fn fplab_last_error_message() -> *const c_char {
    LAST_ERROR.with(|c| c.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn fplab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a bundle directory holding the four trained components.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fplab_bundle_load(dir: *const c_char, out: *mut *mut FplabBundle) -> FplabStatus {
    guard(|| {
        let dir = path_arg(dir, "dir")?;
        let b = PipelineBundle::load(&dir, &Device::Cpu)?;
        put(out, FplabBundle(b))
    })
}

/// Untrained bundle with deterministic random weights.
///
/// # Safety
/// `out` must be a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fplab_bundle_random(seed: u64, out: *mut *mut FplabBundle) -> FplabStatus {
    guard(|| {
        let b = random_bundle(seed, &Device::Cpu)?;
        put(out, FplabBundle(b))
    })
}

/// # Safety
/// `bundle` must be NULL or a handle from this library that is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fplab_bundle_free(bundle: *mut FplabBundle) {
    if !bundle.is_null() {
        drop(Box::from_raw(bundle));
    }
}

/// Copies the bundle digest as a NUL-terminated hex string. `required`
/// receives the buffer size needed including the terminator.
///
/// # Safety
/// `buf` must hold `cap` writable bytes; `required` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn fplab_bundle_digest(
    bundle: *const FplabBundle,
    buf: *mut c_char,
    cap: usize,
    required: *mut usize,
) -> FplabStatus {
    guard(|| {
        let b = handle(bundle, "bundle")?;
        let bytes = b.0.digest.as_bytes();
        if !required.is_null() {
            *required = bytes.len() + 1;
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        if cap < bytes.len() + 1 {
            return Err(Failure(
                FplabStatus::BufferTooSmall,
                format!("digest needs {} bytes, buffer has {cap}", bytes.len() + 1),
            ));
        }
        std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), bytes.len());
        *buf.add(bytes.len()) = 0;
        Ok(())
    })
}

/// Generates one impression from explicit seeds for the three noise vectors.
///
/// # Safety
/// `bundle` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fplab_synthesize(
    bundle: *const FplabBundle,
    seed_id: u64,
    seed_distort: u64,
    seed_texture: u64,
    out: *mut *mut FplabImage,
) -> FplabStatus {
    guard(|| {
        let b = handle(bundle, "bundle")?;
        let img = regenerate(&b.0, &NoiseTriple::from_seeds(seed_id, seed_distort, seed_texture))?;
        put(out, FplabImage(img))
    })
}

/// Generates the impression `imp` of identity `id` exactly as a dataset
/// synthesised with `master_seed` would contain it.
///
/// # Safety
/// `bundle` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fplab_synthesize_dataset_print(
    bundle: *const FplabBundle,
    master_seed: u64,
    id: u64,
    imp: u64,
    out: *mut *mut FplabImage,
) -> FplabStatus {
    guard(|| {
        let b = handle(bundle, "bundle")?;
        let img = regenerate(&b.0, &NoiseTriple::for_dataset(master_seed, id, imp))?;
        put(out, FplabImage(img))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fplab_image_read_png(path: *const c_char, out: *mut *mut FplabImage) -> FplabStatus {
    guard(|| {
        let p = path_arg(path, "path")?;
        put(out, FplabImage(GrayFingerprint::read_png(&p)?))
    })
}

/// # Safety
/// `image` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fplab_image_write_png(image: *const FplabImage, path: *const c_char) -> FplabStatus {
    guard(|| {
        let img = handle(image, "image")?;
        let p = path_arg(path, "path")?;
        img.0.write_png(&p)?;
        Ok(())
    })
}

/// Width in pixels, or 0 for NULL.
///
/// # Safety
/// `image` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fplab_image_width(image: *const FplabImage) -> usize {
    image.as_ref().map_or(0, |i| i.0.width())
}

/// Height in pixels, or 0 for NULL.
///
/// # Safety
/// `image` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fplab_image_height(image: *const FplabImage) -> usize {
    image.as_ref().map_or(0, |i| i.0.height())
}

/// Resolution in pixels per inch, or 0 for NULL.
///
/// # Safety
/// `image` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fplab_image_ppi(image: *const FplabImage) -> u32 {
    image.as_ref().map_or(0, |i| i.0.ppi().value())
}

/// Copies row-major intensities in [0, 1] (ridges dark) into `buf`.
///
/// # Safety
/// `buf` must hold `cap` writable floats.
#[no_mangle]
pub unsafe extern "C" fn fplab_image_copy_pixels(image: *const FplabImage, buf: *mut f32, cap: usize) -> FplabStatus {
    guard(|| {
        let img = handle(image, "image")?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let px = img.0.pixels();
        if cap < px.len() {
            return Err(Failure(
                FplabStatus::BufferTooSmall,
                format!("image has {} pixels, buffer holds {cap}", px.len()),
            ));
        }
        std::ptr::copy_nonoverlapping(px.as_ptr(), buf, px.len());
        Ok(())
    })
}

/// # Safety
/// `image` must be NULL or a handle from this library that is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fplab_image_free(image: *mut FplabImage) {
    if !image.is_null() {
        drop(Box::from_raw(image));
    }
}

/// Extracts minutiae with the default settings.
///
/// # Safety
/// `image` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fplab_minutiae_extract(image: *const FplabImage, out: *mut *mut FplabMinutiae) -> FplabStatus {
    guard(|| {
        let img = handle(image, "image")?;
        let f = image_features(&img.0, &MinutiaeConfig::default());
        put(out, FplabMinutiae(f.minutiae))
    })
}

/// Number of minutiae, or 0 for NULL.
///
/// # Safety
/// `set` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fplab_minutiae_count(set: *const FplabMinutiae) -> usize {
    set.as_ref().map_or(0, |m| m.0.len())
}

/// # Safety
/// `set` must be NULL or a handle from this library that is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fplab_minutiae_free(set: *mut FplabMinutiae) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Similarity in [0, 1] between two minutiae sets.
///
/// # Safety
/// `a` and `b` must be live handles and `score` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fplab_match(a: *const FplabMinutiae, b: *const FplabMinutiae, score: *mut f64) -> FplabStatus {
    guard(|| {
        let (a, b) = (handle(a, "a")?, handle(b, "b")?);
        put_value(score, match_minutiae(&a.0, &b.0))
    })
}

/// One-sided two-sample KS statistic sup(F_a − F_b) and its asymptotic p-value.
///
/// # Safety
/// `a` must hold `n` and `b` `m` readable doubles; `d` and `p` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fplab_ks_one_sided(
    a: *const f64,
    n: usize,
    b: *const f64,
    m: usize,
    d: *mut f64,
    p: *mut f64,
) -> FplabStatus {
    guard(|| {
        if a.is_null() || b.is_null() {
            return Err(null("sample"));
        }
        let r = ks_one_sided(std::slice::from_raw_parts(a, n), std::slice::from_raw_parts(b, m))?;
        put_value(d, r.d)?;
        put_value(p, r.p)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_codes_follow_library_codes() {
        assert_eq!(FplabStatus::from_error(&Error::Usage(String::new())), FplabStatus::Usage);
        assert_eq!(
            FplabStatus::from_error(&Error::Untrained(String::new())) as i32,
            Error::Untrained(String::new()).code()
        );
    }

    #[test]
    fn names_match_error_kinds() {
        let e = Error::Insufficient(String::new());
        assert_eq!(FplabStatus::from_error(&e).name().to_str().unwrap(), e.kind());
    }
}
