//! C ABI over the muspy core.
//!
//! Every function returns a [`MuspyStatus`]; on failure a message is kept
//! per thread and can be read with [`muspy_last_error_message`]. Objects
//! handed out (music handles, strings, byte and token buffers) must be
//! released with the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use muspy::formats::{self, FileFormat};
use muspy::metrics::{self, MetricConfig};
use muspy::representations::{self as repr, EventConfig, OverlapPolicy};
use muspy::{midi, serialization, Error, Music};

/// Result of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MuspyStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Schema = 5,
    Validation = 6,
    Format = 7,
    Unsupported = 8,
    Domain = 9,
    Range = 10,
    Polyphony = 11,
    Other = 12,
    Panic = 13,
}

/// Input/output file format; `Auto` infers it from the file extension.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MuspyFormat {
    Auto = 0,
    Midi = 1,
    Musicxml = 2,
    Mxl = 3,
    Abc = 4,
    Json = 5,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MuspyEventPreset {
    /// Velocity tokens, no end-of-sequence token (388 ids).
    Default = 0,
    /// No velocity, end-of-sequence token (357 ids).
    Experiment = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MuspyOverlapPolicy {
    Error = 0,
    KeepHighest = 1,
    SkipNew = 2,
}

/// Opaque music handle.
pub struct MuspyMusic {
    inner: Music,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("no interior NUL");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> MuspyStatus {
    match err {
        Error::InvalidArgument(_) => MuspyStatus::InvalidArgument,
        Error::Io { .. } => MuspyStatus::Io,
        Error::Parse { .. } | Error::AbcParse { .. } | Error::Truncated(_) | Error::MalformedVlq(_) => {
            MuspyStatus::Parse
        }
        Error::Schema(_) | Error::Version { .. } => MuspyStatus::Schema,
        Error::Validation(_) => MuspyStatus::Validation,
        Error::Format(_) | Error::Archive(_) => MuspyStatus::Format,
        Error::Unsupported(_) => MuspyStatus::Unsupported,
        Error::Domain(_) => MuspyStatus::Domain,
        Error::Range(_) | Error::ChannelExhaustion(_) => MuspyStatus::Range,
        Error::Polyphony { .. } => MuspyStatus::Polyphony,
        _ => MuspyStatus::Other,
    }
}

struct Fail(MuspyStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), format!("{}: {e}", e.kind()))
    }
}

fn null(what: &str) -> Fail {
    Fail(MuspyStatus::NullArgument, format!("{what} is null"))
}

/// Runs `f`, recording failures and turning panics into `Panic`.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MuspyStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            MuspyStatus::Ok
        }
        Ok(Err(Fail(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {msg}"));
            MuspyStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(MuspyStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn music<'a>(p: *const MuspyMusic) -> Result<&'a Music, Fail> {
    p.as_ref().map(|m| &m.inner).ok_or_else(|| null("music"))
}

unsafe fn put<T>(out: *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(value);
    Ok(())
}

fn file_format(f: MuspyFormat) -> Option<FileFormat> {
    match f {
        MuspyFormat::Auto => None,
        MuspyFormat::Midi => Some(FileFormat::Midi),
        MuspyFormat::Musicxml => Some(FileFormat::Musicxml),
        MuspyFormat::Mxl => Some(FileFormat::Mxl),
        MuspyFormat::Abc => Some(FileFormat::Abc),
        MuspyFormat::Json => Some(FileFormat::Muspy),
    }
}

fn pick(mut all: Vec<Music>, tune: usize) -> Result<Box<MuspyMusic>, Fail> {
    if tune >= all.len() {
        return Err(Fail(
            MuspyStatus::InvalidArgument,
            format!("tune {tune} out of range; the input holds {}", all.len()),
        ));
    }
    Ok(Box::new(MuspyMusic { inner: all.swap_remove(tune) }))
}

fn into_c_string(s: String) -> Result<*mut c_char, Fail> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Fail(MuspyStatus::Other, "output contains a NUL byte".into()))
}

/// Leaks a vector as (pointer, length); release with the matching free.
fn leak<T>(v: Vec<T>) -> (*mut T, usize) {
    let boxed = v.into_boxed_slice();
    let len = boxed.len();
    (Box::into_raw(boxed) as *mut T, len)
}

unsafe fn unleak<T>(p: *mut T, len: usize) {
    if !p.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(p, len)));
    }
}

/// Message of the last failed call on this thread, or NULL after a
/// successful call. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn muspy_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn muspy_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Reads song number `tune` (0 for single-song formats) from a file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn muspy_read_file(
    path: *const c_char,
    format: MuspyFormat,
    tune: usize,
    out: *mut *mut MuspyMusic,
) -> MuspyStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let path = text(path, "path")?;
        let all = formats::read_file(Path::new(path), file_format(format))?;
        put(out, Box::into_raw(pick(all, tune)?))
    })
}

/// Reads song number `tune` from an in-memory file. `format` must not be
/// `Auto`.
///
/// # Safety
/// `data` must point to `len` readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn muspy_read_bytes(
    data: *const u8,
    len: usize,
    format: MuspyFormat,
    tune: usize,
    out: *mut *mut MuspyMusic,
) -> MuspyStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("output pointer"));
        }
        if data.is_null() && len > 0 {
            return Err(null("data"));
        }
        let bytes = if len == 0 { &[][..] } else { std::slice::from_raw_parts(data, len) };
        let format = file_format(format)
            .ok_or_else(|| Fail(MuspyStatus::InvalidArgument, "format must be given for bytes".into()))?;
        let all = formats::read_bytes(bytes, format)?;
        put(out, Box::into_raw(pick(all, tune)?))
    })
}

/// Parses a canonical JSON document.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn muspy_load_json(json: *const c_char, out: *mut *mut MuspyMusic) -> MuspyStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let m = serialization::load(text(json, "json")?)?;
        put(out, Box::into_raw(Box::new(MuspyMusic { inner: m })))
    })
}

/// Serializes to a canonical JSON document; free it with
/// `muspy_string_free`.
///
/// # Safety
/// `music` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn muspy_save_json(music_: *const MuspyMusic, out: *mut *mut c_char) -> MuspyStatus {
    guard(|| {
        let s = serialization::save(music(music_)?)?;
        put(out, into_c_string(s)?)
    })
}

/// Writes to a file; the format is inferred from the extension for `Auto`.
///
/// # Safety
/// `music` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn muspy_write_file(
    music_: *const MuspyMusic,
    path: *const c_char,
    format: MuspyFormat,
) -> MuspyStatus {
    guard(|| {
        let m = music(music_)?;
        formats::write_file(m, Path::new(text(path, "path")?), file_format(format))?;
        Ok(())
    })
}

/// Encodes as a Standard MIDI File; free with `muspy_bytes_free`.
///
/// # Safety
/// `music` must be a live handle; `out_data` and `out_len` writable.
#[no_mangle]
pub unsafe extern "C" fn muspy_write_midi(
    music_: *const MuspyMusic,
    out_data: *mut *mut u8,
    out_len: *mut usize,
) -> MuspyStatus {
    guard(|| {
        if out_data.is_null() || out_len.is_null() {
            return Err(null("output pointer"));
        }
        let (p, n) = leak(midi::write_midi(music(music_)?)?);
        put(out_data, p)?;
        put(out_len, n)
    })
}

/// All metrics with default parameters as a JSON object; free with
/// `muspy_string_free`.
///
/// # Safety
/// `music` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn muspy_metrics_json(music_: *const MuspyMusic, out: *mut *mut c_char) -> MuspyStatus {
    guard(|| {
        let report = metrics::evaluate(music(music_)?, &MetricConfig::default());
        put(out, into_c_string(report.to_json())?)
    })
}

/// Event tokens; free with `muspy_tokens_free`.
///
/// # Safety
/// `music` must be a live handle; `out_tokens` and `out_len` writable.
#[no_mangle]
pub unsafe extern "C" fn muspy_encode_event(
    music_: *const MuspyMusic,
    preset: MuspyEventPreset,
    out_tokens: *mut *mut u32,
    out_len: *mut usize,
) -> MuspyStatus {
    guard(|| {
        if out_tokens.is_null() || out_len.is_null() {
            return Err(null("output pointer"));
        }
        let config = match preset {
            MuspyEventPreset::Default => EventConfig::default(),
            MuspyEventPreset::Experiment => EventConfig::experiment(),
        };
        let (p, n) = leak(repr::encode_event(music(music_)?, &config).tokens);
        put(out_tokens, p)?;
        put(out_len, n)
    })
}

/// Pitch tokens (one per tick); free with `muspy_tokens_free`.
///
/// # Safety
/// `music` must be a live handle; `out_tokens` and `out_len` writable.
#[no_mangle]
pub unsafe extern "C" fn muspy_encode_pitch(
    music_: *const MuspyMusic,
    policy: MuspyOverlapPolicy,
    out_tokens: *mut *mut u32,
    out_len: *mut usize,
) -> MuspyStatus {
    guard(|| {
        if out_tokens.is_null() || out_len.is_null() {
            return Err(null("output pointer"));
        }
        let policy = match policy {
            MuspyOverlapPolicy::Error => OverlapPolicy::Error,
            MuspyOverlapPolicy::KeepHighest => OverlapPolicy::KeepHighest,
            MuspyOverlapPolicy::SkipNew => OverlapPolicy::SkipNew,
        };
        let (p, n) = leak(repr::encode_pitch(music(music_)?, policy)?.tokens);
        put(out_tokens, p)?;
        put(out_len, n)
    })
}

/// Ticks per quarter note, or 0 for a NULL handle.
///
/// # Safety
/// `music` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn muspy_music_resolution(music_: *const MuspyMusic) -> u32 {
    music(music_).map_or(0, |m| m.resolution)
}

/// # Safety
/// `music` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn muspy_music_track_count(music_: *const MuspyMusic) -> usize {
    music(music_).map_or(0, |m| m.tracks.len())
}

/// # Safety
/// `music` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn muspy_music_note_count(music_: *const MuspyMusic) -> usize {
    music(music_).map_or(0, |m| m.note_count())
}

/// End of the last note in ticks.
///
/// # Safety
/// `music` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn muspy_music_end_time(music_: *const MuspyMusic) -> u64 {
    music(music_).map_or(0, |m| m.end_time())
}

/// # Safety
/// `music` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn muspy_music_free(music_: *mut MuspyMusic) {
    if !music_.is_null() {
        drop(Box::from_raw(music_));
    }
}

/// # Safety
/// `s` must be NULL or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn muspy_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `data`/`len` must be NULL/any or exactly as returned by this library.
#[no_mangle]
pub unsafe extern "C" fn muspy_bytes_free(data: *mut u8, len: usize) {
    unleak(data, len);
}

/// # Safety
/// `tokens`/`len` must be NULL/any or exactly as returned by this library.
#[no_mangle]
pub unsafe extern "C" fn muspy_tokens_free(tokens: *mut u32, len: usize) {
    unleak(tokens, len);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn panics_become_a_status() {
        let st = guard(|| panic!("boom"));
        assert_eq!(st, MuspyStatus::Panic);
        let msg = unsafe { CStr::from_ptr(muspy_last_error_message()) };
        assert_eq!(msg.to_str().unwrap(), "internal error: boom");
        assert_eq!(guard(|| Ok(())), MuspyStatus::Ok);
        assert!(muspy_last_error_message().is_null());
    }

    #[test]
    fn kinds_map_to_codes() {
        assert_eq!(status_of(&Error::InvalidArgument("x".into())), MuspyStatus::InvalidArgument);
        assert_eq!(status_of(&Error::Truncated("x".into())), MuspyStatus::Parse);
        assert_eq!(status_of(&Error::Unsupported("x".into())), MuspyStatus::Unsupported);
    }

    #[test]
    fn version_is_the_package_version() {
        let v = unsafe { CStr::from_ptr(muspy_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}
