//! C ABI over the imprinting toolkit.
//!
//! Heads, embedding sets, and reference profiles cross the boundary as
//! opaque handles. Every fallible call returns an [`ImlStatus`]; on failure
//! [`iml_last_error_message`] describes the cause. Operations that extend a
//! head never modify their input handle: they allocate a new one, which the
//! caller releases with the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use imprintlab::dataset::EmbeddingSet;
use imprintlab::error::{Error, FormatError};
use imprintlab::eval::evaluate;
use imprintlab::formats;
use imprintlab::head::ClassifierHead;
use imprintlab::imprint::{self, ReferenceProfile};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Malformed or unsupported EMB1/HED1/CSV content.
    Format = 3,
    DimensionMismatch = 4,
    /// The head is in the wrong state for the method (raw vs normalized rows).
    HeadState = 5,
    DuplicateClassName = 6,
    ZeroVector = 7,
    Io = 8,
    BufferTooSmall = 9,
    IndexOutOfRange = 10,
    Internal = 11,
}

/// A classifier head: `N` rows of length `M`, biases, class names, flags.
pub struct ImlHead(ClassifierHead);

/// A labeled set of embedding rows.
pub struct ImlEmbeddings(EmbeddingSet);

/// Sorted reference weights and median bias of an original head.
pub struct ImlProfile(ReferenceProfile);

/// Headline numbers of an evaluation. Undefined rates are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct ImlEvalSummary {
    pub num_queries: u64,
    pub top1_accuracy: f64,
    pub original_total: u64,
    pub original_top1_accuracy: f64,
    pub interference_count: u64,
    pub interference_fraction: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Message for the most recent failure on this thread, or NULL if none.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn iml_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

struct Fail(ImlStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match e.root() {
            Error::Format(_) => ImlStatus::Format,
            Error::DimensionMismatch { .. } => ImlStatus::DimensionMismatch,
            Error::HeadState(_) => ImlStatus::HeadState,
            Error::DuplicateClassName(_) => ImlStatus::DuplicateClassName,
            Error::ZeroVector | Error::ZeroRow(_) => ImlStatus::ZeroVector,
            Error::Io(_) => ImlStatus::Io,
            _ => ImlStatus::InvalidArgument,
        };
        Fail(status, e.to_string())
    }
}

impl From<FormatError> for Fail {
    fn from(e: FormatError) -> Self {
        Error::from(e).into()
    }
}

fn fail<T>(status: ImlStatus, msg: impl Into<String>) -> Result<T, Fail> {
    Err(Fail(status, msg.into()))
}

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> ImlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ImlStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            ImlStatus::Internal
        }
    }
}

unsafe fn obj<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    if p.is_null() {
        return fail(ImlStatus::NullPointer, format!("{what} is NULL"));
    }
    Ok(&*p)
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    if p.is_null() {
        return fail(ImlStatus::NullPointer, format!("{what} is NULL"));
    }
    Ok(&mut *p)
}

unsafe fn floats<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return fail(ImlStatus::NullPointer, format!("{what} is NULL"));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn floats_mut<'a>(p: *mut f64, len: usize, needed: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if p.is_null() {
        return fail(ImlStatus::NullPointer, format!("{what} is NULL"));
    }
    if len < needed {
        return fail(
            ImlStatus::BufferTooSmall,
            format!("{what} holds {len} values, {needed} needed"),
        );
    }
    Ok(slice::from_raw_parts_mut(p, needed))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return fail(ImlStatus::NullPointer, format!("{what} is NULL"));
    }
    CStr::from_ptr(p)
        .to_str()
        .or_else(|_| fail(ImlStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn bytes<'a>(p: *const u8, len: usize) -> Result<&'a [u8], Fail> {
    if p.is_null() {
        return fail(ImlStatus::NullPointer, "data is NULL");
    }
    Ok(slice::from_raw_parts(p, len))
}

fn boxed<T>(slot: &mut *mut T, value: T) {
    *slot = Box::into_raw(Box::new(value));
}

/// Copies `src` into a caller buffer of `cap` bytes. `out_len` receives the
/// required length; a short buffer yields `BufferTooSmall` and writes nothing.
unsafe fn copy_out(src: &[u8], buf: *mut u8, cap: usize, out_len: *mut usize) -> Result<(), Fail> {
    *out(out_len, "out_len")? = src.len();
    if cap < src.len() {
        return fail(
            ImlStatus::BufferTooSmall,
            format!("buffer holds {cap} bytes, {} needed", src.len()),
        );
    }
    if !src.is_empty() {
        if buf.is_null() {
            return fail(ImlStatus::NullPointer, "buf is NULL");
        }
        ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    }
    Ok(())
}

// ---- heads ----

/// Loads a head from a HED1 file (or a CSV fixture by `.csv` extension).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out_head` must be writable.
#[no_mangle]
pub unsafe extern "C" fn iml_head_read_file(path: *const c_char, out_head: *mut *mut ImlHead) -> ImlStatus {
    guard(|| {
        let slot = out(out_head, "out_head")?;
        let head = formats::load_head(Path::new(text(path, "path")?))?;
        boxed(slot, ImlHead(head));
        Ok(())
    })
}

/// Parses a head from an in-memory HED1 buffer.
///
/// # Safety
/// `data` must point to `len` readable bytes; `out_head` must be writable.
#[no_mangle]
pub unsafe extern "C" fn iml_head_from_bytes(data: *const u8, len: usize, out_head: *mut *mut ImlHead) -> ImlStatus {
    guard(|| {
        let slot = out(out_head, "out_head")?;
        boxed(slot, ImlHead(formats::read_head(bytes(data, len)?)?));
        Ok(())
    })
}

/// Writes a head as HED1, atomically replacing `path`.
///
/// # Safety
/// `head` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn iml_head_write_file(head: *const ImlHead, path: *const c_char) -> ImlStatus {
    guard(|| {
        let head = obj(head, "head")?;
        formats::write_atomic(Path::new(text(path, "path")?), &formats::write_head(&head.0))?;
        Ok(())
    })
}

/// Serializes a head as HED1 into `buf`. Call with `cap = 0` to learn the size.
///
/// # Safety
/// `buf` must hold `cap` writable bytes; `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn iml_head_to_bytes(
    head: *const ImlHead,
    buf: *mut u8,
    cap: usize,
    out_len: *mut usize,
) -> ImlStatus {
    guard(|| copy_out(&formats::write_head(&obj(head, "head")?.0), buf, cap, out_len))
}

/// Builds a head from row-major weights, biases, and NUL-terminated class names.
///
/// # Safety
/// `weights` holds `num_classes * dim` values, `bias` and `names` hold `num_classes` entries.
#[no_mangle]
pub unsafe extern "C" fn iml_head_new(
    num_classes: usize,
    dim: usize,
    weights: *const f64,
    bias: *const f64,
    names: *const *const c_char,
    flags: u32,
    out_head: *mut *mut ImlHead,
) -> ImlStatus {
    guard(|| {
        let slot = out(out_head, "out_head")?;
        let total = num_classes
            .checked_mul(dim)
            .ok_or_else(|| Fail(ImlStatus::InvalidArgument, "size overflow".into()))?;
        let weights = floats(weights, total, "weights")?.to_vec();
        let bias = floats(bias, num_classes, "bias")?.to_vec();
        if names.is_null() {
            return fail(ImlStatus::NullPointer, "names is NULL");
        }
        let names = slice::from_raw_parts(names, num_classes)
            .iter()
            .map(|&p| text(p, "class name").map(str::to_owned))
            .collect::<Result<Vec<_>, _>>()?;
        let flags = imprintlab::head::HeadFlags::from_bits(flags)
            .ok_or_else(|| Fail(ImlStatus::InvalidArgument, format!("unknown flag bits {flags:#x}")))?;
        let head = ClassifierHead::new(dim, weights, bias, names, flags)
            .map_err(|e| Fail(ImlStatus::InvalidArgument, e.to_string()))?;
        boxed(slot, ImlHead(head));
        Ok(())
    })
}

/// Releases a head handle. NULL is ignored.
///
/// # Safety
/// `head` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn iml_head_free(head: *mut ImlHead) {
    if !head.is_null() {
        drop(Box::from_raw(head));
    }
}

/// Number of classes `N`; 0 for NULL.
///
/// # Safety
/// `head` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn iml_head_num_classes(head: *const ImlHead) -> usize {
    head.as_ref().map_or(0, |h| h.0.num_classes())
}

/// Row length `M`; 0 for NULL.
///
/// # Safety
/// `head` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn iml_head_dim(head: *const ImlHead) -> usize {
    head.as_ref().map_or(0, |h| h.0.dim())
}

/// Flag bits: 1 = rows L2-normalized, 2 = bias ignored.
///
/// # Safety
/// `head` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn iml_head_flags(head: *const ImlHead) -> u32 {
    head.as_ref().map_or(0, |h| h.0.flags().bits())
}

/// Copies row `class` (`dim` values) and its bias.
///
/// # Safety
/// `out_row` holds `len` writable values; `out_bias` is NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn iml_head_row(
    head: *const ImlHead,
    class: usize,
    out_row: *mut f64,
    len: usize,
    out_bias: *mut f64,
) -> ImlStatus {
    guard(|| {
        let h = &obj(head, "head")?.0;
        if class >= h.num_classes() {
            return fail(
                ImlStatus::IndexOutOfRange,
                format!("class {class} of {}", h.num_classes()),
            );
        }
        floats_mut(out_row, len, h.dim(), "out_row")?.copy_from_slice(h.row(class));
        if let Some(b) = out_bias.as_mut() {
            *b = h.bias()[class];
        }
        Ok(())
    })
}

/// Copies the UTF-8 name of `class` (no terminator) into `buf`.
///
/// # Safety
/// `buf` holds `cap` writable bytes; `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn iml_head_class_name(
    head: *const ImlHead,
    class: usize,
    buf: *mut u8,
    cap: usize,
    out_len: *mut usize,
) -> ImlStatus {
    guard(|| {
        let h = &obj(head, "head")?.0;
        let Some(name) = h.class_names().get(class) else {
            return fail(
                ImlStatus::IndexOutOfRange,
                format!("class {class} of {}", h.num_classes()),
            );
        };
        copy_out(name.as_bytes(), buf, cap, out_len)
    })
}

/// Scores one embedding against every class. Cosine heads normalize `x` first.
///
/// # Safety
/// `x` holds `dim` values; `out_logits` holds `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn iml_head_logits(
    head: *const ImlHead,
    x: *const f64,
    dim: usize,
    out_logits: *mut f64,
    len: usize,
) -> ImlStatus {
    guard(|| {
        let h = &obj(head, "head")?.0;
        let q = h.prepare_query(floats(x, dim, "x")?);
        let logits = h.logits(&q)?;
        floats_mut(out_logits, len, h.num_classes(), "out_logits")?.copy_from_slice(logits.values());
        Ok(())
    })
}

/// Index of the highest-scoring class; ties go to the lowest index.
///
/// # Safety
/// `x` holds `dim` values; `out_class` must be writable.
#[no_mangle]
pub unsafe extern "C" fn iml_head_classify(
    head: *const ImlHead,
    x: *const f64,
    dim: usize,
    out_class: *mut usize,
) -> ImlStatus {
    guard(|| {
        let slot = out(out_class, "out_class")?;
        *slot = obj(head, "head")?.0.classify(floats(x, dim, "x")?)?;
        Ok(())
    })
}

// ---- embeddings ----

/// Loads an embedding set from an EMB1 file (or CSV by `.csv` extension).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out_set` must be writable.
#[no_mangle]
pub unsafe extern "C" fn iml_embeddings_read_file(path: *const c_char, out_set: *mut *mut ImlEmbeddings) -> ImlStatus {
    guard(|| {
        let slot = out(out_set, "out_set")?;
        let set = formats::load_embeddings(Path::new(text(path, "path")?))?;
        boxed(slot, ImlEmbeddings(set));
        Ok(())
    })
}

/// Parses an embedding set from an in-memory EMB1 buffer.
///
/// # Safety
/// `data` must point to `len` readable bytes; `out_set` must be writable.
#[no_mangle]
pub unsafe extern "C" fn iml_embeddings_from_bytes(
    data: *const u8,
    len: usize,
    out_set: *mut *mut ImlEmbeddings,
) -> ImlStatus {
    guard(|| {
        let slot = out(out_set, "out_set")?;
        boxed(slot, ImlEmbeddings(formats::read_embeddings(bytes(data, len)?)?));
        Ok(())
    })
}

/// Releases an embedding set handle. NULL is ignored.
///
/// # Safety
/// `set` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn iml_embeddings_free(set: *mut ImlEmbeddings) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Number of rows; 0 for NULL.
///
/// # Safety
/// `set` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn iml_embeddings_len(set: *const ImlEmbeddings) -> usize {
    set.as_ref().map_or(0, |s| s.0.len())
}

/// Row length; 0 for NULL.
///
/// # Safety
/// `set` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn iml_embeddings_dim(set: *const ImlEmbeddings) -> usize {
    set.as_ref().map_or(0, |s| s.0.dim())
}

/// Copies row `index` and its label.
///
/// # Safety
/// `out_row` holds `len` writable values; `out_label` is NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn iml_embeddings_row(
    set: *const ImlEmbeddings,
    index: usize,
    out_row: *mut f64,
    len: usize,
    out_label: *mut u32,
) -> ImlStatus {
    guard(|| {
        let s = &obj(set, "set")?.0;
        if index >= s.len() {
            return fail(ImlStatus::IndexOutOfRange, format!("row {index} of {}", s.len()));
        }
        floats_mut(out_row, len, s.dim(), "out_row")?.copy_from_slice(s.row(index));
        if let Some(l) = out_label.as_mut() {
            *l = s.label(index);
        }
        Ok(())
    })
}

// ---- imprinting ----

/// Builds the reference profile of an original head.
///
/// # Safety
/// `head` must be a live handle; `out_profile` must be writable.
#[no_mangle]
pub unsafe extern "C" fn iml_profile_build(head: *const ImlHead, out_profile: *mut *mut ImlProfile) -> ImlStatus {
    guard(|| {
        let slot = out(out_profile, "out_profile")?;
        boxed(
            slot,
            ImlProfile(imprint::build_reference_profile(&obj(head, "head")?.0)?),
        );
        Ok(())
    })
}

/// Releases a profile handle. NULL is ignored.
///
/// # Safety
/// `profile` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn iml_profile_free(profile: *mut ImlProfile) {
    if !profile.is_null() {
        drop(Box::from_raw(profile));
    }
}

/// Number of reference values `M`; 0 for NULL.
///
/// # Safety
/// `profile` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn iml_profile_dim(profile: *const ImlProfile) -> usize {
    profile.as_ref().map_or(0, |p| p.0.dim())
}

/// Copies the sorted reference weights (largest first) and the median bias.
///
/// # Safety
/// `out_weights` holds `len` writable values; `out_median_bias` is NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn iml_profile_values(
    profile: *const ImlProfile,
    out_weights: *mut f64,
    len: usize,
    out_median_bias: *mut f64,
) -> ImlStatus {
    guard(|| {
        let p = &obj(profile, "profile")?.0;
        floats_mut(out_weights, len, p.dim(), "out_weights")?.copy_from_slice(p.sorted_weights());
        if let Some(b) = out_median_bias.as_mut() {
            *b = p.median_bias();
        }
        Ok(())
    })
}

/// Rank-remaps `x` onto the profile's reference values.
///
/// # Safety
/// `x` holds `dim` values; `out_row` holds `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn iml_quantile_normalize(
    profile: *const ImlProfile,
    x: *const f64,
    dim: usize,
    out_row: *mut f64,
    len: usize,
) -> ImlStatus {
    guard(|| {
        let p = &obj(profile, "profile")?.0;
        let row = imprint::quantile_normalize(floats(x, dim, "x")?, p)?;
        floats_mut(out_row, len, row.len(), "out_row")?.copy_from_slice(&row);
        Ok(())
    })
}

/// Adds a class by quantile imprinting. A NULL `profile` means the head's own.
///
/// # Safety
/// `x` holds `dim` values; `name` is NUL-terminated; `out_head` is writable.
#[no_mangle]
pub unsafe extern "C" fn iml_add_class_done(
    head: *const ImlHead,
    profile: *const ImlProfile,
    x: *const f64,
    dim: usize,
    name: *const c_char,
    out_head: *mut *mut ImlHead,
) -> ImlStatus {
    guard(|| {
        let slot = out(out_head, "out_head")?;
        let h = &obj(head, "head")?.0;
        let x = floats(x, dim, "x")?;
        let name = text(name, "name")?;
        let extended = match profile.as_ref() {
            Some(p) => imprint::add_class_done_with(h, &p.0, x, name)?,
            None => imprint::add_class_done(h, x, name)?,
        };
        boxed(slot, ImlHead(extended));
        Ok(())
    })
}

/// Normalizes every row and drops the biases, as linear imprinting requires.
///
/// # Safety
/// `head` must be a live handle; `out_head` must be writable.
#[no_mangle]
pub unsafe extern "C" fn iml_qi_modify_head(head: *const ImlHead, out_head: *mut *mut ImlHead) -> ImlStatus {
    guard(|| {
        let slot = out(out_head, "out_head")?;
        boxed(slot, ImlHead(imprint::qi_modify_head(&obj(head, "head")?.0)?));
        Ok(())
    })
}

/// Adds a class by linear imprinting to a modified head.
///
/// # Safety
/// `x` holds `dim` values; `name` is NUL-terminated; `out_head` is writable.
#[no_mangle]
pub unsafe extern "C" fn iml_add_class_qi(
    head: *const ImlHead,
    x: *const f64,
    dim: usize,
    name: *const c_char,
    out_head: *mut *mut ImlHead,
) -> ImlStatus {
    guard(|| {
        let slot = out(out_head, "out_head")?;
        let h = &obj(head, "head")?.0;
        let extended = imprint::add_class_qi(h, floats(x, dim, "x")?, text(name, "name")?)?;
        boxed(slot, ImlHead(extended));
        Ok(())
    })
}

// ---- evaluation ----

/// Classifies every query and summarizes accuracy and interference.
/// `new_classes` lists the head indices of added classes.
///
/// # Safety
/// `new_classes` holds `num_new` values (may be NULL when 0); `out_summary` is writable.
#[no_mangle]
pub unsafe extern "C" fn iml_evaluate(
    head: *const ImlHead,
    queries: *const ImlEmbeddings,
    new_classes: *const usize,
    num_new: usize,
    out_summary: *mut ImlEvalSummary,
) -> ImlStatus {
    guard(|| {
        let slot = out(out_summary, "out_summary")?;
        let new: &[usize] = if num_new == 0 {
            &[]
        } else if new_classes.is_null() {
            return fail(ImlStatus::NullPointer, "new_classes is NULL");
        } else {
            slice::from_raw_parts(new_classes, num_new)
        };
        let r = evaluate(&obj(head, "head")?.0, &obj(queries, "queries")?.0, new)?;
        *slot = ImlEvalSummary {
            num_queries: r.num_queries,
            top1_accuracy: r.top1_accuracy.unwrap_or(f64::NAN),
            original_total: r.original_total,
            original_top1_accuracy: r.original_top1_accuracy.unwrap_or(f64::NAN),
            interference_count: r.interference_count,
            interference_fraction: r.interference_fraction.unwrap_or(f64::NAN),
        };
        Ok(())
    })
}
