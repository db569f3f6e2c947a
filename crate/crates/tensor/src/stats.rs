//! Per-thread accounting used by the cost profiler: live tensor bytes with a
//! high-water mark, and a multiply-accumulate counter fed by the heavy ops.

use std::cell::Cell;

thread_local! {
    static LIVE_BYTES: Cell<usize> = const { Cell::new(0) };
    static PEAK_BYTES: Cell<usize> = const { Cell::new(0) };
    static FLOPS: Cell<u64> = const { Cell::new(0) };
}

pub(crate) fn acquire(bytes: usize) {
    if bytes == 0 {
        return;
    }
    LIVE_BYTES.with(|live| {
        let now = live.get() + bytes;
        live.set(now);
        PEAK_BYTES.with(|peak| {
            if now > peak.get() {
                peak.set(now)
            }
        });
    });
}

pub(crate) fn release(bytes: usize) {
    if bytes == 0 {
        return;
    }
    // Buffers can migrate between threads; saturate rather than wrap.
    LIVE_BYTES.with(|live| live.set(live.get().saturating_sub(bytes)));
}

/// Bytes held by tensors allocated on this thread and still alive.
pub fn live_bytes() -> usize {
    LIVE_BYTES.with(Cell::get)
}

/// Largest value of [`live_bytes`] since the last [`reset_peak`].
pub fn peak_bytes() -> usize {
    PEAK_BYTES.with(Cell::get)
}

pub fn reset_peak() {
    let now = live_bytes();
    PEAK_BYTES.with(|p| p.set(now));
}

/// Adds to the floating point operation counter of this thread.
pub fn add_flops(n: u64) {
    FLOPS.with(|f| f.set(f.get().wrapping_add(n)));
}

pub fn flops() -> u64 {
    FLOPS.with(Cell::get)
}

/// Runs `f` and returns its result with the FLOPs and peak tensor bytes it
/// incurred above what was live on entry.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, u64, usize) {
    let flops_before = flops();
    let base = live_bytes();
    let saved_peak = peak_bytes();
    reset_peak();
    let out = f();
    let peak = peak_bytes().saturating_sub(base);
    let used = flops().wrapping_sub(flops_before);
    PEAK_BYTES.with(|p| p.set(saved_peak.max(peak_bytes())));
    (out, used, peak)
}
