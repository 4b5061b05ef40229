//! Global allocator wrapper with per-thread, scope-based byte accounting.
//!
//! Counters are thread-local, so a [`measure`] scope sees exactly the
//! allocations made on its own thread. Outside any scope the wrapper only
//! forwards to the system allocator.

use std::alloc::{GlobalAlloc, Layout, System};
use std::cell::Cell;

pub struct TrackingAllocator;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AllocStats {
    /// Highest live byte count above the scope's starting point.
    pub peak_bytes: usize,
    /// Live bytes at scope exit that were allocated inside it.
    pub net_bytes: isize,
    pub allocs: usize,
    pub deallocs: usize,
}

impl AllocStats {
    /// Allocations not released by scope end.
    pub fn leaked(&self) -> isize {
        self.allocs as isize - self.deallocs as isize
    }
}

#[derive(Clone, Copy)]
struct Counters {
    depth: usize,
    current: isize,
    peak: isize,
    allocs: usize,
    deallocs: usize,
}

const IDLE: Counters = Counters {
    depth: 0,
    current: 0,
    peak: 0,
    allocs: 0,
    deallocs: 0,
};

thread_local! {
    static COUNTERS: Cell<Counters> = const { Cell::new(IDLE) };
}

#[inline]
fn record(grow: usize, shrink: usize) {
    let _ = COUNTERS.try_with(|c| {
        let mut s = c.get();
        if s.depth == 0 {
            return;
        }
        if grow > 0 {
            s.allocs += 1;
        }
        if shrink > 0 {
            s.deallocs += 1;
        }
        s.current += grow as isize - shrink as isize;
        s.peak = s.peak.max(s.current);
        c.set(s);
    });
}

unsafe impl GlobalAlloc for TrackingAllocator {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = unsafe { System.alloc(layout) };
        if !p.is_null() {
            record(layout.size(), 0);
        }
        p
    }

    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        let p = unsafe { System.alloc_zeroed(layout) };
        if !p.is_null() {
            record(layout.size(), 0);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) };
        record(0, layout.size());
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = unsafe { System.realloc(ptr, layout, new_size) };
        if !p.is_null() {
            // a move counts as one release plus one allocation
            record(new_size, layout.size());
        }
        p
    }
}

/// True when the tracking allocator is installed.
pub const fn is_tracking() -> bool {
    cfg!(feature = "track-alloc")
}

/// Run `f` and report the allocations it made on this thread. Scopes nest:
/// an inner scope's usage is folded into the enclosing one.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, AllocStats) {
    let outer = COUNTERS.with(|c| {
        let saved = c.get();
        c.set(Counters {
            depth: saved.depth + 1,
            ..IDLE
        });
        saved
    });
    let out = f();
    let inner = COUNTERS.with(|c| {
        let inner = c.get();
        let mut restored = outer;
        if outer.depth > 0 {
            restored.peak = outer.peak.max(outer.current + inner.peak);
            restored.current += inner.current;
            restored.allocs += inner.allocs;
            restored.deallocs += inner.deallocs;
        }
        c.set(restored);
        inner
    });
    (
        out,
        AllocStats {
            peak_bytes: inner.peak.max(0) as usize,
            net_bytes: inner.current,
            allocs: inner.allocs,
            deallocs: inner.deallocs,
        },
    )
}
