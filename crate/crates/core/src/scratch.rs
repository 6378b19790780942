//! Per-thread recycling of large `f64` buffers.
//!
//! Jet streams for a chunk of collocation points are several hundred
//! kilobytes each and are allocated and dropped on every training step.
//! Handing them back to the system allocator makes it return the pages to
//! the kernel and fault them in again on the next step, which costs about
//! as much as the arithmetic. Buffers here are kept per thread instead.

use std::cell::RefCell;

use ndarray::Array2;

const MAX_POOLED: usize = 48;
/// Smaller buffers are left to the allocator.
const MIN_POOLED_LEN: usize = 4096;

thread_local! {
    static POOL: RefCell<Vec<Vec<f64>>> = const { RefCell::new(Vec::new()) };
}

/// Zero-filled vector of length `n`, reusing a pooled allocation when one is large enough.
pub(crate) fn zeroed_vec(n: usize) -> Vec<f64> {
    if n < MIN_POOLED_LEN {
        return vec![0.0; n];
    }
    let reused = POOL.with(|p| {
        let mut p = p.borrow_mut();
        let pos = p.iter().position(|v| v.capacity() >= n)?;
        Some(p.swap_remove(pos))
    });
    match reused {
        Some(mut v) => {
            v.clear();
            v.resize(n, 0.0);
            v
        }
        None => vec![0.0; n],
    }
}

pub(crate) fn zeros(rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_vec((rows, cols), zeroed_vec(rows * cols)).expect("shape matches length")
}

pub(crate) fn recycle_vec(v: Vec<f64>) {
    if v.capacity() < MIN_POOLED_LEN {
        return;
    }
    POOL.with(|p| {
        let mut p = p.borrow_mut();
        if p.len() < MAX_POOLED {
            p.push(v);
        }
    });
}

pub(crate) fn recycle(a: Array2<f64>) {
    let (v, _) = a.into_raw_vec_and_offset();
    recycle_vec(v);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reused_buffers_come_back_zeroed() {
        let mut a = zeros(100, 100);
        a.fill(3.0);
        recycle(a);
        let b = zeros(50, 100);
        assert_eq!(b.dim(), (50, 100));
        assert!(b.iter().all(|&v| v == 0.0));
        let small = zeroed_vec(10);
        assert_eq!(small, vec![0.0; 10]);
    }
}
