//! Thread-local multiply-add counter.
//!
//! [`Matrix::matmul`](super::Matrix::matmul) and
//! [`Matrix::axpby`](super::Matrix::axpby) charge the multiply-adds they
//! actually perform. Tests use it to check operation counts of propagation
//! and of full forward passes.

use std::cell::Cell;

thread_local! {
    static MULTIPLY_ADDS: Cell<u64> = const { Cell::new(0) };
}

pub fn reset() {
    MULTIPLY_ADDS.with(|c| c.set(0));
}

pub fn get() -> u64 {
    MULTIPLY_ADDS.with(Cell::get)
}

/// Runs `f` and returns its result with the multiply-adds it performed.
pub fn measure<T>(f: impl FnOnce() -> T) -> (T, u64) {
    let before = get();
    let out = f();
    (out, get() - before)
}

pub(crate) fn add(n: u64) {
    MULTIPLY_ADDS.with(|c| c.set(c.get() + n));
}
