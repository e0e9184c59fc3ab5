//! Device-step execution: data-parallel across devices with a sequential
//! fallback.
//!
//! Correctness never depends on which path runs. Devices share no mutable
//! state, every random draw comes from a device-owned stream, and all
//! cross-device reductions happen outside these helpers in device order, so
//! the parallel and sequential paths produce bitwise-identical trajectories.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Run `f` inside a dedicated pool of `threads` workers (`parallel` builds),
/// or directly on the current thread otherwise. `None` keeps the library
/// default pool.
pub fn with_threads<R, F>(threads: Option<usize>, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    #[cfg(feature = "parallel")]
    {
        match threads {
            Some(n) if n >= 1 => rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .expect("failed to build worker pool")
                .install(f),
            _ => f(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        f()
    }
}

/// Apply `f` to every device. `sequential` forces in-order execution even in
/// `parallel` builds (used both as the `threads = 1` fast path and as the
/// reference path in equivalence tests and benchmarks).
pub fn for_each_device<T, F>(items: &mut [T], sequential: bool, f: F)
where
    T: Send,
    F: Fn(&mut T) + Sync,
{
    #[cfg(feature = "parallel")]
    {
        if sequential {
            for item in items.iter_mut() {
                f(item);
            }
        } else {
            items.par_iter_mut().for_each(&f);
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = sequential;
        for item in items.iter_mut() {
            f(item);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_paths_apply_to_every_item() {
        let mut a: Vec<u64> = (0..64).collect();
        let mut b = a.clone();
        for_each_device(&mut a, true, |x| *x = x.wrapping_mul(2654435761) >> 7);
        for_each_device(&mut b, false, |x| *x = x.wrapping_mul(2654435761) >> 7);
        assert_eq!(a, b);
    }

    #[test]
    fn with_threads_runs_the_closure() {
        assert_eq!(with_threads(Some(2), || 41 + 1), 42);
        assert_eq!(with_threads(None, || "ok"), "ok");
    }
}
