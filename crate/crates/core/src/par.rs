//! Data-parallel helpers with a sequential fallback.
//!
//! Every parallel loop in the crate is expressed as an indexed map whose
//! items are reduced in index order by the caller, and every item that needs
//! randomness gets its own ChaCha stream derived from a base seed. The
//! result therefore does not depend on the execution mode or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random stream used throughout the crate.
pub type SimRng = ChaCha8Rng;

/// How indexed loops are executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Uses rayon when the `parallel` feature is enabled, otherwise runs
    /// sequentially.
    #[default]
    Parallel,
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Seeded stream `stream` of the ChaCha generator keyed by `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Evaluates `f(0..n)` and returns the results in index order.
pub fn map_indexed<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if exec.is_parallel() {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Splits `total` items into shards of at most `shard` items and maps each
/// shard `(index, len)` through `f`, returning shard results in order.
pub fn map_shards<T, F>(exec: Execution, total: usize, shard: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, usize) -> T + Sync + Send,
{
    let shard = shard.max(1);
    let count = total.div_ceil(shard);
    map_indexed(exec, count, |s| {
        let len = shard.min(total - s * shard);
        f(s, len)
    })
}
