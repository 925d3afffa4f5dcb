//! Deterministic parallel execution over keyed random streams.
//!
//! Every unit of randomized work derives its generator from a [`StreamKey`]
//! rather than from a shared sequential source, so the bits produced by a run
//! depend only on the master seed and never on how work was scheduled across
//! threads. Parallel maps are barrier-synchronized: all mutation of swarm state
//! happens on the coordinating thread between maps.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Environment variable that overrides the configured worker count.
pub const WORKERS_ENV: &str = "SMC_WORKERS";

/// The random stream type handed to per-item work.
pub type Stream = ChaCha12Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Init,
    Likelihood,
    Resample,
    Mutation,
    ThresholdCalibration,
}

impl Stage {
    fn tag(self) -> u8 {
        match self {
            Stage::Init => 0,
            Stage::Likelihood => 1,
            Stage::Resample => 2,
            Stage::Mutation => 3,
            Stage::ThresholdCalibration => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Init => "init",
            Stage::Likelihood => "likelihood",
            Stage::Resample => "resample",
            Stage::Mutation => "mutation",
            Stage::ThresholdCalibration => "threshold_calibration",
        }
    }
}

/// Identifies one reproducible random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub master_seed: u64,
    pub cycle: u64,
    pub particle: u64,
    pub stage: Stage,
    pub proposal_index: u64,
}

impl StreamKey {
    pub fn new(master_seed: u64, stage: Stage) -> Self {
        Self {
            master_seed,
            cycle: 0,
            particle: 0,
            stage,
            proposal_index: 0,
        }
    }

    pub fn cycle(mut self, cycle: u64) -> Self {
        self.cycle = cycle;
        self
    }

    pub fn particle(mut self, particle: u64) -> Self {
        self.particle = particle;
        self
    }

    pub fn proposal(mut self, proposal_index: u64) -> Self {
        self.proposal_index = proposal_index;
        self
    }

    fn digest(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(b"smc-calibrate/stream/v1");
        hasher.update(self.master_seed.to_le_bytes());
        hasher.update(self.cycle.to_le_bytes());
        hasher.update(self.particle.to_le_bytes());
        hasher.update([self.stage.tag()]);
        hasher.update(self.proposal_index.to_le_bytes());
        hasher.finalize().into()
    }
}

/// Derives the stream for `key`. The same key always yields the same stream.
pub fn derive_stream(key: &StreamKey) -> Stream {
    Stream::from_seed(key.digest())
}

/// Resolves the worker count: explicit request, then `SMC_WORKERS`, then the
/// available hardware parallelism.
pub fn resolve_workers(requested: Option<usize>) -> usize {
    if let Some(n) = requested.filter(|&n| n > 0) {
        return n;
    }
    if let Some(n) = std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        return n;
    }
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

/// A fixed-size worker pool for barrier-synchronized maps.
pub struct Executor {
    pool: rayon::ThreadPool,
    workers: usize,
}

impl std::fmt::Debug for Executor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Executor")
            .field("workers", &self.workers)
            .finish()
    }
}

impl Executor {
    pub fn new(workers: usize) -> Result<Self> {
        let workers = workers.max(1);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .thread_name(|i| format!("smc-worker-{i}"))
            .build()
            .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
        Ok(Self { pool, workers })
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    /// Applies `f` to every item and returns results in item order.
    ///
    /// All items run to completion even when some fail; the error of the
    /// lowest failing index is returned, wrapped with that index.
    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Result<Vec<R>>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> Result<R> + Sync,
    {
        let results: Vec<Result<R>> = self.pool.install(|| {
            items
                .par_iter()
                .enumerate()
                .with_max_len(1)
                .map(|(i, item)| f(i, item))
                .collect()
        });
        let mut out = Vec::with_capacity(results.len());
        for (index, r) in results.into_iter().enumerate() {
            match r {
                Ok(v) => out.push(v),
                Err(e) => {
                    return Err(Error::Item {
                        index,
                        source: Box::new(e),
                    })
                }
            }
        }
        Ok(out)
    }

    /// Like [`Executor::map`], handing each item its own keyed stream.
    pub fn map_with_streams<T, R, K, F>(&self, items: &[T], key_for: K, f: F) -> Result<Vec<R>>
    where
        T: Sync,
        R: Send,
        K: Fn(usize) -> StreamKey + Sync,
        F: Fn(usize, &T, &mut Stream) -> Result<R> + Sync,
    {
        self.map(items, |i, item| {
            let mut stream = derive_stream(&key_for(i));
            f(i, item, &mut stream)
        })
    }
}

/// One-shot parallel map with a temporary pool of `workers` threads.
pub fn parallel_map<T, R, F>(items: &[T], workers: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> Result<R> + Sync,
{
    Executor::new(workers)?.map(items, f)
}
