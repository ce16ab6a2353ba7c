//! Coupled Brownian increments for `R` independent Wiener processes.
//!
//! Increment `(n, r)` is a pure function of `(seed, n, r)`: process `r` reads
//! ChaCha8 stream `r` under the key derived from `seed`, and step `n` consumes
//! the four 32-bit words starting at position `4 n`. Paths are therefore
//! reproducible bit for bit and can be generated in any order.

use std::io::{Read, Write};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"FDSPDEBW";
const FORMAT_VERSION: u32 = 1;

/// Words of ChaCha output consumed per Gaussian draw.
const WORDS_PER_DRAW: u128 = 4;

/// Increments `dw^r_n` of `R` Wiener processes on the uniform grid
/// `t_n = n T / N`, stored step-major.
#[derive(Clone, Debug, PartialEq)]
pub struct BrownianPath {
    seed: u64,
    horizon: f64,
    steps: usize,
    processes: usize,
    increments: Vec<f64>,
}

impl BrownianPath {
    /// A path from explicit increments, `increments[n * processes + r]`.
    pub fn from_increments(
        seed: u64,
        horizon: f64,
        steps: usize,
        processes: usize,
        increments: Vec<f64>,
    ) -> Result<Self> {
        if steps == 0 || !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "need steps >= 1 and T > 0, got N={steps}, T={horizon}"
            )));
        }
        if increments.len() != steps * processes {
            return Err(Error::DimensionMismatch {
                expected: steps * processes,
                found: increments.len(),
            });
        }
        Ok(BrownianPath {
            seed,
            horizon,
            steps,
            processes,
            increments,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn processes(&self) -> usize {
        self.processes
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// `t_n`; exact at both ends.
    pub fn time(&self, n: usize) -> f64 {
        if n == self.steps {
            self.horizon
        } else {
            self.horizon * n as f64 / self.steps as f64
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|n| self.time(n)).collect()
    }

    /// The `R` increments over `[t_n, t_{n+1}]`.
    pub fn step(&self, n: usize) -> &[f64] {
        &self.increments[n * self.processes..(n + 1) * self.processes]
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// `w^r(t_n)`, summed left to right.
    pub fn value(&self, n: usize, r: usize) -> f64 {
        (0..n)
            .map(|m| self.increments[m * self.processes + r])
            .sum()
    }

    /// `w^r(t_n)` for every `n`, as `steps + 1` values per process.
    pub fn cumulative(&self, r: usize) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.steps + 1);
        let mut acc = 0.0;
        w.push(acc);
        for n in 0..self.steps {
            acc += self.increments[n * self.processes + r];
            w.push(acc);
        }
        w
    }

    /// Raw little-endian dump for exact replay.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        out.write_all(&self.seed.to_le_bytes())?;
        out.write_all(&self.horizon.to_le_bytes())?;
        out.write_all(&(self.steps as u64).to_le_bytes())?;
        out.write_all(&(self.processes as u64).to_le_bytes())?;
        for v in &self.increments {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::InvalidArgument("not a Brownian path dump".into()));
        }
        let mut b4 = [0u8; 4];
        input.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != FORMAT_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported path format version {version}"
            )));
        }
        let mut b8 = [0u8; 8];
        let mut next = |input: &mut R| -> Result<[u8; 8]> {
            input.read_exact(&mut b8)?;
            Ok(b8)
        };
        let seed = u64::from_le_bytes(next(&mut input)?);
        let horizon = f64::from_le_bytes(next(&mut input)?);
        let steps = u64::from_le_bytes(next(&mut input)?) as usize;
        let processes = u64::from_le_bytes(next(&mut input)?) as usize;
        let count = steps
            .checked_mul(processes)
            .ok_or_else(|| Error::InvalidArgument("corrupt path header".into()))?;
        let mut increments = Vec::with_capacity(count);
        for _ in 0..count {
            increments.push(f64::from_le_bytes(next(&mut input)?));
        }
        BrownianPath::from_increments(seed, horizon, steps, processes, increments)
    }
}

/// A standard normal from two 64-bit words (Box-Muller, cosine branch).
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let a = rng.next_u64();
    let b = rng.next_u64();
    // u1 in (0, 1], u2 in [0, 1)
    let u1 = ((a >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
    let u2 = (b >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn process_rng(seed: u64, r: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r as u64);
    rng
}

/// The standard normal keyed by `(seed, n, r)`.
pub fn keyed_normal(seed: u64, n: usize, r: usize) -> f64 {
    let mut rng = process_rng(seed, r);
    rng.set_word_pos(WORDS_PER_DRAW * n as u128);
    gaussian(&mut rng)
}

/// `N` steps of `R` independent Wiener increments on `[0, T]`.
pub fn sample_path(
    seed: u64,
    horizon: f64,
    steps: usize,
    processes: usize,
) -> Result<BrownianPath> {
    if steps == 0 || !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "need steps >= 1 and T > 0, got N={steps}, T={horizon}"
        )));
    }
    let sd = (horizon / steps as f64).sqrt();
    let mut increments = vec![0.0; steps * processes];
    for r in 0..processes {
        // sequential reads from word 0 coincide with keyed_normal(seed, n, r)
        let mut rng = process_rng(seed, r);
        for n in 0..steps {
            increments[n * processes + r] = sd * gaussian(&mut rng);
        }
    }
    BrownianPath::from_increments(seed, horizon, steps, processes, increments)
}

/// Block sums of `factor` consecutive increments: the same realization on
/// the coarser time grid.
pub fn coarsen_path(path: &BrownianPath, factor: usize) -> Result<BrownianPath> {
    if factor == 0 || !path.steps.is_multiple_of(factor) {
        return Err(Error::InvalidArgument(format!(
            "{} steps are not divisible by {factor}",
            path.steps
        )));
    }
    if factor == 1 {
        return Ok(path.clone());
    }
    let steps = path.steps / factor;
    let r = path.processes;
    let mut increments = vec![0.0; steps * r];
    if r == 0 {
        return BrownianPath::from_increments(path.seed, path.horizon, steps, r, increments);
    }
    for (m, block) in path.increments.chunks(factor * r).enumerate() {
        for k in 0..factor {
            for p in 0..r {
                increments[m * r + p] += block[k * r + p];
            }
        }
    }
    BrownianPath::from_increments(path.seed, path.horizon, steps, r, increments)
}

/// Seed of replicate `k` under a study seed (SplitMix64 finalizer).
pub fn replicate_seed(seed: u64, replicate: usize) -> u64 {
    let mut z = seed.wrapping_add((replicate as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
