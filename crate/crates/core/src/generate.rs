//! Reproducible synthetic pencils in generalized real Schur form.
//!
//! The random stream is ChaCha8 (`rand_chacha`) seeded with `seed_from_u64`,
//! so a configuration maps to the same pencil on every platform.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::pencil::{DiagBlock, RealSchurPencil};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StressMode {
    #[default]
    None,
    /// Tiny diagonal of `T` with O(1) off-diagonals: eigenvectors grow by about 2^60 per row.
    Growth,
    /// Tightly clustered real eigenvalues: near-singular pivots.
    TinyPivots,
}

impl std::str::FromStr for StressMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "growth" => Ok(Self::Growth),
            "tiny_pivots" | "tiny-pivots" => Ok(Self::TinyPivots),
            _ => Err(Error::InvalidConfig(format!("unknown stress mode {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub m: usize,
    pub seed: u64,
    /// Expected fraction of zero eigenvalues (relative to `m`).
    pub fraction_zero: f64,
    /// Expected fraction of infinite eigenvalues (relative to `m`).
    pub fraction_infinite: f64,
    /// Fraction of eigenvalues that belong to complex-conjugate pairs.
    pub fraction_complex_pairs: f64,
    /// Off-diagonal magnitudes are `2^U(lo, hi)` with random signs.
    pub offdiag_log2_range: (f64, f64),
    pub stress: StressMode,
}

impl GeneratorConfig {
    pub fn new(m: usize, seed: u64) -> Self {
        Self { m, seed, fraction_zero: 0.01, fraction_infinite: 0.01, fraction_complex_pairs: 0.25, offdiag_log2_range: (-10.0, 10.0), stress: StressMode::None }
    }

    fn validate(&self) -> Result<()> {
        let fracs = [self.fraction_zero, self.fraction_infinite, self.fraction_complex_pairs];
        if self.m == 0 {
            return Err(Error::InvalidConfig("m must be at least 1".into()));
        }
        if fracs.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::InvalidConfig("fractions must lie in [0, 1]".into()));
        }
        if self.fraction_zero + self.fraction_infinite > 1.0 {
            return Err(Error::InvalidConfig("fraction_zero + fraction_infinite exceeds 1".into()));
        }
        let (lo, hi) = self.offdiag_log2_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi && hi < 1000.0) {
            return Err(Error::InvalidConfig("invalid off-diagonal magnitude range".into()));
        }
        if self.stress == StressMode::Growth && self.m < 20 {
            return Err(Error::InvalidConfig("growth stress needs m >= 20".into()));
        }
        Ok(())
    }
}

/// Eigenvalue counts planted by the generator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Planted {
    pub zeros: usize,
    pub infinite: usize,
    pub complex_pairs: usize,
}

#[derive(Clone, Debug)]
pub struct GeneratedPencil {
    pub pencil: RealSchurPencil,
    pub config: GeneratorConfig,
    pub planted: Planted,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Kind {
    Regular,
    Zero,
    Infinite,
    Pair,
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo.exp2()
    } else {
        rng.gen_range(lo..hi).exp2()
    }
}

/// `±2^U(lo, hi)`: magnitude first, then sign.
fn signed_log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let v = log_uniform(rng, lo, hi);
    if rng.gen::<bool>() {
        v
    } else {
        -v
    }
}

/// Generates a pencil according to `config`.
pub fn generate(config: &GeneratorConfig) -> Result<GeneratedPencil> {
    config.validate()?;
    if config.stress == StressMode::Growth {
        let pencil = generate_stress_growth(config.m, config.seed)?;
        return Ok(GeneratedPencil { pencil, config: config.clone(), planted: Planted::default() });
    }
    let m = config.m;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let pairs = (config.fraction_complex_pairs * m as f64 / 2.0).floor() as usize;
    let singles = m - 2 * pairs;
    let (pz, pi) = if singles == 0 {
        (0.0, 0.0)
    } else {
        (config.fraction_zero * m as f64 / singles as f64, config.fraction_infinite * m as f64 / singles as f64)
    };
    if pz + pi > 1.0 {
        return Err(Error::InvalidConfig("zero and infinite fractions exceed the number of real eigenvalues".into()));
    }

    let mut kinds: Vec<Kind> = Vec::with_capacity(singles + pairs);
    for _ in 0..singles {
        let u: f64 = rng.gen();
        kinds.push(if u < pz {
            Kind::Zero
        } else if u < pz + pi {
            Kind::Infinite
        } else {
            Kind::Regular
        });
    }
    kinds.extend(std::iter::repeat_n(Kind::Pair, pairs));
    kinds.shuffle(&mut rng);

    let mut s = Matrix::zeros(m, m);
    let mut t = Matrix::zeros(m, m);
    let mut blocks = Vec::with_capacity(kinds.len());
    let mut planted = Planted::default();
    let cluster = log_uniform(&mut rng, -1.0, 1.0);
    let mut i = 0;
    for kind in &kinds {
        match kind {
            Kind::Pair => {
                let c = log_uniform(&mut rng, -1.0, 1.0);
                let theta = rng.gen_range(std::f64::consts::FRAC_PI_4..3.0 * std::f64::consts::FRAC_PI_4);
                let (sn, cs) = theta.sin_cos();
                s[(i, i)] = c * cs;
                s[(i, i + 1)] = c * sn;
                s[(i + 1, i)] = -c * sn;
                s[(i + 1, i + 1)] = c * cs;
                let t1 = log_uniform(&mut rng, -1.0, 1.0);
                t[(i, i)] = t1;
                t[(i + 1, i + 1)] = t1 * rng.gen_range(0.9..1.1);
                blocks.push(DiagBlock { start: i, size: 2 });
                planted.complex_pairs += 1;
                i += 2;
            }
            single => {
                let tii = log_uniform(&mut rng, -1.0, 1.0);
                let lambda = match config.stress {
                    StressMode::TinyPivots => cluster * (1.0 + rng.gen_range(-1.0..1.0) * (-45.0f64).exp2()),
                    _ => signed_log_uniform(&mut rng, -1.0, 1.0),
                };
                match single {
                    Kind::Zero => {
                        t[(i, i)] = tii;
                        planted.zeros += 1;
                    }
                    Kind::Infinite => {
                        s[(i, i)] = signed_log_uniform(&mut rng, -1.0, 1.0);
                        planted.infinite += 1;
                    }
                    _ => {
                        t[(i, i)] = tii;
                        s[(i, i)] = lambda * tii;
                    }
                }
                blocks.push(DiagBlock { start: i, size: 1 });
                i += 1;
            }
        }
    }

    let (lo, hi) = config.offdiag_log2_range;
    let mut in_pair = vec![false; m];
    for b in &blocks {
        if b.size == 2 {
            in_pair[b.start] = true;
        }
    }
    for j in 0..m {
        for r in 0..j {
            if r + 1 == j && in_pair[r] {
                continue;
            }
            s[(r, j)] = signed_log_uniform(&mut rng, lo, hi);
            t[(r, j)] = signed_log_uniform(&mut rng, lo, hi);
        }
    }
    let pencil = RealSchurPencil::with_blocks(s, t, blocks)?;
    Ok(GeneratedPencil { pencil, config: config.clone(), planted })
}

/// Real, finite, distinct spectrum with `T_ii ~ 2^-60` and O(1) entries
/// elsewhere: unprotected substitution overflows within about 18 rows.
pub fn generate_stress_growth(m: usize, seed: u64) -> Result<RealSchurPencil> {
    if m < 20 {
        return Err(Error::InvalidConfig("growth stress needs m >= 20".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5e_ed0f_9a0e);
    let tiny = (-60.0f64).exp2();
    let mut s = Matrix::zeros(m, m);
    let mut t = Matrix::zeros(m, m);
    for j in 0..m {
        s[(j, j)] = rng.gen_range(1.0..2.0);
        t[(j, j)] = tiny * rng.gen_range(1.0..2.0);
        for r in 0..j {
            s[(r, j)] = rng.gen_range(-1.0..1.0);
            t[(r, j)] = rng.gen_range(0.5..1.0) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
        }
    }
    RealSchurPencil::with_blocks(s, t, (0..m).map(|i| DiagBlock { start: i, size: 1 }).collect())
}
