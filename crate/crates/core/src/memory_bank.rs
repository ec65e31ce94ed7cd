//! Momentum-averaged embedding stores, one per (pathway, level).
//!
//! Row `i` always holds instance `i`. Updates mix the stored row with the
//! freshly computed embedding, `row ← m·row + (1 − m)·new`, and re-normalize
//! so rows stay on the unit sphere.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::encoder::{Pathway, Tap};
use crate::error::{Error, Result};
use crate::seed::{stream_rng, STREAM_BANK_INIT};
use crate::tensor::{normalize_in_place, Real, Tensor};

/// Relative slack allowed on the unit-norm precondition of `update`.
const UNIT_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct MemoryBank<R> {
    n: usize,
    d: usize,
    entries: Vec<R>,
    pub momentum: f64,
    pub pathway: Pathway,
    pub level: Tap,
    pub seed: u64,
    renormalize: bool,
}

impl<R: Real> MemoryBank<R> {
    /// `n` i.i.d. uniformly random unit rows of width `d`.
    pub fn init(n: usize, d: usize, seed: u64) -> Result<Self> {
        Self::init_for(n, d, seed, Pathway::Slow, Tap::Res5, 0.5)
    }

    pub fn init_for(n: usize, d: usize, seed: u64, pathway: Pathway, level: Tap, momentum: f64) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::Config(format!("bank needs n, d >= 1, got n={n}, d={d}")));
        }
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::Config(format!("bank momentum {momentum} outside [0, 1]")));
        }
        let mut rng = stream_rng(seed, STREAM_BANK_INIT, 0);
        let mut entries = Vec::with_capacity(n * d);
        for _ in 0..n {
            let mut row: Vec<R> = (0..d)
                .map(|_| R::of(rng.sample::<f64, _>(StandardNormal)))
                .collect();
            normalize_in_place(&mut row);
            entries.extend(row);
        }
        Ok(Self {
            n,
            d,
            entries,
            momentum,
            pathway,
            level,
            seed,
            renormalize: true,
        })
    }

    /// Rebuild a bank from stored rows (checkpoint loading).
    pub fn from_rows(
        rows: Tensor<R>,
        momentum: f64,
        pathway: Pathway,
        level: Tap,
        seed: u64,
    ) -> Result<Self> {
        let s = rows.shape();
        if s.len() != 2 || s[0] == 0 || s[1] == 0 {
            return Err(Error::Shape(format!("bank rows must be [n, d], got {s:?}")));
        }
        Ok(Self {
            n: s[0],
            d: s[1],
            entries: rows.into_data(),
            momentum,
            pathway,
            level,
            seed,
            renormalize: true,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Test-harness switch; production banks always re-normalize.
    pub fn set_renormalize(&mut self, on: bool) {
        self.renormalize = on;
    }

    pub fn row(&self, i: usize) -> Result<&[R]> {
        if i >= self.n {
            return Err(Error::Lookup { index: i, len: self.n });
        }
        Ok(&self.entries[i * self.d..(i + 1) * self.d])
    }

    pub fn rows(&self) -> Tensor<R> {
        Tensor::from_vec(&[self.n, self.d], self.entries.clone()).expect("bank shape")
    }

    /// Copies of the requested rows, `[indices.len(), d]`.
    pub fn lookup(&self, indices: &[usize]) -> Result<Tensor<R>> {
        let mut data = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            data.extend_from_slice(self.row(i)?);
        }
        Tensor::from_vec(&[indices.len(), self.d], data)
    }

    pub fn update(&mut self, indices: &[usize], new_embeddings: &Tensor<R>) -> Result<()> {
        let s = new_embeddings.shape();
        if s.len() != 2 || s[0] != indices.len() || s[1] != self.d {
            return Err(Error::Shape(format!(
                "update of {} rows expects [{}, {}], got {:?}",
                indices.len(),
                indices.len(),
                self.d,
                s
            )));
        }
        let mut seen = BTreeSet::new();
        for &i in indices {
            if i >= self.n {
                return Err(Error::Lookup { index: i, len: self.n });
            }
            if !seen.insert(i) {
                return Err(Error::Validation(format!("duplicate index {i} in one bank update")));
            }
        }
        for (r, _) in indices.iter().enumerate() {
            let norm = crate::tensor::l2_norm(new_embeddings.slab(r)).f64();
            if (norm - 1.0).abs() > UNIT_TOLERANCE {
                return Err(Error::Validation(format!(
                    "bank update row {r} has norm {norm}, expected unit"
                )));
            }
        }
        let m = R::of(self.momentum);
        let keep = R::one() - m;
        for (r, &i) in indices.iter().enumerate() {
            let new = new_embeddings.slab(r);
            let row = &mut self.entries[i * self.d..(i + 1) * self.d];
            for (v, &x) in row.iter_mut().zip(new) {
                *v = m * *v + keep * x;
            }
            if self.renormalize {
                normalize_in_place(row);
            }
        }
        Ok(())
    }

    /// `count` distinct row ids drawn uniformly from all rows except `exclude`.
    pub fn sample_negatives(&self, exclude: usize, count: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
        if exclude >= self.n {
            return Err(Error::Lookup {
                index: exclude,
                len: self.n,
            });
        }
        if count == 0 || count > self.n - 1 {
            return Err(Error::Config(format!(
                "cannot draw {count} negatives from {} candidate rows",
                self.n - 1
            )));
        }
        Ok(rand::seq::index::sample(rng, self.n - 1, count)
            .into_iter()
            .map(|i| if i >= exclude { i + 1 } else { i })
            .collect())
    }
}

/// All `2|K|` banks of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct BankSet<R> {
    pub banks: BTreeMap<(Pathway, Tap), MemoryBank<R>>,
}

impl<R: Real> BankSet<R> {
    pub fn new(n: usize, d: usize, seed: u64, taps: &[Tap], momentum: f64) -> Result<Self> {
        let mut banks = BTreeMap::new();
        for &tap in taps {
            for pathway in [Pathway::Fast, Pathway::Slow] {
                let bank_seed = seed
                    .wrapping_mul(31)
                    .wrapping_add(1 + pathway as u64 * 8 + tap.stage() as u64);
                banks.insert(
                    (pathway, tap),
                    MemoryBank::init_for(n, d, bank_seed, pathway, tap, momentum)?,
                );
            }
        }
        Ok(Self { banks })
    }

    pub fn get(&self, pathway: Pathway, tap: Tap) -> Result<&MemoryBank<R>> {
        self.banks
            .get(&(pathway, tap))
            .ok_or_else(|| Error::Config(format!("no {pathway} bank for {tap}")))
    }

    pub fn get_mut(&mut self, pathway: Pathway, tap: Tap) -> Result<&mut MemoryBank<R>> {
        self.banks
            .get_mut(&(pathway, tap))
            .ok_or_else(|| Error::Config(format!("no {pathway} bank for {tap}")))
    }
}
