//! Projection heads, cosine similarity, InfoNCE and the hierarchical loss.
//!
//! For one level `k` the fast queries are scored against the slow bank and
//! the slow queries against the fast bank:
//!
//! ```text
//! L_f = mean_i −log softmax(h(q_f,i, B_s[i]), h(q_f,i, B_s[n_1]), …)[0]
//! L_s = mean_i −log softmax(h(q_s,i, B_f[i]), h(q_s,i, B_f[n_1]), …)[0]
//! L_total = Σ_k λ_k (L_f^k + L_s^k)
//! ```
//!
//! with `h(u, v) = u·v / (T‖u‖‖v‖)`. Bank rows are constants: gradients
//! flow only into the query embeddings.

use std::collections::BTreeMap;

use rand::Rng;

use crate::encoder::{pool_backward, BatchPyramid, Pathway, Tap};
use crate::error::{Error, Result};
use crate::memory_bank::{BankSet, MemoryBank};
use crate::nn::{relu_backward, relu_in_place, Linear, Param};
use crate::tensor::{dot, l2_norm, Real, Tensor};

/// `linear → ReLU → linear`, hidden width equal to the input width.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionHead<R> {
    pub fc1: Linear<R>,
    pub fc2: Linear<R>,
}

#[derive(Clone, Debug)]
pub struct HeadCache<R> {
    input: Tensor<R>,
    hidden: Tensor<R>,
}

impl<R: Real> ProjectionHead<R> {
    pub fn new(name: &str, input: usize, embed_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            fc1: Linear::new(&format!("{name}.fc1"), input, input, rng),
            fc2: Linear::new(&format!("{name}.fc2"), input, embed_dim, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.fc1.input_dim()
    }

    pub fn embed_dim(&self) -> usize {
        self.fc2.output_dim()
    }

    /// `[B, C]` → `[B, d]` (not normalized).
    pub fn forward(&self, x: &Tensor<R>) -> Result<(Tensor<R>, HeadCache<R>)> {
        let mut hidden = self.fc1.forward(x)?;
        relu_in_place(&mut hidden);
        let out = self.fc2.forward(&hidden)?;
        Ok((
            out,
            HeadCache {
                input: x.clone(),
                hidden,
            },
        ))
    }

    pub fn backward(&mut self, cache: &HeadCache<R>, dout: &Tensor<R>) -> Tensor<R> {
        let mut dh = self.fc2.backward(&cache.hidden, dout);
        relu_backward(&cache.hidden, &mut dh);
        self.fc1.backward(&cache.input, &dh)
    }

    pub fn params(&self) -> Vec<&Param<R>> {
        vec![&self.fc1.weight, &self.fc1.bias, &self.fc2.weight, &self.fc2.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<R>> {
        vec![
            &mut self.fc1.weight,
            &mut self.fc1.bias,
            &mut self.fc2.weight,
            &mut self.fc2.bias,
        ]
    }
}

/// One head per (pathway, level).
#[derive(Clone, Debug, PartialEq)]
pub struct HeadSet<R> {
    pub heads: BTreeMap<(Pathway, Tap), ProjectionHead<R>>,
}

impl<R: Real> HeadSet<R> {
    pub fn get(&self, pathway: Pathway, tap: Tap) -> Result<&ProjectionHead<R>> {
        self.heads
            .get(&(pathway, tap))
            .ok_or_else(|| Error::Config(format!("no {pathway} head for {tap}")))
    }

    pub fn params(&self) -> Vec<&Param<R>> {
        self.heads.values().flat_map(|h| h.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<R>> {
        self.heads.values_mut().flat_map(|h| h.params_mut()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub temperature: f64,
    /// Negatives per query.
    pub negatives: usize,
    /// Levels `K` and their weights `λ_k`.
    pub levels: BTreeMap<Tap, f64>,
}

impl LossConfig {
    pub fn validate(&self, bank_rows: usize) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!("temperature {} must be > 0", self.temperature)));
        }
        if self.negatives == 0 || self.negatives + 1 > bank_rows {
            return Err(Error::Config(format!(
                "negatives={} must lie in 1..={}",
                self.negatives,
                bank_rows.saturating_sub(1)
            )));
        }
        if self.levels.is_empty() || self.levels.values().any(|&w| !(w >= 0.0)) {
            return Err(Error::Config("level weights must be non-empty and non-negative".into()));
        }
        Ok(())
    }
}

fn check_pair<R: Real>(u: &[R], v: &[R]) -> Result<(R, R)> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!("vector lengths {} and {}", u.len(), v.len())));
    }
    let (nu, nv) = (l2_norm(u), l2_norm(v));
    if !(nu > R::zero()) || !(nv > R::zero()) {
        return Err(Error::Degenerate("similarity of a zero vector".into()));
    }
    Ok((nu, nv))
}

/// Temperature-scaled cosine similarity.
pub fn similarity<R: Real>(u: &[R], v: &[R], temperature: R) -> Result<R> {
    let (nu, nv) = check_pair(u, v)?;
    Ok(dot(u, v) / (temperature * nu * nv))
}

fn log_sum_exp<R: Real>(z: &[R]) -> R {
    let max = z.iter().copied().fold(R::neg_infinity(), R::max);
    max + z.iter().map(|&v| (v - max).exp()).sum::<R>().ln()
}

/// InfoNCE value, its gradient w.r.t. the raw query, and the logits.
pub struct InfoNceTerm<R> {
    pub loss: R,
    pub grad: Vec<R>,
    pub logits: Vec<R>,
}

/// Cross-entropy of a softmax over `{positive} ∪ negatives`, target positive.
pub fn info_nce<R: Real>(query: &[R], positive: &[R], negatives: &[&[R]], temperature: R) -> Result<R> {
    Ok(info_nce_with_grad(query, positive, negatives, temperature)?.loss)
}

pub fn info_nce_with_grad<R: Real>(
    query: &[R],
    positive: &[R],
    negatives: &[&[R]],
    temperature: R,
) -> Result<InfoNceTerm<R>> {
    if negatives.is_empty() {
        return Err(Error::Degenerate("InfoNCE needs at least one negative".into()));
    }
    let qn = l2_norm(query);
    let mut logits = Vec::with_capacity(negatives.len() + 1);
    let mut units: Vec<Vec<R>> = Vec::with_capacity(negatives.len() + 1);
    for cand in std::iter::once(positive).chain(negatives.iter().copied()) {
        let (_, cn) = check_pair(query, cand)?;
        logits.push(dot(query, cand) / (temperature * qn * cn));
        units.push(cand.iter().map(|&c| c / cn).collect());
    }
    let lse = log_sum_exp(&logits);
    let loss = lse - logits[0];

    let d = query.len();
    let mut g_unit = vec![R::zero(); d];
    for (j, (z, u)) in logits.iter().zip(&units).enumerate() {
        let mut w = (*z - lse).exp();
        if j == 0 {
            w -= R::one();
        }
        let w = w / temperature;
        for (g, &c) in g_unit.iter_mut().zip(u) {
            *g += w * c;
        }
    }
    let q_unit: Vec<R> = query.iter().map(|&q| q / qn).collect();
    let proj = dot(&q_unit, &g_unit);
    let grad = g_unit
        .iter()
        .zip(&q_unit)
        .map(|(&g, &q)| (g - q * proj) / qn)
        .collect();
    Ok(InfoNceTerm { loss, grad, logits })
}

/// Negative row ids for every query of a level, per direction.
#[derive(Clone, Debug, PartialEq)]
pub struct NegativePlan {
    /// Negatives of fast queries, drawn from the slow bank.
    pub fast: Vec<Vec<usize>>,
    /// Negatives of slow queries, drawn from the fast bank.
    pub slow: Vec<Vec<usize>>,
}

impl NegativePlan {
    pub fn sample<R: Real>(
        bank_fast: &MemoryBank<R>,
        bank_slow: &MemoryBank<R>,
        indices: &[usize],
        count: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut fast = Vec::with_capacity(indices.len());
        let mut slow = Vec::with_capacity(indices.len());
        for &i in indices {
            fast.push(bank_slow.sample_negatives(i, count, rng)?);
            slow.push(bank_fast.sample_negatives(i, count, rng)?);
        }
        Ok(Self { fast, slow })
    }
}

#[derive(Clone, Debug)]
pub struct LevelLoss<R> {
    /// Batch-mean `L_f`.
    pub fast: R,
    /// Batch-mean `L_s`.
    pub slow: R,
    /// `∂(L_f + L_s)/∂` raw fast embeddings, `[B, d]`.
    pub grad_fast: Tensor<R>,
    pub grad_slow: Tensor<R>,
    /// Logits of the first row in each direction, kept for diagnostics.
    pub sample_logits: [Vec<R>; 2],
}

impl<R: Real> LevelLoss<R> {
    pub fn total(&self) -> R {
        self.fast + self.slow
    }
}

fn directional<R: Real>(
    queries: &Tensor<R>,
    bank: &MemoryBank<R>,
    indices: &[usize],
    negatives: &[Vec<usize>],
    temperature: R,
) -> Result<(R, Tensor<R>, Vec<R>)> {
    let b = indices.len();
    let inv_b = R::one() / R::of(b as f64);
    let mut grad = Tensor::zeros(queries.shape());
    let mut sum = R::zero();
    let mut first_logits = Vec::new();
    for (r, &i) in indices.iter().enumerate() {
        let pos = bank.row(i)?;
        let negs = negatives[r]
            .iter()
            .map(|&j| bank.row(j))
            .collect::<Result<Vec<_>>>()?;
        let term = info_nce_with_grad(queries.slab(r), pos, &negs, temperature)?;
        sum += term.loss;
        for (g, &v) in grad.slab_mut(r).iter_mut().zip(&term.grad) {
            *g = v * inv_b;
        }
        if r == 0 {
            first_logits = term.logits;
        }
    }
    Ok((sum * inv_b, grad, first_logits))
}

/// `L_f + L_s` for one level with a fixed negative plan.
#[allow(clippy::too_many_arguments)]
pub fn bidirectional_level_loss<R: Real>(
    batch_fast: &Tensor<R>,
    batch_slow: &Tensor<R>,
    bank_fast: &MemoryBank<R>,
    bank_slow: &MemoryBank<R>,
    indices: &[usize],
    plan: &NegativePlan,
    temperature: f64,
) -> Result<LevelLoss<R>> {
    let b = indices.len();
    let d = bank_fast.dim();
    for (name, t) in [("fast", batch_fast), ("slow", batch_slow)] {
        if t.shape() != [b, d] {
            return Err(Error::Shape(format!(
                "{name} batch must be [{b}, {d}], got {:?}",
                t.shape()
            )));
        }
    }
    if bank_slow.dim() != d || plan.fast.len() != b || plan.slow.len() != b {
        return Err(Error::Shape("bank width or negative plan does not match batch".into()));
    }
    let t = R::of(temperature);
    let (fast, grad_fast, lf) = directional(batch_fast, bank_slow, indices, &plan.fast, t)?;
    let (slow, grad_slow, ls) = directional(batch_slow, bank_fast, indices, &plan.slow, t)?;
    Ok(LevelLoss {
        fast,
        slow,
        grad_fast,
        grad_slow,
        sample_logits: [lf, ls],
    })
}

/// Sample negatives and evaluate one level.
#[allow(clippy::too_many_arguments)]
pub fn bidirectional_level_loss_sampled<R: Real>(
    batch_fast: &Tensor<R>,
    batch_slow: &Tensor<R>,
    bank_fast: &MemoryBank<R>,
    bank_slow: &MemoryBank<R>,
    indices: &[usize],
    config: &LossConfig,
    rng: &mut impl Rng,
) -> Result<LevelLoss<R>> {
    let plan = NegativePlan::sample(bank_fast, bank_slow, indices, config.negatives, rng)?;
    bidirectional_level_loss(
        batch_fast,
        batch_slow,
        bank_fast,
        bank_slow,
        indices,
        &plan,
        config.temperature,
    )
}

pub struct HierarchicalLoss<R> {
    pub total: R,
    pub levels: BTreeMap<Tap, LevelLoss<R>>,
    /// Raw head outputs per (pathway, level), `[B, d]`.
    pub embeddings: BTreeMap<(Pathway, Tap), Tensor<R>>,
    weights: BTreeMap<Tap, f64>,
    caches: BTreeMap<(Pathway, Tap), HeadCache<R>>,
    act_shapes: BTreeMap<(Pathway, Tap), Vec<usize>>,
}

/// Per-tap activation gradients for the fast and slow encoders.
pub struct TapGrads<R> {
    pub fast: BTreeMap<Tap, Tensor<R>>,
    pub slow: BTreeMap<Tap, Tensor<R>>,
}

/// `Σ_k λ_k (L_f^k + L_s^k)` over the configured levels.
pub fn hierarchical_loss<R: Real>(
    fast: &BatchPyramid<R>,
    slow: &BatchPyramid<R>,
    heads: &HeadSet<R>,
    banks: &BankSet<R>,
    indices: &[usize],
    plans: &BTreeMap<Tap, NegativePlan>,
    config: &LossConfig,
) -> Result<HierarchicalLoss<R>> {
    let mut total = R::zero();
    let mut levels = BTreeMap::new();
    let mut embeddings = BTreeMap::new();
    let mut caches = BTreeMap::new();
    let mut act_shapes = BTreeMap::new();
    for (&tap, &weight) in &config.levels {
        let mut emb = BTreeMap::new();
        for (pathway, pyr) in [(Pathway::Fast, fast), (Pathway::Slow, slow)] {
            let pooled = pyr
                .pooled
                .get(&tap)
                .ok_or_else(|| Error::Config(format!("{pathway} pyramid has no tap {tap}")))?;
            let (e, cache) = heads.get(pathway, tap)?.forward(pooled)?;
            act_shapes.insert((pathway, tap), pyr.activations[&tap].shape().to_vec());
            caches.insert((pathway, tap), cache);
            emb.insert(pathway, e);
        }
        let plan = plans
            .get(&tap)
            .ok_or_else(|| Error::Config(format!("no negative plan for {tap}")))?;
        let level = bidirectional_level_loss(
            &emb[&Pathway::Fast],
            &emb[&Pathway::Slow],
            banks.get(Pathway::Fast, tap)?,
            banks.get(Pathway::Slow, tap)?,
            indices,
            plan,
            config.temperature,
        )?;
        total += R::of(weight) * level.total();
        levels.insert(tap, level);
        for (p, e) in emb {
            embeddings.insert((p, tap), e);
        }
    }
    Ok(HierarchicalLoss {
        total,
        levels,
        embeddings,
        weights: config.levels.clone(),
        caches,
        act_shapes,
    })
}

impl<R: Real> HierarchicalLoss<R> {
    /// Back-propagate through the heads (accumulating their gradients) down
    /// to the pre-pool tap activations.
    pub fn backward(&self, heads: &mut HeadSet<R>) -> Result<TapGrads<R>> {
        let mut out = TapGrads {
            fast: BTreeMap::new(),
            slow: BTreeMap::new(),
        };
        for (&tap, level) in &self.levels {
            let w = R::of(self.weights[&tap]);
            for (pathway, g) in [(Pathway::Fast, &level.grad_fast), (Pathway::Slow, &level.grad_slow)] {
                let scaled = g.map(|v| v * w);
                let head = heads
                    .heads
                    .get_mut(&(pathway, tap))
                    .ok_or_else(|| Error::Config(format!("no {pathway} head for {tap}")))?;
                let dpooled = head.backward(&self.caches[&(pathway, tap)], &scaled);
                let dact = pool_backward(&self.act_shapes[&(pathway, tap)], &dpooled);
                match pathway {
                    Pathway::Fast => out.fast.insert(tap, dact),
                    Pathway::Slow => out.slow.insert(tap, dact),
                };
            }
        }
        Ok(out)
    }

    /// Unit-normalized embeddings, detached, for the bank update.
    pub fn unit_embeddings(&self) -> BTreeMap<(Pathway, Tap), Tensor<R>> {
        self.embeddings
            .iter()
            .map(|(&k, e)| {
                let mut u = e.clone();
                let d = e.shape()[1];
                for row in u.data_mut().chunks_mut(d) {
                    crate::tensor::normalize_in_place(row);
                }
                (k, u)
            })
            .collect()
    }
}
