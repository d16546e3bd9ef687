//! Constant-time discrete sampling.
//!
//! [`AliasTable`] is Vose's alias method: O(n) construction, two uniform draws
//! per sample. The positive-pair samplers and the negative-sampling noise
//! distributions are thin wrappers around it.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{AttributeMatrix, NodeId};
use crate::walks::PairCounts;

#[derive(Debug, Clone, PartialEq)]
pub struct AliasTable {
    prob: Vec<f64>,
    alias: Vec<u32>,
}

impl AliasTable {
    /// Fails if any weight is negative or non-finite, or if none is positive.
    pub fn new(weights: &[f64]) -> Result<Self> {
        let n = weights.len();
        if n == 0 {
            return Err(Error::InvalidWeights("no categories".into()));
        }
        if n > u32::MAX as usize {
            return Err(Error::InvalidWeights(format!("{n} categories exceed u32 range")));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidWeights(format!("weight {w} is negative or not finite")));
        }
        let sum: f64 = weights.iter().sum();
        if !(sum.is_finite() && sum > 0.0) {
            return Err(Error::InvalidWeights(format!("weights sum to {sum}")));
        }

        let scale = n as f64 / sum;
        let mut scaled: Vec<f64> = weights.iter().map(|w| w * scale).collect();
        let mut prob = vec![0.0; n];
        let mut alias: Vec<u32> = (0..n as u32).collect();
        let mut small = Vec::with_capacity(n);
        let mut large = Vec::with_capacity(n);
        for (i, &p) in scaled.iter().enumerate() {
            if p < 1.0 {
                small.push(i);
            } else {
                large.push(i);
            }
        }
        while let (Some(&s), Some(&l)) = (small.last(), large.last()) {
            small.pop();
            prob[s] = scaled[s];
            alias[s] = l as u32;
            // Donate 1 - p_s of l's mass to fill column s.
            scaled[l] -= 1.0 - scaled[s];
            if scaled[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        // Leftovers are 1 up to rounding.
        for i in large.into_iter().chain(small) {
            prob[i] = 1.0;
        }
        Ok(AliasTable { prob, alias })
    }

    pub fn len(&self) -> usize {
        self.prob.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prob.is_empty()
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let column = rng.gen_range(0..self.prob.len());
        if rng.gen::<f64>() < self.prob[column] {
            column
        } else {
            self.alias[column] as usize
        }
    }

    /// Probability of each category implied by the table.
    pub fn probabilities(&self) -> Vec<f64> {
        let n = self.len() as f64;
        let mut p: Vec<f64> = self.prob.iter().map(|q| q / n).collect();
        for (column, &a) in self.alias.iter().enumerate() {
            p[a as usize] += (1.0 - self.prob[column]) / n;
        }
        p
    }

    pub fn raw(&self) -> (&[f64], &[u32]) {
        (&self.prob, &self.alias)
    }
}

/// Noise distribution for negative sampling: base frequencies raised to
/// `power`. Zero-frequency categories are never drawn.
#[derive(Debug, Clone)]
pub struct NoiseDistribution {
    table: AliasTable,
    power: f64,
    /// Set when exactly one category can be drawn.
    sole: Option<usize>,
}

impl NoiseDistribution {
    pub fn new(frequencies: &[f64], power: f64) -> Result<Self> {
        if !power.is_finite() || power < 0.0 {
            return Err(Error::Config(format!("noise power {power} must be finite and >= 0")));
        }
        let weights: Vec<f64> = frequencies
            .iter()
            .map(|&f| if f > 0.0 { f.powf(power) } else { 0.0 })
            .collect();
        let table = AliasTable::new(&weights)?;
        let mut positive = weights.iter().enumerate().filter(|(_, w)| **w > 0.0);
        let sole = match (positive.next(), positive.next()) {
            (Some((i, _)), None) => Some(i),
            _ => None,
        };
        Ok(NoiseDistribution { table, power, sole })
    }

    /// Node noise: occurrence frequency of each node as a pair center.
    pub fn for_nodes(counts: &PairCounts, node_count: usize, power: f64) -> Result<Self> {
        let freq: Vec<f64> = counts.center_frequencies(node_count).into_iter().map(|f| f as f64).collect();
        Self::new(&freq, power).map_err(|e| match e {
            Error::InvalidWeights(_) => Error::EmptyDistribution("pair-count noise distribution"),
            e => e,
        })
    }

    /// Attribute noise: column sums of X.
    pub fn for_attributes(attrs: &AttributeMatrix, power: f64) -> Result<Self> {
        Self::new(&attrs.column_sums(), power).map_err(|e| match e {
            Error::InvalidWeights(_) => Error::EmptyDistribution("attribute noise distribution"),
            e => e,
        })
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    pub fn table(&self) -> &AliasTable {
        &self.table
    }

    /// Appends `k` independent draws to `out`, redrawing any that hit
    /// `exclude`. Repeats among the drawn indices are allowed.
    #[inline]
    pub fn draw_into<R: Rng + ?Sized>(
        &self,
        k: usize,
        exclude: usize,
        rng: &mut R,
        out: &mut Vec<u32>,
    ) -> Result<()> {
        if self.sole == Some(exclude) {
            return Err(Error::DegenerateNoise(exclude));
        }
        for _ in 0..k {
            let idx = loop {
                let i = self.table.sample(rng);
                if i != exclude {
                    break i;
                }
            };
            out.push(idx as u32);
        }
        Ok(())
    }

    pub fn draw<R: Rng + ?Sized>(&self, k: usize, exclude: usize, rng: &mut R) -> Result<Vec<u32>> {
        let mut out = Vec::with_capacity(k);
        self.draw_into(k, exclude, rng, &mut out)?;
        Ok(out)
    }
}

/// Draws (v_i, v_j) with probability n(v_i, v_j) / Σ n.
#[derive(Debug, Clone)]
pub struct PairSampler {
    pairs: Vec<(u32, u32)>,
    table: AliasTable,
}

impl PairSampler {
    pub fn new(counts: &PairCounts) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::EmptyDistribution("pair counts"));
        }
        let weights: Vec<f64> = counts.pairs().iter().map(|p| p.count as f64).collect();
        Ok(PairSampler {
            pairs: counts.pairs().iter().map(|p| (p.center, p.context)).collect(),
            table: AliasTable::new(&weights)?,
        })
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (NodeId, NodeId) {
        let (c, x) = self.pairs[self.table.sample(rng)];
        (NodeId(c), NodeId(x))
    }
}

/// Draws (v_i, a_j) with probability X_ij / Σ X.
#[derive(Debug, Clone)]
pub struct AttrPairSampler {
    pairs: Vec<(u32, u32)>,
    table: AliasTable,
}

impl AttrPairSampler {
    pub fn new(attrs: &AttributeMatrix) -> Result<Self> {
        if attrs.nnz() == 0 {
            return Err(Error::EmptyDistribution("attribute matrix"));
        }
        let weights: Vec<f64> = attrs.entries().iter().map(|t| t.weight).collect();
        Ok(AttrPairSampler {
            pairs: attrs.entries().iter().map(|t| (t.node, t.attr)).collect(),
            table: AliasTable::new(&weights)?,
        })
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (NodeId, usize) {
        let (n, a) = self.pairs[self.table.sample(rng)];
        (NodeId(n), a as usize)
    }
}
