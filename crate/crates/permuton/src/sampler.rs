//! Desk-scale Metropolis sampling of restricted permutations under the
//! inversion-weighted measure, the correspondence with vertex-type grids,
//! and empirical height functions for cross-checking computed limit shapes.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::region::RegionSpec;

/// The discretization of a region spec at system size `n`: integer cuts
/// `X_u = round(x_u n)`, `Y_v = round(y_v n)`.
#[derive(Debug, Clone)]
pub struct DiscreteRegion {
    pub n: usize,
    x_cuts: Vec<usize>,
    y_cuts: Vec<usize>,
    /// Cell lookup tables: value/position (1-based) -> strip index.
    u_of: Vec<usize>,
    v_of: Vec<usize>,
    allowed: Vec<bool>, // (pos-1) * n + (val-1)
}

impl DiscreteRegion {
    pub fn new(spec: &RegionSpec, n: usize) -> Result<Self> {
        spec.validate()?;
        if n == 0 {
            return Err(Error::InvalidSpec("system size must be positive".into()));
        }
        let cuts = |breaks: &[f64]| -> Result<Vec<usize>> {
            let c: Vec<usize> = breaks
                .iter()
                .map(|b| (b * n as f64).round() as usize)
                .collect();
            if c.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::InvalidSpec(format!(
                    "breakpoints collide at system size {n}"
                )));
            }
            Ok(c)
        };
        let x_cuts = cuts(&spec.x)?;
        let y_cuts = cuts(&spec.y)?;
        let strip = |cuts: &[usize], t: usize| cuts.partition_point(|&c| c < t) - 1;
        let u_of: Vec<usize> = (1..=n).map(|val| strip(&x_cuts, val)).collect();
        let v_of: Vec<usize> = (1..=n).map(|pos| strip(&y_cuts, pos)).collect();
        let mut allowed = vec![false; n * n];
        for pos in 1..=n {
            for val in 1..=n {
                allowed[(pos - 1) * n + (val - 1)] =
                    spec.support.get(u_of[val - 1], v_of[pos - 1]);
            }
        }
        Ok(Self {
            n,
            x_cuts,
            y_cuts,
            u_of,
            v_of,
            allowed,
        })
    }

    /// May the point `(val, pos)` be occupied?
    pub fn allows(&self, val: usize, pos: usize) -> bool {
        self.allowed[(pos - 1) * self.n + (val - 1)]
    }

    pub fn x_cuts(&self) -> &[usize] {
        &self.x_cuts
    }

    pub fn y_cuts(&self) -> &[usize] {
        &self.y_cuts
    }

    /// Any restricted permutation, by augmenting-path matching of positions
    /// to values; `None` if the region admits none.
    pub fn initial_permutation(&self) -> Option<Vec<usize>> {
        let n = self.n;
        let mut pos_of_val = vec![0usize; n + 1]; // 0 = unmatched
        let mut matched = 0;
        for pos in 1..=n {
            let mut seen = vec![false; n + 1];
            if self.augment(pos, &mut pos_of_val, &mut seen) {
                matched += 1;
            }
        }
        if matched < n {
            return None;
        }
        let mut sigma = vec![0usize; n];
        for val in 1..=n {
            sigma[pos_of_val[val] - 1] = val;
        }
        Some(sigma)
    }

    fn augment(&self, pos: usize, pos_of_val: &mut [usize], seen: &mut [bool]) -> bool {
        for val in 1..=self.n {
            if !self.allows(val, pos) || seen[val] {
                continue;
            }
            seen[val] = true;
            if pos_of_val[val] == 0 || {
                let displaced = pos_of_val[val];
                self.augment(displaced, pos_of_val, seen)
            } {
                pos_of_val[val] = pos;
                return true;
            }
        }
        false
    }

    /// Strip index of a value (x-direction).
    pub fn u_of_value(&self, val: usize) -> usize {
        self.u_of[val - 1]
    }

    /// Strip index of a position (y-direction).
    pub fn v_of_position(&self, pos: usize) -> usize {
        self.v_of[pos - 1]
    }
}

/// Exact inversion count by merge counting, `O(n log n)`.
pub fn inv_count(sigma: &[usize]) -> u64 {
    fn merge_count(a: &mut Vec<usize>, buf: &mut Vec<usize>) -> u64 {
        let n = a.len();
        if n <= 1 {
            return 0;
        }
        let mid = n / 2;
        let mut right = a.split_off(mid);
        let mut inv = merge_count(a, buf) + merge_count(&mut right, buf);
        buf.clear();
        let (mut i, mut j) = (0, 0);
        while i < a.len() || j < right.len() {
            if j == right.len() || (i < a.len() && a[i] <= right[j]) {
                buf.push(a[i]);
                i += 1;
            } else {
                inv += (a.len() - i) as u64;
                buf.push(right[j]);
                j += 1;
            }
        }
        a.clear();
        a.extend_from_slice(buf);
        inv
    }
    let mut work = sigma.to_vec();
    let mut buf = Vec::with_capacity(work.len());
    merge_count(&mut work, &mut buf)
}

/// A Metropolis chain over restricted permutations with stationary weight
/// `q^{inversions}`, `q = exp(-r/n)`. Proposals are uniformly random value
/// transpositions; moves leaving the region are rejected.
pub struct Chain {
    region: DiscreteRegion,
    sigma: Vec<usize>,
    inversions: u64,
    ln_q: f64,
    rng: ChaCha8Rng,
    proposals: u64,
}

impl Chain {
    pub fn new(spec: &RegionSpec, n: usize, seed: u64) -> Result<Self> {
        let region = DiscreteRegion::new(spec, n)?;
        let sigma = region
            .initial_permutation()
            .ok_or(Error::Infeasible { n })?;
        let inversions = inv_count(&sigma);
        Ok(Self {
            region,
            sigma,
            inversions,
            ln_q: -spec.r / n as f64,
            rng: ChaCha8Rng::seed_from_u64(seed),
            proposals: 0,
        })
    }

    pub fn sigma(&self) -> &[usize] {
        &self.sigma
    }

    pub fn inversions(&self) -> u64 {
        self.inversions
    }

    pub fn proposals(&self) -> u64 {
        self.proposals
    }

    /// One proposal: swap the values at two distinct positions, reject on
    /// restriction violation, else accept with probability
    /// `min(1, q^{delta inversions})`.
    pub fn step(&mut self) {
        let n = self.region.n;
        self.proposals += 1;
        if n < 2 {
            return;
        }
        let i = self.rng.random_range(0..n);
        let mut j = self.rng.random_range(0..n);
        while j == i {
            j = self.rng.random_range(0..n);
        }
        let (i, j) = (i.min(j), i.max(j));
        let (a, b) = (self.sigma[i], self.sigma[j]);
        if !self.region.allows(b, i + 1) || !self.region.allows(a, j + 1) {
            return;
        }
        let (lo, hi) = (a.min(b), a.max(b));
        let between = self.sigma[i + 1..j]
            .iter()
            .filter(|&&c| lo < c && c < hi)
            .count() as i64;
        let delta = if a < b { 2 * between + 1 } else { -(2 * between + 1) };
        let log_accept = self.ln_q * delta as f64;
        if log_accept < 0.0 && self.rng.random::<f64>() >= log_accept.exp() {
            return;
        }
        self.sigma.swap(i, j);
        self.inversions = self.inversions.wrapping_add_signed(delta);
    }

    fn into_sample(self, seed: u64) -> PermutationSample {
        let inversions = inv_count(&self.sigma);
        debug_assert_eq!(inversions, self.inversions);
        PermutationSample {
            n: self.region.n,
            sweeps: self.proposals.div_ceil(self.region.n as u64),
            sigma: self.sigma,
            inversions,
            seed,
        }
    }
}

/// One sampled restricted permutation with its provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PermutationSample {
    pub n: usize,
    /// `sigma[m-1]` is the value at position `m` (both 1-based).
    pub sigma: Vec<usize>,
    pub inversions: u64,
    pub seed: u64,
    /// Total proposals, in units of `n`.
    pub sweeps: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct SampleOptions {
    /// Burn-in length in sweeps of `n` proposals each; default `n^2` sweeps.
    pub burn_in_sweeps: Option<u64>,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self {
            burn_in_sweeps: None,
        }
    }
}

/// Run the chain for the default burn-in plus `steps` further proposals and
/// return the final state. Deterministic in `(spec, n, steps, seed)`.
pub fn sample(spec: &RegionSpec, n: usize, steps: u64, seed: u64) -> Result<PermutationSample> {
    sample_with_options(spec, n, steps, seed, SampleOptions::default())
}

pub fn sample_with_options(
    spec: &RegionSpec,
    n: usize,
    steps: u64,
    seed: u64,
    opts: SampleOptions,
) -> Result<PermutationSample> {
    let mut chain = Chain::new(spec, n, seed)?;
    let burn_in_sweeps = opts.burn_in_sweeps.unwrap_or((n * n) as u64);
    let burn_in = burn_in_sweeps * n as u64;
    for _ in 0..burn_in + steps {
        chain.step();
    }
    Ok(chain.into_sample(seed))
}

/// Vertex types of the path configuration determined by a permutation:
/// type 5 corners at the permutation points, types 1-4 filled in by which
/// of the two path families pass through each site. Type 6 never occurs in
/// this ensemble.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SixVertexGrid {
    pub n: usize,
    /// `types[(m-1) * n + (j-1)]` for row `m` (from the bottom) and column
    /// `j`, values in `1..=5`.
    pub types: Vec<u8>,
}

impl SixVertexGrid {
    /// Integer CSV, rows printed top to bottom.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.n * self.n * 2);
        for m in (1..=self.n).rev() {
            let row: Vec<String> = (1..=self.n)
                .map(|j| self.types[(m - 1) * self.n + (j - 1)].to_string())
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Reconstruct the vertex-type grid of a permutation. Row `m` carries its
/// corner at column `sigma(m)`; a site sees the horizontal path while left
/// of the corner and the vertical path once the column's corner lies below.
pub fn to_six_vertex(sample: &PermutationSample) -> SixVertexGrid {
    let n = sample.n;
    let mut pos_of_val = vec![0usize; n + 1];
    for (idx, &val) in sample.sigma.iter().enumerate() {
        pos_of_val[val] = idx + 1;
    }
    let mut types = vec![0u8; n * n];
    for m in 1..=n {
        let corner = sample.sigma[m - 1];
        let mut counts = [0usize; 6];
        for j in 1..=n {
            let t = if j == corner {
                5
            } else if j < corner {
                if pos_of_val[j] < m {
                    2
                } else {
                    3
                }
            } else if pos_of_val[j] < m {
                4
            } else {
                1
            };
            counts[t as usize - 1] += 1;
            types[(m - 1) * n + (j - 1)] = t;
        }
        // Per-row tallies determined by the permutation alone.
        let above = (1..m).filter(|&i| sample.sigma[i - 1] > corner).count();
        let below = m - 1 - above;
        assert_eq!(counts[4], 1);
        assert_eq!(counts[1], below);
        assert_eq!(counts[3], above);
        assert_eq!(counts[0], n - corner - above);
        assert_eq!(counts[2], corner - 1 - below);
    }
    SixVertexGrid { n, types }
}

/// Discrete height function on an `(n_grid + 1)^2` corner lattice:
/// `h(x, y) = #{m <= y n : sigma(m) > x n} / n`, indexed `j * (n_grid + 1) + i`.
pub fn empirical_height(sample: &PermutationSample, n_grid: usize) -> Vec<f64> {
    let n = sample.n as f64;
    let side = n_grid + 1;
    let mut h = vec![0.0; side * side];
    for j in 0..side {
        let rows = ((j as f64 / n_grid as f64) * n + 1e-9).floor() as usize;
        for i in 0..side {
            let threshold = ((i as f64 / n_grid as f64) * n + 1e-9).floor() as usize;
            let count = sample.sigma[..rows.min(sample.n)]
                .iter()
                .filter(|&&val| val > threshold)
                .count();
            h[j * side + i] = count as f64 / n;
        }
    }
    h
}

/// All permutations restricted by the discretized region, by backtracking.
/// Intended for desk-scale exactness tests (`n` at most ~10).
pub fn enumerate_restricted(spec: &RegionSpec, n: usize) -> Result<Vec<Vec<usize>>> {
    let region = DiscreteRegion::new(spec, n)?;
    let mut out = Vec::new();
    let mut used = vec![false; n + 1];
    let mut current = Vec::with_capacity(n);
    fn rec(
        region: &DiscreteRegion,
        used: &mut [bool],
        current: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        let n = region.n;
        let pos = current.len() + 1;
        if pos > n {
            out.push(current.clone());
            return;
        }
        for val in 1..=n {
            if !used[val] && region.allows(val, pos) {
                used[val] = true;
                current.push(val);
                rec(region, used, current, out);
                current.pop();
                used[val] = false;
            }
        }
    }
    rec(&region, &mut used, &mut current, &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::region::SupportGrid;
    use std::collections::HashMap;

    fn spec(x: Vec<f64>, y: Vec<f64>, cols: &[&[u8]], r: f64) -> RegionSpec {
        let support =
            SupportGrid::from_ints(&cols.iter().map(|c| c.to_vec()).collect::<Vec<_>>()).unwrap();
        RegionSpec::new(x, y, support, r).unwrap()
    }

    fn unrestricted(r: f64) -> RegionSpec {
        spec(vec![0.0, 1.0], vec![0.0, 1.0], &[&[1]], r)
    }

    fn staircase(r: f64) -> RegionSpec {
        spec(
            vec![0.0, 0.5, 1.0],
            vec![0.0, 0.75, 1.0],
            &[&[1, 1], &[1, 0]],
            r,
        )
    }

    #[test]
    fn inversion_counts() {
        assert_eq!(inv_count(&[1, 2, 3, 4]), 0);
        assert_eq!(inv_count(&[5, 4, 3, 2, 1]), 10);
        assert_eq!(inv_count(&[2, 1, 3]), 1);
    }

    #[test]
    fn restriction_is_preserved_along_the_chain() {
        let s = staircase(1.0);
        let mut chain = Chain::new(&s, 12, 42).unwrap();
        let region = DiscreteRegion::new(&s, 12).unwrap();
        for _ in 0..5_000 {
            chain.step();
            for (idx, &val) in chain.sigma().iter().enumerate() {
                assert!(region.allows(val, idx + 1));
            }
        }
        assert_eq!(inv_count(chain.sigma()), chain.inversions());
    }

    #[test]
    fn identity_only_region_returns_identity() {
        // Diagonal blocks of width 1: only the identity-like assignment fits.
        let s = spec(
            vec![0.0, 0.5, 1.0],
            vec![0.0, 0.5, 1.0],
            &[&[1, 0], &[0, 1]],
            0.0,
        );
        let perms = enumerate_restricted(&s, 2).unwrap();
        assert_eq!(perms, vec![vec![1, 2]]);
        let out = sample_with_options(
            &s,
            2,
            100,
            7,
            SampleOptions {
                burn_in_sweeps: Some(10),
            },
        )
        .unwrap();
        assert_eq!(out.sigma, vec![1, 2]);
    }

    #[test]
    fn infeasible_region_is_detected() {
        // x-cut at 1/4 with n = 4 gives one column for the left strip, but
        // the support forces both bottom positions into it.
        let s = spec(
            vec![0.0, 0.25, 1.0],
            vec![0.0, 0.5, 1.0],
            &[&[1, 0], &[0, 1]],
            0.0,
        );
        assert!(matches!(
            Chain::new(&s, 4, 0),
            Err(Error::Infeasible { n: 4 })
        ));
    }

    #[test]
    fn sampler_is_reproducible() {
        let s = staircase(1.0);
        let a = sample_with_options(&s, 16, 500, 99, SampleOptions { burn_in_sweeps: Some(20) })
            .unwrap();
        let b = sample_with_options(&s, 16, 500, 99, SampleOptions { burn_in_sweeps: Some(20) })
            .unwrap();
        assert_eq!(a.sigma, b.sigma);
        assert_eq!(a.inversions, b.inversions);
    }

    #[test]
    fn chain_matches_exact_enumeration_on_a_small_region() {
        // n = 4 staircase, q = 1/2: compare visit frequencies with the
        // exact inversion-weighted distribution.
        let n = 4;
        let q: f64 = 0.5;
        let r = -(q.ln()) * n as f64;
        let s = staircase(r);
        let perms = enumerate_restricted(&s, n).unwrap();
        assert!(!perms.is_empty() && perms.len() <= 24);
        let mut weights: HashMap<Vec<usize>, f64> = HashMap::new();
        for p in &perms {
            weights.insert(p.clone(), q.powi(inv_count(p) as i32));
        }
        let z: f64 = weights.values().sum();
        let mut counts: HashMap<Vec<usize>, u64> = HashMap::new();
        let mut chain = Chain::new(&s, n, 2024).unwrap();
        let total = 200_000;
        for _ in 0..1_000 {
            chain.step();
        }
        for _ in 0..total {
            chain.step();
            *counts.entry(chain.sigma().to_vec()).or_default() += 1;
        }
        for (p, w) in &weights {
            let expect = w / z * total as f64;
            let got = *counts.get(p).unwrap_or(&0) as f64;
            let sd = (expect * (1.0 - w / z)).sqrt();
            assert!(
                (got - expect).abs() < 6.0 * sd.max(30.0),
                "state {p:?}: got {got}, expect {expect:.1}"
            );
        }
    }

    #[test]
    fn six_vertex_types_of_identity() {
        let sample = PermutationSample {
            n: 2,
            sigma: vec![1, 2],
            inversions: 0,
            seed: 0,
            sweeps: 0,
        };
        let grid = to_six_vertex(&sample);
        // Row 1: corner at column 1, column 2 untouched (type 1). Row 2:
        // column 1 carries both the row path and the risen column path.
        assert_eq!(grid.types, vec![5, 1, 2, 5]);
    }

    #[test]
    fn six_vertex_row_counts_hold_for_random_permutations() {
        let s = unrestricted(0.7);
        let out = sample_with_options(&s, 24, 3_000, 5, SampleOptions { burn_in_sweeps: Some(24) })
            .unwrap();
        let grid = to_six_vertex(&out); // row-count assertions run inside
        let fives = grid.types.iter().filter(|&&t| t == 5).count();
        assert_eq!(fives, 24);
        for j in 0..24 {
            let per_col = (0..24)
                .filter(|&m| grid.types[m * 24 + j] == 5)
                .count();
            assert_eq!(per_col, 1);
        }
    }

    #[test]
    fn empirical_height_boundaries() {
        let s = staircase(1.0);
        let out = sample_with_options(&s, 20, 300, 3, SampleOptions { burn_in_sweeps: Some(20) })
            .unwrap();
        let g = 10;
        let h = empirical_height(&out, g);
        let side = g + 1;
        assert!((h[g * side] - 1.0).abs() < 1e-12); // h(0, 1) = 1
        for i in 0..=g {
            assert_eq!(h[i], 0.0); // h(x, 0) = 0
            assert_eq!(h[i * side + g], 0.0); // h(1, y) = 0
        }
    }
}
