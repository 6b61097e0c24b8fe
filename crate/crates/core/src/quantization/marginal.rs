//! Per-date marginal grids cut from the functional codebook, and the Gaussian
//! cell transition probabilities between consecutive grids.

use serde::{Deserialize, Serialize};

use super::functional::{BrownianCodebook, ProductQuantizer, brownian_codebook, quantized_diffusion_codebook};
use crate::models::{DiffusionModel, TimeGrid};
use crate::normal;
use crate::{Error, Result};

/// Scale of the deterministic per-path perturbation separating equal
/// Brownian values.
const TIE_BREAK: f64 = 1e-12;

/// Dense row-major `rows x cols` stochastic matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl TransitionMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalQuantization {
    times: Vec<f64>,
    /// Sorted Brownian grid per date.
    brownian: Vec<Vec<f64>>,
    /// Signal grid per date, in the order of the Brownian grid.
    signal: Vec<Vec<f64>>,
    weights: Vec<Vec<f64>>,
}

impl MarginalQuantization {
    /// Quantizes the signal on `t_0..=t_m` with a product codebook of at most
    /// `budget` Brownian paths.
    pub fn build(model: &DiffusionModel, grid: &TimeGrid, budget: usize) -> Result<Self> {
        let pq = ProductQuantizer::optimal(budget, grid.observation_horizon())?;
        let codebook = brownian_codebook(&pq, grid)?;
        let signal = quantized_diffusion_codebook(model, &codebook, grid)?;
        marginal_quantization(&codebook, &signal, grid, model)
    }

    /// Number of dates `m + 1`.
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn brownian_grid(&self, k: usize) -> &[f64] {
        &self.brownian[k]
    }

    pub fn signal_grid(&self, k: usize) -> &[f64] {
        &self.signal[k]
    }

    pub fn weights(&self, k: usize) -> &[f64] {
        &self.weights[k]
    }

    /// Grid on the last observation date.
    pub fn terminal_grid(&self) -> &[f64] {
        &self.signal[self.times.len() - 1]
    }

    /// `p^_k`, the cell transition matrix from date `k - 1` to date `k`.
    pub fn transition(&self, k: usize) -> TransitionMatrix {
        assert!(k >= 1 && k < self.times.len(), "transition index {k} out of range");
        let rows = self.brownian[k - 1].len();
        let cols = self.brownian[k].len();
        let mut data = vec![0.0; rows * cols];
        let mut scratch = Vec::new();
        for (i, row) in data.chunks_mut(cols).enumerate() {
            self.transition_row(k, i, row, &mut scratch);
        }
        TransitionMatrix { rows, cols, data }
    }

    /// Row `i` of `p^_k` written into `out`; `scratch` is reused between
    /// calls to avoid reallocation.
    pub fn transition_row(&self, k: usize, i: usize, out: &mut [f64], scratch: &mut Vec<f64>) {
        let to = &self.brownian[k];
        let c = self.brownian[k - 1][i];
        let sd = (self.times[k] - self.times[k - 1]).sqrt();
        // one tail evaluation per edge: lower tail below the center, upper above
        scratch.clear();
        scratch.extend(to.windows(2).map(|w| {
            let z = (0.5 * (w[0] + w[1]) - c) / sd;
            if z <= 0.0 { normal::cdf(z) } else { normal::sf(z) }
        }));
        let lower = |e: usize| to[e] + to[e + 1] <= 2.0 * c;
        let n = to.len();
        for (j, o) in out.iter_mut().enumerate().take(n) {
            // cell j spans edges j-1 and j (edge e sits between levels e and e+1)
            let lo = if j == 0 { None } else { Some(j - 1) };
            let hi = if j + 1 == n { None } else { Some(j) };
            let m = match (lo, hi) {
                (None, None) => 1.0,
                (None, Some(h)) if lower(h) => scratch[h],
                (Some(l), None) if !lower(l) => scratch[l],
                (Some(l), Some(h)) if lower(h) => scratch[h] - scratch[l],
                (Some(l), Some(h)) if !lower(l) => scratch[l] - scratch[h],
                // the cell straddles the center
                _ => {
                    let below = lo.map_or(0.0, |l| scratch[l]);
                    let above = hi.map_or(0.0, |h| scratch[h]);
                    1.0 - below - above
                }
            };
            *o = m.max(0.0);
        }
    }

    pub fn transitions(&self) -> Vec<TransitionMatrix> {
        (1..self.times.len()).map(|k| self.transition(k)).collect()
    }

    /// Weights obtained by pushing the point mass at date 0 through the
    /// transition chain.
    pub fn propagate_weights(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![1.0]];
        for k in 1..self.times.len() {
            let p = self.transition(k);
            let prev = &out[k - 1];
            let mut next = vec![0.0; p.cols];
            for (i, &w) in prev.iter().enumerate() {
                for (n, &pij) in next.iter_mut().zip(p.row(i)) {
                    *n += w * pij;
                }
            }
            out.push(next);
        }
        out
    }
}

/// Sorts each date's Brownian values, carrying signal values and weights in
/// the same permutation.
pub fn marginal_quantization(
    codebook: &BrownianCodebook,
    signal_paths: &[Vec<f64>],
    grid: &TimeGrid,
    model: &DiffusionModel,
) -> Result<MarginalQuantization> {
    let dates = grid.m() + 1;
    if signal_paths.len() != codebook.len() {
        return Err(Error::Shape {
            context: "marginal_quantization signal paths",
            expected: codebook.len(),
            got: signal_paths.len(),
        });
    }
    if let Some(bad) = signal_paths.iter().chain(&codebook.paths).find(|p| p.len() != dates) {
        return Err(Error::Shape {
            context: "marginal_quantization path length",
            expected: dates,
            got: bad.len(),
        });
    }
    let mut brownian = vec![vec![0.0]];
    let mut signal = vec![vec![model.x0()]];
    let mut weights = vec![vec![1.0]];
    for k in 1..dates {
        let mut keyed: Vec<(f64, usize)> = codebook
            .paths
            .iter()
            .enumerate()
            .map(|(i, p)| (p[k] + i as f64 * TIE_BREAK, i))
            .collect();
        keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
        if keyed.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::DegenerateGrid { step: k });
        }
        brownian.push(keyed.iter().map(|&(v, _)| v).collect());
        signal.push(keyed.iter().map(|&(_, i)| signal_paths[i][k]).collect());
        weights.push(keyed.iter().map(|&(_, i)| codebook.weights[i]).collect());
    }
    Ok(MarginalQuantization {
        times: grid.times()[..dates].to_vec(),
        brownian,
        signal,
        weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantization::scalar::QuantizerTable;

    fn build(sizes: &[usize], m: usize, model: &DiffusionModel) -> (MarginalQuantization, Vec<Vec<f64>>) {
        let grid = TimeGrid::observation(1.0, m).unwrap();
        let mut table = QuantizerTable::new();
        let pq = ProductQuantizer::with_sizes(sizes, 1.0, &mut table).unwrap();
        let cb = brownian_codebook(&pq, &grid).unwrap();
        let sig = quantized_diffusion_codebook(model, &cb, &grid).unwrap();
        (marginal_quantization(&cb, &sig, &grid, model).unwrap(), sig)
    }

    #[test]
    fn singleton_codebook_has_unit_transitions() {
        let model = DiffusionModel::gbm(0.03, 0.03, 0.1, 86.3, 86.3);
        let (mq, _) = build(&[], 5, &model);
        for p in mq.transitions() {
            assert_eq!((p.rows, p.cols), (1, 1));
            assert_eq!(p.data, vec![1.0]);
        }
        assert_eq!(mq.signal_grid(0), &[86.3]);
        assert_eq!(mq.brownian_grid(0), &[0.0]);
    }

    #[test]
    fn grids_sorted_and_rows_stochastic() {
        let model = DiffusionModel::ou(0.18, 0.35, 0.12, 0.16, 0.35, 0.35);
        let (mq, sig) = build(&[9, 4, 2], 12, &model);
        for k in 1..mq.len() {
            assert!(mq.brownian_grid(k).windows(2).all(|w| w[0] < w[1]));
            assert!((mq.weights(k).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            // the sort is a permutation of the signal values
            let mut a: Vec<f64> = mq.signal_grid(k).to_vec();
            let mut b: Vec<f64> = sig.iter().map(|p| p[k]).collect();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            assert_eq!(a, b);
            let p = mq.transition(k);
            for i in 0..p.rows {
                let row = p.row(i);
                assert!(row.iter().all(|&v| v >= 0.0));
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn transition_entries_are_gaussian_cell_masses() {
        let model = DiffusionModel::ou(0.18, 0.35, 0.12, 0.16, 0.35, 0.35);
        let (mq, _) = build(&[7, 3, 2], 5, &model);
        let sd = (0.2f64).sqrt();
        for k in 2..mq.len() {
            let (from, to) = (mq.brownian_grid(k - 1), mq.brownian_grid(k));
            let p = mq.transition(k);
            for (i, &c) in from.iter().enumerate() {
                for j in 0..to.len() {
                    let lo = if j == 0 { f64::NEG_INFINITY } else { 0.5 * (to[j - 1] + to[j]) };
                    let hi = if j + 1 == to.len() { f64::INFINITY } else { 0.5 * (to[j] + to[j + 1]) };
                    let direct = normal::cdf((hi - c) / sd) - normal::cdf((lo - c) / sd);
                    assert!((p.get(i, j) - direct).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn ties_are_broken_deterministically() {
        // e_2 vanishes at t = 2/3, so paths differing only in the second
        // coordinate coincide there up to rounding
        let model = DiffusionModel::ou(0.18, 0.35, 0.12, 0.16, 0.35, 0.35);
        let (a, _) = build(&[3, 3], 6, &model);
        let (b, _) = build(&[3, 3], 6, &model);
        assert_eq!(a, b);
        for k in 1..a.len() {
            assert!(a.brownian_grid(k).windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let model = DiffusionModel::ou(0.18, 0.35, 0.12, 0.16, 0.35, 0.35);
        let grid = TimeGrid::observation(1.0, 4).unwrap();
        let mut table = QuantizerTable::new();
        let pq = ProductQuantizer::with_sizes(&[3], 1.0, &mut table).unwrap();
        let cb = brownian_codebook(&pq, &grid).unwrap();
        let err = marginal_quantization(&cb, &[vec![0.0; 5]], &grid, &model).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }

    /// The propagated chain and the product weights put visibly different
    /// masses on individual atoms (total variation around 0.3-0.6), but as
    /// distributions on the line they agree once `t_k` is not tiny.
    #[test]
    fn propagated_weights_track_codebook_weights() {
        let model = DiffusionModel::gbm(0.03, 0.03, 0.1, 86.3, 86.3);
        let grid = TimeGrid::observation(1.0, 50).unwrap();
        let mq = MarginalQuantization::build(&model, &grid, 1000).unwrap();
        assert_eq!(mq.terminal_grid().len(), 966);
        let propagated = mq.propagate_weights();
        for k in 1..mq.len() {
            assert!((propagated[k].iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let (mut cp, mut cw, mut ks) = (0.0f64, 0.0f64, 0.0f64);
            for (p, w) in propagated[k].iter().zip(mq.weights(k)) {
                cp += p;
                cw += w;
                ks = ks.max((cp - cw).abs());
            }
            if k >= 10 {
                assert!(ks <= 0.05, "date {k}: CDF distance {ks}");
            }
        }
    }
}
