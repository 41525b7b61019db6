use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ColorDomain, Image};

pub const BIN_WIDTH: f64 = 0.25;

/// Uniform histogram of one channel's perturbation values. Bins are centred
/// on multiples of [`BIN_WIDTH`]; values beyond the range land in the end bins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationHistogram {
    pub channel: String,
    /// `counts.len() + 1` increasing edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl PerturbationHistogram {
    /// Bins covering at least `[-(eps_max + 1), eps_max + 1]`.
    pub fn new(channel: &str, eps_max: f64) -> Self {
        let half = ((eps_max.max(0.0) + 1.0) / BIN_WIDTH).ceil() as i64;
        let bins = (2 * half + 1) as usize;
        let edges = (0..=bins)
            .map(|k| (k as i64 - half) as f64 * BIN_WIDTH - BIN_WIDTH / 2.0)
            .collect();
        Self {
            channel: channel.to_string(),
            edges,
            counts: vec![0; bins],
        }
    }

    pub fn add(&mut self, v: f64) {
        let k = ((v - self.edges[0]) / BIN_WIDTH).floor();
        let k = k.clamp(0.0, (self.counts.len() - 1) as f64) as usize;
        self.counts[k] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn center(&self, k: usize) -> f64 {
        (self.edges[k] + self.edges[k + 1]) / 2.0
    }

    /// Fraction of the mass in bins whose centre magnitude lies within
    /// `tol` of `magnitude`.
    pub fn mass_near_magnitude(&self, magnitude: f64, tol: f64) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let near: u64 = (0..self.counts.len())
            .filter(|&k| (self.center(k).abs() - magnitude).abs() <= tol + 1e-9)
            .map(|k| self.counts[k])
            .sum();
        near as f64 / total as f64
    }

    /// Fraction of the mass in the outermost occupied bin on each side.
    pub fn outermost_mass(&self) -> f64 {
        let total = self.total();
        let occupied: Vec<usize> = (0..self.counts.len()).filter(|&k| self.counts[k] > 0).collect();
        match (occupied.first(), occupied.last()) {
            (Some(&lo), Some(&hi)) if lo != hi => {
                (self.counts[lo] + self.counts[hi]) as f64 / total as f64
            }
            (Some(_), Some(_)) => 1.0,
            _ => 0.0,
        }
    }

    /// Centre magnitude of the most populated bin (ties: smallest magnitude).
    pub fn mode_magnitude(&self) -> f64 {
        let best = self.counts.iter().copied().max().unwrap_or(0);
        (0..self.counts.len())
            .filter(|&k| self.counts[k] == best)
            .map(|k| self.center(k).abs())
            .fold(f64::INFINITY, f64::min)
    }

    /// Centre magnitude of the most populated bin on the positive and on the
    /// negative side of zero (excluding the zero bin).
    pub fn signed_modes(&self) -> (f64, f64) {
        let mode = |pos: bool| {
            (0..self.counts.len())
                .filter(|&k| if pos { self.center(k) > 0.0 } else { self.center(k) < 0.0 })
                .max_by_key(|&k| self.counts[k])
                .map_or(0.0, |k| self.center(k))
        };
        (mode(true), mode(false))
    }

    /// Rows `edge_lo,edge_hi,count`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("edge_lo,edge_hi,count\n");
        for k in 0..self.counts.len() {
            s.push_str(&format!("{},{},{}\n", self.edges[k], self.edges[k + 1], self.counts[k]));
        }
        s
    }
}

/// One histogram per channel over all `perturbations`.
pub fn perturbation_histogram<D>(
    perturbations: &[&Image<D>],
    domain: ColorDomain,
    eps_max: f64,
) -> Result<[PerturbationHistogram; 3]> {
    if perturbations.is_empty() {
        return Err(Error::Empty("perturbations for histogram".into()));
    }
    let names = domain.channel_names();
    let mut out = names.map(|n| PerturbationHistogram::new(n, eps_max));
    for p in perturbations {
        for (c, h) in out.iter_mut().enumerate() {
            for &v in p.channel(c) {
                h.add(v as f64);
            }
        }
    }
    Ok(out)
}
