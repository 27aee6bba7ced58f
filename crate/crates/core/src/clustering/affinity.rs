//! Affinity propagation over VT positions.
//!
//! Similarity is `−ln(‖r_p − r_q‖ + 1)`. Each iteration runs, in order: the
//! responsibility update, responsibility damping, the off-diagonal
//! availability update, availability damping, and the self-availability
//! update. The loop runs for a fixed number of iterations and then every
//! point picks `argmax_q a(p,q) + r(p,q)` as its exemplar.

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};

/// Diagonal of the similarity matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preference {
    /// Median of the off-diagonal similarities.
    Median,
    Value(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix(DMatrix<f64>);

impl SimilarityMatrix {
    pub fn from_matrix(s: DMatrix<f64>) -> Self {
        assert!(s.is_square(), "similarity matrix must be square");
        SimilarityMatrix(s)
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn get(&self, p: usize, q: usize) -> f64 {
        self.0[(p, q)]
    }
}

pub fn similarity(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    -((a - b).norm() + 1.0).ln()
}

pub fn build_similarity(points: &[Vector3<f64>], preference: Preference) -> SimilarityMatrix {
    let n = points.len();
    let mut s = DMatrix::zeros(n, n);
    let mut off_diagonal = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for p in 0..n {
        for q in (p + 1)..n {
            let v = similarity(&points[p], &points[q]);
            s[(p, q)] = v;
            s[(q, p)] = v;
            off_diagonal.push(v);
        }
    }
    let pref = match preference {
        Preference::Value(v) => v,
        Preference::Median => median(&mut off_diagonal).unwrap_or(0.0),
    };
    for p in 0..n {
        s[(p, p)] = pref;
    }
    SimilarityMatrix(s)
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    })
}

/// How the previous message enters a damped update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DampingMode {
    /// `(1 − λ)·new + λ·old`.
    Conventional,
    /// `(1 − λ)·new + old`. Grows without bound over many iterations; kept
    /// for reproducing the update exactly as printed.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApConfig {
    pub damping: f64,
    pub iterations: usize,
    pub damping_mode: DampingMode,
    pub preference: Preference,
}

impl Default for ApConfig {
    fn default() -> Self {
        ApConfig {
            damping: 0.5,
            iterations: 200,
            damping_mode: DampingMode::Conventional,
            preference: Preference::Median,
        }
    }
}

impl ApConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return Err(crate::Error::Config(format!(
                "damping must lie in (0, 1), got {}",
                self.damping
            )));
        }
        if self.iterations == 0 {
            return Err(crate::Error::Config("iterations must be >= 1".into()));
        }
        Ok(())
    }
}

/// Responsibility and availability matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ApState {
    pub r: DMatrix<f64>,
    pub a: DMatrix<f64>,
}

impl ApState {
    pub fn zeros(n: usize) -> Self {
        ApState {
            r: DMatrix::zeros(n, n),
            a: DMatrix::zeros(n, n),
        }
    }

    /// One full message-passing iteration.
    pub fn iterate(&mut self, sim: &SimilarityMatrix, lambda: f64, mode: DampingMode) {
        let n = sim.len();
        if n < 2 {
            return;
        }
        let s = sim.matrix();
        let keep = match mode {
            DampingMode::Conventional => lambda,
            DampingMode::Literal => 1.0,
        };

        for p in 0..n {
            let (mut best, mut best_q, mut second) = (f64::NEG_INFINITY, 0, f64::NEG_INFINITY);
            for q in 0..n {
                let v = self.a[(p, q)] + s[(p, q)];
                if v > best {
                    second = best;
                    best = v;
                    best_q = q;
                } else if v > second {
                    second = v;
                }
            }
            for q in 0..n {
                let competitor = if q == best_q { second } else { best };
                let fresh = s[(p, q)] - competitor;
                self.r[(p, q)] = (1.0 - lambda) * fresh + keep * self.r[(p, q)];
            }
        }

        // Column sums of positive responsibilities from other points.
        let support: Vec<f64> = (0..n)
            .map(|q| (0..n).filter(|&p| p != q).map(|p| self.r[(p, q)].max(0.0)).sum())
            .collect();

        for q in 0..n {
            for p in 0..n {
                if p == q {
                    continue;
                }
                let fresh = (self.r[(q, q)] + support[q] - self.r[(p, q)].max(0.0)).min(0.0);
                self.a[(p, q)] = (1.0 - lambda) * fresh + keep * self.a[(p, q)];
            }
        }
        for (q, &sup) in support.iter().enumerate() {
            self.a[(q, q)] = sup;
        }
    }

    /// `argmax_q a(p,q) + r(p,q)` per point; ties go to the lowest index.
    pub fn exemplars(&self) -> Vec<usize> {
        let n = self.r.nrows();
        (0..n)
            .map(|p| {
                let mut best = 0;
                for q in 1..n {
                    if self.a[(p, q)] + self.r[(p, q)] > self.a[(p, best)] + self.r[(p, best)] {
                        best = q;
                    }
                }
                best
            })
            .collect()
    }
}

/// Outcome of a fixed-length affinity propagation run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApResult {
    /// Raw exemplar choice of every point.
    pub exemplar_of: Vec<usize>,
    /// The exemplar choices did not change over the final
    /// [`STABLE_WINDOW`] iterations.
    pub converged: bool,
}

pub const STABLE_WINDOW: usize = 15;

impl ApResult {
    /// Cluster head for each point: every chosen exemplar heads its own
    /// cluster, everyone else joins the exemplar they picked.
    pub fn heads(&self) -> Vec<usize> {
        let mut heads = self.exemplar_of.clone();
        for &e in &self.exemplar_of {
            heads[e] = e;
        }
        heads
    }

    pub fn cluster_count(&self) -> usize {
        let mut h = self.heads();
        h.sort_unstable();
        h.dedup();
        h.len()
    }

    /// Every point chosen as an exemplar chose itself.
    pub fn is_self_consistent(&self) -> bool {
        self.exemplar_of.iter().all(|&e| self.exemplar_of[e] == e)
    }
}

pub fn affinity_propagation(sim: &SimilarityMatrix, cfg: &ApConfig) -> ApResult {
    let n = sim.len();
    if n == 0 {
        return ApResult {
            exemplar_of: Vec::new(),
            converged: true,
        };
    }
    if n == 1 {
        return ApResult {
            exemplar_of: vec![0],
            converged: true,
        };
    }
    let mut state = ApState::zeros(n);
    let mut last = Vec::new();
    let mut unchanged = 0usize;
    for _ in 0..cfg.iterations {
        state.iterate(sim, cfg.damping, cfg.damping_mode);
        let current = state.exemplars();
        if current == last {
            unchanged += 1;
        } else {
            unchanged = 0;
            last = current;
        }
    }
    ApResult {
        exemplar_of: last,
        converged: unchanged + 1 >= STABLE_WINDOW,
    }
}
