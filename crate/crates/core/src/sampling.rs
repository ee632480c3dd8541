//! Point down-sampling: FPS, feature-FPS, top-K score selection,
//! semantics-guided FPS (S-FPS) and fusion sampling.
//!
//! Every farthest-point variant runs the same `O(N * M)` loop over a
//! [`SFpsState`]; they differ only in how the first point is chosen, the
//! pairwise distance, and the per-point weight applied to the running
//! distance. Every argmax breaks ties towards the lowest index.

use crate::error::{Error, Result};
use crate::geometry::{euclidean_distance, vector_distance, PointCloud};
use crate::scalar::Scalar;

/// Per-point foreground scores in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForegroundScores<T>(Vec<T>);

impl<T: Scalar> ForegroundScores<T> {
    pub fn new(scores: Vec<T>) -> Result<Self> {
        if let Some(i) = scores
            .iter()
            .position(|&s| !(s >= T::zero() && s <= T::one()))
        {
            return Err(Error::InvalidInput(format!(
                "score {i} = {} is outside [0, 1]",
                scores[i]
            )));
        }
        Ok(Self(scores))
    }

    /// Same score for every point.
    pub fn uniform(n: usize, value: T) -> Result<Self> {
        Self::new(vec![value; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    #[inline]
    pub fn get(&self, i: usize) -> T {
        self.0[i]
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self(indices.iter().map(|&i| self.0[i]).collect())
    }

    /// Index of the highest score, lowest index on ties. `None` when empty.
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, &s) in self.0.iter().enumerate() {
            if best.is_none_or(|b| s > self.0[b]) {
                best = Some(i);
            }
        }
        best
    }

    pub fn into_vec(self) -> Vec<T> {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieBreak {
    #[default]
    LowestIndex,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SFpsConfig<T> {
    /// Balance factor: exponent on the foreground score.
    pub gamma: T,
    pub tie_break: TieBreak,
}

impl<T: Scalar> SFpsConfig<T> {
    pub fn new(gamma: T) -> Result<Self> {
        if !(gamma.is_finite() && gamma >= T::zero()) {
            return Err(Error::Config(format!(
                "gamma must be finite and non-negative, got {gamma}"
            )));
        }
        Ok(Self {
            gamma,
            tie_break: TieBreak::LowestIndex,
        })
    }
}

impl<T: Scalar> Default for SFpsConfig<T> {
    fn default() -> Self {
        Self {
            gamma: T::one(),
            tie_break: TieBreak::LowestIndex,
        }
    }
}

/// Selected indices in selection order.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleResult<T> {
    pub indices: Vec<usize>,
    /// Weighted distance of each selected point at the moment it was chosen.
    pub per_step_weighted_distance: Option<Vec<T>>,
}

impl<T> SampleResult<T> {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// `p^gamma`, with `p^0 = 1` for every `p` (including zero).
#[inline]
pub fn semantic_weight<T: Scalar>(p: T, gamma: T) -> T {
    if gamma == T::zero() {
        T::one()
    } else {
        p.powf(gamma)
    }
}

#[inline]
fn apply_weight<T: Scalar>(weight: T, d: T) -> T {
    if weight == T::zero() {
        T::zero()
    } else {
        weight * d
    }
}

/// Semantics-weighted distance `p^gamma * d`.
///
/// `0^0 = 1`, `0^gamma = 0` for positive `gamma`, and a zero weight
/// annihilates an infinite distance.
pub fn weighted_distance<T: Scalar>(p: T, d: T, gamma: T) -> T {
    apply_weight(semantic_weight(p, gamma), d)
}

/// Running state of a farthest-point loop.
#[derive(Debug, Clone)]
pub struct SFpsState<T> {
    selected: Vec<usize>,
    distances: Vec<T>,
    visited: Vec<bool>,
}

impl<T: Scalar> SFpsState<T> {
    pub fn new(n: usize) -> Self {
        Self {
            selected: Vec::new(),
            distances: vec![T::infinity(); n],
            visited: vec![false; n],
        }
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    pub fn distances(&self) -> &[T] {
        &self.distances
    }

    pub fn visited(&self) -> &[bool] {
        &self.visited
    }

    /// Marks `k` selected and shrinks every running distance with `dist(j, k)`.
    pub fn commit(&mut self, k: usize, dist: impl Fn(usize, usize) -> T) {
        debug_assert!(!self.visited[k], "index {k} selected twice");
        self.selected.push(k);
        self.visited[k] = true;
        for (j, d) in self.distances.iter_mut().enumerate() {
            let candidate = dist(j, k);
            if candidate < *d {
                *d = candidate;
            }
        }
    }

    /// Unvisited index maximising `weight * d`; ties fall back to the raw
    /// distance and then to the lowest index. Returns the index and its
    /// weighted distance.
    pub fn next_best(&self, weights: Option<&[T]>) -> Option<(usize, T)> {
        let mut best: Option<(usize, T, T)> = None;
        for (j, (&d, &seen)) in self.distances.iter().zip(&self.visited).enumerate() {
            if seen {
                continue;
            }
            let wd = weights.map_or(d, |w| apply_weight(w[j], d));
            let better = match best {
                None => true,
                Some((_, bwd, bd)) => wd > bwd || (wd == bwd && d > bd),
            };
            if better {
                best = Some((j, wd, d));
            }
        }
        best.map(|(j, wd, _)| (j, wd))
    }
}

fn check_budget(m: usize, n: usize) -> Result<()> {
    if m == 0 || m > n {
        return Err(Error::InvalidBudget {
            requested: m,
            available: n,
        });
    }
    Ok(())
}

fn farthest_loop<T: Scalar>(
    n: usize,
    m: usize,
    first: usize,
    weights: Option<&[T]>,
    dist: impl Fn(usize, usize) -> T,
) -> SampleResult<T> {
    let mut state = SFpsState::new(n);
    let mut diag = Vec::with_capacity(m);
    let first_weight = weights.map_or(T::one(), |w| w[first]);
    diag.push(apply_weight(first_weight, T::infinity()));
    state.commit(first, &dist);
    while state.selected.len() < m {
        let (k, wd) = state
            .next_best(weights)
            .expect("budget checked against point count");
        diag.push(wd);
        state.commit(k, &dist);
    }
    SampleResult {
        indices: state.selected,
        per_step_weighted_distance: Some(diag),
    }
}

/// Semantics-guided farthest point sampling.
///
/// Starts at the highest-scoring point, then repeatedly takes the unvisited
/// point with the largest `p^gamma * d`, where `d` is its distance to the
/// nearest point selected so far.
pub fn s_fps<T: Scalar>(
    cloud: &PointCloud<T>,
    scores: &ForegroundScores<T>,
    m: usize,
    config: &SFpsConfig<T>,
) -> Result<SampleResult<T>> {
    let n = cloud.len();
    if scores.len() != n {
        return Err(Error::Dimension {
            what: "scores",
            expected: n,
            found: scores.len(),
        });
    }
    check_budget(m, n)?;
    let first = scores.argmax().expect("n >= m >= 1");
    let weights: Vec<T> = scores
        .as_slice()
        .iter()
        .map(|&p| semantic_weight(p, config.gamma))
        .collect();
    let pts = cloud.coords();
    Ok(farthest_loop(n, m, first, Some(&weights), |j, k| {
        euclidean_distance(&pts[j], &pts[k])
    }))
}

/// Classic farthest point sampling from an explicit start point.
pub fn fps<T: Scalar>(
    cloud: &PointCloud<T>,
    m: usize,
    start_index: usize,
) -> Result<SampleResult<T>> {
    let n = cloud.len();
    check_budget(m, n)?;
    if start_index >= n {
        return Err(Error::InvalidInput(format!(
            "start index {start_index} out of range for {n} points"
        )));
    }
    let pts = cloud.coords();
    Ok(farthest_loop(n, m, start_index, None, |j, k| {
        euclidean_distance(&pts[j], &pts[k])
    }))
}

/// Feature-FPS: farthest point sampling over
/// `lambda_c * |x_j - x_k| + |f_j - f_k|`.
pub fn f_fps<T: Scalar>(
    cloud: &PointCloud<T>,
    m: usize,
    lambda_c: T,
    start_index: usize,
) -> Result<SampleResult<T>> {
    let feats = cloud.features().ok_or(Error::MissingFeatures)?;
    let n = cloud.len();
    check_budget(m, n)?;
    if !(lambda_c.is_finite() && lambda_c >= T::zero()) {
        return Err(Error::Config(format!(
            "lambda_c must be finite and non-negative, got {lambda_c}"
        )));
    }
    if start_index >= n {
        return Err(Error::InvalidInput(format!(
            "start index {start_index} out of range for {n} points"
        )));
    }
    let pts = cloud.coords();
    Ok(farthest_loop(n, m, start_index, None, |j, k| {
        lambda_c * euclidean_distance(&pts[j], &pts[k])
            + vector_distance(feats.row(j), feats.row(k))
    }))
}

/// The `m` highest scores in descending order, lowest index first on ties.
pub fn top_k_scores<T: Scalar>(scores: &ForegroundScores<T>, m: usize) -> Result<SampleResult<T>> {
    check_budget(m, scores.len())?;
    let s = scores.as_slice();
    let mut order: Vec<usize> = (0..s.len()).collect();
    // Stable sort keeps ascending index order within equal scores.
    order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).expect("scores are finite"));
    order.truncate(m);
    Ok(SampleResult {
        indices: order,
        per_step_weighted_distance: None,
    })
}

/// Splits `m_total` evenly: S-FPS candidates, then FPS context points
/// starting at index 0. Both halves sample the full input independently.
pub fn fusion_sample<T: Scalar>(
    cloud: &PointCloud<T>,
    scores: &ForegroundScores<T>,
    m_total: usize,
    config: &SFpsConfig<T>,
) -> Result<(SampleResult<T>, SampleResult<T>)> {
    if m_total == 0 || !m_total.is_multiple_of(2) {
        return Err(Error::BudgetRule(format!(
            "fusion budget must be even and positive, got {m_total}"
        )));
    }
    let half = m_total / 2;
    let candidates = s_fps(cloud, scores, half, config)?;
    let context = fps(cloud, half, 0)?;
    Ok((candidates, context))
}
