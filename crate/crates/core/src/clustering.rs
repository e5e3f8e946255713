//! Cluster-head selection with an adaptive correlation threshold, and
//! grouping of the remaining users onto the heads' beams.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::CVector;

/// Largest threshold the selection loop may reach before giving up.
pub const THRESHOLD_CEILING: f64 = 1.0 - 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClusteringError {
    #[error("cluster-head selection cannot find {needed} weakly correlated users (threshold reached {threshold})")]
    DegenerateChannels { needed: usize, threshold: f64 },
    #[error("need at least one beam and K >= G (K = {users}, G = {beams})")]
    BadDimensions { users: usize, beams: usize },
    #[error("threshold must lie in (0, 1), got {0}")]
    BadThreshold(f64),
}

/// Users assigned to beams. `beams[g][0]` is the head of beam `g` until SIC
/// ordering is applied, after which each beam is sorted strongest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupingPlan {
    pub cluster_heads: Vec<usize>,
    pub beams: Vec<Vec<usize>>,
    pub final_threshold: f64,
    pub sic_order_applied: bool,
}

impl GroupingPlan {
    /// One user per beam, every user its own head.
    pub fn one_user_per_beam(n_users: usize) -> Self {
        GroupingPlan {
            cluster_heads: (0..n_users).collect(),
            beams: (0..n_users).map(|k| vec![k]).collect(),
            final_threshold: 0.0,
            sic_order_applied: false,
        }
    }

    pub fn n_users(&self) -> usize {
        self.beams.iter().map(Vec::len).sum()
    }

    /// `beam_of[k]` for every user.
    pub fn beam_of(&self) -> Vec<usize> {
        let mut out = vec![usize::MAX; self.n_users()];
        for (g, beam) in self.beams.iter().enumerate() {
            for &k in beam {
                out[k] = g;
            }
        }
        out
    }

    /// True when the beams partition `0..K` and none is empty.
    pub fn is_partition(&self) -> bool {
        let k = self.n_users();
        let mut seen = vec![false; k];
        for beam in &self.beams {
            if beam.is_empty() {
                return false;
            }
            for &u in beam {
                if u >= k || seen[u] {
                    return false;
                }
                seen[u] = true;
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plan serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadSelection {
    /// Heads in selection order; `heads[g]` steers beam `g`.
    pub heads: Vec<usize>,
    pub final_threshold: f64,
    /// Number of pairwise correlations evaluated.
    pub operations: u64,
}

/// `|x^H y| / (‖x‖ ‖y‖)`, or 0 when either vector vanishes.
pub fn normalized_correlation(x: &CVector, y: &CVector) -> f64 {
    let denom = x.norm() * y.norm();
    if denom > 0.0 {
        x.dotc(y).norm() / denom
    } else {
        0.0
    }
}

/// Indices sorted by value descending; ties keep the lower index first.
fn order_descending(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    order
}

struct Correlations<'a> {
    unit: &'a [CVector],
    operations: u64,
}

impl Correlations<'_> {
    fn below(&mut self, i: usize, heads: &[usize], threshold: f64) -> bool {
        heads.iter().all(|&j| {
            self.operations += 1;
            self.unit[i].dotc(&self.unit[j]).norm() < threshold
        })
    }

    fn filter(&mut self, pool: &[usize], heads: &[usize], threshold: f64) -> Vec<usize> {
        pool.iter()
            .copied()
            .filter(|&i| self.below(i, heads, threshold))
            .collect()
    }
}

/// Selects one head per beam.
///
/// The strongest user is the first head. Candidates are the users whose
/// normalized correlation with every selected head is below the threshold;
/// the strongest candidate becomes the next head. While no candidate exists
/// the threshold grows by a tenth of its distance to 1.
pub fn select_cluster_heads(
    channels: &[CVector],
    n_beams: usize,
    delta_init: f64,
) -> Result<HeadSelection, ClusteringError> {
    let k = channels.len();
    if n_beams == 0 || k < n_beams {
        return Err(ClusteringError::BadDimensions {
            users: k,
            beams: n_beams,
        });
    }
    if !(delta_init > 0.0 && delta_init < 1.0) {
        return Err(ClusteringError::BadThreshold(delta_init));
    }
    let norms: Vec<f64> = channels.iter().map(|h| h.norm()).collect();
    if norms.iter().any(|n| !(n.is_finite() && *n > 0.0)) {
        return Err(ClusteringError::DegenerateChannels {
            needed: n_beams,
            threshold: delta_init,
        });
    }
    let unit: Vec<CVector> = channels
        .iter()
        .zip(&norms)
        .map(|(h, n)| h.unscale(*n))
        .collect();
    let order = order_descending(&norms);

    let mut corr = Correlations {
        unit: &unit,
        operations: 0,
    };
    let mut delta = delta_init;
    let mut heads = vec![order[0]];
    let complement = |heads: &[usize]| -> Vec<usize> {
        order.iter().copied().filter(|u| !heads.contains(u)).collect()
    };
    let mut rest = complement(&heads);
    let mut candidates = rest.clone();

    while heads.len() < n_beams {
        // A fresh filter can also empty a non-empty pool, so the threshold
        // update runs after filtering as well as before.
        candidates = corr.filter(&candidates, &heads, delta);
        while candidates.is_empty() {
            delta += (1.0 - delta) / 10.0;
            if delta > THRESHOLD_CEILING {
                return Err(ClusteringError::DegenerateChannels {
                    needed: n_beams,
                    threshold: delta,
                });
            }
            candidates = corr.filter(&rest, &heads, delta);
        }
        heads.push(candidates[0]);
        rest = complement(&heads);
    }

    Ok(HeadSelection {
        heads,
        final_threshold: delta,
        operations: corr.operations,
    })
}

/// Assigns every non-head user to the beam whose head's equivalent channel
/// it is most correlated with. Ties go to the lower beam index.
pub fn group_users(equiv_channels: &[CVector], heads: &[usize], final_threshold: f64) -> GroupingPlan {
    let mut beams: Vec<Vec<usize>> = heads.iter().map(|&h| vec![h]).collect();
    for (m, hm) in equiv_channels.iter().enumerate() {
        if heads.contains(&m) {
            continue;
        }
        let mut best = 0;
        let mut best_corr = f64::NEG_INFINITY;
        for (g, &head) in heads.iter().enumerate() {
            let c = normalized_correlation(hm, &equiv_channels[head]);
            if c > best_corr {
                best = g;
                best_corr = c;
            }
        }
        beams[best].push(m);
    }
    GroupingPlan {
        cluster_heads: heads.to_vec(),
        beams,
        final_threshold,
        sic_order_applied: false,
    }
}
