//! k-dimensional tree pyramid (KD-TP) and the adaptive-discretization
//! posterior sampler built on it.
//!
//! A KD-TP is a full tree over an axis-aligned hypercube: every node has zero
//! or `2^k` children, each child halving its parent on every axis. The sampler
//! starts from the root, scores the centers of newly created children in one
//! batch, and keeps expanding the children whose score clears the threshold
//! until they reach the resolution limit.

use std::io::{BufRead, Write};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::forward::ForwardModel;
use crate::model::{
    score_batch, ErrorModel, InferenceResult, LatentPoint, LeafRecord, Observation, SlackScore,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KdTpNode {
    pub center: Vec<f64>,
    /// Half-width, identical on every axis.
    pub radius: f64,
    pub log_likelihood: Option<f64>,
    /// Slack achieving `log_likelihood`.
    pub slack: Option<f64>,
    pub depth: u32,
    pub parent: Option<NodeId>,
    children: Vec<NodeId>,
}

impl KdTpNode {
    pub fn children(&self) -> &[NodeId] {
        &self.children
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// Closed-box membership.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(&self.center)
            .all(|(v, c)| (v - c).abs() <= self.radius)
    }

    pub fn volume(&self) -> f64 {
        (2.0 * self.radius).powi(self.center.len() as i32)
    }
}

/// Arena-backed tree; nodes are stored in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct KdTp {
    k: usize,
    nodes: Vec<KdTpNode>,
}

impl KdTp {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self> {
        if center.is_empty() {
            return Err(Error::invalid("tree dimension must be at least 1"));
        }
        if center.len() > 16 {
            return Err(Error::invalid("tree dimension above 16 is not supported"));
        }
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::invalid(format!("root radius must be positive, got {radius}")));
        }
        Ok(KdTp {
            k: center.len(),
            nodes: vec![KdTpNode {
                center,
                radius,
                log_likelihood: None,
                slack: None,
                depth: 0,
                parent: None,
                children: Vec::new(),
            }],
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn fanout(&self) -> usize {
        1 << self.k
    }

    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    pub fn node(&self, id: NodeId) -> &KdTpNode {
        &self.nodes[id.0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, &KdTpNode)> {
        self.nodes.iter().enumerate().map(|(i, n)| (NodeId(i), n))
    }

    /// Current leaves in insertion order.
    pub fn leaves(&self) -> impl Iterator<Item = (NodeId, &KdTpNode)> {
        self.nodes().filter(|(_, n)| n.is_leaf())
    }

    pub fn set_score(&mut self, id: NodeId, score: SlackScore) {
        let n = &mut self.nodes[id.0];
        n.log_likelihood = Some(score.log_posterior);
        n.slack = Some(score.slack);
    }

    /// Deepest leaf containing `x`, if `x` lies inside the root box.
    pub fn locate(&self, x: &[f64]) -> Option<NodeId> {
        let mut id = self.root();
        if !self.node(id).contains(x) {
            return None;
        }
        'descend: loop {
            let node = self.node(id);
            for &c in node.children() {
                if self.node(c).contains(x) {
                    id = c;
                    continue 'descend;
                }
            }
            return Some(id);
        }
    }

    /// Structural invariants: full tree, exact child geometry, radius halving
    /// per depth. Returns a description of the first violation.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let root_r = self.nodes[0].radius;
        let fanout = self.fanout();
        for (id, node) in self.nodes() {
            if node.radius != root_r / f64::powi(2.0, node.depth as i32) {
                return Err(format!("node {} radius {} at depth {}", id.0, node.radius, node.depth));
            }
            let nc = node.children.len();
            if nc != 0 && nc != fanout {
                return Err(format!("node {} has {nc} children", id.0));
            }
            for (pattern, &c) in sign_patterns(self.k).iter().zip(&node.children) {
                let child = self.node(c);
                if child.parent != Some(id) || child.depth != node.depth + 1 {
                    return Err(format!("node {} has inconsistent parent link", c.0));
                }
                if child.radius != node.radius / 2.0 {
                    return Err(format!("child {} radius is not half its parent", c.0));
                }
                for ((cc, pc), s) in child.center.iter().zip(&node.center).zip(pattern) {
                    if *cc != pc + s * node.radius / 2.0 {
                        return Err(format!("child {} center is off the parent lattice", c.0));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn leaf_records(&self) -> Vec<LeafRecord> {
        self.leaves()
            .filter_map(|(_, n)| {
                n.log_likelihood.map(|ll| LeafRecord {
                    center: LatentPoint::new(n.center.clone()),
                    radius: n.radius,
                    log_likelihood: ll,
                })
            })
            .collect()
    }
}

/// Sign patterns in `{+1, -1}^k`, lexicographic with `+` before `-`.
pub fn sign_patterns(k: usize) -> Vec<Vec<f64>> {
    (0..1usize << k)
        .map(|p| {
            (0..k)
                .map(|axis| if (p >> (k - 1 - axis)) & 1 == 0 { 1.0 } else { -1.0 })
                .collect()
        })
        .collect()
}

/// Split every node of `expansion` into its `2^k` children and return the new
/// children in order.
pub fn gen_candidate_expansions(tree: &mut KdTp, expansion: &[NodeId]) -> Result<Vec<NodeId>> {
    let patterns = sign_patterns(tree.k);
    let mut created = Vec::with_capacity(expansion.len() * patterns.len());
    for &id in expansion {
        if !tree.node(id).is_leaf() {
            return Err(Error::NotALeaf(id.0));
        }
        let (center, r, depth) = {
            let n = tree.node(id);
            (n.center.clone(), n.radius, n.depth)
        };
        let half = r / 2.0;
        let first = tree.nodes.len();
        for p in &patterns {
            tree.nodes.push(KdTpNode {
                center: center.iter().zip(p).map(|(c, s)| c + s * half).collect(),
                radius: half,
                log_likelihood: None,
                slack: None,
                depth: depth + 1,
                parent: Some(id),
                children: Vec::new(),
            });
        }
        let kids: Vec<NodeId> = (first..tree.nodes.len()).map(NodeId).collect();
        created.extend_from_slice(&kids);
        tree.nodes[id.0].children = kids;
    }
    Ok(created)
}

/// Expansion threshold on the slack-maximized joint log score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    /// Expand when the score exceeds this fixed value.
    Absolute(f64),
    /// Expand when the score exceeds the best score seen so far plus this
    /// (non-positive) offset.
    Relative(f64),
    /// A relative offset per compared observation coordinate. With the slack
    /// profiled out the score behaves like `-m ln(rms)`, so this fixes the
    /// tolerated RMS-residual ratio whatever the observed length `m`.
    PerCoordinate(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TpConfig {
    pub threshold: Threshold,
    /// Resolution limit: nodes with radius at or below it are not expanded.
    pub rho: f64,
    pub max_evals: usize,
}

impl Default for TpConfig {
    fn default() -> Self {
        TpConfig {
            threshold: Threshold::PerCoordinate(-2.0),
            rho: 0.01,
            max_evals: 1_000_000,
        }
    }
}

impl TpConfig {
    /// Converts a per-coordinate threshold into a relative one for `m`
    /// compared coordinates.
    pub fn resolved(&self, m: usize) -> TpConfig {
        let threshold = match self.threshold {
            Threshold::PerCoordinate(t) => Threshold::Relative(t * m as f64),
            t => t,
        };
        TpConfig {
            threshold,
            ..self.clone()
        }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if !(self.rho.is_finite() && self.rho > 0.0) {
            return Err(Error::invalid(format!("rho must be positive, got {}", self.rho)));
        }
        if self.max_evals < (1usize << k) + 1 {
            return Err(Error::invalid(format!(
                "max_evals {} below 2^k + 1 = {}",
                self.max_evals,
                (1usize << k) + 1
            )));
        }
        match self.threshold {
            Threshold::Relative(t) | Threshold::PerCoordinate(t) if !(t <= 0.0) => {
                Err(Error::invalid(format!("relative threshold must be <= 0, got {t}")))
            }
            Threshold::Absolute(t) if t.is_nan() => Err(Error::invalid("threshold is NaN")),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TpOutcome {
    pub n_evals: usize,
    pub rounds: usize,
    pub budget_exhausted: bool,
}

/// Adaptive expansion loop over an existing tree, starting from its root.
///
/// `scorer` receives every round's candidate centers in one batch and returns
/// one score per center.
pub fn expand_adaptively<S>(cfg: &TpConfig, tree: &mut KdTp, mut scorer: S) -> Result<TpOutcome>
where
    S: FnMut(&[LatentPoint]) -> Result<Vec<SlackScore>>,
{
    cfg.validate(tree.k)?;
    let fanout = tree.fanout();
    let mut outcome = TpOutcome {
        n_evals: 0,
        rounds: 0,
        budget_exhausted: false,
    };
    let mut best_seen = f64::NEG_INFINITY;
    let mut expansion = vec![tree.root()];

    while !expansion.is_empty() {
        if outcome.n_evals + expansion.len() * fanout > cfg.max_evals {
            outcome.budget_exhausted = true;
            break;
        }
        let candidates = gen_candidate_expansions(tree, &expansion)?;
        expansion.clear();

        let centers: Vec<LatentPoint> = candidates
            .iter()
            .map(|&c| LatentPoint::new(tree.node(c).center.clone()))
            .collect();
        let scores = scorer(&centers)?;
        if scores.len() != candidates.len() {
            return Err(Error::Forward(format!(
                "scorer returned {} scores for {} candidates",
                scores.len(),
                candidates.len()
            )));
        }
        outcome.n_evals += candidates.len();
        outcome.rounds += 1;

        for (&c, s) in candidates.iter().zip(&scores) {
            tree.set_score(c, *s);
            if s.log_posterior > best_seen {
                best_seen = s.log_posterior;
            }
        }
        let threshold = match cfg.threshold {
            Threshold::Absolute(t) => t,
            Threshold::Relative(t) => best_seen + t,
            Threshold::PerCoordinate(_) => {
                return Err(Error::invalid("per-coordinate threshold must be resolved first"))
            }
        };
        for (&c, s) in candidates.iter().zip(&scores) {
            if s.log_posterior > threshold && tree.node(c).radius > cfg.rho {
                expansion.push(c);
            }
        }
    }
    Ok(outcome)
}

/// Tree-pyramid posterior approximation over the model's prior box.
pub fn compute_tp_posterior<F: ForwardModel + ?Sized>(
    cfg: &TpConfig,
    model: &ErrorModel,
    obs: &Observation,
    forward: &F,
) -> Result<(KdTp, InferenceResult)> {
    let radius = model
        .prior
        .cube_radius()
        .ok_or_else(|| Error::invalid("tree-pyramid inference needs a hypercube prior box"))?;
    let mut tree = KdTp::new(model.prior.center().to_vec(), radius)?;

    let start = Instant::now();
    let cfg = cfg.resolved(obs.compared_len());
    let outcome = expand_adaptively(&cfg, &mut tree, |xs| score_batch(xs, obs, model, forward))?;
    let best = map_leaf(&tree)?;
    let wall_time = start.elapsed();

    let node = tree.node(best);
    let score = SlackScore {
        log_posterior: node.log_likelihood.unwrap_or(f64::NEG_INFINITY),
        slack: node.slack.unwrap_or(model.slack_grid.values()[0]),
    };
    let mut result = InferenceResult::new(LatentPoint::new(node.center.clone()), score, outcome.n_evals);
    result.wall_time = wall_time;
    result.leaves = tree.leaf_records();
    if outcome.budget_exhausted {
        result.flags.push(crate::model::Flag::BudgetExhausted);
    }
    Ok((tree, result))
}

/// Highest-scoring leaf; ties go to the first-inserted leaf.
pub fn map_leaf(tree: &KdTp) -> Result<NodeId> {
    let mut best: Option<(NodeId, f64)> = None;
    for (id, n) in tree.leaves() {
        if let Some(ll) = n.log_likelihood {
            if best.map_or(true, |(_, b)| ll > b) {
                best = Some((id, ll));
            }
        }
    }
    best.map(|(id, _)| id).ok_or(Error::UnscoredTree)
}

/// Center and score of the best leaf.
pub fn map_estimate(tree: &KdTp) -> Result<(LatentPoint, f64)> {
    let id = map_leaf(tree)?;
    let n = tree.node(id);
    Ok((
        LatentPoint::new(n.center.clone()),
        n.log_likelihood.expect("map leaf is scored"),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeafMass {
    pub center: Vec<f64>,
    pub radius: f64,
    pub log_likelihood: f64,
    pub mass: f64,
}

/// Piecewise-constant posterior over the leaf partition: each leaf's mass is
/// proportional to `exp(L - max L) * volume`, normalized to sum to one.
pub fn leaf_density(tree: &KdTp) -> Result<Vec<LeafMass>> {
    let mut out = Vec::new();
    let mut max_ll = f64::NEG_INFINITY;
    for (id, n) in tree.leaves() {
        // A lone root has no score to weigh; it carries all the mass.
        let ll = match (n.log_likelihood, tree.len()) {
            (Some(ll), _) => ll,
            (None, 1) => 0.0,
            (None, _) => return Err(Error::invalid(format!("leaf {} is unscored", id.0))),
        };
        max_ll = max_ll.max(ll);
        out.push(LeafMass {
            center: n.center.clone(),
            radius: n.radius,
            log_likelihood: ll,
            mass: 0.0,
        });
    }
    if max_ll == f64::NEG_INFINITY {
        return Err(Error::UnscoredTree);
    }
    let k = tree.k as i32;
    let mut total = 0.0;
    for leaf in &mut out {
        leaf.mass = (leaf.log_likelihood - max_ll).exp() * (2.0 * leaf.radius).powi(k);
        total += leaf.mass;
    }
    for leaf in &mut out {
        leaf.mass /= total;
    }
    Ok(out)
}

/// One leaf per line: `center_0 .. center_{k-1} radius loglik mass`, preceded by
/// a `#` header naming the columns.
pub fn write_leaf_dump<W: Write>(mut w: W, leaves: &[LeafMass]) -> std::io::Result<()> {
    let k = leaves.first().map_or(0, |l| l.center.len());
    let mut header: Vec<String> = (0..k).map(|i| format!("center_{i}")).collect();
    header.extend(["radius", "loglik", "mass"].map(String::from));
    writeln!(w, "# {}", header.join(" "))?;
    for l in leaves {
        let mut fields: Vec<String> = l.center.iter().map(|v| v.to_string()).collect();
        fields.push(l.radius.to_string());
        fields.push(l.log_likelihood.to_string());
        fields.push(l.mass.to_string());
        writeln!(w, "{}", fields.join(" "))?;
    }
    Ok(())
}

pub fn read_leaf_dump<R: BufRead>(r: R) -> std::result::Result<Vec<LeafMass>, String> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| format!("line {}: {e}", i + 1))?;
        if vals.len() < 4 {
            return Err(format!("line {}: expected at least 4 fields", i + 1));
        }
        let k = vals.len() - 3;
        out.push(LeafMass {
            center: vals[..k].to_vec(),
            radius: vals[k],
            log_likelihood: vals[k + 1],
            mass: vals[k + 2],
        });
    }
    Ok(out)
}
