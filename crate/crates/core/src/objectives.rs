//! Category-wise relativistic losses.
//!
//! Every loss is defined once on the autodiff graph; the plain `f64`
//! functions below evaluate that same graph on constants, so training and
//! testing can never drift apart.

use crate::autodiff::{Graph, Matrix, Var};
use crate::error::{Error, Result};

/// Floor applied inside every logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

/// Which population a set of discriminator logits belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Real,
    Fake,
}

/// Real and fake logits scored on one minibatch. `category` is `None` for the
/// pooled all-category batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitBatchPair {
    pub real: Vec<f64>,
    pub fake: Vec<f64>,
    pub category: Option<usize>,
}

impl LogitBatchPair {
    pub fn new(real: Vec<f64>, fake: Vec<f64>, category: Option<usize>) -> Result<Self> {
        let p = Self { real, fake, category };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.real.is_empty() || self.fake.is_empty() {
            return Err(Error::invalid("logit batch pair has an empty side"));
        }
        if !self.real.iter().chain(&self.fake).all(|v| v.is_finite()) {
            return Err(Error::invalid("logit batch pair contains non-finite logits"));
        }
        Ok(())
    }

    fn to_graph(&self, g: &mut Graph) -> GraphPair {
        let col = |v: &[f64]| Matrix::from_shape_vec((v.len(), 1), v.to_vec()).expect("column");
        GraphPair {
            real: g.constant(col(&self.real)),
            fake: g.constant(col(&self.fake)),
        }
    }
}

/// A pair of `n x 1` logit columns living on a graph.
#[derive(Debug, Clone, Copy)]
pub struct GraphPair {
    pub real: Var,
    pub fake: Var,
}

/// σ(x − mean(opposite)) for every logit on `side`.
pub fn graph_relativistic(g: &mut Graph, pair: GraphPair, side: Side) -> Var {
    let (own, other) = match side {
        Side::Real => (pair.real, pair.fake),
        Side::Fake => (pair.fake, pair.real),
    };
    let m = g.mean(other);
    let d = g.sub(own, m);
    g.sigmoid(d)
}

/// Mean of log(max(x, floor)).
fn mean_log(g: &mut Graph, x: Var) -> Var {
    let l = g.log_clamp(x, LOG_FLOOR);
    g.mean(l)
}

pub fn graph_loss_ra(g: &mut Graph, pair: GraphPair) -> Var {
    let real = graph_relativistic(g, pair, Side::Real);
    let fake = graph_relativistic(g, pair, Side::Fake);
    let one_minus = {
        let n = g.neg(fake);
        g.add_scalar(n, 1.0)
    };
    let a = mean_log(g, real);
    let b = mean_log(g, one_minus);
    let s = g.add(a, b);
    g.neg(s)
}

pub fn graph_d_loss_catra(g: &mut Graph, per_category: &[GraphPair], all: GraphPair) -> Var {
    let mut total = graph_loss_ra(g, all);
    // Summed in category order, then the pooled term last.
    let mut acc: Option<Var> = None;
    for &p in per_category {
        let l = graph_loss_ra(g, p);
        acc = Some(match acc {
            Some(a) => g.add(a, l),
            None => l,
        });
    }
    if let Some(a) = acc {
        total = g.add(a, total);
    }
    total
}

pub fn graph_g_loss_catra(g: &mut Graph, per_category: &[GraphPair], all: GraphPair) -> Var {
    let d = graph_d_loss_catra(g, per_category, all);
    g.neg(d)
}

fn graph_pairwise(g: &mut Graph, pair: GraphPair) -> Var {
    let d = g.sub(pair.fake, pair.real);
    let s = g.sigmoid(d);
    let m = mean_log(g, s);
    g.neg(m)
}

pub fn graph_g_loss_catrs(g: &mut Graph, per_category: &[GraphPair], all: GraphPair) -> Var {
    let mut acc: Option<Var> = None;
    for &p in per_category {
        let l = graph_pairwise(g, p);
        acc = Some(match acc {
            Some(a) => g.add(a, l),
            None => l,
        });
    }
    let last = graph_pairwise(g, all);
    match acc {
        Some(a) => g.add(a, last),
        None => last,
    }
}

pub fn relativistic_score(pair: &LogitBatchPair, side: Side) -> Result<Vec<f64>> {
    pair.validate()?;
    let mut g = Graph::new();
    let gp = pair.to_graph(&mut g);
    let s = graph_relativistic(&mut g, gp, side);
    Ok(g.value(s).iter().copied().collect())
}

pub fn loss_ra(pair: &LogitBatchPair) -> Result<f64> {
    pair.validate()?;
    let mut g = Graph::new();
    let gp = pair.to_graph(&mut g);
    let l = graph_loss_ra(&mut g, gp);
    Ok(g.scalar_value(l))
}

fn check_categories(per_category: &[LogitBatchPair], all: &LogitBatchPair, k: usize) -> Result<()> {
    if per_category.len() != k {
        return Err(Error::Dimension {
            context: "category pairs",
            expected: k,
            actual: per_category.len(),
        });
    }
    for p in per_category.iter().chain(std::iter::once(all)) {
        p.validate()?;
    }
    Ok(())
}

fn eval_catra(per_category: &[LogitBatchPair], all: &LogitBatchPair, k: usize, negate: bool) -> Result<f64> {
    check_categories(per_category, all, k)?;
    let mut g = Graph::new();
    let pairs: Vec<GraphPair> = per_category.iter().map(|p| p.to_graph(&mut g)).collect();
    let a = all.to_graph(&mut g);
    let out = if negate {
        graph_g_loss_catra(&mut g, &pairs, a)
    } else {
        graph_d_loss_catra(&mut g, &pairs, a)
    };
    Ok(g.scalar_value(out))
}

/// Σ_c L^Ra(c) + L^Ra(all). `k` is the expected number of categories.
pub fn d_loss_catra(per_category: &[LogitBatchPair], all: &LogitBatchPair, k: usize) -> Result<f64> {
    eval_catra(per_category, all, k, false)
}

/// Exact negation of [`d_loss_catra`].
pub fn g_loss_catra(per_category: &[LogitBatchPair], all: &LogitBatchPair, k: usize) -> Result<f64> {
    eval_catra(per_category, all, k, true)
}

/// Index-paired fake-vs-real loss summed over categories plus the pooled term.
pub fn g_loss_catrs(per_category: &[LogitBatchPair], all: &LogitBatchPair, k: usize) -> Result<f64> {
    check_categories(per_category, all, k)?;
    for p in per_category.iter().chain(std::iter::once(all)) {
        if p.real.len() != p.fake.len() {
            return Err(Error::Dimension {
                context: "pairwise real/fake batch length",
                expected: p.real.len(),
                actual: p.fake.len(),
            });
        }
    }
    let mut g = Graph::new();
    let pairs: Vec<GraphPair> = per_category.iter().map(|p| p.to_graph(&mut g)).collect();
    let a = all.to_graph(&mut g);
    let out = graph_g_loss_catrs(&mut g, &pairs, a);
    Ok(g.scalar_value(out))
}
