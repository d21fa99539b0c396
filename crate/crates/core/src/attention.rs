//! Single-head neighbourhood attention.
//!
//! Every member `k` of an agent's neighbourhood (itself first, then its
//! neighbours) is embedded as `z_k = W_l o_k + b`. Logits are the bilinear
//! form `e_k = (W_k z_k) . (W_q z_self)`, scores are their softmax and the
//! context is `h = relu(sum_k alpha_k z_k)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::nn::{dot, matvec, matvec_backward, relu_in_place, Dense, ParamLayout};
use crate::agent::{AgentError, LocalView, QFunction, TargetQFunction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionDims {
    pub obs_dim: usize,
    pub embed_dim: usize,
}

/// Placement of the attention tensors inside a flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct AttentionLayer {
    pub dims: AttentionDims,
    pub embed: Dense,
    pub key: usize,
    pub query: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct AttentionCache {
    pub z: Vec<Vec<f64>>,
    keys: Vec<Vec<f64>>,
    query: Vec<f64>,
    pub alpha: Vec<f64>,
    mix: Vec<f64>,
    pub h: Vec<f64>,
}

impl AttentionLayer {
    pub fn register(layout: &mut ParamLayout, dims: AttentionDims) -> Self {
        let d = dims.embed_dim;
        let embed = Dense::register(layout, "attention.embed", dims.obs_dim, d);
        let key = layout.push("attention.key", d, d);
        let query = layout.push("attention.query", d, d);
        AttentionLayer {
            dims,
            embed,
            key,
            query,
        }
    }

    /// Contiguous slice of the flat vector holding every attention tensor.
    pub fn range(&self) -> std::ops::Range<usize> {
        let d = self.dims.embed_dim;
        self.embed.w..self.query + d * d
    }

    pub fn init(&self, params: &mut [f64], rng: &mut impl Rng) {
        self.embed.init(params, rng);
        let d = self.dims.embed_dim;
        let bound = (3.0 / d as f64).sqrt();
        for w in &mut params[self.key..self.query + d * d] {
            *w = rng.gen_range(-bound..bound);
        }
    }

    fn key_weight<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        let d = self.dims.embed_dim;
        &params[self.key..self.key + d * d]
    }

    fn query_weight<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        let d = self.dims.embed_dim;
        &params[self.query..self.query + d * d]
    }

    pub fn embed(&self, params: &[f64], o: &[f64]) -> Result<Vec<f64>, AgentError> {
        if o.len() != self.dims.obs_dim {
            return Err(AgentError::Dimension {
                expected: self.dims.obs_dim,
                got: o.len(),
            });
        }
        let mut z = Vec::with_capacity(self.dims.embed_dim);
        self.embed.forward(params, o, &mut z);
        Ok(z)
    }

    /// Softmax scores of every entry of `members` as seen from `z_self`.
    pub fn scores(&self, params: &[f64], z_self: &[f64], members: &[Vec<f64>]) -> Vec<f64> {
        let d = self.dims.embed_dim;
        let q = matvec(self.query_weight(params), d, z_self);
        let logits: Vec<f64> = members
            .iter()
            .map(|z| dot(&matvec(self.key_weight(params), d, z), &q))
            .collect();
        softmax(&logits)
    }

    pub fn forward(&self, params: &[f64], view: &LocalView) -> Result<AttentionCache, AgentError> {
        let z = view
            .slots
            .iter()
            .map(|o| self.embed(params, o))
            .collect::<Result<Vec<_>, _>>()?;
        let d = self.dims.embed_dim;
        let query = matvec(self.query_weight(params), d, &z[0]);
        let keys: Vec<Vec<f64>> = z.iter().map(|zk| matvec(self.key_weight(params), d, zk)).collect();
        let logits: Vec<f64> = keys.iter().map(|k| dot(k, &query)).collect();
        let alpha = softmax(&logits);
        let mix = weighted_sum(&alpha, &z);
        let mut h = mix.clone();
        relu_in_place(&mut h);
        Ok(AttentionCache {
            z,
            keys,
            query,
            alpha,
            mix,
            h,
        })
    }

    /// Backpropagates `dh` (gradient w.r.t. the context) and `dz_self`
    /// (gradient w.r.t. the agent's own embedding used elsewhere) into `grad`.
    pub fn backward(
        &self,
        params: &[f64],
        cache: &AttentionCache,
        view: &LocalView,
        dh: &[f64],
        dz_self: &[f64],
        grad: &mut [f64],
    ) {
        let d = self.dims.embed_dim;
        let members = cache.z.len();
        let dmix: Vec<f64> = dh
            .iter()
            .zip(&cache.mix)
            .map(|(&g, &m)| if m > 0.0 { g } else { 0.0 })
            .collect();

        let mut dz: Vec<Vec<f64>> = cache
            .alpha
            .iter()
            .map(|&a| dmix.iter().map(|g| a * g).collect())
            .collect();
        for (o, g) in dz[0].iter_mut().zip(dz_self) {
            *o += g;
        }

        let dalpha: Vec<f64> = cache.z.iter().map(|zk| dot(zk, &dmix)).collect();
        let mean = dot(&cache.alpha, &dalpha);
        let dlogits: Vec<f64> = cache
            .alpha
            .iter()
            .zip(&dalpha)
            .map(|(&a, &g)| a * (g - mean))
            .collect();

        let mut dquery = vec![0.0; d];
        let kw = self.key_weight(params);
        let (gk, gq) = grad[self.key..self.query + d * d].split_at_mut(d * d);
        for k in 0..members {
            let de = dlogits[k];
            for (o, &kv) in dquery.iter_mut().zip(&cache.keys[k]) {
                *o += de * kv;
            }
            let dkey: Vec<f64> = cache.query.iter().map(|&q| de * q).collect();
            matvec_backward(kw, d, &cache.z[k], &dkey, gk, &mut dz[k]);
        }
        matvec_backward(self.query_weight(params), d, &cache.z[0], &dquery, gq, &mut dz[0]);

        for (o, g) in view.slots.iter().zip(&dz) {
            self.embed.backward(params, o, g, grad, None);
        }
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|&e| (e - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

fn weighted_sum(weights: &[f64], vectors: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; vectors.first().map_or(0, Vec::len)];
    for (&w, v) in weights.iter().zip(vectors) {
        for (o, &x) in out.iter_mut().zip(v) {
            *o += w * x;
        }
    }
    out
}

/// `relu(sum_k scores_k z_k)`.
pub fn aggregate(scores: &[f64], members: &[Vec<f64>]) -> Vec<f64> {
    assert_eq!(scores.len(), members.len(), "scores and embeddings must align");
    let mut h = weighted_sum(scores, members);
    relu_in_place(&mut h);
    h
}

/// Standalone attention parameters `W_l`, `b`, `W_k`, `W_q`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    layout: ParamLayout,
    layer: AttentionLayer,
    data: Vec<f64>,
}

impl AttentionParams {
    pub fn zeros(dims: AttentionDims) -> Self {
        let mut layout = ParamLayout::default();
        let layer = AttentionLayer::register(&mut layout, dims);
        let data = vec![0.0; layout.len];
        AttentionParams { layout, layer, data }
    }

    pub fn random(dims: AttentionDims, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(dims);
        p.layer.init(&mut p.data, rng);
        p
    }

    pub fn dims(&self) -> AttentionDims {
        self.layer.dims
    }

    /// Row-major tensor by name: `attention.embed.weight` (d x obs),
    /// `attention.embed.bias`, `attention.key`, `attention.query` (d x d).
    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout.get(name).map(|t| &self.data[t.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.layout.get(name)?.range();
        Some(&mut self.data[range])
    }

    pub fn embed(&self, o: &[f64]) -> Result<Vec<f64>, AgentError> {
        self.layer.embed(&self.data, o)
    }

    /// Scores over `members` (self included) from the viewpoint of `z_self`.
    pub fn scores(&self, z_self: &[f64], members: &[Vec<f64>]) -> Vec<f64> {
        assert!(!members.is_empty(), "attention needs at least one member");
        self.layer.scores(&self.data, z_self, members)
    }

    /// Score row of the view's owner over its members.
    pub fn row(&self, view: &LocalView) -> Result<Vec<f64>, AgentError> {
        Ok(self.layer.forward(&self.data, view)?.alpha)
    }
}

/// Score row produced by an attention-enabled Q-function, `None` otherwise.
pub fn score_row(qf: &QFunction, view: &LocalView) -> Result<Option<Vec<f64>>, AgentError> {
    match qf.attention_layer() {
        Some(layer) => Ok(Some(layer.forward(qf.params(), view)?.alpha)),
        None => Ok(None),
    }
}

/// Weight that neighbour `j` assigns to agent `i`, taken from `j`'s target
/// attention over `j`'s own view. `slot_of_i` is the position of `i` in that
/// view. Only target parameters are consulted.
pub fn target_score_for_amendment(
    target_of_j: &TargetQFunction,
    view_of_j: &LocalView,
    slot_of_i: usize,
) -> Result<f64, AgentError> {
    let row = score_row(target_of_j.as_q(), view_of_j)?.ok_or(AgentError::NoAttention)?;
    row.get(slot_of_i).copied().ok_or(AgentError::Dimension {
        expected: row.len(),
        got: slot_of_i,
    })
}

/// Copies only the attention tensors from eval to target.
pub fn sync_attention_target(eval: &QFunction, target: &mut TargetQFunction) -> Result<(), AgentError> {
    target.copy_attention_from(eval)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn dims() -> AttentionDims {
        AttentionDims {
            obs_dim: 3,
            embed_dim: 3,
        }
    }

    #[test]
    fn identity_embedding_returns_basis_vector() {
        let mut p = AttentionParams::zeros(dims());
        let w = p.tensor_mut("attention.embed.weight").unwrap();
        w.copy_from_slice(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(p.embed(&[0.0, 1.0, 0.0]).unwrap(), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn zero_observation_embeds_to_bias() {
        let mut p = AttentionParams::random(dims(), &mut stream(1, "a"));
        p.tensor_mut("attention.embed.bias").unwrap().copy_from_slice(&[0.5, -1.0, 2.0]);
        assert_eq!(p.embed(&[0.0; 3]).unwrap(), vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn embed_rejects_wrong_dimension() {
        let p = AttentionParams::zeros(dims());
        assert_eq!(
            p.embed(&[1.0]),
            Err(AgentError::Dimension { expected: 3, got: 1 })
        );
    }

    #[test]
    fn identical_members_get_uniform_scores() {
        let p = AttentionParams::random(dims(), &mut stream(2, "a"));
        let z = p.embed(&[0.3, 0.1, 0.9]).unwrap();
        let s = p.scores(&z, &[z.clone(), z.clone(), z.clone(), z.clone()]);
        for x in s {
            assert!((x - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let a = softmax(&[0.1, 2.0, -1.0]);
        let b = softmax(&[100.1, 102.0, 99.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn aggregate_applies_rectifier() {
        assert_eq!(aggregate(&[1.0], &[vec![1.0, -2.0]]), vec![1.0, 0.0]);
        assert_eq!(
            aggregate(&[0.5, 0.5], &[vec![-1.0, -2.0], vec![-3.0, 0.0]]),
            vec![0.0, 0.0]
        );
    }
}
