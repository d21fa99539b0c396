//! Dueling Q-network over a flat parameter vector.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::nn::{Dense, ParamLayout};
use super::{AgentError, LocalView};
use crate::attention::{AttentionCache, AttentionDims, AttentionLayer};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QArch {
    pub obs_dim: usize,
    pub hidden: Vec<usize>,
    pub actions: usize,
    /// Embedding width of the attention front end, if any.
    pub attention: Option<usize>,
}

impl QArch {
    pub fn plain(obs_dim: usize, hidden: Vec<usize>, actions: usize) -> Self {
        QArch {
            obs_dim,
            hidden,
            actions,
            attention: None,
        }
    }

    pub fn with_attention(obs_dim: usize, hidden: Vec<usize>, actions: usize, embed_dim: usize) -> Self {
        QArch {
            obs_dim,
            hidden,
            actions,
            attention: Some(embed_dim),
        }
    }

    /// Width of the trunk input: the raw observation, or `h ++ z_self`.
    pub fn trunk_input(&self) -> usize {
        self.attention.map_or(self.obs_dim, |d| 2 * d)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QFunction {
    arch: QArch,
    layout: ParamLayout,
    params: Vec<f64>,
    trunk: Vec<Dense>,
    value: Dense,
    advantage: Dense,
    attention: Option<AttentionLayer>,
}

pub(crate) struct ForwardCache {
    attention: Option<AttentionCache>,
    input: Vec<f64>,
    /// Post-activation output of each trunk layer.
    hidden: Vec<Vec<f64>>,
    pub q: Vec<f64>,
}

impl QFunction {
    /// All-zero parameters.
    pub fn zeros(arch: QArch) -> Result<Self, AgentError> {
        if arch.obs_dim == 0 || arch.actions == 0 || arch.hidden.contains(&0) || arch.attention == Some(0) {
            return Err(AgentError::Architecture(format!("{arch:?}")));
        }
        let mut layout = ParamLayout::default();
        let attention = arch.attention.map(|embed_dim| {
            AttentionLayer::register(
                &mut layout,
                AttentionDims {
                    obs_dim: arch.obs_dim,
                    embed_dim,
                },
            )
        });
        let mut trunk = Vec::with_capacity(arch.hidden.len());
        let mut width = arch.trunk_input();
        for (k, &h) in arch.hidden.iter().enumerate() {
            trunk.push(Dense::register(&mut layout, &format!("trunk.{k}"), width, h));
            width = h;
        }
        let value = Dense::register(&mut layout, "value", width, 1);
        let advantage = Dense::register(&mut layout, "advantage", width, arch.actions);
        let params = vec![0.0; layout.len];
        Ok(QFunction {
            arch,
            layout,
            params,
            trunk,
            value,
            advantage,
            attention,
        })
    }

    /// Glorot-initialised parameters drawn from `rng`.
    pub fn random(arch: QArch, rng: &mut impl Rng) -> Result<Self, AgentError> {
        let mut qf = Self::zeros(arch)?;
        if let Some(a) = qf.attention {
            a.init(&mut qf.params, rng);
        }
        for d in qf.trunk.iter().chain([&qf.value, &qf.advantage]) {
            d.init(&mut qf.params, rng);
        }
        Ok(qf)
    }

    pub fn arch(&self) -> &QArch {
        &self.arch
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.layout.get(name)?.range();
        Some(&mut self.params[range])
    }

    pub(crate) fn attention_layer(&self) -> Option<&AttentionLayer> {
        self.attention.as_ref()
    }

    fn check_view(&self, view: &LocalView) -> Result<(), AgentError> {
        let Some(own) = view.slots.first() else {
            return Err(AgentError::Dimension {
                expected: 1,
                got: 0,
            });
        };
        let slots: &[_] = if self.attention.is_some() { &view.slots } else { std::slice::from_ref(own) };
        for s in slots {
            if s.len() != self.arch.obs_dim {
                return Err(AgentError::Dimension {
                    expected: self.arch.obs_dim,
                    got: s.len(),
                });
            }
        }
        Ok(())
    }

    pub(crate) fn forward(&self, view: &LocalView) -> Result<ForwardCache, AgentError> {
        self.check_view(view)?;
        let p = &self.params;
        let (attention, input) = match &self.attention {
            Some(layer) => {
                let cache = layer.forward(p, view)?;
                let mut input = cache.h.clone();
                input.extend_from_slice(&cache.z[0]);
                (Some(cache), input)
            }
            None => (None, view.slots[0].to_vec()),
        };
        let mut hidden: Vec<Vec<f64>> = Vec::with_capacity(self.trunk.len());
        for (k, layer) in self.trunk.iter().enumerate() {
            let x = if k == 0 { &input } else { &hidden[k - 1] };
            let mut y = Vec::with_capacity(layer.output);
            layer.forward(p, x, &mut y);
            super::nn::relu_in_place(&mut y);
            hidden.push(y);
        }
        let top = hidden.last().unwrap_or(&input);
        let mut v = Vec::with_capacity(1);
        self.value.forward(p, top, &mut v);
        let mut a = Vec::with_capacity(self.arch.actions);
        self.advantage.forward(p, top, &mut a);
        let mean = a.iter().sum::<f64>() / a.len() as f64;
        let q = a.iter().map(|&x| v[0] + x - mean).collect();
        Ok(ForwardCache {
            attention,
            input,
            hidden,
            q,
        })
    }

    /// Accumulates `dL/dtheta` into `grad` given `dL/dQ`.
    pub(crate) fn backward(&self, cache: &ForwardCache, view: &LocalView, dq: &[f64], grad: &mut [f64]) {
        let p = &self.params;
        let top = cache.hidden.last().unwrap_or(&cache.input);
        // Q_a = V + A_a - mean(A): dV = sum dQ, dA_a = dQ_a - mean(dQ).
        let total: f64 = dq.iter().sum();
        let mean = total / dq.len() as f64;
        let da: Vec<f64> = dq.iter().map(|&g| g - mean).collect();

        let needs_input_grad = self.attention.is_some();
        let mut dtop = vec![0.0; top.len()];
        self.value.backward(p, top, &[total], grad, Some(&mut dtop));
        self.advantage.backward(p, top, &da, grad, Some(&mut dtop));

        let mut dy = dtop;
        for k in (0..self.trunk.len()).rev() {
            for (g, &y) in dy.iter_mut().zip(&cache.hidden[k]) {
                if y <= 0.0 {
                    *g = 0.0;
                }
            }
            let x = if k == 0 { &cache.input } else { &cache.hidden[k - 1] };
            if k == 0 && !needs_input_grad {
                self.trunk[k].backward(p, x, &dy, grad, None);
                return;
            }
            let mut dx = vec![0.0; x.len()];
            self.trunk[k].backward(p, x, &dy, grad, Some(&mut dx));
            dy = dx;
        }
        if let (Some(layer), Some(ac)) = (&self.attention, &cache.attention) {
            let d = layer.dims.embed_dim;
            layer.backward(p, ac, view, &dy[..d], &dy[d..], grad);
        }
    }

    pub(crate) fn copy_attention_from(&mut self, other: &QFunction) -> Result<(), AgentError> {
        if self.arch != other.arch {
            return Err(AgentError::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.arch, other.arch
            )));
        }
        if let Some(layer) = self.attention {
            let r = layer.range();
            self.params[r.clone()].copy_from_slice(&other.params[r]);
        }
        Ok(())
    }

    pub(crate) fn copy_params_from(&mut self, other: &QFunction) -> Result<(), AgentError> {
        if self.arch != other.arch {
            return Err(AgentError::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.arch, other.arch
            )));
        }
        self.params.copy_from_slice(&other.params);
        Ok(())
    }
}

/// Frozen copy of an eval network, changed only by [`super::sync_target`].
#[derive(Debug, Clone, PartialEq)]
pub struct TargetQFunction(QFunction);

impl TargetQFunction {
    pub fn from_eval(qf: &QFunction) -> Self {
        TargetQFunction(qf.clone())
    }

    pub fn as_q(&self) -> &QFunction {
        &self.0
    }

    pub(crate) fn sync(&mut self, qf: &QFunction) -> Result<(), AgentError> {
        self.0.copy_params_from(qf)
    }

    pub(crate) fn copy_attention_from(&mut self, qf: &QFunction) -> Result<(), AgentError> {
        self.0.copy_attention_from(qf)
    }
}
