use crate::autograd::{Graph, Norm};
use crate::error::Result;
use crate::ops::{BatchStats, RunningStats};
use crate::params::{ParamId, ParamStore};
use crate::rng::RngState;
use crate::tensor::{Shape, Tensor};

/// Scale of the final classifier's initialization relative to He scaling;
/// initial logits stay near zero.
pub(crate) const HEAD_GAIN: f32 = 0.1;

fn he_normal(shape: Shape, fan_in: usize, gain: f32, rng: &mut RngState) -> Tensor {
    let std = gain * (2.0 / fan_in as f32).sqrt();
    Tensor::from_fn(shape, |_| rng.normal() * std)
}

/// 3×3 convolution with bias.
#[derive(Debug, Clone)]
pub(crate) struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub cin: usize,
}

impl Conv {
    pub fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, gain: f32, rng: &mut RngState) -> Self {
        let w = he_normal(Shape::new(cout, cin, 3, 3), cin * 9, gain, rng);
        Conv {
            weight: store.add(format!("{name}.weight"), w),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(Shape::new(1, cout, 1, 1))),
            cin,
        }
    }

    pub fn apply<G: Graph>(&self, g: &mut G, store: &ParamStore, x: &G::Value) -> Result<G::Value> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv2d(x, &w, &b)
    }
}

/// Convolution, batch normalization, ReLU.
#[derive(Debug, Clone)]
pub(crate) struct ConvBn {
    pub conv: Conv,
    pub gamma: ParamId,
    pub beta: ParamId,
    /// Index into the network's running-statistics table.
    pub stats: usize,
}

impl ConvBn {
    pub fn new(
        store: &mut ParamStore,
        running: &mut Vec<(String, RunningStats)>,
        name: &str,
        cin: usize,
        cout: usize,
        rng: &mut RngState,
    ) -> Self {
        let conv = Conv::new(store, name, cin, cout, 1.0, rng);
        let p = Shape::new(1, cout, 1, 1);
        let gamma = store.add(format!("{name}.bn.gamma"), Tensor::full(p, 1.0));
        let beta = store.add(format!("{name}.bn.beta"), Tensor::zeros(p));
        running.push((format!("{name}.bn"), RunningStats::new(cout)));
        ConvBn {
            conv,
            gamma,
            beta,
            stats: running.len() - 1,
        }
    }

    pub fn apply<G: Graph>(
        &self,
        g: &mut G,
        store: &ParamStore,
        running: &[(String, RunningStats)],
        x: &G::Value,
        train: bool,
        batch_stats: &mut Vec<(usize, BatchStats)>,
    ) -> Result<G::Value> {
        let y = self.conv.apply(g, store, x)?;
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        let norm = if train {
            Norm::Batch
        } else {
            Norm::Running(&running[self.stats].1)
        };
        let (y, stats) = g.batch_norm(&y, &gamma, &beta, norm)?;
        if let Some(s) = stats {
            batch_stats.push((self.stats, s));
        }
        Ok(g.relu(&y))
    }
}

/// Transposed convolution that doubles the spatial size.
#[derive(Debug, Clone)]
pub(crate) struct Up {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Up {
    pub fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, rng: &mut RngState) -> Self {
        let w = he_normal(Shape::new(cin, cout, 3, 3), cin * 9, 1.0, rng);
        Up {
            weight: store.add(format!("{name}.weight"), w),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(Shape::new(1, cout, 1, 1))),
        }
    }

    pub fn apply<G: Graph>(&self, g: &mut G, store: &ParamStore, x: &G::Value) -> Result<G::Value> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.transpose_conv2(x, &w, &b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_bn_parameter_count_by_hand() {
        // 2·4·9 weights + 4 biases + 4 scales + 4 shifts
        let mut store = ParamStore::new();
        let mut running = Vec::new();
        ConvBn::new(&mut store, &mut running, "toy", 2, 4, &mut RngState::new(0));
        assert_eq!(store.scalar_count(), 84);
        assert_eq!(running.len(), 1);
    }
}
