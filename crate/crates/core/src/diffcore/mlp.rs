use std::rc::Rc;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{ParamStore, SliceId};
use super::tape::{Graph, Var};
use crate::error::{Error, Result};

/// Fully connected ReLU network shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub hidden_units: usize,
    pub output_dim: usize,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_layers: usize, hidden_units: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_layers,
            hidden_units,
            output_dim,
        }
    }

    /// `(fan_in, fan_out)` of every layer, output layer last.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_layers + 1);
        let mut fan_in = self.input_dim;
        for _ in 0..self.hidden_layers {
            dims.push((fan_in, self.hidden_units));
            fan_in = self.hidden_units;
        }
        dims.push((fan_in, self.output_dim));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| (i + 1) * o).sum()
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        vec![self.hidden_units; self.hidden_layers]
    }
}

/// Binary keep/drop pattern over the hidden units of one network.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DropoutMask {
    keep_prob_bits: u64,
    layers: Vec<Vec<bool>>,
}

impl DropoutMask {
    pub fn new(layers: Vec<Vec<bool>>, keep_prob: f64) -> Result<Self> {
        if !(keep_prob > 0.0 && keep_prob <= 1.0) {
            return Err(Error::Usage(format!("keep_prob {keep_prob} outside (0, 1]")));
        }
        Ok(Self {
            keep_prob_bits: keep_prob.to_bits(),
            layers,
        })
    }

    /// Mask that keeps every unit.
    pub fn full(widths: &[usize]) -> Self {
        Self::new(widths.iter().map(|&w| vec![true; w]).collect(), 1.0).unwrap()
    }

    /// Draws Bernoulli(keep_prob) units per layer. A layer whose fraction of
    /// kept units falls outside 3σ of `keep_prob` is redrawn.
    pub fn generate<R: Rng + ?Sized>(widths: &[usize], keep_prob: f64, rng: &mut R) -> Result<Self> {
        if !(keep_prob > 0.0 && keep_prob <= 1.0) {
            return Err(Error::Usage(format!("keep_prob {keep_prob} outside (0, 1]")));
        }
        let layers = widths
            .iter()
            .map(|&w| {
                let sd = (keep_prob * (1.0 - keep_prob) / w as f64).sqrt();
                loop {
                    let layer: Vec<bool> = (0..w).map(|_| rng.gen_bool(keep_prob)).collect();
                    let frac = layer.iter().filter(|&&b| b).count() as f64 / w as f64;
                    if (frac - keep_prob).abs() <= 3.0 * sd + 1e-12 {
                        break layer;
                    }
                }
            })
            .collect();
        Self::new(layers, keep_prob)
    }

    pub fn keep_prob(&self) -> f64 {
        f64::from_bits(self.keep_prob_bits)
    }

    pub fn layers(&self) -> &[Vec<bool>] {
        &self.layers
    }

    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().map(Vec::len).collect()
    }

    /// Mask of one layer scaled by 1/keep_prob.
    pub fn scaled_row(&self, layer: usize) -> Array1<f64> {
        let scale = 1.0 / self.keep_prob();
        self.layers[layer]
            .iter()
            .map(|&k| if k { scale } else { 0.0 })
            .collect()
    }
}

/// A ReLU network whose weights live in a [`ParamStore`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<(SliceId, SliceId)>,
}

impl Mlp {
    /// Registers the layers under `prefix` and initialises weights uniformly
    /// in ±sqrt(6/(fan_in+fan_out)) with zero biases.
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, spec: MlpSpec, rng: &mut R) -> Self {
        let mut layers = Vec::new();
        for (i, (fan_in, fan_out)) in spec.layer_dims().into_iter().enumerate() {
            let w = store.add(format!("{prefix}.l{i}.w"), fan_in, fan_out);
            let b = store.add(format!("{prefix}.l{i}.b"), 1, fan_out);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            store.init_uniform(w, bound, rng);
            layers.push((w, b));
        }
        Self { spec, layers }
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[(SliceId, SliceId)] {
        &self.layers
    }

    pub fn output_layer(&self) -> (SliceId, SliceId) {
        *self.layers.last().unwrap()
    }

    /// Zeroes the output weights and sets the output bias, so the network
    /// emits `bias` for every input.
    pub fn set_constant_output(&self, store: &mut ParamStore, bias: &[f64]) -> Result<()> {
        if bias.len() != self.spec.output_dim {
            return Err(Error::Shape(format!(
                "output bias of {} for output_dim {}",
                bias.len(),
                self.spec.output_dim
            )));
        }
        let (w, b) = self.output_layer();
        store.fill(w, 0.0);
        store.slice_values_mut(b).copy_from_slice(bias);
        Ok(())
    }

    fn check_mask(&self, mask: Option<&DropoutMask>) -> Result<()> {
        if let Some(m) = mask {
            if m.widths() != self.spec.hidden_widths() {
                return Err(Error::Shape(format!(
                    "mask widths {:?} for hidden layers {:?}",
                    m.widths(),
                    self.spec.hidden_widths()
                )));
            }
        }
        Ok(())
    }

    /// Records the forward pass of a batch `x` (n × input_dim).
    pub fn forward_graph(
        &self,
        g: &Graph,
        store: &ParamStore,
        x: Var,
        mask: Option<&DropoutMask>,
    ) -> Result<Var> {
        self.check_mask(mask)?;
        if g.shape(x).1 != self.spec.input_dim {
            return Err(Error::Shape(format!(
                "input has {} columns, network expects {}",
                g.shape(x).1,
                self.spec.input_dim
            )));
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let wv = g.param(store, w);
            let bv = g.param(store, b);
            h = g.add_row(g.matmul(h, wv)?, bv)?;
            if i < last {
                h = g.relu(h);
                if let Some(m) = mask {
                    h = g.mul_row_const(h, Rc::new(m.scaled_row(i)))?;
                }
            }
        }
        Ok(h)
    }
}

/// Evaluates the network at a single input without recording gradients.
pub fn forward(mlp: &Mlp, store: &ParamStore, x: &[f64], mask: Option<&DropoutMask>) -> Result<Vec<f64>> {
    let g = Graph::new();
    let xv = g.constant(Array2::from_shape_vec((1, x.len()), x.to_vec()).unwrap());
    let out = mlp.forward_graph(&g, store, xv, mask)?;
    let v = g.value(out).row(0).to_vec();
    Ok(v)
}
