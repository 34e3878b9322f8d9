//! Noise-conditional score network: an MLP `s(x, i)` with a learned
//! scale and bias per noise level on every hidden layer.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::rng::NoiseRng;
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor;

/// Architecture of an [`NcsnMlp`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MlpShape {
    /// Input and output dimension.
    pub dim: usize,
    /// Width of every hidden layer.
    pub hidden: usize,
    /// Number of hidden layers.
    pub layers: usize,
    /// Number of noise levels, i.e. rows of the conditioning table.
    pub levels: usize,
}

impl MlpShape {
    /// Shapes of all parameter tensors in storage order:
    ///
    /// 1. for each hidden layer `l`: weight `[hidden, fan_in]`, bias `[hidden]`
    /// 2. output weight `[dim, hidden]`, output bias `[dim]`
    /// 3. for each level `i`, for each hidden layer `l`: scale `[hidden]`,
    ///    shift `[hidden]`
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = Vec::new();
        for l in 0..self.layers {
            let fan_in = if l == 0 { self.dim } else { self.hidden };
            shapes.push(vec![self.hidden, fan_in]);
            shapes.push(vec![self.hidden]);
        }
        shapes.push(vec![self.dim, self.hidden]);
        shapes.push(vec![self.dim]);
        for _ in 0..self.levels * self.layers {
            shapes.push(vec![self.hidden]);
            shapes.push(vec![self.hidden]);
        }
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|s| s.iter().product::<usize>())
            .sum()
    }

    fn scale_index(&self, level: usize, layer: usize) -> usize {
        2 * self.layers + 2 + 2 * (level * self.layers + layer)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NcsnMlp {
    shape: MlpShape,
    schedule: NoiseSchedule,
    params: Vec<Tensor>,
}

impl NcsnMlp {
    /// Fresh network: weights and biases uniform in `±sqrt(1/fan_in)`,
    /// conditioning scales 1 and shifts 0.
    pub fn build(
        dim: usize,
        hidden: usize,
        layers: usize,
        schedule: NoiseSchedule,
        rng: &mut NoiseRng,
    ) -> Result<Self> {
        if dim == 0 || hidden == 0 || layers == 0 {
            return Err(Error::invalid(format!(
                "network needs dim, hidden and layers >= 1 (got {dim}, {hidden}, {layers})"
            )));
        }
        let shape = MlpShape {
            dim,
            hidden,
            layers,
            levels: schedule.levels(),
        };
        let shapes = shape.param_shapes();
        let affine = 2 * layers + 2;
        let mut params = Vec::with_capacity(shapes.len());
        for (k, s) in shapes.iter().enumerate() {
            if k < affine {
                // Weight and bias of one affine map share its fan-in.
                let fan_in = if k % 2 == 0 { s[1] } else { shapes[k - 1][1] };
                let bound = (1.0 / fan_in as f64).sqrt();
                let n: usize = s.iter().product();
                let data = (0..n).map(|_| rng.uniform_in(-bound, bound)).collect();
                params.push(Tensor::from_parts(s.clone(), data));
            } else if (k - affine) % 2 == 0 {
                params.push(Tensor::filled(s, 1.0));
            } else {
                params.push(Tensor::zeros(s));
            }
        }
        Ok(NcsnMlp {
            shape,
            schedule,
            params,
        })
    }

    /// Reassembles a network from stored parameters, checking every shape.
    pub fn from_parts(
        shape: MlpShape,
        schedule: NoiseSchedule,
        params: Vec<Tensor>,
    ) -> Result<Self> {
        if schedule.levels() != shape.levels {
            return Err(Error::invalid(format!(
                "schedule has {} levels, network expects {}",
                schedule.levels(),
                shape.levels
            )));
        }
        let mut net = NcsnMlp {
            shape,
            schedule,
            params: Vec::new(),
        };
        net.set_params(params)?;
        Ok(net)
    }

    pub fn shape(&self) -> MlpShape {
        self.shape
    }

    pub fn dim(&self) -> usize {
        self.shape.dim
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn levels(&self) -> usize {
        self.shape.levels
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn set_params(&mut self, params: Vec<Tensor>) -> Result<()> {
        let shapes = self.shape.param_shapes();
        if params.len() != shapes.len() {
            return Err(Error::invalid(format!(
                "expected {} parameter tensors, got {}",
                shapes.len(),
                params.len()
            )));
        }
        for (k, (p, s)) in params.iter().zip(&shapes).enumerate() {
            if p.shape() != s.as_slice() {
                return Err(Error::Shape {
                    op: "set_params",
                    lhs: s.clone(),
                    rhs: p.shape().to_vec(),
                });
            }
            if !p.is_finite() {
                return Err(Error::invalid(format!(
                    "parameter tensor {k} is not finite"
                )));
            }
        }
        self.params = params;
        Ok(())
    }

    /// Conditioning scale of `layer` at `level`.
    pub fn scale(&self, level: usize, layer: usize) -> &Tensor {
        &self.params[self.shape.scale_index(level, layer)]
    }

    /// Conditioning shift of `layer` at `level`.
    pub fn shift(&self, level: usize, layer: usize) -> &Tensor {
        &self.params[self.shape.scale_index(level, layer) + 1]
    }

    pub fn scale_mut(&mut self, level: usize, layer: usize) -> &mut Tensor {
        let k = self.shape.scale_index(level, layer);
        &mut self.params[k]
    }

    pub fn shift_mut(&mut self, level: usize, layer: usize) -> &mut Tensor {
        let k = self.shape.scale_index(level, layer) + 1;
        &mut self.params[k]
    }

    fn check_level(&self, level: usize) -> Result<()> {
        if level >= self.shape.levels {
            return Err(Error::LevelOutOfRange {
                level,
                levels: self.shape.levels,
            });
        }
        Ok(())
    }

    /// Records every parameter as a leaf of `g`.
    pub fn bind(&self, g: &mut Graph) -> BoundNet<'_> {
        let vars = self.params.iter().map(|p| g.leaf(p.clone())).collect();
        BoundNet { net: self, vars }
    }

    /// Binds the network to parameter nodes already on a graph, in storage order.
    pub fn bind_vars(&self, vars: Vec<Var>) -> Result<BoundNet<'_>> {
        if vars.len() != self.params.len() {
            return Err(Error::invalid(format!(
                "expected {} parameter nodes, got {}",
                self.params.len(),
                vars.len()
            )));
        }
        Ok(BoundNet { net: self, vars })
    }

    /// Score estimate at `level` for a point or a batch (one point per row),
    /// evaluated outside any caller graph.
    pub fn evaluate(&self, x: &Tensor, level: usize) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let input = g.constant(x.clone());
        let out = bound.forward(&mut g, input, level)?;
        Ok(g.value(out).clone())
    }
}

/// Network parameters recorded on a particular graph.
pub struct BoundNet<'a> {
    net: &'a NcsnMlp,
    vars: Vec<Var>,
}

impl BoundNet<'_> {
    /// Parameter nodes in storage order.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn net(&self) -> &NcsnMlp {
        self.net
    }

    /// `h <- softplus(scale_i * (W h + b) + shift_i)` per hidden layer, then
    /// a final affine map back to the input dimension.
    pub fn forward(&self, g: &mut Graph, x: Var, level: usize) -> Result<Var> {
        self.net.check_level(level)?;
        let shape = self.net.shape;
        let cols = g.value(x).cols();
        if cols != shape.dim || g.value(x).rank() == 0 {
            return Err(Error::Shape {
                op: "forward",
                lhs: vec![shape.dim],
                rhs: g.value(x).shape().to_vec(),
            });
        }
        let mut h = x;
        for l in 0..shape.layers {
            let pre = g.matvec(self.vars[2 * l], h)?;
            let pre = g.add(pre, self.vars[2 * l + 1])?;
            let k = shape.scale_index(level, l);
            let pre = g.mul(pre, self.vars[k])?;
            let pre = g.add(pre, self.vars[k + 1])?;
            h = g.softplus(pre)?;
        }
        let out = g.matvec(self.vars[2 * shape.layers], h)?;
        g.add(out, self.vars[2 * shape.layers + 1])
    }
}
