//! Model graphs: a DAG of layer nodes with a hierarchical parameter registry.

use crate::error::{Error, Result};
use crate::layers::{
    add_forward, batchnorm_backward, batchnorm_forward, concat_backward, concat_forward,
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, depthwise_backward,
    depthwise_forward, init_state, maxpool_backward, maxpool_forward, relu_backward, relu_forward,
    softmax_backward, softmax_forward, BatchNormCache, LayerSpec, LayerState, Mode,
};
use crate::tensor::{Element, Tensor};
use rand::Rng;
use std::collections::BTreeMap;

#[derive(Clone, Debug)]
pub struct Node<E: Element> {
    pub name: String,
    pub spec: LayerSpec,
    pub inputs: Vec<usize>,
    pub state: LayerState<E>,
}

/// DAG of layers in topological order with exactly one output node.
#[derive(Clone, Debug)]
pub struct ModelGraph<E: Element> {
    pub nodes: Vec<Node<E>>,
    pub output: usize,
}

/// Per-node values saved by a forward call for the matching backward call.
pub struct GraphCache<E: Element> {
    outputs: Vec<Tensor<E>>,
    aux: Vec<NodeAux<E>>,
}

enum NodeAux<E: Element> {
    None,
    Pool(Vec<usize>),
    BatchNorm(BatchNormCache<E>),
}

/// Gradients keyed by full parameter name (`node.param`).
pub type GradStore<E> = BTreeMap<String, Tensor<E>>;

/// Incrementally builds a valid graph; node inputs must already exist, so the
/// node list is topologically ordered by construction.
pub struct GraphBuilder<'r, E: Element, R: Rng> {
    nodes: Vec<Node<E>>,
    rng: &'r mut R,
}

impl<'r, E: Element, R: Rng> GraphBuilder<'r, E, R> {
    pub fn new(rng: &'r mut R) -> Self {
        Self {
            nodes: Vec::new(),
            rng,
        }
    }

    pub fn add(&mut self, name: impl Into<String>, spec: LayerSpec, inputs: &[usize]) -> Result<usize> {
        let name = name.into();
        spec.validate()?;
        let id = self.nodes.len();
        for &i in inputs {
            if i >= id {
                return Err(Error::Graph(format!(
                    "node {name} consumes node {i} which does not precede it"
                )));
            }
        }
        if self.nodes.iter().any(|n| n.name == name) {
            return Err(Error::Graph(format!("duplicate node name {name}")));
        }
        let state = init_state(&spec, self.rng);
        self.nodes.push(Node {
            name,
            spec,
            inputs: inputs.to_vec(),
            state,
        });
        Ok(id)
    }

    pub fn finish(self, output: usize) -> Result<ModelGraph<E>> {
        if output >= self.nodes.len() {
            return Err(Error::Graph("output node out of range".into()));
        }
        Ok(ModelGraph {
            nodes: self.nodes,
            output,
        })
    }

    /// Finishes with the most recently added node as the output.
    pub fn finish_with_last(self) -> Result<ModelGraph<E>> {
        if self.nodes.is_empty() {
            return Err(Error::Graph("empty graph".into()));
        }
        let output = self.nodes.len() - 1;
        self.finish(output)
    }

    /// Continues building on top of an existing graph.
    pub fn from_graph(graph: ModelGraph<E>, rng: &'r mut R) -> Self {
        Self {
            nodes: graph.nodes,
            rng,
        }
    }
}

impl<E: Element> ModelGraph<E> {
    /// Per-sample input shape `[C, H, W]` declared by the input node.
    pub fn input_shape(&self) -> &[usize] {
        match &self.nodes[0].spec {
            LayerSpec::Input { shape } => shape,
            _ => panic!("node 0 is not the input node"),
        }
    }

    pub fn parameters(&self) -> Vec<(String, &Tensor<E>)> {
        self.nodes
            .iter()
            .flat_map(|n| {
                n.state
                    .params
                    .iter()
                    .map(move |(p, t)| (format!("{}.{p}", n.name), t))
            })
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor<E>)> {
        self.nodes
            .iter_mut()
            .flat_map(|n| {
                let name = n.name.clone();
                n.state
                    .params
                    .iter_mut()
                    .map(move |(p, t)| (format!("{name}.{p}"), t))
            })
            .collect()
    }

    pub fn buffers(&self) -> Vec<(String, &Tensor<E>)> {
        self.nodes
            .iter()
            .flat_map(|n| {
                n.state
                    .buffers
                    .iter()
                    .map(move |(p, t)| (format!("{}.{p}", n.name), t))
            })
            .collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<E>)> {
        self.nodes
            .iter_mut()
            .flat_map(|n| {
                let name = n.name.clone();
                n.state
                    .buffers
                    .iter_mut()
                    .map(move |(p, t)| (format!("{name}.{p}"), t))
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn conv_layer_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n.spec, LayerSpec::Conv2d { .. }))
            .count()
    }

    pub fn pool_layer_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n.spec, LayerSpec::MaxPool { .. }))
            .count()
    }

    /// Lossy precision change of every parameter and buffer.
    pub fn cast<T: Element>(&self) -> ModelGraph<T> {
        ModelGraph {
            nodes: self
                .nodes
                .iter()
                .map(|n| Node {
                    name: n.name.clone(),
                    spec: n.spec.clone(),
                    inputs: n.inputs.clone(),
                    state: LayerState {
                        params: n
                            .state
                            .params
                            .iter()
                            .map(|(p, t)| (p.clone(), t.cast()))
                            .collect(),
                        buffers: n
                            .state
                            .buffers
                            .iter()
                            .map(|(p, t)| (p.clone(), t.cast()))
                            .collect(),
                    },
                })
                .collect(),
            output: self.output,
        }
    }

    /// Evaluates the graph on a batch `[B, C, H, W]`.
    ///
    /// Train mode updates batchnorm running statistics; infer mode leaves all
    /// state untouched.
    pub fn forward(&mut self, x: &Tensor<E>, mode: Mode) -> Result<(Tensor<E>, GraphCache<E>)> {
        if x.shape().len() != 4 || x.shape()[1..] != *self.input_shape() {
            return Err(Error::ShapeMismatch(format!(
                "graph expects [B, {:?}] input, got {:?}",
                self.input_shape(),
                x.shape()
            )));
        }
        let mut outputs: Vec<Tensor<E>> = Vec::with_capacity(self.nodes.len());
        let mut aux: Vec<NodeAux<E>> = Vec::with_capacity(self.nodes.len());

        for idx in 0..self.nodes.len() {
            let ins = self.nodes[idx].inputs.clone();
            let get = |i: usize| -> &Tensor<E> { &outputs[i] };
            let (y, a) = match &self.nodes[idx].spec {
                LayerSpec::Input { .. } => (x.clone(), NodeAux::None),
                LayerSpec::Conv2d {
                    stride, padding, ..
                } => {
                    let st = &self.nodes[idx].state;
                    (
                        conv2d_forward(get(ins[0]), st.param("kernel"), st.param("bias"), *stride, *padding)?,
                        NodeAux::None,
                    )
                }
                LayerSpec::DepthwiseConv2d {
                    stride, padding, ..
                } => {
                    let st = &self.nodes[idx].state;
                    (
                        depthwise_forward(get(ins[0]), st.param("kernel"), st.param("bias"), *stride, *padding)?,
                        NodeAux::None,
                    )
                }
                LayerSpec::MaxPool {
                    size,
                    stride,
                    padding,
                } => {
                    let (y, mask) = maxpool_forward(get(ins[0]), *size, *stride, *padding)?;
                    (y, NodeAux::Pool(mask))
                }
                LayerSpec::BatchNorm {
                    momentum, epsilon, ..
                } => {
                    let (momentum, epsilon) = (*momentum, *epsilon);
                    let input = outputs[ins[0]].clone();
                    let st = &mut self.nodes[idx].state;
                    let gamma = st.param("gamma").clone();
                    let beta = st.param("beta").clone();
                    let mut rm = st.buffer("running_mean").clone();
                    let mut rv = st.buffer("running_var").clone();
                    let (y, cache) = batchnorm_forward(
                        &input, &gamma, &beta, &mut rm, &mut rv, momentum, epsilon, mode,
                    )?;
                    *st.buffer_mut("running_mean") = rm;
                    *st.buffer_mut("running_var") = rv;
                    match cache {
                        Some(c) => (y, NodeAux::BatchNorm(c)),
                        None => (y, NodeAux::None),
                    }
                }
                LayerSpec::Dense { .. } => {
                    let st = &self.nodes[idx].state;
                    (
                        dense_forward(get(ins[0]), st.param("weight"), st.param("bias"))?,
                        NodeAux::None,
                    )
                }
                LayerSpec::Relu => (relu_forward(get(ins[0])), NodeAux::None),
                LayerSpec::Flatten => {
                    let t = get(ins[0]);
                    let b = t.shape()[0];
                    let features = t.len() / b;
                    (t.reshape(&[b, features])?, NodeAux::None)
                }
                LayerSpec::Softmax => (softmax_forward(get(ins[0]))?, NodeAux::None),
                LayerSpec::Add => (add_forward(get(ins[0]), get(ins[1]))?, NodeAux::None),
                LayerSpec::Concat => {
                    let branches: Vec<&Tensor<E>> = ins.iter().map(|&i| &outputs[i]).collect();
                    (concat_forward(&branches)?, NodeAux::None)
                }
            };
            outputs.push(y);
            aux.push(a);
        }

        let out = outputs[self.output].clone();
        Ok((out, GraphCache { outputs, aux }))
    }

    /// Reverse-mode sweep. Returns gradients for every parameter plus the
    /// gradient w.r.t. the graph input.
    pub fn backward(
        &self,
        cache: &GraphCache<E>,
        grad_out: &Tensor<E>,
    ) -> Result<(GradStore<E>, Tensor<E>)> {
        if cache.outputs.len() != self.nodes.len() {
            return Err(Error::Graph("cache does not match this graph".into()));
        }
        let mut grads: Vec<Option<Tensor<E>>> = vec![None; self.nodes.len()];
        grads[self.output] = Some(grad_out.clone());
        let mut store: GradStore<E> = BTreeMap::new();

        let accumulate = |slot: &mut Option<Tensor<E>>, g: Tensor<E>| -> Result<()> {
            *slot = Some(match slot.take() {
                Some(prev) => prev.add(&g)?,
                None => g,
            });
            Ok(())
        };

        for idx in (0..self.nodes.len()).rev() {
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            let ins = &node.inputs;
            let input_of = |i: usize| -> &Tensor<E> { &cache.outputs[ins[i]] };

            match &node.spec {
                LayerSpec::Input { .. } => {
                    grads[idx] = Some(gy);
                    continue;
                }
                LayerSpec::Conv2d {
                    stride, padding, ..
                } => {
                    let (gx, gk, gb) = conv2d_backward(
                        input_of(0),
                        node.state.param("kernel"),
                        *stride,
                        *padding,
                        &gy,
                    )?;
                    store.insert(format!("{}.kernel", node.name), gk);
                    store.insert(format!("{}.bias", node.name), gb);
                    accumulate(&mut grads[ins[0]], gx)?;
                }
                LayerSpec::DepthwiseConv2d {
                    stride, padding, ..
                } => {
                    let (gx, gk, gb) = depthwise_backward(
                        input_of(0),
                        node.state.param("kernel"),
                        *stride,
                        *padding,
                        &gy,
                    )?;
                    store.insert(format!("{}.kernel", node.name), gk);
                    store.insert(format!("{}.bias", node.name), gb);
                    accumulate(&mut grads[ins[0]], gx)?;
                }
                LayerSpec::MaxPool { .. } => {
                    let NodeAux::Pool(mask) = &cache.aux[idx] else {
                        return Err(Error::Graph("missing pool mask in cache".into()));
                    };
                    let gx = maxpool_backward(input_of(0).shape(), mask, &gy)?;
                    accumulate(&mut grads[ins[0]], gx)?;
                }
                LayerSpec::BatchNorm { .. } => {
                    let NodeAux::BatchNorm(bn) = &cache.aux[idx] else {
                        return Err(Error::Graph(
                            "batchnorm backward requires a train-mode cache".into(),
                        ));
                    };
                    let (gx, gg, gb) = batchnorm_backward(bn, node.state.param("gamma"), &gy)?;
                    store.insert(format!("{}.gamma", node.name), gg);
                    store.insert(format!("{}.beta", node.name), gb);
                    accumulate(&mut grads[ins[0]], gx)?;
                }
                LayerSpec::Dense { .. } => {
                    let (gx, gw, gb) =
                        dense_backward(input_of(0), node.state.param("weight"), &gy)?;
                    store.insert(format!("{}.weight", node.name), gw);
                    store.insert(format!("{}.bias", node.name), gb);
                    accumulate(&mut grads[ins[0]], gx)?;
                }
                LayerSpec::Relu => {
                    let gx = relu_backward(input_of(0), &gy)?;
                    accumulate(&mut grads[ins[0]], gx)?;
                }
                LayerSpec::Flatten => {
                    let gx = gy.reshape(input_of(0).shape())?;
                    accumulate(&mut grads[ins[0]], gx)?;
                }
                LayerSpec::Softmax => {
                    let gx = softmax_backward(&cache.outputs[idx], &gy)?;
                    accumulate(&mut grads[ins[0]], gx)?;
                }
                LayerSpec::Add => {
                    accumulate(&mut grads[ins[0]], gy.clone())?;
                    accumulate(&mut grads[ins[1]], gy)?;
                }
                LayerSpec::Concat => {
                    let channels: Vec<usize> =
                        ins.iter().map(|&i| cache.outputs[i].shape()[1]).collect();
                    for (i, g) in ins.iter().zip(concat_backward(&channels, &gy)?) {
                        accumulate(&mut grads[*i], g)?;
                    }
                }
            }
        }

        let input_grad = grads[0]
            .take()
            .unwrap_or_else(|| cache.outputs[0].zeros_like());
        Ok((store, input_grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_graph() -> ModelGraph<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut b = GraphBuilder::new(&mut rng);
        let input = b
            .add("input", LayerSpec::Input { shape: vec![1, 4, 4] }, &[])
            .unwrap();
        let conv = b
            .add(
                "conv0",
                LayerSpec::Conv2d {
                    in_ch: 1,
                    out_ch: 2,
                    kernel: 3,
                    stride: 1,
                    padding: crate::layers::Padding::Same,
                },
                &[input],
            )
            .unwrap();
        let relu = b.add("relu0", LayerSpec::Relu, &[conv]).unwrap();
        let flat = b.add("flatten", LayerSpec::Flatten, &[relu]).unwrap();
        let dense = b
            .add("dense", LayerSpec::Dense { in_dim: 32, out_dim: 3 }, &[flat])
            .unwrap();
        let sm = b.add("softmax", LayerSpec::Softmax, &[dense]).unwrap();
        b.finish(sm).unwrap()
    }

    #[test]
    fn forward_shapes_and_softmax_rows() {
        let mut g = tiny_graph();
        let x = Tensor::<f64>::full(&[2, 1, 4, 4], 0.3).unwrap();
        let (y, _) = g.forward(&x, Mode::Infer).unwrap();
        assert_eq!(y.shape(), &[2, 3]);
        for row in y.data().chunks(3) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn backward_produces_all_param_grads() {
        let mut g = tiny_graph();
        let x = Tensor::<f64>::full(&[1, 1, 4, 4], 0.1).unwrap();
        let (y, cache) = g.forward(&x, Mode::Train).unwrap();
        let (grads, gx) = g.backward(&cache, &y.zeros_like().add_scalar(1.0)).unwrap();
        let names: Vec<String> = g.parameters().into_iter().map(|(n, _)| n).collect();
        for n in names {
            let grad = grads.get(&n).expect("missing grad");
            assert!(grad.all_finite());
        }
        assert_eq!(gx.shape(), x.shape());
    }

    #[test]
    fn out_of_order_inputs_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut b = GraphBuilder::<f64, _>::new(&mut rng);
        assert!(b.add("bad", LayerSpec::Relu, &[0]).is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut b = GraphBuilder::<f64, _>::new(&mut rng);
        b.add("input", LayerSpec::Input { shape: vec![1, 2, 2] }, &[])
            .unwrap();
        assert!(b.add("input", LayerSpec::Relu, &[0]).is_err());
    }
}
