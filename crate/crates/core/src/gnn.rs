//! EdgeConv graph scoring of slides and patients.
//!
//! Each EdgeConv layer updates node `i` as
//! `h_i' = Σ_{j ∈ N(i)} φ([h_i, h_j − h_i])`, a linear scorer per layer turns
//! `h'` into a node score, node scores are summed over layers, and slide and
//! patient scores are plain sums over nodes.
//!
//! The first affine map of φ is split as `[h_i, h_j − h_i]·W = h_i·(W_top − W_bot) + h_j·W_bot`,
//! so it is evaluated once per node rather than once per edge. φ's last
//! layer is linear and commutes with the neighbor sum, so it is applied after
//! aggregation. Intermediate φ layers, if any, run per edge.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{axpy, Activation, Dense, Gradients, Matrix, Mlp, Parameters};
use crate::spatial::WsiGraph;

/// Default width of every EdgeConv output.
pub const DEFAULT_HIDDEN_DIM: usize = 64;
/// Default number of EdgeConv layers.
pub const DEFAULT_LAYERS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeConvLayer {
    phi: Mlp,
}

/// Values recorded by [`EdgeConvLayer::forward_trace`].
#[derive(Debug, Clone)]
pub struct EdgeConvTrace {
    /// First-layer pre-activation for every directed edge, in node-major order.
    edge_pre: Matrix,
    /// Inputs and pre-activations of the per-edge intermediate layers.
    mid_inputs: Vec<Matrix>,
    mid_pre: Vec<Matrix>,
    /// Per-node sum of edge messages entering φ's last layer.
    aggregated: Matrix,
    degree: Vec<usize>,
    output: Matrix,
}

impl EdgeConvTrace {
    pub fn output(&self) -> &Matrix {
        &self.output
    }
}

impl EdgeConvLayer {
    pub fn new(phi: Mlp) -> Result<Self> {
        if !phi.in_dim().is_multiple_of(2) {
            return Err(Error::Shape(format!(
                "EdgeConv φ needs an even input width, got {}",
                phi.in_dim()
            )));
        }
        Ok(Self { phi })
    }

    /// φ = linear(2·in → out) · relu · linear(out → out).
    pub fn glorot<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        Self {
            phi: Mlp::glorot(&[2 * in_dim, out_dim, out_dim], rng).expect("valid dims"),
        }
    }

    pub fn phi(&self) -> &Mlp {
        &self.phi
    }

    pub fn phi_mut(&mut self) -> &mut Mlp {
        &mut self.phi
    }

    pub fn in_dim(&self) -> usize {
        self.phi.in_dim() / 2
    }

    pub fn out_dim(&self) -> usize {
        self.phi.out_dim()
    }

    pub fn forward(&self, graph: &WsiGraph, h_prev: &Matrix) -> Result<Matrix> {
        Ok(self.forward_trace(graph, h_prev)?.output)
    }

    pub fn forward_trace(&self, graph: &WsiGraph, h_prev: &Matrix) -> Result<EdgeConvTrace> {
        let d = self.in_dim();
        let n = graph.node_count();
        if h_prev.rows() != n || h_prev.cols() != d {
            return Err(Error::Shape(format!(
                "EdgeConv expects a {n}x{d} input, got {}x{}",
                h_prev.rows(),
                h_prev.cols()
            )));
        }
        let layers = self.phi.layers();
        let first = &layers[0];
        let hidden = first.out_dim();
        let (w_self, w_nbr) = split_first_weight(&first.weight, d);
        let a = h_prev.matmul(&w_self)?;
        let b = h_prev.matmul(&w_nbr)?;

        let degree: Vec<usize> = (0..n).map(|i| graph.neighbors(i).len()).collect();
        let n_dir: usize = degree.iter().sum();
        let mut edge_pre = Matrix::zeros(n_dir, hidden);
        let mut e = 0;
        for i in 0..n {
            for &j in graph.neighbors(i) {
                let row = edge_pre.row_mut(e);
                for k in 0..hidden {
                    row[k] = a.get(i, k) + b.get(j, k) + first.bias[k];
                }
                e += 1;
            }
        }
        let mut msg = edge_pre.clone();
        if first.activation != Activation::Identity {
            for v in msg.data_mut() {
                *v = first.activation.apply(*v);
            }
        }

        let last_idx = layers.len() - 1;
        let mut mid_inputs = Vec::new();
        let mut mid_pre = Vec::new();
        for layer in layers.iter().take(last_idx).skip(1) {
            let z = layer.affine(&msg)?;
            let mut next = z.clone();
            for v in next.data_mut() {
                *v = layer.activation.apply(*v);
            }
            mid_inputs.push(std::mem::replace(&mut msg, next));
            mid_pre.push(z);
        }

        let mut aggregated = Matrix::zeros(n, msg.cols());
        let mut e = 0;
        for (i, &deg) in degree.iter().enumerate() {
            let row = aggregated.row_mut(i);
            for _ in 0..deg {
                axpy(row, 1.0, msg.row(e));
                e += 1;
            }
        }

        let output = if last_idx == 0 {
            aggregated.clone()
        } else {
            let last = &layers[last_idx];
            let mut out = aggregated.matmul(&last.weight)?;
            for (i, &deg) in degree.iter().enumerate() {
                axpy(out.row_mut(i), deg as f64, &last.bias);
            }
            out
        };

        Ok(EdgeConvTrace {
            edge_pre,
            mid_inputs,
            mid_pre,
            aggregated,
            degree,
            output,
        })
    }

    /// Accumulates φ's gradients into `grads` and returns the gradient with
    /// respect to the layer input.
    pub fn backward(
        &self,
        graph: &WsiGraph,
        h_prev: &Matrix,
        trace: &EdgeConvTrace,
        d_out: &Matrix,
        grads: &mut Gradients,
    ) -> Result<Matrix> {
        if d_out.shape() != trace.output.shape() {
            return Err(Error::Shape("EdgeConv upstream does not match its output".into()));
        }
        if !grads.is_congruent(&self.phi) {
            return Err(Error::Shape("gradient set does not match φ".into()));
        }
        let layers = self.phi.layers();
        let last_idx = layers.len() - 1;
        let d = self.in_dim();
        let n = graph.node_count();
        let n_dir = trace.edge_pre.rows();
        let g = grads.tensors_mut();

        // gradient per directed edge of the message leaving the first layer
        let mut d_msg = if last_idx == 0 {
            broadcast_to_edges(d_out, &trace.degree, n_dir)
        } else {
            let last = &layers[last_idx];
            let mut dw = Matrix::from_vec(last.in_dim(), last.out_dim(), std::mem::take(&mut g[2 * last_idx]))?;
            trace.aggregated.tr_matmul_acc(d_out, &mut dw)?;
            g[2 * last_idx] = dw.into_vec();
            for (i, &deg) in trace.degree.iter().enumerate() {
                axpy(&mut g[2 * last_idx + 1], deg as f64, d_out.row(i));
            }
            let d_agg = d_out.matmul_tr(&last.weight)?;
            let mut d_edge = broadcast_to_edges(&d_agg, &trace.degree, n_dir);
            for k in (1..last_idx).rev() {
                let layer = &layers[k];
                let m = k - 1;
                for (dv, z) in d_edge.data_mut().iter_mut().zip(trace.mid_pre[m].data()) {
                    *dv *= layer.activation.derivative(*z);
                }
                let mut dw = Matrix::from_vec(layer.in_dim(), layer.out_dim(), std::mem::take(&mut g[2 * k]))?;
                trace.mid_inputs[m].tr_matmul_acc(&d_edge, &mut dw)?;
                g[2 * k] = dw.into_vec();
                let db = d_edge.col_sums();
                axpy(&mut g[2 * k + 1], 1.0, &db);
                d_edge = d_edge.matmul_tr(&layer.weight)?;
            }
            d_edge
        };

        let first = &layers[0];
        for (dv, z) in d_msg.data_mut().iter_mut().zip(trace.edge_pre.data()) {
            *dv *= first.activation.derivative(*z);
        }
        let hidden = first.out_dim();
        let mut d_a = Matrix::zeros(n, hidden);
        let mut d_b = Matrix::zeros(n, hidden);
        let mut e = 0;
        for i in 0..n {
            for &j in graph.neighbors(i) {
                let row = d_msg.row(e);
                axpy(d_a.row_mut(i), 1.0, row);
                axpy(d_b.row_mut(j), 1.0, row);
                e += 1;
            }
        }
        axpy(&mut g[1], 1.0, &d_msg.col_sums());

        // W_top receives hᵀ·dA, W_bot receives hᵀ·(dB − dA)
        let mut d_w_top = Matrix::zeros(d, hidden);
        h_prev.tr_matmul_acc(&d_a, &mut d_w_top)?;
        let mut d_b_minus_a = d_b.clone();
        for (x, y) in d_b_minus_a.data_mut().iter_mut().zip(d_a.data()) {
            *x -= y;
        }
        let mut d_w_bot = Matrix::zeros(d, hidden);
        h_prev.tr_matmul_acc(&d_b_minus_a, &mut d_w_bot)?;
        let split = d * hidden;
        axpy(&mut g[0][..split], 1.0, d_w_top.data());
        axpy(&mut g[0][split..], 1.0, d_w_bot.data());

        let (w_self, w_nbr) = split_first_weight(&first.weight, d);
        let mut d_h = d_a.matmul_tr(&w_self)?;
        d_h.add_assign(&d_b.matmul_tr(&w_nbr)?)?;
        Ok(d_h)
    }
}

/// Splits the `2d × out` first φ weight into the per-node (`W_top − W_bot`)
/// and per-neighbor (`W_bot`) factors.
fn split_first_weight(w: &Matrix, d: usize) -> (Matrix, Matrix) {
    let cols = w.cols();
    let top = &w.data()[..d * cols];
    let bot = &w.data()[d * cols..];
    let w_self = top.iter().zip(bot).map(|(t, b)| t - b).collect();
    (
        Matrix::from_vec(d, cols, w_self).expect("shape"),
        Matrix::from_vec(d, cols, bot.to_vec()).expect("shape"),
    )
}

fn broadcast_to_edges(per_node: &Matrix, degree: &[usize], n_dir: usize) -> Matrix {
    let mut out = Matrix::zeros(n_dir, per_node.cols());
    let mut e = 0;
    for (i, &deg) in degree.iter().enumerate() {
        for _ in 0..deg {
            out.row_mut(e).copy_from_slice(per_node.row(i));
            e += 1;
        }
    }
    out
}

/// How the graphs of one patient are combined into a patient score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BagAggregation {
    /// Sum over graphs, the score of their disjoint union.
    #[default]
    Sum,
    /// Mean over graphs.
    Mean,
}

impl std::str::FromStr for BagAggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(BagAggregation::Sum),
            "mean" => Ok(BagAggregation::Mean),
            other => Err(Error::Input(format!("unknown aggregation {other:?} (sum or mean)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnnModel {
    input_dim: usize,
    layers: Vec<EdgeConvLayer>,
    scorers: Vec<Mlp>,
    aggregation: BagAggregation,
}

/// Node-level predictions of one graph.
#[derive(Debug, Clone, PartialEq)]
pub struct NodePredictions {
    /// `f(v_i)`, the sum of the per-layer scores.
    pub total: Vec<f64>,
    /// `per_layer[l][i]` is layer `l`'s score of node `i`.
    pub per_layer: Vec<Vec<f64>>,
}

impl GnnModel {
    pub fn new(input_dim: usize, layers: Vec<EdgeConvLayer>, scorers: Vec<Mlp>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Size("a model needs at least one EdgeConv layer".into()));
        }
        if layers.len() != scorers.len() {
            return Err(Error::Shape(format!(
                "{} layers but {} scorers",
                layers.len(),
                scorers.len()
            )));
        }
        let mut d = input_dim;
        for (l, (layer, scorer)) in layers.iter().zip(&scorers).enumerate() {
            if layer.in_dim() != d {
                return Err(Error::Shape(format!(
                    "layer {l} expects width {} but receives {d}",
                    layer.in_dim()
                )));
            }
            d = layer.out_dim();
            if scorer.in_dim() != d || scorer.out_dim() != 1 {
                return Err(Error::Shape(format!(
                    "scorer {l} must map {d} → 1, maps {} → {}",
                    scorer.in_dim(),
                    scorer.out_dim()
                )));
            }
        }
        Ok(Self {
            input_dim,
            layers,
            scorers,
            aggregation: BagAggregation::Sum,
        })
    }

    /// Glorot-initialized model with one EdgeConv layer per entry of `hidden`
    /// and a linear scorer after each.
    pub fn glorot<R: Rng + ?Sized>(input_dim: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let mut layers = Vec::with_capacity(hidden.len());
        let mut scorers = Vec::with_capacity(hidden.len());
        let mut d = input_dim;
        for &h in hidden {
            if h == 0 {
                return Err(Error::Size("hidden widths must be positive".into()));
            }
            layers.push(EdgeConvLayer::glorot(d, h, rng));
            scorers.push(Mlp::new(vec![Dense::glorot(h, 1, Activation::Identity, rng)])?);
            d = h;
        }
        Self::new(input_dim, layers, scorers)
    }

    pub fn with_aggregation(mut self, aggregation: BagAggregation) -> Self {
        self.aggregation = aggregation;
        self
    }

    pub fn aggregation(&self) -> BagAggregation {
        self.aggregation
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn layers(&self) -> &[EdgeConvLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [EdgeConvLayer] {
        &mut self.layers
    }

    pub fn scorers(&self) -> &[Mlp] {
        &self.scorers
    }

    pub fn scorers_mut(&mut self) -> &mut [Mlp] {
        &mut self.scorers
    }

    fn check_graph(&self, graph: &WsiGraph) -> Result<()> {
        if graph.feature_dim() != self.input_dim {
            return Err(Error::Shape(format!(
                "slide {} has {} features per node, the model expects {}",
                graph.slide_id(),
                graph.feature_dim(),
                self.input_dim
            )));
        }
        Ok(())
    }

    pub fn forward_trace(&self, graph: &WsiGraph) -> Result<GraphTrace> {
        self.check_graph(graph)?;
        let mut h = graph.features().clone();
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut convs = Vec::with_capacity(self.layers.len());
        let mut scorer_traces = Vec::with_capacity(self.layers.len());
        for (l, (layer, scorer)) in self.layers.iter().zip(&self.scorers).enumerate() {
            let trace = layer.forward_trace(graph, &h)?;
            if !trace.output.is_finite() {
                return Err(Error::Numeric(format!("non-finite activations in EdgeConv layer {l}")));
            }
            let st = scorer.forward_trace(&trace.output)?;
            if !st.output.is_finite() {
                return Err(Error::Numeric(format!("non-finite node scores from scorer {l}")));
            }
            inputs.push(std::mem::replace(&mut h, trace.output.clone()));
            convs.push(trace);
            scorer_traces.push(st);
        }
        Ok(GraphTrace {
            inputs,
            convs,
            scorers: scorer_traces,
        })
    }

    pub fn node_predictions(&self, graph: &WsiGraph) -> Result<NodePredictions> {
        Ok(self.forward_trace(graph)?.node_predictions())
    }

    pub fn graph_score(&self, graph: &WsiGraph) -> Result<f64> {
        if graph.node_count() == 0 {
            return Err(Error::Size("cannot score an empty graph".into()));
        }
        Ok(self.forward_trace(graph)?.graph_score())
    }

    pub fn patient_score(&self, bag: &PatientBag) -> Result<f64> {
        Ok(self.bag_forward(bag)?.score())
    }

    pub fn bag_forward(&self, bag: &PatientBag) -> Result<BagTrace> {
        if bag.graphs.is_empty() {
            return Err(Error::Size(format!("patient {} has no slides", bag.patient_id)));
        }
        let traces = bag
            .graphs
            .iter()
            .map(|g| self.forward_trace(g))
            .collect::<Result<Vec<_>>>()?;
        let sum: f64 = traces.iter().map(GraphTrace::graph_score).sum();
        let score = match self.aggregation {
            BagAggregation::Sum => sum,
            BagAggregation::Mean => sum / traces.len() as f64,
        };
        Ok(BagTrace { traces, score })
    }

    /// Gradient of `upstream · score` for a recorded bag forward pass.
    pub fn bag_backward(&self, bag: &PatientBag, trace: &BagTrace, upstream: f64) -> Result<Gradients> {
        if trace.traces.len() != bag.graphs.len() {
            return Err(Error::Shape("trace does not belong to this bag".into()));
        }
        let per_graph = match self.aggregation {
            BagAggregation::Sum => upstream,
            BagAggregation::Mean => upstream / bag.graphs.len() as f64,
        };
        let mut parts: Vec<Gradients> = self
            .layers
            .iter()
            .zip(&self.scorers)
            .flat_map(|(layer, scorer)| [Gradients::zeros_like(layer.phi()), Gradients::zeros_like(scorer)])
            .collect();
        for (graph, gt) in bag.graphs.iter().zip(&trace.traces) {
            self.graph_backward(graph, gt, per_graph, &mut parts)?;
        }
        let grads = Gradients::from_tensors(parts.into_iter().flat_map(|g| g.tensors().to_vec()).collect());
        if let Some(idx) = grads.first_non_finite() {
            let name = self.param_names().swap_remove(idx);
            return Err(Error::Numeric(format!("non-finite gradient in {name}")));
        }
        Ok(grads)
    }

    fn graph_backward(&self, graph: &WsiGraph, trace: &GraphTrace, upstream: f64, parts: &mut [Gradients]) -> Result<()> {
        let n = graph.node_count();
        let d_score = Matrix::from_vec(n, 1, vec![upstream; n])?;
        let mut d_h: Option<Matrix> = None;
        for l in (0..self.layers.len()).rev() {
            let mut d_out = self.scorers[l].backprop_trace(&trace.scorers[l], &d_score, &mut parts[2 * l + 1])?;
            if let Some(from_above) = d_h.take() {
                d_out.add_assign(&from_above)?;
            }
            let d_in = self.layers[l].backward(graph, &trace.inputs[l], &trace.convs[l], &d_out, &mut parts[2 * l])?;
            d_h = Some(d_in);
        }
        Ok(())
    }

    /// Exact gradient of `upstream · patient_score(bag)`.
    pub fn model_gradients(&self, bag: &PatientBag, upstream: f64) -> Result<Gradients> {
        let trace = self.bag_forward(bag)?;
        self.bag_backward(bag, &trace, upstream)
    }
}

impl Parameters for GnnModel {
    fn param_tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .zip(&self.scorers)
            .flat_map(|(l, s)| l.phi.param_tensors().into_iter().chain(s.param_tensors()))
            .collect()
    }

    fn param_tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .zip(self.scorers.iter_mut())
            .flat_map(|(l, s)| l.phi.param_tensors_mut().into_iter().chain(s.param_tensors_mut()))
            .collect()
    }

    fn param_names(&self) -> Vec<String> {
        self.layers
            .iter()
            .zip(&self.scorers)
            .enumerate()
            .flat_map(|(l, (layer, scorer))| {
                let phi = layer.phi.param_names().into_iter().map(move |n| format!("edgeconv{l}.phi.{n}"));
                let sc = scorer.param_names().into_iter().map(move |n| format!("edgeconv{l}.scorer.{n}"));
                phi.chain(sc).collect::<Vec<_>>()
            })
            .collect()
    }
}

/// Forward-pass record of one graph.
#[derive(Debug, Clone)]
pub struct GraphTrace {
    inputs: Vec<Matrix>,
    convs: Vec<EdgeConvTrace>,
    scorers: Vec<crate::nn::MlpTrace>,
}

impl GraphTrace {
    pub fn node_predictions(&self) -> NodePredictions {
        let per_layer: Vec<Vec<f64>> = self.scorers.iter().map(|s| s.output.data().to_vec()).collect();
        let n = per_layer.first().map_or(0, Vec::len);
        let total = (0..n).map(|i| per_layer.iter().map(|l| l[i]).sum()).collect();
        NodePredictions { total, per_layer }
    }

    pub fn graph_score(&self) -> f64 {
        self.node_predictions().total.iter().sum()
    }

    /// Sign of every recorded pre-activation. Two parameter settings with the
    /// same pattern lie on the same smooth piece of a ReLU model.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let convs = self.convs.iter().flat_map(|c| std::iter::once(&c.edge_pre).chain(&c.mid_pre));
        let scorers = self.scorers.iter().flat_map(|s| &s.pre);
        convs.chain(scorers).flat_map(|m| m.data().iter().map(|&v| v > 0.0)).collect()
    }
}

/// Forward-pass record of one patient bag.
#[derive(Debug, Clone)]
pub struct BagTrace {
    traces: Vec<GraphTrace>,
    score: f64,
}

impl BagTrace {
    pub fn score(&self) -> f64 {
        self.score
    }
}

/// All slides of one patient with the patient's binary target.
#[derive(Debug, Clone)]
pub struct PatientBag {
    pub patient_id: String,
    pub graphs: Vec<Arc<WsiGraph>>,
    pub label: bool,
}

impl PatientBag {
    pub fn new(patient_id: impl Into<String>, graphs: Vec<Arc<WsiGraph>>, label: bool) -> Result<Self> {
        let patient_id = patient_id.into();
        let Some(first) = graphs.first() else {
            return Err(Error::Size(format!("patient {patient_id} has no slides")));
        };
        let dim = first.feature_dim();
        if let Some(g) = graphs.iter().find(|g| g.feature_dim() != dim) {
            return Err(Error::Shape(format!(
                "patient {patient_id}: slide {} has feature dim {}, expected {dim}",
                g.slide_id(),
                g.feature_dim()
            )));
        }
        Ok(Self {
            patient_id,
            graphs,
            label,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.graphs[0].feature_dim()
    }
}

/// Convenience wrappers mirroring the model methods.
pub fn edgeconv_forward(layer: &EdgeConvLayer, graph: &WsiGraph, h_prev: &Matrix) -> Result<Matrix> {
    layer.forward(graph, h_prev)
}

pub fn node_predictions(model: &GnnModel, graph: &WsiGraph) -> Result<NodePredictions> {
    model.node_predictions(graph)
}

pub fn graph_score(model: &GnnModel, graph: &WsiGraph) -> Result<f64> {
    model.graph_score(graph)
}

pub fn patient_score(model: &GnnModel, bag: &PatientBag) -> Result<f64> {
    model.patient_score(bag)
}

pub fn model_gradients(model: &GnnModel, bag: &PatientBag, upstream: f64) -> Result<Gradients> {
    model.model_gradients(bag, upstream)
}
