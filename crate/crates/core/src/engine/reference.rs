//! Single-device forward and backward over a whole mini-batch sample.
//!
//! This path never looks at a partition; the cooperative engine is checked
//! against it.

use crate::error::{Error, Result};
use crate::sampler::MiniBatchSample;
use crate::tensor::{axpy, dot, Matrix};

use super::model::{classifier_loss, leaky_relu, GatParams, LayerParams, ModelParams, SageParams};

/// Activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `H^(0)..=H^(L)`, rows in sample order of `V^(l)`.
    pub hidden: Vec<Matrix>,
    /// GAT attention per edge of `E^(l)`, at index `l - 1`; empty for GraphSage.
    pub attention: Vec<Vec<f64>>,
    caches: Vec<LayerCache>,
}

#[derive(Debug, Clone)]
enum LayerCache {
    Sage {
        mean: Matrix,
        count: Vec<f64>,
        pre: Matrix,
    },
    Gat {
        z: Matrix,
        score: Vec<f64>,
        out: Matrix,
    },
}

/// Summed loss and summed gradient over the sample's targets.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loss_sum: f64,
    pub grads: ModelParams,
    pub trace: ForwardTrace,
}

fn check_inputs(params: &ModelParams, sample: &MiniBatchSample, x0: &Matrix) -> Result<()> {
    if sample.num_layers() != params.num_layers() {
        return Err(Error::Config(format!(
            "sample has {} layers, model has {}",
            sample.num_layers(),
            params.num_layers()
        )));
    }
    if x0.rows() != sample.vertices(0).len() || x0.cols() != params.input_dim() {
        return Err(Error::Shape(format!(
            "input features {}x{}, expected {}x{}",
            x0.rows(),
            x0.cols(),
            sample.vertices(0).len(),
            params.input_dim()
        )));
    }
    Ok(())
}

pub fn reference_forward(
    params: &ModelParams,
    sample: &MiniBatchSample,
    x0: &Matrix,
) -> Result<ForwardTrace> {
    check_inputs(params, sample, x0)?;
    let mut hidden = vec![x0.clone()];
    let mut attention = Vec::new();
    let mut caches = Vec::new();
    for (i, layer) in params.layers.iter().enumerate() {
        let l = i + 1;
        let x = &hidden[l - 1];
        let edges = sample.edges(l);
        let n_dst = sample.vertices(l).len();
        let (h, cache) = match layer {
            LayerParams::Sage(p) => {
                let (h, c) = sage_forward(p, x, edges, n_dst)?;
                attention.push(Vec::new());
                (h, c)
            }
            LayerParams::Gat(p) => {
                let (h, alpha, c) = gat_forward(p, params.negative_slope, x, edges, n_dst)?;
                attention.push(alpha);
                (h, c)
            }
        };
        caches.push(cache);
        hidden.push(h);
    }
    Ok(ForwardTrace {
        hidden,
        attention,
        caches,
    })
}

fn sage_forward(
    p: &SageParams,
    x: &Matrix,
    edges: &[(usize, usize)],
    n_dst: usize,
) -> Result<(Matrix, LayerCache)> {
    let mut mean = Matrix::zeros(n_dst, x.cols());
    let mut count = vec![0.0; n_dst];
    for &(s, d) in edges {
        axpy(1.0, x.row(s), mean.row_mut(d));
        count[d] += 1.0;
    }
    for (d, &c) in count.iter().enumerate() {
        if c > 0.0 {
            mean.row_mut(d).iter_mut().for_each(|v| *v /= c);
        }
    }
    let mut pre = x.head(n_dst).matmul(&p.w_self)?;
    pre.add_assign(&mean.matmul(&p.w_neigh)?)?;
    pre.add_row_vector(&p.bias);
    let mut h = pre.clone();
    h.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
    Ok((h, LayerCache::Sage { mean, count, pre }))
}

fn gat_forward(
    p: &GatParams,
    slope: f64,
    x: &Matrix,
    edges: &[(usize, usize)],
    n_dst: usize,
) -> Result<(Matrix, Vec<f64>, LayerCache)> {
    let z = x.matmul(&p.w)?;
    let s_src = z.matvec(&p.a_src);
    let s_dst: Vec<f64> = (0..n_dst).map(|d| dot(z.row(d), &p.a_dst)).collect();
    let score: Vec<f64> = edges.iter().map(|&(s, d)| s_src[s] + s_dst[d]).collect();
    let e: Vec<f64> = score.iter().map(|&c| leaky_relu(c, slope)).collect();
    let mut max = vec![f64::NEG_INFINITY; n_dst];
    for (k, &(_, d)) in edges.iter().enumerate() {
        max[d] = max[d].max(e[k]);
    }
    let mut denom = vec![0.0; n_dst];
    let ex: Vec<f64> = edges
        .iter()
        .enumerate()
        .map(|(k, &(_, d))| {
            let v = (e[k] - max[d]).exp();
            denom[d] += v;
            v
        })
        .collect();
    let alpha: Vec<f64> = edges
        .iter()
        .zip(&ex)
        .map(|(&(_, d), &v)| v / denom[d])
        .collect();
    let mut out = Matrix::zeros(n_dst, z.cols());
    for (k, &(s, d)) in edges.iter().enumerate() {
        axpy(alpha[k], z.row(s), out.row_mut(d));
    }
    let mut h = out.clone();
    h.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
    Ok((h, alpha, LayerCache::Gat { z, score, out }))
}

/// Forward, cross-entropy over the targets, and backward.
pub fn reference_loss_and_grad(
    params: &ModelParams,
    sample: &MiniBatchSample,
    x0: &Matrix,
    target_labels: &[usize],
) -> Result<Evaluation> {
    let trace = reference_forward(params, sample, x0)?;
    let mut grads = params.zeros_like();
    let top = trace.hidden.last().expect("at least the input layer");
    let (loss_sum, mut dh) = classifier_loss(params, top, target_labels, &mut grads)?;
    for l in (1..=params.num_layers()).rev() {
        let x = &trace.hidden[l - 1];
        let edges = sample.edges(l);
        let cache = &trace.caches[l - 1];
        dh = match (&params.layers[l - 1], &mut grads.layers[l - 1], cache) {
            (LayerParams::Sage(p), LayerParams::Sage(g), LayerCache::Sage { mean, count, pre }) => {
                sage_backward(p, g, x, edges, mean, count, pre, &dh)?
            }
            (LayerParams::Gat(p), LayerParams::Gat(g), LayerCache::Gat { z, score, out }) => {
                gat_backward(
                    p,
                    g,
                    params.negative_slope,
                    x,
                    edges,
                    z,
                    score,
                    &trace.attention[l - 1],
                    out,
                    &dh,
                )?
            }
            _ => return Err(Error::MissingActivation(l)),
        };
    }
    Ok(Evaluation {
        loss_sum,
        grads,
        trace,
    })
}

#[allow(clippy::too_many_arguments)]
fn sage_backward(
    p: &SageParams,
    g: &mut SageParams,
    x: &Matrix,
    edges: &[(usize, usize)],
    mean: &Matrix,
    count: &[f64],
    pre: &Matrix,
    dh: &Matrix,
) -> Result<Matrix> {
    let n_dst = pre.rows();
    let mut dpre = dh.clone();
    for (d, &v) in dpre.as_mut_slice().iter_mut().zip(pre.as_slice()) {
        if v <= 0.0 {
            *d = 0.0;
        }
    }
    let x_head = x.head(n_dst);
    g.w_self.add_assign(&x_head.t_matmul(&dpre)?)?;
    g.w_neigh.add_assign(&mean.t_matmul(&dpre)?)?;
    for (b, s) in g.bias.iter_mut().zip(dpre.col_sums()) {
        *b += s;
    }
    let mut dx = Matrix::zeros(x.rows(), x.cols());
    let dself = dpre.matmul_t(&p.w_self)?;
    for d in 0..n_dst {
        dx.row_mut(d).copy_from_slice(dself.row(d));
    }
    let dmean = dpre.matmul_t(&p.w_neigh)?;
    for &(s, d) in edges {
        axpy(1.0 / count[d], dmean.row(d), dx.row_mut(s));
    }
    Ok(dx)
}

#[allow(clippy::too_many_arguments)]
fn gat_backward(
    p: &GatParams,
    g: &mut GatParams,
    slope: f64,
    x: &Matrix,
    edges: &[(usize, usize)],
    z: &Matrix,
    score: &[f64],
    alpha: &[f64],
    out: &Matrix,
    dh: &Matrix,
) -> Result<Matrix> {
    let n_dst = out.rows();
    let mut dout = dh.clone();
    for (d, &v) in dout.as_mut_slice().iter_mut().zip(out.as_slice()) {
        if v <= 0.0 {
            *d = 0.0;
        }
    }
    let mut dz = Matrix::zeros(z.rows(), z.cols());
    let mut dalpha = vec![0.0; edges.len()];
    let mut weighted = vec![0.0; n_dst];
    for (k, &(s, d)) in edges.iter().enumerate() {
        dalpha[k] = dot(dout.row(d), z.row(s));
        axpy(alpha[k], dout.row(d), dz.row_mut(s));
        weighted[d] += alpha[k] * dalpha[k];
    }
    let mut ds_src = vec![0.0; z.rows()];
    let mut ds_dst = vec![0.0; n_dst];
    for (k, &(s, d)) in edges.iter().enumerate() {
        let de = alpha[k] * (dalpha[k] - weighted[d]);
        let dc = if score[k] > 0.0 { de } else { slope * de };
        ds_src[s] += dc;
        ds_dst[d] += dc;
    }
    for (r, &v) in ds_src.iter().enumerate() {
        if v != 0.0 {
            axpy(v, z.row(r), &mut g.a_src);
            axpy(v, &p.a_src, dz.row_mut(r));
        }
    }
    for (r, &v) in ds_dst.iter().enumerate() {
        if v != 0.0 {
            axpy(v, z.row(r), &mut g.a_dst);
            axpy(v, &p.a_dst, dz.row_mut(r));
        }
    }
    g.w.add_assign(&x.t_matmul(&dz)?)?;
    dz.matmul_t(&p.w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::model::{ModelConfig, ModelKind};
    use crate::graph::Graph;
    use crate::sampler::sample_minibatch;

    #[test]
    fn single_edge_attention_is_one() {
        let g = Graph::from_edges(2, &[(0, 1)]).unwrap();
        // fanout 0 keeps only self-edges
        let s = sample_minibatch(&g, &[0, 1], &[0], 1).unwrap();
        let cfg = ModelConfig::new(ModelKind::Gat, 3, 1, 2);
        let p = ModelParams::init(&cfg, 5).unwrap();
        let x = Matrix::from_vec(2, 3, vec![1.0, -2.0, 0.5, 3.0, 0.1, -1.0]).unwrap();
        let t = reference_forward(&p, &s, &x).unwrap();
        assert!(t.attention[0].iter().all(|&a| a == 1.0));
    }

    #[test]
    fn self_only_sage_mean_is_own_vector() {
        let g = Graph::from_edges(2, &[]).unwrap();
        let s = sample_minibatch(&g, &[0, 1], &[3], 0).unwrap();
        let mut p = ModelParams::init(&ModelConfig::new(ModelKind::GraphSage, 2, 1, 2), 0).unwrap();
        if let LayerParams::Sage(sp) = &mut p.layers[0] {
            sp.w_self = Matrix::zeros(2, sp.w_self.cols());
        }
        let x = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let t = reference_forward(&p, &s, &x).unwrap();
        let LayerParams::Sage(sp) = &p.layers[0] else {
            unreachable!()
        };
        let mut expect = x.matmul(&sp.w_neigh).unwrap();
        expect
            .as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = v.max(0.0));
        assert_eq!(t.hidden[1], expect);
    }

    #[test]
    fn zero_loss_gradient_gives_zero_grads() {
        let g = Graph::from_edges(3, &[(0, 1), (1, 2), (2, 0)]).unwrap();
        let s = sample_minibatch(&g, &[0, 1, 2], &[2, 2], 0).unwrap();
        for kind in [ModelKind::GraphSage, ModelKind::Gat] {
            let mut p = ModelParams::init(&ModelConfig::new(kind, 2, 2, 2), 0).unwrap();
            // zero classifier weights and biases: the loss gradient does not reach h
            p.cls_w = Matrix::zeros(p.cls_w.rows(), p.cls_w.cols());
            let x = Matrix::from_vec(3, 2, vec![1.0, 0.0, 0.5, 0.5, 0.0, 1.0]).unwrap();
            let ev = reference_loss_and_grad(&p, &s, &x, &[0, 1, 0]).unwrap();
            for layer in &ev.grads.layers {
                let z = match layer {
                    LayerParams::Sage(q) => q.w_self.max_abs() + q.w_neigh.max_abs(),
                    LayerParams::Gat(q) => q.w.max_abs(),
                };
                assert_eq!(z, 0.0);
            }
        }
    }
}
