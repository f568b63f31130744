//! Model parameters, initialization, gradient arithmetic and checkpoints.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    GraphSage,
    Gat,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "graphsage" | "sage" => Ok(Self::GraphSage),
            "gat" => Ok(Self::Gat),
            other => Err(Error::Config(format!("unknown model {other:?}"))),
        }
    }
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::GraphSage => "graphsage",
            Self::Gat => "gat",
        }
    }
}

pub const DEFAULT_HIDDEN: usize = 16;
pub const DEFAULT_NEGATIVE_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub in_dim: usize,
    pub hidden: usize,
    pub num_layers: usize,
    pub num_classes: usize,
    /// GAT leaky-ReLU slope.
    pub negative_slope: f64,
}

impl ModelConfig {
    pub fn new(kind: ModelKind, in_dim: usize, num_layers: usize, num_classes: usize) -> Self {
        Self {
            kind,
            in_dim,
            hidden: DEFAULT_HIDDEN,
            num_layers,
            num_classes,
            negative_slope: DEFAULT_NEGATIVE_SLOPE,
        }
    }

    fn layer_dims(&self, l: usize) -> (usize, usize) {
        (if l == 0 { self.in_dim } else { self.hidden }, self.hidden)
    }
}

/// GraphSage layer: `h_v = ReLU(h_v W_self + mean_u(h_u) W_neigh + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SageParams {
    pub w_self: Matrix,
    pub w_neigh: Matrix,
    pub bias: Vec<f64>,
}

/// Single-head GAT layer: `z = h W`, edge score
/// `leaky_relu(a_src · z_u + a_dst · z_v)`, `h_v = ReLU(Σ_u α_uv z_u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GatParams {
    pub w: Matrix,
    pub a_src: Vec<f64>,
    pub a_dst: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    Sage(SageParams),
    Gat(GatParams),
}

/// GNN layers followed by a linear classifier over target embeddings. The same
/// type holds gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub kind: ModelKind,
    pub negative_slope: f64,
    pub layers: Vec<LayerParams>,
    pub cls_w: Matrix,
    pub cls_b: Vec<f64>,
}

fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let mut m = Matrix::zeros(rows, cols);
    for x in m.as_mut_slice() {
        *x = rng.gen_range(-limit..limit);
    }
    m
}

fn glorot_vec(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    glorot(len, 1, rng).into_vec()
}

impl ModelParams {
    /// Glorot-uniform weights, zero biases; deterministic in `seed`.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        if cfg.num_layers == 0 || cfg.hidden == 0 || cfg.in_dim == 0 || cfg.num_classes == 0 {
            return Err(Error::Config(format!(
                "model needs positive sizes, got layers={} hidden={} in_dim={} classes={}",
                cfg.num_layers, cfg.hidden, cfg.in_dim, cfg.num_classes
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = (0..cfg.num_layers)
            .map(|l| {
                let (din, dout) = cfg.layer_dims(l);
                match cfg.kind {
                    ModelKind::GraphSage => LayerParams::Sage(SageParams {
                        w_self: glorot(din, dout, &mut rng),
                        w_neigh: glorot(din, dout, &mut rng),
                        bias: vec![0.0; dout],
                    }),
                    ModelKind::Gat => LayerParams::Gat(GatParams {
                        w: glorot(din, dout, &mut rng),
                        a_src: glorot_vec(dout, &mut rng),
                        a_dst: glorot_vec(dout, &mut rng),
                    }),
                }
            })
            .collect();
        Ok(Self {
            kind: cfg.kind,
            negative_slope: cfg.negative_slope,
            layers,
            cls_w: glorot(cfg.hidden, cfg.num_classes, &mut rng),
            cls_b: vec![0.0; cfg.num_classes],
        })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_classes(&self) -> usize {
        self.cls_b.len()
    }

    pub fn input_dim(&self) -> usize {
        match &self.layers[0] {
            LayerParams::Sage(p) => p.w_self.rows(),
            LayerParams::Gat(p) => p.w.rows(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.iter_mut().for_each(|x| *x = 0.0);
        }
        z
    }

    /// Named flat views of every tensor, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            match layer {
                LayerParams::Sage(p) => {
                    out.push((format!("layer{l}.w_self"), p.w_self.as_slice()));
                    out.push((format!("layer{l}.w_neigh"), p.w_neigh.as_slice()));
                    out.push((format!("layer{l}.bias"), &p.bias));
                }
                LayerParams::Gat(p) => {
                    out.push((format!("layer{l}.w"), p.w.as_slice()));
                    out.push((format!("layer{l}.a_src"), &p.a_src));
                    out.push((format!("layer{l}.a_dst"), &p.a_dst));
                }
            }
        }
        out.push(("classifier.w".into(), self.cls_w.as_slice()));
        out.push(("classifier.b".into(), &self.cls_b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        for (l, layer) in self.layers.iter_mut().enumerate() {
            match layer {
                LayerParams::Sage(p) => {
                    out.push((format!("layer{l}.w_self"), p.w_self.as_mut_slice()));
                    out.push((format!("layer{l}.w_neigh"), p.w_neigh.as_mut_slice()));
                    out.push((format!("layer{l}.bias"), &mut p.bias));
                }
                LayerParams::Gat(p) => {
                    out.push((format!("layer{l}.w"), p.w.as_mut_slice()));
                    out.push((format!("layer{l}.a_src"), &mut p.a_src));
                    out.push((format!("layer{l}.a_dst"), &mut p.a_dst));
                }
            }
        }
        out.push(("classifier.w".into(), self.cls_w.as_mut_slice()));
        out.push(("classifier.b".into(), &mut self.cls_b));
        out
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        let a = self.tensors();
        let b = other.tensors();
        if self.kind != other.kind
            || a.len() != b.len()
            || a.iter()
                .zip(&b)
                .any(|(x, y)| x.0 != y.0 || x.1.len() != y.1.len())
        {
            return Err(Error::Shape("parameter sets differ in shape".into()));
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check_same_shape(other)?;
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, t) in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= factor);
        }
    }

    /// `self -= lr · grad`.
    pub fn sgd_step(&mut self, grad: &Self, lr: f64) -> Result<()> {
        self.check_same_shape(grad)?;
        for ((_, p), (_, g)) in self.tensors_mut().into_iter().zip(grad.tensors()) {
            for (x, y) in p.iter_mut().zip(g) {
                *x -= lr * y;
            }
        }
        Ok(())
    }

    /// Largest per-tensor relative difference `max|a - b| / max|b|` against
    /// `reference` (absolute difference when the reference tensor is zero).
    pub fn max_relative_diff(&self, reference: &Self) -> Result<f64> {
        self.check_same_shape(reference)?;
        let mut worst = 0.0f64;
        for ((_, a), (_, b)) in self.tensors().into_iter().zip(reference.tensors()) {
            let scale = b.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let diff = a
                .iter()
                .zip(b)
                .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            worst = worst.max(if scale > 0.0 { diff / scale } else { diff });
        }
        Ok(worst)
    }

    pub fn is_zero(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|&x| x == 0.0))
    }

    /// Binary checkpoint:
    /// `b"SPLM" | version u32 | kind u32 | slope f64 | count u32` then per
    /// tensor `rows u64 | cols u64 | rows·cols f64`, little-endian, tensors in
    /// [`ModelParams::tensors`] order (vectors stored as `1 × len`).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&1u32.to_le_bytes())?;
        let kind: u32 = match self.kind {
            ModelKind::GraphSage => 0,
            ModelKind::Gat => 1,
        };
        w.write_all(&kind.to_le_bytes())?;
        w.write_all(&self.negative_slope.to_le_bytes())?;
        let mut shapes: Vec<(usize, usize)> = Vec::new();
        for layer in &self.layers {
            match layer {
                LayerParams::Sage(p) => {
                    shapes.push((p.w_self.rows(), p.w_self.cols()));
                    shapes.push((p.w_neigh.rows(), p.w_neigh.cols()));
                    shapes.push((1, p.bias.len()));
                }
                LayerParams::Gat(p) => {
                    shapes.push((p.w.rows(), p.w.cols()));
                    shapes.push((1, p.a_src.len()));
                    shapes.push((1, p.a_dst.len()));
                }
            }
        }
        shapes.push((self.cls_w.rows(), self.cls_w.cols()));
        shapes.push((1, self.cls_b.len()));
        w.write_all(&(shapes.len() as u32).to_le_bytes())?;
        for ((rows, cols), (_, data)) in shapes.into_iter().zip(self.tensors()) {
            w.write_all(&(rows as u64).to_le_bytes())?;
            w.write_all(&(cols as u64).to_le_bytes())?;
            for x in data {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let bad = |m: &str| Error::BadBinary(format!("checkpoint: {m}"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("truncated"))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("bad magic bytes"));
        }
        let version = read_u32(&mut r)?;
        if version != 1 {
            return Err(bad("unsupported version"));
        }
        let kind = match read_u32(&mut r)? {
            0 => ModelKind::GraphSage,
            1 => ModelKind::Gat,
            _ => return Err(bad("unknown model kind")),
        };
        let negative_slope = f64::from_le_bytes(read_array(&mut r)?);
        let count = read_u32(&mut r)? as usize;
        if count < 5 || !(count - 2).is_multiple_of(3) {
            return Err(bad("unexpected tensor count"));
        }
        let mut mats = Vec::with_capacity(count);
        for _ in 0..count {
            let rows = u64::from_le_bytes(read_array(&mut r)?) as usize;
            let cols = u64::from_le_bytes(read_array(&mut r)?) as usize;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                data.push(f64::from_le_bytes(read_array(&mut r)?));
            }
            mats.push(Matrix::from_vec(rows, cols, data)?);
        }
        let cls_b = mats.pop().unwrap().into_vec();
        let cls_w = mats.pop().unwrap();
        let mut layers = Vec::new();
        let mut it = mats.into_iter();
        while let (Some(a), Some(b), Some(c)) = (it.next(), it.next(), it.next()) {
            layers.push(match kind {
                ModelKind::GraphSage => LayerParams::Sage(SageParams {
                    w_self: a,
                    w_neigh: b,
                    bias: c.into_vec(),
                }),
                ModelKind::Gat => LayerParams::Gat(GatParams {
                    w: a,
                    a_src: b.into_vec(),
                    a_dst: c.into_vec(),
                }),
            });
        }
        Ok(Self {
            kind,
            negative_slope,
            layers,
            cls_w,
            cls_b,
        })
    }
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"SPLM";

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)
        .map_err(|_| Error::BadBinary("checkpoint: unexpected end of file".into()))?;
    Ok(b)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

/// Linear classifier plus softmax cross-entropy over a set of embedding rows.
///
/// Returns the summed (not averaged) loss and accumulates the classifier
/// gradient into `grads`; the returned matrix is `∂loss/∂h`.
pub(crate) fn classifier_loss(
    params: &ModelParams,
    h: &Matrix,
    labels: &[usize],
    grads: &mut ModelParams,
) -> Result<(f64, Matrix)> {
    if labels.len() != h.rows() {
        return Err(Error::Shape(format!(
            "{} labels for {} rows",
            labels.len(),
            h.rows()
        )));
    }
    let classes = params.num_classes();
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::Config(format!(
            "label {bad} >= number of classes {classes}"
        )));
    }
    let mut logits = h.matmul(&params.cls_w)?;
    logits.add_row_vector(&params.cls_b);
    let mut loss = 0.0;
    let mut dlogits = Matrix::zeros(h.rows(), classes);
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let denom: f64 = row.iter().map(|&x| (x - m).exp()).sum();
        loss += denom.ln() + m - row[y];
        let d = dlogits.row_mut(i);
        for (j, dj) in d.iter_mut().enumerate() {
            *dj = (row[j] - m).exp() / denom;
        }
        d[y] -= 1.0;
    }
    grads.cls_w.add_assign(&h.t_matmul(&dlogits)?)?;
    for (g, s) in grads.cls_b.iter_mut().zip(dlogits.col_sums()) {
        *g += s;
    }
    let dh = dlogits.matmul_t(&params.cls_w)?;
    Ok((loss, dh))
}

#[inline]
pub(crate) fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}
