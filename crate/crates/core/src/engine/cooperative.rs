//! Cooperative forward and backward over local splits.
//!
//! Each device holds the rows of the vertices it owns at every layer. Edges
//! live with their source, so aggregation produces partial values at
//! destination slots; partials for reference slots are pushed to the owner and
//! combined there. Every forward exchange has a backward twin in the reverse
//! direction carrying the gradient of what was moved.

use std::borrow::Borrow;

use crate::error::{Error, Result};
use crate::ids::DeviceId;
use crate::scheduler::{LayerSplit, LocalSplit, ShufflePlan};
use crate::tensor::{axpy, dot, Matrix};

use super::cluster::{scatter_shuffle_forward, Executor, Fabric, Reduce};
use super::model::{classifier_loss, leaky_relu, LayerParams, ModelParams};

struct SageCache {
    mean: Matrix,
    count: Vec<f64>,
    pre: Matrix,
}

struct GatCache {
    /// Owned rows at `l - 1` followed by the reference rows of layer `l`.
    x_ext: Matrix,
    z_ext: Matrix,
    score: Vec<f64>,
    e: Vec<f64>,
    alpha: Vec<f64>,
    out: Matrix,
}

enum LayerCache {
    Sage(SageCache),
    Gat(GatCache),
}

/// Per-device working set.
pub struct DeviceState {
    device: DeviceId,
    params: ModelParams,
    grads: ModelParams,
    /// Owned rows of `H^(l)` for `l` in `0..=L`.
    hidden: Vec<Matrix>,
    caches: Vec<Option<LayerCache>>,
    /// GAT per-slot scratch for the layer in flight.
    slot_scratch: Vec<f64>,
    /// Gradient scratch for the layer in flight.
    dx: Matrix,
    dz_ext: Matrix,
    dalpha: Vec<f64>,
    loss_sum: f64,
}

impl DeviceState {
    pub fn device(&self) -> DeviceId {
        self.device
    }
}

/// Rows of slot `k` inside `x_ext`.
#[inline]
fn ext_row(ls: &LayerSplit, prev_owned: usize, slot: usize) -> usize {
    if ls.is_reference_slot(slot) {
        prev_owned + slot - ls.num_owned()
    } else {
        slot
    }
}

/// Splits a per-slot scalar into owned and reference column matrices.
fn slot_halves(values: &[f64], num_owned: usize) -> (Matrix, Matrix) {
    let owned = Matrix::from_vec(num_owned, 1, values[..num_owned].to_vec()).expect("sized");
    let refs =
        Matrix::from_vec(values.len() - num_owned, 1, values[num_owned..].to_vec()).expect("sized");
    (owned, refs)
}

fn join_halves(owned: &Matrix, refs: &Matrix) -> Vec<f64> {
    owned
        .as_slice()
        .iter()
        .chain(refs.as_slice())
        .copied()
        .collect()
}

fn relu_in_place(m: &mut Matrix) {
    m.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
}

fn relu_mask(grad: &Matrix, pre: &Matrix) -> Matrix {
    let mut out = grad.clone();
    for (d, &v) in out.as_mut_slice().iter_mut().zip(pre.as_slice()) {
        if v <= 0.0 {
            *d = 0.0;
        }
    }
    out
}

fn collect<T>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    results.into_iter().collect()
}

fn unzip<A, B>(pairs: Vec<(A, B)>) -> (Vec<A>, Vec<B>) {
    pairs.into_iter().unzip()
}

/// The `g` devices of one iteration.
pub struct Cooperative<'a> {
    exec: &'a Executor,
    splits: &'a [LocalSplit],
    plan: &'a ShufflePlan,
    states: Vec<DeviceState>,
    fabric: Fabric,
    forward_done: bool,
}

impl<'a> Cooperative<'a> {
    /// `replicas[d]` is device `d`'s copy of the parameters and `inputs[d]` its
    /// owned layer-0 feature rows in split order.
    pub fn new(
        exec: &'a Executor,
        splits: &'a [LocalSplit],
        plan: &'a ShufflePlan,
        replicas: &[ModelParams],
        inputs: Vec<Matrix>,
    ) -> Result<Self> {
        let g = splits.len();
        if replicas.len() != g || inputs.len() != g || plan.num_devices() != g {
            return Err(Error::Shape(format!(
                "{g} splits, {} replicas, {} inputs, plan over {} devices",
                replicas.len(),
                inputs.len(),
                plan.num_devices()
            )));
        }
        let num_layers = replicas.first().map_or(0, ModelParams::num_layers);
        let mut states = Vec::with_capacity(g);
        for ((sp, params), x0) in splits.iter().zip(replicas).zip(inputs) {
            if sp.num_layers() != num_layers || plan.num_layers() != num_layers {
                return Err(Error::Config(format!(
                    "split has {} layers, model has {num_layers}",
                    sp.num_layers()
                )));
            }
            if x0.rows() != sp.layer(0).num_owned() || x0.cols() != params.input_dim() {
                return Err(Error::Shape(format!(
                    "device {}: input {}x{}, expected {}x{}",
                    sp.device,
                    x0.rows(),
                    x0.cols(),
                    sp.layer(0).num_owned(),
                    params.input_dim()
                )));
            }
            states.push(DeviceState {
                device: sp.device,
                grads: params.zeros_like(),
                params: params.clone(),
                hidden: vec![x0],
                caches: (0..num_layers).map(|_| None).collect(),
                slot_scratch: Vec::new(),
                dx: Matrix::default(),
                dz_ext: Matrix::default(),
                dalpha: Vec::new(),
                loss_sum: 0.0,
            });
        }
        Ok(Self {
            exec,
            splits,
            plan,
            states,
            fabric: Fabric::new(g, num_layers),
            forward_done: false,
        })
    }

    pub fn num_devices(&self) -> usize {
        self.states.len()
    }

    pub fn fabric(&self) -> &Fabric {
        &self.fabric
    }

    /// Owned rows of `H^(l)` on device `d`, after [`Cooperative::forward`].
    pub fn hidden(&self, d: usize, l: usize) -> &Matrix {
        &self.states[d].hidden[l]
    }

    /// GAT attention of device `d`'s local edges at layer `l`.
    pub fn attention(&self, d: usize, l: usize) -> Option<&[f64]> {
        match self.states[d].caches.get(l.wrapping_sub(1))? {
            Some(LayerCache::Gat(c)) => Some(&c.alpha),
            _ => None,
        }
    }

    pub fn forward(&mut self) -> Result<()> {
        let num_layers = self.states.first().map_or(0, |s| s.params.num_layers());
        for l in 1..=num_layers {
            match &self.states[0].params.layers[l - 1] {
                LayerParams::Sage(_) => self.sage_forward(l)?,
                LayerParams::Gat(_) => self.gat_forward(l)?,
            }
        }
        self.forward_done = true;
        Ok(())
    }

    fn sage_forward(&mut self, l: usize) -> Result<()> {
        let splits = self.splits;
        // local partial sums, last column counts the contributing edges
        let parts = self
            .exec
            .phase(&mut self.states, vec![(); splits.len()], |st, ()| {
                let ls = splits[st.device.index()].layer(l);
                let x = &st.hidden[l - 1];
                let w = x.cols() + 1;
                let mut owned = Matrix::zeros(ls.num_owned(), w);
                let mut refs = Matrix::zeros(ls.references.len(), w);
                for e in &ls.edges {
                    let row = if ls.is_reference_slot(e.dst) {
                        refs.row_mut(e.dst - ls.num_owned())
                    } else {
                        owned.row_mut(e.dst)
                    };
                    let (sum, count) = row.split_at_mut(w - 1);
                    axpy(1.0, x.row(e.src), sum);
                    count[0] += 1.0;
                }
                (owned, refs)
            });
        let (mut owned, refs) = unzip(parts);
        self.fabric
            .push_to_owner(self.plan, l, &refs, &mut owned, Reduce::Sum)?;
        let done = self.exec.phase(&mut self.states, owned, |st, totals| {
            let LayerParams::Sage(p) = &st.params.layers[l - 1] else {
                return Err(Error::Config("mixed layer kinds".into()));
            };
            let x = &st.hidden[l - 1];
            let no = totals.rows();
            let din = x.cols();
            let mut mean = Matrix::zeros(no, din);
            let mut count = vec![0.0; no];
            for r in 0..no {
                let row = totals.row(r);
                count[r] = row[din];
                if count[r] > 0.0 {
                    for (m, &s) in mean.row_mut(r).iter_mut().zip(&row[..din]) {
                        *m = s / count[r];
                    }
                }
            }
            let mut pre = x.head(no).matmul(&p.w_self)?;
            pre.add_assign(&mean.matmul(&p.w_neigh)?)?;
            pre.add_row_vector(&p.bias);
            let mut h = pre.clone();
            relu_in_place(&mut h);
            st.hidden.push(h);
            st.caches[l - 1] = Some(LayerCache::Sage(SageCache { mean, count, pre }));
            Ok(())
        });
        collect(done).map(drop)
    }

    fn gat_forward(&mut self, l: usize) -> Result<()> {
        let splits = self.splits;
        let g = splits.len();
        let x_prev: Vec<&Matrix> = self.states.iter().map(|s| &s.hidden[l - 1]).collect();
        let x_refs = scatter_shuffle_forward(splits, self.plan, l, &x_prev, &mut self.fabric)?;

        // scores and local per-slot maxima
        let maxima = self.exec.phase(&mut self.states, x_refs, |st, x_ref| {
            let LayerParams::Gat(p) = &st.params.layers[l - 1] else {
                return Err(Error::Config("mixed layer kinds".into()));
            };
            let ls = splits[st.device.index()].layer(l);
            let prev_owned = st.hidden[l - 1].rows();
            let x_ext = st.hidden[l - 1].vstack(&x_ref)?;
            let z_ext = x_ext.matmul(&p.w)?;
            let score: Vec<f64> = ls
                .edges
                .iter()
                .map(|e| {
                    dot(z_ext.row(e.src), &p.a_src)
                        + dot(z_ext.row(ext_row(ls, prev_owned, e.dst)), &p.a_dst)
                })
                .collect();
            let e: Vec<f64> = score
                .iter()
                .map(|&c| leaky_relu(c, st.params.negative_slope))
                .collect();
            let mut slot_max = vec![f64::NEG_INFINITY; ls.num_slots()];
            for (k, edge) in ls.edges.iter().enumerate() {
                slot_max[edge.dst] = slot_max[edge.dst].max(e[k]);
            }
            st.caches[l - 1] = Some(LayerCache::Gat(GatCache {
                x_ext,
                z_ext,
                score,
                e,
                alpha: Vec::new(),
                out: Matrix::default(),
            }));
            Ok(slot_halves(&slot_max, ls.num_owned()))
        });
        let (mut owned, mut refs) = unzip(collect(maxima)?);
        self.fabric
            .push_to_owner(self.plan, l, &refs, &mut owned, Reduce::Max)?;
        self.fabric
            .push_from_owner(self.plan, l, &owned, &mut refs, Reduce::Overwrite)?;

        // shifted exponentials and local per-slot denominators
        let inputs: Vec<(Matrix, Matrix)> = owned.into_iter().zip(refs).collect();
        let denoms = self.exec.phase(&mut self.states, inputs, |st, (mo, mr)| {
            let ls = splits[st.device.index()].layer(l);
            let slot_max = join_halves(&mo, &mr);
            let Some(LayerCache::Gat(c)) = &mut st.caches[l - 1] else {
                return Err(Error::MissingActivation(l));
            };
            let mut denom = vec![0.0; ls.num_slots()];
            // alpha holds the exponentials until the denominators arrive
            c.alpha = ls
                .edges
                .iter()
                .zip(&c.e)
                .map(|(edge, &ev)| {
                    let x = (ev - slot_max[edge.dst]).exp();
                    denom[edge.dst] += x;
                    x
                })
                .collect();
            Ok(slot_halves(&denom, ls.num_owned()))
        });
        let (mut owned, mut refs) = unzip(collect(denoms)?);
        self.fabric
            .push_to_owner(self.plan, l, &refs, &mut owned, Reduce::Sum)?;
        self.fabric
            .push_from_owner(self.plan, l, &owned, &mut refs, Reduce::Overwrite)?;

        // normalized attention and local numerators
        let inputs: Vec<(Matrix, Matrix)> = owned.into_iter().zip(refs).collect();
        let numerators = self.exec.phase(&mut self.states, inputs, |st, (d_o, d_r)| {
            let ls = splits[st.device.index()].layer(l);
            let denom = join_halves(&d_o, &d_r);
            let Some(LayerCache::Gat(c)) = &mut st.caches[l - 1] else {
                return Err(Error::MissingActivation(l));
            };
            let w = c.z_ext.cols();
            let mut owned = Matrix::zeros(ls.num_owned(), w);
            let mut refs = Matrix::zeros(ls.references.len(), w);
            for (k, edge) in ls.edges.iter().enumerate() {
                c.alpha[k] /= denom[edge.dst];
                let row = if ls.is_reference_slot(edge.dst) {
                    refs.row_mut(edge.dst - ls.num_owned())
                } else {
                    owned.row_mut(edge.dst)
                };
                axpy(c.alpha[k], c.z_ext.row(edge.src), row);
            }
            Ok((owned, refs))
        });
        let (mut owned, refs) = unzip(collect(numerators)?);
        self.fabric
            .push_to_owner(self.plan, l, &refs, &mut owned, Reduce::Sum)?;

        let done = self.exec.phase(&mut self.states, owned, |st, out| {
            let Some(LayerCache::Gat(c)) = &mut st.caches[l - 1] else {
                return Err(Error::MissingActivation(l));
            };
            let mut h = out.clone();
            relu_in_place(&mut h);
            c.out = out;
            st.hidden.push(h);
            Ok(())
        });
        debug_assert_eq!(done.len(), g);
        collect(done).map(drop)
    }

    /// Classifier loss over each device's owned targets followed by the full
    /// backward pass. `labels[d]` lists the labels of device `d`'s owned
    /// targets in split order. Returns the summed loss.
    pub fn loss_and_backward(&mut self, labels: Vec<Vec<usize>>) -> Result<f64> {
        if !self.forward_done {
            return Err(Error::MissingActivation(
                self.states.first().map_or(0, |s| s.hidden.len()),
            ));
        }
        if labels.len() != self.states.len() {
            return Err(Error::Shape(format!(
                "{} label lists for {} devices",
                labels.len(),
                self.states.len()
            )));
        }
        let grads = self.exec.phase(&mut self.states, labels, |st, y| {
            let top = st.hidden.last().expect("forward ran");
            let (loss, dh) = classifier_loss(&st.params, top, &y, &mut st.grads)?;
            st.loss_sum = loss;
            Ok(dh)
        });
        let dh = collect(grads)?;
        self.backward(dh)?;
        Ok(self.states.iter().map(|s| s.loss_sum).sum())
    }

    /// Backward pass from `∂loss/∂H^(L)` on each device's owned targets.
    pub fn backward<M: Borrow<Matrix> + Send>(&mut self, dh_top: Vec<M>) -> Result<()> {
        if !self.forward_done {
            return Err(Error::MissingActivation(
                self.states.first().map_or(0, |s| s.hidden.len()),
            ));
        }
        let num_layers = self.states[0].params.num_layers();
        let mut dh: Vec<Matrix> = dh_top.into_iter().map(|m| m.borrow().clone()).collect();
        for (st, m) in self.states.iter().zip(&dh) {
            let top = &st.hidden[num_layers];
            if m.rows() != top.rows() || m.cols() != top.cols() {
                return Err(Error::Shape(format!(
                    "device {}: output gradient {}x{}, expected {}x{}",
                    st.device,
                    m.rows(),
                    m.cols(),
                    top.rows(),
                    top.cols()
                )));
            }
        }
        for l in (1..=num_layers).rev() {
            dh = match &self.states[0].params.layers[l - 1] {
                LayerParams::Sage(_) => self.sage_backward(l, dh)?,
                LayerParams::Gat(_) => self.gat_backward(l, dh)?,
            };
        }
        Ok(())
    }

    fn sage_backward(&mut self, l: usize, dh: Vec<Matrix>) -> Result<Vec<Matrix>> {
        let splits = self.splits;
        let owned = self.exec.phase(&mut self.states, dh, |st, dh| {
            let st = &mut *st;
            let Some(LayerCache::Sage(c)) = &st.caches[l - 1] else {
                return Err(Error::MissingActivation(l));
            };
            let (LayerParams::Sage(p), LayerParams::Sage(g)) =
                (&st.params.layers[l - 1], &mut st.grads.layers[l - 1])
            else {
                return Err(Error::Config("mixed layer kinds".into()));
            };
            let x = &st.hidden[l - 1];
            let no = c.pre.rows();
            let dpre = relu_mask(&dh, &c.pre);
            g.w_self.add_assign(&x.head(no).t_matmul(&dpre)?)?;
            g.w_neigh.add_assign(&c.mean.t_matmul(&dpre)?)?;
            for (b, s) in g.bias.iter_mut().zip(dpre.col_sums()) {
                *b += s;
            }
            let mut dx = Matrix::zeros(x.rows(), x.cols());
            let dself = dpre.matmul_t(&p.w_self)?;
            for r in 0..no {
                dx.row_mut(r).copy_from_slice(dself.row(r));
            }
            st.dx = dx;
            let mut dsum = dpre.matmul_t(&p.w_neigh)?;
            for (r, &n) in c.count.iter().enumerate() {
                let inv = 1.0 / n;
                dsum.row_mut(r).iter_mut().for_each(|v| *v *= inv);
            }
            Ok(dsum)
        });
        let owned = collect(owned)?;
        let width = owned.first().map_or(0, Matrix::cols);
        let mut refs: Vec<Matrix> = splits
            .iter()
            .map(|sp| Matrix::zeros(sp.layer(l).references.len(), width))
            .collect();
        self.fabric
            .push_from_owner(self.plan, l, &owned, &mut refs, Reduce::Overwrite)?;
        let inputs: Vec<(Matrix, Matrix)> = owned.into_iter().zip(refs).collect();
        let out = self.exec.phase(&mut self.states, inputs, |st, (d_o, d_r)| {
            let ls = splits[st.device.index()].layer(l);
            let mut dx = std::mem::take(&mut st.dx);
            for e in &ls.edges {
                let row = if ls.is_reference_slot(e.dst) {
                    d_r.row(e.dst - ls.num_owned())
                } else {
                    d_o.row(e.dst)
                };
                axpy(1.0, row, dx.row_mut(e.src));
            }
            dx
        });
        Ok(out)
    }

    fn gat_backward(&mut self, l: usize, dh: Vec<Matrix>) -> Result<Vec<Matrix>> {
        let splits = self.splits;
        let douts = self.exec.phase(&mut self.states, dh, |st, dh| {
            let Some(LayerCache::Gat(c)) = &st.caches[l - 1] else {
                return Err(Error::MissingActivation(l));
            };
            Ok(relu_mask(&dh, &c.out))
        });
        let owned = collect(douts)?;
        let width = owned.first().map_or(0, Matrix::cols);
        let mut refs: Vec<Matrix> = splits
            .iter()
            .map(|sp| Matrix::zeros(sp.layer(l).references.len(), width))
            .collect();
        // mirror of the numerator push
        self.fabric
            .push_from_owner(self.plan, l, &owned, &mut refs, Reduce::Overwrite)?;

        let inputs: Vec<(Matrix, Matrix)> = owned.into_iter().zip(refs).collect();
        let weighted = self.exec.phase(&mut self.states, inputs, |st, (d_o, d_r)| {
            let ls = splits[st.device.index()].layer(l);
            let Some(LayerCache::Gat(c)) = &st.caches[l - 1] else {
                return Err(Error::MissingActivation(l));
            };
            let mut dz = Matrix::zeros(c.z_ext.rows(), c.z_ext.cols());
            let mut dalpha = vec![0.0; ls.edges.len()];
            let mut s = vec![0.0; ls.num_slots()];
            for (k, e) in ls.edges.iter().enumerate() {
                let dout = if ls.is_reference_slot(e.dst) {
                    d_r.row(e.dst - ls.num_owned())
                } else {
                    d_o.row(e.dst)
                };
                dalpha[k] = dot(dout, c.z_ext.row(e.src));
                axpy(c.alpha[k], dout, dz.row_mut(e.src));
                s[e.dst] += c.alpha[k] * dalpha[k];
            }
            st.dz_ext = dz;
            st.dalpha = dalpha;
            Ok(slot_halves(&s, ls.num_owned()))
        });
        let (mut owned, mut refs) = unzip(collect(weighted)?);
        // mirror of the denominator exchange pair
        self.fabric
            .push_to_owner(self.plan, l, &refs, &mut owned, Reduce::Sum)?;
        self.fabric
            .push_from_owner(self.plan, l, &owned, &mut refs, Reduce::Overwrite)?;

        let inputs: Vec<(Matrix, Matrix)> = owned.into_iter().zip(refs).collect();
        let dxs = self.exec.phase(&mut self.states, inputs, |st, (so, sr)| {
            let st = &mut *st;
            let ls = splits[st.device.index()].layer(l);
            st.slot_scratch = join_halves(&so, &sr);
            let Some(LayerCache::Gat(c)) = &st.caches[l - 1] else {
                return Err(Error::MissingActivation(l));
            };
            let (LayerParams::Gat(p), LayerParams::Gat(g)) =
                (&st.params.layers[l - 1], &mut st.grads.layers[l - 1])
            else {
                return Err(Error::Config("mixed layer kinds".into()));
            };
            let slope = st.params.negative_slope;
            let prev_owned = st.hidden[l - 1].rows();
            let rows = c.z_ext.rows();
            let mut ds_src = vec![0.0; rows];
            let mut ds_dst = vec![0.0; rows];
            for (k, e) in ls.edges.iter().enumerate() {
                let de = c.alpha[k] * (st.dalpha[k] - st.slot_scratch[e.dst]);
                let dc = if c.score[k] > 0.0 { de } else { slope * de };
                ds_src[e.src] += dc;
                ds_dst[ext_row(ls, prev_owned, e.dst)] += dc;
            }
            let dz = &mut st.dz_ext;
            for (r, &v) in ds_src.iter().enumerate() {
                if v != 0.0 {
                    axpy(v, c.z_ext.row(r), &mut g.a_src);
                    axpy(v, &p.a_src, dz.row_mut(r));
                }
            }
            for (r, &v) in ds_dst.iter().enumerate() {
                if v != 0.0 {
                    axpy(v, c.z_ext.row(r), &mut g.a_dst);
                    axpy(v, &p.a_dst, dz.row_mut(r));
                }
            }
            g.w.add_assign(&c.x_ext.t_matmul(dz)?)?;
            let dx_ext = dz.matmul_t(&p.w)?;
            let dx_owned = dx_ext.head(prev_owned);
            let ref_rows: Vec<usize> = (prev_owned..rows).collect();
            let dx_ref = dx_ext.select_rows(&ref_rows);
            Ok((dx_owned, dx_ref))
        });
        let (mut owned, refs) = unzip(collect(dxs)?);
        // mirror of the scatter of H^(l-1)
        self.fabric
            .push_to_owner(self.plan, l, &refs, &mut owned, Reduce::Sum)?;
        Ok(owned)
    }

    /// Per-device gradients, consuming the iteration.
    pub fn into_grads(self) -> Vec<ModelParams> {
        self.states.into_iter().map(|s| s.grads).collect()
    }

    /// Splits off the fabric meter and the per-device gradients.
    pub fn finish(self) -> (Fabric, Vec<ModelParams>) {
        let fabric = self.fabric.clone();
        (fabric, self.into_grads())
    }
}
