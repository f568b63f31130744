//! Simulated devices: a phase executor and a metered exchange fabric.
//!
//! A phase runs one closure per device, either sequentially in device order
//! or on a rayon pool. Exchanges happen between phases on the coordinating
//! thread, so every shuffle is a full barrier, and rows are applied in a fixed
//! `(from, to, row)` order so both schedules give identical bits.

use std::borrow::Borrow;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scheduler::{LocalSplit, ShufflePlan, Transfer};
use crate::tensor::Matrix;

pub struct Executor {
    pool: Option<rayon::ThreadPool>,
}

impl Executor {
    /// `workers <= 1` selects the sequential round-robin schedule.
    pub fn new(workers: usize) -> Result<Self> {
        let pool = if workers > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .build()
                    .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?,
            )
        } else {
            None
        };
        Ok(Self { pool })
    }

    pub fn sequential() -> Self {
        Self { pool: None }
    }

    pub fn workers(&self) -> usize {
        self.pool.as_ref().map_or(1, |p| p.current_num_threads())
    }

    /// Runs `f(state_d, input_d)` for every device and returns the outputs in
    /// device order once all have finished.
    pub fn phase<S, I, R, F>(&self, states: &mut [S], inputs: Vec<I>, f: F) -> Vec<R>
    where
        S: Send,
        I: Send,
        R: Send,
        F: Fn(&mut S, I) -> R + Sync,
    {
        assert_eq!(states.len(), inputs.len(), "one input per device");
        match &self.pool {
            None => states
                .iter_mut()
                .zip(inputs)
                .map(|(s, i)| f(s, i))
                .collect(),
            Some(pool) => pool.install(|| {
                states
                    .par_iter_mut()
                    .zip(inputs.into_par_iter())
                    .map(|(s, i)| f(s, i))
                    .collect()
            }),
        }
    }
}

/// How received rows combine with the receiver's buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Max,
    Overwrite,
}

/// Peer-to-peer byte meter. Each transported vector costs `8 · width` bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct Fabric {
    num_devices: usize,
    pair_bytes: Vec<Vec<u64>>,
    layer_bytes: Vec<u64>,
    exchanges: usize,
}

impl Fabric {
    pub fn new(num_devices: usize, num_layers: usize) -> Self {
        Self {
            num_devices,
            pair_bytes: vec![vec![0; num_devices]; num_devices],
            layer_bytes: vec![0; num_layers + 1],
            exchanges: 0,
        }
    }

    pub fn total_bytes(&self) -> u64 {
        self.layer_bytes.iter().sum()
    }

    /// `[from][to]` bytes.
    pub fn pair_bytes(&self) -> &[Vec<u64>] {
        &self.pair_bytes
    }

    /// Bytes moved by exchanges of layer `l` (forward and backward).
    pub fn layer_bytes(&self, l: usize) -> u64 {
        self.layer_bytes[l]
    }

    pub fn exchanges(&self) -> usize {
        self.exchanges
    }

    /// Owner-side rows travel to every device holding a reference. `owned[d]`
    /// is indexed by owned position at layer `l` (extra rows are ignored);
    /// `refs[d]` by reference index.
    pub fn push_from_owner<M: Borrow<Matrix>>(
        &mut self,
        plan: &ShufflePlan,
        l: usize,
        owned: &[M],
        refs: &mut [Matrix],
        reduce: Reduce,
    ) -> Result<()> {
        self.exchange(&plan.layer(l).push_from_owner, l, owned, refs, reduce)
    }

    /// Reference-side rows travel to their owners. `refs[d]` is indexed by
    /// reference index, `owned[d]` by owned position.
    pub fn push_to_owner<M: Borrow<Matrix>>(
        &mut self,
        plan: &ShufflePlan,
        l: usize,
        refs: &[M],
        owned: &mut [Matrix],
        reduce: Reduce,
    ) -> Result<()> {
        self.exchange(&plan.layer(l).push_to_owner, l, refs, owned, reduce)
    }

    fn exchange<M: Borrow<Matrix>>(
        &mut self,
        transfers: &[Transfer],
        l: usize,
        send: &[M],
        recv: &mut [Matrix],
        reduce: Reduce,
    ) -> Result<()> {
        if send.len() != self.num_devices || recv.len() != self.num_devices {
            return Err(Error::Shape(format!(
                "exchange over {} devices given {} send and {} receive buffers",
                self.num_devices,
                send.len(),
                recv.len()
            )));
        }
        self.exchanges += 1;
        for t in transfers {
            let (s, r) = (send[t.from.index()].borrow(), &mut recv[t.to.index()]);
            if t.vertices.is_empty() {
                continue;
            }
            let width = s.cols();
            if r.cols() != width {
                return Err(Error::Shape(format!(
                    "layer {l}: {}→{} sends width {width} into width {}",
                    t.from,
                    t.to,
                    r.cols()
                )));
            }
            let max_send = t.send_rows.iter().max().copied().unwrap_or(0);
            let max_recv = t.recv_rows.iter().max().copied().unwrap_or(0);
            if max_send >= s.rows() || max_recv >= r.rows() {
                return Err(Error::Shape(format!(
                    "layer {l}: {}→{} rows out of range ({} / {} rows, {} / {} needed)",
                    t.from,
                    t.to,
                    s.rows(),
                    r.rows(),
                    max_send + 1,
                    max_recv + 1
                )));
            }
            for (&sr, &rr) in t.send_rows.iter().zip(&t.recv_rows) {
                let src = s.row(sr);
                let dst = r.row_mut(rr);
                match reduce {
                    Reduce::Sum => dst.iter_mut().zip(src).for_each(|(d, x)| *d += x),
                    Reduce::Max => dst.iter_mut().zip(src).for_each(|(d, x)| *d = d.max(*x)),
                    Reduce::Overwrite => dst.copy_from_slice(src),
                }
            }
            let bytes = (8 * width * t.vertices.len()) as u64;
            self.pair_bytes[t.from.index()][t.to.index()] += bytes;
            self.layer_bytes[l] += bytes;
        }
        Ok(())
    }
}

/// Fills each device's reference rows for layer `l` with the owners' current
/// vectors. `owned[d]` holds device `d`'s owned rows at layer `l - 1` (its owned
/// layer-`l` vertices are the leading rows). Returns one `|R^l_d| × width`
/// matrix per device.
pub fn scatter_shuffle_forward<M: Borrow<Matrix>>(
    splits: &[LocalSplit],
    plan: &ShufflePlan,
    l: usize,
    owned: &[M],
    fabric: &mut Fabric,
) -> Result<Vec<Matrix>> {
    if owned.len() != splits.len() {
        return Err(Error::Shape(format!(
            "{} tensors for {} devices",
            owned.len(),
            splits.len()
        )));
    }
    if l == 0 || l > plan.num_layers() {
        return Err(Error::InvalidArgument(format!(
            "layer {l} outside 1..={}",
            plan.num_layers()
        )));
    }
    let width = owned.iter().map(|m| m.borrow().cols()).max().unwrap_or(0);
    for (sp, m) in splits.iter().zip(owned) {
        let m = m.borrow();
        let need = sp.layer(l - 1).num_owned();
        if m.rows() != need || (m.rows() > 0 && m.cols() != width) {
            return Err(Error::Shape(format!(
                "device {}: {}x{} rows, expected {need}x{width}",
                sp.device,
                m.rows(),
                m.cols()
            )));
        }
    }
    let mut refs: Vec<Matrix> = splits
        .iter()
        .map(|sp| Matrix::zeros(sp.layer(l).references.len(), width))
        .collect();
    fabric.push_from_owner(plan, l, owned, &mut refs, Reduce::Overwrite)?;
    Ok(refs)
}
