//! Selective state-space scan over 2-d feature maps.
//!
//! Per channel `c` and scan order, with `h_0 = 0`:
//!
//! ```text
//! h_t = exp(Δ_t A_c) ⊙ h_{t-1} + Δ_t B_t u_t
//! y_t = <C_t, h_t> + D_c u_t
//! ```
//!
//! The map is never permuted in memory: each direction is an array from
//! sequence step to spatial position, and the scan reads and writes through it.

use ldg_tensor::{Element, Tensor, TensorError, Var};
use rayon::prelude::*;

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScanDirection {
    RowFwd,
    RowBwd,
    ColFwd,
    ColBwd,
}

impl ScanDirection {
    pub const ALL: [ScanDirection; 4] = [
        ScanDirection::RowFwd,
        ScanDirection::RowBwd,
        ScanDirection::ColFwd,
        ScanDirection::ColBwd,
    ];

    /// Spatial index (`y * w + x`) visited at each sequence step.
    pub fn order(self, h: usize, w: usize) -> Vec<usize> {
        let l = h * w;
        let col = |t: usize| (t % h) * w + t / h;
        match self {
            ScanDirection::RowFwd => (0..l).collect(),
            ScanDirection::RowBwd => (0..l).rev().collect(),
            ScanDirection::ColFwd => (0..l).map(col).collect(),
            ScanDirection::ColBwd => (0..l).rev().map(col).collect(),
        }
    }
}

/// Operands of [`selective_scan`]. With `K` directions:
/// `u: [B,C,H,W]`, `delta: [B,K*C,H,W]` (positive), `a: [C,N]`,
/// `b, c: [B,K*N,H,W]`, `d: [C]`. Direction `k` uses channel block `k` of
/// `delta`, `b` and `c`.
pub struct ScanInputs<'a, T: Element> {
    pub u: &'a Var<T>,
    pub delta: &'a Var<T>,
    pub a: &'a Var<T>,
    pub b: &'a Var<T>,
    pub c: &'a Var<T>,
    pub d: &'a Var<T>,
}

#[derive(Clone, Copy)]
struct Dims {
    batch: usize,
    ch: usize,
    n: usize,
    l: usize,
    k: usize,
}

impl Dims {
    fn flops(&self) -> u64 {
        // one multiply-add per state element and step for the output
        // contraction, per direction
        (2 * self.batch * self.k * self.ch * self.l * self.n) as u64
    }
}

fn check<T: Element>(x: &ScanInputs<'_, T>, k: usize) -> Result<(Dims, usize, usize)> {
    let us = x.u.shape();
    if us.len() != 4 {
        return Err(TensorError::contract("selective_scan", format!("u must be [B,C,H,W], got {us:?}")).into());
    }
    let (batch, ch, h, w) = (us[0], us[1], us[2], us[3]);
    let as_ = x.a.shape();
    if as_.len() != 2 || as_[0] != ch {
        return Err(TensorError::shape("selective_scan A", &as_, &[ch, 0]).into());
    }
    let n = as_[1];
    let expect = |name: &'static str, v: &Var<T>, want: Vec<usize>| -> Result<()> {
        if v.shape() != want {
            return Err(TensorError::shape(name, &v.shape(), &want).into());
        }
        Ok(())
    };
    expect("selective_scan delta", x.delta, vec![batch, k * ch, h, w])?;
    expect("selective_scan B", x.b, vec![batch, k * n, h, w])?;
    expect("selective_scan C", x.c, vec![batch, k * n, h, w])?;
    expect("selective_scan D", x.d, vec![ch])?;
    if let Some(bad) = x.delta.value().data().iter().find(|v| !(**v > T::zero())) {
        return Err(TensorError::contract("selective_scan", format!("step sizes must be positive, found {bad}")).into());
    }
    Ok((
        Dims {
            batch,
            ch,
            n,
            l: h * w,
            k,
        },
        h,
        w,
    ))
}

/// Copies channel block `blk` (`n` planes of `l` values) into step-major
/// layout following `order`.
fn gather_steps<T: Element>(src: &[T], blk: usize, n: usize, l: usize, order: &[usize], out: &mut [T]) {
    for (t, &p) in order.iter().enumerate() {
        for j in 0..n {
            out[t * n + j] = src[(blk * n + j) * l + p];
        }
    }
}

fn scatter_steps<T: Element>(src: &[T], blk: usize, n: usize, l: usize, order: &[usize], out: &mut [T]) {
    for (t, &p) in order.iter().enumerate() {
        for j in 0..n {
            out[(blk * n + j) * l + p] = src[t * n + j];
        }
    }
}

struct Slices<'a, T> {
    u: &'a [T],
    delta: &'a [T],
    a: &'a [T],
    b: &'a [T],
    c: &'a [T],
    d: &'a [T],
}

fn forward_batch<T: Element>(s: &Slices<'_, T>, dims: Dims, orders: &[Vec<usize>], bi: usize) -> Vec<T> {
    let Dims { ch, n, l, k, .. } = dims;
    let u = &s.u[bi * ch * l..(bi + 1) * ch * l];
    let delta = &s.delta[bi * k * ch * l..(bi + 1) * k * ch * l];
    let bsrc = &s.b[bi * k * n * l..(bi + 1) * k * n * l];
    let csrc = &s.c[bi * k * n * l..(bi + 1) * k * n * l];
    let mut y = vec![T::zero(); ch * l];
    let mut bt = vec![T::zero(); l * n];
    let mut ct = vec![T::zero(); l * n];
    let mut es = vec![T::zero(); l * n];
    let mut h = vec![T::zero(); n];
    for (ki, order) in orders.iter().enumerate() {
        gather_steps(bsrc, ki, n, l, order, &mut bt);
        gather_steps(csrc, ki, n, l, order, &mut ct);
        for c in 0..ch {
            let a = &s.a[c * n..(c + 1) * n];
            let dl_row = &delta[(ki * ch + c) * l..(ki * ch + c + 1) * l];
            let u_row = &u[c * l..(c + 1) * l];
            let y_row = &mut y[c * l..(c + 1) * l];
            let dc = s.d[c];
            decays(dl_row, a, order, &mut es);
            h.iter_mut().for_each(|v| *v = T::zero());
            for (t, &p) in order.iter().enumerate() {
                let (dl, ut) = (dl_row[p], u_row[p]);
                let du = dl * ut;
                let (e_t, bt_t, ct_t) = (&es[t * n..(t + 1) * n], &bt[t * n..(t + 1) * n], &ct[t * n..(t + 1) * n]);
                let mut acc = T::zero();
                for j in 0..n {
                    h[j] = e_t[j] * h[j] + du * bt_t[j];
                    acc += ct_t[j] * h[j];
                }
                y_row[p] += acc + dc * ut;
            }
        }
    }
    y
}

/// `es[t*n + j] = exp(delta[order[t]] * a[j])` for one channel.
fn decays<T: Element>(dl_row: &[T], a: &[T], order: &[usize], es: &mut [T]) {
    let n = a.len();
    for (t, &p) in order.iter().enumerate() {
        let dl = dl_row[p];
        for (e, &aj) in es[t * n..(t + 1) * n].iter_mut().zip(a) {
            *e = dl * aj;
        }
    }
    T::exp_in_place(es);
}

struct BatchGrads<T> {
    du: Vec<T>,
    ddelta: Vec<T>,
    db: Vec<T>,
    dc: Vec<T>,
    da: Vec<T>,
    dd: Vec<T>,
}

fn backward_batch<T: Element>(s: &Slices<'_, T>, gy: &[T], dims: Dims, orders: &[Vec<usize>], bi: usize) -> BatchGrads<T> {
    let Dims { ch, n, l, k, .. } = dims;
    let u = &s.u[bi * ch * l..(bi + 1) * ch * l];
    let gy = &gy[bi * ch * l..(bi + 1) * ch * l];
    let delta = &s.delta[bi * k * ch * l..(bi + 1) * k * ch * l];
    let bsrc = &s.b[bi * k * n * l..(bi + 1) * k * n * l];
    let csrc = &s.c[bi * k * n * l..(bi + 1) * k * n * l];
    let mut g = BatchGrads {
        du: vec![T::zero(); ch * l],
        ddelta: vec![T::zero(); k * ch * l],
        db: vec![T::zero(); k * n * l],
        dc: vec![T::zero(); k * n * l],
        da: vec![T::zero(); ch * n],
        dd: vec![T::zero(); ch],
    };
    let mut bt = vec![T::zero(); l * n];
    let mut ct = vec![T::zero(); l * n];
    let mut dbt = vec![T::zero(); l * n];
    let mut dct = vec![T::zero(); l * n];
    let mut hs = vec![T::zero(); l * n];
    let mut es = vec![T::zero(); l * n];
    let mut carry = vec![T::zero(); n];
    let zeros = vec![T::zero(); n];
    for (ki, order) in orders.iter().enumerate() {
        gather_steps(bsrc, ki, n, l, order, &mut bt);
        gather_steps(csrc, ki, n, l, order, &mut ct);
        dbt.iter_mut().for_each(|v| *v = T::zero());
        dct.iter_mut().for_each(|v| *v = T::zero());
        for c in 0..ch {
            let a = &s.a[c * n..(c + 1) * n];
            let dl_row = &delta[(ki * ch + c) * l..(ki * ch + c + 1) * l];
            let u_row = &u[c * l..(c + 1) * l];
            let gy_row = &gy[c * l..(c + 1) * l];
            let dc = s.d[c];
            // replay the forward recurrence, keeping every state
            decays(dl_row, a, order, &mut es);
            for (t, &p) in order.iter().enumerate() {
                let du = dl_row[p] * u_row[p];
                for j in 0..n {
                    let prev = if t == 0 { T::zero() } else { hs[(t - 1) * n + j] };
                    hs[t * n + j] = es[t * n + j] * prev + du * bt[t * n + j];
                }
            }
            carry.iter_mut().for_each(|v| *v = T::zero());
            let mut dd = T::zero();
            let mut da = vec![T::zero(); n];
            let du_row = &mut g.du[c * l..(c + 1) * l];
            let ddl_row = &mut g.ddelta[(ki * ch + c) * l..(ki * ch + c + 1) * l];
            for t in (0..l).rev() {
                let p = order[t];
                let (gv, dl, ut) = (gy_row[p], dl_row[p], u_row[p]);
                dd += gv * ut;
                let step = t * n..(t + 1) * n;
                let prev = if t == 0 { &zeros[..] } else { &hs[(t - 1) * n..t * n] };
                let (e, b, c, h) = (&es[step.clone()], &bt[step.clone()], &ct[step.clone()], &hs[step.clone()]);
                let (dct_t, dbt_t) = (&mut dct[step.clone()], &mut dbt[step]);
                let (mut du_acc, mut ddl) = (T::zero(), T::zero());
                for j in 0..n {
                    let gh = carry[j] + gv * c[j];
                    dct_t[j] += gv * h[j];
                    let eh = e[j] * prev[j];
                    let ghd = gh * dl;
                    ddl += gh * (a[j] * eh + b[j] * ut);
                    da[j] += ghd * eh;
                    dbt_t[j] += ghd * ut;
                    du_acc += ghd * b[j];
                    carry[j] = gh * e[j];
                }
                du_row[p] += du_acc + gv * dc;
                ddl_row[p] = ddl;
            }
            g.dd[c] += dd;
            for j in 0..n {
                g.da[c * n + j] += da[j];
            }
        }
        scatter_steps(&dbt, ki, n, l, order, &mut g.db);
        scatter_steps(&dct, ki, n, l, order, &mut g.dc);
    }
    g
}

/// Sum over `directions` of the selective scan of `u`, see [`ScanInputs`].
pub fn selective_scan<T: Element>(x: ScanInputs<'_, T>, directions: &[ScanDirection]) -> Result<Var<T>> {
    let (dims, h, w) = check(&x, directions.len())?;
    let orders: Vec<Vec<usize>> = directions.iter().map(|d| d.order(h, w)).collect();
    let out = {
        let (u, delta, a, b, c, d) = (x.u.value(), x.delta.value(), x.a.value(), x.b.value(), x.c.value(), x.d.value());
        let s = Slices {
            u: u.data(),
            delta: delta.data(),
            a: a.data(),
            b: b.data(),
            c: c.data(),
            d: d.data(),
        };
        let parts: Vec<Vec<T>> = (0..dims.batch)
            .into_par_iter()
            .map(|bi| forward_batch(&s, dims, &orders, bi))
            .collect();
        parts.concat()
    };
    ldg_tensor::stats::add_flops(dims.flops());
    let value = Tensor::new(out, x.u.shape())?;
    let parents = [x.u, x.delta, x.a, x.b, x.c, x.d];
    Ok(Var::from_op(value, "selective_scan", &parents, move |ctx| {
        let s = Slices {
            u: ctx.input(0).data(),
            delta: ctx.input(1).data(),
            a: ctx.input(2).data(),
            b: ctx.input(3).data(),
            c: ctx.input(4).data(),
            d: ctx.input(5).data(),
        };
        let gy = ctx.grad().data();
        let parts: Vec<BatchGrads<T>> = (0..dims.batch)
            .into_par_iter()
            .map(|bi| backward_batch(&s, gy, dims, &orders, bi))
            .collect();
        let Dims { batch, ch, n, .. } = dims;
        let mut da = vec![T::zero(); ch * n];
        let mut dd = vec![T::zero(); ch];
        let (mut du, mut ddelta, mut db, mut dc) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for p in parts {
            du.extend(p.du);
            ddelta.extend(p.ddelta);
            db.extend(p.db);
            dc.extend(p.dc);
            da.iter_mut().zip(p.da).for_each(|(x, y)| *x += y);
            dd.iter_mut().zip(p.dd).for_each(|(x, y)| *x += y);
        }
        debug_assert_eq!(du.len(), batch * ch * dims.l);
        let shape_of = |i: usize| ctx.input(i).shape().to_vec();
        Ok(vec![
            Some(Tensor::new(du, shape_of(0))?),
            Some(Tensor::new(ddelta, shape_of(1))?),
            Some(Tensor::new(da, shape_of(2))?),
            Some(Tensor::new(db, shape_of(3))?),
            Some(Tensor::new(dc, shape_of(4))?),
            Some(Tensor::new(dd, shape_of(5))?),
        ])
    }))
}

/// Single-sequence scan: `u, delta: [L,C]`, `a: [C,N]`, `b, c: [L,N]`,
/// `d: [C]`; returns `y: [L,C]`.
pub fn selective_scan_1d<T: Element>(
    u: &Var<T>,
    delta: &Var<T>,
    a: &Var<T>,
    b: &Var<T>,
    c: &Var<T>,
    d: &Var<T>,
) -> Result<Var<T>> {
    let us = u.shape();
    if us.len() != 2 {
        return Err(TensorError::contract("selective_scan_1d", format!("u must be [L,C], got {us:?}")).into());
    }
    let (l, ch) = (us[0], us[1]);
    let n = b.shape().get(1).copied().unwrap_or(0);
    let to_map = |v: &Var<T>, rows: usize| -> Result<Var<T>> { Ok(v.permute(&[1, 0])?.reshape(&[1, rows, 1, l])?) };
    let y = selective_scan(
        ScanInputs {
            u: &to_map(u, ch)?,
            delta: &to_map(delta, ch)?,
            a,
            b: &to_map(b, n)?,
            c: &to_map(c, n)?,
            d,
        },
        &[ScanDirection::RowFwd],
    )?;
    Ok(y.reshape(&[ch, l])?.permute(&[1, 0])?)
}

/// Step-by-step `f64` evaluation of the recurrences, kept deliberately
/// plain for cross-checking the fused kernel.
pub mod reference {
    /// One sequence. Row-major `u, delta: [L,C]`, `a: [C,N]`, `b, c: [L,N]`,
    /// `d: [C]`; returns `y: [L,C]`.
    pub fn scan_1d(u: &[f64], delta: &[f64], a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Vec<f64> {
        let ch = d.len();
        let n = a.len() / ch;
        let l = u.len() / ch;
        let mut y = vec![0.0; l * ch];
        for ci in 0..ch {
            let mut h = vec![0.0; n];
            for t in 0..l {
                let dl = delta[t * ch + ci];
                let x = u[t * ch + ci];
                let mut out = d[ci] * x;
                for j in 0..n {
                    h[j] = (dl * a[ci * n + j]).exp() * h[j] + dl * b[t * n + j] * x;
                    out += c[t * n + j] * h[j];
                }
                y[t * ch + ci] = out;
            }
        }
        y
    }

    #[allow(clippy::too_many_arguments)]
    /// Four-direction scan of one `[C,H,W]` map. `delta` is `[4C,H,W]`,
    /// `b, c` are `[4N,H,W]`, with blocks ordered row-forward, row-backward,
    /// column-forward, column-backward.
    pub fn scan_2d(
        u: &[f64],
        delta: &[f64],
        a: &[f64],
        b: &[f64],
        c: &[f64],
        d: &[f64],
        h: usize,
        w: usize,
    ) -> Vec<f64> {
        let ch = d.len();
        let n = a.len() / ch;
        let l = h * w;
        let mut rows: Vec<(usize, usize)> = Vec::with_capacity(l);
        for y in 0..h {
            for x in 0..w {
                rows.push((y, x));
            }
        }
        let mut cols: Vec<(usize, usize)> = Vec::with_capacity(l);
        for x in 0..w {
            for y in 0..h {
                cols.push((y, x));
            }
        }
        let paths = [
            rows.clone(),
            rows.iter().rev().copied().collect::<Vec<_>>(),
            cols.clone(),
            cols.iter().rev().copied().collect::<Vec<_>>(),
        ];
        let mut out = vec![0.0; ch * l];
        for (k, path) in paths.iter().enumerate() {
            let seq = |src: &[f64], rows: usize, offset: usize| -> Vec<f64> {
                let mut v = Vec::with_capacity(l * rows);
                for &(y, x) in path {
                    for r in 0..rows {
                        v.push(src[((offset + r) * h + y) * w + x]);
                    }
                }
                v
            };
            let ys = scan_1d(
                &seq(u, ch, 0),
                &seq(delta, ch, k * ch),
                a,
                &seq(b, n, k * n),
                &seq(c, n, k * n),
                d,
            );
            for (t, &(y, x)) in path.iter().enumerate() {
                for r in 0..ch {
                    out[(r * h + y) * w + x] += ys[t * ch + r];
                }
            }
        }
        out
    }
}
