//! Gated recurrent units and (bi)directional GRU stacks.
//!
//! Cell convention, one bias per gate, reset applied before the recurrent
//! candidate product:
//!
//! ```text
//! z  = sigmoid(x W_z + h U_z + b_z)
//! r  = sigmoid(x W_r + h U_r + b_r)
//! h~ = tanh(x W_h + (r * h) U_h + b_h)
//! h' = (1 - z) * h + z * h~
//! ```

use ndarray::{s, Array2, Array3, ArrayView1, ArrayView2, ArrayView3, Axis};

use super::ops::{affine, check_shape, mat_vec_acc, sigmoid, vec_mat_acc};
use super::{ParamId, ParamSpec, ParamTree, Real};
use crate::error::{Error, Result};

const GATES: [&str; 3] = ["z", "r", "h"];

/// Borrowed weights of one cell, in `[z, r, h]` gate order.
pub struct GruCellParams<'a, F> {
    pub w: [ArrayView2<'a, F>; 3],
    pub u: [ArrayView2<'a, F>; 3],
    pub b: [ArrayView1<'a, F>; 3],
}

impl<F> GruCellParams<'_, F> {
    fn dims(&self) -> (usize, usize) {
        (self.w[0].nrows(), self.u[0].nrows())
    }

    fn validate(&self) -> Result<()> {
        let (d_in, h) = self.dims();
        for g in 0..3 {
            check_shape("GRU input matrix", self.w[g].shape(), &[d_in, h])?;
            check_shape("GRU recurrent matrix", self.u[g].shape(), &[h, h])?;
            check_shape("GRU bias", self.b[g].shape(), &[h])?;
        }
        Ok(())
    }
}

/// One GRU update for a batch of rows.
pub fn gru_step<F: Real>(p: &GruCellParams<F>, x: ArrayView2<F>, h: ArrayView2<F>) -> Result<Array2<F>> {
    p.validate()?;
    let (d_in, hidden) = p.dims();
    check_shape("GRU step input", &[x.ncols()], &[d_in])?;
    check_shape("GRU step state", h.shape(), &[x.nrows(), hidden])?;
    let z = (affine(x, p.w[0], p.b[0]) + h.dot(&p.u[0])).mapv(sigmoid);
    let r = (affine(x, p.w[1], p.b[1]) + h.dot(&p.u[1])).mapv(sigmoid);
    let rh = &r * &h;
    let c = (affine(x, p.w[2], p.b[2]) + rh.dot(&p.u[2])).mapv(F::tanh);
    Ok(&h + &(&z * &(&c - &h)))
}

/// A GRU layer bound to `<prefix>.{W,U,b}_{z,r,h}`.
#[derive(Clone, Debug)]
pub struct Gru {
    w: [ParamId; 3],
    u: [ParamId; 3],
    b: [ParamId; 3],
    pub d_in: usize,
    pub hidden: usize,
}

/// Everything the reverse pass needs from one forward unroll.
#[derive(Clone, Debug)]
pub struct GruTrace<F> {
    x: Array2<F>,
    /// `(T + 1) x H`; row 0 is the zero initial state.
    h: Array2<F>,
    z: Array2<F>,
    r: Array2<F>,
    c: Array2<F>,
    rh: Array2<F>,
}

impl<F: Real> GruTrace<F> {
    pub fn output(&self) -> ArrayView2<'_, F> {
        self.h.slice(s![1.., ..])
    }

    pub fn update_gates(&self) -> ArrayView2<'_, F> {
        self.z.view()
    }

    pub fn reset_gates(&self) -> ArrayView2<'_, F> {
        self.r.view()
    }
}

impl Gru {
    pub fn param_count(d_in: usize, hidden: usize) -> usize {
        3 * (d_in * hidden + hidden * hidden + hidden)
    }

    pub fn param_specs(prefix: &str, d_in: usize, hidden: usize) -> Vec<ParamSpec> {
        let mut specs = Vec::with_capacity(9);
        for g in GATES {
            specs.push(ParamSpec::matrix(format!("{prefix}.W_{g}"), d_in, hidden));
        }
        for g in GATES {
            specs.push(ParamSpec::matrix(format!("{prefix}.U_{g}"), hidden, hidden));
        }
        for g in GATES {
            specs.push(ParamSpec::bias(format!("{prefix}.b_{g}"), hidden));
        }
        specs
    }

    pub fn bind<F: Real>(tree: &ParamTree<F>, prefix: &str) -> Result<Self> {
        let ids = |m: &str| -> Result<[ParamId; 3]> {
            Ok([
                tree.expect_id(&format!("{prefix}.{m}_z"))?,
                tree.expect_id(&format!("{prefix}.{m}_r"))?,
                tree.expect_id(&format!("{prefix}.{m}_h"))?,
            ])
        };
        let (w, u, b) = (ids("W")?, ids("U")?, ids("b")?);
        let gru = Self {
            w,
            u,
            b,
            d_in: tree.get(w[0]).shape()[0],
            hidden: tree.get(u[0]).shape()[0],
        };
        gru.cell(tree).validate()?;
        Ok(gru)
    }

    pub fn cell<'a, F: Real>(&self, p: &'a ParamTree<F>) -> GruCellParams<'a, F> {
        GruCellParams {
            w: self.w.map(|id| p.mat(id)),
            u: self.u.map(|id| p.mat(id)),
            b: self.b.map(|id| p.vec(id)),
        }
    }

    /// Unrolls over the rows of `x` (`T x d_in`) from a zero state.
    pub fn forward_seq<F: Real>(&self, p: &ParamTree<F>, x: ArrayView2<F>) -> Result<GruTrace<F>> {
        let steps = x.nrows();
        if steps == 0 {
            return Err(Error::EmptySequence("GRU input has no frames"));
        }
        check_shape("GRU input", &[x.ncols()], &[self.d_in])?;
        let hd = self.hidden;
        let pre: Vec<Array2<F>> = (0..3)
            .map(|g| affine(x, p.mat(self.w[g]), p.vec(self.b[g])))
            .collect();
        let (uz, ur, uh) = (p.slice(self.u[0]), p.slice(self.u[1]), p.slice(self.u[2]));

        let mut h = Array2::<F>::zeros((steps + 1, hd));
        let mut z = Array2::<F>::zeros((steps, hd));
        let mut r = Array2::<F>::zeros((steps, hd));
        let mut c = Array2::<F>::zeros((steps, hd));
        let mut rh = Array2::<F>::zeros((steps, hd));
        let (mut az, mut ar, mut ac) = (vec![F::zero(); hd], vec![F::zero(); hd], vec![F::zero(); hd]);
        {
            let hs = h.as_slice_mut().expect("contiguous");
            let (zs, rs, cs, rhs) = (
                z.as_slice_mut().expect("contiguous"),
                r.as_slice_mut().expect("contiguous"),
                c.as_slice_mut().expect("contiguous"),
                rh.as_slice_mut().expect("contiguous"),
            );
            for t in 0..steps {
                let (past, future) = hs.split_at_mut((t + 1) * hd);
                let hp = &past[t * hd..];
                let hn = &mut future[..hd];
                az.copy_from_slice(pre[0].row(t).as_slice().expect("contiguous"));
                ar.copy_from_slice(pre[1].row(t).as_slice().expect("contiguous"));
                ac.copy_from_slice(pre[2].row(t).as_slice().expect("contiguous"));
                vec_mat_acc(&mut az, hp, uz);
                vec_mat_acc(&mut ar, hp, ur);
                let row = t * hd..(t + 1) * hd;
                let (zt, rt, rht) = (&mut zs[row.clone()], &mut rs[row.clone()], &mut rhs[row.clone()]);
                for j in 0..hd {
                    zt[j] = sigmoid(az[j]);
                    rt[j] = sigmoid(ar[j]);
                    rht[j] = rt[j] * hp[j];
                }
                vec_mat_acc(&mut ac, rht, uh);
                let ct = &mut cs[row];
                for j in 0..hd {
                    ct[j] = ac[j].tanh();
                    hn[j] = hp[j] + zt[j] * (ct[j] - hp[j]);
                }
            }
        }
        Ok(GruTrace {
            x: x.to_owned(),
            h,
            z,
            r,
            c,
            rh,
        })
    }

    /// Accumulates parameter gradients for `dL/d output` and returns `dL/dx`.
    pub fn backward_seq<F: Real>(
        &self,
        p: &ParamTree<F>,
        g: &mut ParamTree<F>,
        trace: &GruTrace<F>,
        d_out: ArrayView2<F>,
    ) -> Array2<F> {
        let steps = trace.x.nrows();
        let hd = self.hidden;
        debug_assert_eq!(d_out.shape(), &[steps, hd]);
        let (uz, ur, uh) = (p.slice(self.u[0]), p.slice(self.u[1]), p.slice(self.u[2]));
        let hs = trace.h.as_slice().expect("contiguous");
        let (zs, rs, cs) = (
            trace.z.as_slice().expect("contiguous"),
            trace.r.as_slice().expect("contiguous"),
            trace.c.as_slice().expect("contiguous"),
        );
        let mut daz = Array2::<F>::zeros((steps, hd));
        let mut dar = Array2::<F>::zeros((steps, hd));
        let mut dac = Array2::<F>::zeros((steps, hd));
        let mut dh_next = vec![F::zero(); hd];
        let mut dh = vec![F::zero(); hd];
        let mut drh = vec![F::zero(); hd];
        {
            let (dzs, drs, dcs) = (
                daz.as_slice_mut().expect("contiguous"),
                dar.as_slice_mut().expect("contiguous"),
                dac.as_slice_mut().expect("contiguous"),
            );
            for t in (0..steps).rev() {
                let row = t * hd..(t + 1) * hd;
                let hp = &hs[row.clone()];
                let (zt, rt, ct) = (&zs[row.clone()], &rs[row.clone()], &cs[row.clone()]);
                let d_row = d_out.row(t);
                let (dzt, drt, dct) = (&mut dzs[row.clone()], &mut drs[row.clone()], &mut dcs[row]);
                for j in 0..hd {
                    dh[j] = d_row[j] + dh_next[j];
                    let dz = dh[j] * (ct[j] - hp[j]);
                    dzt[j] = dz * zt[j] * (F::one() - zt[j]);
                    dct[j] = dh[j] * zt[j] * (F::one() - ct[j] * ct[j]);
                    dh_next[j] = dh[j] * (F::one() - zt[j]);
                    drh[j] = F::zero();
                }
                mat_vec_acc(&mut drh, uh, dct);
                for j in 0..hd {
                    drt[j] = drh[j] * hp[j] * rt[j] * (F::one() - rt[j]);
                    dh_next[j] += drh[j] * rt[j];
                }
                mat_vec_acc(&mut dh_next, uz, dzt);
                mat_vec_acc(&mut dh_next, ur, drt);
            }
        }
        let h_prev = trace.h.slice(s![..steps, ..]);
        let deltas = [&daz, &dar, &dac];
        for gate in 0..3 {
            let delta = deltas[gate];
            let mut gw = g.mat_mut(self.w[gate]);
            gw += &trace.x.t().dot(delta);
            let recurrent_in = if gate == 2 { trace.rh.view() } else { h_prev };
            let mut gu = g.mat_mut(self.u[gate]);
            gu += &recurrent_in.t().dot(delta);
            let mut gb = g.vec_mut(self.b[gate]);
            gb += &delta.sum_axis(Axis(0));
        }
        let mut dx = daz.dot(&p.mat(self.w[0]).t());
        dx += &dar.dot(&p.mat(self.w[1]).t());
        dx += &dac.dot(&p.mat(self.w[2]).t());
        dx
    }
}

/// One stack level: a forward GRU and, when bidirectional, a second GRU run
/// over the time-reversed input. Outputs are concatenated `[fwd, bwd]`.
#[derive(Clone, Debug)]
pub struct RnnLayer {
    pub fwd: Gru,
    pub bwd: Option<Gru>,
}

impl RnnLayer {
    pub fn out_dim(&self) -> usize {
        self.fwd.hidden + self.bwd.as_ref().map_or(0, |b| b.hidden)
    }
}

#[derive(Clone, Debug)]
pub struct RnnStack {
    pub layers: Vec<RnnLayer>,
}

#[derive(Clone, Debug)]
pub struct RnnTrace<F> {
    levels: Vec<(GruTrace<F>, Option<GruTrace<F>>)>,
    pub output: Array2<F>,
}

fn reversed<F: Real>(x: ArrayView2<F>) -> Array2<F> {
    x.slice(s![..;-1, ..]).to_owned()
}

impl RnnStack {
    pub fn param_count(d_in: usize, sizes: &[usize], bidirectional: bool) -> usize {
        let dirs = if bidirectional { 2 } else { 1 };
        let mut d = d_in;
        let mut total = 0;
        for &h in sizes {
            total += dirs * Gru::param_count(d, h);
            d = dirs * h;
        }
        total
    }

    pub fn param_specs(prefix: &str, d_in: usize, sizes: &[usize], bidirectional: bool) -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        let mut d = d_in;
        for (l, &h) in sizes.iter().enumerate() {
            specs.extend(Gru::param_specs(&format!("{prefix}.{l}.fwd"), d, h));
            if bidirectional {
                specs.extend(Gru::param_specs(&format!("{prefix}.{l}.bwd"), d, h));
            }
            d = if bidirectional { 2 * h } else { h };
        }
        specs
    }

    pub fn bind<F: Real>(tree: &ParamTree<F>, prefix: &str, depth: usize, bidirectional: bool) -> Result<Self> {
        let layers = (0..depth)
            .map(|l| {
                Ok(RnnLayer {
                    fwd: Gru::bind(tree, &format!("{prefix}.{l}.fwd"))?,
                    bwd: if bidirectional {
                        Some(Gru::bind(tree, &format!("{prefix}.{l}.bwd"))?)
                    } else {
                        None
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers })
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, RnnLayer::out_dim)
    }

    pub fn forward<F: Real>(&self, p: &ParamTree<F>, x: ArrayView2<F>) -> Result<RnnTrace<F>> {
        if x.nrows() == 0 {
            return Err(Error::EmptySequence("RNN input has no frames"));
        }
        let mut levels = Vec::with_capacity(self.layers.len());
        let mut current = x.to_owned();
        for layer in &self.layers {
            let f = layer.fwd.forward_seq(p, current.view())?;
            let (next, b) = match &layer.bwd {
                None => (f.output().to_owned(), None),
                Some(bwd) => {
                    let b = bwd.forward_seq(p, reversed(current.view()).view())?;
                    let back = reversed(b.output());
                    let joined = ndarray::concatenate(Axis(1), &[f.output(), back.view()])
                        .map_err(|e| Error::Dimension(e.to_string()))?;
                    (joined, Some(b))
                }
            };
            levels.push((f, b));
            current = next;
        }
        Ok(RnnTrace {
            levels,
            output: current,
        })
    }

    pub fn backward<F: Real>(
        &self,
        p: &ParamTree<F>,
        g: &mut ParamTree<F>,
        trace: &RnnTrace<F>,
        d_out: ArrayView2<F>,
    ) -> Array2<F> {
        let mut d = d_out.to_owned();
        for (layer, (f, b)) in self.layers.iter().zip(&trace.levels).rev() {
            let hf = layer.fwd.hidden;
            let mut dx = layer.fwd.backward_seq(p, g, f, d.slice(s![.., ..hf]));
            if let (Some(bwd), Some(b)) = (&layer.bwd, b) {
                let d_back = reversed(d.slice(s![.., hf..]));
                let dx_rev = bwd.backward_seq(p, g, b, d_back.view());
                dx += &reversed(dx_rev.view());
            }
            d = dx;
        }
        d
    }
}

/// Runs a stack over a `T x batch x D` tensor; each batch column is an
/// independent sequence starting from a zero state.
pub fn rnn_forward<F: Real>(stack: &RnnStack, p: &ParamTree<F>, x: ArrayView3<F>) -> Result<Array3<F>> {
    let (steps, batch, _) = x.dim();
    if steps == 0 {
        return Err(Error::EmptySequence("RNN input has no frames"));
    }
    let mut out = Array3::zeros((steps, batch, stack.out_dim()));
    for b in 0..batch {
        let y = stack.forward(p, x.slice(s![.., b, ..]))?.output;
        out.slice_mut(s![.., b, ..]).assign(&y);
    }
    Ok(out)
}
