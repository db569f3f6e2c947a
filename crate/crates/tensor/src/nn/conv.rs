//! 2-d cross-correlation with stride, zero padding, dilation and groups.

use rayon::prelude::*;

use crate::element::{gemm, Element, MatRef};
use crate::error::{Result, TensorError};
use crate::stats;
use crate::tensor::Tensor;
use crate::var::Var;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
    pub bias: bool,
}

impl Conv2dSpec {
    /// Square `k x k` kernel, stride 1, no padding, bias on.
    pub fn new(in_ch: usize, out_ch: usize, k: usize) -> Self {
        Conv2dSpec {
            in_ch,
            out_ch,
            kernel: (k, k),
            stride: 1,
            padding: 0,
            dilation: 1,
            groups: 1,
            bias: true,
        }
    }

    /// Depthwise `k x k` with "same" padding for the given dilation.
    pub fn depthwise(ch: usize, k: usize, dilation: usize) -> Self {
        Conv2dSpec::new(ch, ch, k)
            .groups(ch)
            .dilation(dilation)
            .padding(dilation * (k - 1) / 2)
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = s;
        self
    }
    pub fn padding(mut self, p: usize) -> Self {
        self.padding = p;
        self
    }
    pub fn dilation(mut self, d: usize) -> Self {
        self.dilation = d;
        self
    }
    pub fn groups(mut self, g: usize) -> Self {
        self.groups = g;
        self
    }
    pub fn bias(mut self, b: bool) -> Self {
        self.bias = b;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.in_ch,
            self.out_ch,
            self.kernel.0,
            self.kernel.1,
            self.stride,
            self.dilation,
            self.groups,
        ];
        if positive.contains(&0) {
            return Err(TensorError::contract("conv2d", format!("all extents must be positive: {self:?}")));
        }
        if !self.in_ch.is_multiple_of(self.groups) || !self.out_ch.is_multiple_of(self.groups) {
            return Err(TensorError::contract(
                "conv2d",
                format!(
                    "channels {}->{} are not divisible by groups {}",
                    self.in_ch, self.out_ch, self.groups
                ),
            ));
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_ch, self.in_ch / self.groups, self.kernel.0, self.kernel.1]
    }

    pub fn weight_numel(&self) -> usize {
        self.weight_shape().iter().product()
    }

    /// Number of learnable scalars (weights and bias).
    pub fn param_count(&self) -> usize {
        self.weight_numel() + if self.bias { self.out_ch } else { 0 }
    }

    /// Extent covered by one kernel application along each axis.
    pub fn receptive_field(&self) -> (usize, usize) {
        (
            self.dilation * (self.kernel.0 - 1) + 1,
            self.dilation * (self.kernel.1 - 1) + 1,
        )
    }

    /// `floor((H + 2p - d(k-1) - 1) / s) + 1` per axis.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (rh, rw) = self.receptive_field();
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        if ph < rh || pw < rw {
            return Err(TensorError::OutputSize {
                op: "conv2d",
                input: vec![h, w],
                window: vec![rh, rw],
                padding: self.padding,
            });
        }
        Ok(((ph - rh) / self.stride + 1, (pw - rw) / self.stride + 1))
    }

    /// Multiply-accumulates x2 for one forward pass, excluding the bias.
    pub fn flops(&self, batch: usize, out_h: usize, out_w: usize) -> u64 {
        2 * (self.out_ch * (self.in_ch / self.groups) * self.kernel.0 * self.kernel.1) as u64
            * (batch * out_h * out_w) as u64
    }

    fn is_depthwise(&self) -> bool {
        self.groups == self.in_ch && self.groups == self.out_ch
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == (1, 1) && self.stride == 1 && self.padding == 0
    }
}

#[derive(Clone, Copy)]
struct Geometry {
    n: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
}

/// Valid output column range `[lo, hi)` for kernel offset `off` (already
/// multiplied by dilation) along an axis of length `len`.
#[inline]
fn valid_range(off: usize, pad: usize, stride: usize, len: usize, out_len: usize) -> (usize, usize) {
    // need 0 <= o*stride + off - pad < len
    let lo = if pad > off { (pad - off).div_ceil(stride) } else { 0 };
    let hi = if len + pad > off {
        ((len + pad - off - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Unfolds one group of one image into `[cig*kh*kw, ho*wo]`.
fn im2col<T: Element>(x: &[T], cig: usize, geo: Geometry, spec: &Conv2dSpec, col: &mut [T]) {
    let (kh, kw) = spec.kernel;
    let (s, p, d) = (spec.stride, spec.padding, spec.dilation);
    let plane = geo.ho * geo.wo;
    for c in 0..cig {
        let src = &x[c * geo.h * geo.w..(c + 1) * geo.h * geo.w];
        for ky in 0..kh {
            let (ylo, yhi) = valid_range(ky * d, p, s, geo.h, geo.ho);
            for kx in 0..kw {
                let (xlo, xhi) = valid_range(kx * d, p, s, geo.w, geo.wo);
                let row = &mut col[((c * kh + ky) * kw + kx) * plane..][..plane];
                row.iter_mut().for_each(|v| *v = T::zero());
                for oy in ylo..yhi {
                    let iy = oy * s + ky * d - p;
                    let src_row = &src[iy * geo.w..(iy + 1) * geo.w];
                    let dst = &mut row[oy * geo.wo..(oy + 1) * geo.wo];
                    if s == 1 {
                        let ix0 = xlo + kx * d - p;
                        dst[xlo..xhi].copy_from_slice(&src_row[ix0..ix0 + (xhi - xlo)]);
                    } else {
                        for ox in xlo..xhi {
                            dst[ox] = src_row[ox * s + kx * d - p];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `[cig*kh*kw, ho*wo]` back onto the image.
fn col2im<T: Element>(col: &[T], cig: usize, geo: Geometry, spec: &Conv2dSpec, x: &mut [T]) {
    let (kh, kw) = spec.kernel;
    let (s, p, d) = (spec.stride, spec.padding, spec.dilation);
    let plane = geo.ho * geo.wo;
    for c in 0..cig {
        let dst = &mut x[c * geo.h * geo.w..(c + 1) * geo.h * geo.w];
        for ky in 0..kh {
            let (ylo, yhi) = valid_range(ky * d, p, s, geo.h, geo.ho);
            for kx in 0..kw {
                let (xlo, xhi) = valid_range(kx * d, p, s, geo.w, geo.wo);
                let row = &col[((c * kh + ky) * kw + kx) * plane..][..plane];
                for oy in ylo..yhi {
                    let iy = oy * s + ky * d - p;
                    let dst_row = &mut dst[iy * geo.w..(iy + 1) * geo.w];
                    let src = &row[oy * geo.wo..(oy + 1) * geo.wo];
                    for ox in xlo..xhi {
                        dst_row[ox * s + kx * d - p] += src[ox];
                    }
                }
            }
        }
    }
}

fn depthwise_plane<T: Element>(x: &[T], wt: &[T], geo: Geometry, spec: &Conv2dSpec, out: &mut [T]) {
    let (kh, kw) = spec.kernel;
    let (s, p, d) = (spec.stride, spec.padding, spec.dilation);
    for ky in 0..kh {
        let (ylo, yhi) = valid_range(ky * d, p, s, geo.h, geo.ho);
        for kx in 0..kw {
            let (xlo, xhi) = valid_range(kx * d, p, s, geo.w, geo.wo);
            let wv = wt[ky * kw + kx];
            for oy in ylo..yhi {
                let iy = oy * s + ky * d - p;
                let src = &x[iy * geo.w..(iy + 1) * geo.w];
                let dst = &mut out[oy * geo.wo..(oy + 1) * geo.wo];
                if s == 1 {
                    let off = kx * d;
                    for ox in xlo..xhi {
                        dst[ox] += wv * src[ox + off - p];
                    }
                } else {
                    for ox in xlo..xhi {
                        dst[ox] += wv * src[ox * s + kx * d - p];
                    }
                }
            }
        }
    }
}

fn forward<T: Element>(x: &[T], wt: &[T], bias: Option<&[T]>, spec: &Conv2dSpec, geo: Geometry) -> Vec<T> {
    let (cin, cout, g) = (spec.in_ch, spec.out_ch, spec.groups);
    let (cig, cog) = (cin / g, cout / g);
    let kk = spec.kernel.0 * spec.kernel.1;
    let (in_plane, out_plane) = (geo.h * geo.w, geo.ho * geo.wo);
    let mut out = vec![T::zero(); geo.n * cout * out_plane];
    out.par_chunks_mut(cout * out_plane).enumerate().for_each(|(ni, o)| {
        let xn = &x[ni * cin * in_plane..(ni + 1) * cin * in_plane];
        if let Some(b) = bias {
            for (c, chunk) in o.chunks_mut(out_plane).enumerate() {
                chunk.iter_mut().for_each(|v| *v = b[c]);
            }
        }
        if spec.is_depthwise() {
            for c in 0..cin {
                depthwise_plane(
                    &xn[c * in_plane..(c + 1) * in_plane],
                    &wt[c * kk..(c + 1) * kk],
                    geo,
                    spec,
                    &mut o[c * out_plane..(c + 1) * out_plane],
                );
            }
            return;
        }
        let mut col = if spec.is_pointwise() { Vec::new() } else { vec![T::zero(); cig * kk * out_plane] };
        for gi in 0..g {
            let xg = &xn[gi * cig * in_plane..(gi + 1) * cig * in_plane];
            let wg = &wt[gi * cog * cig * kk..(gi + 1) * cog * cig * kk];
            let rhs = if spec.is_pointwise() {
                xg
            } else {
                im2col(xg, cig, geo, spec, &mut col);
                &col
            };
            gemm(
                MatRef::new(wg, cog, cig * kk),
                MatRef::new(rhs, cig * kk, out_plane),
                &mut o[gi * cog * out_plane..(gi + 1) * cog * out_plane],
                true,
            );
        }
    });
    out
}

fn backward_input<T: Element>(g: &[T], wt: &[T], spec: &Conv2dSpec, geo: Geometry) -> Vec<T> {
    let (cin, cout, groups) = (spec.in_ch, spec.out_ch, spec.groups);
    let (cig, cog) = (cin / groups, cout / groups);
    let (kh, kw) = spec.kernel;
    let kk = kh * kw;
    let (in_plane, out_plane) = (geo.h * geo.w, geo.ho * geo.wo);
    let mut dx = vec![T::zero(); geo.n * cin * in_plane];
    if spec.is_depthwise() {
        let (s, p, d) = (spec.stride, spec.padding, spec.dilation);
        dx.par_chunks_mut(in_plane).enumerate().for_each(|(idx, dst)| {
            let c = idx % cin;
            let gp = &g[idx * out_plane..(idx + 1) * out_plane];
            for ky in 0..kh {
                let (ylo, yhi) = valid_range(ky * d, p, s, geo.h, geo.ho);
                for kx in 0..kw {
                    let (xlo, xhi) = valid_range(kx * d, p, s, geo.w, geo.wo);
                    let wv = wt[c * kk + ky * kw + kx];
                    for oy in ylo..yhi {
                        let iy = oy * s + ky * d - p;
                        let drow = &mut dst[iy * geo.w..(iy + 1) * geo.w];
                        let grow = &gp[oy * geo.wo..(oy + 1) * geo.wo];
                        for ox in xlo..xhi {
                            drow[ox * s + kx * d - p] += wv * grow[ox];
                        }
                    }
                }
            }
        });
        return dx;
    }
    dx.par_chunks_mut(cin * in_plane).enumerate().for_each(|(ni, dxn)| {
        let gn = &g[ni * cout * out_plane..(ni + 1) * cout * out_plane];
        let mut col = if spec.is_pointwise() { Vec::new() } else { vec![T::zero(); cig * kk * out_plane] };
        for gi in 0..groups {
            let wg = &wt[gi * cog * cig * kk..(gi + 1) * cog * cig * kk];
            let gg = &gn[gi * cog * out_plane..(gi + 1) * cog * out_plane];
            let dxg = &mut dxn[gi * cig * in_plane..(gi + 1) * cig * in_plane];
            if spec.is_pointwise() {
                gemm(MatRef::t(wg, cig, cog), MatRef::new(gg, cog, out_plane), dxg, false);
            } else {
                gemm(MatRef::t(wg, cig * kk, cog), MatRef::new(gg, cog, out_plane), &mut col, false);
                col2im(&col, cig, geo, spec, dxg);
            }
        }
    });
    dx
}

fn backward_weight<T: Element>(g: &[T], x: &[T], spec: &Conv2dSpec, geo: Geometry) -> Vec<T> {
    let (cin, cout, groups) = (spec.in_ch, spec.out_ch, spec.groups);
    let (cig, cog) = (cin / groups, cout / groups);
    let (kh, kw) = spec.kernel;
    let kk = kh * kw;
    let (in_plane, out_plane) = (geo.h * geo.w, geo.ho * geo.wo);
    let wn = spec.weight_numel();
    if spec.is_depthwise() {
        let (s, p, d) = (spec.stride, spec.padding, spec.dilation);
        let mut dw = vec![T::zero(); wn];
        dw.par_chunks_mut(kk).enumerate().for_each(|(c, dwc)| {
            for ni in 0..geo.n {
                let idx = ni * cin + c;
                let xp = &x[idx * in_plane..(idx + 1) * in_plane];
                let gp = &g[idx * out_plane..(idx + 1) * out_plane];
                for ky in 0..kh {
                    let (ylo, yhi) = valid_range(ky * d, p, s, geo.h, geo.ho);
                    for kx in 0..kw {
                        let (xlo, xhi) = valid_range(kx * d, p, s, geo.w, geo.wo);
                        let mut acc = T::zero();
                        for oy in ylo..yhi {
                            let iy = oy * s + ky * d - p;
                            let xrow = &xp[iy * geo.w..(iy + 1) * geo.w];
                            let grow = &gp[oy * geo.wo..(oy + 1) * geo.wo];
                            for ox in xlo..xhi {
                                acc += grow[ox] * xrow[ox * s + kx * d - p];
                            }
                        }
                        dwc[ky * kw + kx] += acc;
                    }
                }
            }
        });
        return dw;
    }
    // Per-sample partials summed in sample order keep the result independent
    // of scheduling.
    let partials: Vec<Vec<T>> = (0..geo.n)
        .into_par_iter()
        .map(|ni| {
            let xn = &x[ni * cin * in_plane..(ni + 1) * cin * in_plane];
            let gn = &g[ni * cout * out_plane..(ni + 1) * cout * out_plane];
            let mut dw = vec![T::zero(); wn];
            let mut col = if spec.is_pointwise() { Vec::new() } else { vec![T::zero(); cig * kk * out_plane] };
            for gi in 0..groups {
                let xg = &xn[gi * cig * in_plane..(gi + 1) * cig * in_plane];
                let gg = &gn[gi * cog * out_plane..(gi + 1) * cog * out_plane];
                let rhs = if spec.is_pointwise() {
                    xg
                } else {
                    im2col(xg, cig, geo, spec, &mut col);
                    &col
                };
                gemm(
                    MatRef::new(gg, cog, out_plane),
                    MatRef::t(rhs, out_plane, cig * kk),
                    &mut dw[gi * cog * cig * kk..(gi + 1) * cog * cig * kk],
                    false,
                );
            }
            dw
        })
        .collect();
    let mut dw = vec![T::zero(); wn];
    for part in partials {
        for (a, b) in dw.iter_mut().zip(part) {
            *a += b;
        }
    }
    dw
}

/// Cross-correlation of `x: [N, Cin, H, W]` with `weight: [Cout, Cin/groups, kh, kw]`.
pub fn conv2d<T: Element>(x: &Var<T>, weight: &Var<T>, bias: Option<&Var<T>>, spec: &Conv2dSpec) -> Result<Var<T>> {
    crate::parallel::init();
    spec.validate()?;
    let xs = x.shape();
    if xs.len() != 4 || xs[1] != spec.in_ch {
        return Err(TensorError::shape("conv2d", &xs, &[0, spec.in_ch, 0, 0]));
    }
    let ws = weight.shape();
    if ws != spec.weight_shape() {
        return Err(TensorError::shape("conv2d weight", &ws, &spec.weight_shape()));
    }
    if let Some(b) = bias {
        if b.shape() != [spec.out_ch] {
            return Err(TensorError::shape("conv2d bias", &b.shape(), &[spec.out_ch]));
        }
    }
    if bias.is_some() != spec.bias {
        return Err(TensorError::contract("conv2d", "bias presence does not match the spec"));
    }
    let (ho, wo) = spec.output_hw(xs[2], xs[3])?;
    let geo = Geometry {
        n: xs[0],
        h: xs[2],
        w: xs[3],
        ho,
        wo,
    };
    let out = {
        let bv = bias.map(|b| b.value());
        forward(x.value().data(), weight.value().data(), bv.as_ref().map(|b| b.data()), spec, geo)
    };
    stats::add_flops(spec.flops(geo.n, ho, wo));
    let value = Tensor::from_parts(out, vec![geo.n, spec.out_ch, ho, wo]);
    let spec = *spec;
    let mut parents = vec![x, weight];
    if let Some(b) = bias {
        parents.push(b);
    }
    Ok(Var::from_op(value, "conv2d", &parents, move |ctx| {
        let g = ctx.grad().data();
        let dx = ctx
            .needs_grad(0)
            .then(|| Tensor::from_parts(backward_input(g, ctx.input(1).data(), &spec, geo), xs.clone()));
        let dw = ctx.needs_grad(1).then(|| {
            Tensor::from_parts(
                backward_weight(g, ctx.input(0).data(), &spec, geo),
                spec.weight_shape().to_vec(),
            )
        });
        let mut grads = vec![dx, dw];
        if spec.bias {
            let db = ctx.needs_grad(2).then(|| {
                let plane = geo.ho * geo.wo;
                let mut db = vec![T::zero(); spec.out_ch];
                for (i, chunk) in g.chunks(plane).enumerate() {
                    db[i % spec.out_ch] += chunk.iter().copied().sum::<T>();
                }
                Tensor::from_parts(db, vec![spec.out_ch])
            });
            grads.push(db);
        }
        Ok(grads)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_size_formula() {
        let spec = Conv2dSpec::depthwise(4, 3, 2);
        assert_eq!(spec.output_hw(7, 7).unwrap(), (7, 7));
        assert_eq!(spec.receptive_field(), (5, 5));
        let s2 = Conv2dSpec::new(3, 8, 3).stride(2).padding(1);
        assert_eq!(s2.output_hw(256, 256).unwrap(), (128, 128));
        let err = Conv2dSpec::new(1, 1, 5).output_hw(3, 3).unwrap_err();
        assert!(err.to_string().contains("[3, 3]") && err.to_string().contains("[5, 5]"), "{err}");
    }

    #[test]
    fn groups_must_divide_channels() {
        assert!(Conv2dSpec::new(6, 4, 3).groups(4).validate().is_err());
        assert!(Conv2dSpec::new(6, 4, 3).groups(2).validate().is_ok());
    }

    #[test]
    fn valid_range_matches_bruteforce() {
        for len in 1..9 {
            for pad in 0..3 {
                for stride in 1..4 {
                    for off in 0..5 {
                        let out_len = 12;
                        let (lo, hi) = valid_range(off, pad, stride, len, out_len);
                        for o in 0..out_len {
                            let pos = (o * stride + off) as isize - pad as isize;
                            let ok = pos >= 0 && pos < len as isize;
                            assert_eq!(ok, o >= lo && o < hi, "len {len} pad {pad} s {stride} off {off} o {o}");
                        }
                    }
                }
            }
        }
    }
}
