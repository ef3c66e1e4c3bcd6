//! 2-D convolution: an im2col/GEMM path for dense and grouped kernels, a
//! direct path for depthwise kernels, and the literal nested-loop oracle.

use crate::error::{shape_err, Error, Result};
use crate::ops::gemm;
use crate::tensor::{ConvParams, Scalar, Tensor};

/// Gradients of a convolution with respect to its three inputs.
#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Option<Vec<T>>,
}

struct Geometry {
    n: usize,
    in_c: usize,
    h: usize,
    w: usize,
    out_c: usize,
    oh: usize,
    ow: usize,
    cin_g: usize,
    cout_g: usize,
}

impl Geometry {
    fn depthwise(&self) -> bool {
        self.cin_g == 1 && self.cout_g == 1
    }
}

fn geometry<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&[T]>,
    p: &ConvParams,
) -> Result<Geometry> {
    let [n, in_c, h, w] = input.dims();
    if n == 0 || in_c == 0 || h == 0 || w == 0 {
        return Err(shape_err!("conv input has an empty dimension: {:?}", input.dims()));
    }
    let out_c = weight.n();
    if p.groups == 0 || in_c % p.groups != 0 || out_c % p.groups != 0 {
        return Err(Error::InvalidArgument(format!(
            "groups {} must divide in channels {in_c} and out channels {out_c}",
            p.groups
        )));
    }
    let expected = [out_c, in_c / p.groups, p.kernel.0, p.kernel.1];
    if weight.dims() != expected || out_c == 0 {
        return Err(shape_err!(
            "conv weight dims {:?}, expected {expected:?}",
            weight.dims()
        ));
    }
    if let Some(b) = bias {
        if b.len() != out_c {
            return Err(shape_err!("bias length {} for {out_c} output channels", b.len()));
        }
    }
    let (oh, ow) = p.output_hw(h, w)?;
    Ok(Geometry {
        n,
        in_c,
        h,
        w,
        out_c,
        oh,
        ow,
        cin_g: in_c / p.groups,
        cout_g: out_c / p.groups,
    })
}

/// Output columns `ox` for which `ox * stride + offset` lands in `0..len`.
#[inline]
fn valid_range(out_len: usize, stride: usize, offset: isize, len: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset >= 0 { 0 } else { ((-offset) + s - 1) / s };
    let hi = (len as isize - offset + s - 1) / s;
    let lo = lo.clamp(0, out_len as isize) as usize;
    let hi = hi.clamp(0, out_len as isize) as usize;
    (lo, hi.max(lo))
}

/// Fills `cols` (rows `cin * kh * kw`, columns `oh * ow`) from channels
/// `c0..c0 + cin` of `src` (one sample, `h * w` planes).
fn im2col<T: Scalar>(src: &[T], c0: usize, cin: usize, g: &Geometry, p: &ConvParams, cols: &mut [T]) {
    let (kh, kw) = p.kernel;
    let (sh, sw) = p.stride;
    let (dh, dw) = p.dilation;
    let (ph, pw) = p.padding;
    let ohw = g.oh * g.ow;
    for ci in 0..cin {
        let plane = &src[(c0 + ci) * g.h * g.w..(c0 + ci + 1) * g.h * g.w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &mut cols[((ci * kh + ky) * kw + kx) * ohw..][..ohw];
                let xoff = (kx * dw) as isize - pw as isize;
                let (xlo, xhi) = valid_range(g.ow, sw, xoff, g.w);
                for oy in 0..g.oh {
                    let out_row = &mut row[oy * g.ow..(oy + 1) * g.ow];
                    let iy = (oy * sh + ky * dh) as isize - ph as isize;
                    if iy < 0 || iy >= g.h as isize {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let in_row = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    out_row[..xlo].fill(T::zero());
                    out_row[xhi..].fill(T::zero());
                    for ox in xlo..xhi {
                        out_row[ox] = in_row[(ox as isize * sw as isize + xoff) as usize];
                    }
                }
            }
        }
    }
}

/// Scatter-adds `cols` back into channels `c0..c0 + cin` of `dst`.
fn col2im<T: Scalar>(cols: &[T], c0: usize, cin: usize, g: &Geometry, p: &ConvParams, dst: &mut [T]) {
    let (kh, kw) = p.kernel;
    let (sh, sw) = p.stride;
    let (dh, dw) = p.dilation;
    let (ph, pw) = p.padding;
    let ohw = g.oh * g.ow;
    for ci in 0..cin {
        let plane = &mut dst[(c0 + ci) * g.h * g.w..(c0 + ci + 1) * g.h * g.w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &cols[((ci * kh + ky) * kw + kx) * ohw..][..ohw];
                let xoff = (kx * dw) as isize - pw as isize;
                let (xlo, xhi) = valid_range(g.ow, sw, xoff, g.w);
                for oy in 0..g.oh {
                    let iy = (oy * sh + ky * dh) as isize - ph as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let in_row = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in xlo..xhi {
                        in_row[(ox as isize * sw as isize + xoff) as usize] += row[oy * g.ow + ox];
                    }
                }
            }
        }
    }
}

/// Visits every `(input index, output index)` pair of one depthwise tap.
#[inline]
fn depthwise_tap<F: FnMut(usize, usize)>(g: &Geometry, p: &ConvParams, ky: usize, kx: usize, mut f: F) {
    let (sh, sw) = p.stride;
    let xoff = (kx * p.dilation.1) as isize - p.padding.1 as isize;
    let (xlo, xhi) = valid_range(g.ow, sw, xoff, g.w);
    for oy in 0..g.oh {
        let iy = (oy * sh + ky * p.dilation.0) as isize - p.padding.0 as isize;
        if iy < 0 || iy >= g.h as isize {
            continue;
        }
        let in_base = iy as usize * g.w;
        for ox in xlo..xhi {
            f(in_base + (ox as isize * sw as isize + xoff) as usize, oy * g.ow + ox);
        }
    }
}

/// Convolution of `input (n, c_in, h, w)` with `weight (c_out, c_in / groups, kh, kw)`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&[T]>,
    p: &ConvParams,
) -> Result<Tensor<T>> {
    let g = geometry(input, weight, bias, p)?;
    let (kh, kw) = p.kernel;
    let ohw = g.oh * g.ow;
    let mut out = Tensor::zeros([g.n, g.out_c, g.oh, g.ow]);
    let pointwise = kh == 1 && kw == 1 && p.stride == (1, 1) && p.padding == (0, 0);
    let k = g.cin_g * kh * kw;
    let mut cols = if g.depthwise() || pointwise {
        Vec::new()
    } else {
        vec![T::zero(); k * ohw]
    };

    for b in 0..g.n {
        let src = input.sample(b);
        for grp in 0..p.groups {
            let c0 = grp * g.cin_g;
            let o0 = grp * g.cout_g;
            if g.depthwise() {
                let wts = &weight.data()[grp * kh * kw..(grp + 1) * kh * kw];
                let in_plane = &src[c0 * g.h * g.w..(c0 + 1) * g.h * g.w];
                let dst = out.plane_mut(b, o0);
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = wts[ky * kw + kx];
                        depthwise_tap(&g, p, ky, kx, |i, o| dst[o] += wv * in_plane[i]);
                    }
                }
            } else {
                let wts = &weight.data()[o0 * k..(o0 + g.cout_g) * k];
                let dst_start = out.offset(b, o0, 0, 0);
                let dst = &mut out.data_mut()[dst_start..dst_start + g.cout_g * ohw];
                let b_mat: &[T] = if pointwise {
                    &src[c0 * ohw..(c0 + g.cin_g) * ohw]
                } else {
                    im2col(src, c0, g.cin_g, &g, p, &mut cols);
                    &cols
                };
                gemm(g.cout_g, k, ohw, wts, false, b_mat, false, dst, T::zero());
            }
        }
        if let Some(bias) = bias {
            for (o, &bv) in bias.iter().enumerate() {
                for v in out.plane_mut(b, o) {
                    *v += bv;
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d`] given the upstream gradient `grad_out`.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    with_bias: bool,
    p: &ConvParams,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let g = geometry(input, weight, None, p)?;
    if grad_out.dims() != [g.n, g.out_c, g.oh, g.ow] {
        return Err(shape_err!(
            "conv grad_out dims {:?}, expected {:?}",
            grad_out.dims(),
            [g.n, g.out_c, g.oh, g.ow]
        ));
    }
    let (kh, kw) = p.kernel;
    let ohw = g.oh * g.ow;
    let k = g.cin_g * kh * kw;
    let mut gin = Tensor::zeros(input.dims());
    let mut gw = Tensor::zeros(weight.dims());
    let mut cols = vec![T::zero(); if g.depthwise() { 0 } else { k * ohw }];
    let mut dcols = cols.clone();
    let chw = g.in_c * g.h * g.w;

    for b in 0..g.n {
        let src = input.sample(b);
        for grp in 0..p.groups {
            let c0 = grp * g.cin_g;
            let o0 = grp * g.cout_g;
            let dy_start = grp_offset(grad_out, b, o0);
            let dy = &grad_out.data()[dy_start..dy_start + g.cout_g * ohw];
            if g.depthwise() {
                let in_plane = &src[c0 * g.h * g.w..(c0 + 1) * g.h * g.w];
                let gin_plane = gin.plane_mut(b, c0);
                let wts = &weight.data()[grp * kh * kw..(grp + 1) * kh * kw];
                let gws = &mut gw.data_mut()[grp * kh * kw..(grp + 1) * kh * kw];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = wts[ky * kw + kx];
                        let mut acc = T::zero();
                        depthwise_tap(&g, p, ky, kx, |i, o| {
                            acc += dy[o] * in_plane[i];
                            gin_plane[i] += wv * dy[o];
                        });
                        gws[ky * kw + kx] += acc;
                    }
                }
            } else {
                im2col(src, c0, g.cin_g, &g, p, &mut cols);
                let gws = &mut gw.data_mut()[o0 * k..(o0 + g.cout_g) * k];
                gemm(g.cout_g, ohw, k, dy, false, &cols, true, gws, T::one());
                let wts = &weight.data()[o0 * k..(o0 + g.cout_g) * k];
                gemm(k, g.cout_g, ohw, wts, true, dy, false, &mut dcols, T::zero());
                let dst = &mut gin.data_mut()[b * chw..(b + 1) * chw];
                col2im(&dcols, c0, g.cin_g, &g, p, dst);
            }
        }
    }

    let gb = with_bias.then(|| {
        (0..g.out_c)
            .map(|o| {
                (0..g.n)
                    .flat_map(|b| grad_out.plane(b, o).iter().copied())
                    .sum()
            })
            .collect()
    });
    Ok(ConvGrads {
        input: gin,
        weight: gw,
        bias: gb,
    })
}

fn grp_offset<T: Scalar>(t: &Tensor<T>, b: usize, c: usize) -> usize {
    t.offset(b, c, 0, 0)
}

/// Direct-definition convolution: literal nested loops with `f64`
/// accumulation. Equivalence oracle for [`conv2d`].
pub fn conv2d_naive<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&[T]>,
    p: &ConvParams,
) -> Result<Tensor<T>> {
    let g = geometry(input, weight, bias, p)?;
    let (kh, kw) = p.kernel;
    let mut out = Tensor::zeros([g.n, g.out_c, g.oh, g.ow]);
    for b in 0..g.n {
        for o in 0..g.out_c {
            let grp = o / g.cout_g;
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let mut acc = bias.map_or(0.0, |bv| bv[o].to_f64().unwrap());
                    for ci in 0..g.cin_g {
                        let c = grp * g.cin_g + ci;
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * p.stride.0 + ky * p.dilation.0) as isize - p.padding.0 as isize;
                                let ix = (ox * p.stride.1 + kx * p.dilation.1) as isize - p.padding.1 as isize;
                                if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                    continue;
                                }
                                let x = input.at(b, c, iy as usize, ix as usize).to_f64().unwrap();
                                let wv = weight.at(o, ci, ky, kx).to_f64().unwrap();
                                acc += x * wv;
                            }
                        }
                    }
                    let off = out.offset(b, o, oy, ox);
                    out.data_mut()[off] = T::of(acc);
                }
            }
        }
    }
    Ok(out)
}
