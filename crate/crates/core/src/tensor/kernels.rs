use super::{gemm, Float};

/// Numpy-style broadcast of two equal-rank shapes.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    if a.len() != b.len() {
        return None;
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Some(x),
            (1, _) => Some(y),
            (_, 1) => Some(x),
            _ => None,
        })
        .collect()
}

/// Contiguous strides of `shape`, zeroed on axes broadcast up to `out`.
pub(crate) fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[i] = if shape[i] == 1 && out[i] != 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Visit every element of `out`, yielding `(out_offset, a_offset, b_offset)`.
pub(crate) fn for_each_broadcast(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let rank = out.len();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    let total: usize = out.iter().product();
    if total == 0 {
        return;
    }
    let inner = out[rank - 1];
    let (ia, ib) = (sa[rank - 1], sb[rank - 1]);
    let mut counter = vec![0usize; rank - 1];
    let (mut base_a, mut base_b) = (0usize, 0usize);
    let mut o = 0;
    loop {
        for j in 0..inner {
            f(o + j, base_a + j * ia, base_b + j * ib);
        }
        o += inner;
        if o >= total {
            break;
        }
        // odometer over the outer axes
        let mut axis = rank - 1;
        loop {
            axis -= 1;
            counter[axis] += 1;
            base_a += sa[axis];
            base_b += sb[axis];
            if counter[axis] < out[axis] {
                break;
            }
            base_a -= sa[axis] * out[axis];
            base_b -= sb[axis] * out[axis];
            counter[axis] = 0;
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub t: usize,
    pub v: usize,
    pub co: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub t_out: usize,
}

impl ConvGeom {
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn src_frame(&self, to: usize, k: usize) -> Option<usize> {
        let ti = (to * self.stride + k) as isize - self.pad as isize;
        (ti >= 0 && (ti as usize) < self.t).then_some(ti as usize)
    }
}

fn im2col<F: Float>(x: &[F], g: &ConvGeom, cols: &mut [F]) {
    let (v, tv, row) = (g.v, g.t * g.v, g.t_out * g.v);
    for c in 0..g.c {
        for k in 0..g.k {
            let r = (c * g.k + k) * row;
            for to in 0..g.t_out {
                let dst = &mut cols[r + to * v..r + to * v + v];
                match g.src_frame(to, k) {
                    Some(ti) => dst.copy_from_slice(&x[c * tv + ti * v..c * tv + ti * v + v]),
                    None => dst.fill(F::zero()),
                }
            }
        }
    }
}

fn col2im_add<F: Float>(cols: &[F], g: &ConvGeom, dx: &mut [F]) {
    let (v, tv, row) = (g.v, g.t * g.v, g.t_out * g.v);
    for c in 0..g.c {
        for k in 0..g.k {
            let r = (c * g.k + k) * row;
            for to in 0..g.t_out {
                if let Some(ti) = g.src_frame(to, k) {
                    let src = &cols[r + to * v..r + to * v + v];
                    for (d, &s) in dx[c * tv + ti * v..c * tv + ti * v + v].iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
    }
}

pub(crate) fn temporal_conv_forward<F: Float>(x: &[F], w: &[F], g: &ConvGeom) -> Vec<F> {
    let in_len = g.c * g.t * g.v;
    let out_len = g.co * g.t_out * g.v;
    let ck = g.c * g.k;
    let cols_len = ck * g.t_out * g.v;
    let mut out = vec![F::zero(); g.n * out_len];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![F::zero(); cols_len] };
    for n in 0..g.n {
        let xn = &x[n * in_len..(n + 1) * in_len];
        let b: &[F] = if g.is_pointwise() {
            xn
        } else {
            im2col(xn, g, &mut cols);
            &cols
        };
        gemm(
            g.co,
            ck,
            g.t_out * g.v,
            w,
            false,
            b,
            false,
            &mut out[n * out_len..(n + 1) * out_len],
            false,
        );
    }
    out
}

pub(crate) fn temporal_conv_backward<F: Float>(
    x: &[F],
    w: &[F],
    dout: &[F],
    g: &ConvGeom,
    mut dx: Option<&mut [F]>,
    mut dw: Option<&mut [F]>,
) {
    let in_len = g.c * g.t * g.v;
    let out_len = g.co * g.t_out * g.v;
    let ck = g.c * g.k;
    let cols_len = ck * g.t_out * g.v;
    let pointwise = g.is_pointwise();
    let mut cols = if pointwise { Vec::new() } else { vec![F::zero(); cols_len] };
    let mut dcols = if pointwise || dx.is_none() {
        Vec::new()
    } else {
        vec![F::zero(); cols_len]
    };
    let row = g.t_out * g.v;
    for n in 0..g.n {
        let xn = &x[n * in_len..(n + 1) * in_len];
        let dn = &dout[n * out_len..(n + 1) * out_len];
        if let Some(dw) = dw.as_deref_mut() {
            let b: &[F] = if pointwise {
                xn
            } else {
                im2col(xn, g, &mut cols);
                &cols
            };
            // dW (co x ck) += dout (co x row) * cols^T (row x ck)
            gemm(g.co, row, ck, dn, false, b, true, dw, true);
        }
        if let Some(dx) = dx.as_deref_mut() {
            let dxn = &mut dx[n * in_len..(n + 1) * in_len];
            if pointwise {
                gemm(ck, g.co, row, w, true, dn, false, dxn, true);
            } else {
                gemm(ck, g.co, row, w, true, dn, false, &mut dcols, false);
                col2im_add(&dcols, g, dxn);
            }
        }
    }
}

pub(crate) fn depthwise_forward<F: Float>(x: &[F], w: &[F], g: &ConvGeom) -> Vec<F> {
    let (v, tv, tov) = (g.v, g.t * g.v, g.t_out * g.v);
    let mut out = vec![F::zero(); g.n * g.c * tov];
    for n in 0..g.n {
        for c in 0..g.c {
            let xb = (n * g.c + c) * tv;
            let ob = (n * g.c + c) * tov;
            for k in 0..g.k {
                let wk = w[c * g.k + k];
                for to in 0..g.t_out {
                    if let Some(ti) = g.src_frame(to, k) {
                        let src = &x[xb + ti * v..xb + ti * v + v];
                        for (o, &s) in out[ob + to * v..ob + to * v + v].iter_mut().zip(src) {
                            *o += wk * s;
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn depthwise_backward<F: Float>(
    x: &[F],
    w: &[F],
    dout: &[F],
    g: &ConvGeom,
    mut dx: Option<&mut [F]>,
    mut dw: Option<&mut [F]>,
) {
    let (v, tv, tov) = (g.v, g.t * g.v, g.t_out * g.v);
    for n in 0..g.n {
        for c in 0..g.c {
            let xb = (n * g.c + c) * tv;
            let ob = (n * g.c + c) * tov;
            for k in 0..g.k {
                let wk = w[c * g.k + k];
                let mut acc = F::zero();
                for to in 0..g.t_out {
                    if let Some(ti) = g.src_frame(to, k) {
                        let d = &dout[ob + to * v..ob + to * v + v];
                        if dw.is_some() {
                            let s = &x[xb + ti * v..xb + ti * v + v];
                            acc += d.iter().zip(s).map(|(&a, &b)| a * b).sum::<F>();
                        }
                        if let Some(dx) = dx.as_deref_mut() {
                            for (o, &dd) in dx[xb + ti * v..xb + ti * v + v].iter_mut().zip(d) {
                                *o += wk * dd;
                            }
                        }
                    }
                }
                if let Some(dw) = dw.as_deref_mut() {
                    dw[c * g.k + k] += acc;
                }
            }
        }
    }
}
