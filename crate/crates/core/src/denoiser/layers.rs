//! Dense and strided-convolution kernels with explicit backward passes.
//!
//! Tensors are flat `f64` slices. Dense weights are `[out][in]`, conv
//! weights `[out][in][3][3]`, feature maps `[channel][row][col]`.

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

#[inline]
pub fn silu_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

pub fn dense_forward(x: &[f64], w: &[f64], b: &[f64], out: &mut [f64]) {
    let n_in = x.len();
    debug_assert_eq!(w.len(), n_in * out.len());
    for (o, y) in out.iter_mut().enumerate() {
        let row = &w[o * n_in..(o + 1) * n_in];
        *y = b[o] + row.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>();
    }
}

/// Accumulates `dW += dy ⊗ x`, `db += dy` and, when asked, writes `dx = Wᵀ dy`.
pub fn dense_backward(x: &[f64], w: &[f64], dy: &[f64], dw: &mut [f64], db: &mut [f64], dx: Option<&mut [f64]>) {
    let n_in = x.len();
    for (o, &g) in dy.iter().enumerate() {
        db[o] += g;
        if g == 0.0 {
            continue;
        }
        let row = &mut dw[o * n_in..(o + 1) * n_in];
        for (r, xi) in row.iter_mut().zip(x) {
            *r += g * xi;
        }
    }
    if let Some(dx) = dx {
        dx.iter_mut().for_each(|v| *v = 0.0);
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = &w[o * n_in..(o + 1) * n_in];
            for (d, wi) in dx.iter_mut().zip(row) {
                *d += g * wi;
            }
        }
    }
}

/// Shape of a 3×3, stride-2, zero-padded convolution.
#[derive(Debug, Clone, Copy)]
pub struct ConvShape {
    pub c_in: usize,
    pub c_out: usize,
    pub size_in: usize,
}

impl ConvShape {
    pub fn size_out(&self) -> usize {
        self.size_in / 2
    }

    pub fn weight_len(&self) -> usize {
        self.c_out * self.c_in * 9
    }

    pub fn out_len(&self) -> usize {
        self.c_out * self.size_out() * self.size_out()
    }
}

#[inline]
fn tap(o: usize, k: usize, n: usize) -> Option<usize> {
    let p = (2 * o + k) as isize - 1;
    (p >= 0 && (p as usize) < n).then_some(p as usize)
}

pub fn conv_forward(shape: ConvShape, input: &[f64], w: &[f64], b: &[f64], out: &mut [f64]) {
    let n = shape.size_in;
    let m = shape.size_out();
    for co in 0..shape.c_out {
        for oy in 0..m {
            for ox in 0..m {
                let mut acc = b[co];
                for ci in 0..shape.c_in {
                    let wbase = (co * shape.c_in + ci) * 9;
                    let ibase = ci * n * n;
                    for ky in 0..3 {
                        let Some(iy) = tap(oy, ky, n) else { continue };
                        for kx in 0..3 {
                            let Some(ix) = tap(ox, kx, n) else { continue };
                            acc += w[wbase + ky * 3 + kx] * input[ibase + iy * n + ix];
                        }
                    }
                }
                out[(co * m + oy) * m + ox] = acc;
            }
        }
    }
}

pub fn conv_backward(
    shape: ConvShape,
    input: &[f64],
    w: &[f64],
    dout: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    mut dinput: Option<&mut [f64]>,
) {
    let n = shape.size_in;
    let m = shape.size_out();
    if let Some(di) = dinput.as_deref_mut() {
        di.iter_mut().for_each(|v| *v = 0.0);
    }
    for co in 0..shape.c_out {
        for oy in 0..m {
            for ox in 0..m {
                let g = dout[(co * m + oy) * m + ox];
                db[co] += g;
                if g == 0.0 {
                    continue;
                }
                for ci in 0..shape.c_in {
                    let wbase = (co * shape.c_in + ci) * 9;
                    let ibase = ci * n * n;
                    for ky in 0..3 {
                        let Some(iy) = tap(oy, ky, n) else { continue };
                        for kx in 0..3 {
                            let Some(ix) = tap(ox, kx, n) else { continue };
                            let idx = ibase + iy * n + ix;
                            dw[wbase + ky * 3 + kx] += g * input[idx];
                            if let Some(di) = dinput.as_deref_mut() {
                                di[idx] += g * w[wbase + ky * 3 + kx];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silu_grad_matches_finite_difference() {
        for z in [-4.0, -0.3, 0.0, 0.7, 5.0] {
            let h = 1e-6;
            let fd = (silu(z + h) - silu(z - h)) / (2.0 * h);
            assert!((silu_grad(z) - fd).abs() < 1e-8);
        }
    }

    #[test]
    fn conv_of_delta_reads_one_weight() {
        let shape = ConvShape {
            c_in: 1,
            c_out: 1,
            size_in: 4,
        };
        let mut input = vec![0.0; 16];
        input[1 * 4 + 2] = 1.0; // row 1, col 2
        let w: Vec<f64> = (0..9).map(|k| k as f64).collect();
        let mut out = vec![0.0; 4];
        conv_forward(shape, &input, &w, &[0.5], &mut out);
        // output (0,1) sees rows -1..=1, cols 1..=3: tap (ky=2, kx=1)
        assert_eq!(out, vec![0.5, 0.5 + 7.0, 0.5, 0.5 + 1.0]);
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let shape = ConvShape {
            c_in: 2,
            c_out: 3,
            size_in: 6,
        };
        let input: Vec<f64> = (0..72).map(|k| ((k * 37 % 11) as f64 - 5.0) / 7.0).collect();
        let w: Vec<f64> = (0..54).map(|k| ((k * 13 % 7) as f64 - 3.0) / 5.0).collect();
        let b = vec![0.1, -0.2, 0.3];
        let weights_out: Vec<f64> = (0..27).map(|k| (k as f64 * 0.37).sin()).collect();
        let loss = |inp: &[f64], w: &[f64]| {
            let mut out = vec![0.0; 27];
            conv_forward(shape, inp, w, &b, &mut out);
            out.iter().zip(&weights_out).map(|(o, c)| o * c).sum::<f64>()
        };
        let mut dw = vec![0.0; 54];
        let mut db = vec![0.0; 3];
        let mut di = vec![0.0; 72];
        conv_backward(shape, &input, &w, &weights_out, &mut dw, &mut db, Some(&mut di));
        let h = 1e-6;
        for k in 0..54 {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[k] += h;
            wm[k] -= h;
            let fd = (loss(&input, &wp) - loss(&input, &wm)) / (2.0 * h);
            assert!((fd - dw[k]).abs() < 1e-7, "w[{k}]");
        }
        for k in 0..72 {
            let mut ip = input.clone();
            let mut im = input.clone();
            ip[k] += h;
            im[k] -= h;
            let fd = (loss(&ip, &w) - loss(&im, &w)) / (2.0 * h);
            assert!((fd - di[k]).abs() < 1e-7, "x[{k}]");
        }
    }
}
