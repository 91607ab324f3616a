//! Raw numeric kernels shared by the tape's forward and backward passes.

/// `c = op(a) · op(b)` for row-major buffers, where `op` optionally
/// transposes. `a` is `m×k` after `op`, `b` is `k×n` after `op`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.fill(0.0);
        }
        return;
    }
    if m * k * n <= SMALL_GEMM {
        small_gemm(m, k, n, a, trans_a, b, trans_b, c, accumulate);
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slices hold exactly m*k, k*n and m*n elements (asserted
    // above) and the strides describe row-major layouts of those extents.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

// Below this many multiply-adds the packing overhead of dgemm dominates.
const SMALL_GEMM: usize = 8192;

#[allow(clippy::too_many_arguments)]
fn small_gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    if !accumulate {
        c.fill(0.0);
    }
    for i in 0..m {
        let row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let x = if trans_a { a[p * m + i] } else { a[i * k + p] };
            if trans_b {
                for (j, slot) in row.iter_mut().enumerate() {
                    *slot += x * b[j * k + p];
                }
            } else {
                for (slot, &y) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                    *slot += x * y;
                }
            }
        }
    }
}

/// Output extent of a SAME-padded convolution.
pub fn conv_output_size(input: usize, stride: usize) -> usize {
    input.div_ceil(stride)
}

/// Leading padding for a SAME convolution (TensorFlow convention: any odd
/// remainder goes to the trailing side).
pub fn same_padding(input: usize, kernel: usize, stride: usize, dilation: usize) -> usize {
    let out = conv_output_size(input, stride);
    let span = (kernel - 1) * dilation + 1;
    let needed = ((out - 1) * stride + span).saturating_sub(input);
    needed / 2
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub out_height: usize,
    pub out_width: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeometry {
    pub fn new(
        input: &[usize],
        kernel: usize,
        out_channels: usize,
        stride: usize,
        dilation: usize,
    ) -> Self {
        let (batch, height, width, in_channels) = (input[0], input[1], input[2], input[3]);
        Self {
            batch,
            height,
            width,
            in_channels,
            out_channels,
            kernel,
            stride,
            dilation,
            out_height: conv_output_size(height, stride),
            out_width: conv_output_size(width, stride),
            pad_top: same_padding(height, kernel, stride, dilation),
            pad_left: same_padding(width, kernel, stride, dilation),
        }
    }

    pub fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.in_channels
    }

    pub fn rows(&self) -> usize {
        self.batch * self.out_height * self.out_width
    }

    /// Input coordinate of tap `k` for output coordinate `o`, if in bounds.
    #[inline]
    fn source(&self, o: usize, k: usize, pad: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + k * self.dilation) as isize - pad as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }
}

/// Unfolds NHWC input into a `rows × (k·k·C_in)` patch matrix.
pub(crate) fn im2col(x: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let patch = g.patch_len();
    let cin = g.in_channels;
    let mut cols = vec![0.0; g.rows() * patch];
    let mut row = 0;
    for n in 0..g.batch {
        let image = &x[n * g.height * g.width * cin..(n + 1) * g.height * g.width * cin];
        for oy in 0..g.out_height {
            for ox in 0..g.out_width {
                let dst = &mut cols[row * patch..(row + 1) * patch];
                for ky in 0..g.kernel {
                    let Some(iy) = g.source(oy, ky, g.pad_top, g.height) else {
                        continue;
                    };
                    for kx in 0..g.kernel {
                        let Some(ix) = g.source(ox, kx, g.pad_left, g.width) else {
                            continue;
                        };
                        let src = (iy * g.width + ix) * cin;
                        let off = (ky * g.kernel + kx) * cin;
                        dst[off..off + cin].copy_from_slice(&image[src..src + cin]);
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input.
pub(crate) fn col2im(cols: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let patch = g.patch_len();
    let cin = g.in_channels;
    let mut dx = vec![0.0; g.batch * g.height * g.width * cin];
    let mut row = 0;
    for n in 0..g.batch {
        let base = n * g.height * g.width * cin;
        for oy in 0..g.out_height {
            for ox in 0..g.out_width {
                let src_row = &cols[row * patch..(row + 1) * patch];
                for ky in 0..g.kernel {
                    let Some(iy) = g.source(oy, ky, g.pad_top, g.height) else {
                        continue;
                    };
                    for kx in 0..g.kernel {
                        let Some(ix) = g.source(ox, kx, g.pad_left, g.width) else {
                            continue;
                        };
                        let dst = base + (iy * g.width + ix) * cin;
                        let off = (ky * g.kernel + kx) * cin;
                        for c in 0..cin {
                            dx[dst + c] += src_row[off + c];
                        }
                    }
                }
                row += 1;
            }
        }
    }
    dx
}

/// Non-overlapping `p×p` average pooling over NHWC input.
pub(crate) fn avg_pool(x: &[f64], shape: &[usize], p: usize) -> Vec<f64> {
    let (n, h, w, c) = (shape[0], shape[1], shape[2], shape[3]);
    let (oh, ow) = (h / p, w / p);
    let scale = 1.0 / (p * p) as f64;
    let mut out = vec![0.0; n * oh * ow * c];
    for b in 0..n {
        for y in 0..h {
            for xx in 0..w {
                let src = ((b * h + y) * w + xx) * c;
                let dst = ((b * oh + y / p) * ow + xx / p) * c;
                for ch in 0..c {
                    out[dst + ch] += x[src + ch] * scale;
                }
            }
        }
    }
    out
}

pub(crate) fn avg_pool_backward(dy: &[f64], shape: &[usize], p: usize) -> Vec<f64> {
    let (n, h, w, c) = (shape[0], shape[1], shape[2], shape[3]);
    let (oh, ow) = (h / p, w / p);
    let scale = 1.0 / (p * p) as f64;
    let mut dx = vec![0.0; n * h * w * c];
    for b in 0..n {
        for y in 0..h {
            for xx in 0..w {
                let dst = ((b * h + y) * w + xx) * c;
                let src = ((b * oh + y / p) * ow + xx / p) * c;
                for ch in 0..c {
                    dx[dst + ch] = dy[src + ch] * scale;
                }
            }
        }
    }
    dx
}
