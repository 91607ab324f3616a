use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vnas_core::diagnostics::{run_suite, SuiteConfig};
use vnas_core::qnet::NetworkConfig;
use vnas_core::tensor::gradcheck::{check_gradients, GradCheckConfig};
use vnas_core::tensor::{same_padding, Tape, Tensor};

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Direct SAME cross-correlation, one output element at a time.
fn naive_conv(x: &Tensor, w: &Tensor, stride: usize, dilation: usize) -> Tensor {
    let (n, h, wd, cin) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (k, cout) = (w.shape()[0], w.shape()[3]);
    let (oh, ow) = (h.div_ceil(stride), wd.div_ceil(stride));
    let (pt, pl) = (same_padding(h, k, stride, dilation), same_padding(wd, k, stride, dilation));
    let mut out = Tensor::zeros(&[n, oh, ow, cout]);
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for co in 0..cout {
                    let mut acc = 0.0;
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky * dilation) as isize - pt as isize;
                            let ix = (ox * stride + kx * dilation) as isize - pl as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                continue;
                            }
                            for ci in 0..cin {
                                acc += x.get(&[b, iy as usize, ix as usize, ci]) * w.get(&[ky, kx, ci, co]);
                            }
                        }
                    }
                    out.data_mut()[((b * oh + oy) * ow + ox) * cout + co] = acc;
                }
            }
        }
    }
    out
}

#[test]
fn conv_forward_matches_direct_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (size, k, stride, dilation) in [(5, 3, 1, 1), (6, 3, 2, 1), (7, 3, 1, 2), (8, 3, 1, 4), (9, 3, 2, 4), (4, 1, 1, 1), (16, 3, 8, 2)] {
        let x = random(&mut rng, &[2, size, size, 3]);
        let w = random(&mut rng, &[k, k, 3, 2]);
        let mut tape = Tape::no_grad();
        let (xv, wv) = (tape.constant(x.clone()), tape.constant(w.clone()));
        let y = tape.conv2d(xv, wv, stride, dilation).unwrap();
        let want = naive_conv(&x, &w, stride, dilation);
        assert_eq!(tape.shape(y), want.shape());
        assert!(tape.value(y).max_abs_diff(&want) < 1e-12, "size {size} stride {stride} dilation {dilation}");
    }
}

#[test]
fn even_padding_puts_the_extra_row_at_the_end() {
    assert_eq!(same_padding(6, 3, 2, 1), 0);
    assert_eq!(same_padding(5, 3, 1, 1), 1);
    assert_eq!(same_padding(8, 3, 1, 4), 4);
}

#[test]
fn matmul_gradient_is_tight() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let inputs = [random(&mut rng, &[4, 6]), random(&mut rng, &[6, 3])];
    let r = random(&mut rng, &[4, 3]);
    let report = check_gradients(
        &inputs,
        |t, v| {
            let y = t.matmul(v[0], v[1])?;
            let c = t.constant(r.clone());
            let m = t.mul(y, c)?;
            t.sum(m)
        },
        &GradCheckConfig::default(),
    )
    .unwrap();
    assert!(report.max_rel_err() < 1e-6, "{report:?}");
}

#[test]
fn dilated_conv_gradient_through_relu_skips_only_kinks() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let inputs = [random(&mut rng, &[1, 8, 8, 2]), random(&mut rng, &[3, 3, 2, 3])];
    let report = check_gradients(
        &inputs,
        |t, v| {
            let y = t.conv2d(v[0], v[1], 1, 2)?;
            let z = t.relu(y)?;
            let s = t.mul(z, z)?;
            t.sum(s)
        },
        &GradCheckConfig::default(),
    )
    .unwrap();
    assert!(report.max_rel_err() < 1e-4, "{report:?}");
    assert!(report.checked() > 100);
}

#[test]
fn full_suite_passes_on_default_network() {
    let report = run_suite(&NetworkConfig::default(), &SuiteConfig::default()).unwrap();
    assert!(report.passed(), "failures: {:?}", report.failures());
    assert!(report.cases.iter().any(|c| c.name.ends_with("mix_logits")));
    assert!(report.cases.iter().any(|c| c.name.ends_with("edge_logits")));
}
