use super::gradcheck::assert_gradients;
use super::{no_grad, Tensor};
use crate::error::Error;
use crate::rng::Rng;

fn rand_tensor(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

#[test]
fn matmul_identity() {
    let i = Tensor::<f64>::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let b = Tensor::<f64>::from_vec(&[2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap();
    let c = i.matmul(&b).unwrap();
    assert_eq!(c.to_vec(), vec![3.0, 4.0, 5.0, 6.0]);
}

#[test]
fn matmul_hand_value() {
    let a = Tensor::<f64>::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
    let b = Tensor::<f64>::from_vec(&[2, 1], vec![3.0, 4.0]).unwrap();
    let c = a.matmul(&b).unwrap();
    assert_eq!(c.shape(), &[1, 1]);
    assert_eq!(c.item(), 11.0);
}

#[test]
fn matmul_shape_mismatch_names_both_shapes() {
    let a = Tensor::<f64>::zeros(&[2, 3]);
    let b = Tensor::<f64>::zeros(&[4, 2]);
    let err = a.matmul(&b).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, Error::ShapeMismatch { .. }));
    assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
}

#[test]
fn matmul_grad_of_sum_is_ones_times_bt() {
    let mut rng = Rng::new(42);
    let a = rand_tensor(&[3, 4], &mut rng).requires_grad();
    let b = rand_tensor(&[4, 2], &mut rng).requires_grad();

    let loss = a.matmul(&b).unwrap().sum().unwrap();
    loss.backward().unwrap();
    let ga = a.grad().unwrap();
    // d sum(AB) / dA = ones(3, 2) x B^T: row i of grad = column sums of B^T rows
    let bd = b.to_vec();
    for i in 0..3 {
        for j in 0..4 {
            let expected: f64 = (0..2).map(|k| bd[j * 2 + k]).sum();
            assert!((ga[i * 4 + j] - expected).abs() < 1e-12);
        }
    }

    assert_gradients("matmul", &[a.clone(), b.clone()], 1e-4, || {
        a.matmul(&b)?.sum()
    });
}

#[test]
fn conv2d_ones_sum() {
    let x = Tensor::<f64>::full(&[1, 1, 3, 3], 1.0);
    let k = Tensor::<f64>::full(&[1, 1, 3, 3], 1.0);
    let y = x.conv2d(&k, 1).unwrap();
    assert_eq!(y.shape(), &[1, 1, 1, 1]);
    assert_eq!(y.item(), 9.0);
}

#[test]
fn conv2d_impulse_reproduces_kernel() {
    // delta at the center: output window equals the kernel (cross-correlation,
    // no flip)
    let mut x = vec![0.0; 5 * 5];
    x[2 * 5 + 2] = 1.0;
    let x = Tensor::<f64>::from_vec(&[1, 1, 5, 5], x).unwrap();
    let kdata: Vec<f64> = (1..=9).map(|v| v as f64).collect();
    let k = Tensor::<f64>::from_vec(&[1, 1, 3, 3], kdata.clone()).unwrap();
    let y = x.conv2d(&k, 1).unwrap();
    assert_eq!(y.shape(), &[1, 1, 3, 3]);
    // sliding the kernel over a centered impulse flips the kernel; for
    // cross-correlation output[i][j] = kernel[2-i][2-j]
    let out = y.to_vec();
    for i in 0..3 {
        for j in 0..3 {
            assert_eq!(out[i * 3 + j], kdata[(2 - i) * 3 + (2 - j)]);
        }
    }
}

#[test]
fn conv2d_kernel_larger_than_input() {
    let x = Tensor::<f64>::zeros(&[1, 1, 3, 3]);
    let k = Tensor::<f64>::zeros(&[1, 1, 5, 5]);
    let err = x.conv2d(&k, 1).unwrap_err();
    assert!(err.to_string().contains("larger than input"), "{err}");
}

#[test]
fn conv2d_stride_output_shape() {
    let x = Tensor::<f64>::zeros(&[1, 1, 8, 8]);
    let k = Tensor::<f64>::zeros(&[2, 1, 3, 3]);
    let y = x.conv2d(&k, 2).unwrap();
    assert_eq!(y.shape(), &[1, 2, 3, 3]);
}

#[test]
fn conv2d_gradient_matches_finite_differences() {
    let mut rng = Rng::new(7);
    let x = rand_tensor(&[2, 3, 8, 8], &mut rng).requires_grad();
    let k = rand_tensor(&[4, 3, 3, 3], &mut rng).requires_grad();
    assert_gradients("conv2d", &[x.clone(), k.clone()], 1e-4, || {
        x.conv2d(&k, 1)?.mean()
    });
    // strided variant
    assert_gradients("conv2d s2", &[x.clone(), k.clone()], 1e-4, || {
        x.conv2d(&k, 2)?.mean()
    });
}

#[test]
fn max_pool_forward_and_gradient() {
    let x = Tensor::<f64>::from_vec(
        &[1, 1, 4, 4],
        vec![
            1.0, 2.0, 5.0, 4.0, //
            3.0, 0.0, 1.0, 1.0, //
            0.0, 1.0, 2.0, 2.0, //
            4.0, 1.0, 0.0, 3.0,
        ],
    )
    .unwrap();
    let y = x.max_pool2d(2, 2).unwrap();
    assert_eq!(y.to_vec(), vec![3.0, 5.0, 4.0, 3.0]);

    let mut rng = Rng::new(9);
    let x = rand_tensor(&[2, 2, 6, 6], &mut rng).requires_grad();
    assert_gradients("max_pool2d", &[x.clone()], 1e-4, || {
        x.max_pool2d(2, 2)?.mean()
    });
}

#[test]
fn log_softmax_uniform_rows() {
    let x = Tensor::<f64>::full(&[4, 10], 0.37);
    let y = x.log_softmax().unwrap();
    for &v in y.data().iter() {
        assert!((v - (-(10.0f64).ln())).abs() < 1e-12);
    }
}

#[test]
fn log_softmax_gradient() {
    let mut rng = Rng::new(21);
    let x = rand_tensor(&[3, 5], &mut rng).requires_grad();
    let w = rand_tensor(&[5, 1], &mut rng);
    assert_gradients("log_softmax", &[x.clone()], 1e-4, || {
        x.log_softmax()?.matmul(&w)?.sum()
    });
}

#[test]
fn dropout_p0_is_identity_and_eval_is_identity() {
    let mut rng = Rng::new(3);
    let x = Tensor::<f64>::from_vec(&[2, 2], vec![1.0, -2.0, 3.0, -4.0]).unwrap();
    let y = x.dropout(0.0, true, &mut rng).unwrap();
    assert_eq!(y.to_vec(), x.to_vec());
    let y = x.dropout(0.9, false, &mut rng).unwrap();
    assert_eq!(y.to_vec(), x.to_vec());
}

#[test]
fn dropout_rejects_bad_p() {
    let mut rng = Rng::new(3);
    let x = Tensor::<f64>::zeros(&[2]);
    assert!(matches!(x.dropout(1.0, true, &mut rng).unwrap_err(), Error::Parameter(_)));
    assert!(matches!(x.dropout(-0.1, true, &mut rng).unwrap_err(), Error::Parameter(_)));
}

#[test]
fn dropout_deterministic_given_rng_state() {
    let x = Tensor::<f64>::full(&[1000], 1.0);
    let a = x.dropout(0.5, true, &mut Rng::new(5)).unwrap().to_vec();
    let b = x.dropout(0.5, true, &mut Rng::new(5)).unwrap().to_vec();
    assert_eq!(a, b);
    // inverted scaling: survivors are 1/(1-p)
    assert!(a.iter().all(|&v| v == 0.0 || (v - 2.0).abs() < 1e-12));
    let kept = a.iter().filter(|&&v| v != 0.0).count();
    assert!((350..650).contains(&kept), "kept {}", kept);
}

#[test]
fn dropout_gradient_with_fixed_mask() {
    let mut rng = Rng::new(17);
    let x = rand_tensor(&[4, 8], &mut rng).requires_grad();
    assert_gradients("dropout", &[x.clone()], 1e-4, || {
        let mut mask_rng = Rng::new(99);
        x.dropout(0.4, true, &mut mask_rng)?.mean()
    });
}

#[test]
fn backward_elementwise_square() {
    let w = Tensor::<f64>::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap().requires_grad();
    let loss = w.elementwise_mul(&w).unwrap().sum().unwrap();
    loss.backward().unwrap();
    assert_eq!(w.grad().unwrap(), vec![2.0, 4.0, 6.0]);
}

#[test]
fn backward_twice_doubles_leaf_grads() {
    let w = Tensor::<f64>::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap().requires_grad();
    let loss = w.elementwise_mul(&w).unwrap().sum().unwrap();
    loss.backward().unwrap();
    loss.backward().unwrap();
    assert_eq!(w.grad().unwrap(), vec![4.0, 8.0, 12.0]);
}

#[test]
fn backward_requires_scalar() {
    let w = Tensor::<f64>::from_vec(&[2], vec![1.0, 2.0]).unwrap().requires_grad();
    let y = w.scale(2.0).unwrap();
    let err = y.backward().unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
}

#[test]
fn chained_matmul_relu_matches_finite_differences() {
    let mut rng = Rng::new(31);
    let x = rand_tensor(&[2, 6], &mut rng);
    let w1 = rand_tensor(&[6, 5], &mut rng).requires_grad();
    let b1 = rand_tensor(&[5], &mut rng).requires_grad();
    let w2 = rand_tensor(&[5, 3], &mut rng).requires_grad();
    assert_gradients("matmul+relu chain", &[w1.clone(), b1.clone(), w2.clone()], 1e-4, || {
        x.matmul(&w1)?.add_row_bias(&b1)?.relu()?.matmul(&w2)?.mean()
    });
}

#[test]
fn diamond_graph_accumulates_both_paths() {
    // y = sum(w * w) + sum(w): both branches contribute to w's grad
    let w = Tensor::<f64>::from_vec(&[2], vec![3.0, -1.0]).unwrap().requires_grad();
    let a = w.elementwise_mul(&w).unwrap().sum().unwrap();
    let b = w.sum().unwrap();
    let loss = a.add(&b).unwrap();
    loss.backward().unwrap();
    assert_eq!(w.grad().unwrap(), vec![7.0, -1.0]);
}

#[test]
fn elementwise_ops_and_reductions_gradcheck() {
    let mut rng = Rng::new(13);
    let a = rand_tensor(&[3, 4], &mut rng).requires_grad();
    let b = rand_tensor(&[3, 4], &mut rng).requires_grad();
    assert_gradients("add", &[a.clone(), b.clone()], 1e-4, || a.add(&b)?.mean());
    assert_gradients("elementwise_mul", &[a.clone(), b.clone()], 1e-4, || {
        a.elementwise_mul(&b)?.sum()
    });
    assert_gradients("scale", &[a.clone()], 1e-4, || a.scale(-2.5)?.mean());
    assert_gradients("flatten", &[a.clone()], 1e-4, || {
        a.flatten()?.elementwise_mul(&a.flatten()?)?.mean()
    });
    let bias = rand_tensor(&[4], &mut rng).requires_grad();
    assert_gradients("add_row_bias", &[a.clone(), bias.clone()], 1e-4, || {
        a.add_row_bias(&bias)?.relu()?.sum()
    });
}

#[test]
fn channel_bias_and_repeat_rows_gradcheck() {
    let mut rng = Rng::new(19);
    let x = rand_tensor(&[2, 3, 4, 4], &mut rng).requires_grad();
    let bias = rand_tensor(&[3], &mut rng).requires_grad();
    assert_gradients("add_channel_bias", &[x.clone(), bias.clone()], 1e-4, || {
        x.add_channel_bias(&bias)?.relu()?.mean()
    });

    let m = rand_tensor(&[3, 4], &mut rng).requires_grad();
    let other = rand_tensor(&[6, 4], &mut rng);
    assert_gradients("repeat_rows", &[m.clone()], 1e-4, || {
        m.repeat_rows(2)?.elementwise_mul(&other)?.sum()
    });
}

#[test]
fn no_silent_broadcasting() {
    let a = Tensor::<f64>::zeros(&[2, 3]);
    let b = Tensor::<f64>::zeros(&[3, 2]);
    assert!(a.add(&b).is_err());
    assert!(a.elementwise_mul(&b).is_err());
    let bias = Tensor::<f64>::zeros(&[2]);
    assert!(a.add_row_bias(&bias).is_err());
    let x = Tensor::<f64>::zeros(&[1, 2, 4, 4]);
    let cbias = Tensor::<f64>::zeros(&[4]);
    assert!(x.add_channel_bias(&cbias).is_err());
    let k = Tensor::<f64>::zeros(&[1, 3, 2, 2]);
    assert!(x.conv2d(&k, 1).is_err());
}

#[test]
fn forward_deterministic_given_inputs() {
    let mut rng = Rng::new(23);
    let x = rand_tensor(&[2, 3, 8, 8], &mut rng);
    let k = rand_tensor(&[4, 3, 3, 3], &mut rng);
    let y1 = x.conv2d(&k, 1).unwrap();
    let y2 = x.conv2d(&k, 1).unwrap();
    let bits = |t: &Tensor<f64>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&y1), bits(&y2));
}

#[test]
fn no_grad_builds_no_graph() {
    let w = Tensor::<f64>::from_vec(&[2], vec![1.0, 2.0]).unwrap().requires_grad();
    let y = no_grad(|| w.elementwise_mul(&w).unwrap().sum().unwrap());
    assert!(y.is_leaf());
    // backward on a constant scalar is a no-op, not an error
    y.backward().unwrap();
    assert!(w.grad().is_none());
}

#[test]
fn grads_populated_for_every_reachable_param() {
    let mut rng = Rng::new(29);
    // relu kills some paths; gradients must still be populated (zeros)
    let w = Tensor::<f64>::from_vec(&[4], vec![-1.0, -2.0, 1.0, 2.0]).unwrap().requires_grad();
    let b = rand_tensor(&[4], &mut rng).requires_grad();
    let loss = w.relu().unwrap().elementwise_mul(&b).unwrap().sum().unwrap();
    loss.backward().unwrap();
    let gw = w.grad().expect("w grad populated");
    assert!(b.grad().is_some());
    assert_eq!(gw[0], 0.0);
    assert_eq!(gw[1], 0.0);
}

#[test]
fn from_vec_validates_shape() {
    let err = Tensor::<f64>::from_vec(&[2, 3], vec![0.0; 5]).unwrap_err();
    assert!(matches!(err, Error::Dimension { .. }));
}

#[test]
fn reshape_validates_numel() {
    let t = Tensor::<f64>::zeros(&[2, 3]);
    assert!(t.reshape(&[7]).is_err());
    let r = t.reshape(&[3, 2]).unwrap();
    assert_eq!(r.shape(), &[3, 2]);
}
