use proptest::prelude::*;
use tensor::nn::mse;
use tensor::{Adam, Graph, ParamStore, Tensor, TensorError};

fn t(shape: &[usize], data: &[f32]) -> Tensor<f32> {
    Tensor::new(shape, data.to_vec()).unwrap()
}

#[test]
fn matmul_identity() {
    let mut g = Graph::<f32>::new();
    let eye = g.constant(t(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]));
    let x = g.constant(t(&[3, 1], &[0.3, -2.0, 7.5]));
    let y = g.matmul(eye, x).unwrap();
    assert_eq!(g.value(y).data(), &[0.3, -2.0, 7.5]);
}

#[test]
fn sigmoid_at_zero() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::scalar(0.0));
    let y = g.sigmoid(x);
    assert_eq!(g.value(y).item(), 0.5);
}

#[test]
fn conv_of_ones_is_nine() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::full(&[1, 1, 4, 4], 1.0));
    let w = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
    let b = g.constant(Tensor::zeros(&[1]));
    let y = g.conv2d(x, w, b, 1, 0).unwrap();
    assert_eq!(g.shape(y), &[1, 1, 2, 2]);
    assert_eq!(g.value(y).data(), &[9.0; 4]);
}

#[test]
fn conv_rejects_even_kernel_and_stride_three() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::zeros(&[1, 1, 4, 4]));
    let w2 = g.constant(Tensor::zeros(&[1, 1, 2, 2]));
    let w3 = g.constant(Tensor::zeros(&[1, 1, 3, 3]));
    let b = g.constant(Tensor::zeros(&[1]));
    assert!(g.conv2d(x, w2, b, 1, 0).is_err());
    assert!(g.conv2d(x, w3, b, 3, 1).is_err());
}

#[test]
fn shape_mismatch_names_op_and_shapes() {
    let mut g = Graph::<f32>::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    let err = g.matmul(a, b).unwrap_err();
    match err {
        TensorError::Shape { op, shapes } => {
            assert_eq!(op, "matmul");
            assert_eq!(shapes, vec![vec![2, 3], vec![2, 3]]);
        }
        e => panic!("unexpected {e}"),
    }
    let c = g.constant(Tensor::zeros(&[3]));
    assert!(matches!(g.add(a, c), Err(TensorError::Shape { op: "add", .. })));
}

#[test]
fn sum_gradient_is_ones() {
    let mut g = Graph::<f32>::new();
    let x = g.input(t(&[4], &[1., -2., 3., 0.5]));
    let l = g.sum(x);
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.get(x).unwrap(), &[1.0; 4]);
}

#[test]
fn mse_at_target_has_zero_gradient() {
    let mut g = Graph::<f32>::new();
    let x = g.input(t(&[3], &[0.2, 0.4, -1.0]));
    let target = g.constant(t(&[3], &[0.2, 0.4, -1.0]));
    let l = mse(&mut g, x, target).unwrap();
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.get(x).unwrap(), &[0.0; 3]);
}

#[test]
fn non_scalar_loss_rejected() {
    let mut g = Graph::<f32>::new();
    let x = g.input(t(&[2], &[1., 2.]));
    assert!(matches!(g.backward(x), Err(TensorError::NonScalarLoss(_))));
}

#[test]
fn shared_subexpressions_accumulate() {
    let f = |g: &mut Graph<f64>, x| {
        let a = g.tanh(x);
        g.mul(a, x).unwrap()
    };
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::new(&[3], vec![0.1, -0.7, 1.3]).unwrap());
    let y1 = f(&mut g, x);
    let y2 = f(&mut g, x);
    let y = g.add(y1, y2).unwrap();
    let l = g.sum(y);
    let twice = g.backward(l).unwrap().get(x).unwrap().to_vec();

    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::new(&[3], vec![0.1, -0.7, 1.3]).unwrap());
    let y = f(&mut g, x);
    let y = g.scale(y, 2.0);
    let l = g.sum(y);
    let scaled = g.backward(l).unwrap().get(x).unwrap().to_vec();
    for (a, b) in twice.iter().zip(&scaled) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn adam_first_step_moves_by_lr() {
    let mut store = ParamStore::<f32>::new();
    let id = store.add("x", Tensor::scalar(1.0));
    store.get_mut(id).grad = Tensor::scalar(1.0);
    Adam::new(0.1).step(&mut store).unwrap();
    let x = store.get(id).value.item();
    assert!((x - 0.9).abs() < 1e-6, "{x}");
    assert_eq!(store.get(id).grad.item(), 0.0);
}

#[test]
fn adam_zero_gradient_leaves_fresh_parameter() {
    let mut store = ParamStore::<f32>::new();
    let id = store.add("x", Tensor::scalar(2.5));
    Adam::new(0.1).step(&mut store).unwrap();
    assert_eq!(store.get(id).value.item(), 2.5);
}

#[test]
fn adam_converges_on_quadratic() {
    let mut store = ParamStore::<f32>::new();
    let id = store.add("x", Tensor::scalar(0.0));
    let opt = Adam::new(0.05);
    for _ in 0..500 {
        let mut g = Graph::new();
        let x = g.param(&store, id);
        let d = g.add_scalar(x, -3.0);
        let sq = g.mul(d, d).unwrap();
        let l = g.sum(sq);
        let grads = g.backward(l).unwrap();
        store.accumulate(&g, &grads);
        opt.step(&mut store).unwrap();
    }
    let x = store.get(id).value.item();
    assert!((x - 3.0).abs() < 1e-2, "{x}");
}

#[test]
fn adam_aborts_on_nan_with_name() {
    let mut store = ParamStore::<f32>::new();
    let id = store.add("heads.q.0.w", Tensor::scalar(1.0));
    store.get_mut(id).grad = Tensor::scalar(f32::NAN);
    match Adam::new(0.1).step(&mut store) {
        Err(TensorError::NonFiniteGradient(name)) => assert_eq!(name, "heads.q.0.w"),
        other => panic!("{other:?}"),
    }
    assert_eq!(store.get(id).value.item(), 1.0);
}

#[test]
fn frozen_parameters_untouched() {
    let mut store = ParamStore::<f32>::new();
    let a = store.add("enc.w", Tensor::scalar(1.0));
    let b = store.add("sel.w", Tensor::scalar(1.0));
    store.set_frozen("enc", true);
    let mut g = Graph::new();
    let va = g.param(&store, a);
    let vb = g.param(&store, b);
    let s = g.add(va, vb).unwrap();
    let l = g.sum(s);
    let grads = g.backward(l).unwrap();
    store.accumulate(&g, &grads);
    Adam::new(0.1).step(&mut store).unwrap();
    assert_eq!(store.get(a).value.item(), 1.0);
    assert!(store.get(b).value.item() < 1.0);
}

#[test]
fn backward_is_bit_deterministic() {
    let run = || {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::new(&[1, 2, 6, 6], (0..72).map(|i| (i as f32 * 0.37).sin()).collect()).unwrap());
        let w = g.input(Tensor::new(&[3, 2, 3, 3], (0..54).map(|i| (i as f32 * 0.11).cos()).collect()).unwrap());
        let b = g.input(Tensor::zeros(&[3]));
        let y = g.conv2d(x, w, b, 2, 1).unwrap();
        let y = g.tanh(y);
        let l = g.mean(y);
        let grads = g.backward(l).unwrap();
        (g.value(l).item().to_bits(), grads.get(w).unwrap().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
    };
    assert_eq!(run(), run());
}

#[test]
fn tape_is_topologically_ordered() {
    let mut g = Graph::<f32>::new();
    let a = g.input(Tensor::scalar(1.0));
    let b = g.exp(a);
    let c = g.add(a, b).unwrap();
    assert!(a.index() < b.index() && b.index() < c.index());
}

proptest! {
    #[test]
    fn tensor_length_matches_extents(dims in proptest::collection::vec(1usize..5, 1..4)) {
        let n: usize = dims.iter().product();
        prop_assert!(Tensor::<f32>::new(&dims, vec![0.0; n]).is_ok());
        prop_assert!(Tensor::<f32>::new(&dims, vec![0.0; n + 1]).is_err());
    }

    #[test]
    fn forward_ops_stay_finite(xs in proptest::collection::vec(-20.0f32..20.0, 6)) {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::new(&[2, 3], xs).unwrap());
        let s = g.sigmoid(x);
        let th = g.tanh(s);
        let sm = g.softmax(th);
        let n = g.normalize_rows(sm).unwrap();
        prop_assert!(g.value(n).all_finite());
    }
}
