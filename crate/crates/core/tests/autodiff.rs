//! Finite-difference gradients for every differentiable piece, and adjoint
//! identities for the linear spectral maps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sefnet::autodiff::{adjoint_check, grad_check_real, primitive_adjoint_check, Graph, NodeId, PoolKind, Primitive};
use sefnet::layers::{
    Activation, ChannelMix, EquiNonlinearity, EquiPool, FourierConv, GroupResidual, KernelMap, LocalFourierKernel,
    NyquistGroups, PoolSpec, ScaleSet, SpectralMap,
};
use sefnet::model::{record_losses, EquiNetwork, ModelConfig};
use sefnet::spectral::{self, AnnulusAssemble, BandResize, Dft, Idft};
use sefnet::{Error, Result, Tensor, Value};

const TOL: f64 = 1e-5;
const EPS: f64 = 1e-5;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand_tensor(shape: &[usize], r: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| r.gen_range(-1.0..1.0))
}

/// `sum(w * y)` with weights fixed by the output shape.
fn weighted_sum(g: &mut Graph<f64>, y: NodeId) -> Result<NodeId> {
    let shape = g.value(y).shape().to_vec();
    let mut r = rng(shape.iter().sum::<usize>() as u64 + 17);
    let w = g.input(rand_tensor(&shape, &mut r));
    let p = g.mul(y, w)?;
    g.sum(p)
}

/// Max relative gradient error of `x -> sum(w * build(x))`.
fn check(x: &Tensor<f64>, build: impl Fn(&mut Graph<f64>, NodeId) -> Result<NodeId>) -> f64 {
    grad_check_real(
        |x| {
            let mut g = Graph::new();
            let p = g.param("x", x.clone());
            let y = build(&mut g, p)?;
            let l = weighted_sum(&mut g, y)?;
            let v = g.real(l)?.data()[0];
            let grads = g.backward(l)?;
            Ok((v, grads.real("x")?.clone()))
        },
        x,
        EPS,
    )
    .unwrap()
}

fn assert_grad(name: &str, err: f64) {
    assert!(err <= TOL, "{name}: relative gradient error {err:e}");
}

#[test]
fn elementwise_and_reduction_gradients() {
    let mut r = rng(1);
    let x = rand_tensor(&[3, 4], &mut r);
    let other = rand_tensor(&[3, 4], &mut r);
    let o = other.clone();
    assert_grad("add", check(&x, |g, p| { let c = g.input(o.clone()); g.add(p, c) }));
    assert_grad("sub", check(&x, |g, p| { let c = g.input(o.clone()); g.sub(c, p) }));
    assert_grad("mul", check(&x, |g, p| { let c = g.input(o.clone()); g.mul(p, c) }));
    assert_grad("mul-self", check(&x, |g, p| g.mul(p, p)));
    assert_grad("scale", check(&x, |g, p| g.scale(p, -2.5)));
    assert_grad("relu", check(&x, |g, p| g.relu(p)));
    assert_grad("sum", check(&x, |g, p| g.sum(p)));
    assert_grad("mean", check(&x, |g, p| g.mean(p)));
    assert_grad("reshape", check(&x, |g, p| g.reshape(p, &[2, 6])));
    assert_grad("slice", check(&x, |g, p| g.slice(p, 1, 1, 3)));
    assert_grad("concat", check(&x, |g, p| { let a = g.slice(p, 0, 0, 1)?; let b = g.slice(p, 0, 2, 3)?; g.concat(&[b, a, b]) }));
}

#[test]
fn named_primitives_resolve() {
    let mut g = Graph::<f64>::new();
    let a = g.input(Tensor::from_f64(&[2], &[1.0, -2.0]).unwrap());
    let b = g.input(Tensor::from_f64(&[2], &[0.5, 4.0]).unwrap());
    let s = g.record_named("add", &[a, b]).unwrap();
    assert_eq!(g.real(s).unwrap().data(), &[1.5, 2.0]);
    assert!(matches!(g.record_named("no-such-op", &[a]), Err(Error::UnknownPrimitive(_))));
}

#[test]
fn affine_gradients() {
    let mut r = rng(2);
    let x = rand_tensor(&[3, 5], &mut r);
    let wgt = rand_tensor(&[5, 4], &mut r);
    let bias = rand_tensor(&[4], &mut r);
    let (w2, b2) = (wgt.clone(), bias.clone());
    assert_grad("matmul lhs", check(&x, |g, p| { let w = g.input(w2.clone()); g.matmul(p, w) }));
    let xx = x.clone();
    assert_grad("matmul rhs", check(&wgt, |g, p| { let a = g.input(xx.clone()); g.matmul(a, p) }));
    let xx = x.clone();
    assert_grad("add-bias", check(&bias, |g, p| {
        let a = g.input(xx.clone());
        let w = g.input(w2.clone());
        let h = g.matmul(a, w)?;
        g.add_bias(h, p)
    }));
    let v = rand_tensor(&[5], &mut r);
    assert_grad("matvec", check(&v, |g, p| { let a = g.input(x.clone()); g.matmul(a, p) }));
    let _ = b2;
}

#[test]
fn pooling_and_normalization_gradients() {
    let mut r = rng(3);
    let x = rand_tensor(&[2, 7, 7], &mut r);
    assert_grad("max-pool", check(&x, |g, p| g.pool2d(p, 2, PoolKind::Max)));
    assert_grad("avg-pool", check(&x, |g, p| g.pool2d(p, 3, PoolKind::Avg)));
    assert_grad("instance-norm", check(&x, |g, p| g.instance_norm(p, 1e-5)));
}

#[test]
fn softmax_cross_entropy_gradient() {
    let mut r = rng(4);
    let x = rand_tensor(&[3, 10], &mut r);
    assert_grad("softmax-ce", check(&x, |g, p| g.softmax_ce(p, vec![3, 0, 9])));
}

#[test]
fn transform_gradients() {
    let mut r = rng(5);
    for n in [5usize, 6] {
        let x = rand_tensor(&[2, n, n], &mut r);
        assert_grad("dft/idft", check(&x, |g, p| { let s = g.dft(p, 2)?; g.idft(s, 2) }));
        assert_grad("dft-real-part", check(&x, |g, p| {
            let s = g.dft(p, 2)?;
            let c = g.band_crop(s, n - 2, 2)?;
            g.idft(c, 2)
        }));
        assert_grad("crop-pad", check(&x, |g, p| {
            let s = g.dft(p, 2)?;
            let c = g.band_crop(s, 4, 2)?;
            let q = g.band_pad(c, n + 3, 2)?;
            g.idft(q, 2)
        }));
        assert_grad("fused crop-pad", check(&x, |g, p| {
            let s = g.dft(p, 2)?;
            let c = g.band_crop_pad(s, 4, 9, 2)?;
            g.idft(c, 2)
        }));
        let sig = rand_tensor(&[3, n], &mut r);
        assert_grad("1d dft", check(&sig, |g, p| { let s = g.dft(p, 1)?; let c = g.band_crop(s, 3, 1)?; g.idft(c, 1) }));
    }
}

#[test]
fn complex_product_gradient() {
    let mut r = rng(6);
    let x = rand_tensor(&[1, 6, 6], &mut r);
    let h = spectral::dft2(&rand_tensor(&[1, 6, 6], &mut r)).unwrap().into_coeffs();
    assert_grad("cmul", check(&x, |g, p| {
        let s = g.dft(p, 2)?;
        let k = g.input(h.clone());
        let y = g.cmul(s, k)?;
        g.idft(y, 2)
    }));
}

fn small_scales() -> ScaleSet {
    ScaleSet::new(vec![4, 5, 6, 8]).unwrap()
}

#[test]
fn conv_gradients_for_input_and_kernel_parameters() {
    let mut r = rng(7);
    let scales = small_scales();
    let kernel = LocalFourierKernel::<f64>::random(3, 2, 3, 8, &mut r).unwrap();
    for n in [8usize, 6, 5] {
        let x = rand_tensor(&[2, n, n], &mut r);
        let kn = kernel.effective(n, &scales).unwrap();
        assert_grad("conv input", check(&x, |g, p| {
            let s = g.dft(p, 2)?;
            let k = g.input(kn.clone());
            let y = FourierConv::record_with(g, s, k)?;
            g.idft(y, 2)
        }));
        let (tmpl, sc) = (kernel.clone(), scales.clone());
        assert_grad("conv kernel params", check(&kernel.params, |g, p| {
            let s = g.input(spectral::dft_axes(&x, 2)?.into_coeffs());
            let k = g.kernel_map(p, KernelMap { template: tmpl.clone(), n, scales: sc.clone() })?;
            let y = FourierConv::record_with(g, s, k)?;
            g.idft(y, 2)
        }));
    }
}

#[test]
fn nonlinearity_and_pool_gradients() {
    let mut r = rng(8);
    let scales = small_scales();
    for n in [8usize, 6, 5] {
        let x = rand_tensor(&[2, n, n], &mut r);
        let sc = scales.clone();
        assert_grad("equi-nonlinearity", check(&x, |g, p| {
            let s = g.dft(p, 2)?;
            let y = EquiNonlinearity::new(sc.clone()).record(g, s)?;
            g.idft(y, 2)
        }));
        let sc = scales.clone();
        assert_grad("identity nonlinearity (annulus + residual)", check(&x, |g, p| {
            let s = g.dft(p, 2)?;
            let nl = EquiNonlinearity { scales: sc.clone(), activation: Activation::Identity, normalize: false };
            let y = nl.record(g, s)?;
            g.idft(y, 2)
        }));
        for kind in [PoolKind::Max, PoolKind::Avg] {
            let sc = scales.clone();
            assert_grad("equi-pool", check(&x, |g, p| {
                let s = g.dft(p, 2)?;
                let pool = EquiPool { spec: PoolSpec { window: 2, kind }, scales: sc.clone() };
                let y = pool.record(g, s)?;
                g.idft(y, 2)
            }));
        }
    }
}

fn tiny_config() -> ModelConfig {
    ModelConfig {
        channels: vec![1, 2, 3],
        localities: vec![3, 5],
        resolution: 8,
        scales: small_scales(),
        pool_windows: vec![1, 1],
        head_pool: 2,
        hidden: 5,
        classes: 4,
        ..Default::default()
    }
}

/// Loss of the tiny network as a function of one named parameter, with
/// kernels recorded through `KernelMap` so that every parameter is a leaf.
fn network_loss(net: &EquiNetwork<f64>, image: &Tensor<f64>, label: usize, lambda: f64, name: &str, value: &Tensor<f64>) -> Result<(f64, Tensor<f64>)> {
    let n = image.shape()[0];
    let mut g = Graph::new();
    let x = g.input(image.clone());
    let mut kernels = Vec::new();
    for (i, k) in net.kernels.iter().enumerate() {
        let pname = format!("block{i}.kernel");
        let p = if pname == name { g.param(pname.clone(), value.clone()) } else { g.input(k.params.clone()) };
        kernels.push(g.kernel_map(p, KernelMap { template: k.clone(), n, scales: net.config.scales.clone() })?);
    }
    let head = [("head.w1", &net.head.w1), ("head.b1", &net.head.b1), ("head.w2", &net.head.w2), ("head.b2", &net.head.b2)];
    let ids: Vec<NodeId> = head
        .iter()
        .map(|(hn, t)| if *hn == name { g.param(*hn, value.clone()) } else { g.input((*t).clone()) })
        .collect();
    let leaves = sefnet::model::Leaves { kernels: kernels.clone(), w1: ids[0], b1: ids[1], w2: ids[2], b2: ids[3] };
    let phi = net.record_features(&mut g, x, &kernels)?;
    let rows = net.rows_for(n)?;
    let logits = net.record_head(&mut g, phi, &rows, &leaves)?;
    let (ce, hinge) = record_losses(&mut g, logits, label)?;
    let h = g.scale(hinge, lambda)?;
    let loss = g.add(ce, h)?;
    let v = g.real(loss)?.data()[0];
    let grads = g.backward(loss)?;
    Ok((v, grads.real(name)?.clone()))
}

#[test]
fn end_to_end_network_and_loss_gradients() {
    let mut r = rng(9);
    let net = EquiNetwork::<f64>::new(tiny_config(), &mut r).unwrap();
    for (n, label) in [(8usize, 1usize), (6, 3)] {
        let img = Tensor::from_fn(&[n, n], |_| r.gen::<f64>());
        for name in ["block0.kernel", "block1.kernel", "head.w1", "head.b1", "head.w2", "head.b2"] {
            let p0 = net.params().into_iter().find(|(k, _)| k == name).unwrap().1.clone();
            for lambda in [0.0, 1.0] {
                let err = grad_check_real(|p| network_loss(&net, &img, label, lambda, name, p), &p0, EPS).unwrap();
                assert_grad(&format!("{name} n={n} lambda={lambda}"), err);
            }
        }
    }
}

#[test]
fn hinge_and_ce_losses_have_exact_gradients_in_logits() {
    let mut r = rng(10);
    let logits = rand_tensor(&[4, 10], &mut r);
    for which in 0..2 {
        let err = grad_check_real(
            |z| {
                let mut g = Graph::new();
                let p = g.param("z", z.clone());
                let (ce, hinge) = record_losses(&mut g, p, 7)?;
                let l = if which == 0 { ce } else { hinge };
                let v = g.real(l)?.data()[0];
                Ok((v, g.backward(l)?.real("z")?.clone()))
            },
            &logits,
            EPS,
        )
        .unwrap();
        assert_grad(if which == 0 { "ce-sum" } else { "hinge" }, err);
    }
}

#[test]
fn kernel_pullback_matches_graph_route() {
    let mut r = rng(11);
    let scales = small_scales();
    let k = LocalFourierKernel::<f64>::random(2, 3, 3, 8, &mut r).unwrap();
    for n in [8usize, 6, 5, 4] {
        let gk = spectral::dft_axes(&rand_tensor(&[2, 3, n, n], &mut r), 2).unwrap().into_coeffs();
        let direct = k.pullback(&gk, n, &scales).unwrap();
        let map = KernelMap { template: k.clone(), n, scales: scales.clone() };
        let x = Value::Real(k.params.clone());
        let out = map.forward(&[&x]).unwrap();
        let via = map.backward(&[&x], &out, &Value::Complex(gk)).unwrap().remove(0).unwrap();
        assert!(direct.max_abs_diff(via.as_real().unwrap()) <= 1e-12);
    }
}

fn adjoint_tol(name: &str, e: f64) {
    assert!(e <= 1e-12, "{name}: adjoint mismatch {e:e}");
}

fn rand_complex(shape: &[usize], r: &mut impl Rng) -> Value<f64> {
    let re = rand_tensor(shape, r);
    let im = rand_tensor(shape, r);
    Value::Complex(sefnet::CTensor::new(
        shape.to_vec(),
        re.data().iter().zip(im.data()).map(|(a, b)| num_complex::Complex::new(*a, *b)).collect(),
    ).unwrap())
}

fn hermitian(shape: &[usize], r: &mut impl Rng) -> Value<f64> {
    Value::Complex(spectral::dft_axes(&rand_tensor(shape, r), 2).unwrap().into_coeffs())
}

#[test]
fn linear_spectral_ops_satisfy_adjoint_identity() {
    let mut r = rng(12);
    for n in [1usize, 2, 5, 8, 9] {
        let x = Value::Real(rand_tensor(&[2, n, n], &mut r));
        adjoint_tol("dft", primitive_adjoint_check(&Dft { axes: 2 }, &x, &rand_complex(&[2, n, n], &mut r)).unwrap());
        let h = hermitian(&[2, n, n], &mut r);
        adjoint_tol("idft", primitive_adjoint_check(&Idft { axes: 2 }, &h, &Value::Real(rand_tensor(&[2, n, n], &mut r))).unwrap());
        for m in 1..=n {
            let xc = rand_complex(&[2, n, n], &mut r);
            let ym = rand_complex(&[2, m, m], &mut r);
            adjoint_tol("crop", primitive_adjoint_check(&BandResize::crop(n, m, 2).unwrap(), &xc, &ym).unwrap());
            adjoint_tol("avg-crop", primitive_adjoint_check(&BandResize::avg_crop(n, m, 2).unwrap(), &xc, &ym).unwrap());
            let xm = rand_complex(&[2, m, m], &mut r);
            let yn = rand_complex(&[2, n, n], &mut r);
            adjoint_tol("pad", primitive_adjoint_check(&BandResize::pad(m, n, 2).unwrap(), &xm, &yn).unwrap());
            let yt = rand_complex(&[2, n + 2, n + 2], &mut r);
            adjoint_tol("crop-pad", primitive_adjoint_check(&BandResize::crop_pad(n, m, n + 2, 2).unwrap(), &xc, &yt).unwrap());
        }
        let sig = Value::Real(rand_tensor(&[3, n], &mut r));
        adjoint_tol("dft 1d", primitive_adjoint_check(&Dft { axes: 1 }, &sig, &rand_complex(&[3, n], &mut r)).unwrap());
    }
}

#[test]
fn layer_linear_parts_satisfy_adjoint_identity() {
    let mut r = rng(13);
    let scales = small_scales();
    for n in [8usize, 7, 6, 5, 4] {
        // channel mixing, linear in the input for a fixed kernel
        let k = rand_complex(&[3, 2, n, n], &mut r);
        let x = rand_complex(&[2, n, n], &mut r);
        let y = rand_complex(&[3, n, n], &mut r);
        let e = adjoint_check(
            |x| ChannelMix.forward(&[x, &k]),
            |y| {
                let out = ChannelMix.forward(&[&x, &k])?;
                Ok(ChannelMix.backward(&[&x, &k], &out, y)?.remove(0).unwrap())
            },
            &x,
            &y,
        )
        .unwrap();
        adjoint_tol("channel-mix", e);
        // and linear in the kernel for a fixed input
        let e = adjoint_check(
            |k| ChannelMix.forward(&[&x, k]),
            |y| {
                let out = ChannelMix.forward(&[&x, &k])?;
                Ok(ChannelMix.backward(&[&x, &k], &out, y)?.remove(1).unwrap())
            },
            &k,
            &y,
        )
        .unwrap();
        adjoint_tol("channel-mix kernel", e);

        let res = GroupResidual(NyquistGroups::new(n, &scales));
        adjoint_tol("group-residual", primitive_adjoint_check(&res, &x, &rand_complex(&[2, n, n], &mut r)).unwrap());

        let tmpl = LocalFourierKernel::<f64>::random(3, 2, 3, 8, &mut r).unwrap();
        if n <= 8 {
            let map = KernelMap { template: tmpl.clone(), n, scales: scales.clone() };
            let p = Value::Real(rand_tensor(&[3, 2, 9], &mut r));
            adjoint_tol("kernel-map", primitive_adjoint_check(&map, &p, &rand_complex(&[3, 2, n, n], &mut r)).unwrap());
        }

        let cells = scales.cells(n).unwrap();
        let asm = AnnulusAssemble::new(n, 2, cells.clone(), cells.iter().map(|c| c.1).collect()).unwrap();
        let parts: Vec<Value<f64>> = cells.iter().map(|c| rand_complex(&[2, c.1, c.1], &mut r)).collect();
        let yo = rand_complex(&[2, n, n], &mut r);
        let refs: Vec<&Value<f64>> = parts.iter().collect();
        let out = asm.forward(&refs).unwrap();
        let back = asm.backward(&refs, &out, &yo).unwrap();
        let lhs = out.inner(&yo).unwrap();
        let rhs: f64 = parts.iter().zip(&back).map(|(p, b)| p.inner(b.as_ref().unwrap()).unwrap()).sum();
        let norm = parts.iter().map(|p| p.norm().powi(2)).sum::<f64>().sqrt() * yo.norm();
        adjoint_tol("annulus-assemble", (lhs - rhs).abs() / norm);
    }
}

#[test]
fn evaluation_is_deterministic_and_graphs_are_single_use() {
    let mut r = rng(14);
    let net = EquiNetwork::<f64>::new(tiny_config(), &mut r).unwrap();
    let img = Tensor::from_fn(&[8, 8], |_| r.gen::<f64>());
    let a = net.forward(&img).unwrap();
    let b = net.forward(&img).unwrap();
    assert_eq!(a.logits.data(), b.logits.data());

    let mut g = Graph::<f64>::new();
    let p = g.param("p", Tensor::scalar(2.0));
    let s = g.mul(p, p).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.real("p").unwrap().data(), &[4.0]);
    assert!(matches!(g.backward(s), Err(Error::GraphConsumed)));
    assert!(matches!(g.relu(p), Err(Error::GraphConsumed)));
}

#[test]
fn backward_requires_scalar_loss() {
    let mut g = Graph::<f64>::new();
    let p = g.param("p", Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap());
    assert!(matches!(g.backward(p), Err(Error::NotScalar(_))));
}
