
use exemplar::net::{cross_entropy_loss, LayerParams, LayerSpec, Mode, Network, NetworkSpec, Parameters, Tensor4};
use exemplar::rng::substream;
use rand::Rng;

fn tiny_spec() -> NetworkSpec {
    NetworkSpec {
        input: (3, 6, 6),
        layers: vec![
            LayerSpec::conv(2, 3),
            LayerSpec::MaxPool { size: 2 },
            LayerSpec::FullyConnected { units: 4 },
            LayerSpec::Softmax,
        ],
    }
}

fn random_input(n: usize, c: usize, h: usize, w: usize, seed: u64) -> Tensor4<f64> {
    let mut rng = substream(seed, 99);
    Tensor4::from_vec(n, c, h, w, (0..n * c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn loss_at(net: &Network<f64>, x: &Tensor4<f64>, labels: &[u32]) -> f64 {
    cross_entropy_loss(&net.predict_probs(x).unwrap(), labels)
}

fn param(p: &mut Parameters<f64>, layer: usize, which: usize, i: usize) -> &mut f64 {
    let l = &mut p.layers[layer];
    if which == 0 { &mut l.weights[i] } else { &mut l.bias[i] }
}

/// Max relative error between backprop and central differences over every parameter.
fn gradient_check(spec: NetworkSpec, seed: u64, batch: usize) -> f64 {
    let mut net = Network::<f64>::init(spec, 0.5, seed).unwrap();
    let (c, h, w) = net.spec().input;
    let x = random_input(batch, c, h, w, seed);
    let n_classes = net.n_classes() as u32;
    let labels: Vec<u32> = (0..batch as u32).map(|i| (i * 7 + seed as u32) % n_classes).collect();
    let pass = net.forward(&x, Mode::Train, &mut substream(seed, 1)).unwrap();
    let grads = net.backward(&pass, &labels).unwrap();

    let step = 1e-5;
    let mut worst = 0.0f64;
    let n_layers = net.params.layers.len();
    for layer in 0..n_layers {
        for which in 0..2 {
            let len = if which == 0 { net.params.layers[layer].weights.len() } else { net.params.layers[layer].bias.len() };
            for i in 0..len {
                let orig = *param(net.params_mut(), layer, which, i);
                *param(net.params_mut(), layer, which, i) = orig + step;
                let up = loss_at(&net, &x, &labels);
                *param(net.params_mut(), layer, which, i) = orig - step;
                let down = loss_at(&net, &x, &labels);
                *param(net.params_mut(), layer, which, i) = orig;
                let numeric = (up - down) / (2.0 * step);
                let analytic = if which == 0 { grads.layers[layer].weights[i] } else { grads.layers[layer].bias[i] };
                let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8);
                worst = worst.max(rel);
            }
        }
    }
    worst
}

#[test]
fn tiny_network_gradients_match_finite_differences() {
    for seed in 0..5 {
        let err = gradient_check(tiny_spec(), seed, 3);
        assert!(err < 1e-4, "seed {seed}: max relative error {err}");
    }
}

#[test]
fn relu_dropout_stack_gradients() {
    // dropout masks come from the train pass; the numeric loss uses eval mode,
    // so the check runs with rate 0 dropout layers and ReLUs.
    let spec = NetworkSpec {
        input: (2, 8, 8),
        layers: vec![
            LayerSpec::Conv { out_channels: 3, kernel: 3, stride: 1, pad: 1 },
            LayerSpec::Relu,
            LayerSpec::MaxPool { size: 2 },
            LayerSpec::Conv { out_channels: 2, kernel: 2, stride: 2, pad: 0 },
            LayerSpec::Relu,
            LayerSpec::FullyConnected { units: 5 },
            LayerSpec::Relu,
            LayerSpec::Dropout { rate: 0.0 },
            LayerSpec::FullyConnected { units: 3 },
            LayerSpec::Softmax,
        ],
    };
    let err = gradient_check(spec, 11, 2);
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn linear_softmax_bias_gradient_closed_form() {
    // zero input and zero weights: logits = bias = 0, softmax uniform, so the
    // bias gradient is mean(softmax - onehot).
    let spec = NetworkSpec {
        input: (1, 2, 2),
        layers: vec![LayerSpec::FullyConnected { units: 3 }, LayerSpec::Softmax],
    };
    let params = Parameters {
        layers: vec![
            LayerParams { weights: vec![0.0; 12], bias: vec![0.0; 3] },
            LayerParams { weights: vec![], bias: vec![] },
        ],
    };
    let net = Network::<f64>::new(spec, params).unwrap();
    let x = Tensor4::zeros(4, 1, 2, 2);
    let labels = [0u32, 2, 2, 1];
    let pass = net.forward(&x, Mode::Train, &mut substream(0, 0)).unwrap();
    let g = net.backward(&pass, &labels).unwrap();
    let mut expect = [1.0 / 3.0; 3];
    for &l in &labels {
        expect[l as usize] -= 0.25;
    }
    for k in 0..3 {
        assert!((g.layers[0].bias[k] - expect[k]).abs() < 1e-12);
    }
    assert!(g.layers[0].weights.iter().all(|&w| w == 0.0));
    // logits gradient sums to zero per sample => bias gradient sums to zero
    assert!(g.layers[0].bias.iter().sum::<f64>().abs() < 1e-12);
}

#[test]
fn maxpool_gradient_routes_to_argmax() {
    let spec = NetworkSpec {
        input: (1, 2, 2),
        layers: vec![LayerSpec::conv(1, 1), LayerSpec::MaxPool { size: 2 }, LayerSpec::FullyConnected { units: 2 }, LayerSpec::Softmax],
    };
    let params = Parameters {
        layers: vec![
            LayerParams { weights: vec![1.0], bias: vec![0.0] },
            LayerParams { weights: vec![], bias: vec![] },
            LayerParams { weights: vec![1.0, -1.0], bias: vec![0.0, 0.0] },
            LayerParams { weights: vec![], bias: vec![] },
        ],
    };
    let net = Network::<f64>::new(spec, params).unwrap();
    let x = Tensor4::from_vec(1, 1, 2, 2, vec![0.1, 0.9, 0.3, 0.2]).unwrap();
    let pass = net.forward(&x, Mode::Train, &mut substream(0, 0)).unwrap();
    assert_eq!(pass.layer_output(1).data, vec![0.9]);
    let g = net.backward(&pass, &[0]).unwrap();
    // d loss / d w_conv = d loss / d pooled * x[argmax]; only the max pixel contributes.
    let p0 = pass.probs().data[0];
    let dpooled = (p0 - 1.0) * 1.0 + (1.0 - p0) * -1.0;
    assert!((g.layers[0].weights[0] - dpooled * 0.9).abs() < 1e-12);
    assert!((g.layers[0].bias[0] - dpooled).abs() < 1e-12);
}

#[test]
fn layer_outputs_match_nested_loops_on_random_shapes() {
    let mut rng = substream(2024, 0);
    for case in 0..20 {
        let c = rng.random_range(1..4);
        let h = rng.random_range(5..12);
        let w = rng.random_range(5..12);
        let k = rng.random_range(1..4);
        let oc = rng.random_range(1..5);
        let stride = rng.random_range(1..3);
        let pad = rng.random_range(0..2);
        let spec = NetworkSpec {
            input: (c, h, w),
            layers: vec![
                LayerSpec::Conv { out_channels: oc, kernel: k, stride, pad },
                LayerSpec::MaxPool { size: 2 },
                LayerSpec::FullyConnected { units: 3 },
                LayerSpec::Softmax,
            ],
        };
        let Ok(shapes) = spec.shapes() else { continue };
        let net = Network::<f64>::init(spec, 0.3, case).unwrap();
        let x = random_input(2, c, h, w, case);
        let pass = net.forward(&x, Mode::Eval, &mut substream(0, 0)).unwrap();
        for s in 0..2 {
            let p = &net.params.layers;
            let (conv, oh, ow) = oracles::conv_ref(x.sample(s), c, h, w, &p[0].weights, &p[0].bias, oc, k, stride, pad);
            assert_eq!((oc, oh, ow), shapes[0]);
            for (a, b) in pass.layer_output(0).sample(s).iter().zip(&conv) {
                assert!((a - b).abs() < 1e-6, "case {case}: conv {a} vs {b}");
            }
            let pooled = oracles::maxpool_ref(&conv, oc, oh, ow, 2);
            for (a, b) in pass.layer_output(1).sample(s).iter().zip(&pooled) {
                assert!((a - b).abs() < 1e-6, "case {case}: pool");
            }
            let fc = oracles::fc_ref(&pooled, &p[2].weights, &p[2].bias, 3);
            for (a, b) in pass.layer_output(2).sample(s).iter().zip(&fc) {
                assert!((a - b).abs() < 1e-6, "case {case}: fc");
            }
        }
    }
}

#[test]
fn convolution_is_linear() {
    let spec = NetworkSpec {
        input: (3, 8, 8),
        layers: vec![LayerSpec::conv(4, 3), LayerSpec::FullyConnected { units: 2 }, LayerSpec::Softmax],
    };
    let mut net = Network::<f64>::init(spec, 0.2, 5).unwrap();
    net.params_mut().layers[0].bias.fill(0.0);
    let x = random_input(1, 3, 8, 8, 1);
    let y = random_input(1, 3, 8, 8, 2);
    let (a, b) = (0.7, -1.3);
    let combo = Tensor4::from_vec(1, 3, 8, 8, x.data.iter().zip(&y.data).map(|(p, q)| a * p + b * q).collect()).unwrap();
    let run = |t: &Tensor4<f64>| net.forward(t, Mode::Eval, &mut substream(0, 0)).unwrap().layer_output(0).data.clone();
    let (fx, fy, fc) = (run(&x), run(&y), run(&combo));
    for i in 0..fc.len() {
        assert!((fc[i] - (a * fx[i] + b * fy[i])).abs() < 1e-5);
    }
}

#[test]
fn softmax_rows_are_distributions() {
    let net = Network::<f32>::init(NetworkSpec::default_for(7), 0.05, 3).unwrap();
    let x = random_input(3, 3, 32, 32, 4).map(|v| v as f32);
    let probs = net.predict_probs(&x).unwrap();
    for row in probs.data.chunks_exact(7) {
        let s: f32 = row.iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
        assert!(row.iter().all(|&p| p > 0.0));
    }
}
