//! End-to-end acceptance checks. Runs without the libtest harness so that
//! every check prints one PASS/FAIL line even when others fail.

use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use lednet_core::checkpoint;
use lednet_core::gradcheck;
use lednet_core::model::{self, build_lednet, build_lednet_with, Layer, Network, Stage, ENCODER_DILATIONS};
use lednet_core::ops::{self, BnMode, ConvParams};
use lednet_core::train::ConfusionMatrix;
use lednet_core::{Fill, LabelMap, Tape, Tensor, IGNORE_INDEX};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn lednet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lednet"))
        .args(args)
        .output()
        .expect("failed to launch lednet")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn expect_success(o: &Output) {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status.code(),
        stdout(o),
        String::from_utf8_lossy(&o.stderr)
    );
}

fn within(limit: Duration, started: Instant, what: &str) {
    let took = started.elapsed();
    assert!(took < limit, "{what} took {took:?}, limit {limit:?}");
}

fn table_conformance() {
    let t = Instant::now();
    let out = lednet(&["summarize", "--classes", "20", "--height", "512", "--width", "1024", "--table1"]);
    expect_success(&out);
    within(Duration::from_secs(10), t, "summarize");
    let text = stdout(&out);
    assert!(text.contains("reference layout: PASS (18 rows)"), "{text}");
    let trace = build_lednet(20, 512, 1024).unwrap().shape_trace(512, 1024).unwrap();
    assert_eq!(trace, model::table1_expectation(20));
}

fn parameter_budget() {
    let counts: Vec<usize> = (0..2)
        .map(|_| model::count_params(&build_lednet(20, 512, 1024).unwrap()).unwrap().total_params)
        .collect();
    assert_eq!(counts[0], counts[1]);
    let total = counts[0];
    assert!((800_000..=1_100_000).contains(&total), "{total}");

    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("c20.ledn");
    Network::<f32>::new(build_lednet(20, 512, 1024).unwrap(), 0)
        .unwrap()
        .save(&ckpt)
        .unwrap();
    let elements: usize = checkpoint::load(&ckpt).unwrap().iter().map(|e| e.data.len()).sum();
    assert_eq!(elements, total);
    let text = stdout(&lednet(&["summarize", "--classes", "20"]));
    assert!(text.contains(&format!("total params: {total} ")), "{text}");
    println!("    total trainable parameters for 20 classes: {total}");
}

fn gradient_suite() {
    let t = Instant::now();
    let reports = gradcheck::run_suite(0, None).unwrap();
    for op in [
        "conv2d",
        "maxpool2d",
        "global_avg_pool",
        "batchnorm2d_train",
        "batchnorm2d_eval",
        "relu",
        "upsample_bilinear",
        "channel_split",
        "channel_concat",
        "channel_shuffle",
        "softmax_cross_entropy",
    ] {
        let r = reports.iter().find(|r| r.op == op).unwrap_or_else(|| panic!("{op} not covered"));
        assert!(r.trials >= 5, "{op}: {} trials", r.trials);
        assert!(r.max_error < 1e-4, "{op}: {}", r.max_error);
    }
    assert!(reports.iter().all(|r| r.passed()));
    expect_success(&lednet(&["gradcheck", "--seed", "3"]));
    let bad = lednet(&["gradcheck", "--seed", "3", "--corrupt", "channel_shuffle"]);
    assert_eq!(bad.status.code(), Some(3));
    within(Duration::from_secs(300), t, "gradient suite");
}

fn shuffle_algebra() {
    for c in 1..=32usize {
        for g in (1..=c).filter(|g| c % g == 0) {
            let x = Tensor::<f64>::create(&[2, c, 2, 3], Fill::Normal { seed: (c * 100 + g) as u64, mean: 0.0, std: 1.0 })
                .unwrap();
            let tape = Tape::new();
            let xv = tape.leaf(x.clone());
            let once = ops::channel_shuffle(xv, g).unwrap();
            let twice = ops::channel_shuffle(once, c / g).unwrap();
            assert_eq!(*twice.value(), x, "C={c} g={g}");

            let w = Tensor::<f64>::create(&[2, c, 2, 3], Fill::Normal { seed: (c * 100 + g + 7) as u64, mean: 0.0, std: 1.0 })
                .unwrap();
            let loss = ops::weighted_sum(once, &w).unwrap();
            let grad = tape.backward(loss).unwrap().wrt(xv);
            let t2 = Tape::new();
            let forwarded = ops::channel_shuffle(t2.constant(grad), g).unwrap();
            assert_eq!(*forwarded.value(), w, "C={c} g={g}");
        }
    }
}

/// Direct-sum cross-correlation with zero padding.
fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, p: &ConvParams) -> Tensor<f64> {
    let (n, cin, h, wd) = x.dims4("oracle").unwrap();
    let (cout, _, kh, kw) = w.dims4("oracle").unwrap();
    let oh = (h + 2 * p.padding.0 - p.dilation.0 * (kh - 1) - 1) / p.stride.0 + 1;
    let ow = (wd + 2 * p.padding.1 - p.dilation.1 * (kw - 1) - 1) / p.stride.1 + 1;
    let mut out = vec![0.0; n * cout * oh * ow];
    for b in 0..n {
        for o in 0..cout {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = 0.0;
                    for i in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (y * p.stride.0 + ky * p.dilation.0) as isize - p.padding.0 as isize;
                                let ix = (xo * p.stride.1 + kx * p.dilation.1) as isize - p.padding.1 as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    acc += x.at4(b, i, iy as usize, ix as usize) * w.at4(o, i, ky, kx);
                                }
                            }
                        }
                    }
                    out[((b * cout + o) * oh + y) * ow + xo] = acc;
                }
            }
        }
    }
    Tensor::from_vec(&[n, cout, oh, ow], out).unwrap()
}

fn conv_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut cases = 0;
    for stride in [1, 2] {
        for pad in [0, 1, 2] {
            for dil in [1, 2, 3] {
                for kernel in [(3, 3), (3, 1), (1, 3), (1, 1)] {
                    let (n, cin, cout) = (rng.random_range(1..=2), rng.random_range(1..=8), rng.random_range(1..=8));
                    let (h, w) = (rng.random_range(8..=16), rng.random_range(8..=16));
                    let p = ConvParams::new(cin, cout, kernel).stride(stride, stride).padding(pad, pad).dilation(dil, dil);
                    let x = Tensor::<f64>::create(&[n, cin, h, w], Fill::Uniform { seed: rng.random(), lo: -1.0, hi: 1.0 })
                        .unwrap();
                    let wt = Tensor::<f64>::create(&p.weight_shape(), Fill::Uniform { seed: rng.random(), lo: -1.0, hi: 1.0 })
                        .unwrap();
                    let want = conv_oracle(&x, &wt, &p);
                    for_both_precisions(&x, &wt, p, &want);
                    cases += 1;
                }
            }
        }
    }
    println!("    {cases} grid cases checked in f32 and f64");
}

fn for_both_precisions(x: &Tensor<f64>, w: &Tensor<f64>, p: ConvParams, want: &Tensor<f64>) {
    let tape = Tape::new();
    let got = ops::conv2d(tape.constant(x.clone()), tape.constant(w.clone()), None, p).unwrap();
    compare(&got.value(), want, 1e-12, &p);
    let tape = Tape::new();
    let got = ops::conv2d(tape.constant(x.cast::<f32>()), tape.constant(w.cast::<f32>()), None, p).unwrap();
    compare(&got.value().cast(), want, 1e-5, &p);
}

fn compare(got: &Tensor<f64>, want: &Tensor<f64>, tol: f64, p: &ConvParams) {
    assert_eq!(got.shape(), want.shape(), "{p:?}");
    let scale = want.max_abs().max(1e-12);
    for (a, b) in got.data().iter().zip(want.data()) {
        assert!((a - b).abs() / scale <= tol, "{p:?}: {a} vs {b}");
    }
}

/// Pixels with a nonzero gradient in any channel, and the area of their
/// bounding box.
fn footprint(grad: &Tensor<f32>) -> (usize, usize) {
    let (_, c, h, w) = grad.dims4("footprint").unwrap();
    let hits: Vec<(usize, usize)> = (0..h * w)
        .filter(|&p| (0..c).any(|ch| grad.data()[ch * h * w + p] != 0.0))
        .map(|p| (p / w, p % w))
        .collect();
    let span = |f: fn(&(usize, usize)) -> usize| {
        let lo = hits.iter().map(f).min().unwrap();
        let hi = hits.iter().map(f).max().unwrap();
        hi - lo + 1
    };
    (hits.len(), span(|p| p.0) * span(|p| p.1))
}

fn one_hot(shape: &[usize], pixel: (usize, usize)) -> Tensor<f32> {
    let (c, h, w) = (shape[1], shape[2], shape[3]);
    let mut data = vec![0.0f32; c * h * w];
    for ch in 0..c {
        data[(ch * h + pixel.0) * w + pixel.1] = 1.0;
    }
    Tensor::from_vec(shape, data).unwrap()
}

fn conv_footprint(r: usize) -> (usize, usize) {
    let size = 2 * 17 + 11;
    let p = ConvParams::new(2, 2, (3, 3)).same(r, r);
    let tape = Tape::new();
    let x = tape.leaf(Tensor::<f32>::create(&[1, 2, size, size], Fill::Uniform { seed: 1, lo: 0.5, hi: 1.5 }).unwrap());
    let w = tape.constant(Tensor::<f32>::create(&p.weight_shape(), Fill::Uniform { seed: 2, lo: 0.5, hi: 1.5 }).unwrap());
    let y = ops::conv2d(x, w, None, p).unwrap();
    let centre = (size / 2, size / 2);
    let loss = ops::weighted_sum(y, &one_hot(&y.shape(), centre)).unwrap();
    let g = tape.backward(loss).unwrap().wrt(x);
    footprint(&g)
}

fn encoder_footprint(dilations: &[usize; 8]) -> (usize, usize) {
    let (h, w) = (64, 1024);
    let mut net = Network::<f32>::new(build_lednet_with(4, h, w, dilations).unwrap(), 21).unwrap();
    let params = net.params().clone();
    let tape = Tape::new();
    let bound = params.bind_frozen(&tape);
    let x = tape.leaf(Tensor::create(&[1, 3, h, w], Fill::Uniform { seed: 4, lo: 0.0, hi: 1.0 }).unwrap());
    let y = net.forward_encoder(&bound, x, BnMode::Eval).unwrap();
    let shape = y.shape();
    let centre = (shape[2] / 2, shape[3] / 2);
    let loss = ops::weighted_sum(y, &one_hot(&shape, centre)).unwrap();
    let g = tape.backward(loss).unwrap().wrt(x);
    footprint(&g)
}

fn receptive_field() {
    for r in [1, 2, 5, 9, 17] {
        let (taps, extent) = conv_footprint(r);
        assert_eq!((taps, extent), (9, (2 * r + 1) * (2 * r + 1)), "r={r}");
    }
    let (dilated_px, dilated) = encoder_footprint(&ENCODER_DILATIONS);
    let (plain_px, plain) = encoder_footprint(&[1; 8]);
    println!(
        "    encoder footprint on 64x1024: dilated {dilated} px box ({dilated_px} nonzero), all r=1 {plain} px box ({plain_px} nonzero)"
    );
    assert!(dilated > plain && dilated_px > plain_px);
}

fn pointwise_free() {
    let spec = build_lednet(20, 512, 1024).unwrap();
    let mut units = 0;
    let mut convs = 0;
    for stage in spec.stages() {
        if let Stage::SsNbt(u) = stage {
            units += 1;
            for layer in u.transform_layers() {
                if let Layer::Conv { name, params } = layer {
                    convs += 1;
                    assert!(!params.is_pointwise(), "{name} is 1x1");
                    assert!(params.kernel.0 * params.kernel.1 > 1, "{name}");
                }
            }
        }
    }
    assert_eq!((units, convs), (13, 104));
    let cmp = model::compare_modules(128, 64, 128).unwrap();
    let ss = cmp.iter().find(|m| m.name == "SS-nbt").unwrap();
    assert_eq!(ss.pointwise_macs, 0);
}

fn parse_field(line: &str, key: &str) -> Option<f64> {
    line.split_whitespace()
        .find_map(|kv| kv.strip_prefix(key)?.strip_prefix('='))
        .and_then(|v| v.parse().ok())
}

fn toy_overfit() {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("toy");
    let ckpt = dir.path().join("toy.ledn");
    let data_s = data.to_str().unwrap();
    let ckpt_s = ckpt.to_str().unwrap();
    expect_success(&lednet(&[
        "gen-data", "--out", data_s, "--count", "10", "--classes", "4", "--height", "64", "--width", "128", "--seed", "0",
    ]));
    expect_success(&lednet(&[
        "train", "--data", data_s, "--checkpoint", ckpt_s, "--iters", "2000", "--seed", "0", "--eval-every", "50",
        "--stop-at-miou", "0.8", "--quiet",
    ]));
    let log = std::fs::read_to_string(dir.path().join("toy.ledn.log")).unwrap();
    let losses: Vec<f64> = log.lines().filter(|l| l.starts_with("iter=")).filter_map(|l| parse_field(l, "loss")).collect();
    assert!(!losses.is_empty() && losses.len() <= 2000);
    assert!(losses.iter().all(|l| l.is_finite()));
    let last_eval = log.lines().rfind(|l| l.starts_with("eval")).expect("no eval record");
    let train_miou = parse_field(last_eval, "miou").unwrap();

    let out = lednet(&["eval", "--data", data_s, "--checkpoint", ckpt_s]);
    expect_success(&out);
    let eval_miou = parse_field(stdout(&out).lines().next().unwrap(), "miou").unwrap();
    println!(
        "    {} iterations, final loss {:.4}, train mIoU {train_miou:.4}, eval mIoU {eval_miou:.4}, {:.0?}",
        losses.len(),
        losses.last().unwrap(),
        t.elapsed()
    );
    assert!(train_miou > 0.80 && eval_miou > 0.80);
}

/// Per-class IoU from pixel sets, without a confusion matrix.
fn set_oracle(pred: &[u32], label: &[u32], classes: u32) -> (f64, f64) {
    let scored: Vec<usize> = (0..label.len()).filter(|&i| label[i] != IGNORE_INDEX).collect();
    let mut ious = Vec::new();
    for c in 0..classes {
        let p: std::collections::BTreeSet<usize> = scored.iter().copied().filter(|&i| pred[i] == c).collect();
        let t: std::collections::BTreeSet<usize> = scored.iter().copied().filter(|&i| label[i] == c).collect();
        let union = p.union(&t).count();
        if union > 0 {
            ious.push(p.intersection(&t).count() as f64 / union as f64);
        }
    }
    let correct = scored.iter().filter(|&&i| pred[i] == label[i]).count();
    (ious.iter().sum::<f64>() / ious.len() as f64, correct as f64 / scored.len() as f64)
}

fn metric_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for case in 0..20 {
        let classes = rng.random_range(2..=6u32);
        let (n, h, w) = (rng.random_range(1..=2), rng.random_range(1..=6), rng.random_range(1..=6));
        let len = n * h * w;
        let pred: Vec<u32> = (0..len).map(|_| rng.random_range(0..classes)).collect();
        let mut label: Vec<u32> = (0..len).map(|_| rng.random_range(0..classes)).collect();
        label[0] = 0;
        for v in label.iter_mut().skip(1) {
            if rng.random_bool(0.15) {
                *v = IGNORE_INDEX;
            }
        }
        let mut cm = ConfusionMatrix::new(classes as usize).unwrap();
        cm.update(
            &LabelMap::new(n, h, w, pred.clone()).unwrap(),
            &LabelMap::new(n, h, w, label.clone()).unwrap(),
            IGNORE_INDEX,
        )
        .unwrap();
        let s = cm.scores().unwrap();
        let (miou, acc) = set_oracle(&pred, &label, classes);
        assert_eq!(s.miou, miou, "case {case}");
        assert_eq!(s.pixel_accuracy, acc, "case {case}");
    }
}

fn determinism_and_persistence() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    let data_s = data.to_str().unwrap();
    expect_success(&lednet(&[
        "gen-data", "--out", data_s, "--count", "4", "--classes", "3", "--height", "64", "--width", "64", "--seed", "2",
    ]));
    let run = |name: &str| {
        let ckpt = dir.path().join(name);
        let out = lednet(&[
            "train", "--data", data_s, "--checkpoint", ckpt.to_str().unwrap(), "--iters", "6", "--max-iter", "100",
            "--seed", "8", "--batch-size", "3", "--eval-every", "3", "--quiet",
        ]);
        expect_success(&out);
        let read = |p: &Path| std::fs::read(p).unwrap();
        let mut log = ckpt.clone().into_os_string();
        log.push(".log");
        let mut stats = ckpt.clone().into_os_string();
        stats.push(".bnstats");
        (read(&ckpt), read(Path::new(&log)), read(Path::new(&stats)))
    };
    let a = run("a.ledn");
    let b = run("b.ledn");
    assert!(a == b, "fixed-seed runs differ");
    assert_eq!(String::from_utf8_lossy(&a.1).lines().count(), 8);

    let spec = build_lednet(3, 64, 64).unwrap();
    let net = Network::<f32>::load(spec, &dir.path().join("a.ledn")).unwrap();
    let again = dir.path().join("again.ledn");
    net.save(&again).unwrap();
    assert!(std::fs::read(&again).unwrap() == a.0, "checkpoint re-save differs");
    let entries = checkpoint::load(&again).unwrap();
    for (e, (_, v)) in entries.iter().zip(net.params().iter()) {
        let bits = |d: &[f32]| d.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&e.data), bits(v.data()), "{}", e.name);
    }
}

fn main() {
    let criteria: [(&str, fn()); 10] = [
        ("reference layout conformance", table_conformance),
        ("parameter budget", parameter_budget),
        ("finite-difference gradient suite", gradient_suite),
        ("channel shuffle algebra", shuffle_algebra),
        ("conv2d matches direct-sum oracle", conv_oracle_equivalence),
        ("receptive field growth", receptive_field),
        ("pointwise-free SS-nbt transforms", pointwise_free),
        ("toy overfit reaches mIoU > 0.80", toy_overfit),
        ("metrics match set-intersection oracle", metric_oracle),
        ("determinism and checkpoint persistence", determinism_and_persistence),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    panic::set_hook(Box::new(|info| eprintln!("    {info}")));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let ok = panic::catch_unwind(AssertUnwindSafe(check)).is_ok();
        failed += usize::from(!ok);
        println!("criterion {n:>2}: {} {name} ({:.1?})", if ok { "PASS" } else { "FAIL" }, t.elapsed());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
