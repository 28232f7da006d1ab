use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use lednet_core::data::{self, Dataset, SceneConfig};
use lednet_core::gradcheck;
use lednet_core::model::{self, Network, NetworkSpec};
use lednet_core::train::{self, TrainConfig};
use lednet_core::{checkpoint, Fill, Tensor};

use crate::args;

/// A check that ran to completion and failed.
#[derive(Debug)]
pub struct CheckFailed(pub String);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

fn spec_for(shape: &args::NetShape) -> Result<NetworkSpec> {
    model::build_lednet(shape.classes, shape.height, shape.width)
        .with_context(|| format!("cannot build a network for {}x{} input", shape.height, shape.width))
}

pub fn summarize(a: &args::Summarize) -> Result<()> {
    let spec = spec_for(&a.shape)?;
    let trace = spec.shape_trace(a.shape.height, a.shape.width)?;
    let cost = model::count_params(&spec)?;
    let mut out = String::new();
    out.push_str(&format!(
        "LEDNet classes={} input=3x{}x{}\n\nstage output sizes (W x H x C)\n",
        a.shape.classes, a.shape.height, a.shape.width
    ));
    for row in &trace {
        out.push_str(&format!("  {row}\n"));
    }
    out.push_str(&format!("\n{:<36} {:<16} {:>10} {:>14}\n", "layer", "kind", "params", "MACs"));
    for r in &cost.rows {
        out.push_str(&format!("{:<36} {:<16} {:>10} {:>14}\n", r.name, r.kind, r.params, r.macs));
    }
    out.push_str(&format!(
        "\ntotal params: {} ({:.3}M)\ntotal MACs: {} ({:.3}G)\ntotal element ops: {}\n",
        cost.total_params,
        cost.total_params as f64 / 1e6,
        cost.total_macs,
        cost.total_macs as f64 / 1e9,
        cost.total_elem_ops
    ));
    if let Some(c) = a.compare_modules {
        out.push_str(&format!(
            "\nresidual modules at {c}x{}x{}\n",
            a.shape.height / 8,
            a.shape.width / 8
        ));
        for m in model::compare_modules(c, a.shape.height / 8, a.shape.width / 8)? {
            out.push_str(&format!(
                "  {:<14} params={:<8} macs={:<12} pointwise_macs={}\n",
                m.name, m.params, m.macs, m.pointwise_macs
            ));
        }
    }
    print!("{out}");
    if a.table1 {
        let expected = model::table1_expectation(a.shape.classes);
        let mut problems = Vec::new();
        if trace.len() != expected.len() {
            problems.push(format!("{} stages, reference has {}", trace.len(), expected.len()));
        }
        for (i, (got, want)) in trace.iter().zip(&expected).enumerate() {
            if got != want {
                problems.push(format!("row {i}: got `{got}`, expected `{want}`"));
            }
        }
        if !problems.is_empty() {
            bail!(CheckFailed(format!("reference layout mismatch:\n  {}", problems.join("\n  "))));
        }
        println!("\nreference layout: PASS ({} rows)", expected.len());
    }
    Ok(())
}

pub fn gradcheck(a: &args::Gradcheck) -> Result<()> {
    if let Some(op) = &a.corrupt {
        if !gradcheck::SUITE_OPS.contains(&op.as_str()) {
            bail!(lednet_core::Error::Config(format!("unknown op `{op}`")));
        }
    }
    let reports = gradcheck::run_suite(a.seed, a.corrupt.as_deref())?;
    print!("{}", gradcheck::format_report(&reports));
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.op.as_str()).collect();
    if !failed.is_empty() {
        bail!(CheckFailed(format!("gradient check failed for: {}", failed.join(", "))));
    }
    println!("all {} ops pass (tolerance {:e})", reports.len(), gradcheck::TOLERANCE);
    Ok(())
}

pub fn gen_data(a: &args::GenData) -> Result<()> {
    let cfg = SceneConfig {
        noise_std: a.noise,
        ..SceneConfig::new(a.classes, a.height, a.width, a.seed)?
    };
    cfg.validate()?;
    data::write_dataset(&a.out, &cfg, a.count)?;
    println!("wrote {} samples to {}", a.count, a.out.display());
    Ok(())
}

fn load_dataset(dir: &Path) -> Result<Dataset> {
    Dataset::load(dir).with_context(|| format!("cannot load dataset {}", dir.display()))
}

pub fn train(a: &args::Train) -> Result<()> {
    let data = load_dataset(&a.data)?;
    let spec = model::build_lednet(data.config.num_classes, data.config.height, data.config.width)?;
    let mut net = Network::<f32>::new(spec, a.seed)?;
    let mut cfg = TrainConfig::new(a.iters, a.seed);
    cfg.batch_size = a.batch_size;
    cfg.eval_every = a.eval_every;
    cfg.stop_at_miou = a.stop_at_miou;
    cfg.sgd.max_iter = a.max_iter.unwrap_or(a.iters.max(1));
    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut p = a.checkpoint.clone().into_os_string();
        p.push(".log");
        PathBuf::from(p)
    });
    let mut log = fs::File::create(&log_path).with_context(|| format!("cannot create {}", log_path.display()))?;
    let mut io_err = None;
    let result = train::train(&mut net, &data, &cfg, &mut |line| {
        if let Err(e) = writeln!(log, "{line}") {
            io_err.get_or_insert(e);
        }
        if !a.quiet || line.starts_with("eval") {
            println!("{line}");
        }
    });
    if let Some(e) = io_err {
        return Err(e).context("cannot write metrics log");
    }
    let report = result?;
    net.save(&a.checkpoint)?;
    println!(
        "trained {} iterations; checkpoint {}; log {}",
        report.iters_run,
        a.checkpoint.display(),
        log_path.display()
    );
    Ok(())
}

/// Rebuild the network stored at `path` for `height`×`width` inputs; the
/// class count is read from the checkpoint.
fn load_network(path: &Path, height: usize, width: usize) -> Result<Network<f32>> {
    let entries = checkpoint::load(path).with_context(|| format!("cannot read checkpoint {}", path.display()))?;
    let classes = entries
        .iter()
        .find(|e| e.name == "decoder.apn.trunk.weight")
        .map(|e| e.shape[0])
        .context("checkpoint has no decoder.apn.trunk.weight entry")?;
    let spec = model::build_lednet(classes, height, width)?;
    Ok(Network::load(spec, path)?)
}

pub fn eval(a: &args::Eval) -> Result<()> {
    let data = load_dataset(&a.data)?;
    let mut net = load_network(&a.checkpoint, data.config.height, data.config.width)?;
    let cm = train::evaluate(&mut net, &data, a.batch_size)?;
    let s = cm.scores()?;
    println!("miou={:.6} pixacc={:.6}", s.miou, s.pixel_accuracy);
    for (c, iou) in s.per_class.iter().enumerate() {
        match iou {
            Some(v) => println!("class {c} iou={v:.6}"),
            None => println!("class {c} iou=n/a"),
        }
    }
    Ok(())
}

fn collect_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .with_context(|| format!("cannot list {}", p.display()))?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            found.retain(|f| f.extension().is_some_and(|x| x == "ppm"));
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        bail!(lednet_core::Error::Config("no input images".into()));
    }
    Ok(files)
}

pub fn predict(a: &args::Predict) -> Result<()> {
    let files = collect_inputs(&a.input)?;
    fs::create_dir_all(&a.out)?;
    let mut net: Option<Network<f32>> = None;
    for file in files {
        let image = data::read_ppm(&file).with_context(|| format!("cannot read {}", file.display()))?;
        let (h, w) = (image.shape()[1], image.shape()[2]);
        if net.as_ref().is_none_or(|n| (n.spec().height(), n.spec().width()) != (h, w)) {
            net = Some(load_network(&a.checkpoint, h, w)?);
        }
        let net = net.as_mut().expect("set above");
        let batch = image.reshape(&[1, 3, h, w])?;
        let labels = net.predict(&batch)?;
        let palette = data::default_palette(net.spec().num_classes())?;
        let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
        let out = a.out.join(format!("{stem}_pred.ppm"));
        data::write_ppm(&out, &data::colorize(&labels, &palette)?)?;
        println!("{} -> {}", file.display(), out.display());
    }
    Ok(())
}

pub fn bench(a: &args::Bench) -> Result<()> {
    if a.repeats == 0 || a.batch == 0 {
        bail!(lednet_core::Error::Config("repeats and batch must be positive".into()));
    }
    let spec = spec_for(&a.shape)?;
    let mut net = Network::<f32>::new(spec, a.seed)?;
    let x = Tensor::<f32>::create(
        &[a.batch, 3, a.shape.height, a.shape.width],
        Fill::Uniform {
            seed: a.seed,
            lo: 0.0,
            hi: 1.0,
        },
    )?;
    let warm = net.infer(&x)?;
    println!("output shape {:?}", warm.shape());
    let mut times = Vec::with_capacity(a.repeats);
    for i in 0..a.repeats {
        let t = Instant::now();
        net.infer(&x)?;
        let ms = t.elapsed().as_secs_f64() * 1e3;
        println!("run {i}: {ms:.2} ms");
        times.push(ms);
    }
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    let min = times.iter().copied().fold(f64::INFINITY, f64::min);
    println!(
        "mean_ms={mean:.2} min_ms={min:.2} fps={:.2} (batch {})",
        1000.0 / mean * a.batch as f64,
        a.batch
    );
    Ok(())
}
