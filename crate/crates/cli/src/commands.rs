use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, Context};
use embedspread::bnn::{accuracy, train as train_network, Network, NetworkSpec, TrainConfig};
use embedspread::data::{
    load_bundle, read_features, save_bundle, synth_ood_pair, write_features, Bundle, Dataset, FeatureTable,
};
use embedspread::detectors::DetectorKind;
use embedspread::evaluation::{
    draw_split, feature_columns, render_table, run_experiment, EvalReport, ExperimentConfig,
};
use embedspread::features::{feature_table, mc_runs, FeatureSet, Metric};
use embedspread::numerics::{finite_difference_check, Layer, Tensor};
use embedspread::rng;
use embedspread::simulations::{
    norm_confounding_diagnostic, sim_embedding_norms, sim_feature_correlations, softmax_property_report,
    variance_check, ConfoundingReport,
};
use rand::Rng as _;
use serde::Serialize;

use crate::config::{ConfoundingOptions, DataSource, RunConfig, SynthPart};
use crate::manifest::{manifest_beside, manifest_in, write_json, RunManifest};
use crate::{DataArgs, EvalArgs, FeaturesArgs, GradcheckArgs, SimulateArgs, Study, TrainArgs};

/// Exit code 1 for anything wrong with the request or its inputs, exit
/// code 2 for failures once the work itself has started.
#[derive(Debug)]
pub enum Failure {
    Invalid(Vec<String>),
    Runtime(anyhow::Error),
}

pub type Outcome = Result<(), Failure>;

trait Phase<T> {
    fn invalid(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Phase<T> for Result<T, E> {
    fn invalid(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Invalid(vec![format!("{:#}", e.into())]))
    }

    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

fn check(problems: Vec<String>) -> Outcome {
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Failure::Invalid(problems))
    }
}

/// Core validators report every problem joined by "; ".
fn collect(result: embedspread::Result<()>, section: &str, problems: &mut Vec<String>) {
    if let Err(e) = result {
        let text = e.to_string();
        let text = text.strip_prefix("invalid argument: ").unwrap_or(&text).to_string();
        problems.extend(text.split("; ").map(|p| format!("{section}: {p}")));
    }
}

fn load_config(path: Option<&Path>, problems: &mut Vec<String>) -> RunConfig {
    RunConfig::load(path).unwrap_or_else(|e| {
        problems.push(format!("config {e}"));
        RunConfig::default()
    })
}

fn idx_override(data: &DataArgs) -> Option<DataSource> {
    match (&data.images, &data.labels) {
        (Some(images), Some(labels)) => Some(DataSource::Idx { images: images.clone(), labels: labels.clone() }),
        _ => None,
    }
}

fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).runtime()
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display())).runtime()
}

#[derive(Serialize)]
struct TrainResolved<'a> {
    data: &'a DataSource,
    test_data: Option<&'a DataSource>,
    network: &'a NetworkSpec,
    train: &'a TrainConfig,
}

pub fn train(args: TrainArgs) -> Outcome {
    let mut problems = Vec::new();
    let config_path = args.common.config.as_deref();
    let mut cfg = load_config(config_path, &mut problems);
    if let Some(src) = idx_override(&args.data) {
        cfg.data = Some(src);
    }
    if let Some(seed) = args.common.seed {
        cfg.train.seed = seed;
        cfg.network.set_init_seed(seed);
    }
    if let Some(epochs) = args.epochs {
        cfg.train.epochs = epochs;
    }
    let data_src = cfg.data.clone().unwrap_or_else(|| DataSource::synthetic(SynthPart::Id, 0));
    data_src.check("data", &mut problems);
    if let Some(t) = &cfg.test_data {
        t.check("test_data", &mut problems);
    }
    cfg.network.validate(&mut problems);
    collect(cfg.train.validate(), "train", &mut problems);
    check(problems)?;

    let data = data_src.load().invalid()?;
    let test = cfg.test_data.as_ref().map(DataSource::load).transpose().invalid()?;
    let classes = data.n_classes().max(2);
    let spec = cfg.network.spec(data.item_shape(), classes);
    let net = Network::new(spec.clone()).invalid()?;
    if let Some(t) = &test {
        if t.item_shape() != data.item_shape() {
            return Err(Failure::Invalid(vec![format!(
                "test_data items have shape {:?} but training items have {:?}",
                t.item_shape(),
                data.item_shape()
            )]));
        }
    }

    eprintln!("training on {} items ({} classes, {} epochs)", data.len(), classes, cfg.train.epochs);
    let outcome = train_network(net, &data, &cfg.train).runtime()?;
    let mut log = String::from("epoch,mean_loss,train_accuracy\n");
    for s in &outcome.history {
        eprintln!("epoch {:>3}  loss {:.6}  train accuracy {:.4}", s.epoch, s.mean_loss, s.train_accuracy);
        writeln!(log, "{},{},{}", s.epoch, s.mean_loss, s.train_accuracy).expect("string write");
    }

    let mut bundle = Bundle::new(outcome.network);
    bundle.train_config = Some(cfg.train.clone());
    bundle.history = outcome.history;
    bundle.metadata.insert("train_items".into(), data.len().to_string());
    if let Some(t) = &test {
        let acc = accuracy(&bundle.network, t).runtime()?;
        eprintln!("test accuracy {acc:.4} on {} items", t.len());
        bundle.metadata.insert("test_accuracy".into(), acc.to_string());
    }

    ensure_dir(&args.out)?;
    let model = args.out.join("model.json");
    let log_path = args.out.join("training_log.csv");
    save_bundle(&model, &bundle).runtime()?;
    write_text(&log_path, &log)?;

    let mut manifest = RunManifest::new("train", config_path)
        .seed("init", cfg.network.init_seed())
        .seed("train", cfg.train.seed)
        .resolved(&TrainResolved {
            data: &data_src,
            test_data: cfg.test_data.as_ref(),
            network: &spec,
            train: &cfg.train,
        });
    manifest.inputs = data_src.paths();
    manifest.inputs.extend(cfg.test_data.iter().flat_map(DataSource::paths));
    manifest.outputs = vec![model.clone(), log_path];
    manifest.write(&manifest_in(&args.out, "train")).runtime()?;
    println!("{}", model.display());
    Ok(())
}

pub fn features(args: FeaturesArgs) -> Outcome {
    let mut problems = Vec::new();
    let config_path = args.common.config.as_deref();
    let mut cfg = load_config(config_path, &mut problems);
    let fc = &mut cfg.features;
    if let Some(seed) = args.common.seed {
        fc.seed = seed;
    }
    if let Some(s) = args.samples {
        fc.samples = s;
    }
    if let Some(m) = &args.metric {
        match m.parse::<Metric>() {
            Ok(m) => fc.metric = m,
            Err(e) => problems.push(e.to_string()),
        }
    }
    fc.include_norms |= args.norms;
    if args.no_spread {
        fc.include_spread = false;
    }
    if fc.samples < 2 {
        problems.push(format!("features: samples must be at least 2, got {}", fc.samples));
    }
    let data_src = if let Some(src) = idx_override(&args.data) {
        Some(src)
    } else if let Some(part) = args.synthetic {
        Some(match cfg.data.clone() {
            Some(DataSource::Synthetic { seed, n, dim, params, .. }) => {
                DataSource::Synthetic { part, seed, n, dim, params }
            }
            _ => DataSource::synthetic(part, 0),
        })
    } else {
        cfg.data.clone()
    };
    match &data_src {
        Some(src) => src.check("data", &mut problems),
        None => problems.push("no dataset given: use --images/--labels, --synthetic or a config data section".into()),
    }
    if !args.bundle.is_file() {
        problems.push(format!("bundle: file not found: {}", args.bundle.display()));
    }
    check(problems)?;
    let data_src = data_src.expect("checked above");

    let bundle = load_bundle(&args.bundle).invalid()?;
    let data = data_src.load().invalid()?;
    if data.item_shape() != bundle.network.spec().input_shape.as_slice() {
        return Err(Failure::Invalid(vec![format!(
            "dataset items have shape {:?} but the network expects {:?}",
            data.item_shape(),
            bundle.network.spec().input_shape
        )]));
    }

    let table = feature_table(&bundle.network, &data, &cfg.features).runtime()?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    write_features(&args.out, &table).runtime()?;
    let mut manifest = RunManifest::new("features", config_path)
        .seed("mc", cfg.features.seed)
        .resolved(&serde_json::json!({ "data": data_src, "features": cfg.features }));
    manifest.inputs = vec![args.bundle.clone()];
    manifest.inputs.extend(data_src.paths());
    manifest.outputs = vec![args.out.clone()];
    manifest.write(&manifest_beside(&args.out)).runtime()?;
    eprintln!("{} rows x {} columns", table.len(), table.columns().len());
    println!("{}", args.out.display());
    Ok(())
}

fn load_table(path: &Path, what: &str, problems: &mut Vec<String>) -> Option<FeatureTable> {
    if !path.is_file() {
        problems.push(format!("{what}: file not found: {}", path.display()));
        return None;
    }
    match read_features(path) {
        Ok(t) => Some(t),
        Err(e) => {
            problems.push(format!("{what}: {e}"));
            None
        }
    }
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    experiment: &'a ExperimentConfig,
    id: &'a Path,
    ood_train: &'a Path,
    ood_test: Option<&'a Path>,
    reports: &'a [EvalReport],
}

pub fn eval(args: EvalArgs) -> Outcome {
    let mut problems = Vec::new();
    let config_path = args.common.config.as_deref();
    let mut cfg = load_config(config_path, &mut problems).experiment;
    if let Some(seed) = args.common.seed {
        cfg.seed = seed;
    }
    if let Some(n) = args.n_per_class {
        cfg.n_per_class = n;
    }
    if let Some(r) = args.repetitions {
        cfg.repetitions = r;
    }
    let detectors = match args.detector.as_deref() {
        None => vec![cfg.detector],
        Some("all") => vec![DetectorKind::Lr, DetectorKind::Rf, DetectorKind::If],
        Some(d) => match d.parse::<DetectorKind>() {
            Ok(k) => vec![k],
            Err(e) => {
                problems.push(e.to_string());
                Vec::new()
            }
        },
    };
    let sets = match args.features.as_deref().map(str::to_ascii_lowercase).as_deref() {
        None | Some("all") => vec![FeatureSet::Last, FeatureSet::LastPlusSpread],
        Some(s) => match s.parse::<FeatureSet>() {
            Ok(f) => vec![f],
            Err(e) => {
                problems.push(e.to_string());
                Vec::new()
            }
        },
    };
    collect(cfg.validate(), "experiment", &mut problems);
    let id = load_table(&args.id, "id", &mut problems);
    let ood_train = load_table(&args.ood_train, "ood-train", &mut problems);
    let ood_test = args.ood_test.as_ref().and_then(|p| load_table(p, "ood-test", &mut problems));
    check(problems)?;
    let (id, ood_train) = (id.expect("checked"), ood_train.expect("checked"));

    let mut problems = Vec::new();
    for (what, t) in [("ood-train", Some(&ood_train)), ("ood-test", ood_test.as_ref())] {
        if let Some(t) = t {
            if t.columns() != id.columns() {
                problems.push(format!("{what} columns {:?} do not match id columns {:?}", t.columns(), id.columns()));
            }
        }
    }
    for set in &sets {
        if let Err(e) = feature_columns(id.columns(), *set) {
            problems.push(format!("feature set {set}: {e}"));
        }
    }
    if let Err(e) = draw_split(id.len(), ood_train.len(), cfg.n_per_class, cfg.seed) {
        problems.push(e.to_string());
    }
    check(problems)?;

    let mut reports = Vec::new();
    for set in &sets {
        for kind in &detectors {
            let cell = ExperimentConfig { feature_set: *set, detector: *kind, ..cfg.clone() };
            eprintln!("evaluating {kind} on {set}");
            reports.push(run_experiment(&id, &ood_train, ood_test.as_ref(), &cell).runtime()?);
        }
    }
    let table = render_table(&reports);
    print!("{table}");

    ensure_dir(&args.out)?;
    let report_path = args.out.join("report.json");
    let table_path = args.out.join("report.txt");
    write_json(
        &report_path,
        &EvalOutput {
            experiment: &cfg,
            id: &args.id,
            ood_train: &args.ood_train,
            ood_test: args.ood_test.as_deref(),
            reports: &reports,
        },
    )
    .runtime()?;
    write_text(&table_path, &table)?;
    let mut manifest = RunManifest::new("eval", config_path)
        .seed("experiment", cfg.seed)
        .resolved(&serde_json::json!({ "experiment": cfg, "detectors": detectors, "feature_sets": sets }));
    manifest.inputs = vec![args.id.clone(), args.ood_train.clone()];
    manifest.inputs.extend(args.ood_test.clone());
    manifest.outputs = vec![report_path, table_path];
    manifest.write(&manifest_in(&args.out, "eval")).runtime()?;
    Ok(())
}

#[derive(Serialize)]
struct ConfoundingOutput<'a> {
    options: &'a ConfoundingOptions,
    seed: u64,
    cosine: ConfoundingReport,
    euclidean: ConfoundingReport,
}

fn confounding<'a>(
    opts: &'a ConfoundingOptions,
    bundle: Option<&Path>,
    seed: u64,
) -> Result<ConfoundingOutput<'a>, Failure> {
    let (net, id, ood): (Network, Dataset, Dataset) = match bundle {
        Some(path) => {
            let mut problems = Vec::new();
            if !path.is_file() {
                problems.push(format!("bundle: file not found: {}", path.display()));
            }
            match (&opts.id, &opts.ood) {
                (Some(i), Some(o)) => {
                    i.check("confounding.id", &mut problems);
                    o.check("confounding.ood", &mut problems);
                }
                _ => problems.push("a bundle needs confounding.id and confounding.ood data in the config".into()),
            }
            check(problems)?;
            let b = load_bundle(path).invalid()?;
            let id = opts.id.as_ref().expect("checked").load().invalid()?;
            let ood = opts.ood.as_ref().expect("checked").load().invalid()?;
            (b.network, id, ood)
        }
        None => {
            let mut problems = Vec::new();
            if opts.n < 2 || opts.dim < 2 || opts.epochs == 0 {
                problems.push("confounding: n and dim must be at least 2 and epochs positive".into());
            }
            if !(0.0..1.0).contains(&opts.drop_prob) {
                problems.push(format!("confounding: drop_prob must lie in [0, 1), got {}", opts.drop_prob));
            }
            check(problems)?;
            let (train_id, _) = synth_ood_pair(rng::derive_seed(seed, 0), opts.n, opts.dim).runtime()?;
            let (id, ood) = synth_ood_pair(rng::derive_seed(seed, 1), opts.n, opts.dim).runtime()?;
            let spec = NetworkSpec::mlp(&[opts.dim], &opts.hidden, train_id.n_classes().max(2), opts.drop_prob)
                .with_seed(seed);
            let tc = TrainConfig { epochs: opts.epochs, seed, ..Default::default() };
            let net = train_network(Network::new(spec).runtime()?, &train_id, &tc).runtime()?.network;
            (net, id, ood)
        }
    };
    let layer = opts.layer.unwrap_or(net.n_embeddings() - 1);
    if layer >= net.n_embeddings() {
        return Err(Failure::Invalid(vec![format!(
            "confounding.layer {layer} out of range: the network has {} embeddings",
            net.n_embeddings()
        )]));
    }
    let id_runs = mc_runs(&net, &id, opts.samples, rng::derive_seed(seed, 2)).runtime()?;
    let ood_runs = mc_runs(&net, &ood, opts.samples, rng::derive_seed(seed, 3)).runtime()?;
    let pools = [("id", id_runs.as_slice()), ("ood", ood_runs.as_slice())];
    Ok(ConfoundingOutput {
        options: opts,
        seed,
        cosine: norm_confounding_diagnostic(&pools, layer, Metric::Cosine).runtime()?,
        euclidean: norm_confounding_diagnostic(&pools, layer, Metric::Euclidean).runtime()?,
    })
}

fn study_name(s: Study) -> &'static str {
    match s {
        Study::Norms => "norms",
        Study::Correlations => "correlations",
        Study::Softmax => "softmax",
        Study::Confounding => "confounding",
        Study::Variance => "variance",
    }
}

pub fn simulate(args: SimulateArgs) -> Outcome {
    let mut problems = Vec::new();
    let config_path = args.common.config.as_deref();
    let cfg = load_config(config_path, &mut problems);
    let mut sim = cfg.simulation;
    let mut conf = cfg.confounding;
    if let Some(seed) = args.common.seed {
        sim.seed = seed;
    }
    if let Some(s) = args.samples {
        sim.samples = s;
        conf.samples = s;
    }
    if let Some(i) = args.iterations {
        sim.iterations = i;
    }
    if let Some(d) = args.draws {
        sim.draws = d;
    }
    collect(sim.validate(), "simulation", &mut problems);
    if args.bundle.is_some() && args.study != Study::Confounding {
        problems.push("--bundle is only used by the confounding study".into());
    }
    check(problems)?;

    let name = study_name(args.study);
    let (report, csv) = match args.study {
        Study::Norms => {
            let r = sim_embedding_norms(&sim).runtime()?;
            let mut csv = String::from("placement,layer1_mean,layer1_variance,layer2_mean,layer2_variance\n");
            for row in &r.rows {
                let p = serde_json::to_value(row.placement).runtime()?;
                writeln!(
                    csv,
                    "{},{},{},{},{}",
                    p.as_str().unwrap_or_default(),
                    row.layer1.mean,
                    row.layer1.variance,
                    row.layer2.mean,
                    row.layer2.variance
                )
                .expect("string write");
            }
            (serde_json::to_value(&r), Some(csv))
        }
        Study::Correlations => {
            let r = sim_feature_correlations(&sim).runtime()?;
            let mut csv = format!("feature,{}\n", r.features.join(","));
            for (f, row) in r.features.iter().zip(&r.matrix) {
                let cells: Vec<String> = row.iter().map(f64::to_string).collect();
                writeln!(csv, "{f},{}", cells.join(",")).expect("string write");
            }
            (serde_json::to_value(&r), Some(csv))
        }
        Study::Softmax => (serde_json::to_value(softmax_property_report(args.trials, sim.seed).runtime()?), None),
        Study::Variance => (serde_json::to_value(variance_check(args.cases, sim.draws, sim.seed).runtime()?), None),
        Study::Confounding => {
            let out = confounding(&conf, args.bundle.as_deref(), sim.seed)?;
            let mut csv = String::from("metric,pool,mean_norm,spread\n");
            for r in [&out.cosine, &out.euclidean] {
                for pool in &r.pools {
                    for (norm, spread) in &pool.points {
                        writeln!(csv, "{},{},{norm},{spread}", r.metric, pool.name).expect("string write");
                    }
                }
            }
            (serde_json::to_value(&out), Some(csv))
        }
    };
    let report = report.runtime()?;
    let text = serde_json::to_string_pretty(&report).runtime()?;
    if args.study == Study::Confounding {
        print_confounding(&report);
    } else {
        println!("{text}");
    }

    if let Some(dir) = &args.out {
        ensure_dir(dir)?;
        let json_path = dir.join(format!("{name}.json"));
        write_text(&json_path, &(text + "\n"))?;
        let mut outputs = vec![json_path];
        if let Some(csv) = csv {
            let p = dir.join(format!("{name}.csv"));
            write_text(&p, &csv)?;
            outputs.push(p);
        }
        let mut manifest = RunManifest::new(format!("simulate {name}"), config_path)
            .seed("simulation", sim.seed)
            .resolved(&serde_json::json!({ "simulation": sim, "confounding": conf, "trials": args.trials, "cases": args.cases }));
        manifest.inputs = args.bundle.iter().cloned().collect();
        manifest.outputs = outputs;
        manifest.write(&manifest_in(dir, name)).runtime()?;
    }
    Ok(())
}

fn print_confounding(report: &serde_json::Value) {
    println!("metric     pool  slope         intercept     pearson_r");
    for metric in ["cosine", "euclidean"] {
        for pool in report[metric]["pools"].as_array().into_iter().flatten() {
            println!(
                "{metric:<9}  {:<4}  {:<12.6}  {:<12.6}  {:.4}",
                pool["name"].as_str().unwrap_or_default(),
                pool["slope"].as_f64().unwrap_or(f64::NAN),
                pool["intercept"].as_f64().unwrap_or(f64::NAN),
                pool["pearson_r"].as_f64().unwrap_or(f64::NAN)
            );
        }
    }
}

#[derive(Serialize)]
struct LayerCheck {
    layer: &'static str,
    max_relative_error: f64,
    worst: String,
    coordinates: usize,
    passed: bool,
}

fn random_tensor(shape: &[usize], g: &mut rng::Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| g.random_range(-1.0..1.0)).collect()).expect("shape matches data")
}

/// Values at least 0.1 from zero, so no coordinate straddles the ReLU kink.
fn off_kink(shape: &[usize], g: &mut rng::Rng) -> Tensor {
    let mut t = random_tensor(shape, g);
    for v in t.data_mut() {
        *v = v.signum() * (0.1 + v.abs());
    }
    t
}

fn gradcheck_cases(seed: u64) -> embedspread::Result<Vec<(Layer, Tensor)>> {
    let mut g = rng::seeded(seed);
    Ok(vec![
        (Layer::linear(random_tensor(&[4, 6], &mut g), random_tensor(&[4], &mut g))?, random_tensor(&[6], &mut g)),
        (
            Layer::conv2d(random_tensor(&[3, 2, 3, 3], &mut g), random_tensor(&[3], &mut g), 1)?,
            random_tensor(&[2, 7, 7], &mut g),
        ),
        (Layer::Relu, off_kink(&[12], &mut g)),
        (Layer::MaxPool2d { size: 2 }, random_tensor(&[2, 4, 6], &mut g)),
        (Layer::Flatten, random_tensor(&[2, 3, 3], &mut g)),
    ])
}

pub fn gradcheck(args: GradcheckArgs) -> Outcome {
    if !(args.eps > 0.0 && args.tolerance > 0.0) {
        return Err(Failure::Invalid(vec!["--eps and --tolerance must be positive".into()]));
    }
    let mut results = Vec::new();
    for (layer, input) in gradcheck_cases(args.seed).runtime()? {
        let r = finite_difference_check(&layer, &input, args.eps).runtime()?;
        let passed = r.max_relative_error < args.tolerance;
        println!(
            "{:<10} {}  max relative error {:.3e} at {} ({} coordinates)",
            layer.name(),
            if passed { "ok  " } else { "FAIL" },
            r.max_relative_error,
            r.worst,
            r.coordinates
        );
        results.push(LayerCheck {
            layer: layer.name(),
            max_relative_error: r.max_relative_error,
            worst: r.worst,
            coordinates: r.coordinates,
            passed,
        });
    }
    if let Some(dir) = &args.out {
        ensure_dir(dir)?;
        let path = dir.join("gradcheck.json");
        write_json(&path, &results).runtime()?;
        let mut manifest = RunManifest::new("gradcheck", None)
            .seed("probe", args.seed)
            .resolved(&serde_json::json!({ "eps": args.eps, "tolerance": args.tolerance }));
        manifest.outputs = vec![path];
        manifest.write(&manifest_in(dir, "gradcheck")).runtime()?;
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.layer).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Runtime(anyhow!("gradient check failed for {}", failed.join(", "))))
    }
}
