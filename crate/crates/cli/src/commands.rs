use std::fs;
use std::path::{Path, PathBuf};

use gaitlab_core::data::{load_manifest, write_atomic, write_manifest, Activity, Dataset, Group};
use gaitlab_core::dl::{cnn_predict, cnn_train, CnnSpec};
use gaitlab_core::dsp::{segment, WindowBatch};
use gaitlab_core::eval::{
    group_stats, render_report, render_table2, run_experiment_with, write_scatter_csv, EvalReport, ExperimentConfig,
    Method,
};
use gaitlab_core::features::{feature_table, FeatureTable};
use gaitlab_core::ml::{self, DesignMatrix, Hyperparameters, ModelKind, ProjectionKind};
use gaitlab_core::synth::{gen_cohort, CohortSpec};
use gaitlab_ingest::{Server, ServerConfig};
use serde::Serialize;
use serde_json::{json, Value};

use crate::{invalid, runtime, Cli, CliError, Command, DataArgs, EvalArgs, Preset, ReportArgs, ServeArgs, StatsArgs, SynthArgs, TrainArgs};

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(invalid("--threads must be at least 1"));
        }
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            log::debug!("thread pool already configured");
        }
    }
    match &cli.command {
        Command::Synth(a) => synth(cli, a),
        Command::Serve(a) => serve(cli, a),
        Command::Extract(a) => extract(cli, &a.io, a),
        Command::Stats(a) => stats(cli, a),
        Command::Train(a) => train(cli, a),
        Command::Eval(a) => eval(cli, a),
        Command::Report(a) => report(cli, a),
    }
}

/// Rebuilds a command line from serialized arguments: every field becomes
/// `--field-name=value`, repeated for lists.
fn argv_of(cli: &Cli, config: &Value) -> Vec<String> {
    fn push(out: &mut Vec<String>, flag: &str, v: &Value) {
        match v {
            Value::Null => {}
            Value::Array(items) => items.iter().for_each(|i| push(out, flag, i)),
            Value::String(s) => out.push(format!("--{flag}={s}")),
            other => out.push(format!("--{flag}={other}")),
        }
    }
    let mut argv = vec!["gaitlab".to_string()];
    if let Some(n) = cli.threads {
        argv.push(format!("--threads={n}"));
    }
    argv.push(cli.command.name().to_string());
    if let Value::Object(map) = config {
        for (k, v) in map {
            push(&mut argv, &k.replace('_', "-"), v);
        }
    }
    argv
}

/// Writes `run.json`: the resolved configuration and an argv that replays it.
fn write_run_json(cli: &Cli, out: &Path, args: &impl Serialize, outputs: &[&str]) -> Result<(), CliError> {
    let config = serde_json::to_value(args).map_err(runtime)?;
    let run = json!({
        "tool": "gaitlab",
        "version": env!("CARGO_PKG_VERSION"),
        "subcommand": cli.command.name(),
        "seed": config.get("seed"),
        "config": config,
        "argv": argv_of(cli, &config),
        "cwd": std::env::current_dir().ok(),
        "threads": cli.threads,
        "outputs": outputs,
    });
    write_json(&out.join("run.json"), &run)
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(v).map_err(runtime)?;
    text.push('\n');
    write_atomic(path, text.as_bytes()).map_err(runtime)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    write_atomic(path, text.as_bytes()).map_err(runtime)
}

fn manifest_path(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join("manifest.json")
    } else {
        data.to_path_buf()
    }
}

/// Checks the dataset exists and the output directory is not the dataset
/// directory, before any work starts.
fn check_io(io: &DataArgs) -> Result<PathBuf, CliError> {
    let manifest = manifest_path(&io.data);
    if !manifest.is_file() {
        return Err(invalid(format!(
            "--data {}: no manifest found (expected {})",
            io.data.display(),
            manifest.display()
        )));
    }
    let data_dir = manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
    if let (Ok(a), Ok(b)) = (fs::canonicalize(&data_dir), fs::canonicalize(&io.out)) {
        if a == b {
            return Err(invalid("--out must differ from the dataset directory; inputs are never modified"));
        }
    }
    if io.out.exists() && !io.out.is_dir() {
        return Err(invalid(format!("--out {} exists and is not a directory", io.out.display())));
    }
    Ok(manifest)
}

fn load(manifest: &Path) -> Result<Dataset, CliError> {
    load_manifest(manifest).map_err(runtime)
}

fn synth(cli: &Cli, a: &SynthArgs) -> Result<(), CliError> {
    if a.per_group == 0 {
        return Err(invalid("--per-group must be at least 1"));
    }
    let mut spec = match a.preset {
        Preset::PaperShape => CohortSpec::paper_shape(),
        Preset::Null => CohortSpec::null(),
    };
    spec.six_minute_s = a.six_minute_s;
    spec.noise_ratio = a.noise_ratio;
    spec.validate().map_err(invalid)?;
    if a.out.exists() && !a.out.is_dir() {
        return Err(invalid(format!("--out {} exists and is not a directory", a.out.display())));
    }
    let activities = if a.activity.is_empty() { Activity::ALL.to_vec() } else { a.activity.clone() };
    let dataset = gen_cohort(&spec, a.per_group, &activities, a.seed).map_err(runtime)?;
    write_manifest(&dataset, &a.out.join("manifest.json")).map_err(runtime)?;
    write_run_json(cli, &a.out, a, &["manifest.json", "recordings/"])?;
    println!(
        "wrote {} participants and {} recordings to {}",
        dataset.participants.len(),
        dataset.recordings.len(),
        a.out.display()
    );
    Ok(())
}

fn serve(cli: &Cli, a: &ServeArgs) -> Result<(), CliError> {
    let config = ServerConfig {
        bind: a.bind.clone(),
        storage_root: a.storage_root.clone(),
        max_sessions: a.max_sessions,
    };
    config.validate().map_err(invalid)?;
    let server = Server::bind(&config).map_err(runtime)?;
    write_run_json(cli, &a.storage_root, a, &["manifest.json", "recordings/"])?;
    let handle = server.shutdown_handle();
    ctrlc::set_handler(move || handle.shutdown()).map_err(runtime)?;
    eprintln!("listening on {} (storage {})", server.local_addr(), a.storage_root.display());
    server.run().map_err(runtime)
}

fn features_with_report(ds: &Dataset) -> FeatureTable {
    let table = feature_table(ds);
    for f in &table.failures {
        log::warn!("{}/{}: {}", f.participant_id, f.activity, f.error);
    }
    table
}

fn scatter(table: &FeatureTable) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    write_scatter_csv(table, &mut buf).map_err(runtime)?;
    Ok(buf)
}

fn extract(cli: &Cli, io: &DataArgs, args: &impl Serialize) -> Result<(), CliError> {
    let manifest = check_io(io)?;
    let ds = load(&manifest)?;
    let table = features_with_report(&ds);
    let mut csv = Vec::new();
    table.write_csv(&mut csv).map_err(runtime)?;
    write_atomic(&io.out.join("features.csv"), &csv).map_err(runtime)?;
    write_json(&io.out.join("features.json"), &table)?;
    write_atomic(&io.out.join("scatter.csv"), &scatter(&table)?).map_err(runtime)?;
    write_run_json(cli, &io.out, args, &["features.csv", "features.json", "scatter.csv"])?;
    println!(
        "extracted {} feature rows ({} failures) into {}",
        table.rows.len(),
        table.failures.len(),
        io.out.display()
    );
    Ok(())
}

fn stats(cli: &Cli, a: &StatsArgs) -> Result<(), CliError> {
    let manifest = check_io(&a.io)?;
    let ds = load(&manifest)?;
    let table = features_with_report(&ds);
    let blocks = group_stats(&table);
    let text = render_table2(&blocks);
    write_text(&a.io.out.join("table2.txt"), &text)?;
    write_json(&a.io.out.join("stats.json"), &blocks)?;
    write_atomic(&a.io.out.join("scatter.csv"), &scatter(&table)?).map_err(runtime)?;
    write_run_json(cli, &a.io.out, a, &["table2.txt", "stats.json", "scatter.csv"])?;
    print!("{text}");
    Ok(())
}

fn check_method_flags(method: Method, has_model: bool, has_tw: bool, projection_set: bool) -> Result<(), CliError> {
    let name = method.as_str().to_ascii_lowercase();
    if method.is_raw() && !has_tw {
        return Err(invalid(format!("--method {name} requires --tw (window length)")));
    }
    if !method.is_raw() && has_tw {
        return Err(invalid("--tw only applies to cml-raw and dl-raw"));
    }
    if method == Method::DlRaw && has_model {
        return Err(invalid("--model does not apply to dl-raw (the CNN is fixed)"));
    }
    if method == Method::DlRaw && projection_set {
        return Err(invalid("--projection does not apply to dl-raw"));
    }
    if method != Method::DlRaw && !has_model {
        return Err(invalid(format!("--method {name} requires --model")));
    }
    Ok(())
}

fn train(cli: &Cli, a: &TrainArgs) -> Result<(), CliError> {
    check_method_flags(a.method, a.model.is_some(), a.tw.is_some(), a.projection != ProjectionKind::None)?;
    if a.cnn_epochs == 0 {
        return Err(invalid("--cnn-epochs must be at least 1"));
    }
    let manifest = check_io(&a.io)?;
    let ds = load(&manifest)?;
    let group_of = |id: &str| ds.participant(id).map(|p| p.group).ok_or_else(|| runtime(format!("unknown participant {id}")));

    let seed = gaitlab_core::seed::derive(a.seed, &[gaitlab_core::seed::tag("train")]);
    let (outputs, accuracy) = match a.method {
        Method::CmlCf => {
            let table = features_with_report(&ds);
            let rows: Vec<_> = table.rows_of(a.activity).collect();
            let x: Vec<Vec<f64>> = rows.iter().map(|r| r.extraction.features.reported().to_vec()).collect();
            let y: Vec<Group> = rows.iter().map(|r| r.group).collect();
            let ids = rows.iter().map(|r| r.participant_id.clone()).collect();
            let names = gaitlab_core::FeatureVector::NAMES.iter().map(|s| s.to_string()).collect();
            fit_ml(a, DesignMatrix::new(x, y, ids, names).map_err(runtime)?, seed)?
        }
        Method::CmlRaw => {
            let batch = activity_windows(&ds, a.activity, a.tw.expect("checked"))?;
            let x: Vec<Vec<f64>> = batch.flattened();
            let y = batch.provenance.iter().map(|o| group_of(&o.participant_id)).collect::<Result<Vec<_>, _>>()?;
            let ids = batch.provenance.iter().map(|o| o.participant_id.clone()).collect();
            let names = (0..x.first().map_or(0, Vec::len)).map(|j| format!("c{j}")).collect();
            fit_ml(a, DesignMatrix::new(x, y, ids, names).map_err(runtime)?, seed)?
        }
        Method::DlRaw => {
            let batch = activity_windows(&ds, a.activity, a.tw.expect("checked"))?;
            let y = batch.provenance.iter().map(|o| group_of(&o.participant_id)).collect::<Result<Vec<_>, _>>()?;
            let mut spec = CnnSpec::new(a.tw.expect("checked"));
            spec.epochs = a.cnn_epochs;
            let model = cnn_train(&spec, &batch.windows, &y, seed).map_err(runtime)?;
            let pred = cnn_predict(&model, &batch.windows).map_err(runtime)?;
            let pred: Vec<Group> = pred.into_iter().map(ml::label_of).collect();
            fs::create_dir_all(&a.io.out).map_err(runtime)?;
            model.save(&a.io.out, "cnn").map_err(runtime)?;
            (vec!["cnn.json", "cnn.bin"], ml::accuracy(&pred, &y))
        }
    };
    let mut all_outputs = outputs.clone();
    all_outputs.push("run.json");
    write_run_json(cli, &a.io.out, a, &outputs)?;
    println!(
        "trained {} on {} ({}); training accuracy {:.2}%; wrote {}",
        a.model.map_or("CNN".to_string(), |m| m.to_string()),
        a.activity,
        a.method,
        accuracy * 100.0,
        all_outputs.join(", ")
    );
    Ok(())
}

fn fit_ml(a: &TrainArgs, data: DesignMatrix, seed: u64) -> Result<(Vec<&'static str>, f64), CliError> {
    let kind = a.model.expect("checked");
    let model = ml::train(kind, a.projection, &data, &Hyperparameters::default(), seed).map_err(runtime)?;
    let pred = ml::predict(&model, &data.rows).map_err(runtime)?;
    let mut text = model.to_json();
    text.push('\n');
    write_atomic(&a.io.out.join("model.json"), text.as_bytes()).map_err(runtime)?;
    Ok((vec!["model.json"], ml::accuracy(&pred, &data.labels)))
}

fn activity_windows(ds: &Dataset, activity: Activity, len: usize) -> Result<WindowBatch, CliError> {
    let mut batch = WindowBatch::empty(len);
    for rec in ds.recordings_of(activity) {
        batch.append(segment(rec, len).map_err(|e| runtime(format!("{}: {e}", rec.label())))?);
    }
    if batch.is_empty() {
        return Err(runtime(format!("no {activity} windows of {len} samples in the dataset")));
    }
    Ok(batch)
}

/// Expands list flags into one experiment configuration per cell group.
fn eval_configs(a: &EvalArgs) -> Result<Vec<ExperimentConfig>, CliError> {
    let models: Vec<ModelKind> = a.model.iter().flat_map(|m| m.0.iter().copied()).collect();
    let projections: Vec<ProjectionKind> = a.projection.iter().flat_map(|p| p.0.iter().copied()).collect();
    let tws: Vec<usize> = a.tw.iter().flat_map(|t| t.0.iter().copied()).collect();
    check_method_flags(
        a.method,
        !models.is_empty(),
        !tws.is_empty(),
        projections.iter().any(|p| *p != ProjectionKind::None),
    )?;
    let models: Vec<Option<ModelKind>> = if a.method == Method::DlRaw {
        vec![None]
    } else {
        dedup(models).into_iter().map(Some).collect()
    };
    let projections: Vec<ProjectionKind> = dedup(projections);
    let tws: Vec<Option<usize>> = if a.method.is_raw() { dedup(tws).into_iter().map(Some).collect() } else { vec![None] };

    let mut hyper = Hyperparameters::default();
    hyper.knn_k = a.knn_k;
    let mut configs = Vec::new();
    for &model in &models {
        for &projection in &projections {
            for &tw in &tws {
                let mut c = ExperimentConfig::new(a.method, model, tw, a.seed);
                c.projection = projection;
                c.hyper = hyper.clone();
                c.cnn_epochs = a.cnn_epochs;
                c.activities = a.activity.clone();
                c.validate().map_err(invalid)?;
                configs.push(c);
            }
        }
    }
    Ok(configs)
}

fn dedup<T: Ord>(mut v: Vec<T>) -> Vec<T> {
    v.sort();
    v.dedup();
    v
}

fn eval(cli: &Cli, a: &EvalArgs) -> Result<(), CliError> {
    let configs = eval_configs(a)?;
    let manifest = check_io(&a.io)?;
    let ds = load(&manifest)?;
    let table = features_with_report(&ds);
    let mut cells = Vec::new();
    for c in &configs {
        log::info!(
            "running {} {} {} tw={:?}",
            c.method,
            c.model_name(),
            c.projection,
            c.window_len
        );
        cells.extend(run_experiment_with(&ds, Some(&table), c).map_err(runtime)?);
    }
    let report = EvalReport::new(cells, group_stats(&table));
    let rendered = render_report(&report);
    write_json(&a.io.out.join("results.json"), &report)?;
    write_text(&a.io.out.join("report.json"), &rendered.json)?;
    write_text(&a.io.out.join("report.txt"), &rendered.text)?;
    write_run_json(cli, &a.io.out, a, &["results.json", "report.json", "report.txt"])?;
    print!("{}", rendered.text);
    Ok(())
}

fn report(cli: &Cli, a: &ReportArgs) -> Result<(), CliError> {
    for p in &a.results {
        if !p.is_file() {
            return Err(invalid(format!("--results {}: no such file", p.display())));
        }
    }
    let mut merged = EvalReport::default();
    for p in &a.results {
        let text = fs::read_to_string(p).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
        let r: EvalReport = serde_json::from_str(&text).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
        merged.merge(r);
    }
    let rendered = render_report(&merged);
    write_text(&a.out.join("report.json"), &rendered.json)?;
    write_text(&a.out.join("report.txt"), &rendered.text)?;
    write_run_json(cli, &a.out, a, &["report.json", "report.txt"])?;
    print!("{}", rendered.text);
    Ok(())
}
