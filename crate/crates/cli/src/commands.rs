//! The seven experiment commands.

use std::io::Write;
use std::path::Path;

use uavpred::dataset::{
    self, derive_velocity, read_trajectory_csv, resample, split, window, write_trajectory_csv,
    Channel, SampledTrajectory, SegmentSet,
};
use uavpred::metrics::{evaluate, report_table, MetricsReport, TableLayout};
use uavpred::model::{
    load_checkpoint, model_predict, save_checkpoint, NormStatsRef,
};
use uavpred::normalize::{fit_stats, load_stats, normalize_set, save_stats};
use uavpred::numerics::{derive_seed, Rng};
use uavpred::stream::{
    run_stream_sim, write_records_csv, ChannelMode, Predictor, StreamSource,
};
use uavpred::train::train_loop;
use uavpred::trajgen::{generate_trajectory, sample_params, TrajectoryKind};

use crate::config::{
    config_snapshot, ExperimentConfig, SEED_STREAM_GENERATE, SEED_STREAM_SIM, SEED_STREAM_SPLIT,
};
use crate::CliError;

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path)
        .map_err(|e| CliError::data(format!("cannot create {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)
        .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

/// Config snapshot, seed, version, and timestamp. Lives under `meta/`
/// so every other artifact is byte-identical across reruns.
pub fn write_run_metadata(config: &ExperimentConfig, command: &str) -> Result<(), CliError> {
    let dir = config.out_dir.join("meta");
    ensure_dir(&dir)?;
    let unix_time = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut text = String::new();
    text.push_str(&format!("command = \"{command}\"\n"));
    text.push_str(&format!(
        "version = \"{}\"\n",
        env!("CARGO_PKG_VERSION")
    ));
    text.push_str(&format!("unix_time = {unix_time}\n\n[config]\n"));
    // Indent the snapshot under a [config] table by reusing its own keys.
    let snapshot = config_snapshot(config);
    let indented = snapshot.replace("\n[", "\n[config.");
    text.push_str(&indented);
    write_text(&dir.join(format!("{command}.toml")), &text)
}

pub fn cmd_generate(config: &ExperimentConfig) -> Result<(), CliError> {
    let bounds = config.bounds.to_bounds();
    bounds.validate()?;
    let dir = config.trajectories_dir();
    ensure_dir(&dir)?;
    let gen_seed = derive_seed(config.seed, SEED_STREAM_GENERATE);

    let fixed_kind = match config.dataset.kinds.as_str() {
        "both" => None,
        other => Some(
            other
                .parse::<TrajectoryKind>()
                .map_err(|e| CliError::data(format!("dataset.kinds: {e}")))?,
        ),
    };

    let mut manifest = String::new();
    manifest.push_str(&format!(
        "count = {}\nduration = {}\nts = {}\nseed = {}\n",
        config.dataset.n_trajectories, config.dataset.duration, config.dataset.ts, config.seed
    ));
    for i in 0..config.dataset.n_trajectories {
        let mut rng = Rng::new(derive_seed(gen_seed, i as u64));
        let kind = fixed_kind.unwrap_or_else(|| {
            if rng.uniform_unit() < 0.5 {
                TrajectoryKind::Circle
            } else {
                TrajectoryKind::Infinity
            }
        });
        let params = sample_params(&mut rng, &bounds, kind)?;
        let traj = generate_trajectory(&params, config.dataset.duration, config.dataset.ts)?;
        let name = format!("traj_{i:05}.csv");
        write_trajectory_csv(&traj, &dir.join(&name))?;
        manifest.push_str(&format!("trajectory = {name},{kind}\n"));
    }
    write_text(&dir.join("manifest.txt"), &manifest)?;
    println!(
        "generated {} trajectories under {}",
        config.dataset.n_trajectories,
        dir.display()
    );
    Ok(())
}

/// Trajectory file names in manifest order.
fn manifest_entries(config: &ExperimentConfig) -> Result<Vec<String>, CliError> {
    let path = config.trajectories_dir().join("manifest.txt");
    let text = std::fs::read_to_string(&path).map_err(|e| {
        CliError::data(format!(
            "cannot read {} (run `generate` first): {e}",
            path.display()
        ))
    })?;
    let mut names = Vec::new();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("trajectory = ") {
            let name = rest.split(',').next().unwrap_or(rest);
            names.push(name.trim().to_string());
        }
    }
    if names.is_empty() {
        return Err(CliError::data(format!(
            "{} lists no trajectories",
            path.display()
        )));
    }
    Ok(names)
}

fn load_channel_trajectory(
    config: &ExperimentConfig,
    name: &str,
    channel: Channel,
) -> Result<SampledTrajectory, CliError> {
    let path = config.trajectories_dir().join(name);
    let traj = read_trajectory_csv(&path, Channel::Position)?;
    let gridded = resample(&traj, config.dataset.ts)?;
    Ok(match channel {
        Channel::Position => gridded,
        Channel::Velocity => derive_velocity(&gridded)?,
    })
}

pub fn cmd_segment(config: &ExperimentConfig) -> Result<(), CliError> {
    let names = manifest_entries(config)?;
    for channel in config.channels()? {
        let mut set = SegmentSet::new(
            config.dataset.ts,
            channel,
            config.dataset.in_len,
            config.dataset.out_len,
        );
        for (i, name) in names.iter().enumerate() {
            let traj = load_channel_trajectory(config, name, channel)?;
            set.pairs.extend(window(
                &traj,
                config.dataset.in_len,
                config.dataset.out_len,
                config.dataset.stride,
                i as u64,
            ));
        }
        let (train, val, test) = split(
            &set,
            config.dataset.train_frac,
            config.dataset.val_frac,
            derive_seed(config.seed, SEED_STREAM_SPLIT),
        )?;
        for (split_name, subset) in [("train", &train), ("val", &val), ("test", &test)] {
            dataset::save_segment_set(subset, &config.segments_dir(channel, split_name))?;
        }
        println!(
            "{channel}: {} pairs -> train {} / val {} / test {}",
            set.len(),
            train.len(),
            val.len(),
            test.len()
        );
    }
    Ok(())
}

pub fn cmd_fit_norm(config: &ExperimentConfig) -> Result<(), CliError> {
    let names = manifest_entries(config)?;
    let method = config.norm_method()?;
    ensure_dir(&config.out_dir.join("stats"))?;
    for channel in config.channels()? {
        let mut points = Vec::new();
        for name in &names {
            points.extend(load_channel_trajectory(config, name, channel)?.points);
        }
        let stats = fit_stats(&points, method, channel)?;
        let path = config.stats_path(channel, method);
        save_stats(&stats, &path)?;
        println!(
            "{channel}/{method}: fit over {} points -> {}",
            points.len(),
            path.display()
        );
    }
    Ok(())
}

pub fn cmd_train(config: &ExperimentConfig) -> Result<(), CliError> {
    let channel = config.channel()?;
    if config.dataset.channel == "both" {
        return Err(CliError::data(
            "train needs dataset.channel of 'position' or 'velocity'",
        ));
    }
    let method = config.norm_method()?;
    let stats = load_stats(&config.stats_path(channel, method))
        .map_err(|e| CliError::data(format!("stats (run `fit-norm` first): {e}")))?;
    let train_set = dataset::load_segment_set(&config.segments_dir(channel, "train"))
        .map_err(|e| CliError::data(format!("train segments (run `segment` first): {e}")))?;
    let val_set = dataset::load_segment_set(&config.segments_dir(channel, "val"))
        .map_err(|e| CliError::data(format!("val segments (run `segment` first): {e}")))?;
    let train_norm = normalize_set(&train_set, &stats)?;
    let val_norm = normalize_set(&val_set, &stats)?;

    let mconfig = config.model_config();
    let tconfig = config.train_config();
    let (best, history) = train_loop(&train_norm, &val_norm, &mconfig, &tconfig)?;

    let model_id = config.model_id(channel, method);
    ensure_dir(&config.out_dir.join("models"))?;
    save_checkpoint(
        &best,
        &mconfig,
        &NormStatsRef::of(&stats),
        &config.checkpoint_path(&model_id),
    )?;
    history.write_csv(&config.history_path(&model_id))?;
    println!(
        "{model_id}: best epoch {} (val loss {:.3e}), stopped at epoch {} ({})",
        history.best_epoch, history.best_val_loss, history.stop_epoch, history.stop_reason
    );
    Ok(())
}

pub fn cmd_evaluate(config: &ExperimentConfig) -> Result<(), CliError> {
    let channel = config.channel()?;
    let method = config.norm_method()?;
    let model_id = config.model_id(channel, method);
    let ckpt = load_checkpoint(&config.checkpoint_path(&model_id))
        .map_err(|e| CliError::data(format!("checkpoint (run `train` first): {e}")))?;
    let stats = load_stats(&config.stats_path(channel, method))?;
    if !ckpt.stats_ref.matches(&stats) {
        return Err(CliError::data(
            "stats file does not match the checkpoint fingerprint",
        ));
    }
    let test_set = dataset::load_segment_set(&config.segments_dir(channel, "test"))
        .map_err(|e| CliError::data(format!("test segments (run `segment` first): {e}")))?;
    let test_norm = normalize_set(&test_set, &stats)?;

    let mut preds = Vec::with_capacity(test_norm.len());
    let mut targets = Vec::with_capacity(test_norm.len());
    for pair in &test_norm.pairs {
        preds.push(model_predict(&pair.input, &ckpt.params, &ckpt.config)?);
        targets.push(pair.target.clone());
    }
    let report = evaluate(&preds, &targets)?.for_model(
        &model_id,
        channel,
        method,
        ckpt.config.hidden_dim,
        ckpt.config.num_layers,
    );
    ensure_dir(&config.reports_dir())?;
    let (text, csv) = report_table(std::slice::from_ref(&report), TableLayout::Grid);
    write_text(
        &config.reports_dir().join(format!("eval_{model_id}.csv")),
        &csv,
    )?;
    print!("{text}");
    Ok(())
}

pub fn cmd_stream_sim(config: &ExperimentConfig) -> Result<(), CliError> {
    let channel = config.channel()?;
    let method = config.norm_method()?;
    let model_id = config.model_id(channel, method);
    let ckpt = load_checkpoint(&config.checkpoint_path(&model_id))
        .map_err(|e| CliError::data(format!("checkpoint (run `train` first): {e}")))?;
    let stats = load_stats(&config.stats_path(channel, method))?;
    let mode = match channel {
        Channel::Position => ChannelMode::PositionModel,
        Channel::Velocity => ChannelMode::VelocityModel,
    };
    let mut predictor = Predictor::new(ckpt, stats, mode, config.dataset.ts)?;
    let source = StreamSource::Params {
        params: config.sim_params()?,
        duration: config.stream.duration,
    };
    let output = run_stream_sim(
        &source,
        &mut predictor,
        config.stream.jitter,
        derive_seed(config.seed, SEED_STREAM_SIM),
        config.stream.window,
    )?;

    ensure_dir(&config.stream_dir())?;
    write_records_csv(
        &output,
        &config.stream_dir().join(format!("{model_id}_records.csv")),
    )?;
    let summary = format!(
        "model_id = {model_id}\naverage_rmse = {}\nrecords_averaged = {}\npartial = {}\n",
        output.report.mean_rmse, output.report.count, output.report.partial
    );
    write_text(
        &config.stream_dir().join(format!("{model_id}_summary.txt")),
        &summary,
    )?;
    println!(
        "{model_id}: average RMSE {:.4} over {} records{}",
        output.report.mean_rmse,
        output.report.count,
        if output.report.partial {
            " (fewer than the rolling window)"
        } else {
            ""
        }
    );
    Ok(())
}

/// Reads one `eval_*.csv` written by `cmd_evaluate` back into reports.
fn parse_report_csv(path: &Path) -> Result<Vec<MetricsReport>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    let mut reports = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 11 {
            return Err(CliError::data(format!(
                "{}:{}: expected 11 fields",
                path.display(),
                idx + 1
            )));
        }
        let num = |s: &str| -> Result<f64, CliError> {
            s.parse()
                .map_err(|e| CliError::data(format!("{}:{}: {e}", path.display(), idx + 1)))
        };
        let opt_num = |s: &str| -> Result<Option<f64>, CliError> {
            if s == "NA" {
                Ok(None)
            } else {
                num(s).map(Some)
            }
        };
        reports.push(MetricsReport {
            model_id: fields[0].to_string(),
            channel: fields[1].parse().ok(),
            norm_method: fields[2].parse().ok(),
            hidden_dim: fields[3].parse().unwrap_or(0),
            num_layers: fields[4].parse().unwrap_or(0),
            mse: num(fields[5])?,
            rmse: num(fields[6])?,
            mae: num(fields[7])?,
            r2: opt_num(fields[8])?,
            adjusted_r2: opt_num(fields[9])?,
            n_samples: fields[10].parse().unwrap_or(0),
            per_axis_mse: [0.0; 3],
        });
    }
    Ok(reports)
}

pub fn cmd_report(config: &ExperimentConfig) -> Result<(), CliError> {
    let dir = config.reports_dir();
    let mut paths: Vec<_> = std::fs::read_dir(&dir)
        .map_err(|e| {
            CliError::data(format!(
                "cannot list {} (run `evaluate` first): {e}",
                dir.display()
            ))
        })?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("eval_") && n.ends_with(".csv"))
        })
        .collect();
    paths.sort();
    let mut reports = Vec::new();
    for path in &paths {
        reports.extend(parse_report_csv(path)?);
    }
    if reports.is_empty() {
        return Err(CliError::data(format!(
            "no eval_*.csv reports under {}",
            dir.display()
        )));
    }
    let (grid_text, csv) = report_table(&reports, TableLayout::Grid);
    let (cmp_text, _) = report_table(&reports, TableLayout::Comparison);
    write_text(&dir.join("report.csv"), &csv)?;
    let mut combined = grid_text.clone();
    combined.push('\n');
    combined.push_str(&cmp_text);
    write_text(&dir.join("report.txt"), &combined)?;
    print!("{grid_text}");
    std::io::stdout()
        .flush()
        .map_err(|e| CliError::data(e.to_string()))
}
