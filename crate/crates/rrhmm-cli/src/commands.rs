//! One function per subcommand.

use std::path::{Path, PathBuf};

use nalgebra::DVector;

use rrhmm::diagnostics::{
    eigen_recovery_experiment, l1_error_experiment, leading_eigenvalues, match_eigenvalues,
    EigenCell, EigenRecoveryResult,
};
use rrhmm::hmm::{sample_sequence, sample_triples, SampleMode};
use rrhmm::inference::{filter_update, init_belief, predictive_distribution};
use rrhmm::io::{self, Dataset, TraceRow};
use rrhmm::kde::{estimate_moments_kde, featurize, filter_continuous, KdeConfig};
use rrhmm::moments::{estimate_moments, estimate_moments_stacked, MomentEstimates};
use rrhmm::spectral::{learn as spectral_learn, select_rank, ObservableModel};
use rrhmm::Error;

use crate::manifest::Manifest;
use crate::source::resolve_params;
use crate::{
    CliError, CliResult, EvalArgs, ExperimentArgs, ExperimentName, FilterArgs, GenArgs, GenMode,
    LearnArgs, SimulateArgs,
};

pub fn gen(args: &GenArgs, argv: &[String]) -> CliResult {
    let params = resolve_params(&args.model, args.m)?;
    let mut manifest = Manifest::new("gen", argv);
    manifest
        .arg("model", args.model.clone())
        .arg("m", params.state_count() as u64)
        .arg("seed", args.seed)
        .output(&args.out);
    match (args.n, args.length) {
        (Some(_), Some(_)) => {
            return Err(CliError::Usage(
                "--n and --length are mutually exclusive".into(),
            ))
        }
        (None, None) => return Err(CliError::Usage("one of --n or --length is required".into())),
        (Some(n), None) => {
            let mode = match args.mode {
                GenMode::Restart => SampleMode::Restart,
                GenMode::Sliding => SampleMode::Sliding,
            };
            let triples = sample_triples(&params, n, args.seed, mode)?;
            io::write_triples_csv(&args.out, &triples)?;
            manifest.arg("n", n as u64).arg(
                "mode",
                match args.mode {
                    GenMode::Restart => "restart",
                    GenMode::Sliding => "sliding",
                },
            );
            println!("wrote {} triples to {}", triples.len(), args.out.display());
        }
        (None, Some(length)) => {
            let seq = sample_sequence(&params, length, args.seed);
            io::write_sequence_csv(&args.out, &seq)?;
            manifest.arg("length", length as u64);
            println!("wrote {} symbols to {}", seq.len(), args.out.display());
        }
    }
    manifest.write_for(&args.out)
}

fn infer_alphabet(max_symbol: usize, requested: Option<usize>) -> Result<usize, CliError> {
    match requested {
        Some(n) if n >= max_symbol => Ok(n),
        Some(n) => Err(CliError::Usage(format!(
            "--alphabet {n} is smaller than the largest data symbol {max_symbol}"
        ))),
        None if max_symbol >= 1 => Ok(max_symbol),
        None => Err(CliError::Usage("dataset contains no symbols".into())),
    }
}

/// Continuous datasets are treated as one trajectory; consecutive sliding
/// triples feed the kernel moment estimator.
fn kde_moments(
    points: &[DVector<f64>],
    args: &LearnArgs,
) -> Result<(MomentEstimates, KdeConfig), CliError> {
    if points.len() < 3 {
        return Err(CliError::Usage(
            "continuous learning needs at least 3 points".into(),
        ));
    }
    let config = KdeConfig::from_training(points, args.centers, args.bandwidth)?;
    let triples: Vec<[DVector<f64>; 3]> = points
        .windows(3)
        .map(|w| [w[0].clone(), w[1].clone(), w[2].clone()])
        .collect();
    let moments = estimate_moments_kde(&triples, &config)?;
    Ok((moments, config))
}

pub fn learn(args: &LearnArgs, argv: &[String]) -> CliResult {
    let mut manifest = Manifest::new("learn", argv);
    let mut kde_config: Option<KdeConfig> = None;
    let moments: MomentEstimates = match (&args.moments, &args.data) {
        (Some(_), Some(_)) => {
            return Err(CliError::Usage(
                "--data and --moments are mutually exclusive".into(),
            ))
        }
        (None, None) => {
            return Err(CliError::Usage(
                "one of --data or --moments is required".into(),
            ))
        }
        (Some(path), None) => {
            manifest.input(path);
            MomentEstimates::load(path)?
        }
        (None, Some(path)) => {
            manifest.input(path);
            match io::read_dataset(path)? {
                Dataset::Triples(triples) => {
                    if args.window != 1 {
                        return Err(CliError::Usage(
                            "stacking needs a sequence dataset, not triples".into(),
                        ));
                    }
                    if triples.is_empty() {
                        return Err(CliError::Runtime(Error::EmptyDataset.to_string()));
                    }
                    let max = triples.iter().flatten().copied().max().unwrap_or(0);
                    let n = infer_alphabet(max, args.alphabet)?;
                    estimate_moments(&triples, n)?
                }
                Dataset::Sequence(seq) => {
                    let max = seq.iter().copied().max().unwrap_or(0);
                    let n = infer_alphabet(max, args.alphabet)?;
                    estimate_moments_stacked(&seq, n, args.window)?
                }
                Dataset::Continuous(points) => {
                    let (moments, config) = kde_moments(&points, args)?;
                    kde_config = Some(config);
                    moments
                }
            }
        }
    };

    let selection = select_rank(&moments, args.threshold);
    println!(
        "singular values of P21: {}",
        selection
            .singular_values
            .iter()
            .map(|s| format!("{s:.6e}"))
            .collect::<Vec<_>>()
            .join(" ")
    );
    let k = match args.k {
        Some(k) => {
            let dim = moments.event_space.n_events();
            if k == 0 || k > dim {
                return Err(CliError::Usage(format!(
                    "--k {k} is outside the moment dimension {dim}"
                )));
            }
            k
        }
        None => {
            println!(
                "rank {} selected at threshold {:.1e}",
                selection.chosen_k, selection.threshold_used
            );
            selection.chosen_k
        }
    };

    let model = match spectral_learn(&moments, k) {
        Ok(model) => model.with_normalizer_floor(args.floor),
        Err(err @ Error::DegenerateMoments { .. }) => {
            // The spectrum was already printed above for diagnosis.
            return Err(CliError::Runtime(err.to_string()));
        }
        Err(other) => return Err(other.into()),
    };
    model.save(&args.out)?;
    manifest
        .arg("k", k as u64)
        .arg("alphabet", moments.event_space.n_base() as u64)
        .arg("window", args.window as u64)
        .arg("threshold", args.threshold)
        .arg("floor", args.floor)
        .output(&args.out);
    if let Some(config) = &kde_config {
        let path = kde_config_path(&args.out);
        config.save(&path)?;
        manifest
            .arg("centers", config.n_centers() as u64)
            .arg("bandwidth", config.bandwidth)
            .output(&path);
        println!("wrote kernel config to {}", path.display());
    }
    if let Some(path) = &args.save_moments {
        moments.save(path)?;
        manifest.output(path);
    }
    println!(
        "learned rank-{k} model over {} operators -> {}",
        model.n_base(),
        args.out.display()
    );
    manifest.write_for(&args.out)
}

pub fn kde_config_path(model_path: &Path) -> PathBuf {
    let mut name = model_path
        .file_stem()
        .map(|n| n.to_string_lossy().to_string())
        .unwrap_or_else(|| "model".into());
    name.push_str(".kde.json");
    model_path.with_file_name(name)
}

pub fn eval(args: &EvalArgs, argv: &[String]) -> CliResult {
    let model = ObservableModel::load(&args.model)?;
    let truth = resolve_params(&args.truth, args.m)?;
    let l1 = rrhmm::diagnostics::l1_joint_error(&model, &truth, args.t)?;
    let contraction = model.b_inf().dot(model.b1());
    let true_eigs = leading_eigenvalues(truth.transition(), model.rank());
    let estimated = leading_eigenvalues(&model.summed_operator(), model.rank());
    let matched = match_eigenvalues(&true_eigs, &estimated);

    println!("l1_error_t{}: {l1}", args.t);
    println!("b_inf_dot_b1: {contraction}");
    // Single-model eigen table in the same column layout as the
    // eigen-recovery experiment CSVs.
    let table = EigenRecoveryResult {
        true_eigs,
        cells: vec![EigenCell {
            n: model_sample_label(&model),
            estimates: vec![matched],
        }],
    };
    let eigen_csv = io::eigen_trials_csv("eval", &table);
    print!("{eigen_csv}");

    if let Some(out) = &args.out {
        let mut metrics = String::from("metric,value\n");
        metrics.push_str(&format!("l1_error_t{},{l1}\n", args.t));
        metrics.push_str(&format!("b_inf_dot_b1,{contraction}\n"));
        std::fs::write(out, metrics)?;
        let eigen_path = eigen_csv_path(out);
        std::fs::write(&eigen_path, eigen_csv)?;
        let mut manifest = Manifest::new("eval", argv);
        manifest
            .arg("t", args.t as u64)
            .arg("truth", args.truth.clone())
            .input(&args.model)
            .output(out)
            .output(&eigen_path);
        manifest.write_for(out)?;
    }
    Ok(())
}

fn model_sample_label(_model: &ObservableModel) -> u64 {
    // Model files carry no sample count; the column is kept for layout
    // compatibility with the experiment CSVs.
    0
}

pub fn eigen_csv_path(out: &Path) -> PathBuf {
    let mut name = out
        .file_stem()
        .map(|n| n.to_string_lossy().to_string())
        .unwrap_or_else(|| "eval".into());
    name.push_str(".eigen.csv");
    out.with_file_name(name)
}

pub fn filter(args: &FilterArgs, argv: &[String]) -> CliResult {
    let model = ObservableModel::load(&args.model)?;
    let dataset = io::read_dataset(&args.data)?;
    let mut rows: Vec<TraceRow> = Vec::new();
    let mut state = init_belief(&model);
    match dataset {
        Dataset::Sequence(seq) => {
            for (step, &x) in seq.iter().enumerate() {
                let predictive = predictive_distribution(&model, &state)?;
                state = filter_update(&model, &state, x)?;
                rows.push(TraceRow {
                    step: step + 1,
                    symbol: x,
                    normalizer: state.last_normalizer(),
                    trusted: state.trusted(),
                    predictive: predictive.probs,
                });
            }
        }
        Dataset::Continuous(points) => {
            let config_path = args
                .kde
                .clone()
                .unwrap_or_else(|| kde_config_path(&args.model));
            if !config_path.exists() {
                return Err(CliError::Usage(format!(
                    "continuous stream needs a kernel config; {} not found",
                    config_path.display()
                )));
            }
            let config = KdeConfig::load(&config_path)?;
            for (step, point) in points.iter().enumerate() {
                let sigma = featurize(point, &config, true)?;
                let nearest = sigma.argmax().0 + 1;
                let predictive = predictive_distribution(&model, &state)?;
                state = filter_continuous(&model, &state, point, &config)?;
                rows.push(TraceRow {
                    step: step + 1,
                    symbol: nearest,
                    normalizer: state.last_normalizer(),
                    trusted: state.trusted(),
                    predictive: predictive.probs,
                });
            }
        }
        Dataset::Triples(_) => {
            return Err(CliError::Usage(
                "filtering needs a sequence or continuous stream, not triples".into(),
            ))
        }
    }
    io::write_trace_csv(&args.out, &rows, model.n_base())?;
    println!(
        "filtered {} steps ({} underflows) -> {}",
        rows.len(),
        state.underflow_count(),
        args.out.display()
    );
    let mut manifest = Manifest::new("filter", argv);
    manifest
        .input(&args.model)
        .input(&args.data)
        .arg("underflows", state.underflow_count())
        .output(&args.out);
    manifest.write_for(&args.out)
}

pub fn simulate(args: &SimulateArgs, argv: &[String]) -> CliResult {
    let model = ObservableModel::load(&args.model)?;
    let run = rrhmm::inference::simulate(&model, args.length, args.seed);
    io::write_sequence_csv(&args.out, &run.symbols)?;
    let mut manifest = Manifest::new("simulate", argv);
    manifest
        .input(&args.model)
        .arg("length", args.length as u64)
        .arg("seed", args.seed)
        .arg("aborted", run.aborted)
        .output(&args.out);
    manifest.write_for(&args.out)?;
    if run.aborted {
        return Err(CliError::Runtime(format!(
            "predictive distribution degenerated after {} of {} steps; partial sequence written",
            run.symbols.len(),
            args.length
        )));
    }
    println!(
        "simulated {} symbols -> {}",
        run.symbols.len(),
        args.out.display()
    );
    Ok(())
}

pub fn experiment(args: &ExperimentArgs, argv: &[String]) -> CliResult {
    let params = resolve_params(&args.model, args.m)?;
    let k = args.k.unwrap_or_else(|| params.rank());
    if args.ns.is_empty() {
        return Err(CliError::Usage(
            "--ns must list at least one sample size".into(),
        ));
    }
    std::fs::create_dir_all(&args.out_dir)?;
    let mut manifest = Manifest::new("experiment", argv);
    manifest
        .arg("model", args.model.clone())
        .arg("k", k as u64)
        .arg(
            "ns",
            args.ns
                .iter()
                .map(|n| n.to_string())
                .collect::<Vec<_>>()
                .join(","),
        )
        .arg("trials", args.trials as u64)
        .arg("seed", args.seed);

    match args.name {
        ExperimentName::EigenRecovery => {
            let result = eigen_recovery_experiment(
                &params,
                k,
                &args.ns,
                args.trials,
                args.seed,
                args.window,
            )?;
            let trials_path = args.out_dir.join("eigen_recovery_trials.csv");
            let summary_path = args.out_dir.join("eigen_recovery_summary.csv");
            std::fs::write(
                &trials_path,
                io::eigen_trials_csv("eigen-recovery", &result),
            )?;
            std::fs::write(
                &summary_path,
                io::eigen_summary_csv("eigen-recovery", &result),
            )?;
            manifest
                .arg("name", "eigen-recovery")
                .arg("window", args.window as u64)
                .output(&trials_path)
                .output(&summary_path);
            for s in result.summaries() {
                println!(
                    "N={} eig[{}]: true {:+.6}{:+.6}i, mean {:+.6}{:+.6}i, 95% half-width {:.6}",
                    s.n,
                    s.index,
                    s.true_value.re,
                    s.true_value.im,
                    s.mean.re,
                    s.mean.im,
                    s.half_width
                );
            }
        }
        ExperimentName::L1Curve => {
            let result = l1_error_experiment(&params, k, args.t, &args.ns, args.trials, args.seed)?;
            let trials_path = args.out_dir.join("l1_curve_trials.csv");
            let summary_path = args.out_dir.join("l1_curve_summary.csv");
            std::fs::write(&trials_path, io::l1_trials_csv("l1-curve", &result))?;
            std::fs::write(&summary_path, io::l1_summary_csv("l1-curve", &result))?;
            manifest
                .arg("name", "l1-curve")
                .arg("t", args.t as u64)
                .output(&trials_path)
                .output(&summary_path);
            for cell in &result.cells {
                println!(
                    "N={}: mean L1 over length-{} sequences = {:.6} (stderr {:.6})",
                    cell.n,
                    result.t,
                    cell.mean(),
                    cell.stderr()
                );
            }
        }
    }
    manifest.write_for(&args.out_dir)
}
