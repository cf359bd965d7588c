use std::io::Write;
use std::path::{Path, PathBuf};

use orthocav::cav::cosine_matrix;
use orthocav::format::{
    history_to_csv, read_activations, read_bundle, read_labels, write_bundle, write_file, write_labels,
    write_matrix, CavBundle, MatrixFormat, Provenance,
};
use orthocav::metrics::evaluate;
use orthocav::orthogonalize::optimize_with_eval;
use orthocav::synth::{conditional_frequency, generate, label_correlation, GeneratorConfig};
use orthocav::{
    fit_all, ActivationMatrix, CavError, CavSet, EarlyExit, FitMethod, Init, LabelMatrix, MetricsSnapshot,
    Optimizer, OrthConfig, SteeringMode,
};

use crate::args::{Cli, Command, EvalArgs, FitArgs, GenArgs, Method, MetricsArgs, Mode, OptimizerArg, OrthArgs, SteerArgs};
use crate::config::{self, FitFile, OrthFile, SteerFile};
use crate::exit::{CliError, CliResult};

pub fn run(cli: Cli, out: &mut impl Write) -> CliResult<()> {
    match cli.command {
        Command::Gen(a) => gen(a, out),
        Command::Fit(a) => fit(a, out),
        Command::Orthogonalize(a) => orthogonalize(a, out),
        Command::Metrics(a) => metrics(a, out),
        Command::Steer(a) => steer(a, out),
    }
}

fn emit(out: &mut impl Write, text: &str) -> CliResult<()> {
    out.write_all(text.as_bytes()).map_err(|source| {
        CliError::Core(CavError::Io {
            path: PathBuf::from("<stdout>"),
            source,
        })
    })
}

fn load_data(activations: &Path, labels: &Path) -> CliResult<(ActivationMatrix, LabelMatrix)> {
    let z = read_activations(activations)?;
    let t = read_labels(labels)?;
    if z.samples() != t.samples() {
        return Err(CavError::InvalidMatrix(format!(
            "{} has {} rows but {} has {}",
            activations.display(),
            z.samples(),
            labels.display(),
            t.samples()
        ))
        .into());
    }
    Ok((z, t))
}

fn load_eval(eval: &EvalArgs, train: &LabelMatrix, dim: usize) -> CliResult<Option<(ActivationMatrix, LabelMatrix)>> {
    let (Some(a), Some(l)) = (&eval.eval_activations, &eval.eval_labels) else {
        return Ok(None);
    };
    let (z, t) = load_data(a, l)?;
    if t.names() != train.names() || z.dim() != dim {
        return Err(CavError::InvalidMatrix("evaluation data does not match training concepts or dimension".into()).into());
    }
    Ok(Some((z, t)))
}

fn check_names(cavs: &CavSet, labels: &LabelMatrix) -> CliResult<()> {
    if cavs.names() != labels.names() {
        return Err(CavError::InvalidMatrix(format!(
            "bundle concepts [{}] do not match label columns [{}]",
            cavs.names().join(","),
            labels.names().join(",")
        ))
        .into());
    }
    Ok(())
}

fn snapshot_table(names: &[String], snap: &MetricsSnapshot) -> String {
    let mut s = String::from("concept,auroc,orthogonality\n");
    for (i, name) in names.iter().enumerate() {
        s += &format!("{name},{:.6},{:.6}\n", snap.per_concept_auroc[i], snap.per_concept_orthogonality[i]);
    }
    s += &format!("macro_auroc,{:.6}\navg_orthogonality,{:.6}\n", snap.macro_auroc, snap.avg_orthogonality);
    s
}

fn gen(args: GenArgs, out: &mut impl Write) -> CliResult<()> {
    let mut cfg: GeneratorConfig = config::parse(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let (z, labels, truth) = generate(&cfg)?;
    write_matrix(&args.out_activations, z.data(), MatrixFormat::from_path(&args.out_activations))?;
    write_labels(&args.out_labels, &labels)?;
    write_matrix(&args.out_truth, &truth.directions, MatrixFormat::from_path(&args.out_truth))?;

    let names = labels.names();
    let mut s = format!("generated k={} n={} m={} seed={}\n", cfg.k, cfg.n, cfg.m, cfg.seed);
    if !cfg.cooccurrence.is_empty() {
        s += "source,target,p,empirical\n";
        for rule in &cfg.cooccurrence {
            let freq = conditional_frequency(&labels, rule.source, rule.target).unwrap_or(f64::NAN);
            s += &format!("{},{},{},{freq:.4}\n", names[rule.source], names[rule.target], rule.p);
        }
    }
    let ruled = |i: usize, j: usize| {
        cfg.cooccurrence
            .iter()
            .any(|r| (r.source, r.target) == (i, j) || (r.source, r.target) == (j, i))
    };
    let free = (0..cfg.n)
        .flat_map(|i| (i + 1..cfg.n).map(move |j| (i, j)))
        .filter(|&(i, j)| !ruled(i, j))
        .map(|(i, j)| label_correlation(&labels, i, j).abs())
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))));
    if let Some(v) = free {
        s += &format!("max_abs_correlation_unconstrained,{v:.4}\n");
    }
    emit(out, &s)
}

fn fit(args: FitArgs, out: &mut impl Write) -> CliResult<()> {
    let file: FitFile = config::load(args.config.as_deref())?;
    let method = match args.method.or(file.method).unwrap_or(Method::Pattern) {
        Method::Pattern => FitMethod::Pattern,
        Method::Ridge => FitMethod::Ridge,
    };
    let (z, labels) = load_data(&args.data.activations, &args.data.labels)?;
    let eval = load_eval(&args.eval, &labels, z.dim())?;
    let cavs = fit_all(&z, &labels, method)?;
    let (ez, el) = eval.as_ref().map_or((&z, &labels), |(a, b)| (a, b));
    let snap = evaluate(&cavs, ez, el, 0)?;
    let bundle = CavBundle::new(
        cavs,
        Provenance {
            fit_method: method.as_str().to_owned(),
            config: vec![("method".into(), method.as_str().to_owned())],
            epochs_run: None,
            final_snapshot: Some(snap.clone()),
        },
    );
    write_bundle(&args.out, &bundle)?;
    emit(out, &snapshot_table(labels.names(), &snap))
}

fn parse_pairs(text: &str, labels: &LabelMatrix) -> CliResult<Vec<(usize, usize)>> {
    let resolve = |s: &str| -> CliResult<usize> {
        let s = s.trim();
        match labels.index_of(s) {
            Ok(i) => Ok(i),
            Err(e) => match s.parse::<usize>() {
                Ok(i) if i < labels.concepts() => Ok(i),
                _ => Err(e.into()),
            },
        }
    };
    text.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let (a, b) = p
                .split_once(':')
                .ok_or_else(|| CliError::Usage(format!("pair `{p}` must look like `a:b`")))?;
            Ok((resolve(a)?, resolve(b)?))
        })
        .collect()
}

fn orthogonalize(args: OrthArgs, out: &mut impl Write) -> CliResult<()> {
    let file: OrthFile = config::load(args.config.as_deref())?;
    let (z, labels) = load_data(&args.data.activations, &args.data.labels)?;
    let eval = load_eval(&args.eval, &labels, z.dim())?;

    let defaults = OrthConfig::default();
    let pairs_text = args.pairs.or(file.pairs).unwrap_or_default();
    let optimizer = match args.optimizer.or(file.optimizer).unwrap_or(OptimizerArg::Gd) {
        OptimizerArg::Gd => Optimizer::GradientDescent,
        OptimizerArg::Adam => Optimizer::adam(),
    };
    let (init, initial, init_label) = match (&args.init, args.random_seed.or(file.random_seed)) {
        (Some(path), _) => {
            let bundle = read_bundle(path)?;
            check_names(&bundle.cavs, &labels)?;
            let label = format!("pretrained:{}", bundle.provenance.fit_method);
            (Init::Pretrained, Some(bundle.cavs), label)
        }
        (None, Some(seed)) => (Init::Random { seed }, None, format!("random:{seed}")),
        (None, None) => return Err(CliError::Usage("give --init <bundle> or --random-seed <n>".into())),
    };
    let cfg = OrthConfig {
        alpha: args.alpha.or(file.alpha).unwrap_or(defaults.alpha),
        learning_rate: args.lr.or(file.lr).unwrap_or(defaults.learning_rate),
        epochs: args.epochs.or(file.epochs).unwrap_or(defaults.epochs),
        init,
        target_pairs: parse_pairs(&pairs_text, &labels)?,
        beta: args.beta.or(file.beta).unwrap_or(defaults.beta),
        eval_every: args.eval_every.or(file.eval_every).unwrap_or(defaults.eval_every),
        early_exit: EarlyExit {
            min_avg_auroc: args.min_avg_auroc.or(file.min_avg_auroc),
            max_avg_drop: args.max_avg_drop.or(file.max_avg_drop),
            max_single_drop: args.max_single_drop.or(file.max_single_drop),
        },
        optimizer,
    };

    let result = optimize_with_eval(&z, &labels, &cfg, initial.as_ref(), eval.as_ref().map(|(a, b)| (a, b)))?;

    let opt = |v: Option<f64>| v.map_or_else(|| "none".to_owned(), |x| format!("{x:?}"));
    let echo = vec![
        ("init".to_owned(), init_label),
        ("alpha".to_owned(), format!("{:?}", cfg.alpha)),
        ("beta".to_owned(), format!("{:?}", cfg.beta)),
        ("pairs".to_owned(), pairs_text),
        ("lr".to_owned(), format!("{:?}", cfg.learning_rate)),
        ("epochs".to_owned(), cfg.epochs.to_string()),
        ("eval_every".to_owned(), cfg.eval_every.to_string()),
        ("min_avg_auroc".to_owned(), opt(cfg.early_exit.min_avg_auroc)),
        ("max_avg_drop".to_owned(), opt(cfg.early_exit.max_avg_drop)),
        ("max_single_drop".to_owned(), opt(cfg.early_exit.max_single_drop)),
        (
            "optimizer".to_owned(),
            match cfg.optimizer {
                Optimizer::GradientDescent => "gd",
                Optimizer::Adam { .. } => "adam",
            }
            .to_owned(),
        ),
    ];
    let last = result.history.last().cloned();
    let bundle = CavBundle::new(
        result.final_cavs.clone(),
        Provenance {
            fit_method: "orthogonalized".into(),
            config: echo,
            epochs_run: Some(result.stop_epoch),
            final_snapshot: last.clone(),
        },
    );
    write_bundle(&args.out, &bundle)?;
    if let Some(path) = &args.history {
        write_file(path, history_to_csv(&result.history, labels.names()).as_bytes())?;
    }

    let first = result.history.first().expect("baseline snapshot");
    let last = last.expect("baseline snapshot");
    let mut s = format!(
        "epochs_run,{}\nstopped_early,{}\nbaseline_macro_auroc,{:.6}\nbaseline_avg_orthogonality,{:.6}\n",
        result.stop_epoch, result.stopped_early, first.macro_auroc, first.avg_orthogonality
    );
    if let Some(rejected) = &result.rejected {
        s += &format!("rejected_epoch,{}\nrejected_macro_auroc,{:.6}\n", rejected.epoch, rejected.macro_auroc);
    }
    s += &snapshot_table(labels.names(), &last);
    emit(out, &s)
}

fn metrics(args: MetricsArgs, out: &mut impl Write) -> CliResult<()> {
    let bundle = read_bundle(&args.bundle)?;
    let (z, labels) = load_data(&args.data.activations, &args.data.labels)?;
    check_names(&bundle.cavs, &labels)?;
    let cos = cosine_matrix(&bundle.cavs)?;
    let snap = evaluate(&bundle.cavs, &z, &labels, 0)?;
    let names = labels.names();

    let mut s = format!("cosine,{}\n", names.join(","));
    for (i, name) in names.iter().enumerate() {
        let row: Vec<String> = (0..names.len()).map(|j| format!("{:?}", cos.get(i, j))).collect();
        s += &format!("{name},{}\n", row.join(","));
    }
    s += "\nconcept,auroc,orthogonality\n";
    for (i, name) in names.iter().enumerate() {
        s += &format!("{name},{:?},{:?}\n", snap.per_concept_auroc[i], snap.per_concept_orthogonality[i]);
    }
    s += &format!("\nmacro_auroc,{:?}\navg_orthogonality,{:?}\n", snap.macro_auroc, snap.avg_orthogonality);
    if let Some(path) = &args.out {
        write_file(path, s.as_bytes())?;
    }
    emit(out, &s)
}

fn sweep_path(base: &Path, index: usize) -> PathBuf {
    let stem = base.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match base.extension() {
        Some(ext) => format!("{stem}_step{index}.{}", ext.to_string_lossy()),
        None => format!("{stem}_step{index}"),
    };
    base.with_file_name(name)
}

fn steer(args: SteerArgs, out: &mut impl Write) -> CliResult<()> {
    let file: SteerFile = config::load(args.config.as_deref())?;
    let bundle = read_bundle(&args.bundle)?;
    let (z, labels) = load_data(&args.data.activations, &args.data.labels)?;
    check_names(&bundle.cavs, &labels)?;
    let target_name = args
        .target
        .or(file.target)
        .ok_or_else(|| CliError::Usage("missing --target".into()))?;
    let target = bundle.cavs.index_of(&target_name)?;
    let mode = args.mode.or(file.mode).ok_or_else(|| CliError::Usage("missing --mode".into()))?;

    let runs: Vec<(SteeringMode, PathBuf)> = match mode {
        Mode::Insert => {
            let sweep = args.sweep.or(file.sweep);
            match (args.step.or(file.step), sweep) {
                (Some(step), None) => vec![(SteeringMode::Insert { step }, args.out.clone())],
                (_, Some(list)) => list
                    .split(',')
                    .enumerate()
                    .map(|(i, v)| {
                        let step: f64 = v
                            .trim()
                            .parse()
                            .map_err(|_| CliError::Usage(format!("sweep value `{}` is not a number", v.trim())))?;
                        Ok((SteeringMode::Insert { step }, sweep_path(&args.out, i)))
                    })
                    .collect::<CliResult<_>>()?,
                (None, None) => return Err(CliError::Usage("insert needs --step or --sweep".into())),
            }
        }
        Mode::Remove => {
            if args.step.is_some() || args.sweep.is_some() {
                return Err(CliError::Usage("--step/--sweep only apply to insert".into()));
            }
            vec![(SteeringMode::Remove { tau: args.tau.or(file.tau) }, args.out.clone())]
        }
    };

    let mut s = String::from("mode,parameter,concept,mean_abs_score_delta\n");
    for (steering, path) in runs {
        let outcome = orthocav::steer(&z, &labels, &bundle.cavs, target, steering)?;
        write_matrix(&path, outcome.edited.data(), MatrixFormat::from_path(&path))?;
        let (mode_name, parameter) = match steering {
            SteeringMode::Insert { step } => ("insert", step),
            SteeringMode::Remove { .. } => ("remove", outcome.tau.expect("removal resolves tau")),
        };
        let report = &outcome.report;
        for (c, name) in labels.names().iter().enumerate() {
            let delta = if c == target {
                report.target_score_delta
            } else {
                report.per_concept_score_delta[c]
            };
            s += &format!("{mode_name},{parameter:?},{name},{delta:?}\n");
        }
        s += &format!("{mode_name},{parameter:?},collateral_sum,{:?}\n", report.collateral());
    }
    if let Some(path) = &args.report {
        write_file(path, s.as_bytes())?;
    }
    emit(out, &s)
}
