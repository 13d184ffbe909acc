use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use beta3_irt::error::Error as ModelError;
use beta3_irt::eval::{
    ability_noise_scan, classifier_metrics, compare_models, flag_noisy_items, ComparisonConfig, HoldoutPlan,
    METRIC_COLUMNS,
};
use beta3_irt::icc::{icc_beta3, icc_regime, Ability, Difficulty, Discrimination, BOUND_EPS};
use beta3_irt::mle::{fit_mle, MleConfig};
use beta3_irt::params::Family;
use beta3_irt::rng::derive_seed;
use beta3_irt::synth::{
    inject_label_noise, sample_dataset, simulate_classifier_panel, to_response_matrix, GeneratorSpec,
    PanelMember, PanelSpec,
};
use beta3_irt::vi::{fit_vi_detailed, posterior_point_estimates, ViConfig};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{CliError, Context, Result};
use crate::formats::{self, num, opt_num, IdMap, ParamsFile, PosteriorsFile, Responses, FORMAT_VERSION};
use crate::manifest::{self, Outputs, RunManifest};
use crate::{
    Cli, Command, CompareArgs, DataInput, EvaluateCommand, FitArgs, FitFlags, FlagNoiseArgs, IccArgs, Method,
    MetricsArgs, NoiseScanArgs, PredictArgs, SimulateArgs,
};
use clap::Parser;

/// Runs a command and writes its outputs and manifest.
pub fn dispatch(command: Command, recorded: Vec<String>) -> Result<()> {
    match command {
        Command::Replay(args) => replay(&args.manifest, &args.out).map(|_| ()),
        other => {
            let (outputs, dir) = execute(other)?;
            outputs.write(&dir, recorded)?;
            Ok(())
        }
    }
}

fn execute(command: Command) -> Result<(Outputs, PathBuf)> {
    match command {
        Command::Simulate(a) => Ok((simulate(&a)?, a.out)),
        Command::Fit(a) => Ok((fit(&a)?, a.out)),
        Command::Predict(a) => Ok((predict(&a)?, a.out)),
        Command::Icc(a) => Ok((icc(&a)?, a.out)),
        Command::Evaluate(EvaluateCommand::Compare(a)) => Ok((compare(&a)?, a.out)),
        Command::Evaluate(EvaluateCommand::Metrics(a)) => Ok((metrics(&a)?, a.out)),
        Command::Evaluate(EvaluateCommand::NoiseScan(a)) => Ok((noise_scan(&a)?, a.out)),
        Command::Evaluate(EvaluateCommand::FlagNoise(a)) => Ok((flag_noise(&a)?, a.out)),
        Command::Replay(_) => Err(CliError::Usage("a manifest cannot record a replay".into())),
    }
}

/// Re-executes the command recorded in a manifest into `out` and compares
/// the new output hashes with the recorded ones.
pub fn replay(manifest_path: &Path, out: &Path) -> Result<RunManifest> {
    let recorded: RunManifest = formats::read_json(manifest_path)?;
    manifest::verify_inputs(&recorded)?;
    let mut argv = vec!["beta3-irt".to_string()];
    argv.extend(recorded.command.iter().cloned());
    argv.push("--out".into());
    argv.push(out.display().to_string());
    let cli = Cli::try_parse_from(&argv).map_err(|e| CliError::Replay(format!("recorded command does not parse: {e}")))?;
    let (outputs, dir) = execute(cli.command)?;
    let replayed = outputs.write(&dir, recorded.command.clone())?;
    let differing = manifest::diff_outputs(&recorded, &replayed);
    if !differing.is_empty() {
        return Err(CliError::Replay(format!("outputs differ: {}", differing.join(", "))));
    }
    if replayed != recorded {
        return Err(CliError::Replay("manifest differs from the recorded one".into()));
    }
    Ok(replayed)
}

fn usage(e: ModelError) -> CliError {
    CliError::Usage(e.to_string())
}

fn mle_config(flags: &FitFlags, family: Family) -> Result<MleConfig> {
    for (set, name) in [
        (flags.sigma0.is_some(), "--sigma0"),
        (flags.outer_iters.is_some(), "--outer-iters"),
        (flags.mc_samples.is_some(), "--mc-samples"),
    ] {
        if set {
            return Err(CliError::Usage(format!("{name} applies to variational fits only")));
        }
    }
    let d = MleConfig::default();
    let cfg = MleConfig {
        iterations: flags.iterations.unwrap_or(d.iterations),
        batch_size: flags.batch_size.unwrap_or(d.batch_size),
        clip_epsilon: flags.clip_eps.unwrap_or(d.clip_epsilon),
        seed: flags.seed,
        family,
        ..d
    };
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn vi_config(flags: &FitFlags) -> Result<ViConfig> {
    for (set, name) in [(flags.iterations.is_some(), "--iterations"), (flags.batch_size.is_some(), "--batch-size")] {
        if set {
            return Err(CliError::Usage(format!("{name} applies to maximum-likelihood fits only")));
        }
    }
    let d = ViConfig::default();
    let cfg = ViConfig {
        outer_iterations: flags.outer_iters.unwrap_or(d.outer_iterations),
        mc_samples: flags.mc_samples.unwrap_or(d.mc_samples),
        sigma0: flags.sigma0.unwrap_or(d.sigma0),
        clip_epsilon: flags.clip_eps.unwrap_or(d.clip_epsilon),
        seed: flags.seed,
        ..d
    };
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("serializable")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum SimulationSpec {
    Irt(GeneratorSpec),
    Panel(PanelSimulation),
}

fn two() -> usize {
    2
}

fn twelve() -> Vec<PanelMember> {
    PanelSpec::twelve().members
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PanelSimulation {
    instances: usize,
    #[serde(default = "two")]
    classes: usize,
    #[serde(default = "twelve")]
    members: Vec<PanelMember>,
    /// Share of labels flipped in the written panel.
    #[serde(default)]
    noise_fraction: f64,
    #[serde(default)]
    seed: u64,
}

/// Ground truth of a simulated panel: clean labels and which were flipped.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PanelTruth {
    pub format_version: u32,
    pub classifier_ids: Vec<String>,
    pub instance_ids: Vec<String>,
    pub members: Vec<PanelMember>,
    pub clean_labels: Vec<usize>,
    pub labels: Vec<usize>,
    pub flipped: Vec<bool>,
    pub noise_fraction: f64,
}

/// Stream for the label-noise seed of a simulated panel.
const PANEL_NOISE_STREAM: u64 = 1;

/// Validation failures in a spec file point at the offending key.
fn spec_error(path: &Path, text: &str, e: ModelError) -> CliError {
    match e {
        ModelError::Invalid { field, reason } => {
            let key = field.rsplit('.').next().unwrap_or(field);
            let (line, column) = formats::locate_key(text, key).unwrap_or((1, 1));
            CliError::Parse {
                path: path.display().to_string(),
                line,
                column,
                message: format!("invalid {field}: {reason}"),
            }
        }
        other => CliError::Model { context: path.display().to_string(), source: other },
    }
}

fn simulate(args: &SimulateArgs) -> Result<Outputs> {
    let text = std::fs::read_to_string(&args.spec).map_err(|e| CliError::io(&args.spec, e))?;
    let mut spec: SimulationSpec = formats::parse_json(&args.spec, &text)?;
    if let Some(seed) = args.seed {
        match &mut spec {
            SimulationSpec::Irt(g) => g.seed = seed,
            SimulationSpec::Panel(p) => p.seed = seed,
        }
    }
    let seed = match &spec {
        SimulationSpec::Irt(g) => g.seed,
        SimulationSpec::Panel(p) => p.seed,
    };
    let mut out = Outputs::new(value(&spec), Some(seed));
    out.input(&args.spec)?;
    match spec {
        SimulationSpec::Irt(g) => {
            g.validate().map_err(|e| spec_error(&args.spec, &text, e))?;
            let (data, truth) = sample_dataset(&g).context(|| "simulate".into())?;
            let respondent_ids: Vec<String> = (0..g.respondents).map(|i| format!("r{i}")).collect();
            let item_ids: Vec<String> = (0..g.items).map(|j| format!("i{j}")).collect();
            let responses = Responses { data, respondent_ids: respondent_ids.clone(), item_ids: item_ids.clone() };
            out.add("responses.csv", formats::responses_csv(&responses));
            out.add("ground_truth.json", formats::to_json(&ParamsFile::new(&truth, respondent_ids, item_ids)));
        }
        SimulationSpec::Panel(p) => {
            if !(0.0..=1.0).contains(&p.noise_fraction) {
                return Err(spec_error(
                    &args.spec,
                    &text,
                    ModelError::Invalid { field: "noise_fraction", reason: format!("{} is outside [0, 1]", p.noise_fraction) },
                ));
            }
            let members = PanelSpec { members: p.members.clone() };
            let clean = simulate_classifier_panel(p.instances, p.classes, &members, p.seed)
                .map_err(|e| spec_error(&args.spec, &text, e))?;
            let noise_seed = derive_seed(p.seed, PANEL_NOISE_STREAM);
            let (labels, flipped) = inject_label_noise(clean.labels(), p.noise_fraction, p.classes, noise_seed)
                .context(|| "simulate".into())?;
            let noisy = clean.with_labels(labels.clone()).context(|| "simulate".into())?;
            let truth = PanelTruth {
                format_version: FORMAT_VERSION,
                classifier_ids: clean.classifier_ids().to_vec(),
                instance_ids: clean.instance_ids().to_vec(),
                members: p.members,
                clean_labels: clean.labels().to_vec(),
                labels,
                flipped,
                noise_fraction: p.noise_fraction,
            };
            out.add("panel.csv", formats::panel_csv(&noisy));
            out.add("ground_truth.json", formats::to_json(&truth));
        }
    }
    Ok(out)
}

fn load_input(input: &DataInput, out: &mut Outputs) -> Result<Responses> {
    if let Some(path) = &input.responses {
        out.input(path)?;
        return formats::read_responses(path);
    }
    let path = input.panel.as_ref().expect("clap requires one input");
    out.input(path)?;
    let panel = formats::read_panel(path)?;
    Ok(Responses {
        data: to_response_matrix(&panel).context(|| path.display().to_string())?,
        respondent_ids: panel.classifier_ids().to_vec(),
        item_ids: panel.instance_ids().to_vec(),
    })
}

fn fit(args: &FitArgs) -> Result<Outputs> {
    let family: Family = args.family.into();
    if args.method == Method::Vi && family != Family::Beta3 {
        return Err(CliError::Model {
            context: "fit".into(),
            source: ModelError::UnsupportedCombination("variational inference is defined for the beta3 family only".into()),
        });
    }
    match args.method {
        Method::Mle => {
            let cfg = mle_config(&args.flags, family)?;
            let mut out = Outputs::new(json!({ "method": "mle", "mle": value(&cfg) }), Some(cfg.seed));
            let input = load_input(&args.input, &mut out)?;
            let fit = fit_mle(&input.data, &cfg).context(|| "fit".into())?;
            let params = ParamsFile::new(&fit.params, input.respondent_ids, input.item_ids);
            out.add("params.json", formats::to_json(&params));
            let mut trace = String::from("iteration,loss\n");
            for (t, loss) in fit.loss_trace.iter().enumerate() {
                let _ = writeln!(trace, "{},{}", t + 1, num(*loss));
            }
            out.add("trace.csv", trace.into_bytes());
            Ok(out)
        }
        Method::Vi => {
            let cfg = vi_config(&args.flags)?;
            let mut out = Outputs::new(json!({ "method": "vi", "vi": value(&cfg) }), Some(cfg.seed));
            let input = load_input(&args.input, &mut out)?;
            let fit = fit_vi_detailed(&input.data, &cfg).context(|| "fit".into())?;
            let point = posterior_point_estimates(&fit.posteriors).context(|| "fit".into())?;
            let params = ParamsFile::new(&point, input.respondent_ids.clone(), input.item_ids.clone());
            out.add("params.json", formats::to_json(&params));
            let mut trace = String::from("outer_iteration,local_elbo,global_elbo,local_steps,global_steps\n");
            for (t, (p, o)) in fit.posteriors.elbo_trace.iter().zip(&fit.outer).enumerate() {
                let _ = writeln!(
                    trace,
                    "{},{},{},{},{}",
                    t + 1,
                    num(p.local),
                    num(p.global),
                    o.local.steps,
                    o.global.steps
                );
            }
            out.add("trace.csv", trace.into_bytes());
            let posteriors = PosteriorsFile {
                format_version: FORMAT_VERSION,
                respondent_ids: input.respondent_ids,
                item_ids: input.item_ids,
                posteriors: fit.posteriors,
            };
            out.add("posteriors.json", formats::to_json(&posteriors));
            Ok(out)
        }
    }
}

fn predict(args: &PredictArgs) -> Result<Outputs> {
    let mut out = Outputs::new(json!({ "family": args.family.map(|f| Family::from(f).as_str()) }), None);
    out.input(&args.params)?;
    out.input(&args.pairs)?;
    let (file, params) = ParamsFile::read(&args.params)?;
    if let Some(f) = args.family {
        let expected = Family::from(f);
        if expected != params.family() {
            return Err(CliError::Model {
                context: args.params.display().to_string(),
                source: ModelError::FamilyMismatch { expected: expected.as_str(), found: params.family().as_str() },
            });
        }
    }
    let respondents = IdMap::from_ids(&file.respondent_ids);
    let items = IdMap::from_ids(&file.item_ids);
    let pairs = formats::read_pairs(&args.pairs, &respondents, &items)?;
    let mut csv = String::from("respondent_id,item_id,prediction\n");
    for (rid, iid, i, j) in pairs {
        let p = params.expected(i, j).context(|| "predict".into())?;
        let _ = writeln!(csv, "{rid},{iid},{p:.16e}");
    }
    out.add("predictions.csv", csv.into_bytes());
    Ok(out)
}

fn icc(args: &IccArgs) -> Result<Outputs> {
    if args.grid < 2 {
        return Err(CliError::Usage("--grid needs at least 2 points".into()));
    }
    let mut out = Outputs::new(json!({ "item": args.item, "grid": args.grid }), None);
    out.input(&args.params)?;
    let (file, params) = ParamsFile::read(&args.params)?;
    if params.family() != Family::Beta3 {
        return Err(CliError::Model {
            context: args.params.display().to_string(),
            source: ModelError::FamilyMismatch { expected: "beta3", found: params.family().as_str() },
        });
    }
    let j = IdMap::from_ids(&file.item_ids)
        .get(&args.item)
        .ok_or_else(|| CliError::Data(format!("{}: no item with id {:?}", args.params.display(), args.item)))?;
    let delta = Difficulty::new(params.difficulties()[j]).context(|| "icc".into())?;
    let a = Discrimination::new(params.discriminations()[j]).context(|| "icc".into())?;
    let regime = icc_regime(a).as_str();
    let mut csv = String::from("theta,expected,regime\n");
    let last = (args.grid - 1) as f64;
    for k in 0..args.grid {
        let t = (BOUND_EPS + (1.0 - 2.0 * BOUND_EPS) * k as f64 / last).clamp(BOUND_EPS, 1.0 - BOUND_EPS);
        let e = icc_beta3(Ability::new(t).context(|| "icc".into())?, delta, a);
        let _ = writeln!(csv, "{},{},{regime}", num(t), num(e));
    }
    out.add("icc.csv", csv.into_bytes());
    Ok(out)
}

fn compare(args: &CompareArgs) -> Result<Outputs> {
    let plan = HoldoutPlan { repetitions: args.repetitions, train_fraction: args.train_fraction, seed: args.flags.seed };
    plan.validate().map_err(usage)?;
    let cfg = ComparisonConfig {
        beta3: mle_config(&args.flags, Family::Beta3)?,
        two_pl: mle_config(&args.flags, Family::TwoPlNd)?,
        alpha: args.alpha,
    };
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(CliError::Usage(format!("--alpha {} is outside (0, 1)", cfg.alpha)));
    }
    let mut out = Outputs::new(json!({ "plan": value(&plan), "comparison": value(&cfg) }), Some(plan.seed));
    let mut table = String::from(
        "dataset,beta3_mean,beta3_std,2plnd_mean,2plnd_std,w_plus,w_minus,p_value,alpha,significant,beta3_better\n",
    );
    let mut losses = String::from("dataset,repetition,beta3,2plnd\n");
    for path in &args.responses {
        out.input(path)?;
        let input = formats::read_responses(path)?;
        let c = compare_models(&input.data, &plan, &cfg).context(|| path.display().to_string())?;
        let name = path.display();
        let _ = writeln!(
            table,
            "{name},{},{},{},{},{},{},{},{},{},{}",
            num(c.left.mean),
            num(c.left.std),
            num(c.right.mean),
            num(c.right.std),
            num(c.test.w_plus),
            num(c.test.w_minus),
            num(c.p_value),
            num(c.alpha),
            c.significant(),
            c.left_wins()
        );
        for (r, (l, rr)) in c.left_losses.iter().zip(&c.right_losses).enumerate() {
            let _ = writeln!(losses, "{name},{},{},{}", r + 1, num(*l), num(*rr));
        }
    }
    out.add("compare.csv", table.into_bytes());
    out.add("compare_losses.csv", losses.into_bytes());
    Ok(out)
}

fn metrics(args: &MetricsArgs) -> Result<Outputs> {
    let mut out = Outputs::new(json!({ "ability": "posterior median point estimate or fitted ability" }), None);
    out.input(&args.panel)?;
    out.input(&args.params)?;
    let panel = formats::read_panel(&args.panel)?;
    let (file, params) = ParamsFile::read(&args.params)?;
    let ids = IdMap::from_ids(&file.respondent_ids);
    let abilities = panel
        .classifier_ids()
        .iter()
        .map(|c| {
            ids.get(c)
                .map(|i| params.abilities()[i])
                .ok_or_else(|| CliError::Data(format!("{} has no ability for classifier {c:?}", args.params.display())))
        })
        .collect::<Result<Vec<f64>>>()?;
    let report = classifier_metrics(&panel, &abilities).context(|| "metrics".into())?;
    let mut csv = String::from("classifier,avg_response,ability,accuracy,f1,brier,log_loss,auc\n");
    for r in &report.rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            r.classifier,
            num(r.avg_response),
            num(r.ability),
            num(r.accuracy),
            opt_num(r.f1),
            opt_num(r.brier),
            num(r.log_loss),
            opt_num(r.auc)
        );
    }
    out.add("metrics.csv", csv.into_bytes());
    let mut corr = format!("metric,{}\n", METRIC_COLUMNS.join(","));
    for (name, row) in METRIC_COLUMNS.iter().zip(report.rank_correlations()) {
        let cells: Vec<String> = row.into_iter().map(opt_num).collect();
        let _ = writeln!(corr, "{name},{}", cells.join(","));
    }
    out.add("spearman.csv", corr.into_bytes());
    Ok(out)
}

fn noise_scan(args: &NoiseScanArgs) -> Result<Outputs> {
    let cfg = vi_config(&args.flags)?;
    let mut out = Outputs::new(json!({ "fractions": args.fractions, "vi": value(&cfg) }), Some(cfg.seed));
    out.input(&args.panel)?;
    let panel = formats::read_panel(&args.panel)?;
    let scan = ability_noise_scan(&panel, &args.fractions, &cfg).context(|| "noise-scan".into())?;
    let mut csv = String::from("fraction,flipped,classifier,ability,accuracy\n");
    for row in &scan.rows {
        for (k, c) in scan.classifier_ids.iter().enumerate() {
            let _ = writeln!(
                csv,
                "{},{},{c},{},{}",
                num(row.fraction),
                row.flipped,
                num(row.abilities[k]),
                num(row.accuracies[k])
            );
        }
    }
    out.add("scan.csv", csv.into_bytes());
    Ok(out)
}

fn flag_noise(args: &FlagNoiseArgs) -> Result<Outputs> {
    let mut out = Outputs::new(json!({ "threshold": args.threshold }), None);
    out.input(&args.posteriors)?;
    let file = PosteriorsFile::read(&args.posteriors)?;
    let mut csv = String::from("item_id,mean_discrimination\n");
    for (j, mean) in flag_noisy_items(&file.posteriors, args.threshold) {
        let _ = writeln!(csv, "{},{}", file.item_ids[j], num(mean));
    }
    out.add("flags.csv", csv.into_bytes());
    Ok(out)
}
