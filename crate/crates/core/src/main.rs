use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use log::warn;
use serde_json::json;

use leakbound::casegen::{self, BinomialNoiseSpec, ExtensionSpec};
use leakbound::greedy::greedy_curve;
use leakbound::io::{
    ingest_histogram, percent_overhead, write_curve_csv, ChannelFile, CostEntry, CostSpec, CurveRow, Provenance,
    SchemeFile,
};
use leakbound::optimize::{
    build_curve_with, curve_method, decompose_optimum, formulation, min_cost_for_leak_with, min_leak_for_cost_with,
    auto_formulation, LpFormulation, TradeoffPoint,
};
use leakbound::{leakage_report, total_cost, validate_scheme, Channel, LeakError, Pmf, ProtectionScheme, Result};

/// Prints a line, ignoring a closed stdout (for example `| head`).
macro_rules! emit {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

/// Leakage metrics and cost-optimal protection schemes for side channels.
#[derive(Parser)]
#[command(name = "leakbound", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Report ML, MI, capacity, exp-leak and cost of a scheme.
    Analyze {
        #[arg(long)]
        channel: PathBuf,
        #[arg(long)]
        scheme: PathBuf,
    },
    /// Cheapest scheme under a leakage bound, or least leaky under a budget.
    Optimize(OptimizeArgs),
    /// Trade-off curve between exp-leak and cost, as CSV.
    Curve {
        #[arg(long)]
        channel: PathBuf,
        #[arg(long, default_value = "lp")]
        method: String,
        #[arg(long)]
        out: PathBuf,
        /// Interior points written per hull segment (lp only).
        #[arg(long, default_value_t = 3)]
        samples: usize,
    },
    /// Write a constructed channel (and scheme, where the kind fixes one).
    Casegen {
        #[command(subcommand)]
        kind: CaseKind,
    },
    /// Turn a `label,count` histogram CSV into a channel file.
    Ingest {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = LabelCost::Padding)]
        cost: LabelCost,
        #[arg(long, default_value_t = 1.0)]
        per_unit: f64,
    },
}

#[derive(Args)]
#[command(group(ArgGroup::new("bound").required(true).multiple(false)))]
struct OptimizeArgs {
    #[arg(long)]
    channel: PathBuf,
    /// Maximal-leakage bound in bits; the LP uses exp-leak 2^bits.
    #[arg(long, group = "bound")]
    leak_bits: Option<f64>,
    /// Cost budget.
    #[arg(long, group = "bound")]
    budget: Option<f64>,
    #[arg(long, value_enum, default_value_t = BudgetMode::Total)]
    budget_mode: BudgetMode,
    /// Also store the optimum as a blend of two deterministic schemes.
    #[arg(long)]
    decompose: bool,
    /// LP formulation: auto, cells or intervals.
    #[arg(long, default_value = "auto")]
    formulation: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum BudgetMode {
    /// The budget is the total expected cost.
    Total,
    /// The budget is added to the minimum achievable cost.
    Excess,
}

#[derive(Clone, Copy, ValueEnum)]
enum LabelCost {
    Padding,
    Delay,
}

#[derive(Subcommand)]
enum CaseKind {
    /// Binary symmetric channel with zero cost.
    Bsc {
        #[arg(long)]
        p: f64,
        #[arg(long)]
        out_channel: PathBuf,
        #[arg(long)]
        out_scheme: PathBuf,
    },
    /// Key-weight timing channel with binomial dummy-operation delay.
    Sqm {
        #[arg(long)]
        key_bits: usize,
        #[arg(long)]
        noise: usize,
        #[arg(long, default_value_t = 1.0)]
        per_unit: f64,
        #[arg(long)]
        out_channel: PathBuf,
        #[arg(long)]
        out_scheme: PathBuf,
    },
    /// Extends the labels by `width` outputs with binomial shifts.
    Extension {
        /// Comma-separated increasing labels.
        #[arg(long, value_delimiter = ',', required = true)]
        labels: Vec<f64>,
        /// Comma-separated probabilities; uniform when omitted.
        #[arg(long, value_delimiter = ',')]
        probs: Option<Vec<f64>>,
        #[arg(long)]
        width: usize,
        #[arg(long)]
        out_channel: PathBuf,
        #[arg(long)]
        out_scheme: PathBuf,
    },
    /// Seeded random staircase instance.
    Random {
        #[arg(long)]
        m: usize,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_channel: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(e.exit_code() as u8);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let LeakError::Infeasible { minimum: Some(min), .. } = &e {
                eprintln!("minimum achievable cost: {min}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("LEAKBOUND_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .map_err(|_| LeakError::Invalid(format!("LEAKBOUND_THREADS={value:?} is not a thread count")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| LeakError::Internal(e.to_string()))?;
    }
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Analyze { channel, scheme } => analyze(&channel, &scheme),
        Command::Optimize(args) => optimize(&args),
        Command::Curve { channel, method, out, samples } => curve(&channel, &method, &out, samples),
        Command::Casegen { kind } => casegen_cmd(kind),
        Command::Ingest { csv, out, cost, per_unit } => ingest(&csv, &out, cost, per_unit),
    }
}

fn load_channel(path: &Path) -> Result<Channel> {
    ChannelFile::load(path)?.to_channel()
}

fn fmt_percent(p: Option<f64>) -> String {
    p.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}%"))
}

fn analyze(channel_path: &Path, scheme_path: &Path) -> Result<()> {
    let channel = load_channel(channel_path)?;
    let scheme = SchemeFile::load(scheme_path)?.scheme()?;
    validate_scheme(&channel, &scheme)?;
    let report = leakage_report(channel.px(), &scheme)?;
    let cost = total_cost(&channel, &scheme)?;
    let overhead = percent_overhead(cost, channel.baseline());

    emit!("{:<22}{:>14.6}", "maximal leakage (bits)", report.ml_bits);
    emit!("{:<22}{:>14.6}", "mutual info (bits)", report.mi_bits);
    emit!("{:<22}{:>14.6}", "capacity (bits)", report.cc_bits);
    emit!("{:<22}{:>14.6}", "exp-leak", report.exp_leak);
    emit!("{:<22}{:>14.6}", "total cost", cost);
    emit!("{:<22}{:>14}", "overhead", fmt_percent(overhead));
    let doc = json!({
        "exp_leak": report.exp_leak,
        "ml_bits": report.ml_bits,
        "mi_bits": report.mi_bits,
        "cc_bits": report.cc_bits,
        "total_cost": cost,
        "percent_overhead": overhead,
    });
    emit!("{doc}");
    Ok(())
}

fn pick_formulation(name: &str, channel: &Channel) -> Result<&'static dyn LpFormulation> {
    if name == "auto" {
        return Ok(auto_formulation(channel));
    }
    let f = formulation(name).ok_or_else(|| LeakError::Invalid(format!("unknown formulation {name:?}")))?;
    if !f.supports(channel) {
        return Err(LeakError::Invalid(format!("formulation {name} does not support this cost matrix")));
    }
    Ok(f)
}

fn optimize(args: &OptimizeArgs) -> Result<()> {
    let channel = load_channel(&args.channel)?;
    let f = pick_formulation(&args.formulation, &channel)?;
    let mut params = serde_json::Map::new();
    params.insert("channel".into(), json!(args.channel.display().to_string()));
    params.insert("formulation".into(), json!(f.name()));
    let point: TradeoffPoint = match (args.leak_bits, args.budget) {
        (Some(bits), None) => {
            if !bits.is_finite() || bits < 0.0 {
                return Err(LeakError::Invalid(format!("leak bound {bits} bits must be nonnegative")));
            }
            params.insert("leak_bits".into(), json!(bits));
            min_cost_for_leak_with(&channel, bits.exp2(), f)?
        }
        (None, Some(budget)) => {
            let total = match args.budget_mode {
                BudgetMode::Total => budget,
                BudgetMode::Excess => budget + channel.min_achievable_cost(),
            };
            params.insert("budget".into(), json!(budget));
            params.insert(
                "budget_mode".into(),
                json!(match args.budget_mode {
                    BudgetMode::Total => "total",
                    BudgetMode::Excess => "excess",
                }),
            );
            min_leak_for_cost_with(&channel, total, f)?
        }
        _ => unreachable!("clap enforces exactly one bound"),
    };

    let mut scheme = point.scheme.clone();
    let mixture = if args.decompose {
        let mix = decompose_optimum(&channel, &scheme)?;
        // the blend reaches the same cost and no more leakage
        scheme = mix.blend()?;
        Some(mix)
    } else {
        None
    };
    params.insert("decompose".into(), json!(args.decompose));
    validate_scheme(&channel, &scheme)?;
    let report = leakage_report(channel.px(), &scheme)?;
    let cost = total_cost(&channel, &scheme)?;

    let provenance = Provenance { command: "optimize".into(), parameters: params.into_iter().collect() };
    let mut file = SchemeFile::new(&scheme, provenance).with_metrics(report);
    if let Some(mix) = &mixture {
        file = file.with_mixture(mix);
    }
    file.save(&args.out)?;

    emit!("exp-leak {:.6}  ({:.6} bits)", report.exp_leak, report.ml_bits);
    emit!("total cost {cost:.6}  overhead {}", fmt_percent(percent_overhead(cost, channel.baseline())));
    if let Some(mix) = &mixture {
        let l1 = leakbound::exp_leak(channel.px(), &mix.p1)?;
        let l2 = leakbound::exp_leak(channel.px(), &mix.p2)?;
        emit!(
            "mixture lambda {:.6}: exp-leak {l1:.6} and {l2:.6}, costs {:.6} and {:.6}",
            mix.lambda,
            total_cost(&channel, &mix.p1)?,
            total_cost(&channel, &mix.p2)?
        );
    }
    Ok(())
}

fn curve(channel_path: &Path, method_name: &str, out: &Path, samples: usize) -> Result<()> {
    let channel = load_channel(channel_path)?;
    let method = curve_method(method_name).ok_or_else(|| LeakError::Invalid(format!("unknown method {method_name:?}")))?;
    let baseline = channel.baseline();
    let mut rows: Vec<CurveRow> = Vec::new();
    if method.name() == "greedy" {
        for p in greedy_curve(&channel, channel.n())? {
            rows.push(CurveRow::new(p.leak as f64, p.cost, baseline));
        }
    } else {
        let curve = build_curve_with(&channel, method)?;
        let hull = curve.hull();
        for (k, p) in hull.iter().enumerate() {
            rows.push(CurveRow::new(p.exp_leak_bound, p.cost, baseline));
            if let Some(next) = hull.get(k + 1) {
                for s in 1..=samples {
                    let t = s as f64 / (samples + 1) as f64;
                    let l = p.exp_leak_bound + t * (next.exp_leak_bound - p.exp_leak_bound);
                    rows.push(CurveRow::new(l, curve.cost_at(l)?, baseline));
                }
            }
        }
    }
    rows.sort_by(|a, b| a.exp_leak.total_cmp(&b.exp_leak).then(a.cost.total_cmp(&b.cost)));
    write_curve_csv(out, &rows)?;
    emit!("{} points written to {}", rows.len(), out.display());
    Ok(())
}

fn provenance(kind: &str, parameters: serde_json::Value) -> Provenance {
    let parameters = match parameters {
        serde_json::Value::Object(map) => map.into_iter().collect(),
        _ => Default::default(),
    };
    Provenance { command: format!("casegen {kind}"), parameters }
}

fn save_scheme(channel: &Channel, scheme: &ProtectionScheme, prov: Provenance, path: &Path) -> Result<()> {
    validate_scheme(channel, scheme)?;
    let report = leakage_report(channel.px(), scheme)?;
    SchemeFile::new(scheme, prov).with_metrics(report).save(path)
}

fn casegen_cmd(kind: CaseKind) -> Result<()> {
    match kind {
        CaseKind::Bsc { p, out_channel, out_scheme } => {
            let (px, scheme) = casegen::bsc(p)?;
            let file = ChannelFile {
                x_labels: vec![0.0, 1.0],
                p_x: px.probs().to_vec(),
                y_labels: Some(vec![0.0, 1.0]),
                cost: CostSpec::Matrix { rows: vec![vec![CostEntry(0.0); 2]; 2] },
            };
            let channel = file.to_channel()?;
            file.save(&out_channel)?;
            save_scheme(&channel, &scheme, provenance("bsc", json!({ "p": p })), &out_scheme)
        }
        CaseKind::Sqm { key_bits, noise, per_unit, out_channel, out_scheme } => {
            let (channel, scheme) = casegen::square_multiply_channel(key_bits, &BinomialNoiseSpec::new(noise, per_unit))?;
            let file = ChannelFile {
                x_labels: channel.px().labels().map(<[f64]>::to_vec).unwrap_or_default(),
                p_x: channel.px().probs().to_vec(),
                y_labels: channel.y_labels().map(<[f64]>::to_vec),
                cost: CostSpec::Delay { per_unit },
            };
            file.save(&out_channel)?;
            let params = json!({ "key_bits": key_bits, "noise": noise, "per_unit": per_unit });
            save_scheme(&channel, &scheme, provenance("sqm", params), &out_scheme)
        }
        CaseKind::Extension { labels, probs, width, out_channel, out_scheme } => {
            let probs = probs.unwrap_or_else(|| vec![1.0 / labels.len() as f64; labels.len()]);
            let px = Pmf::new(probs)?.with_labels(labels.clone())?;
            let (channel, scheme) = casegen::extension_channel(&px, ExtensionSpec { width })?;
            let file = ChannelFile {
                x_labels: labels,
                p_x: px.probs().to_vec(),
                y_labels: channel.y_labels().map(<[f64]>::to_vec),
                cost: CostSpec::Padding { per_unit: 1.0 },
            };
            file.save(&out_channel)?;
            save_scheme(&channel, &scheme, provenance("extension", json!({ "width": width })), &out_scheme)
        }
        CaseKind::Random { m, n, seed, out_channel } => {
            let channel = casegen::random_instance(m, n, seed)?;
            ChannelFile::from_channel(&channel)?.save(&out_channel)
        }
    }
}

fn ingest(csv_path: &Path, out: &Path, cost: LabelCost, per_unit: f64) -> Result<()> {
    let reader =
        File::open(csv_path).map_err(|e| LeakError::Invalid(format!("cannot read {}: {e}", csv_path.display())))?;
    let (labels, probs) = ingest_histogram(reader)?;
    if labels.iter().any(|l| *l < 0.0) {
        warn!("negative labels make percent overhead meaningless");
    }
    let file = ChannelFile {
        x_labels: labels,
        p_x: probs,
        y_labels: None,
        cost: match cost {
            LabelCost::Padding => CostSpec::Padding { per_unit },
            LabelCost::Delay => CostSpec::Delay { per_unit },
        },
    };
    file.to_channel()?;
    file.save(out)?;
    emit!("{} symbols written to {}", file.x_labels.len(), out.display());
    Ok(())
}
