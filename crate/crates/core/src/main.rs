use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use advsticker::checks::{run_all, CheckRow};
use advsticker::config::{RunConfig, Seeds};
use advsticker::d2p::ChannelParams;
use advsticker::experiment::{
    d2p_fidelity, reaggregate, run_ablation_suite, run_experiment, train_mapper_on_channel, AblationAxis, Summary,
};
use advsticker::{io, Error, Result};

#[derive(Parser)]
#[command(name = "advsticker", version, about = "Adversarial sticker optimisation against face embedders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one attack described by a config file.
    Attack(AttackArgs),
    /// Run an ablation along one axis from a base config.
    Suite(SuiteArgs),
    /// Train the colour mapper on the simulated channel and report fidelity.
    D2pTrain(D2pArgs),
    /// Finite-difference gradient checks of every differentiable stage.
    GradCheck(GradCheckArgs),
    /// Recompute summaries from the report CSVs of finished runs.
    Report(ReportArgs),
}

#[derive(Args)]
struct Overrides {
    /// Override any config key, e.g. `--set optimizer.learning_rate=0.05`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    algorithm: Option<AlgorithmArg>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    versioned: bool,
    #[arg(long)]
    eval_interval: Option<usize>,
    #[arg(long)]
    snapshot_interval: Option<usize>,
    #[arg(long)]
    evaluate_with_channel: bool,
    #[arg(long, value_enum)]
    d2p: Option<D2pModeArg>,
    #[arg(long)]
    d2p_path: Option<PathBuf>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    tv_weight: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Dodging,
    Impersonation,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    Eot,
    Caa,
}

#[derive(Clone, Copy, ValueEnum)]
enum D2pModeArg {
    Off,
    Train,
    Load,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    D2p,
    Optimizer,
    Variation,
}

#[derive(Args)]
struct AttackArgs {
    config: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct SuiteArgs {
    base: PathBuf,
    #[arg(long, value_enum)]
    axis: AxisArg,
    #[arg(long, default_value_t = 5)]
    replicates: usize,
    #[arg(long, default_value = "runs/suite")]
    out: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct D2pArgs {
    /// Config whose `[channel]` and `[d2p.train]` sections are used.
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Train on the channel with its noise removed.
    #[arg(long)]
    noiseless: bool,
    /// Random stickers used for the fidelity comparison.
    #[arg(long, default_value_t = 20)]
    stickers: usize,
    /// Where to save the trained weights.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Where to write the per-sticker comparison CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct GradCheckArgs {
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(required = true)]
    dirs: Vec<PathBuf>,
    /// Write the combined table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_key(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(key, "malformed key"));
    }
    if parts[0] == "seeds" && !table.contains_key("seeds") {
        let defaults = toml::Value::try_from(Seeds::default()).map_err(|e| Error::config("seeds", e.to_string()))?;
        table.insert("seeds".into(), defaults);
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(key, format!("`{p}` is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn load_config(path: Option<&Path>, o: Option<&Overrides>) -> Result<RunConfig> {
    let mut table: toml::Table = match path {
        Some(p) => fs::read_to_string(p)
            .map_err(|e| Error::config("path", format!("{}: {e}", p.display())))?
            .parse()
            .map_err(|e: toml::de::Error| Error::config("syntax", e.message().to_string()))?,
        None => toml::Table::new(),
    };
    if let Some(o) = o {
        let s = |v: &str| toml::Value::String(v.to_string());
        let path_value = |p: &Path| toml::Value::String(p.to_string_lossy().into_owned());
        let mut pairs: Vec<(&str, toml::Value)> = Vec::new();
        if let Some(m) = o.mode {
            pairs.push((
                "run.mode",
                s(match m {
                    ModeArg::Dodging => "dodging",
                    ModeArg::Impersonation => "impersonation",
                }),
            ));
        }
        if let Some(a) = o.algorithm {
            pairs.push((
                "run.algorithm",
                s(match a {
                    AlgorithmArg::Eot => "eot",
                    AlgorithmArg::Caa => "caa",
                }),
            ));
        }
        if let Some(n) = o.iterations {
            pairs.push(("run.iterations", toml::Value::Integer(n as i64)));
        }
        if let Some(d) = &o.output_dir {
            pairs.push(("run.output_dir", path_value(d)));
        }
        if o.versioned {
            pairs.push(("run.versioned", toml::Value::Boolean(true)));
        }
        if let Some(n) = o.eval_interval {
            pairs.push(("run.eval_interval", toml::Value::Integer(n as i64)));
        }
        if let Some(n) = o.snapshot_interval {
            pairs.push(("run.snapshot_interval", toml::Value::Integer(n as i64)));
        }
        if o.evaluate_with_channel {
            pairs.push(("run.evaluate_with_channel", toml::Value::Boolean(true)));
        }
        if let Some(m) = o.d2p {
            pairs.push((
                "d2p.mode",
                s(match m {
                    D2pModeArg::Off => "off",
                    D2pModeArg::Train => "train",
                    D2pModeArg::Load => "load",
                }),
            ));
        }
        if let Some(p) = &o.d2p_path {
            pairs.push(("d2p.path", path_value(p)));
        }
        if let Some(v) = o.learning_rate {
            pairs.push(("optimizer.learning_rate", toml::Value::Float(v)));
        }
        if let Some(n) = o.batch_size {
            pairs.push(("optimizer.batch_size", toml::Value::Integer(n as i64)));
        }
        if let Some(v) = o.tv_weight {
            pairs.push(("optimizer.tv_weight", toml::Value::Float(v)));
        }
        for (k, v) in pairs {
            set_key(&mut table, k, v)?;
        }
        for item in &o.set {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::config(item.clone(), "expected KEY=VALUE"))?;
            set_key(&mut table, k.trim(), parse_value(v.trim()))?;
        }
    }
    let text = toml::to_string(&table).map_err(|e| Error::config("overrides", e.to_string()))?;
    RunConfig::from_toml_str(&text)
}

fn print_summary(dir: &Path, s: &Summary) {
    println!("output: {}", dir.display());
    println!(
        "cos benign {:.4}  cos adversarial {:.4} (initial {:.4})",
        s.mean_cos_benign, s.mean_cos_adv, s.mean_cos_adv_initial
    );
    println!(
        "held-out loss {:.4} -> {:.4} ({:.1}% reduction), final TV {:.3}",
        s.mean_loss_initial,
        s.mean_loss_final,
        100.0 * s.loss_reduction,
        s.final_tv
    );
}

fn attack(args: &AttackArgs) -> Result<()> {
    let cfg = load_config(Some(&args.config), Some(&args.overrides))?;
    let report = run_experiment(&cfg)?;
    print_summary(&report.output_dir, &report.summary);
    Ok(())
}

fn suite(args: &SuiteArgs) -> Result<()> {
    let base = load_config(Some(&args.base), Some(&args.overrides))?;
    let axis = match args.axis {
        AxisArg::D2p => AblationAxis::D2p,
        AxisArg::Optimizer => AblationAxis::Optimizer,
        AxisArg::Variation => AblationAxis::Variation,
    };
    let cfgs = axis.configs(&base, args.replicates, &args.out);
    let result = run_ablation_suite(axis, &cfgs, &args.out)?;
    print!("{}", io::csv_string(&result.rows)?);
    Ok(())
}

fn d2p_train(args: &D2pArgs) -> Result<()> {
    let mut cfg = load_config(args.config.as_deref(), None)?;
    if let Some(e) = args.epochs {
        cfg.d2p.train.epochs = e;
    }
    if let Some(h) = args.hidden {
        cfg.d2p.train.hidden = h;
    }
    if let Some(s) = args.seed {
        cfg.d2p.train.seed = s;
    }
    if args.noiseless {
        cfg.channel = cfg.channel.noiseless();
    }
    cfg.validate()?;
    let (mapper, mse) = train_mapper_on_channel(&cfg)?;
    println!("training mse {mse:.3e}");
    if let Some(p) = &args.out {
        mapper.write_to(std::io::BufWriter::new(fs::File::create(p)?))?;
        println!("weights: {}", p.display());
    }
    let channel: &ChannelParams = &cfg.channel;
    let g = &cfg.geometry;
    let rows = d2p_fidelity(&mapper, channel, args.stickers, g.sticker_height, g.sticker_width, cfg.seeds.channel)?;
    let closer = rows.iter().filter(|r| r.mapped_is_closer()).count();
    println!("mapped output closer to the channel on all metrics: {closer}/{}", rows.len());
    match &args.csv {
        Some(p) => io::write_csv(p, &rows)?,
        None => print!("{}", io::csv_string(&rows)?),
    }
    Ok(())
}

fn grad_check(args: &GradCheckArgs) -> Result<bool> {
    let rows: Vec<CheckRow> = run_all(0..args.seeds)?;
    let mut ok = true;
    for name in advsticker::checks::CHECK_NAMES {
        let worst = rows
            .iter()
            .filter(|r| r.check == name)
            .map(|r| r.max_rel_error)
            .fold(0.0, f64::max);
        let pass = worst <= args.tolerance;
        ok &= pass;
        println!("{} {name:<20} max rel err {worst:.2e}", if pass { "PASS" } else { "FAIL" });
    }
    if let Some(p) = &args.csv {
        io::write_csv(p, &rows)?;
    }
    Ok(ok)
}

fn report(args: &ReportArgs) -> Result<()> {
    let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    for (i, d) in args.dirs.iter().enumerate() {
        let summary = io::csv_string(&[reaggregate(d)?])?;
        let mut rdr = csv::Reader::from_reader(summary.as_bytes());
        let csv_err = |e: csv::Error| Error::Format(e.to_string());
        if i == 0 {
            let header = rdr.headers().map_err(csv_err)?;
            out.write_record(std::iter::once("run").chain(header.iter())).map_err(csv_err)?;
        }
        for rec in rdr.records() {
            let rec = rec.map_err(csv_err)?;
            let run = d.display().to_string();
            out.write_record(std::iter::once(run.as_str()).chain(rec.iter())).map_err(csv_err)?;
        }
    }
    let bytes = out.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    match &args.out {
        Some(p) => fs::write(p, bytes)?,
        None => print!("{}", String::from_utf8_lossy(&bytes)),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Attack(a) => attack(a).map(|_| true),
        Command::Suite(a) => suite(a).map(|_| true),
        Command::D2pTrain(a) => d2p_train(a).map(|_| true),
        Command::GradCheck(a) => grad_check(a),
        Command::Report(a) => report(a).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
