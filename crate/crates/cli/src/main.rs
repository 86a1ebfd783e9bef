use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use rigidity_core::error::Error;
use rigidity_core::filters::{BaselineKind, SeriesKind};
use rigidity_core::panel::{load_panel, read_rows, validate_rows, write_panel, PricePanel, ValidationReport};
use rigidity_core::report::{
    analyze_panel, filter_panel, sha256_hex, write_bundle, Config, ReportBundle, SimulateConfig,
};
use rigidity_core::simgen::{simulate_panel, write_ground_truth};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "rigidity", version, about = "Price rigidity measurement for weekly retail price panels")]
struct Cli {
    /// TOML configuration; command-line flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads (0 = all cores). Never changes output bytes.
    #[arg(long, global = true, env = "RIGIDITY_WORKERS")]
    workers: Option<usize>,

    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a panel file and print a validation report.
    Validate {
        panel: Option<PathBuf>,
        #[command(flatten)]
        input: InputArgs,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Write per-week transaction, posted, filtered and reference prices.
    Filter {
        panel: Option<PathBuf>,
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        filter: FilterArgs,
        /// Output CSV (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full pipeline and write the report bundle.
    Analyze {
        panel: Option<PathBuf>,
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        filter: FilterArgs,
        /// Simulate a panel from this preset instead of reading one.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Bootstrap replicates for magnitude intervals.
        #[arg(long)]
        bootstrap: Option<usize>,
        /// Cox tie handling: breslow or efron.
        #[arg(long)]
        ties: Option<String>,
        /// Output directory.
        #[arg(long, env = "RIGIDITY_OUT_DIR")]
        out: Option<PathBuf>,
    },
    /// Simulate a panel from a preset.
    Simulate {
        /// canadian, edlp, hilo or hyb.
        #[arg(long, default_value = "canadian")]
        preset: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        weeks: Option<usize>,
        /// Restrict cuts to shapes the sales filter recovers exactly.
        #[arg(long)]
        oracle: bool,
        /// Panel CSV (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Ground-truth sidecar CSV.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Print the tables of a bundle, or re-render them into another directory.
    Report {
        /// Bundle directory or bundle.json.
        bundle: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Default)]
struct InputArgs {
    /// Field delimiter (single byte, or `tab`).
    #[arg(long)]
    delimiter: Option<String>,
    /// Tab-delimited input.
    #[arg(long, conflicts_with = "delimiter")]
    tab: bool,
    /// Prices are integers in minor units.
    #[arg(long)]
    minor_units: bool,
    /// Carry prices forward over missing weeks.
    #[arg(long)]
    fill_missing: bool,
}

#[derive(Args, Debug, Default)]
struct FilterArgs {
    #[arg(long)]
    max_sale_len: Option<usize>,
    #[arg(long)]
    ref_window: Option<usize>,
    #[arg(long)]
    align_radius: Option<usize>,
    /// none, conditional or trim.
    #[arg(long)]
    endpoint_policy: Option<String>,
    #[arg(long)]
    endpoint_margin: Option<usize>,
}

impl InputArgs {
    fn apply(&self, panel: &Option<PathBuf>, cfg: &mut Config) {
        if let Some(p) = panel {
            cfg.input.path = Some(p.clone());
            cfg.simulate = None;
        }
        if let Some(d) = &self.delimiter {
            cfg.input.delimiter = d.clone();
        }
        if self.tab {
            cfg.input.delimiter = "tab".into();
        }
        cfg.input.minor_units |= self.minor_units;
        cfg.input.fill_missing |= self.fill_missing;
    }
}

impl FilterArgs {
    fn apply(&self, cfg: &mut Config) {
        if let Some(v) = self.max_sale_len {
            cfg.filters.max_sale_len = v;
        }
        if let Some(v) = self.ref_window {
            cfg.filters.ref_window = v;
        }
        if let Some(v) = self.align_radius {
            cfg.filters.align_radius = v;
        }
        if let Some(v) = &self.endpoint_policy {
            cfg.endpoint.policy = v.clone();
        }
        if let Some(v) = self.endpoint_margin {
            cfg.endpoint.margin = v;
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        e if e.is_numerical() => EXIT_NUMERICAL,
        _ => EXIT_DATA,
    }
}

fn read_panel(cfg: &Config) -> Result<(PricePanel, String), Error> {
    let path = cfg.input.path.as_ref().ok_or_else(|| Error::Config("no panel file given".into()))?;
    let bytes = fs::read(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let panel = load_panel(bytes.as_slice(), &cfg.input.load_options()?)?;
    Ok((panel, sha256_hex(&bytes)))
}

fn sink(path: &Option<PathBuf>) -> Result<Box<dyn Write>, Error> {
    Ok(match path {
        Some(p) => Box::new(io::BufWriter::new(fs::File::create(p)?)),
        None => Box::new(io::BufWriter::new(io::stdout().lock())),
    })
}

fn print_validation(out: &mut impl Write, r: &ValidationReport) -> io::Result<()> {
    writeln!(out, "rows                      {}", r.n_rows)?;
    writeln!(out, "stores                    {}", r.n_stores)?;
    writeln!(out, "products                  {}", r.n_products)?;
    for (s, n) in &r.rows_per_store {
        writeln!(out, "  {s:<24}{n}")?;
    }
    writeln!(out, "duplicates                {}", r.duplicates)?;
    writeln!(out, "week gaps                 {}", r.week_gaps)?;
    writeln!(out, "inconsistent week ranges  {}", r.inconsistent_week_ranges)?;
    writeln!(out, "transaction > regular     {}", r.transaction_above_regular)?;
    writeln!(out, "zero-change products      {}", r.zero_price_change_products)?;
    writeln!(out, "zero-variance products    {}", r.zero_variance_products)?;
    for w in r.warnings.iter().take(20) {
        writeln!(out, "warning: {}/{} week {} line {:?}: {:?}", w.store, w.product, w.week, w.line, w.kind)?;
    }
    if r.warnings.len() > 20 {
        writeln!(out, "... {} more warnings", r.warnings.len() - 20)?;
    }
    Ok(())
}

fn write_filtered(cfg: &Config, out: &Option<PathBuf>) -> Result<(), Error> {
    let (panel, _) = read_panel(cfg)?;
    let results = filter_panel(&panel, &cfg.filters, cfg.endpoint.policy()?)?;
    let mut w = sink(out)?;
    writeln!(
        w,
        "store,product,week,transaction,posted_regular,filtered,reference,sale_filtered,sale_reference,masked"
    )?;
    for r in &results {
        for t in 0..r.len() {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                r.key.store,
                r.key.product,
                r.first_week as usize + t,
                r.series(SeriesKind::Transaction)[t],
                r.series(SeriesKind::PostedRegular)[t],
                r.series(SeriesKind::Filtered)[t],
                r.series(SeriesKind::Reference)[t],
                r.sale_flags_filtered[t],
                r.sale_flags_reference[t],
                r.mask[t],
            )?;
        }
    }
    w.flush()?;
    let events: usize = results.iter().map(|r| r.sale_events(BaselineKind::Filtered).len()).sum();
    info!("filtered {} products, {events} sales against the filtered baseline", results.len());
    Ok(())
}

fn load_bundle(path: &Path) -> Result<ReportBundle, Error> {
    let file = if path.is_dir() { path.join("bundle.json") } else { path.to_path_buf() };
    let text = fs::read_to_string(&file).map_err(|e| Error::Config(format!("cannot read {}: {e}", file.display())))?;
    ReportBundle::from_json(&text)
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut cfg = match &cli.config {
        Some(p) => Config::from_file(p)?,
        None => Config::default(),
    };
    if let Some(w) = cli.workers {
        cfg.output.workers = Some(w);
    }
    let workers = cfg.output.workers.unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    match cli.command {
        Command::Validate { panel, input, json } => {
            input.apply(&panel, &mut cfg);
            let path = cfg.input.path.clone().ok_or_else(|| Error::Config("no panel file given".into()))?;
            let file = fs::File::open(&path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            let rows = read_rows(file, &cfg.input.load_options()?)?;
            let report = validate_rows(&rows);
            let mut stdout = io::stdout().lock();
            if json {
                writeln!(stdout, "{}", serde_json::to_string_pretty(&report).expect("report serializes"))?;
            } else {
                print_validation(&mut stdout, &report)?;
            }
            if report.n_rows == 0 {
                return Err(rigidity_core::error::PanelError::Empty.into());
            }
        }
        Command::Filter { panel, input, filter, out } => {
            input.apply(&panel, &mut cfg);
            filter.apply(&mut cfg);
            write_filtered(&cfg, &out)?;
        }
        Command::Analyze { panel, input, filter, preset, seed, bootstrap, ties, out } => {
            input.apply(&panel, &mut cfg);
            filter.apply(&mut cfg);
            if let Some(p) = preset {
                cfg.simulate = Some(SimulateConfig { preset: p, ..Default::default() });
                cfg.input.path = None;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(b) = bootstrap {
                cfg.magnitude.bootstrap_replicates = b;
            }
            if let Some(t) = ties {
                cfg.hazard.ties = match t.as_str() {
                    "breslow" => rigidity_core::hazard::Ties::Breslow,
                    "efron" => rigidity_core::hazard::Ties::Efron,
                    other => return Err(Error::Config(format!("unknown ties method `{other}`"))),
                };
            }
            if let Some(o) = out {
                cfg.output.dir = Some(o);
            }
            let (panel, digest) = if cfg.simulate.is_some() {
                rigidity_core::report::acquire_panel(&cfg)?
            } else {
                read_panel(&cfg)?
            };
            info!("panel: {} observations, {} products", panel.n_observations(), panel.products.len());
            let bundle = analyze_panel(&panel, digest, &cfg)?;
            let dir = cfg.output.dir.clone().unwrap_or_else(|| PathBuf::from("rigidity-out"));
            let files = write_bundle(&bundle, &dir)?;
            println!("wrote {} files to {}", files.len(), dir.display());
        }
        Command::Simulate { preset, seed, weeks, oracle, out, truth } => {
            let sim = SimulateConfig { preset, n_weeks: weeks, oracle };
            let seed = seed.unwrap_or(cfg.seed);
            let (panel, gt) = simulate_panel(&sim.sim_config()?, seed)?;
            let mut w = sink(&out)?;
            write_panel(&panel, &mut w)?;
            w.flush()?;
            if let Some(t) = truth {
                write_ground_truth(&gt, io::BufWriter::new(fs::File::create(t)?))?;
            }
            info!("simulated {} observations", panel.n_observations());
        }
        Command::Report { bundle, out } => {
            let b = load_bundle(&bundle)?;
            match out {
                Some(dir) => {
                    let files = write_bundle(&b, &dir)?;
                    println!("wrote {} files to {}", files.len(), dir.display());
                }
                None => {
                    let stamp = b.stamp();
                    let mut stdout = io::stdout().lock();
                    for t in b.tables() {
                        writeln!(stdout, "{}", t.to_text(&stamp))?;
                    }
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.stage());
            ExitCode::from(exit_code(&e))
        }
    }
}
