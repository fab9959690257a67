use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use trendmax::{
    analyze_endpoints, analyze_polyk, analyze_table, parse_animal_csv, parse_endpoint_csv, parse_grouped_csv,
    Alternative, AnalysisConfig, Link, PseudoCount, Report, Scaling, TrendError, WilliamsWeights,
};

/// Maximum trend test for tumor incidences across dose groups.
#[derive(Debug, Parser)]
#[command(name = "trendmax", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Grouped table with columns dose,events,n.
    Trend {
        #[command(flatten)]
        common: Common,
    },
    /// Per-animal records (dose,tumor,death_time) with poly-k adjustment.
    Polyk {
        #[command(flatten)]
        common: Common,
        /// Poly-k exponents; several are tested jointly.
        #[arg(long, value_delimiter = ',', required = true)]
        k: Vec<f64>,
        /// Study length, defaults to the latest death time.
        #[arg(long)]
        t_max: Option<f64>,
    },
    /// Several tumor endpoints on the same animals (id,dose[,death_time],endpoint columns).
    Multi {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', required = true)]
        endpoints: Vec<String>,
        /// Poly-k exponents; without them the crude incidences are used.
        #[arg(long, value_delimiter = ',')]
        k: Vec<f64>,
    },
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "logit")]
    link: Link,
    /// Defaults to add2, or none with poly-k weights.
    #[arg(long)]
    pseudo: Option<PseudoCount>,
    #[arg(long, value_delimiter = ',', default_value = "ari,ord,log")]
    scalings: Vec<Scaling>,
    /// Include Williams contrasts (the default).
    #[arg(long, overrides_with = "no_williams")]
    williams: bool,
    #[arg(long)]
    no_williams: bool,
    #[arg(long, default_value = "sized")]
    williams_weights: WilliamsWeights,
    #[arg(long, default_value = "greater")]
    alternative: Alternative,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[arg(long, env = "TRENDMAX_SEED", default_value_t = 42)]
    seed: u64,
    /// Absolute error tolerance of the multivariate normal integration.
    #[arg(long, default_value_t = 1e-4)]
    mvn_tol: f64,
    /// Dose substituted for a zero control on the log scale.
    #[arg(long)]
    log_zero_dose: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

impl Common {
    fn config(&self, k: &[f64]) -> AnalysisConfig {
        let default_pseudo = if k.is_empty() {
            PseudoCount::Add2
        } else {
            PseudoCount::None
        };
        AnalysisConfig {
            link: self.link,
            pseudo_count: self.pseudo.unwrap_or(default_pseudo),
            scalings: self.scalings.clone(),
            include_williams: self.williams || !self.no_williams,
            williams_weights: self.williams_weights,
            alternative: self.alternative,
            polyk_exponents: k.to_vec(),
            confidence_level: self.level,
            mvn_abs_tol: self.mvn_tol,
            mvn_seed: self.seed,
            log_zero_dose: self.log_zero_dose,
        }
    }
}

enum Failure {
    Input(String),
    Numerical(String),
}

impl From<TrendError> for Failure {
    fn from(e: TrendError) -> Self {
        if e.is_input_error() {
            Failure::Input(e.to_string())
        } else {
            Failure::Numerical(e.to_string())
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<(Report, Format), Failure> {
    match cli.command {
        Command::Trend { common } => {
            let table = parse_grouped_csv::<f64>(&read(&common.input)?)?;
            Ok((analyze_table(&table, &common.config(&[]))?, common.format))
        }
        Command::Polyk { common, k, t_max } => {
            let mut data = parse_animal_csv::<f64>(&read(&common.input)?)?;
            if let Some(t) = t_max {
                data = data.with_t_max(t)?;
            }
            Ok((analyze_polyk(&data, &common.config(&k))?, common.format))
        }
        Command::Multi { common, endpoints, k } => {
            let data = parse_endpoint_csv::<f64>(&read(&common.input)?, &endpoints)?;
            Ok((analyze_endpoints(&data, &common.config(&k))?, common.format))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok((report, Format::Text)) => {
            let _ = io::stdout().write_all(report.to_text().as_bytes());
            ExitCode::SUCCESS
        }
        Ok((report, Format::Json)) => {
            let _ = writeln!(io::stdout(), "{}", report.to_json());
            ExitCode::SUCCESS
        }
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(3)
        }
    }
}
