mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "pmap", version, about = "Partition-map tools for VVC inter block partitioning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RulesArg {
    /// Partition rules (key=value file); defaults to the VVC common test conditions
    #[arg(long, value_name = "FILE")]
    rules: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a split-decision log into one PMAP1 file per frame
    Convert {
        log: PathBuf,
        /// Output directory (frame_<poc>.pmap files)
        #[arg(long)]
        out: PathBuf,
        /// Frame size for frames without a #size directive, e.g. 1920x1080
        #[arg(long, value_name = "WxH")]
        size: Option<String>,
        #[command(flatten)]
        rules: RulesArg,
    },
    /// Reconstruct compliant split trees from a (predicted) partition map
    Reconstruct {
        pmap: PathBuf,
        /// Post-processing config (key=value)
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        #[arg(long)]
        thqt: Option<String>,
        #[arg(long)]
        thmtt: Option<f64>,
        /// Output log file; stdout when omitted
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        rules: RulesArg,
    },
    /// Run the gating simulator on label/prediction maps
    Gate {
        #[arg(long)]
        label: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// Sidecar CSV with `row,col,p_mask` lines
        #[arg(long)]
        pmask: PathBuf,
        /// Gating config (key=value)
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        #[arg(long)]
        level: Option<usize>,
        #[arg(long)]
        th1: Option<f64>,
        #[arg(long)]
        th2: Option<f64>,
        #[arg(long)]
        dmax: Option<usize>,
        #[arg(long, value_enum, default_value_t = ReportFormat::Kv)]
        format: ReportFormat,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        rules: RulesArg,
    },
    /// Partitioning-adaptive warping residual
    Pwarp {
        #[arg(long)]
        cur: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        flow: PathBuf,
        /// QT depths from a PMAP1 file
        #[arg(long, conflicts_with = "depth_grid", required_unless_present = "depth_grid")]
        depth_pmap: Option<PathBuf>,
        /// Real-valued QT depths (u32 cols, u32 rows, f32 values)
        #[arg(long)]
        depth_grid: Option<PathBuf>,
        /// Residual output (u32 width, u32 height, i16 samples)
        #[arg(long)]
        out: PathBuf,
        /// Also write the adapted flow as .flo
        #[arg(long)]
        flow_out: Option<PathBuf>,
    },
    /// Evaluation arithmetic
    #[command(subcommand)]
    Metrics(MetricsCommand),
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Kv,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Interp {
    Auto,
    Spline,
    Pchip,
}

#[derive(Subcommand)]
enum MetricsCommand {
    /// Encoding time saving
    Ets { anchor: f64, test: f64 },
    /// Speed-up factor from a time saving
    Eta { ets: f64 },
    /// Pipeline overhead
    Rho { enc: f64, net: f64, post: f64 },
    /// BD-rate between two `qp,bitrate_kbps,psnr_db` files
    Bdrate {
        anchor: PathBuf,
        test: PathBuf,
        #[arg(long, value_enum, default_value_t = Interp::Auto)]
        interp: Interp,
    },
    /// Robustness deltas from `qp,ets` files and two BD-rates
    Delta { total: PathBuf, basic: PathBuf, bdbr_total: f64, bdbr_basic: f64 },
    /// Mean encoding time under the repeated-measurement protocol
    Timestats {
        file: PathBuf,
        #[arg(long, default_value_t = 0.99)]
        alpha: f64,
        #[arg(long, default_value_t = 0.01)]
        beta: f64,
        #[arg(long, default_value_t = 4)]
        min_m: usize,
        #[arg(long, default_value_t = 64)]
        max_m: usize,
        #[arg(long)]
        no_outliers: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
