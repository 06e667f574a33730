use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use skd_cli::commands::{self, DistillOverrides};
use skd_cli::sweep::{capacity_table, temperature_table, DEFAULT_TAUS, DEFAULT_WIDTHS};
use skd_cli::Result;
use skd_core::Method;

/// Knowledge-distillation experiments on small MLPs.
#[derive(Debug, Parser)]
#[command(name = "skd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the bundled default config to a file.
    InitConfig { path: PathBuf },

    /// Train a teacher with cross-entropy and store its average logit norm.
    TrainTeacher {
        config: PathBuf,
        /// Run directory (default: <output_dir>/teacher).
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Distill a student from a trained teacher.
    Distill {
        config: PathBuf,
        #[arg(long, value_parser = parse_method)]
        method: Option<Method>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
        /// Teacher checkpoint (overrides [distill] teacher_checkpoint).
        #[arg(long)]
        teacher: Option<PathBuf>,
        /// Run directory (default: <output_dir>/distill-<method>).
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// One teacher per width, student distilled with KD and SKD from each.
    SweepCapacity {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_WIDTHS)]
        teacher_widths: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// KD and SKD at each temperature from one teacher.
    SweepTemperature {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_TAUS)]
        taus: Vec<f64>,
        /// Reuse this teacher instead of training one.
        #[arg(long)]
        teacher: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Merge metrics tables from run or sweep directories and chart them.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: skd_core::Error| e.to_string())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::InitConfig { path } => {
            commands::init_config(&path)?;
            println!("wrote {}", path.display());
        }
        Command::TrainTeacher { config, out } => {
            let r = commands::train_teacher(&config, out.as_deref())?;
            let last = r.record.last();
            println!(
                "teacher: {} params, train_acc={}, test_acc={}, l_avg={}",
                r.checkpoint.model.param_count(),
                last.map_or(f64::NAN, |l| l.train_acc),
                last.map_or(f64::NAN, |l| l.test_acc),
                r.checkpoint.l_avg.unwrap_or(f64::NAN)
            );
            println!("run directory: {}", r.dir.display());
        }
        Command::Distill {
            config,
            method,
            tau,
            lambda,
            teacher,
            out,
        } => {
            let overrides = DistillOverrides {
                method,
                tau,
                lambda,
                teacher,
            };
            let r = commands::distill(&config, &overrides, out.as_deref())?;
            if let Some(l) = r.record.last() {
                println!("student: train_acc={}, test_acc={}", l.train_acc, l.test_acc);
                if let Some(d) = &l.diagnostics {
                    println!(
                        "kd_loss={}, confidence_gap={}, norm_mse={}, normalized_mse={}, radial_alignment={}",
                        d.kd_loss_on_test, d.confidence_gap, d.norm_mse, d.normalized_mse, d.radial_alignment
                    );
                }
            }
            println!("run directory: {}", r.dir.display());
        }
        Command::SweepCapacity {
            config,
            teacher_widths,
            jobs,
            out,
        } => {
            let rows = commands::sweep_capacity(&config, &teacher_widths, jobs, out.as_deref())?;
            print!("{}", capacity_table(&rows).to_csv());
        }
        Command::SweepTemperature {
            config,
            taus,
            teacher,
            jobs,
            out,
        } => {
            let summary = commands::sweep_temperature(&config, &taus, teacher.as_deref(), jobs, out.as_deref())?;
            print!("{}", temperature_table(&summary.rows).to_csv());
            for (m, s) in &summary.accuracy_std {
                println!("# {m} accuracy std across tau: {s}");
            }
        }
        Command::Report { runs, out } => {
            let r = commands::report(&runs, &out)?;
            print!("{}", r.table.to_csv());
            for c in &r.charts {
                eprintln!("chart: {}", c.display());
            }
            eprintln!("report: {}", out.join(skd_cli::report::REPORT_FILE).display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
