//! `algforge` — load model files, run checks and constructions, emit
//! equations and trajectories.
//!
//! Exit codes: `0` pass/success, `1` failed check or violated precondition
//! (with a witness), `2` usage, file, or schema errors.  Every command is
//! deterministic for fixed inputs and `ALGFORGE_SEED`; outputs are written
//! atomically.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use algforge_core::model::{
    build_el, exit_code, ha2_model_toml, integrate_model, kappa_eval_lines, load_model, run_check,
    run_kappa_eval, run_lift, run_prolong, run_subalg, ElForm, ModelError, ModelFile, Report,
    DEFAULT_SEED,
};

#[derive(Parser)]
#[command(
    name = "algforge",
    version,
    about = "a workbench for algebroids in local coordinates"
)]
struct Cli {
    /// Emit machine-readable JSON instead of the human rendering.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum WhichCheck {
    Skew,
    Al,
    Lie,
    Strong,
    Leibniz,
    Jacobi,
}

impl WhichCheck {
    fn name(self) -> &'static str {
        match self {
            WhichCheck::Skew => "skew",
            WhichCheck::Al => "al",
            WhichCheck::Lie => "lie",
            WhichCheck::Strong => "strong",
            WhichCheck::Leibniz => "leibniz",
            WhichCheck::Jacobi => "jacobi",
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormArg {
    Prolong2,
    Ep,
    EpPosition,
    Standard,
    Reduced,
}

impl From<FormArg> for ElForm {
    fn from(f: FormArg) -> ElForm {
        match f {
            FormArg::Prolong2 => ElForm::Prolong2,
            FormArg::Ep => ElForm::Ep,
            FormArg::EpPosition => ElForm::EpPosition,
            FormArg::Standard => ElForm::Standard,
            FormArg::Reduced => ElForm::Reduced,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an axiom check against the structure in the model file.
    Check {
        /// Which axiom to check.
        #[arg(long, value_enum)]
        which: WhichCheck,
        model: PathBuf,
    },
    /// Prolong the [algebroid] section to order 2 and write a model file.
    Prolong {
        model: PathBuf,
        /// Output path (default: the input with extension `.ha2.toml`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Realize the [liealgebra] section over a point, prolong it to order 2,
    /// and write a model file.
    Lift {
        model: PathBuf,
        /// Output path (default: the input with extension `.ha2.toml`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the variational equations of the model's Lagrangian.
    El {
        /// Equation form (default: the [lagrangian] form key).
        #[arg(long, value_enum)]
        form: Option<FormArg>,
        /// Emit a compilable LaTeX block instead of plain text.
        #[arg(long)]
        latex: bool,
        model: PathBuf,
    },
    /// Shorthand for `el --form ep`.
    Ep {
        /// Emit a compilable LaTeX block instead of plain text.
        #[arg(long)]
        latex: bool,
        model: PathBuf,
    },
    /// Integrate the variational equations and write a CSV trajectory.
    Integrate {
        model: PathBuf,
        /// Step size.
        #[arg(long, default_value_t = 1e-3)]
        h: f64,
        /// End time.
        #[arg(long = "T", default_value_t = 1.0)]
        t_end: f64,
        /// CSV output path (default: the input with extension `.csv`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the canonical flip of the [liealgebra] on rational tuples.
    KappaEval {
        model: PathBuf,
        /// Base tuples, `;`-separated, components `,`-separated (k tuples).
        #[arg(long)]
        ybar: String,
        /// Fiber tuples in the same format (k+1 tuples).
        #[arg(long)]
        x: String,
        /// Order (default: the [liealgebra] order key).
        #[arg(long)]
        order: Option<usize>,
    },
    /// Test the graded subspace family in the model for closure.
    Subalg { model: PathBuf },
}

fn seed_from_env() -> u64 {
    std::env::var("ALGFORGE_SEED")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(DEFAULT_SEED)
}

fn with_extension(path: &Path, ext: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_os_string())
        .unwrap_or_default();
    let mut name = stem;
    name.push(ext);
    path.with_file_name(name)
}

fn print_report(rep: &Report, json: bool) {
    if json {
        println!("{}", rep.json());
    } else {
        print!("{}", rep.human());
    }
}

fn report_code(rep: &Report) -> u8 {
    if rep.pass {
        0
    } else {
        1
    }
}

fn load(path: &Path) -> Result<ModelFile, ModelError> {
    load_model(path)
}

fn run(cli: Cli) -> Result<u8, ModelError> {
    match cli.cmd {
        Cmd::Check { which, model } => {
            let mf = load(&model)?;
            let rep = run_check(&mf, which.name(), seed_from_env())?;
            print_report(&rep, cli.json);
            Ok(report_code(&rep))
        }
        Cmd::Prolong { model, out } => {
            let mf = load(&model)?;
            let ha = run_prolong(&mf)?;
            let path = out.unwrap_or_else(|| with_extension(&model, ".ha2.toml"));
            algforge_core::model::write_atomic(&path, &ha2_model_toml(&ha))?;
            announce_write(&path, cli.json);
            Ok(0)
        }
        Cmd::Lift { model, out } => {
            let mf = load(&model)?;
            let ha = run_lift(&mf)?;
            let path = out.unwrap_or_else(|| with_extension(&model, ".ha2.toml"));
            algforge_core::model::write_atomic(&path, &ha2_model_toml(&ha))?;
            announce_write(&path, cli.json);
            Ok(0)
        }
        Cmd::El { form, latex, model } => {
            let mf = load(&model)?;
            let (sys, _) = build_el(&mf, form.map(Into::into))?;
            print_el(&sys, latex, cli.json);
            Ok(0)
        }
        Cmd::Ep { latex, model } => {
            let mf = load(&model)?;
            let (sys, _) = build_el(&mf, Some(ElForm::Ep))?;
            print_el(&sys, latex, cli.json);
            Ok(0)
        }
        Cmd::Integrate {
            model,
            h,
            t_end,
            out,
        } => {
            let mf = load(&model)?;
            let (csv, rep) = integrate_model(&mf, None, h, t_end)?;
            let path = out.unwrap_or_else(|| with_extension(&model, ".csv"));
            algforge_core::model::write_atomic(&path, &csv)?;
            print_report(&rep, cli.json);
            Ok(report_code(&rep))
        }
        Cmd::KappaEval {
            model,
            ybar,
            x,
            order,
        } => {
            let mf = load(&model)?;
            let levels = run_kappa_eval(&mf, order, &ybar, &x)?;
            if cli.json {
                let arr: Vec<Vec<String>> = levels
                    .iter()
                    .map(|t| t.iter().map(algforge_core::expr::rat_to_string).collect())
                    .collect();
                println!(
                    "{}",
                    serde_json::to_string(&arr).expect("string arrays serialize")
                );
            } else {
                print!("{}", kappa_eval_lines(&levels));
            }
            Ok(0)
        }
        Cmd::Subalg { model } => {
            let mf = load(&model)?;
            let rep = run_subalg(&mf)?;
            print_report(&rep, cli.json);
            Ok(report_code(&rep))
        }
    }
}

fn announce_write(path: &Path, json: bool) {
    if json {
        println!(
            "{{\"wrote\": {}}}",
            serde_json::Value::String(path.display().to_string())
        );
    } else {
        println!("wrote {}", path.display());
    }
}

fn print_el(sys: &algforge_core::mechanics::ELSystem, latex: bool, json: bool) {
    if json {
        let residuals: Vec<String> = sys.residuals.iter().map(|p| p.to_display()).collect();
        let constraints: Vec<String> = sys.admissibility.iter().map(|p| p.to_display()).collect();
        let obj = serde_json::json!({
            "residuals": residuals,
            "constraints": constraints,
            "boundary": sys.boundary_term.to_display(),
        });
        println!("{obj}");
        return;
    }
    if latex {
        println!("\\begin{{align*}}");
        for p in &sys.residuals {
            println!("{} &= 0 \\\\", p.to_latex());
        }
        for p in &sys.admissibility {
            println!("{} &= 0 \\\\", p.to_latex());
        }
        println!("\\end{{align*}}");
        return;
    }
    for p in &sys.residuals {
        println!("{} = 0", p.to_display());
    }
    for p in &sys.admissibility {
        println!("constraint: {} = 0", p.to_display());
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
