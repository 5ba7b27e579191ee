use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};
use manifold_hmm::experiment::{self, fit, mc_study, StudyConfig};
use manifold_hmm::geometry::ManifoldPoint;
use manifold_hmm::hmm::{default_init, EmConfig, HmmParams};
use manifold_hmm::io::{read_observations, write_field_observations, write_observations, FlagRecord, ModelFile};
use manifold_hmm::mrf::{field_em_fit, FieldEmConfig, FieldParams, GridGraph};
use manifold_hmm::oracle::{run_suite, Suite};
use manifold_hmm::sampling::{simulate_field, simulate_hmm, SimConfig};
use manifold_hmm::{Error, Result};

/// Hidden Markov chains and fields with manifold-valued observations.
#[derive(Parser)]
#[command(name = "mhmm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate hidden states and observations from a model.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        /// Sequence length (ignored for field models).
        #[arg(long = "T", default_value_t = 10_000)]
        t: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Fit a model to observations by EM.
    Fit {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        obs: PathBuf,
        #[arg(long = "n-em", default_value_t = 300)]
        n_em: usize,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        /// Seeds the default initializer when fitting from a preset.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Monte-Carlo study of the EM estimator.
    McStudy {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long = "T", default_value_t = 10_000)]
        t: usize,
        #[arg(long = "n-mc", default_value_t = 5)]
        n_mc: usize,
        #[arg(long = "n-em", default_value_t = 300)]
        n_em: usize,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run a numerical oracle suite and print its report as JSON.
    Oracle {
        #[arg(value_parser = ["fb-bruteforce", "normalizers", "mstep-optimality", "mrf-exact"])]
        suite: String,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Also write the report to DIR/oracle-<suite>.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
#[group(skip)]
#[command(group(ArgGroup::new("source").required(true).args(["model", "preset"])))]
struct ModelArgs {
    /// Model JSON file.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Built-in model.
    #[arg(long, value_parser = [experiment::PAPER_FACE])]
    preset: Option<String>,
    /// Multiply every scale parameter by this factor.
    #[arg(long = "sigma-scale")]
    sigma_scale: Option<f64>,
}

enum Model {
    Chain(HmmParams),
    Field(FieldParams, GridGraph),
}

impl ModelArgs {
    fn load(&self) -> Result<Model> {
        let model = match (&self.model, &self.preset) {
            (Some(path), _) => {
                let file = ModelFile::from_json(&read_to_string(path)?)?;
                if file.grid.is_some() {
                    let (f, g) = file.to_field()?;
                    Model::Field(f, g)
                } else {
                    Model::Chain(file.to_hmm()?)
                }
            }
            (None, Some(name)) => Model::Chain(experiment::preset(name)?),
            (None, None) => unreachable!("clap requires one of --model, --preset"),
        };
        let Some(k) = self.sigma_scale else {
            return Ok(model);
        };
        if !k.is_finite() || k <= 0.0 {
            return Err(Error::InvalidParams(format!("--sigma-scale must be positive (got {k})")));
        }
        Ok(match model {
            Model::Chain(p) => Model::Chain(experiment::with_sigma_scale(&p, k)?),
            Model::Field(mut f, g) => {
                f.emissions.iter_mut().for_each(|e| e.sigma *= k);
                Model::Field(FieldParams::new(f.family, f.v, f.j, f.emissions)?, g)
            }
        })
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?;
    Ok(BufWriter::new(file))
}

fn write_json(dir: &Path, name: &str, json: &str) -> Result<PathBuf> {
    let mut w = create(dir, name)?;
    w.write_all(json.as_bytes())?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(dir.join(name))
}

/// Plot-ready points: (re, im) for the disk, raw coordinates otherwise.
fn write_scatter(dir: &Path, states: &[usize], obs: &[ManifoldPoint]) -> Result<()> {
    let mut w = create(dir, "scatter.csv")?;
    let header = manifold_hmm::io::coordinate_header(obs[0].kind(), obs[0].dim());
    writeln!(w, "{},state", header.join(","))?;
    for (y, s) in obs.iter().zip(states) {
        let c: Vec<String> = y.coords().iter().map(f64::to_string).collect();
        writeln!(w, "{},{}", c.join(","), s + 1)?;
    }
    w.flush()?;
    Ok(())
}

fn simulate(model: &ModelArgs, t: usize, seed: u64, out: &Path) -> Result<()> {
    let sim = SimConfig::new(seed);
    let (data, file) = match model.load()? {
        Model::Chain(p) => {
            if t == 0 {
                return Err(Error::InvalidParams("--T must be at least 1".into()));
            }
            let data = simulate_hmm(&p, t, sim)?;
            write_observations(create(out, "observations.csv")?, Some(&data.states), &data.obs)?;
            (data, ModelFile::from_hmm(&p))
        }
        Model::Field(f, g) => {
            let data = simulate_field(&f, &g, sim)?;
            write_field_observations(create(out, "observations.csv")?, &g, Some(&data.states), &data.obs)?;
            (data, ModelFile::from_field(&f, &g))
        }
    };
    write_scatter(out, &data.states, &data.obs)?;
    write_json(out, "model.json", &file.to_json()?)?;
    eprintln!("wrote {} observations to {}", data.obs.len(), out.display());
    Ok(())
}

fn em_config(n_em: usize, tol: f64) -> Result<EmConfig> {
    if n_em == 0 {
        return Err(Error::InvalidParams("--n-em must be at least 1".into()));
    }
    if tol.is_nan() || tol < 0.0 {
        return Err(Error::InvalidParams(format!("--tol must be nonnegative (got {tol})")));
    }
    Ok(EmConfig { max_iter: n_em, tol, ..EmConfig::default() })
}

fn fit_cmd(model: &ModelArgs, obs: &Path, n_em: usize, tol: f64, seed: u64, out: &Path) -> Result<()> {
    let cfg = em_config(n_em, tol)?;
    let table = read_observations(BufReader::new(
        File::open(obs).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", obs.display()))))?,
    ))?;
    let file = match model.load()? {
        Model::Chain(p) => {
            let reference: Vec<ManifoldPoint> = p.emissions.iter().map(|e| e.ybar.clone()).collect();
            // a preset names the truth; the fit starts from the default initializer
            let init = if model.preset.is_some() {
                default_init(&p.family, &table.obs, p.n_states(), seed, &cfg.frechet, &cfg.root)?
            } else {
                p
            };
            let res = fit(&init, &table.obs, &cfg, Some(&reference))?;
            res.to_model_file()
        }
        Model::Field(f, g) => {
            let obs = table.field_observations(&g)?;
            let fcfg = FieldEmConfig {
                max_iter: cfg.max_iter,
                tol: cfg.tol,
                ..FieldEmConfig::default()
            };
            let res = field_em_fit(&f, &g, &obs, &fcfg)?;
            let mut m = ModelFile::from_field(&res.params, &g);
            m.loglik_trace = Some(res.loglik_trace);
            m.iterations = Some(res.iterations);
            m.converged = Some(res.converged);
            m.flags = Some(res.flags.iter().map(|(k, f)| FlagRecord::new(*k, f)).collect());
            m
        }
    };
    let path = write_json(out, "fitted.json", &file.to_json()?)?;
    let trace = file.loglik_trace.as_deref().unwrap_or(&[]);
    eprintln!(
        "{} iterations, loglik {:.6} -> {:.6}; wrote {}",
        file.iterations.unwrap_or(0),
        trace.first().copied().unwrap_or(f64::NAN),
        trace.last().copied().unwrap_or(f64::NAN),
        path.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn mc_cmd(model: &ModelArgs, t: usize, n_mc: usize, n_em: usize, tol: f64, seed: u64, out: &Path) -> Result<()> {
    let Model::Chain(truth) = model.load()? else {
        return Err(Error::Unsupported("mc-study runs on chain models only".into()));
    };
    if n_mc == 0 {
        return Err(Error::InvalidParams("--n-mc must be at least 1".into()));
    }
    if t == 0 {
        return Err(Error::InvalidParams("--T must be at least 1".into()));
    }
    let cfg = StudyConfig {
        truth,
        t,
        n_mc,
        em: em_config(n_em, tol)?,
        seed,
        init: None,
    };
    let summary = mc_study(&cfg)?;
    let path = write_json(out, "summary.json", &serde_json::to_string_pretty(&summary).map_err(Error::Json)?)?;
    eprintln!(
        "{}/{} runs completed; max V_mc: P {:.3e}, ybar {:.3e}, sigma {:.3e}; wrote {}",
        summary.completed,
        n_mc,
        summary.max_var_p,
        summary.max_var_ybar,
        summary.max_var_sigma,
        path.display()
    );
    Ok(())
}

fn oracle_cmd(suite: &str, seed: u64, out: Option<&Path>) -> Result<bool> {
    let suite: Suite = suite.parse()?;
    let report = run_suite(suite, seed)?;
    let json = serde_json::to_string_pretty(&report).map_err(Error::Json)?;
    // a closed pipe is not an error worth reporting
    let _ = writeln!(std::io::stdout().lock(), "{json}");
    if let Some(dir) = out {
        write_json(dir, &format!("oracle-{}.json", suite.name()), &json)?;
    }
    Ok(report.passed)
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Simulate { model, t, seed, out } => simulate(model, *t, *seed, out).map(|_| true),
        Command::Fit { model, obs, n_em, tol, seed, out } => fit_cmd(model, obs, *n_em, *tol, *seed, out).map(|_| true),
        Command::McStudy { model, t, n_mc, n_em, tol, seed, out } => {
            mc_cmd(model, *t, *n_mc, *n_em, *tol, *seed, out).map(|_| true)
        }
        Command::Oracle { suite, seed, out } => oracle_cmd(suite, *seed, out.as_deref()),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        // a failed oracle check is a numerical failure
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
