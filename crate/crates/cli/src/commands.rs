use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use slicedp::accounting::{
    epsilon_at, gamma, rdp_epsilon, deterministic_epsilon, MechanismDims, PrivacyReport,
};
use slicedp::generator::GeneratorModel;
use slicedp::mechanism::{apply_mechanism, encode, poisson_subsample, Encoding, SliceBundle};
use slicedp::rng::{SeedSequence, Stream};
use slicedp::table::{ColumnSchema, RawTable, Table};
use slicedp::trainer::{self, TrainState};
use slicedp::{evaluate as metrics, Error, Result};

use crate::settings::Settings;
use crate::{AccountArgs, EvaluateArgs, GenerateArgs, RunArgs, SliceArgs, TrainArgs};

pub const BUNDLE_FILE: &str = "bundle.slb";
pub const PRIVACY_FILE: &str = "privacy.json";
pub const SCHEMA_FILE: &str = "schema.toml";
pub const MODEL_FILE: &str = "model.slgm";
pub const STATE_FILE: &str = "train_state.sltc";
pub const HISTORY_FILE: &str = "history.csv";
pub const SYNTHETIC_FILE: &str = "synthetic.csv";
pub const METRICS_FILE: &str = "metrics.json";

const DEFAULT_K: usize = 2;
const DEFAULT_M: usize = 25;
const DEFAULT_DELTA: f64 = 1e-5;

/// Path of a file an earlier stage should have produced.
fn stage_input(dir: &Path, name: &str, stage: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::Io(io::Error::new(
            io::ErrorKind::NotFound,
            format!(
                "{} not found; run `slicedp {stage} --out {}` first",
                path.display(),
                dir.display()
            ),
        )))
    }
}

fn mechanism_delta(delta: f64, rate: Option<f64>) -> Result<f64> {
    match rate {
        Some(r) if r > 0.0 && r <= 1.0 => Ok(delta / r),
        Some(r) => Err(Error::InvalidConfig(format!("subsampling rate {r} outside (0, 1]"))),
        None => Ok(delta),
    }
}

/// `delta` is always the final guarantee; with subsampling the mechanism
/// itself runs at `delta / rate`.
fn privacy_report(
    sigma: Option<f64>,
    epsilon: Option<f64>,
    delta: f64,
    dims: MechanismDims,
    rate: Option<f64>,
) -> Result<PrivacyReport> {
    let rate = rate.filter(|&r| r != 1.0);
    match (sigma, epsilon) {
        (Some(s), None) => PrivacyReport::for_sigma(s, dims, mechanism_delta(delta, rate)?, rate),
        (None, Some(e)) => PrivacyReport::calibrate(e, delta, dims, rate),
        (Some(_), Some(_)) => Err(Error::InvalidConfig(
            "give either sigma or epsilon, not both".into(),
        )),
        (None, None) => Err(Error::InvalidConfig(
            "missing noise level: set epsilon (with delta) or sigma".into(),
        )),
    }
}

fn print_report(r: &PrivacyReport) {
    println!("d, k, m          {}, {}, {}", r.dims.d, r.dims.k, r.dims.m);
    println!("sigma            {:.6}", r.sigma);
    println!("alpha*           {:.6}", r.alpha_star);
    println!("gamma            {:.6}", r.gamma);
    println!("rdp epsilon      {:.6}", r.rdp_epsilon);
    if let Some(rate) = r.subsample_rate {
        println!("rate             {rate}");
        println!("mechanism eps    {:.6} (delta {:e})", r.mechanism_epsilon, r.mechanism_delta);
    }
    println!("epsilon          {:.6}", r.epsilon);
    println!("delta            {:e}", r.delta);
    println!("deterministic    {:.6}", r.deterministic_epsilon);
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn account(a: &AccountArgs) -> Result<()> {
    let dims = MechanismDims::new(a.d, a.k, a.m)?;
    if let Some(alpha) = a.alpha {
        let sigma = match (a.sigma, a.epsilon) {
            (Some(s), _) => s,
            (None, Some(e)) => privacy_report(None, Some(e), a.delta, dims, a.rate)?.sigma,
            (None, None) => unreachable!("clap requires one of sigma or epsilon"),
        };
        let delta = mechanism_delta(a.delta, a.rate.filter(|&r| r != 1.0))?;
        let eps = epsilon_at(sigma, dims, alpha, delta)?;
        println!("sigma            {sigma:.6}");
        println!("alpha            {alpha:.6}");
        println!("gamma            {:.6}", gamma(sigma, alpha));
        println!("rdp epsilon      {:.6}", rdp_epsilon(sigma, dims, alpha)?);
        println!("epsilon          {eps:.6}");
        println!("deterministic    {:.6}", deterministic_epsilon(sigma, dims.m, alpha, delta)?);
        if let Some(path) = &a.json {
            let value = serde_json::json!({
                "sigma": sigma, "alpha": alpha, "delta": delta, "epsilon": eps, "dims": dims,
            });
            write_json(path, &value)?;
        }
        return Ok(());
    }
    let report = privacy_report(a.sigma, a.epsilon, a.delta, dims, a.rate)?;
    print_report(&report);
    if let Some(path) = &a.json {
        write_json(path, &report)?;
    }
    Ok(())
}

pub fn slice(a: &SliceArgs, seed: u64) -> Result<()> {
    let mut s = Settings::load(a.config.as_deref())?;
    s.set("k", a.k);
    s.set("m", a.m);
    s.set("epsilon", a.epsilon);
    s.set("delta", a.delta);
    s.set("sigma", a.sigma);
    s.set("rate", a.rate);
    // a flag for one noise parameter replaces a config value for the other
    let (sigma, epsilon) = match (a.sigma, a.epsilon) {
        (Some(v), None) => (Some(v), None),
        (None, Some(v)) => (None, Some(v)),
        _ => (s.get::<f64>("sigma")?, s.get::<f64>("epsilon")?),
    };
    let delta = s.get_or("delta", DEFAULT_DELTA)?;
    let rate = s.get::<f64>("rate")?;

    let schema = ColumnSchema::load(&a.schema)?;
    let raw = RawTable::load(&a.input)?;
    let mut x = encode(&raw, &schema)?;
    let dims = MechanismDims::new(x.width(), s.get_or("k", DEFAULT_K)?, s.get_or("m", DEFAULT_M)?)?;
    let report = privacy_report(sigma, epsilon, delta, dims, rate)?;

    let seeds = SeedSequence::new(seed);
    if let Some(r) = report.subsample_rate {
        x = poisson_subsample(&x, r, &mut seeds.stream(Stream::Subsample, 0))?;
    }
    log::info!("releasing {} of {} rows", x.n_rows(), raw.rows.len());
    let bundle = apply_mechanism(&x, dims, report.sigma, seeds)?;

    fs::create_dir_all(&a.out)?;
    bundle.save(&a.out.join(BUNDLE_FILE))?;
    write_json(&a.out.join(PRIVACY_FILE), &report)?;
    fs::write(a.out.join(SCHEMA_FILE), schema.to_toml_string())?;
    print_report(&report);
    println!("released rows    {}", bundle.n_rows());
    Ok(())
}

pub fn train(a: &TrainArgs, seed: u64) -> Result<()> {
    let mut s = Settings::load(a.config.as_deref())?;
    s.set("steps", a.steps);
    s.set("batch_size", a.batch_size);
    s.set("learning_rate", a.learning_rate);
    train_with(&s, &a.out, a.resume.as_deref(), seed)
}

fn train_with(s: &Settings, out: &Path, resume: Option<&Path>, seed: u64) -> Result<()> {
    let cfg = s.train_config(seed)?;
    let bundle = SliceBundle::load(&stage_input(out, BUNDLE_FILE, "slice")?)?;
    let state = match resume {
        Some(p) => TrainState::load(p)?,
        None => TrainState::new(cfg.init_model(bundle.dims().d)?, &cfg),
    };
    let start = state.step;
    let ckpt_dir = out.join("checkpoints");
    if cfg.checkpoint_interval > 0 {
        fs::create_dir_all(&ckpt_dir)?;
    }
    let report_every = (cfg.max_steps / 20).max(1);
    let (state, history) = trainer::resume(
        &bundle,
        state,
        &cfg,
        (cfg.checkpoint_interval > 0).then_some(ckpt_dir.as_path()),
        |st, rec| {
            if st.step % report_every == 0 {
                log::info!("step {}/{} loss {:.6}", st.step, cfg.max_steps, rec.loss);
            }
            Ok(())
        },
    )?;

    state.model.save(&out.join(MODEL_FILE))?;
    state.save(&out.join(STATE_FILE))?;
    let history_path = out.join(HISTORY_FILE);
    if start > 0 && history_path.exists() {
        let mut buf = Vec::new();
        history.write_csv(&mut buf)?;
        let body = buf.splitn(2, |&b| b == b'\n').nth(1).unwrap_or(&[]);
        fs::OpenOptions::new().append(true).open(&history_path)?.write_all(body)?;
    } else {
        history.save_csv(&history_path)?;
    }
    let last = history.steps.last().map(|r| r.loss);
    match last {
        Some(loss) => println!("trained steps {start}..{} final loss {loss:.6}", state.step),
        None => println!("nothing to do: already at step {}", state.step),
    }
    Ok(())
}

pub fn generate(a: &GenerateArgs, seed: u64) -> Result<()> {
    let s = Settings::load(a.config.as_deref())?;
    let rows = match a.rows {
        Some(r) => r,
        None => s.get("rows")?.ok_or_else(|| {
            Error::InvalidConfig("missing row count: pass --rows or set `rows`".into())
        })?,
    };
    let output = a.output.clone().unwrap_or_else(|| a.out.join(SYNTHETIC_FILE));
    generate_with(&a.out, rows, &output, seed)
}

fn generate_with(out: &Path, rows: usize, output: &Path, seed: u64) -> Result<()> {
    let model = GeneratorModel::load(&stage_input(out, MODEL_FILE, "train")?)?;
    let schema = ColumnSchema::load(&stage_input(out, SCHEMA_FILE, "slice")?)?;
    let table = trainer::generate(&model, rows, &Encoding::new(schema), seed)?;
    table.save_csv(output)?;
    println!("wrote {rows} rows to {}", output.display());
    Ok(())
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let s = Settings::load(a.config.as_deref())?;
    let target = match &a.target {
        Some(t) => Some(t.clone()),
        None => s.get::<String>("target")?,
    };
    let synthetic = a.synthetic.clone().unwrap_or_else(|| a.out.join(SYNTHETIC_FILE));
    evaluate_with(&a.out, &a.real, &synthetic, target.as_deref())
}

fn evaluate_with(out: &Path, real: &Path, synthetic: &Path, target: Option<&str>) -> Result<()> {
    let schema = ColumnSchema::load(&stage_input(out, SCHEMA_FILE, "slice")?)?;
    if !synthetic.exists() {
        return Err(Error::Io(io::Error::new(
            io::ErrorKind::NotFound,
            format!("{} not found; run `slicedp generate` first", synthetic.display()),
        )));
    }
    let real = Table::load_csv(real, &schema)?;
    let syn = Table::load_csv(synthetic, &schema)?;
    let report = metrics::evaluate(&real, &syn, target)?;
    write_json(&out.join(METRICS_FILE), &report)?;
    for (name, v) in report.scores() {
        println!("{name:<24}{v:.6}");
    }
    Ok(())
}

pub fn run(a: &RunArgs, seed: u64) -> Result<()> {
    slice(&a.slice, seed)?;
    let mut s = Settings::load(a.slice.config.as_deref())?;
    s.set("steps", a.steps);
    s.set("rows", a.rows);
    s.set("target", a.target.clone());
    let out = &a.slice.out;
    train_with(&s, out, None, seed)?;
    let rows = match s.get("rows")? {
        Some(r) => r,
        None => RawTable::load(&a.slice.input)?.rows.len(),
    };
    let synthetic = out.join(SYNTHETIC_FILE);
    generate_with(out, rows, &synthetic, seed)?;
    if let Some(holdout) = &a.holdout {
        evaluate_with(out, holdout, &synthetic, s.get::<String>("target")?.as_deref())?;
    }
    Ok(())
}
