use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use lorasim::mlmodel::footprint::{footprint_table, static_size_bytes, ConvStackSpec, Quant};
use lorasim::mlmodel::sea::{sea_sweep, synthetic_problem};
use nalgebra::DMatrix;

use crate::output::csv_writer;

#[derive(Args, Debug)]
pub struct FootprintArgs {
    /// l3, sonyc-l3, or a TOML/JSON network description.
    #[arg(long, default_value = "l3")]
    model: String,
    /// f32 or i8.
    #[arg(long, default_value = "f32")]
    quant: Quant,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_model(name: &str) -> anyhow::Result<ConvStackSpec> {
    match name {
        "l3" => Ok(ConvStackSpec::l3()),
        "sonyc-l3" | "sonyc_l3" => Ok(ConvStackSpec::sonyc_l3()),
        path => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading model file {path}"))?;
            let spec: ConvStackSpec = if path.ends_with(".json") {
                serde_json::from_str(&text)?
            } else {
                toml::from_str(&text)?
            };
            spec.validate()?;
            Ok(spec)
        }
    }
}

pub fn footprint(a: FootprintArgs) -> anyhow::Result<()> {
    let spec = load_model(&a.model)?;
    let rows = footprint_table(&spec, a.quant)?;
    let mut w = csv_writer(a.out.as_deref())?;
    w.write_record(["layers", "height", "width", "channels", "kib"])?;
    for r in &rows {
        w.write_record([r.layers.clone(), r.height.to_string(), r.width.to_string(), r.channels.to_string(), r.kib.to_string()])?;
    }
    w.flush()?;
    let weights = static_size_bytes(&spec, u64::from(a.quant.bytes()))?;
    eprintln!("{}: {} weight bytes", spec.name, weights);
    Ok(())
}

#[derive(Args, Debug)]
pub struct SeaArgs {
    /// Student input features, one row per sample (CSV with header).
    #[arg(long, requires = "teacher")]
    features: Option<PathBuf>,
    /// Teacher embeddings, rows aligned with --features.
    #[arg(long, requires = "features")]
    teacher: Option<PathBuf>,
    /// Reduced dimensions to sweep.
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,16,32")]
    dims: Vec<usize>,
    /// Seed for the synthetic problem.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 400)]
    samples: usize,
    #[arg(long, default_value_t = 32)]
    input_dim: usize,
    #[arg(long, default_value_t = 64)]
    embedding_dim: usize,
    #[arg(long, default_value_t = 8)]
    latent: usize,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
}

fn read_matrix(path: &Path) -> anyhow::Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let mut data = Vec::new();
    let mut cols = None;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row: Vec<f64> = rec
            .iter()
            .map(|c| c.parse::<f64>().with_context(|| format!("row {}: {c:?} is not a number", i + 1)))
            .collect::<anyhow::Result<_>>()?;
        match cols {
            None => cols = Some(row.len()),
            Some(n) if n != row.len() => bail!("row {} has {} columns, expected {n}", i + 1, row.len()),
            _ => {}
        }
        data.extend(row);
    }
    let Some(ncols) = cols else { bail!("{} has no data rows", path.display()) };
    Ok(DMatrix::from_row_slice(data.len() / ncols, ncols, &data))
}

pub fn sea_demo(a: SeaArgs) -> anyhow::Result<()> {
    let (f, t) = match (&a.features, &a.teacher) {
        (Some(fp), Some(tp)) => {
            let f = read_matrix(fp).with_context(|| format!("reading {}", fp.display()))?;
            let t = read_matrix(tp).with_context(|| format!("reading {}", tp.display()))?;
            if f.nrows() != t.nrows() {
                bail!("features have {} rows but teacher has {}", f.nrows(), t.nrows());
            }
            (f, t)
        }
        _ => synthetic_problem(a.seed, a.samples, a.input_dim, a.embedding_dim, a.latent, a.noise),
    };
    let dims: Vec<usize> = a.dims.iter().copied().filter(|&d| d <= t.ncols()).collect();
    if dims.is_empty() {
        bail!("no requested dimension fits a {}-wide embedding", t.ncols());
    }
    let steps = sea_sweep(&f, &t, &dims)?;
    let mut w = csv_writer(None)?;
    w.write_record(["d", "objective", "teacher_space_error", "explained_fraction"])?;
    for s in &steps {
        w.write_record([
            s.d.to_string(),
            s.objective.to_string(),
            s.teacher_space_error.to_string(),
            s.explained_fraction.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
