use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use splatup::gradcheck::{self, Corruption, GradCheckReport};
use splatup::io::{read_cloud, read_mesh, write_cloud, write_mesh_off, FileFormat};
use splatup::shapes::Shape;
use splatup::{upsample, MetricReport, UpsampleConfig};

use crate::args::{Cli, Command, EvalArgs, FormatArg, GradcheckArgs, PipelineArgs, SampleMeshArgs, UpsampleArgs};
use crate::robustness;

/// Runs one command and returns the process exit code.
pub fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Upsample(a) => cmd_upsample(&a).map(|s| {
            println!("{}", serde_json::to_string(&s).expect("summary serializes"));
            0
        }),
        Command::Eval(a) => {
            let report = cmd_eval(&a)?;
            println!("{}", serde_json::to_string(&report)?);
            println!("{}", metric_table(&report));
            Ok(0)
        }
        Command::Robustness(a) => {
            let outcome = robustness::cmd_robustness(&a)?;
            println!(
                "{} rows, {} failed; csv {}, json {}",
                outcome.rows,
                outcome.failed,
                a.csv.display(),
                a.json.display()
            );
            Ok(if outcome.failed == 0 { 0 } else { 1 })
        }
        Command::Gradcheck(a) => {
            let report = cmd_gradcheck(&a)?;
            println!("{}", serde_json::to_string(&report)?);
            let blocks = [
                ("offset", report.max_rel_error.offset),
                ("logits", report.max_rel_error.logits),
                ("quat", report.max_rel_error.quat),
            ];
            for (name, err) in blocks {
                let verdict = if err < report.tolerance { "ok" } else { "FAIL" };
                println!("{name:>6}  max rel error {err:.3e}  {verdict}");
            }
            if report.passed {
                Ok(0)
            } else {
                let offenders: Vec<_> = blocks.iter().filter(|(_, e)| *e >= report.tolerance).map(|(n, _)| *n).collect();
                eprintln!("gradient check failed for: {}", offenders.join(", "));
                if let Some(w) = &report.worst {
                    eprintln!(
                        "worst: case {} component {} analytic {:e} numeric {:e} (rel {:.3e})",
                        w.case, w.component, w.analytic, w.numeric, w.rel_error
                    );
                }
                Ok(1)
            }
        }
        Command::SampleMesh(a) => {
            let n = cmd_sample_mesh(&a)?;
            println!("wrote {n} points to {}", a.output.display());
            Ok(0)
        }
    }
}

pub fn build_config(p: &PipelineArgs, rate: usize, seed: u64) -> UpsampleConfig {
    UpsampleConfig {
        rate,
        sample_rate: p.r_train,
        backend: p.backend.into(),
        k_neighbors: p.k_neighbors,
        truncation_radius: p.truncation,
        refinement_passes: p.passes,
        refinement_weight: p.weight,
        normal_source: p.normal_source.into(),
        scale_gain: p.scale_gain,
        lambda_gaussian: p.lambda,
        alignment_form: p.alignment.into(),
        opt_steps: p.steps,
        learning_rate: p.lr,
        patch_size: p.patch_size,
        coverage_factor: p.coverage,
        seed,
        ..UpsampleConfig::default()
    }
}

/// SHA-256 of the effective configuration serialized with sorted keys.
pub fn config_hash(cfg: &UpsampleConfig, use_patches: bool) -> String {
    let mut value = serde_json::to_value(cfg).expect("config serializes");
    value
        .as_object_mut()
        .expect("config is an object")
        .insert("use_patches".into(), use_patches.into());
    let canonical = serde_json::to_string(&value).expect("value serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

pub fn output_format(path: &Path, explicit: Option<FormatArg>) -> Result<FileFormat> {
    Ok(match explicit {
        Some(FormatArg::Xyz) => FileFormat::XyzAscii,
        Some(FormatArg::Ply) => FileFormat::PlyBinaryLe,
        Some(FormatArg::PlyAscii) => FileFormat::PlyAscii,
        Some(FormatArg::Off) => FileFormat::Off,
        None => FileFormat::from_path(path)?,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Timings {
    pub read_ms: u128,
    pub upsample_ms: u128,
    pub write_ms: u128,
}

#[derive(Debug, Clone, Serialize)]
pub struct UpsampleSummary {
    pub schema_version: u32,
    pub input_points: usize,
    pub output_points: usize,
    pub rate: usize,
    pub stages: usize,
    pub patches: usize,
    pub config_hash: String,
    pub timings: Timings,
}

pub fn cmd_upsample(a: &UpsampleArgs) -> Result<UpsampleSummary> {
    let t0 = Instant::now();
    let cloud = read_cloud(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let gt = a
        .gt
        .as_ref()
        .map(|p| read_cloud(p).with_context(|| format!("reading {}", p.display())))
        .transpose()?;
    let format = output_format(&a.output, a.format)?;
    let cfg = build_config(&a.pipeline, a.rate, a.seed);
    let read_ms = t0.elapsed().as_millis();

    let t1 = Instant::now();
    let out = upsample(&cloud, gt.as_ref(), &cfg, !a.pipeline.no_patching)?;
    let upsample_ms = t1.elapsed().as_millis();
    if out.cloud.len() != cfg.rate * cloud.len() {
        bail!("pipeline produced {} points, expected {}", out.cloud.len(), cfg.rate * cloud.len());
    }

    let t2 = Instant::now();
    write_cloud(&out.cloud, &a.output, format).with_context(|| format!("writing {}", a.output.display()))?;
    Ok(UpsampleSummary {
        schema_version: 1,
        input_points: cloud.len(),
        output_points: out.cloud.len(),
        rate: cfg.rate,
        stages: out.stages,
        patches: out.patches,
        config_hash: config_hash(&cfg, !a.pipeline.no_patching),
        timings: Timings {
            read_ms,
            upsample_ms,
            write_ms: t2.elapsed().as_millis(),
        },
    })
}

pub fn cmd_eval(a: &EvalArgs) -> Result<MetricReport> {
    let pred = read_cloud(&a.pred).with_context(|| format!("reading {}", a.pred.display()))?;
    let gt = read_cloud(&a.gt).with_context(|| format!("reading {}", a.gt.display()))?;
    let mesh = a
        .mesh
        .as_ref()
        .map(|p| read_mesh(p).with_context(|| format!("reading {}", p.display())))
        .transpose()?;
    Ok(MetricReport::compute(&pred, &gt, mesh.as_ref())?)
}

/// Human-readable table with values multiplied by the display scale.
pub fn metric_table(r: &MetricReport) -> String {
    let mut s = format!("metric   value (x{:.0e})\n", r.display_scale);
    s += &format!("CD       {:.4}\n", r.cd * r.display_scale);
    s += &format!("HD       {:.4}", r.hd * r.display_scale);
    if let Some(p) = r.p2f {
        s += &format!("\nP2F      {:.4}", p * r.display_scale);
    }
    s
}

pub fn cmd_gradcheck(a: &GradcheckArgs) -> Result<GradCheckReport> {
    if a.cases == 0 {
        bail!("--cases must be at least 1");
    }
    Ok(gradcheck::run(a.seed, a.cases, a.form.into(), a.corrupt_offsets.map(Corruption::ScaleOffsets))?)
}

pub fn cmd_sample_mesh(a: &SampleMeshArgs) -> Result<usize> {
    let mesh = match (&a.mesh, &a.shape) {
        (Some(p), _) => read_mesh(p).with_context(|| format!("reading {}", p.display()))?,
        (None, Some(name)) => name.parse::<Shape>()?.mesh(),
        (None, None) => bail!("either --mesh or --shape is required"),
    };
    let cloud = mesh.sample_surface(a.count, a.seed)?;
    write_cloud(&cloud, &a.output, output_format(&a.output, a.format)?)?;
    if let Some(p) = &a.write_mesh {
        write_mesh_off(&mesh, p)?;
    }
    Ok(cloud.len())
}
