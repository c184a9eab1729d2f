//! Hyperparameter sweeps and the fusion ablation.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use crate::episodes::Split;
use crate::error::{Error, Result};
use crate::fusion::FusionKind;

use super::{evaluate_model, mean_ci95, train, RunConfig, TaskData};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    Lambda,
    Tau,
    Scale,
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Lambda => "lambda",
            Self::Tau => "tau",
            Self::Scale => "scale",
        })
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda" => Ok(Self::Lambda),
            "tau" => Ok(Self::Tau),
            "scale" => Ok(Self::Scale),
            other => Err(Error::Config(format!("cannot sweep {other:?} (expected lambda, tau or scale)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub param: SweepParam,
    pub value: f64,
    pub mean_acc: f64,
    pub ci95: f64,
}

/// One training run per value, all from the config's seed, scored on the
/// validation split.
pub fn sweep(
    base: &RunConfig,
    data: &TaskData,
    param: SweepParam,
    values: &[f64],
    threads: usize,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    // Validate every value up front so a bad one fails before any training.
    let configs = values
        .iter()
        .map(|&v| {
            let mut cfg = base.clone();
            match param {
                SweepParam::Lambda => cfg.lambda = v,
                SweepParam::Tau => cfg.tau = v,
                SweepParam::Scale => cfg.scale = Some(v),
            }
            if !v.is_finite() {
                return Err(Error::Config(format!("sweep value {v} is not finite")));
            }
            cfg.validate()?;
            Ok(cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(values.len());
    for (cfg, &value) in configs.iter().zip(values) {
        let run = train(cfg, data, threads, None)?;
        let report = evaluate_model(&run.model, &data.dataset, Split::Val, cfg, cfg.eval_episodes, threads)?;
        log::info!("{param} = {value}: val acc {:.4} ± {:.4}", report.mean_acc, report.ci95);
        rows.push(SweepRow {
            param,
            value,
            mean_acc: report.mean_acc,
            ci95: report.ci95,
        });
    }
    Ok(rows)
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut s = String::from("param,value,mean_acc,ci95\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{:.6},{:.6}", r.param, r.value, r.mean_acc, r.ci95);
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// One arm of the ablation.
#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub name: &'static str,
    pub lambda: f64,
    pub fusion: FusionKind,
}

/// Baseline (no auxiliary task, no fusion) and the four multi-task arms at
/// the config's λ.
pub fn ablation_variants(lambda: f64) -> Result<Vec<Variant>> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::Config(format!(
            "ablation needs 0 < lambda ≤ 1 for the multi-task variants, got {lambda}"
        )));
    }
    Ok(vec![
        Variant { name: "baseline", lambda: 0.0, fusion: FusionKind::None },
        Variant { name: "mt", lambda, fusion: FusionKind::None },
        Variant { name: "mt_se", lambda, fusion: FusionKind::SqueezeExcitation },
        Variant { name: "mt_cam", lambda, fusion: FusionKind::Cam },
        Variant { name: "mt_concat", lambda, fusion: FusionKind::Concat },
    ])
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    pub seeds: Vec<u64>,
    pub lambda: f64,
    pub fusion: FusionKind,
    /// Mean over seeds of each seed's mean test accuracy.
    pub mean_acc: f64,
    /// Half-width over all pooled test episodes.
    pub ci95: f64,
    /// Per-seed mean test accuracy, in `seeds` order.
    pub per_seed: Vec<f64>,
}

/// Train every variant once per seed with identical budgets and report
/// test accuracy. `data_for_seed` supplies the dataset of each seed.
pub fn ablate<F>(base: &RunConfig, seeds: &[u64], threads: usize, mut data_for_seed: F) -> Result<Vec<AblationRow>>
where
    F: FnMut(u64) -> Result<TaskData>,
{
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let variants = ablation_variants(base.lambda)?;
    let mut per_variant: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); variants.len()];
    for &seed in seeds {
        let data = data_for_seed(seed)?;
        for (v, slot) in variants.iter().zip(&mut per_variant) {
            let mut cfg = base.clone();
            cfg.seed = seed;
            cfg.lambda = v.lambda;
            cfg.fusion = v.fusion;
            let run = train(&cfg, &data, threads, Some(cfg.eval_episodes))?;
            let report = run.test.expect("test evaluation requested");
            log::info!("seed {seed} {}: test acc {:.4} ± {:.4}", v.name, report.mean_acc, report.ci95);
            slot.0.push(report.mean_acc);
            slot.1.extend(report.accuracies);
        }
    }
    Ok(variants
        .into_iter()
        .zip(per_variant)
        .map(|(v, (per_seed, pooled))| AblationRow {
            variant: v.name.to_string(),
            seeds: seeds.to_vec(),
            lambda: v.lambda,
            fusion: v.fusion,
            mean_acc: per_seed.iter().sum::<f64>() / per_seed.len() as f64,
            ci95: mean_ci95(&pooled).1,
            per_seed,
        })
        .collect())
}

pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut s = String::from("variant,seeds,lambda,fusion,mean_acc,ci95\n");
    for r in rows {
        let seeds: Vec<String> = r.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(
            s,
            "{},{},{},{},{:.6},{:.6}",
            r.variant,
            seeds.join(";"),
            r.lambda,
            r.fusion,
            r.mean_acc,
            r.ci95
        );
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}
