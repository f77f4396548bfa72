//! `experiment` subcommand: runs a config and writes CSVs and checkpoints. Everything is
//! written to a sibling staging directory first and moved into place only on success.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::config::{parse_config, ExperimentConfigFile};
use super::CliError;
use crate::attacks::AttackKind;
use crate::eval::{aggregate, find_outliers, run_experiment, FrontierPoint, RunResult};

pub const RECORDS_HEADER: &str = "run,epoch,accuracy,attack,fpr,fnr,p_err,epsilon";
pub const FRONTIER_HEADER: &str = "epoch,mean_accuracy,ci_accuracy,mean_p_err,ci_p_err";
pub const OUTLIERS_HEADER: &str = "epoch,population,fraction";
pub(crate) const DECISIONS_HEADER: [&str; 5] =
    ["run", "epoch", "attack", "population", "decisions"];

/// Where an experiment's files went.
#[derive(Debug, Clone)]
pub struct ExperimentOutputs {
    pub dir: PathBuf,
    pub runs: usize,
    pub epochs: usize,
}

/// Loads `config_path`, runs the experiment, and writes its outputs. Relative paths in the
/// config resolve against the config's directory; `out_override` is used as given.
pub fn run_experiment_config(
    config_path: &Path,
    out_override: Option<&Path>,
) -> Result<ExperimentOutputs, CliError> {
    let text = fs::read_to_string(config_path)
        .map_err(|e| CliError::Usage(format!("{}: {e}", config_path.display())))?;
    let cfg = parse_config(&text)
        .map_err(|e| CliError::Usage(format!("{}: {e}", config_path.display())))?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let dir = match out_override {
        Some(p) => p.to_path_buf(),
        None if cfg.output_dir.is_absolute() => cfg.output_dir.clone(),
        None => base.join(&cfg.output_dir),
    };

    let split = cfg.load_split(base)?;
    let spec = cfg.experiment_spec(&split)?;
    let report_attack = cfg.report_attack()?;
    let runs = run_experiment(&split, &spec)?;

    let staging = staging_dir(&dir)?;
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    let written = write_outputs(&staging, &cfg, &runs, &spec.attacks, report_attack)
        .and_then(|()| replace_dir(&staging, &dir));
    if let Err(e) = written {
        let _ = fs::remove_dir_all(&staging);
        return Err(e);
    }
    Ok(ExperimentOutputs {
        dir,
        runs: runs.len(),
        epochs: spec.config.epochs,
    })
}

fn staging_dir(dir: &Path) -> Result<PathBuf, CliError> {
    let name = dir.file_name().ok_or_else(|| {
        CliError::Usage(format!(
            "output path {} has no final component",
            dir.display()
        ))
    })?;
    let mut staged = name.to_os_string();
    staged.push(".partial");
    Ok(dir.with_file_name(staged))
}

/// Moves `staging` to `dir`, replacing a previous experiment output but never an unrelated
/// non-empty directory.
fn replace_dir(staging: &Path, dir: &Path) -> Result<(), CliError> {
    if dir.exists() {
        let previous_run = dir.join("records.csv").is_file();
        let empty = fs::read_dir(dir)?.next().is_none();
        if !previous_run && !empty {
            return Err(CliError::Usage(format!(
                "{} exists and does not hold a previous experiment",
                dir.display()
            )));
        }
        fs::remove_dir_all(dir)?;
    } else if let Some(parent) = dir.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::rename(staging, dir)?;
    Ok(())
}

fn write_outputs(
    dir: &Path,
    cfg: &ExperimentConfigFile,
    runs: &[RunResult],
    attacks: &[AttackKind],
    report_attack: AttackKind,
) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("records.csv"), records_csv(runs))?;

    fs::write(
        dir.join("frontier.csv"),
        frontier_csv(&aggregate(runs, report_attack)?),
    )?;
    for &attack in attacks {
        fs::write(
            dir.join(format!("frontier_{attack}.csv")),
            frontier_csv(&aggregate(runs, attack)?),
        )?;
    }

    let mut outliers = format!("{OUTLIERS_HEADER}\n");
    for record in &runs[0].records {
        let report = find_outliers(runs, report_attack, record.epoch)?;
        let _ = writeln!(
            outliers,
            "{},member,{}",
            report.epoch, report.member_outlier_fraction
        );
        let _ = writeln!(
            outliers,
            "{},nonmember,{}",
            report.epoch, report.nonmember_outlier_fraction
        );
        let _ = writeln!(
            outliers,
            "{},average,{}",
            report.epoch, report.average_fraction
        );
    }
    fs::write(dir.join("outliers.csv"), outliers)?;

    if cfg.write_decisions {
        fs::write(dir.join("decisions.csv"), decisions_csv(runs))?;
    }
    if cfg.write_checkpoints {
        let ckpt_dir = dir.join("checkpoints");
        fs::create_dir_all(&ckpt_dir)?;
        for run in runs {
            for c in &run.checkpoints {
                c.write_to(&ckpt_dir.join(format!("run{}_epoch{}.miab", run.run, c.epoch)))?;
            }
        }
    }
    Ok(())
}

pub fn records_csv(runs: &[RunResult]) -> String {
    let mut s = format!("{RECORDS_HEADER}\n");
    for run in runs {
        for r in &run.records {
            for a in &r.attacks {
                let ev = &a.evaluation;
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{}",
                    run.run,
                    r.epoch,
                    r.test_accuracy,
                    a.attack,
                    ev.fpr,
                    ev.fnr,
                    ev.p_err,
                    r.epsilon
                );
            }
        }
    }
    s
}

pub fn frontier_csv(points: &[FrontierPoint]) -> String {
    let mut s = format!("{FRONTIER_HEADER}\n");
    for p in points {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            p.epoch, p.mean_accuracy, p.ci_accuracy, p.mean_p_err, p.ci_p_err
        );
    }
    s
}

fn decisions_csv(runs: &[RunResult]) -> String {
    let bits = |d: &[bool]| {
        d.iter()
            .map(|&b| if b { '1' } else { '0' })
            .collect::<String>()
    };
    let mut s = format!("{}\n", DECISIONS_HEADER.join(","));
    for run in runs {
        for r in &run.records {
            for a in &r.attacks {
                let ev = &a.evaluation;
                let _ = writeln!(
                    s,
                    "{},{},{},member,{}",
                    run.run,
                    r.epoch,
                    a.attack,
                    bits(&ev.member_decisions)
                );
                let _ = writeln!(
                    s,
                    "{},{},{},nonmember,{}",
                    run.run,
                    r.epoch,
                    a.attack,
                    bits(&ev.nonmember_decisions)
                );
            }
        }
    }
    s
}
