use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use one2one::datasets::{generate_synthetic, load_paired_dataset, split_dirs, write_paired_dataset, Split, SyntheticTaskSpec};
use one2one::manifest::{dataset_hash, sha256_file, RunManifest};
use one2one::metrics::{
    direction_pair, evaluate_with, self_inverse_score, Identity, LabelLookup, MetricAggregates, ReportMetadata,
    SampleMetrics, Translator,
};
use one2one::models::{load_checkpoint, Checkpoint, Direction, TrainMode};
use one2one::selfcheck::{run_selfcheck, SelfcheckOptions};
use one2one::sensitivity::{check_specs, run_sensitivity, sensitivity_summary, Role, SensitivityConfig, SensitivityModels, SensitivityReport};
use one2one::training::{generator_from_checkpoint, resume, train_from, TrainState};
use one2one::ImageTensor;

use crate::config::{FlatConfig, RUNTIME_FIELDS};
use crate::{panel, Cli, CliError, Command, EvalArgs, EvalStub, SelfcheckArgs, SensitivityArgs, SynthArgs, TrainArgs};

type CliResult<T = ()> = Result<T, CliError>;

pub fn run(cli: Cli) -> CliResult {
    match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Sensitivity(a) => sensitivity(a),
        Command::Selfcheck(a) => selfcheck(a),
    }
}

/// Create `out`, refusing a non-empty directory unless `reuse`.
fn prepare_out(out: &Path, reuse: bool) -> CliResult {
    if !reuse && out.is_dir() {
        let mut entries = fs::read_dir(out).map_err(|e| one2one::Error::Io {
            path: out.to_path_buf(),
            source: e,
        })?;
        if entries.next().is_some() {
            return Err(CliError::Usage(format!("output directory {} is not empty", out.display())));
        }
    }
    fs::create_dir_all(out).map_err(|e| {
        CliError::Core(one2one::Error::Io {
            path: out.to_path_buf(),
            source: e,
        })
    })
}

fn require_split(root: &Path, split: Split) -> CliResult {
    let (a, b) = split_dirs(root, split);
    if !a.is_dir() || !b.is_dir() {
        return Err(CliError::Usage(format!(
            "dataset {} has no {} and {} directories",
            root.display(),
            a.file_name().unwrap_or_default().to_string_lossy(),
            b.file_name().unwrap_or_default().to_string_lossy()
        )));
    }
    Ok(())
}

fn require_file(path: &Path, what: &str) -> CliResult {
    if !path.is_file() {
        return Err(CliError::Usage(format!("{what} {} does not exist", path.display())));
    }
    Ok(())
}

fn read_checkpoint(path: &Path, what: &str) -> CliResult<(Checkpoint, String)> {
    require_file(path, what)?;
    Ok((load_checkpoint(path)?, sha256_file(path)?))
}

fn write_text(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| {
        CliError::Core(one2one::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn synth(a: &SynthArgs) -> CliResult {
    let specs: Vec<SyntheticTaskSpec> = [(Split::Train, a.n), (Split::Val, a.val), (Split::Test, a.test)]
        .into_iter()
        .filter(|&(split, n)| n > 0 || split == Split::Train)
        .map(|(split, n)| SyntheticTaskSpec {
            task: a.task,
            image_size: a.size,
            n_samples: n,
            seed: a.seed,
            texture: a.texture,
            generator_depth: a.depth,
            split,
        })
        .collect();
    for s in &specs {
        s.validate()?;
    }
    prepare_out(&a.out, false)?;
    let mut counts = BTreeMap::new();
    let mut domains = None;
    for s in &specs {
        let ds = generate_synthetic(s)?;
        write_paired_dataset(&a.out, &ds)?;
        counts.insert(s.split.as_str(), ds.len());
        domains = Some(ds.domain_names.clone());
        eprintln!("{}: {} pairs", s.split, ds.len());
    }
    let config = json!({
        "dataset": {
            "task": a.task,
            "image_size": a.size,
            "seed": a.seed,
            "texture": a.texture,
            "generator_depth": a.depth,
            "domain_names": domains,
            "splits": counts,
        },
        "specs": specs,
    });
    RunManifest::new("synth", config).finish(&a.out)?;
    Ok(())
}

fn train(a: &TrainArgs) -> CliResult {
    require_split(&a.data, Split::Train)?;
    let file = match &a.config {
        Some(p) => FlatConfig::read(p)?,
        None => FlatConfig::default(),
    };
    let flat = file.overlay(&a.flags.to_flat());
    let mut manifest_inputs = vec![("dataset".to_string(), dataset_hash(&a.data)?)];
    let (mut state, cfg) = match &a.resume {
        Some(path) => {
            let fixed: Vec<&str> = flat.set_fields().into_iter().filter(|f| !RUNTIME_FIELDS.contains(f)).collect();
            if !fixed.is_empty() {
                return Err(CliError::Usage(format!(
                    "a resumed run keeps its checkpoint's configuration; cannot change {}",
                    fixed.join(", ")
                )));
            }
            require_file(path, "checkpoint")?;
            let (state, mut cfg) = resume(path)?;
            flat.apply_runtime(&mut cfg);
            cfg.validate()?;
            manifest_inputs.push(("resume_checkpoint".into(), sha256_file(path)?));
            (state, cfg)
        }
        None => {
            let cfg = flat.resolve();
            cfg.validate()?;
            (TrainState::new(&cfg)?, cfg)
        }
    };
    let dataset = load_paired_dataset(&a.data, Split::Train, cfg.generator.in_channels)?;
    prepare_out(&a.out, a.resume.is_some())?;
    let per_epoch = cfg.steps_per_epoch(dataset.len());
    let total = cfg.total_steps(dataset.len());
    eprintln!(
        "{}: {} pairs, {} steps per epoch, {} steps, starting at {}",
        cfg.mode,
        dataset.len(),
        per_epoch,
        total,
        state.step
    );
    let mut observer = |r: &one2one::training::StepRecord| {
        if r.step % per_epoch == 0 || r.step == total {
            let l = &r.losses;
            eprintln!(
                "epoch {} step {}/{}: d {:.4} g_gan {:.4} g_l1 {:.4}",
                r.step.div_ceil(per_epoch),
                r.step,
                total,
                l.d_loss,
                l.g_gan_loss,
                l.g_l1_loss
            );
        }
    };
    train_from(&mut state, &cfg, &dataset, Some(&a.out), &mut observer)?;
    let mut m = RunManifest::new("train", serde_json::to_value(&cfg).map_err(one2one::Error::from)?);
    for (k, v) in manifest_inputs {
        m.input(k, v);
    }
    m.finish(&a.out)?;
    Ok(())
}

/// Aggregates of one eval run, written to `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    /// Checkpoint mode, or the stub name.
    pub model: String,
    pub split: Split,
    pub directions: BTreeMap<String, MetricAggregates>,
    /// Mean L1 of `g(g(v))` to `v` over both domains; one2one only.
    pub self_inverse_score: Option<f64>,
}

type PanelRow = (ImageTensor, ImageTensor, ImageTensor, SampleMetrics);

fn eval(a: &EvalArgs) -> CliResult {
    require_split(&a.data, a.split)?;
    let loaded = match (&a.stub, &a.checkpoint) {
        (None, Some(p)) => Some(read_checkpoint(p, "checkpoint")?),
        _ => None,
    };
    let mode = loaded.as_ref().map(|(c, _)| c.mode);
    let generator = loaded.as_ref().map(|(c, _)| generator_from_checkpoint(c)).transpose()?;
    let channels = generator.as_ref().map_or(a.channels, |g| g.spec().in_channels);
    let mut directions = a.direction.directions();
    let trained = match mode {
        Some(TrainMode::Pix2PixA) => Some(Direction::A),
        Some(TrainMode::Pix2PixB) => Some(Direction::B),
        _ => None,
    };
    if let (Some(t), Some(m)) = (trained, mode) {
        if directions.len() == 1 && directions[0] != t {
            return Err(CliError::Usage(format!(
                "a {m} checkpoint translates {} only, not {}",
                t.label(),
                directions[0].label()
            )));
        }
        directions = vec![t];
    }
    let dataset = load_paired_dataset(&a.data, a.split, channels)?;
    prepare_out(&a.out, false)?;
    let model_name = match (a.stub, mode) {
        (Some(EvalStub::ExactLabel), _) => "stub:exact-label".to_string(),
        (Some(EvalStub::Identity), _) => "stub:identity".to_string(),
        (None, Some(m)) => m.as_str().to_string(),
        (None, None) => unreachable!("checkpoint is required without a stub"),
    };
    let data_hash = dataset_hash(&a.data)?;
    let mut summary = EvalSummary {
        model: model_name.clone(),
        split: a.split,
        directions: BTreeMap::new(),
        self_inverse_score: None,
    };
    for dir in directions {
        let lookup;
        let model: &dyn Translator = match (a.stub, &generator) {
            (Some(EvalStub::ExactLabel), _) => {
                lookup = LabelLookup::new(&dataset, dir);
                &lookup
            }
            (Some(EvalStub::Identity), _) => &Identity,
            (None, Some(g)) => g,
            (None, None) => unreachable!("checkpoint is required without a stub"),
        };
        let meta = ReportMetadata {
            checkpoint_id: loaded.as_ref().map(|(_, h)| h.clone()),
            dataset_hash: Some(data_hash.clone()),
            model: Some(model_name.clone()),
            ..ReportMetadata::default()
        };
        let mut rows: Vec<PanelRow> = Vec::new();
        let report = evaluate_with(model, &dataset, dir, meta, &mut |s, out, m| {
            if rows.len() < a.panels {
                let (input, target) = direction_pair(s, dir);
                rows.push((input.clone(), out.clone(), target.clone(), m.clone()));
            }
            Ok(())
        })?;
        report.write(&a.out, &format!("eval_{}", dir.label()))?;
        if !rows.is_empty() {
            let dir_path = a.out.join("panels");
            fs::create_dir_all(&dir_path).map_err(|e| one2one::Error::Io {
                path: dir_path.clone(),
                source: e,
            })?;
            panel::write(&dir_path.join(format!("{}.png", dir.label())), &rows)?;
        }
        let g = &report.aggregates;
        println!(
            "{} {}: L1 {:.4}  PSNR {:.2} dB  SSIM {:.4}  ({} samples)",
            model_name,
            dir.label(),
            g.l1.mean,
            g.psnr.mean,
            g.ssim.mean,
            report.per_sample.len()
        );
        summary.directions.insert(dir.label().to_string(), report.aggregates);
    }
    if let (Some(TrainMode::One2One), Some(g)) = (mode, &generator) {
        let s = self_inverse_score(g, &dataset)?;
        println!("{model_name} self-inverse score: {s:.4}");
        summary.self_inverse_score = Some(s);
    }
    write_text(
        &a.out.join("summary.json"),
        &(serde_json::to_string_pretty(&summary).map_err(one2one::Error::from)? + "\n"),
    )?;
    let mut m = RunManifest::new(
        "eval",
        json!({
            "split": a.split,
            "direction": format!("{:?}", a.direction),
            "panels": a.panels,
            "stub": a.stub.map(|s| format!("{s:?}")),
            "model": model_name,
        }),
    );
    m.input("dataset", data_hash);
    if let Some((_, h)) = &loaded {
        m.input("checkpoint", h.clone());
    }
    m.finish(&a.out)?;
    Ok(())
}

fn sensitivity(a: &SensitivityArgs) -> CliResult {
    require_split(&a.data, a.split)?;
    let paths: [(Role, &PathBuf, &str); 3] = [
        (Role::Pix2PixA, &a.pix2pix_a, "--pix2pix-a"),
        (Role::Pix2PixB, &a.pix2pix_b, "--pix2pix-b"),
        (Role::One2One, &a.one2one, "--one2one"),
    ];
    let mut loaded = Vec::with_capacity(3);
    for (role, path, flag) in paths {
        let (ckpt, hash) = read_checkpoint(path, &format!("{flag} checkpoint"))?;
        if ckpt.mode.as_str() != role.as_str() {
            return Err(CliError::Usage(format!(
                "{flag} checkpoint {} was trained as {}, expected {}",
                path.display(),
                ckpt.mode,
                role.as_str()
            )));
        }
        loaded.push((role, ckpt, hash));
    }
    check_specs(&loaded.iter().map(|(r, c, _)| (*r, &c.generator_spec)).collect::<Vec<_>>())?;
    let gens = loaded
        .iter()
        .map(|(_, c, _)| generator_from_checkpoint(c))
        .collect::<one2one::Result<Vec<_>>>()?;
    let channels = gens[0].spec().in_channels;
    let dataset = load_paired_dataset(&a.data, a.split, channels)?;
    for dir in a.direction.directions() {
        SensitivityConfig::new(dir, a.metrics.clone()).validate()?;
    }
    prepare_out(&a.out, false)?;
    let data_hash = dataset_hash(&a.data)?;
    let hash_of = |role: Role| loaded.iter().find(|(r, _, _)| *r == role).map(|(_, _, h)| h.clone());
    let mut all: Vec<SensitivityReport> = Vec::new();
    for dir in a.direction.directions() {
        let stub = a.stub_perturber.map(|_| LabelLookup::new(&dataset, dir.flipped()));
        let perturbs = |role: Role| stub.is_some() && role == Role::baseline(dir.flipped());
        let pick = |role: Role, i: usize| -> &dyn Translator {
            match &stub {
                Some(s) if perturbs(role) => s,
                _ => &gens[i],
            }
        };
        let models = SensitivityModels {
            pix2pix_a: pick(Role::Pix2PixA, 0),
            pix2pix_b: pick(Role::Pix2PixB, 1),
            one2one: pick(Role::One2One, 2),
        };
        let meta = ReportMetadata {
            dataset_hash: Some(data_hash.clone()),
            ..ReportMetadata::default()
        };
        let outcome = run_sensitivity(&SensitivityConfig::new(dir, a.metrics.clone()), &models, &dataset, meta)?;
        let mut reports = [outcome.pix2pix, outcome.one2one];
        for r in &mut reports {
            r.metadata.checkpoint_id = hash_of(r.model);
            r.write(&a.out, &format!("sensitivity_{}_{}", dir.label(), r.model.as_str()))?;
        }
        let table = sensitivity_summary(&reports.iter().collect::<Vec<_>>());
        let stem = format!("summary_{}", dir.label());
        write_text(&a.out.join(format!("{stem}.csv")), &table.to_csv())?;
        write_text(&a.out.join(format!("{stem}.txt")), &table.to_text())?;
        all.extend(reports);
    }
    if all.len() > 2 {
        let table = sensitivity_summary(&all.iter().collect::<Vec<_>>());
        write_text(&a.out.join("summary.csv"), &table.to_csv())?;
        write_text(&a.out.join("summary.txt"), &table.to_text())?;
        print!("{}", table.to_text());
    } else {
        print!("{}", sensitivity_summary(&all.iter().collect::<Vec<_>>()).to_text());
    }
    let mut m = RunManifest::new(
        "sensitivity",
        json!({
            "split": a.split,
            "direction": format!("{:?}", a.direction),
            "metrics": a.metrics,
            "stub_perturber": a.stub_perturber.map(|s| format!("{s:?}")),
        }),
    );
    m.input("dataset", data_hash);
    for (role, _, hash) in &loaded {
        m.input(format!("checkpoint_{}", role.as_str()), hash.clone());
    }
    m.finish(&a.out)?;
    Ok(())
}

fn selfcheck(a: &SelfcheckArgs) -> CliResult {
    let report = run_selfcheck(&SelfcheckOptions { fault: a.inject_fault });
    for c in &report.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if let Some(out) = &a.out {
        prepare_out(out, false)?;
        write_text(
            &out.join("selfcheck.json"),
            &(serde_json::to_string_pretty(&report).map_err(one2one::Error::from)? + "\n"),
        )?;
        RunManifest::new("selfcheck", json!({ "inject_fault": a.inject_fault.map(|f| f.as_str()) })).finish(out)?;
    }
    let failures = report.failures();
    if failures.is_empty() {
        println!("selfcheck passed ({} checks)", report.checks.len());
        Ok(())
    } else {
        let names: Vec<&str> = failures.iter().map(|c| c.name.as_str()).collect();
        Err(CliError::Invariant(format!("selfcheck failed: {}", names.join("; "))))
    }
}
