//! Model sensitivity under baseline-generated input perturbations.
//!
//! For direction A the input `x_i` is replaced by `pix2pixB(y_i)`, the
//! opposite baseline's reconstruction of it, and each evaluated model
//! (`pix2pixA` and `one2one`) is scored against `y_i` on both the clean and
//! the perturbed input. The change `dE = |E_perturbed - E_clean|` is computed
//! per sample and averaged afterwards. Direction B mirrors every role.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datasets::{PairedDataset, PairedSample};
use crate::error::{Error, Result};
use crate::metrics::{direction_pair, score, MetricParams, Metric, ReportMetadata, Translator};
use crate::models::{Direction, GeneratorSpec};
use crate::tensor::ImageTensor;

/// Who a model is in the protocol.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    #[serde(rename = "pix2pixA")]
    Pix2PixA,
    #[serde(rename = "pix2pixB")]
    Pix2PixB,
    #[serde(rename = "one2one")]
    One2One,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Pix2PixA => "pix2pixA",
            Role::Pix2PixB => "pix2pixB",
            Role::One2One => "one2one",
        }
    }

    /// Baseline trained for `direction`.
    pub fn baseline(direction: Direction) -> Role {
        match direction {
            Direction::A => Role::Pix2PixA,
            Direction::B => Role::Pix2PixB,
        }
    }
}

/// The three models the protocol needs.
pub struct SensitivityModels<'a> {
    pub pix2pix_a: &'a dyn Translator,
    pub pix2pix_b: &'a dyn Translator,
    pub one2one: &'a dyn Translator,
}

impl SensitivityModels<'_> {
    fn get(&self, role: Role) -> &dyn Translator {
        match role {
            Role::Pix2PixA => self.pix2pix_a,
            Role::Pix2PixB => self.pix2pix_b,
            Role::One2One => self.one2one,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityConfig {
    pub direction: Direction,
    pub metrics: Vec<Metric>,
    #[serde(default)]
    pub metric_params: MetricParams,
}

impl SensitivityConfig {
    pub fn new(direction: Direction, metrics: Vec<Metric>) -> Self {
        SensitivityConfig {
            direction,
            metrics,
            metric_params: MetricParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.metrics.is_empty() {
            return Err(Error::Config("sensitivity needs at least one metric".into()));
        }
        let mut seen = self.metrics.clone();
        seen.sort_by_key(|m| m.as_str());
        seen.dedup();
        if seen.len() != self.metrics.len() {
            return Err(Error::Config("sensitivity metrics must be distinct".into()));
        }
        Ok(())
    }
}

/// All models must share one generator spec.
pub fn check_specs(specs: &[(Role, &GeneratorSpec)]) -> Result<()> {
    let Some((first_role, first)) = specs.first() else {
        return Ok(());
    };
    for (role, spec) in &specs[1..] {
        if spec != first {
            return Err(Error::Config(format!(
                "generator specs differ: {} has {:?} but {} has {:?}",
                first_role.as_str(),
                first,
                role.as_str(),
                spec
            )));
        }
    }
    Ok(())
}

/// Id given to a perturbed copy of a sample.
pub fn perturbed_id(id: &str, direction: Direction) -> String {
    match direction {
        Direction::A => format!("{id}+dx"),
        Direction::B => format!("{id}+dy"),
    }
}

/// Replace each input of `direction` by the opposite baseline's output on
/// the label. Labels are unchanged; ids gain a perturbation suffix.
pub fn perturb_inputs(dataset: &PairedDataset, direction: Direction, opposite: &dyn Translator) -> Result<PairedDataset> {
    let mut samples = Vec::with_capacity(dataset.len());
    for s in &dataset.samples {
        let (_, label) = direction_pair(s, direction);
        let perturbed = clamp_unit(opposite.translate(label)?);
        let id = perturbed_id(&s.id, direction);
        let sample = match direction {
            Direction::A => PairedSample::new(id, perturbed, s.y.clone())?,
            Direction::B => PairedSample::new(id, s.x.clone(), perturbed)?,
        };
        samples.push(sample);
    }
    PairedDataset::new(samples, dataset.split, dataset.domain_names.clone())
}

fn clamp_unit(mut t: ImageTensor) -> ImageTensor {
    t.data_mut().iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
    t
}

/// What a model was asked to translate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    /// The label, fed to the opposite baseline to make a perturbed input.
    Label,
    Clean,
    Perturbed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Invocation {
    pub step: u8,
    pub model: Role,
    pub sample: String,
    pub input: InputKind,
}

struct Traced<'a> {
    inner: &'a dyn Translator,
    role: Role,
    log: &'a RefCell<Vec<Invocation>>,
    step: u8,
    kind: InputKind,
    sample: RefCell<String>,
}

impl Translator for Traced<'_> {
    fn translate(&self, x: &ImageTensor) -> Result<ImageTensor> {
        self.log.borrow_mut().push(Invocation {
            step: self.step,
            model: self.role,
            sample: self.sample.borrow().clone(),
            input: self.kind,
        });
        self.inner.translate(x)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub id: String,
    pub metric: Metric,
    pub e_clean: f64,
    pub e_perturbed: f64,
    pub d_e: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSensitivity {
    pub metric: Metric,
    pub mean_e_clean: f64,
    pub mean_e_perturbed: f64,
    pub mean_d_e: f64,
}

/// Which model's outputs moved more under the perturbation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub metric: Metric,
    /// Role with the larger mean dE, or `None` on a tie.
    pub larger_mean_d_e: Option<Role>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub model: Role,
    /// `A2B` or `B2A`.
    pub direction: String,
    /// Baseline that produced the perturbed inputs.
    pub perturbed_by: Role,
    pub metadata: ReportMetadata,
    pub per_sample: Vec<SensitivityRow>,
    pub aggregates: Vec<MetricSensitivity>,
    pub comparison: Vec<Verdict>,
}

impl SensitivityReport {
    pub fn mean_d_e(&self, metric: Metric) -> Option<f64> {
        self.aggregates.iter().find(|a| a.metric == metric).map(|a| a.mean_d_e)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// `id,metric,e_clean,e_perturbed,d_e` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,metric,e_clean,e_perturbed,d_e\n");
        for r in &self.per_sample {
            let _ = writeln!(s, "{},{},{},{},{}", r.id, r.metric, r.e_clean, r.e_perturbed, r.d_e);
        }
        s
    }

    pub fn write(&self, dir: &Path, stem: &str) -> Result<[PathBuf; 2]> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join(format!("{stem}.json"));
        let csv = dir.join(format!("{stem}.csv"));
        fs::write(&json, self.to_json()? + "\n").map_err(|e| Error::io(&json, e))?;
        fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        Ok([json, csv])
    }
}

/// Reports for the direction's baseline and for one2one, plus the exact
/// sequence of model invocations.
#[derive(Clone, Debug)]
pub struct SensitivityOutcome {
    pub pix2pix: SensitivityReport,
    pub one2one: SensitivityReport,
    pub trace: Vec<Invocation>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for x in v {
        s += x;
        n += 1;
    }
    s / n as f64
}

/// Run the four protocol steps for `cfg.direction`.
///
/// 1. Perturb every input with the opposite baseline.
/// 2. Translate the clean inputs with both evaluated models.
/// 3. Translate the perturbed inputs with both evaluated models.
/// 4. Score both outputs against the label; `dE = |E_perturbed - E_clean|`.
pub fn run_sensitivity(
    cfg: &SensitivityConfig,
    models: &SensitivityModels<'_>,
    dataset: &PairedDataset,
    metadata: ReportMetadata,
) -> Result<SensitivityOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Dataset("sensitivity needs a non-empty dataset".into()));
    }
    let dir = cfg.direction;
    let opposite = Role::baseline(dir.flipped());
    let evaluated = [Role::baseline(dir), Role::One2One];
    let log = RefCell::new(Vec::new());
    let traced = |role: Role, step: u8, kind: InputKind| Traced {
        inner: models.get(role),
        role,
        log: &log,
        step,
        kind,
        sample: RefCell::new(String::new()),
    };

    let perturber = traced(opposite, 1, InputKind::Label);
    let mut perturbed_inputs = Vec::with_capacity(dataset.len());
    for s in &dataset.samples {
        *perturber.sample.borrow_mut() = s.id.clone();
        let (_, label) = direction_pair(s, dir);
        perturbed_inputs.push(clamp_unit(perturber.translate(label)?));
    }

    let mut outputs: BTreeMap<(Role, u8), Vec<ImageTensor>> = BTreeMap::new();
    for (step, kind) in [(2u8, InputKind::Clean), (3, InputKind::Perturbed)] {
        for role in evaluated {
            let model = traced(role, step, kind);
            let mut outs = Vec::with_capacity(dataset.len());
            for (s, p) in dataset.samples.iter().zip(&perturbed_inputs) {
                *model.sample.borrow_mut() = s.id.clone();
                let input = if kind == InputKind::Clean { direction_pair(s, dir).0 } else { p };
                outs.push(model.translate(input)?);
            }
            outputs.insert((role, step), outs);
        }
    }

    let mut reports = Vec::with_capacity(2);
    for role in evaluated {
        let mut rows = Vec::with_capacity(dataset.len() * cfg.metrics.len());
        for (i, s) in dataset.samples.iter().enumerate() {
            let label = direction_pair(s, dir).1;
            let clean = score(&s.id, &outputs[&(role, 2)][i], label, &cfg.metric_params)?;
            let pert = score(&s.id, &outputs[&(role, 3)][i], label, &cfg.metric_params)?;
            for &m in &cfg.metrics {
                let (e_clean, e_perturbed) = (m.of(&clean), m.of(&pert));
                rows.push(SensitivityRow {
                    id: s.id.clone(),
                    metric: m,
                    e_clean,
                    e_perturbed,
                    d_e: (e_perturbed - e_clean).abs(),
                });
            }
        }
        let aggregates = cfg
            .metrics
            .iter()
            .map(|&m| {
                let of = |f: fn(&SensitivityRow) -> f64| mean(rows.iter().filter(|r| r.metric == m).map(f));
                MetricSensitivity {
                    metric: m,
                    mean_e_clean: of(|r| r.e_clean),
                    mean_e_perturbed: of(|r| r.e_perturbed),
                    mean_d_e: of(|r| r.d_e),
                }
            })
            .collect();
        reports.push(SensitivityReport {
            model: role,
            direction: dir.label().to_string(),
            perturbed_by: opposite,
            metadata: ReportMetadata {
                model: Some(role.as_str().to_string()),
                metrics: cfg.metric_params.clone(),
                ..metadata.clone()
            },
            per_sample: rows,
            aggregates,
            comparison: Vec::new(),
        });
    }
    let comparison: Vec<Verdict> = cfg
        .metrics
        .iter()
        .map(|&m| {
            let (a, b) = (reports[0].mean_d_e(m), reports[1].mean_d_e(m));
            let larger = match a.partial_cmp(&b) {
                Some(std::cmp::Ordering::Greater) => Some(reports[0].model),
                Some(std::cmp::Ordering::Less) => Some(reports[1].model),
                _ => None,
            };
            Verdict {
                metric: m,
                larger_mean_d_e: larger,
            }
        })
        .collect();
    for r in &mut reports {
        r.comparison = comparison.clone();
    }
    let one2one = reports.pop().expect("two reports");
    let pix2pix = reports.pop().expect("two reports");
    Ok(SensitivityOutcome {
        pix2pix,
        one2one,
        trace: log.into_inner(),
    })
}

/// Marker for a cell with no report behind it.
pub const GAP: &str = "n/a";

/// Mean dE per model row and (direction, metric) column.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryTable {
    /// `(direction label, metric)` in column order.
    pub columns: Vec<(String, Metric)>,
    /// `pix2pix` then `one2one`; `None` marks a gap.
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

impl SummaryTable {
    pub fn cell(&self, model: &str, direction: Direction, metric: Metric) -> Option<f64> {
        let col = self.columns.iter().position(|(d, m)| d == direction.label() && *m == metric)?;
        self.rows.iter().find(|(name, _)| name == model)?.1[col]
    }

    fn header(&self) -> Vec<String> {
        let mut h = vec!["model".to_string()];
        h.extend(self.columns.iter().map(|(d, m)| format!("{d} d{}", m.as_str().to_uppercase())));
        h
    }

    fn body(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|(name, cells)| {
                let mut r = vec![name.clone()];
                r.extend(cells.iter().map(|c| c.map_or(GAP.to_string(), |v| format!("{v:.6}"))));
                r
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header().join(",");
        s.push('\n');
        for r in self.body() {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }

    /// Columns padded to equal width.
    pub fn to_text(&self) -> String {
        let mut lines = vec![self.header()];
        lines.extend(self.body());
        let ncol = lines[0].len();
        let widths: Vec<usize> = (0..ncol).map(|c| lines.iter().map(|l| l[c].len()).max().unwrap_or(0)).collect();
        let mut s = String::new();
        for l in &lines {
            let cells: Vec<String> = l
                .iter()
                .enumerate()
                .map(|(c, v)| if c == 0 { format!("{v:<w$}", w = widths[c]) } else { format!("{v:>w$}", w = widths[c]) })
                .collect();
            s.push_str(cells.join("  ").trim_end());
            s.push('\n');
        }
        s
    }
}

/// Table with both directions and every metric seen in any report. Baseline
/// reports of either direction fill the `pix2pix` row.
pub fn sensitivity_summary(reports: &[&SensitivityReport]) -> SummaryTable {
    let mut metrics: Vec<Metric> = Vec::new();
    for r in reports {
        for a in &r.aggregates {
            if !metrics.contains(&a.metric) {
                metrics.push(a.metric);
            }
        }
    }
    metrics.sort_by_key(|m| Metric::ALL.iter().position(|x| x == m));
    let mut columns = Vec::new();
    for d in [Direction::A, Direction::B] {
        for &m in &metrics {
            columns.push((d.label().to_string(), m));
        }
    }
    let row = |is_baseline: bool| -> Vec<Option<f64>> {
        columns
            .iter()
            .map(|(d, m)| {
                reports
                    .iter()
                    .find(|r| &r.direction == d && (r.model != Role::One2One) == is_baseline)
                    .and_then(|r| r.mean_d_e(*m))
            })
            .collect()
    };
    SummaryTable {
        rows: vec![("pix2pix".to_string(), row(true)), ("one2one".to_string(), row(false))],
        columns,
    }
}
