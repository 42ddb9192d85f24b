//! Summaries of sweep records: mean function evaluations of converged
//! trials with Student-t 95% confidence intervals, outcome percentages, and
//! outcome heatmaps.
//!
//! Number formatting in the CSV outputs: means use 4 significant digits in
//! scientific notation (`3.540e6`), confidence intervals and percentages one
//! decimal place.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::config::{Method, Parameter};
use crate::error::{Error, Result};
use crate::sweep::{ExperimentRecord, Outcome};

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub parameter: String,
    pub value: f64,
    pub solver: Method,
    /// Converged trials in the group.
    pub n: usize,
    pub mean_fevals: Option<f64>,
    /// Half-width of the 95% interval as a percentage of the mean.
    pub ci_percent: Option<f64>,
}

/// Two-sided 95% Student-t critical value with `dof` degrees of freedom.
pub fn t_critical_975(dof: usize) -> f64 {
    StudentsT::new(0.0, 1.0, dof as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975)
}

/// Mean and CI half-width as a percent of the mean. A single sample has a
/// zero-width interval by convention.
pub fn mean_and_ci_percent(samples: &[f64]) -> Option<(f64, f64)> {
    let n = samples.len();
    if n == 0 {
        return None;
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Some((mean, 0.0));
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let half = t_critical_975(n - 1) * var.sqrt() / (n as f64).sqrt();
    let pct = if mean != 0.0 { 100.0 * half / mean.abs() } else { 0.0 };
    Some((mean, pct))
}

fn param_key(p: &str) -> usize {
    p.parse::<Parameter>()
        .map(Parameter::table_position)
        .unwrap_or(usize::MAX)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct GroupKey {
    param_pos: usize,
    parameter: String,
    value: OrderedValue,
    solver: Method,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrderedValue(f64);

impl Eq for OrderedValue {}

impl PartialOrd for OrderedValue {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrderedValue {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// One row per `(parameter, value, solver)` group, in table order. Only
/// converged records contribute to the mean.
pub fn summarize(records: &[ExperimentRecord]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<GroupKey, Vec<f64>> = BTreeMap::new();
    for r in records {
        let key = GroupKey {
            param_pos: param_key(&r.parameter),
            parameter: r.parameter.clone(),
            value: OrderedValue(r.value),
            solver: r.solver,
        };
        let samples = groups.entry(key).or_default();
        if r.outcome == Outcome::Converged {
            if let Some(f) = r.function_evaluations {
                samples.push(f as f64);
            }
        }
    }
    groups
        .into_iter()
        .map(|(key, mut samples)| {
            // fixed order keeps the floating-point sums permutation-invariant
            samples.sort_by(f64::total_cmp);
            let stats = mean_and_ci_percent(&samples);
            SummaryRow {
                parameter: key.parameter,
                value: key.value.0,
                solver: key.solver,
                n: samples.len(),
                mean_fevals: stats.map(|s| s.0),
                ci_percent: stats.map(|s| s.1),
            }
        })
        .collect()
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("parameter,value,solver,N,mean_fevals,ci_percent\n");
    for r in rows {
        let mean = r.mean_fevals.map(|m| format!("{m:.3e}")).unwrap_or_default();
        let ci = r.ci_percent.map(|c| format!("{c:.1}")).unwrap_or_default();
        writeln!(out, "{},{},{},{},{mean},{ci}", r.parameter, r.value, r.solver, r.n).unwrap();
    }
    out
}

/// Outcome breakdown for one `(solver, dataset)` pair. The three collected
/// percentages are relative to `collected`; `missing` is relative to
/// `planned`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeRow {
    pub solver: Method,
    pub dataset: String,
    pub planned: usize,
    pub collected: usize,
    pub canceled_pct: f64,
    pub converged_pct: f64,
    pub max_iterations_pct: f64,
    pub missing_pct: f64,
}

impl OutcomeRow {
    pub fn from_counts(
        solver: Method,
        dataset: &str,
        planned: usize,
        canceled: usize,
        converged: usize,
        max_iterations: usize,
    ) -> Self {
        let collected = canceled + converged + max_iterations;
        let pct = |n: usize, of: usize| if of == 0 { 0.0 } else { 100.0 * n as f64 / of as f64 };
        Self {
            solver,
            dataset: dataset.to_string(),
            planned,
            collected,
            canceled_pct: pct(canceled, collected),
            converged_pct: pct(converged, collected),
            max_iterations_pct: pct(max_iterations, collected),
            missing_pct: pct(planned.saturating_sub(collected), planned),
        }
    }
}

/// Every record counts as planned; `missing` records are not collected.
pub fn summarize_outcomes(records: &[ExperimentRecord]) -> Vec<OutcomeRow> {
    let mut counts: BTreeMap<(Method, String), [usize; 4]> = BTreeMap::new();
    for r in records {
        let c = counts.entry((r.solver, r.dataset.clone())).or_default();
        let slot = Outcome::ALL.iter().position(|&o| o == r.outcome).unwrap();
        c[slot] += 1;
    }
    counts
        .into_iter()
        .map(|((solver, dataset), [conv, maxit, canc, miss])| {
            OutcomeRow::from_counts(solver, &dataset, conv + maxit + canc + miss, canc, conv, maxit)
        })
        .collect()
}

pub fn outcomes_csv(rows: &[OutcomeRow]) -> String {
    let mut out = String::from("solver,dataset,planned,collected,canceled,converged,max_iterations,missing\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{:.1},{:.1},{:.1},{:.1}",
            r.solver,
            r.dataset,
            r.planned,
            r.collected,
            r.canceled_pct,
            r.converged_pct,
            r.max_iterations_pct,
            r.missing_pct
        )
        .unwrap();
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColorClass {
    Green,
    Blue,
    Red,
    Grey,
}

pub fn color_class(outcome: Outcome) -> ColorClass {
    match outcome {
        Outcome::Converged => ColorClass::Green,
        Outcome::MaxIterations => ColorClass::Blue,
        Outcome::Canceled => ColorClass::Red,
        Outcome::Missing => ColorClass::Grey,
    }
}

/// Light and dark ends of each ramp.
fn ramp(class: ColorClass) -> ([u8; 3], [u8; 3]) {
    match class {
        ColorClass::Green => ([0xc7, 0xe9, 0xc0], [0x00, 0x44, 0x1b]),
        ColorClass::Blue => ([0xc6, 0xdb, 0xef], [0x08, 0x30, 0x6b]),
        ColorClass::Red => ([0xfc, 0xbb, 0xa1], [0x67, 0x00, 0x0d]),
        ColorClass::Grey => ([0xbd, 0xbd, 0xbd], [0xbd, 0xbd, 0xbd]),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapCell {
    pub outcome: Outcome,
    pub fevals: Option<u64>,
}

impl HeatmapCell {
    /// Non-convergent exits are drawn hatched.
    pub fn hatched(&self) -> bool {
        matches!(self.outcome, Outcome::MaxIterations | Outcome::Canceled)
    }

    fn code(&self) -> String {
        match self.fevals {
            Some(f) => format!("{}:{f}", self.outcome.as_str()),
            None => self.outcome.as_str().to_string(),
        }
    }
}

/// Seeds down the rows, `(parameter, value)` columns across in table order.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapGrid {
    pub dataset: String,
    pub solver: Method,
    pub seeds: Vec<u64>,
    pub columns: Vec<(String, f64)>,
    /// `cells[row][column]`.
    pub cells: Vec<Vec<HeatmapCell>>,
}

impl HeatmapGrid {
    pub fn build(records: &[ExperimentRecord], dataset: &str, solver: Method) -> Result<Self> {
        let selected: Vec<&ExperimentRecord> = records
            .iter()
            .filter(|r| r.dataset == dataset && r.solver == solver)
            .collect();
        if selected.is_empty() {
            return Err(Error::NoRecords);
        }
        let seeds: Vec<u64> = selected.iter().map(|r| r.seed).collect::<BTreeSet<_>>().into_iter().collect();
        let columns: Vec<(String, f64)> = selected
            .iter()
            .map(|r| (param_key(&r.parameter), r.parameter.clone(), OrderedValue(r.value)))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .map(|(_, p, v)| (p, v.0))
            .collect();
        let missing = HeatmapCell { outcome: Outcome::Missing, fevals: None };
        let mut cells = vec![vec![missing; columns.len()]; seeds.len()];
        for r in selected {
            let row = seeds.binary_search(&r.seed).unwrap();
            let col = columns
                .iter()
                .position(|(p, v)| *p == r.parameter && v.total_cmp(&r.value).is_eq())
                .unwrap();
            cells[row][col] = HeatmapCell {
                outcome: r.outcome,
                fevals: if r.outcome == Outcome::Missing { None } else { r.function_evaluations },
            };
        }
        Ok(Self {
            dataset: dataset.to_string(),
            solver,
            seeds,
            columns,
            cells,
        })
    }

    fn column_label(&self, c: usize) -> String {
        format!("{}={}", self.columns[c].0, self.columns[c].1)
    }

    /// Hex fill for a cell: its outcome's ramp, shaded by log function
    /// evaluations relative to other cells of the same outcome.
    pub fn fill(&self, cell: &HeatmapCell) -> String {
        let class = color_class(cell.outcome);
        let (light, dark) = ramp(class);
        let t = match cell.fevals {
            Some(f) => {
                let (lo, hi) = self
                    .cells
                    .iter()
                    .flatten()
                    .filter(|c| c.outcome == cell.outcome)
                    .filter_map(|c| c.fevals)
                    .fold((u64::MAX, 0), |(lo, hi), v| (lo.min(v), hi.max(v)));
                let (lo, hi, f) = ((lo.max(1) as f64).ln(), (hi.max(1) as f64).ln(), (f.max(1) as f64).ln());
                if hi > lo { (f - lo) / (hi - lo) } else { 0.5 }
            }
            None => 0.0,
        };
        let mix = |a: u8, b: u8| (a as f64 + t * (b as f64 - a as f64)).round() as u8;
        format!(
            "#{:02x}{:02x}{:02x}",
            mix(light[0], dark[0]),
            mix(light[1], dark[1]),
            mix(light[2], dark[2])
        )
    }

    /// `seed,<parameter>=<value>,...` with cells `outcome[:fevals]`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("seed");
        for c in 0..self.columns.len() {
            write!(out, ",{}", self.column_label(c)).unwrap();
        }
        out.push('\n');
        for (seed, row) in self.seeds.iter().zip(&self.cells) {
            write!(out, "{seed}").unwrap();
            for cell in row {
                write!(out, ",{}", cell.code()).unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn to_svg(&self) -> String {
        const CELL: usize = 14;
        const LEFT: usize = 48;
        const TOP: usize = 150;
        let width = LEFT + CELL * self.columns.len() + 20;
        let height = TOP + CELL * self.seeds.len() + 20;
        let mut s = String::new();
        writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="9">"#
        )
        .unwrap();
        writeln!(s, "<title>{} {} function evaluations</title>", xml_escape(&self.dataset), self.solver).unwrap();
        s.push_str(
            "<defs><pattern id=\"hatch\" width=\"4\" height=\"4\" patternUnits=\"userSpaceOnUse\" \
             patternTransform=\"rotate(45)\"><line x1=\"0\" y1=\"0\" x2=\"0\" y2=\"4\" stroke=\"#000\" \
             stroke-opacity=\"0.45\" stroke-width=\"1\"/></pattern></defs>\n",
        );
        for c in 0..self.columns.len() {
            let x = LEFT + c * CELL + CELL / 2;
            writeln!(
                s,
                r#"<text x="{x}" y="{}" transform="rotate(-90 {x} {})">{}</text>"#,
                TOP - 4,
                TOP - 4,
                xml_escape(&self.column_label(c))
            )
            .unwrap();
        }
        for (r, (seed, row)) in self.seeds.iter().zip(&self.cells).enumerate() {
            let y = TOP + r * CELL;
            writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{seed}</text>"#, LEFT - 4, y + CELL - 3).unwrap();
            for (c, cell) in row.iter().enumerate() {
                let x = LEFT + c * CELL;
                let fevals = cell.fevals.map(|f| f.to_string()).unwrap_or_default();
                writeln!(
                    s,
                    r#"<rect class="cell" x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{}" data-outcome="{}" data-fevals="{fevals}"/>"#,
                    self.fill(cell),
                    cell.outcome.as_str()
                )
                .unwrap();
                if cell.hatched() {
                    writeln!(
                        s,
                        r#"<rect class="hatch" x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="url(#hatch)"/>"#
                    )
                    .unwrap();
                }
            }
        }
        s.push_str("</svg>\n");
        s
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// SVG and CSV views of one dataset and solver's heatmap.
pub fn render_heatmap(records: &[ExperimentRecord], dataset: &str, solver: Method) -> Result<(String, String)> {
    let grid = HeatmapGrid::build(records, dataset, solver)?;
    Ok((grid.to_svg(), grid.to_csv()))
}
