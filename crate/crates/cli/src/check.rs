use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::bundle::Table;

/// One assertion against a bundle table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CheckSpec {
    /// Values (or `|value − target|`) lie in `[min, max]`, on every row or the last.
    Range {
        table: String,
        column: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        min: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target: Option<f64>,
        #[serde(default)]
        last: bool,
    },
    /// `|value − target|` strictly decreases down the table.
    Approach { table: String, column: String, target: f64 },
    /// Values strictly decrease (or increase) down the table.
    Monotone {
        table: String,
        column: String,
        #[serde(default)]
        increasing: bool,
    },
    /// Every row carries exactly this text.
    Equals { table: String, column: String, value: String },
    /// `numerator ≥ factor · denominator` on every row.
    Ratio { table: String, numerator: String, denominator: String, factor: f64 },
    /// Least-squares slope of `log y` against `log x` lies in `[min, max]`.
    Slope { table: String, x: String, y: String, min: f64, max: f64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub label: String,
    pub pass: bool,
    pub detail: String,
}

/// Any TOML file with `[[check]]` blocks; run configs double as criteria files.
#[derive(Debug, Deserialize)]
struct CriteriaFile {
    #[serde(rename = "check", default)]
    checks: Vec<CheckSpec>,
}

pub fn load_criteria(path: &Path) -> Result<Vec<CheckSpec>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file: CriteriaFile = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if file.checks.is_empty() {
        bail!("{}: no [[check]] blocks", path.display());
    }
    Ok(file.checks)
}

impl CheckSpec {
    fn table(&self) -> &str {
        match self {
            CheckSpec::Range { table, .. }
            | CheckSpec::Approach { table, .. }
            | CheckSpec::Monotone { table, .. }
            | CheckSpec::Equals { table, .. }
            | CheckSpec::Ratio { table, .. }
            | CheckSpec::Slope { table, .. } => table,
        }
    }

    pub fn label(&self) -> String {
        match self {
            CheckSpec::Range { table, column, min, max, target, last } => {
                let v = match target {
                    Some(t) => format!("|{table}.{column} − {t}|"),
                    None => format!("{table}.{column}"),
                };
                let lo = min.map(|m| format!("{m} ≤ ")).unwrap_or_default();
                let hi = max.map(|m| format!(" ≤ {m}")).unwrap_or_default();
                format!("{lo}{v}{hi}{}", if *last { " (last row)" } else { "" })
            }
            CheckSpec::Approach { table, column, target } => format!("{table}.{column} approaches {target}"),
            CheckSpec::Monotone { table, column, increasing } => {
                format!("{table}.{column} {}", if *increasing { "increasing" } else { "decreasing" })
            }
            CheckSpec::Equals { table, column, value } => format!("{table}.{column} = {value}"),
            CheckSpec::Ratio { table, numerator, denominator, factor } => {
                format!("{table}.{numerator} ≥ {factor}·{denominator}")
            }
            CheckSpec::Slope { table, x, y, min, max } => format!("{min} ≤ slope log {table}.{y} / log {x} ≤ {max}"),
        }
    }

    pub fn evaluate(&self, tables: &BTreeMap<String, Table>) -> CheckOutcome {
        let label = self.label();
        let (pass, detail) = match tables.get(self.table()) {
            None => (false, format!("missing table `{}`", self.table())),
            Some(t) => match self.evaluate_table(t) {
                Ok(r) => r,
                Err(e) => (false, format!("{e:#}")),
            },
        };
        CheckOutcome { label, pass, detail }
    }

    fn evaluate_table(&self, t: &Table) -> Result<(bool, String)> {
        if t.rows.is_empty() {
            return Ok((false, "table has no rows".into()));
        }
        Ok(match self {
            CheckSpec::Range { column, min, max, target, last, .. } => {
                let mut v = t.numbers(column)?;
                if *last {
                    v = v.split_off(v.len() - 1);
                }
                if let Some(c) = target {
                    v.iter_mut().for_each(|x| *x = (*x - c).abs());
                }
                let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let pass = v.iter().all(|x| x.is_finite())
                    && min.is_none_or(|m| lo >= m)
                    && max.is_none_or(|m| hi <= m);
                (pass, format!("observed [{lo:e}, {hi:e}] over {} rows", v.len()))
            }
            CheckSpec::Approach { column, target, .. } => {
                let gaps: Vec<f64> = t.numbers(column)?.iter().map(|x| (x - target).abs()).collect();
                (gaps.windows(2).all(|w| w[1] < w[0]), format!("gaps {}", list(&gaps)))
            }
            CheckSpec::Monotone { column, increasing, .. } => {
                let v = t.numbers(column)?;
                let pass = v.windows(2).all(|w| if *increasing { w[1] > w[0] } else { w[1] < w[0] });
                (pass, format!("values {}", list(&v)))
            }
            CheckSpec::Equals { column, value, .. } => {
                let col = t.column(column)?;
                let bad = t.rows.iter().filter(|r| r[col] != *value).count();
                (bad == 0, format!("{bad} of {} rows differ", t.rows.len()))
            }
            CheckSpec::Ratio { numerator, denominator, factor, .. } => {
                let n = t.numbers(numerator)?;
                let d = t.numbers(denominator)?;
                let worst = n.iter().zip(&d).map(|(a, b)| a / b).fold(f64::INFINITY, f64::min);
                (n.iter().zip(&d).all(|(a, b)| *a >= factor * b), format!("smallest ratio {worst:.6}"))
            }
            CheckSpec::Slope { x, y, min, max, .. } => {
                let s = log_slope(&t.numbers(x)?, &t.numbers(y)?);
                (s >= *min && s <= *max, format!("slope {s:.4}"))
            }
        })
    }
}

fn list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.6e}")).collect::<Vec<_>>().join(", ")
}

pub fn log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

pub fn report(outcomes: &[CheckOutcome]) -> bool {
    for o in outcomes {
        println!("{} {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.label, o.detail);
    }
    outcomes.iter().all(|o| o.pass)
}
