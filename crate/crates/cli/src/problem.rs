//! Problem files: a TOML config that points at CSV tables.
//!
//! ```toml
//! benchmark = "benchmark.csv"     # asset_id,weight
//! exposures = "exposures.csv"     # asset_id,<factor>,<factor>,...
//! targets = "targets.csv"         # factor,value; or an inline table
//!
//! [mode]
//! kind = "elastic"                # equality | elastic | robust_l2 | robust_linf
//! lambda_soft = 100.0
//!
//! [[inequality]]
//! name = "cap"
//! cap = 0.05                      # or floor = ..., or coefficients + bound
//!
//! [multi_period]
//! prev_weights = "prev.csv"
//! gamma = 1.0
//!
//! [solver]
//! name = "auto"
//! tol = 1e-8
//! max_iter = 200
//! ```
//!
//! Relative paths resolve against the directory of the problem file.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use egmu::{effective_prior, Instance, LinearConstraint, TargetMode, Weights};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::error::{invalid, CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Auto,
    Newton,
    Elastic,
    Ipf,
    Dykstra,
    Proxgrad,
}

impl SolverKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolverKind::Auto => "auto",
            SolverKind::Newton => "newton",
            SolverKind::Elastic => "elastic",
            SolverKind::Ipf => "ipf",
            SolverKind::Dykstra => "dykstra",
            SolverKind::Proxgrad => "proxgrad",
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    benchmark: PathBuf,
    exposures: PathBuf,
    targets: RawValues,
    mode: Option<RawMode>,
    #[serde(default)]
    inequality: Vec<RawInequality>,
    multi_period: Option<RawMultiPeriod>,
    #[serde(default)]
    solver: SolverSection,
}

/// A CSV file of `(key, value)` rows or an inline TOML table.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawValues {
    File(PathBuf),
    Inline(BTreeMap<String, f64>),
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum RawMode {
    Equality,
    Elastic { lambda_soft: f64 },
    RobustL2 { rho: f64 },
    RobustLinf { rho: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Sense {
    Le,
    Ge,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInequality {
    name: String,
    cap: Option<f64>,
    floor: Option<f64>,
    /// Restricts a cap or floor to these assets.
    assets: Option<Vec<String>>,
    coefficients: Option<RawValues>,
    bound: Option<f64>,
    sense: Option<Sense>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMultiPeriod {
    prev_weights: PathBuf,
    gamma: f64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub name: Option<SolverKind>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
}

/// A half-space `aᵀw ≤ τ` with the row name it came from. Cap and floor rows
/// expand to one constraint per asset and remember which.
#[derive(Debug, Clone)]
pub struct NamedConstraint {
    pub name: String,
    pub asset: Option<usize>,
    pub constraint: LinearConstraint,
}

#[derive(Debug, Clone)]
pub struct MultiPeriod {
    pub prev: DVector<f64>,
    pub gamma: f64,
}

#[derive(Debug, Clone)]
pub struct Problem {
    pub asset_ids: Vec<String>,
    pub factors: Vec<String>,
    pub benchmark: DVector<f64>,
    pub exposures: DMatrix<f64>,
    pub targets: DVector<f64>,
    pub mode: TargetMode,
    pub inequalities: Vec<NamedConstraint>,
    pub multi_period: Option<MultiPeriod>,
    pub solver: SolverSection,
    dir: PathBuf,
}

impl Problem {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let raw: RawProblem =
            toml::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::build(raw, dir)
    }

    fn build(raw: RawProblem, dir: PathBuf) -> CliResult<Self> {
        let resolve = |p: &Path| dir.join(p);

        let bench = Table::read(&resolve(&raw.benchmark))?;
        let id_col = bench.column("asset_id")?;
        let w_col = bench.column("weight")?;
        let mut asset_ids = Vec::with_capacity(bench.rows.len());
        let mut index = HashMap::new();
        let mut benchmark = DVector::zeros(bench.rows.len());
        for (i, row) in bench.rows.iter().enumerate() {
            let id = row[id_col].clone();
            if index.insert(id.clone(), i).is_some() {
                return Err(invalid(format!("duplicate asset id '{id}' in benchmark")));
            }
            let w = bench.number(i, w_col, || format!("benchmark weight of asset '{id}'"))?;
            if !(w > 0.0) {
                return Err(invalid(format!(
                    "benchmark weight of asset '{id}' must be strictly positive, got {w}"
                )));
            }
            benchmark[i] = w;
            asset_ids.push(id);
        }
        if asset_ids.is_empty() {
            return Err(invalid("benchmark lists no assets"));
        }

        let expo = Table::read(&resolve(&raw.exposures))?;
        let eid = expo.column("asset_id")?;
        let factors: Vec<String> = expo
            .headers
            .iter()
            .enumerate()
            .filter(|&(c, _)| c != eid)
            .map(|(_, h)| h.clone())
            .collect();
        if factors.is_empty() {
            return Err(invalid("exposures table has no factor columns"));
        }
        for (j, f) in factors.iter().enumerate() {
            if factors[..j].contains(f) {
                return Err(invalid(format!("duplicate factor '{f}' in exposures")));
            }
        }
        let fcols: Vec<usize> = (0..expo.headers.len()).filter(|&c| c != eid).collect();
        let mut exposures = DMatrix::zeros(asset_ids.len(), factors.len());
        let mut seen = vec![false; asset_ids.len()];
        for (r, row) in expo.rows.iter().enumerate() {
            let id = &row[eid];
            let i = *index
                .get(id)
                .ok_or_else(|| invalid(format!("asset '{id}' in exposures is not in the benchmark")))?;
            if std::mem::replace(&mut seen[i], true) {
                return Err(invalid(format!("duplicate asset id '{id}' in exposures")));
            }
            for (j, &c) in fcols.iter().enumerate() {
                exposures[(i, j)] =
                    expo.number(r, c, || format!("exposure of asset '{id}' to factor '{}'", factors[j]))?;
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(invalid(format!("asset '{}' has no exposures row", asset_ids[i])));
        }

        let targets = factor_values(&raw.targets, &factors, &dir, "targets", true)?;

        let mode = match raw.mode.unwrap_or(RawMode::Equality) {
            RawMode::Equality => TargetMode::Equality,
            RawMode::Elastic { lambda_soft } => TargetMode::Elastic { lambda_soft },
            RawMode::RobustL2 { rho } => TargetMode::RobustL2 { rho },
            RawMode::RobustLinf { rho } => TargetMode::RobustLinf { rho },
        };
        egmu::TargetSpec::new(targets.clone(), mode)?;

        let mut inequalities = Vec::new();
        for row in &raw.inequality {
            expand_inequality(row, &asset_ids, &index, &dir, &mut inequalities)?;
        }

        let multi_period = match raw.multi_period {
            None => None,
            Some(mp) => {
                if !(mp.gamma >= 0.0 && mp.gamma.is_finite()) {
                    return Err(invalid(format!(
                        "multi_period gamma must be nonnegative and finite, got {}",
                        mp.gamma
                    )));
                }
                let prev = read_weights(&resolve(&mp.prev_weights), &asset_ids, &index)?;
                Some(MultiPeriod { prev, gamma: mp.gamma })
            }
        };

        Ok(Self {
            asset_ids,
            factors,
            benchmark,
            exposures,
            targets,
            mode,
            inequalities,
            multi_period,
            solver: raw.solver,
            dir,
        })
    }

    #[cfg(test)]
    pub fn for_tests(benchmark: DVector<f64>, exposures: DMatrix<f64>, targets: DVector<f64>, mode: TargetMode) -> Self {
        Self {
            asset_ids: (0..benchmark.len()).map(|i| format!("a{i}")).collect(),
            factors: (0..exposures.ncols()).map(|j| format!("f{j}")).collect(),
            benchmark,
            exposures,
            targets,
            mode,
            inequalities: Vec::new(),
            multi_period: None,
            solver: SolverSection::default(),
            dir: PathBuf::new(),
        }
    }

    pub fn n_assets(&self) -> usize {
        self.asset_ids.len()
    }

    /// Instance with the original benchmark.
    pub fn instance(&self) -> CliResult<Instance> {
        Ok(Instance::new(self.benchmark.clone(), self.exposures.clone())?)
    }

    /// Instance whose prior folds in the previous weights, and that prior when
    /// a multi-period block is present.
    pub fn prior_instance(&self) -> CliResult<(Instance, Option<Weights>)> {
        let inst = self.instance()?;
        match &self.multi_period {
            None => Ok((inst, None)),
            Some(mp) => {
                let prev = Weights::new(mp.prev.clone())?;
                let prior = effective_prior(inst.benchmark(), &prev, mp.gamma)?;
                let blended = inst.with_benchmark(prior.clone())?;
                Ok((blended, Some(prior)))
            }
        }
    }

    /// Per-factor values from a CSV path or `k=v,...`. Factors left out are zero.
    pub fn parse_direction(&self, spec: &str) -> CliResult<DVector<f64>> {
        let path = self.dir.join(spec);
        let looks_inline = spec.contains('=') && !path.exists();
        let values = if looks_inline {
            let mut map = BTreeMap::new();
            for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
                let (k, v) = part
                    .split_once('=')
                    .ok_or_else(|| invalid(format!("expected factor=value in direction, got '{part}'")))?;
                let v: f64 = v
                    .trim()
                    .parse()
                    .map_err(|_| invalid(format!("direction value for factor '{}' is not a number", k.trim())))?;
                if map.insert(k.trim().to_string(), v).is_some() {
                    return Err(invalid(format!("factor '{}' repeated in direction", k.trim())));
                }
            }
            RawValues::Inline(map)
        } else {
            RawValues::File(PathBuf::from(spec))
        };
        factor_values(&values, &self.factors, &self.dir, "direction", false)
    }

    /// Weights file keyed by asset id (column `weight`), in problem order.
    pub fn read_weights_file(&self, path: &Path) -> CliResult<DVector<f64>> {
        let index: HashMap<String, usize> =
            self.asset_ids.iter().enumerate().map(|(i, a)| (a.clone(), i)).collect();
        read_weights(path, &self.asset_ids, &index)
    }
}

fn expand_inequality(
    row: &RawInequality,
    asset_ids: &[String],
    index: &HashMap<String, usize>,
    dir: &Path,
    out: &mut Vec<NamedConstraint>,
) -> CliResult<()> {
    let n = asset_ids.len();
    let name = &row.name;
    let kinds = [row.cap.is_some(), row.floor.is_some(), row.coefficients.is_some()];
    if kinds.iter().filter(|k| **k).count() != 1 {
        return Err(invalid(format!(
            "inequality '{name}' needs exactly one of cap, floor or coefficients"
        )));
    }
    if let Some(coefs) = &row.coefficients {
        if row.assets.is_some() {
            return Err(invalid(format!("inequality '{name}': assets only applies to cap or floor rows")));
        }
        let bound = row
            .bound
            .ok_or_else(|| invalid(format!("inequality '{name}' has coefficients but no bound")))?;
        if !bound.is_finite() {
            return Err(invalid(format!("inequality '{name}' has a non-finite bound")));
        }
        let map = key_values(coefs, dir, "asset_id", "coefficient")?;
        let mut a = DVector::zeros(n);
        for (id, v) in map {
            let i = *index
                .get(&id)
                .ok_or_else(|| invalid(format!("inequality '{name}' names unknown asset '{id}'")))?;
            if !v.is_finite() {
                return Err(invalid(format!("inequality '{name}': coefficient of asset '{id}' is not finite")));
            }
            a[i] = v;
        }
        if a.iter().all(|v| *v == 0.0) {
            return Err(invalid(format!("inequality '{name}' has all-zero coefficients")));
        }
        let constraint = match row.sense.unwrap_or(Sense::Le) {
            Sense::Le => LinearConstraint::new(a, bound),
            Sense::Ge => LinearConstraint::new(-a, -bound),
        };
        out.push(NamedConstraint {
            name: name.clone(),
            asset: None,
            constraint,
        });
        return Ok(());
    }
    if row.bound.is_some() || row.sense.is_some() {
        return Err(invalid(format!("inequality '{name}': bound and sense only apply to coefficient rows")));
    }
    let members: Vec<usize> = match &row.assets {
        None => (0..n).collect(),
        Some(ids) => ids
            .iter()
            .map(|id| {
                index
                    .get(id)
                    .copied()
                    .ok_or_else(|| invalid(format!("inequality '{name}' names unknown asset '{id}'")))
            })
            .collect::<CliResult<_>>()?,
    };
    let (value, is_cap) = match (row.cap, row.floor) {
        (Some(c), None) => (c, true),
        (None, Some(f)) => (f, false),
        _ => unreachable!("exactly one kind was checked above"),
    };
    if !value.is_finite() {
        return Err(invalid(format!("inequality '{name}' has a non-finite level")));
    }
    for i in members {
        let constraint = if is_cap {
            LinearConstraint::cap(n, i, value)
        } else {
            LinearConstraint::floor(n, i, value)
        };
        out.push(NamedConstraint {
            name: name.clone(),
            asset: Some(i),
            constraint,
        });
    }
    Ok(())
}

fn key_values(values: &RawValues, dir: &Path, key: &str, value: &str) -> CliResult<Vec<(String, f64)>> {
    match values {
        RawValues::Inline(map) => Ok(map.iter().map(|(k, v)| (k.clone(), *v)).collect()),
        RawValues::File(p) => {
            let t = Table::read(&dir.join(p))?;
            let kc = t.column(key)?;
            let vc = t.column(value)?;
            let mut out = Vec::with_capacity(t.rows.len());
            for (r, row) in t.rows.iter().enumerate() {
                let k = row[kc].clone();
                let v = t.number(r, vc, || format!("{value} for '{k}'"))?;
                if out.iter().any(|(seen, _)| *seen == k) {
                    return Err(invalid(format!("'{k}' repeated in {}", t.path.display())));
                }
                out.push((k, v));
            }
            Ok(out)
        }
    }
}

/// Maps `(factor, value)` pairs onto the factor order. With `complete`, every
/// factor must appear.
fn factor_values(
    values: &RawValues,
    factors: &[String],
    dir: &Path,
    what: &str,
    complete: bool,
) -> CliResult<DVector<f64>> {
    let pairs = key_values(values, dir, "factor", "value")?;
    let mut out = DVector::zeros(factors.len());
    let mut seen = vec![false; factors.len()];
    for (f, v) in pairs {
        let j = factors
            .iter()
            .position(|x| *x == f)
            .ok_or_else(|| invalid(format!("unknown factor '{f}' in {what}")))?;
        if seen[j] {
            return Err(invalid(format!("factor '{f}' repeated in {what}")));
        }
        if !v.is_finite() {
            return Err(invalid(format!("{what} value for factor '{f}' is not finite")));
        }
        seen[j] = true;
        out[j] = v;
    }
    if complete {
        if let Some(j) = seen.iter().position(|s| !s) {
            return Err(invalid(format!("no {what} value for factor '{}'", factors[j])));
        }
    }
    Ok(out)
}

fn read_weights(path: &Path, asset_ids: &[String], index: &HashMap<String, usize>) -> CliResult<DVector<f64>> {
    let t = Table::read(path)?;
    let ic = t.column("asset_id")?;
    let wc = t.column("weight")?;
    let mut w = DVector::zeros(asset_ids.len());
    let mut seen = vec![false; asset_ids.len()];
    for (r, row) in t.rows.iter().enumerate() {
        let id = &row[ic];
        let i = *index
            .get(id)
            .ok_or_else(|| invalid(format!("asset '{id}' in {} is not in the benchmark", path.display())))?;
        if std::mem::replace(&mut seen[i], true) {
            return Err(invalid(format!("asset '{id}' repeated in {}", path.display())));
        }
        w[i] = t.number(r, wc, || format!("weight of asset '{id}'"))?;
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(invalid(format!(
            "asset '{}' missing from {}",
            asset_ids[i],
            path.display()
        )));
    }
    Ok(w)
}

/// A headed CSV table held as strings.
struct Table {
    path: PathBuf,
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn read(path: &Path) -> CliResult<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_path(path)
            .map_err(|e| csv_error(path, e))?;
        let headers = rdr
            .headers()
            .map_err(|e| csv_error(path, e))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| csv_error(path, e))?;
            rows.push(rec.iter().map(str::to_string).collect());
        }
        Ok(Self {
            path: path.to_path_buf(),
            headers,
            rows,
        })
    }

    fn column(&self, name: &str) -> CliResult<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| invalid(format!("{} has no '{name}' column", self.path.display())))
    }

    fn number(&self, row: usize, col: usize, what: impl Fn() -> String) -> CliResult<f64> {
        let s = &self.rows[row][col];
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(invalid(format!(
                "{}: {} is '{s}', not a finite number",
                self.path.display(),
                what()
            ))),
        }
    }
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => CliError::io(path, io),
            _ => unreachable!(),
        }
    } else {
        invalid(format!("{}: {e}", path.display()))
    }
}
