//! Parameter resolution, seed loading and the on-disk formats.
//!
//! Every CSV starts with a `# config_hash=<hex>` line; every JSON output
//! carries `config_hash` and the effective `config` at the top level.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ring_clusters::continuation::{Bifurcation, Branch};
use ring_clusters::coupling::{parse_coefficients, InteractionPair};
use ring_clusters::equilibria::{primary_at, residual, RelativeEquilibrium};
use ring_clusters::model::{Parameters, N};
use ring_clusters::symmetry::{classify_isotropy, IsotropyLabel, SOLVER_TOL};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::ModelArgs;

/// Residual bound every written equilibrium is audited against.
pub const AUDIT_TOL: f64 = 1e-9;

fn parse_f64(s: &str, what: &str) -> Result<f64, CliError> {
    s.trim().parse::<f64>().map_err(|e| CliError::Usage(format!("{what}: cannot parse {s:?}: {e}")))
}

/// Effective parameters: preset if named, else `base`, else relaxation; then explicit flags.
pub fn resolve_params(model: &ModelArgs, base: Option<Parameters>) -> Result<Parameters, CliError> {
    let mut p = match (&model.preset, base) {
        (Some(name), _) => Parameters::preset(name)
            .ok_or_else(|| CliError::Usage(format!("unknown preset {name:?}; expected relaxation or smooth")))?,
        (None, Some(b)) => b,
        (None, None) => Parameters::relaxation(),
    };
    if let Some(l) = model.lambda {
        p.lambda = l;
    }
    if let Some(w) = &model.omega {
        let values = w.split(',').map(|v| parse_f64(v, "omega")).collect::<Result<Vec<_>, _>>()?;
        p.omega = match values.as_slice() {
            [w] => [*w; N],
            [a, b, c, d] => [*a, *b, *c, *d],
            _ => return Err(CliError::Usage(format!("omega needs 1 or 4 values, got {}", values.len()))),
        };
    }
    if let Some(g) = model.gamma {
        p.gamma = g;
    }
    if let Some(k) = model.k {
        p.coupling_strength = k;
    }
    if let Some(spec) = &model.interaction {
        p.interaction = load_interaction(spec)?;
    }
    p.validate()?;
    Ok(p)
}

fn load_interaction(spec: &str) -> Result<InteractionPair, CliError> {
    if let Some(pair) = InteractionPair::builtin(spec) {
        return Ok(pair);
    }
    let text = fs::read_to_string(spec)
        .map_err(|e| CliError::Config(format!("interaction {spec:?} is neither a built-in name nor a readable file: {e}")))?;
    parse_coefficients(&text).map_err(|e| CliError::Config(format!("{spec}: {e}")))
}

/// `start:stop:count`, endpoints included.
pub fn parse_grid(s: &str) -> Result<Vec<f64>, CliError> {
    let parts: Vec<&str> = s.split(':').collect();
    let [a, b, n] = parts.as_slice() else {
        return Err(CliError::Usage(format!("grid must be start:stop:count, got {s:?}")));
    };
    let (a, b) = (parse_f64(a, "grid start")?, parse_f64(b, "grid stop")?);
    let n: usize = n.trim().parse().map_err(|e| CliError::Usage(format!("grid count {n:?}: {e}")))?;
    if n == 0 {
        return Err(CliError::Usage("grid count must be positive".into()));
    }
    if n == 1 {
        return Ok(vec![a]);
    }
    Ok((0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect())
}

/// `start:stop` with `start < stop`.
pub fn parse_range(s: &str) -> Result<(f64, f64), CliError> {
    let Some((a, b)) = s.split_once(':') else {
        return Err(CliError::Usage(format!("range must be start:stop, got {s:?}")));
    };
    let (a, b) = (parse_f64(a, "range start")?, parse_f64(b, "range stop")?);
    if !(a < b) {
        return Err(CliError::Usage(format!("range start {a} must be below stop {b}")));
    }
    Ok((a, b))
}

pub fn file_digest(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// A resolved seed: the equilibrium, the parameters it lives in, and how it was obtained.
pub struct Seed {
    pub eq: RelativeEquilibrium,
    pub params: Parameters,
    pub description: String,
}

/// Resolves `primary:M@TAU` or `file:PATH[#INDEX]`, recording the seed in `cfg`.
pub fn load_seed(spec: &str, model: &ModelArgs, cfg_options: &mut Vec<(String, String)>) -> Result<Seed, CliError> {
    cfg_options.push(("seed".into(), spec.to_string()));
    if let Some(rest) = spec.strip_prefix("primary:") {
        let Some((m, tau)) = rest.split_once('@') else {
            return Err(CliError::Usage(format!("primary seed must be primary:M@TAU, got {spec:?}")));
        };
        let m: usize = m.trim().parse().map_err(|e| CliError::Usage(format!("seed index {m:?}: {e}")))?;
        if m >= N {
            return Err(CliError::Usage(format!("seed index m must be in 0..=3, got {m}")));
        }
        let tau = parse_f64(tau, "seed delay")?;
        let params = resolve_params(model, None)?;
        let eq = primary_at(&params, m, tau)?;
        return Ok(Seed { eq, params, description: format!("primary m = {m} at tau = {tau}") });
    }
    if let Some(rest) = spec.strip_prefix("file:") {
        let (path, index) = match rest.rsplit_once('#') {
            Some((p, i)) => {
                let i: usize = i.trim().parse().map_err(|e| CliError::Usage(format!("seed index {i:?}: {e}")))?;
                (PathBuf::from(p), Some(i))
            }
            None => (PathBuf::from(rest), None),
        };
        cfg_options.push(("seed_sha256".into(), file_digest(&path)?));
        let value = read_json(&path)?;
        let (eq, base) = equilibrium_from_json(&value, index)
            .map_err(|m| CliError::Usage(format!("{}: {m}", path.display())))?;
        let params = resolve_params(model, base)?;
        let description = match index {
            Some(i) => format!("{}#{i}", path.display()),
            None => path.display().to_string(),
        };
        return Ok(Seed { eq, params, description });
    }
    Err(CliError::Usage(format!("seed must be primary:M@TAU or file:PATH[#INDEX], got {spec:?}")))
}

pub fn read_json(path: &Path) -> Result<Value, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn from_value<T: for<'de> Deserialize<'de>>(v: &Value) -> Result<T, String> {
    T::deserialize(v).map_err(|e| e.to_string())
}

fn branch_of(value: &Value) -> Option<&Value> {
    if value.get("points").is_some() {
        Some(value)
    } else {
        value.get("branch").filter(|b| b.get("points").is_some())
    }
}

/// Accepts an equilibrium record, a branch bundle or bare branch (`#INDEX` picks the point), or a bare equilibrium.
fn equilibrium_from_json(value: &Value, index: Option<usize>) -> Result<(RelativeEquilibrium, Option<Parameters>), String> {
    let params = |v: &Value| v.get("params").map(from_value::<Parameters>).transpose();
    if let Some(branch) = branch_of(value) {
        let points = branch["points"].as_array().ok_or("`points` is not an array")?;
        let i = index.unwrap_or(0);
        let point = points.get(i).ok_or_else(|| format!("point index {i} out of range (branch has {})", points.len()))?;
        return Ok((from_value(&point["eq"])?, params(branch)?));
    }
    if index.is_some() {
        return Err("a point index needs a branch bundle".into());
    }
    if let Some(eq) = value.get("equilibrium") {
        return Ok((from_value(eq)?, params(value)?));
    }
    Ok((from_value(value)?, None))
}

/// Bifurcations stored in a branch bundle, a bare branch, or a single bifurcation record.
pub fn load_bifurcations(path: &Path) -> Result<(Vec<Bifurcation>, Option<Parameters>), CliError> {
    let value = read_json(path)?;
    let parsed = (|| -> Result<_, String> {
        if let Some(branch) = branch_of(&value) {
            let b: Branch = from_value(branch)?;
            return Ok((b.bifurcations, Some(b.params)));
        }
        if let Some(bif) = value.get("bifurcation") {
            let params = value.get("params").map(from_value::<Parameters>).transpose()?;
            return Ok((vec![from_value(bif)?], params));
        }
        Ok((vec![from_value(&value)?], None))
    })();
    parsed.map_err(|m| CliError::Usage(format!("{}: {m}", path.display())))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EquilibriumRecord {
    pub config_hash: String,
    pub config: RunConfig,
    pub params: Parameters,
    pub equilibrium: RelativeEquilibrium,
    pub isotropy: IsotropyLabel,
    /// Max-norm of the eight-equation residual.
    pub residual: f64,
}

pub fn max_residual(params: &Parameters, eq: &RelativeEquilibrium) -> Result<f64, CliError> {
    Ok(residual(params, eq)?.iter().fold(0.0_f64, |m, x| m.max(x.abs())))
}

/// Builds a record, failing the audit when the residual is not below [`AUDIT_TOL`].
pub fn record(cfg: &RunConfig, params: &Parameters, eq: &RelativeEquilibrium) -> Result<EquilibriumRecord, CliError> {
    let res = max_residual(params, eq)?;
    let rec = EquilibriumRecord {
        config_hash: cfg.hash(),
        config: cfg.clone(),
        params: params.with_delay(eq.tau),
        equilibrium: *eq,
        isotropy: classify_isotropy(eq, SOLVER_TOL).label,
        residual: res,
    };
    if !(res < AUDIT_TOL) {
        return Err(CliError::Audit(format!("equilibrium residual {res:e} at tau = {} exceeds {AUDIT_TOL:e}", eq.tau)));
    }
    Ok(rec)
}

pub fn out_path(dir: &Path, name: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    Ok(dir.join(name))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Writes a CSV preceded by the config hash comment line.
pub fn write_csv(path: &Path, hash: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut file = fs::File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    writeln!(file, "# config_hash={hash}")?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}
