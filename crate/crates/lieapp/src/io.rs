//! Grid files, OBJ meshes and machine-readable reports.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::catalog::{check_chart, Partials, Provenance, SampledGrid, Vec3};
use crate::error::{LieError, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Rodrigues residual tolerated when a grid file supplies analytic partials.
pub const INGEST_RODRIGUES_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFields {
    pub x: Vec<f64>,
    pub n: Vec<f64>,
    pub kappa1: Vec<f64>,
    pub kappa2: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xu: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xv: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nv: Option<Vec<f64>>,
}

/// On-disk grid: row-major flat arrays (`i * nv + j`, `i` along u), vector
/// fields interleaved `x, y, z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFile {
    pub schema_version: u32,
    pub nu: usize,
    pub nv: usize,
    pub u_range: [f64; 2],
    pub v_range: [f64; 2],
    pub fields: GridFields,
}

fn flatten(v: &[Vec3]) -> Vec<f64> {
    v.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

fn unflatten(name: &str, v: &[f64], n: usize) -> Result<Vec<Vec3>> {
    if v.len() != 3 * n {
        return Err(LieError::SchemaError(format!("field `{name}` has {} values, expected {}", v.len(), 3 * n)));
    }
    Ok(v.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect())
}

pub fn export_grid(grid: &SampledGrid) -> GridFile {
    let p = grid.partials.as_ref();
    GridFile {
        schema_version: SCHEMA_VERSION,
        nu: grid.nu,
        nv: grid.nv,
        u_range: grid.u_range,
        v_range: grid.v_range,
        fields: GridFields {
            x: flatten(&grid.x),
            n: flatten(&grid.n),
            kappa1: grid.k1.clone(),
            kappa2: grid.k2.clone(),
            xu: p.map(|p| flatten(&p.xu)),
            xv: p.map(|p| flatten(&p.xv)),
            nu: p.map(|p| flatten(&p.nu)),
            nv: p.map(|p| flatten(&p.nv)),
        },
    }
}

pub fn grid_to_json(grid: &SampledGrid) -> Result<String> {
    serde_json::to_string(&export_grid(grid)).map_err(|e| LieError::SchemaError(e.to_string()))
}

/// Validates a parsed grid file and builds the sampled grid. Partials must
/// be supplied all together; when present the Rodrigues equations are
/// checked.
pub fn ingest_grid(file: GridFile) -> Result<SampledGrid> {
    if file.schema_version != SCHEMA_VERSION {
        return Err(LieError::SchemaError(format!("unsupported schema_version {}", file.schema_version)));
    }
    let (nu, nv) = (file.nu, file.nv);
    if nu < 8 || nv < 8 {
        return Err(LieError::GridTooSmall { nu, nv });
    }
    for r in [file.u_range, file.v_range] {
        if !(r[0].is_finite() && r[1].is_finite() && r[1] > r[0]) {
            return Err(LieError::SchemaError(format!("bad parameter range {r:?}")));
        }
    }
    let n = nu * nv;
    let f = file.fields;
    for (name, k) in [("kappa1", &f.kappa1), ("kappa2", &f.kappa2)] {
        if k.len() != n {
            return Err(LieError::SchemaError(format!("field `{name}` has {} values, expected {n}", k.len())));
        }
    }
    let x = unflatten("x", &f.x, n)?;
    let normals = unflatten("n", &f.n, n)?;
    let partials = match (f.xu, f.xv, f.nu, f.nv) {
        (None, None, None, None) => None,
        (Some(xu), Some(xv), Some(du), Some(dv)) => Some(Partials {
            xu: unflatten("xu", &xu, n)?,
            xv: unflatten("xv", &xv, n)?,
            nu: unflatten("nu", &du, n)?,
            nv: unflatten("nv", &dv, n)?,
        }),
        _ => return Err(LieError::SchemaError("partials xu, xv, nu, nv must be given together".into())),
    };
    let has_partials = partials.is_some();
    let grid = SampledGrid::from_fields(
        nu,
        nv,
        file.u_range,
        file.v_range,
        x,
        normals,
        f.kappa1,
        f.kappa2,
        partials,
        Provenance::File,
    )?;
    if has_partials {
        let c = check_chart(&grid, INGEST_RODRIGUES_TOL);
        if let Some(&k) = c.violations.first() {
            return Err(LieError::GeometryError(format!(
                "Rodrigues equations fail at vertex {k} (max residual {:.3e})",
                c.rodrigues
            )));
        }
    }
    Ok(grid)
}

pub fn grid_from_json(s: &str) -> Result<SampledGrid> {
    let file: GridFile = serde_json::from_str(s).map_err(|e| LieError::SchemaError(e.to_string()))?;
    ingest_grid(file)
}

pub fn read_grid(path: &Path) -> Result<SampledGrid> {
    let s = std::fs::read_to_string(path)
        .map_err(|e| LieError::Config(format!("cannot read {}: {e}", path.display())))?;
    grid_from_json(&s)
}

pub fn write_grid(path: &Path, grid: &SampledGrid) -> Result<()> {
    write_text(path, &grid_to_json(grid)?)
}

pub fn write_text(path: &Path, s: &str) -> Result<()> {
    std::fs::write(path, s).map_err(|e| LieError::Config(format!("cannot write {}: {e}", path.display())))
}

/// Quad mesh over the parameter grid with vertex normals. Quads touching a
/// masked vertex are skipped; masked vertices are still written so indices
/// stay aligned with the grid.
pub fn write_obj<W: Write>(
    mut w: W,
    nu: usize,
    nv: usize,
    x: &[Vec3],
    n: &[Vec3],
    mask: Option<&[bool]>,
) -> std::io::Result<()> {
    writeln!(w, "# {nu}x{nv} curvature-line grid")?;
    for p in x {
        writeln!(w, "v {} {} {}", p.x, p.y, p.z)?;
    }
    for p in n {
        writeln!(w, "vn {} {} {}", p.x, p.y, p.z)?;
    }
    let dead = |k: usize| mask.is_some_and(|m| m[k]);
    for i in 0..nu - 1 {
        for j in 0..nv - 1 {
            let q = [i * nv + j, (i + 1) * nv + j, (i + 1) * nv + j + 1, i * nv + j + 1];
            if q.iter().any(|&k| dead(k)) {
                continue;
            }
            writeln!(w, "f {0}//{0} {1}//{1} {2}//{2} {3}//{3}", q[0] + 1, q[1] + 1, q[2] + 1, q[3] + 1)?;
        }
    }
    Ok(())
}

pub fn write_obj_file(path: &Path, nu: usize, nv: usize, x: &[Vec3], n: &[Vec3], mask: Option<&[bool]>) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| LieError::Config(format!("cannot create {}: {e}", path.display())))?;
    write_obj(std::io::BufWriter::new(f), nu, nv, x, n, mask)
        .map_err(|e| LieError::Config(format!("cannot write {}: {e}", path.display())))
}

/// One labelled residual.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    /// The identity the residual witnesses.
    pub identity: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub grid: [usize; 2],
    pub h: f64,
    pub values: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    /// observed orders `log(e₁/e₂)/log(h₁/h₂)` between consecutive rows
    pub orders: BTreeMap<String, Vec<f64>>,
}

impl ConvergenceTable {
    pub fn new(rows: Vec<ConvergenceRow>) -> Self {
        let mut orders: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for w in rows.windows(2) {
            for (k, a) in &w[0].values {
                if let Some(b) = w[1].values.get(k) {
                    orders.entry(k.clone()).or_default().push(observed_order(*a, *b, w[0].h, w[1].h));
                }
            }
        }
        ConvergenceTable { rows, orders }
    }
}

pub fn observed_order(e1: f64, e2: f64, h1: f64, h2: f64) -> f64 {
    (e1 / e2).ln() / (h1 / h2).ln()
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub command: Vec<String>,
    pub checks: Vec<Check>,
    /// Non-numeric findings (classifications, detected parameters, …).
    pub info: BTreeMap<String, serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceTable>,
    pub timings: BTreeMap<String, f64>,
}

impl Report {
    pub fn new(command: Vec<String>) -> Self {
        Report { command, checks: vec![], info: BTreeMap::new(), convergence: None, timings: BTreeMap::new() }
    }

    /// Records `value ≤ threshold`; NaN fails.
    pub fn check(&mut self, name: &str, identity: &str, value: f64, threshold: f64) -> bool {
        let pass = value <= threshold;
        self.checks.push(Check { name: name.into(), identity: identity.into(), value, threshold, pass });
        pass
    }

    pub fn info(&mut self, key: &str, value: impl Serialize) {
        self.info.insert(key.into(), serde_json::to_value(value).unwrap_or(serde_json::Value::Null));
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// One line per check for terminals.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let tag = if c.pass { "PASS" } else { "FAIL" };
            s.push_str(&format!("{tag} {:<32} {:>11.3e} <= {:.1e}  [{}]\n", c.name, c.value, c.threshold, c.identity));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{catalog, sample, Params};

    fn torus(n: usize) -> SampledGrid {
        let p: Params = [("R".to_string(), 2.0), ("r".to_string(), 1.0)].into();
        sample(&catalog("torus", &p).unwrap(), n, n).unwrap()
    }

    #[test]
    fn json_round_trip_is_bitwise() {
        let g = torus(9);
        let back = grid_from_json(&grid_to_json(&g).unwrap()).unwrap();
        assert_eq!(export_grid(&back), export_grid(&g));
        for (a, b) in g.x.iter().zip(&back.x) {
            for c in 0..3 {
                assert_eq!(a[c].to_bits(), b[c].to_bits());
            }
        }
    }

    #[test]
    fn schema_violations_are_rejected() {
        let mut f = export_grid(&torus(9));
        f.fields.kappa1.pop();
        assert!(matches!(ingest_grid(f), Err(LieError::SchemaError(_))));
        let mut f = export_grid(&torus(9));
        f.fields.xu = None;
        assert!(matches!(ingest_grid(f), Err(LieError::SchemaError(_))));
        let mut f = export_grid(&torus(9));
        f.schema_version = 7;
        assert!(matches!(ingest_grid(f), Err(LieError::SchemaError(_))));
        assert!(matches!(grid_from_json("{\"nu\": 3}"), Err(LieError::SchemaError(_))));
        let mut f = export_grid(&torus(9));
        f.fields.kappa1[5] += 0.5;
        assert!(matches!(ingest_grid(f), Err(LieError::GeometryError(_))));
    }

    #[test]
    fn obj_has_vertices_normals_and_quads() {
        let g = torus(8);
        let mut buf = Vec::new();
        write_obj(&mut buf, 8, 8, &g.x, &g.n, None).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().filter(|l| l.starts_with("v ")).count(), 64);
        assert_eq!(s.lines().filter(|l| l.starts_with("vn ")).count(), 64);
        assert_eq!(s.lines().filter(|l| l.starts_with("f ")).count(), 49);
    }

    #[test]
    fn orders_from_table() {
        let row = |h: f64, e: f64| ConvergenceRow { grid: [0, 0], h, values: [("e".to_string(), e)].into() };
        let t = ConvergenceTable::new(vec![row(0.2, 4e-2), row(0.1, 1e-2)]);
        assert!((t.orders["e"][0] - 2.0).abs() < 1e-12);
    }
}
