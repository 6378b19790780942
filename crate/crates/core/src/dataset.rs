//! Training and test corpora.
//!
//! A corpus is a list of [`DatasetRecord`]s, one per input function, each
//! carrying its oracle field and a random subset of grid measurements.
//! Record `r` draws its input function from seed `derive(master, [1, r])`
//! and its measurement indices from `derive(master, [2, r])` (see
//! [`crate::seed`]), so a parallel build is identical to a serial one.
//!
//! # Record file format
//!
//! One UTF-8 text file per record:
//!
//! ```text
//! # dhpm-record v1
//! id,L,D,K,function,seed
//! 3,1,0.001,0.001,periodic:0.1;-0.2;0.3;0.05;-0.4,1234567
//! field,201,101
//! <201 lines of 101 comma-separated values: row i is x_i, column j is t_j>
//! measurements,500
//! <500 lines "i,j" of grid indices>
//! ```
//!
//! Numbers use Rust's shortest round-trip formatting, so load→save is
//! byte-identical and values survive exactly. The loader re-checks the
//! boundary rows, the initial column and the measurement indices.
//!
//! A corpus directory holds `manifest.json` plus `record_XXXXX.csv` files.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::model::{CollocationBatch, DataBatch, Extras, FeatureContext, Scenario, N_SENSORS};
use crate::oracle::{ftcs_solve, InputFunction, InputFunctionSpec, PdeParams, SolutionField, SpaceTimeGrid};
use crate::{par, seed, Error, Result};

/// An input function sampled at 50 equispaced points spanning `[0, L]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorVector {
    pub coords: Vec<f64>,
    pub values: Vec<f64>,
}

pub fn sensor_vector(spec: &InputFunctionSpec) -> Result<SensorVector> {
    let l = spec.length;
    let coords: Vec<f64> = (0..N_SENSORS)
        .map(|i| l * (i as f64 / (N_SENSORS - 1) as f64))
        .collect();
    let values = coords.iter().map(|&x| spec.eval(x)).collect::<Result<_>>()?;
    Ok(SensorVector { coords, values })
}

/// Latin hypercube sample of `n` points; row `i` is a point, column `d` a dimension.
///
/// Each dimension is cut into `n` equal strata and every stratum receives
/// exactly one point, placed uniformly inside it.
pub fn lhs_sample(n: usize, bounds: &[(f64, f64)], seed: u64) -> Result<Array2<f64>> {
    let mut rng = seed::rng(seed, &[]);
    lhs_sample_with(n, bounds, &mut rng)
}

pub fn lhs_sample_with<R: Rng + ?Sized>(n: usize, bounds: &[(f64, f64)], rng: &mut R) -> Result<Array2<f64>> {
    if n == 0 {
        return Err(Error::InvalidArgument("LHS needs at least one point".into()));
    }
    if let Some((lo, hi)) = bounds
        .iter()
        .find(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo < hi))
    {
        return Err(Error::InvalidArgument(format!("degenerate LHS bounds ({lo}, {hi})")));
    }
    let mut out = Array2::<f64>::zeros((n, bounds.len()));
    let mut strata: Vec<usize> = (0..n).collect();
    for (d, &(lo, hi)) in bounds.iter().enumerate() {
        strata.shuffle(rng);
        for (i, &s) in strata.iter().enumerate() {
            let u: f64 = rng.random();
            out[[i, d]] = lo + (hi - lo) * ((s as f64 + u) / n as f64);
        }
    }
    Ok(out)
}

/// Grid measurements of one field.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    /// `(x_index, t_index)` pairs, distinct.
    pub indices: Vec<(usize, usize)>,
    pub values: Vec<f64>,
}

impl MeasurementSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    fn from_indices(field: &SolutionField, indices: Vec<(usize, usize)>) -> Self {
        let values = indices.iter().map(|&(i, j)| field.at(i, j)).collect();
        Self { indices, values }
    }
}

/// `n_data` distinct grid nodes drawn uniformly without replacement, in
/// increasing flat (x-major) order.
pub fn sample_measurements(field: &SolutionField, n_data: usize, seed: u64) -> Result<MeasurementSet> {
    let mut rng = seed::rng(seed, &[]);
    sample_measurements_with(field, n_data, &mut rng)
}

fn sample_measurements_with<R: Rng + ?Sized>(
    field: &SolutionField,
    n_data: usize,
    rng: &mut R,
) -> Result<MeasurementSet> {
    let g = &field.grid;
    let total = g.len();
    if n_data == 0 || n_data > total {
        return Err(Error::InvalidArgument(format!(
            "n_data = {n_data} must be in 1..={total}"
        )));
    }
    let mut flat = rand::seq::index::sample(rng, total, n_data).into_vec();
    flat.sort_unstable();
    let indices = flat.into_iter().map(|f| (f / g.nt, f % g.nt)).collect();
    Ok(MeasurementSet::from_indices(field, indices))
}

/// One input function with its oracle field and measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub id: usize,
    pub seed: u64,
    pub spec: InputFunctionSpec,
    pub params: PdeParams,
    pub field: SolutionField,
    pub measurements: MeasurementSet,
}

impl DatasetRecord {
    pub fn length(&self) -> f64 {
        self.spec.length
    }

    /// Generate a record from its parts, running the oracle.
    pub fn generate(
        id: usize,
        seed: u64,
        spec: InputFunctionSpec,
        params: PdeParams,
        n_data: usize,
        measurement_seed: u64,
    ) -> Result<Self> {
        let field = ftcs_solve(params, &spec, &SpaceTimeGrid::standard(spec.length))?;
        let measurements = sample_measurements(&field, n_data, measurement_seed)?;
        Ok(Self {
            id,
            seed,
            spec,
            params,
            field,
            measurements,
        })
    }

    pub fn label(&self) -> String {
        format!(
            "L={} D={} K={} f={}",
            self.spec.length,
            self.params.d,
            self.params.k,
            self.spec.descriptor()
        )
    }

    /// Scenario features for this record's input function.
    pub fn context(&self, scenario: Scenario) -> Result<FeatureContext> {
        function_context(scenario, &self.spec, self.params)
    }

    /// The record's measurements as a minibatch.
    pub fn data_batch(&self, scenario: Scenario) -> Result<DataBatch> {
        let g = &self.field.grid;
        let n = self.measurements.len();
        let mut points = Array2::<f64>::zeros((n, 2));
        for (r, &(i, j)) in self.measurements.indices.iter().enumerate() {
            points[[r, 0]] = g.x(i);
            points[[r, 1]] = g.t(j);
        }
        Ok(DataBatch {
            context: self.context(scenario)?,
            points,
            targets: Array1::from(self.measurements.values.clone()),
        })
    }

    /// Latin hypercube collocation points over `[0, L] x [0, 10]`.
    pub fn collocation_batch<R: Rng + ?Sized>(
        &self,
        scenario: Scenario,
        n: usize,
        rng: &mut R,
    ) -> Result<CollocationBatch> {
        let g = &self.field.grid;
        Ok(CollocationBatch {
            context: self.context(scenario)?,
            points: lhs_sample_with(n, &[(0.0, g.length), (0.0, g.t_end)], rng)?,
        })
    }

    /// Checks the record against the invariants the loader relies on.
    pub fn validate(&self) -> Result<()> {
        self.field.check_consistency(&self.spec)?;
        if self.field.grid.length != self.spec.length {
            return Err(Error::InvalidArgument("field grid length differs from L".into()));
        }
        let g = &self.field.grid;
        let mut seen = std::collections::HashSet::with_capacity(self.measurements.len());
        for (&(i, j), &v) in self.measurements.indices.iter().zip(&self.measurements.values) {
            if i >= g.nx || j >= g.nt {
                return Err(Error::InvalidArgument(format!("measurement ({i}, {j}) off the grid")));
            }
            if !seen.insert((i, j)) {
                return Err(Error::InvalidArgument(format!("measurement ({i}, {j}) repeated")));
            }
            if v.to_bits() != self.field.at(i, j).to_bits() {
                return Err(Error::InvalidArgument(format!(
                    "measurement ({i}, {j}) differs from the field"
                )));
            }
        }
        Ok(())
    }
}

/// Scenario features for an input function and PDE parameters.
pub fn function_context(scenario: Scenario, spec: &InputFunctionSpec, params: PdeParams) -> Result<FeatureContext> {
    let sensors = sensor_vector(spec)?;
    let extras = match scenario {
        Scenario::InputGen => Extras::default(),
        Scenario::ParamGen => Extras {
            d: Some(params.d),
            k: Some(params.k),
            length: None,
        },
        Scenario::DomainGen => Extras {
            length: Some(spec.length),
            ..Default::default()
        },
    };
    FeatureContext::new(scenario, &sensors.values, extras)
}

/// Training corpus for `config`: `n_fun` random periodic inputs for every
/// `(D, K, L)` combination of the configuration, in the order of
/// [`TrainConfig::combinations`].
pub fn build_dataset(config: &TrainConfig) -> Result<Vec<DatasetRecord>> {
    config.validate()?;
    let combos = config.combinations();
    let n_fun = config.n_fun;
    let master = config.seed;
    let records = par::map_range(combos.len() * n_fun, |r| {
        let (params, length) = combos[r / n_fun];
        let fseed = seed::derive(master, &[seed::stream::INPUT_FUNCTION, r as u64]);
        let mseed = seed::derive(master, &[seed::stream::MEASUREMENTS, r as u64]);
        InputFunctionSpec::random_periodic(fseed, length)
            .and_then(|spec| DatasetRecord::generate(r, fseed, spec, params, config.n_data, mseed))
            .map_err(|e| Error::Record {
                index: r,
                label: format!("L={length} D={} K={} seed={fseed}", params.d, params.k),
                source: Box::new(e),
            })
    });
    records.into_iter().collect()
}

/// Unseen random periodic inputs for testing, drawn from a stream disjoint
/// from every training stream.
pub fn test_functions(master: u64, count: usize, length: f64) -> Result<Vec<InputFunctionSpec>> {
    (0..count)
        .map(|i| {
            InputFunctionSpec::random_periodic(seed::derive(master, &[seed::stream::TEST_FUNCTION, i as u64]), length)
        })
        .collect()
}

fn fmt_record(rec: &DatasetRecord) -> String {
    let g = &rec.field.grid;
    let mut s = String::with_capacity(g.len() * 22);
    s.push_str("# dhpm-record v1\nid,L,D,K,function,seed\n");
    let _ = writeln!(
        s,
        "{},{},{},{},{},{}",
        rec.id,
        rec.spec.length,
        rec.params.d,
        rec.params.k,
        rec.spec.descriptor(),
        rec.seed
    );
    let _ = writeln!(s, "field,{},{}", g.nx, g.nt);
    for row in rec.field.values.rows() {
        let mut first = true;
        for v in row {
            if !first {
                s.push(',');
            }
            first = false;
            let _ = write!(s, "{v}");
        }
        s.push('\n');
    }
    let _ = writeln!(s, "measurements,{}", rec.measurements.len());
    for (i, j) in &rec.measurements.indices {
        let _ = writeln!(s, "{i},{j}");
    }
    s
}

pub fn write_record(path: &Path, rec: &DatasetRecord) -> Result<()> {
    fs::write(path, fmt_record(rec)).map_err(|e| Error::io(path, e))
}

pub fn read_record(path: &Path) -> Result<DatasetRecord> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_record(&text).map_err(|reason| Error::format(path, reason))
}

fn parse_record(text: &str) -> std::result::Result<DatasetRecord, String> {
    let mut lines = text.lines();
    let mut next = |what: &str| lines.next().ok_or_else(|| format!("missing {what}"));
    if next("magic")? != "# dhpm-record v1" {
        return Err("not a dhpm-record v1 file".into());
    }
    if next("header")? != "id,L,D,K,function,seed" {
        return Err("unexpected header line".into());
    }
    let meta: Vec<&str> = next("metadata")?.split(',').collect();
    if meta.len() != 6 {
        return Err(format!("metadata has {} fields, expected 6", meta.len()));
    }
    let num = |s: &str, what: &str| s.parse::<f64>().map_err(|e| format!("{what}: {e}"));
    let id: usize = meta[0].parse().map_err(|e| format!("id: {e}"))?;
    let length = num(meta[1], "L")?;
    let params = PdeParams::new(num(meta[2], "D")?, num(meta[3], "K")?).map_err(|e| e.to_string())?;
    let function: InputFunction = meta[4].parse().map_err(|e: Error| e.to_string())?;
    let seed: u64 = meta[5].parse().map_err(|e| format!("seed: {e}"))?;
    let spec = InputFunctionSpec::new(function, length).map_err(|e| e.to_string())?;

    let dims: Vec<&str> = next("field header")?.split(',').collect();
    if dims.len() != 3 || dims[0] != "field" {
        return Err("expected `field,nx,nt`".into());
    }
    let grid = SpaceTimeGrid::standard(length);
    let (nx, nt): (usize, usize) = (
        dims[1].parse().map_err(|e| format!("nx: {e}"))?,
        dims[2].parse().map_err(|e| format!("nt: {e}"))?,
    );
    if (nx, nt) != (grid.nx, grid.nt) {
        return Err(format!("field is {nx}x{nt}, expected {}x{}", grid.nx, grid.nt));
    }
    let mut values = Array2::<f64>::zeros((nx, nt));
    for i in 0..nx {
        let line = next("field row")?;
        let mut count = 0;
        for (j, tok) in line.split(',').enumerate() {
            if j >= nt {
                return Err(format!("field row {i} has too many values"));
            }
            values[[i, j]] = num(tok, "field value")?;
            count += 1;
        }
        if count != nt {
            return Err(format!("field row {i} has {count} values, expected {nt}"));
        }
    }
    let field = SolutionField { grid, values };

    let mh: Vec<&str> = next("measurement header")?.split(',').collect();
    if mh.len() != 2 || mh[0] != "measurements" {
        return Err("expected `measurements,n`".into());
    }
    let n: usize = mh[1].parse().map_err(|e| format!("measurement count: {e}"))?;
    let mut indices = Vec::with_capacity(n);
    for _ in 0..n {
        let line = next("measurement")?;
        let (a, b) = line.split_once(',').ok_or("measurement line needs `i,j`")?;
        indices.push((
            a.parse().map_err(|e| format!("measurement i: {e}"))?,
            b.parse().map_err(|e| format!("measurement j: {e}"))?,
        ));
    }
    if lines.next().is_some_and(|l| !l.trim().is_empty()) {
        return Err("trailing content".into());
    }
    if let Some(&(i, j)) = indices.iter().find(|&&(i, j)| i >= nx || j >= nt) {
        return Err(format!("measurement ({i}, {j}) off the grid"));
    }
    let measurements = MeasurementSet::from_indices(&field, indices);
    let rec = DatasetRecord {
        id,
        seed,
        spec,
        params,
        field,
        measurements,
    };
    rec.validate().map_err(|e| e.to_string())?;
    Ok(rec)
}

/// Entry of a corpus manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: usize,
    pub path: String,
    pub length: f64,
    pub d: f64,
    pub k: f64,
    pub function: String,
    pub seed: u64,
}

/// `manifest.json` of a corpus directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub scenario: Scenario,
    pub config: TrainConfig,
    pub config_hash: String,
    pub master_seed: u64,
    pub records: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Write every record plus the manifest into `dir` (created if needed).
pub fn write_dataset(dir: &Path, config: &TrainConfig, records: &[DatasetRecord]) -> Result<DatasetManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let entries = records
        .iter()
        .map(|r| {
            let name = format!("record_{:05}.csv", r.id);
            write_record(&dir.join(&name), r)?;
            Ok(ManifestEntry {
                id: r.id,
                path: name,
                length: r.spec.length,
                d: r.params.d,
                k: r.params.k,
                function: r.spec.descriptor(),
                seed: r.seed,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest {
        format: "dhpm-dataset v1".into(),
        scenario: config.scenario,
        config: config.clone(),
        config_hash: config.hash(),
        master_seed: config.seed,
        records: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::to_writer_pretty(&mut f, &manifest)?;
    f.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Load a corpus directory written by [`write_dataset`], validating every record.
pub fn read_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<DatasetRecord>)> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    let paths: Vec<PathBuf> = manifest.records.iter().map(|e| dir.join(&e.path)).collect();
    let records = par::map_ordered(&paths, |_, p| read_record(p))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    for (e, r) in manifest.records.iter().zip(&records) {
        if e.id != r.id || e.seed != r.seed || e.length != r.spec.length || e.d != r.params.d || e.k != r.params.k {
            return Err(Error::format(dir.join(&e.path), "record disagrees with manifest entry"));
        }
    }
    Ok((manifest, records))
}
