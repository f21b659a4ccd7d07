//! File formats: trajectories as long CSV (`step,regime,unit,y[,x]`), the
//! system, estimation and inference results as versioned JSON.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::EstimationResult;
use crate::inference::InferenceSolution;
use crate::model::{NoiseSpec, Regime, SocialSystem, Trajectory};

pub const FORMAT_VERSION: u32 = 1;

const COLUMN_ORDER: &str = "X column c holds y(g) - y(j) for g = k..p-2, j = g+1..p-1 within one segment, \
segments in input order; Y column c holds y(g+1) - y(j+1)";

fn check_version(v: u32) -> Result<()> {
    if v != FORMAT_VERSION {
        return Err(Error::Input(format!("unsupported format_version {v}, expected {FORMAT_VERSION}")));
    }
    Ok(())
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_from_rows(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Input(format!("{name}: ragged rows")));
    }
    Ok(DMatrix::from_row_iterator(n, cols, rows.iter().flatten().copied()))
}

fn matrix_from_flat(name: &str, n: usize, flat: &[f64]) -> Result<DMatrix<f64>> {
    if flat.len() != n * n {
        return Err(Error::Input(format!("{name}: expected {} entries, got {}", n * n, flat.len())));
    }
    Ok(DMatrix::from_row_slice(n, n, flat))
}

fn flat_of(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemFile {
    pub format_version: u32,
    pub m: usize,
    /// Influence matrix, one inner array per row.
    pub w: Vec<Vec<f64>>,
    pub s: Vec<f64>,
    pub eps: Vec<f64>,
    pub eta: Vec<f64>,
    pub chi: Vec<f64>,
    #[serde(default = "NoiseSpec::noiseless")]
    pub noise: NoiseSpec,
}

impl From<&SocialSystem> for SystemFile {
    fn from(sys: &SocialSystem) -> Self {
        SystemFile {
            format_version: FORMAT_VERSION,
            m: sys.m,
            w: rows_of(&sys.w),
            s: sys.s.iter().copied().collect(),
            eps: sys.eps.iter().copied().collect(),
            eta: sys.eta.iter().copied().collect(),
            chi: sys.chi.iter().copied().collect(),
            noise: sys.noise,
        }
    }
}

impl TryFrom<SystemFile> for SocialSystem {
    type Error = Error;

    fn try_from(f: SystemFile) -> Result<Self> {
        check_version(f.format_version)?;
        SocialSystem::new(
            f.m,
            matrix_from_rows("w", &f.w)?,
            DVector::from_vec(f.s),
            DVector::from_vec(f.eps),
            DVector::from_vec(f.eta),
            DVector::from_vec(f.chi),
            f.noise,
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimationFile {
    pub format_version: u32,
    pub n: usize,
    /// Always `"row-major"`.
    pub layout: String,
    pub column_order: String,
    pub matrix_plus: Vec<f64>,
    pub matrix_minus: Vec<f64>,
    pub offset_plus: Vec<f64>,
    pub offset_minus: Vec<f64>,
    #[serde(default)]
    pub gram_min_singular_plus: Option<f64>,
    #[serde(default)]
    pub gram_min_singular_minus: Option<f64>,
}

impl From<&EstimationResult> for EstimationFile {
    fn from(e: &EstimationResult) -> Self {
        EstimationFile {
            format_version: FORMAT_VERSION,
            n: e.n(),
            layout: "row-major".into(),
            column_order: COLUMN_ORDER.into(),
            matrix_plus: flat_of(&e.matrix_plus),
            matrix_minus: flat_of(&e.matrix_minus),
            offset_plus: e.offset_plus.iter().copied().collect(),
            offset_minus: e.offset_minus.iter().copied().collect(),
            gram_min_singular_plus: e.gram_min_singular_plus,
            gram_min_singular_minus: e.gram_min_singular_minus,
        }
    }
}

impl TryFrom<EstimationFile> for EstimationResult {
    type Error = Error;

    fn try_from(f: EstimationFile) -> Result<Self> {
        check_version(f.format_version)?;
        if f.layout != "row-major" {
            return Err(Error::Input(format!("unsupported layout {:?}", f.layout)));
        }
        if f.offset_plus.len() != f.n || f.offset_minus.len() != f.n {
            return Err(Error::Input(format!("offsets must have length {}", f.n)));
        }
        Ok(EstimationResult {
            matrix_plus: matrix_from_flat("matrix_plus", f.n, &f.matrix_plus)?,
            matrix_minus: matrix_from_flat("matrix_minus", f.n, &f.matrix_minus)?,
            offset_plus: DVector::from_vec(f.offset_plus),
            offset_minus: DVector::from_vec(f.offset_minus),
            gram_min_singular_plus: f.gram_min_singular_plus,
            gram_min_singular_minus: f.gram_min_singular_minus,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferenceFile {
    pub format_version: u32,
    #[serde(flatten)]
    pub solution: InferenceSolution,
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path)?;
    Ok(serde_json::from_reader(BufReader::new(f))?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_system(path: &Path) -> Result<SocialSystem> {
    read_json::<SystemFile>(path)?.try_into()
}

pub fn save_system(path: &Path, sys: &SocialSystem) -> Result<()> {
    write_json(path, &SystemFile::from(sys))
}

pub fn load_estimation(path: &Path) -> Result<EstimationResult> {
    read_json::<EstimationFile>(path)?.try_into()
}

pub fn save_estimation(path: &Path, est: &EstimationResult) -> Result<()> {
    write_json(path, &EstimationFile::from(est))
}

pub fn load_inference(path: &Path) -> Result<InferenceSolution> {
    let f: InferenceFile = read_json(path)?;
    check_version(f.format_version)?;
    Ok(f.solution)
}

pub fn save_inference(path: &Path, sol: &InferenceSolution) -> Result<()> {
    write_json(
        path,
        &InferenceFile {
            format_version: FORMAT_VERSION,
            solution: sol.clone(),
        },
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct TrajectoryRow {
    step: usize,
    regime: String,
    unit: String,
    y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x: Option<f64>,
}

/// Writes one row per (step, unit). `units` defaults to `0..n`.
pub fn write_trajectory<W: Write>(out: W, traj: &Trajectory, units: Option<&[String]>) -> Result<()> {
    let n = traj.dim();
    let default: Vec<String>;
    let names = match units {
        Some(u) if u.len() == n => u,
        Some(u) => {
            return Err(Error::Dimension(format!("{} unit names for {n} units", u.len())));
        }
        None => {
            default = (0..n).map(|i| i.to_string()).collect();
            &default
        }
    };
    let with_x = traj.x.len() == traj.len();
    let mut w = csv::Writer::from_writer(out);
    for (k, y) in traj.y.iter().enumerate() {
        for i in 0..n {
            w.serialize(TrajectoryRow {
                step: k + 1,
                regime: traj.regimes[k].to_string(),
                unit: names[i].clone(),
                y: y[i],
                x: with_x.then(|| traj.x[k][i]),
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a long-format trajectory. Units keep their first-seen order, steps
/// must run `1..=T` without gaps and every step must carry every unit.
pub fn read_trajectory<R: Read>(input: R) -> Result<(Trajectory, Vec<String>)> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut units: Vec<String> = Vec::new();
    let mut cells: BTreeMap<usize, (Regime, BTreeMap<usize, (f64, Option<f64>)>)> = BTreeMap::new();
    for rec in rdr.deserialize::<TrajectoryRow>() {
        let rec = rec?;
        let regime: Regime = rec.regime.parse()?;
        let u = match units.iter().position(|n| *n == rec.unit) {
            Some(u) => u,
            None => {
                units.push(rec.unit.clone());
                units.len() - 1
            }
        };
        let entry = cells.entry(rec.step).or_insert_with(|| (regime, BTreeMap::new()));
        if entry.0 != regime {
            return Err(Error::Input(format!("step {} has conflicting regime labels", rec.step)));
        }
        if entry.1.insert(u, (rec.y, rec.x)).is_some() {
            return Err(Error::Input(format!("duplicate row for step {} unit {}", rec.step, rec.unit)));
        }
    }
    if cells.is_empty() {
        return Err(Error::Input("trajectory file has no rows".into()));
    }
    let n = units.len();
    let mut traj = Trajectory {
        x: Vec::new(),
        y: Vec::new(),
        regimes: Vec::new(),
        process_noise: None,
        observation_noise: None,
    };
    let mut has_x = true;
    for (expect, (step, (regime, row))) in (1..).zip(cells) {
        if step != expect {
            return Err(Error::Input(format!("steps must be consecutive from 1, found {step} after {}", expect - 1)));
        }
        if row.len() != n {
            return Err(Error::Input(format!("step {step} has {} of {n} units", row.len())));
        }
        traj.regimes.push(regime);
        traj.y.push(DVector::from_iterator(n, row.values().map(|v| v.0)));
        has_x &= row.values().all(|v| v.1.is_some());
        if has_x {
            traj.x.push(DVector::from_iterator(n, row.values().map(|v| v.1.unwrap_or(f64::NAN))));
        }
    }
    if !has_x {
        traj.x.clear();
    }
    Ok((traj, units))
}

pub fn save_trajectory(path: &Path, traj: &Trajectory, units: Option<&[String]>) -> Result<()> {
    write_trajectory(BufWriter::new(File::create(path)?), traj, units)
}

pub fn load_trajectory(path: &Path) -> Result<(Trajectory, Vec<String>)> {
    read_trajectory(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{simulate, Schedule};

    fn sys() -> SocialSystem {
        SocialSystem::new(
            1,
            DMatrix::from_row_slice(2, 2, &[0.2, 0.1, 0.15, 0.25]),
            DVector::from_row_slice(&[0.5, -0.4]),
            DVector::from_row_slice(&[0.1, 0.2]),
            DVector::from_row_slice(&[0.05, 0.1]),
            DVector::from_row_slice(&[0.01, 0.0]),
            NoiseSpec {
                sigma_p: 0.01,
                sigma_o: 0.02,
                mu_o: 0.0,
                seed: 3,
            },
        )
        .unwrap()
    }

    #[test]
    fn system_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sys.json");
        save_system(&path, &sys()).unwrap();
        assert_eq!(load_system(&path).unwrap(), sys());
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"format_version\": 1"));
    }

    #[test]
    fn estimation_json_is_row_major() {
        let est = EstimationResult {
            matrix_plus: DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]),
            matrix_minus: DMatrix::identity(2, 2),
            offset_plus: DVector::from_row_slice(&[0.1, 0.2]),
            offset_minus: DVector::from_row_slice(&[-0.1, -0.2]),
            gram_min_singular_plus: Some(0.5),
            gram_min_singular_minus: None,
        };
        let file = EstimationFile::from(&est);
        assert_eq!(file.matrix_plus, vec![1.0, 2.0, 3.0, 4.0]);
        let back: EstimationResult = file.try_into().unwrap();
        assert_eq!(back, est);
    }

    #[test]
    fn trajectory_csv_round_trip() {
        let traj = simulate(&sys(), &"-1:4,+1:3".parse::<Schedule>().unwrap(), &DVector::from_row_slice(&[0.3, -0.2])).unwrap();
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &traj, None).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("step,regime,unit,y,x\n1,-1,0,"));
        let (back, units) = read_trajectory(buf.as_slice()).unwrap();
        assert_eq!(units, vec!["0", "1"]);
        assert_eq!(back.regimes, traj.regimes);
        assert_eq!(back.y, traj.y);
        assert_eq!(back.x, traj.x);
    }

    #[test]
    fn observed_only_trajectory() {
        let text = "step,regime,unit,y\n1,+1,CA,0.1\n1,+1,NY,0.2\n2,-1,CA,0.3\n2,-1,NY,0.4\n";
        let (t, units) = read_trajectory(text.as_bytes()).unwrap();
        assert_eq!(units, vec!["CA", "NY"]);
        assert!(t.x.is_empty());
        assert_eq!(t.y[1], DVector::from_row_slice(&[0.3, 0.4]));
    }

    #[test]
    fn malformed_trajectories() {
        let gap = "step,regime,unit,y\n1,+1,a,0.1\n3,+1,a,0.2\n";
        assert!(read_trajectory(gap.as_bytes()).is_err());
        let missing = "step,regime,unit,y\n1,+1,a,0.1\n1,+1,b,0.1\n2,+1,a,0.2\n";
        assert!(read_trajectory(missing.as_bytes()).is_err());
        let label = "step,regime,unit,y\n1,0,a,0.1\n";
        assert!(read_trajectory(label.as_bytes()).is_err());
    }
}
