//! Ideology panels built from member-level score files and a table of
//! presidential parties.
//!
//! Two member layouts are accepted:
//!
//! - tidy: columns `congress,unit,score`;
//! - raw Voteview member export: `congress`, `chamber`, `state_abbrev` and
//!   `nokken_poole_dim1` are read, every other column is ignored. Rows are
//!   kept only for the selected chamber (Senate by default) and rows with an
//!   empty score are skipped.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Regime, Trajectory};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MemberFormat {
    Tidy,
    Voteview { chamber: Option<String> },
}

impl MemberFormat {
    pub fn voteview_senate() -> Self {
        MemberFormat::Voteview {
            chamber: Some("Senate".into()),
        }
    }
}

#[derive(Debug, Deserialize)]
struct TidyRow {
    congress: i64,
    unit: String,
    score: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct VoteviewRow {
    congress: i64,
    chamber: String,
    state_abbrev: String,
    nokken_poole_dim1: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct PresidentRow {
    congress: i64,
    party: String,
}

/// Maps a party token to a regime: Republican is `+1`, Democratic `-1`.
pub fn party_regime(token: &str) -> Result<Regime> {
    match token.trim().to_ascii_lowercase().as_str() {
        "r" | "rep" | "republican" | "200" | "+1" | "1" => Ok(Regime::Plus),
        "d" | "dem" | "democrat" | "democratic" | "100" | "-1" => Ok(Regime::Minus),
        other => Err(Error::Input(format!("unknown party token {other:?}"))),
    }
}

/// Unit-by-congress matrix of ideology scores with per-congress regime labels.
#[derive(Debug, Clone, PartialEq)]
pub struct IdeologyPanel {
    pub units: Vec<String>,
    pub congresses: Vec<i64>,
    /// `values[(unit, congress)]`, each in `[-1, 1]`.
    pub values: DMatrix<f64>,
    pub regimes: Vec<Regime>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IngestReport {
    /// Units missing at least one congress in the range.
    pub dropped_units: Vec<(String, Vec<i64>)>,
    /// Unit-congress means that fell outside `[-1, 1]` and were clamped.
    pub clamped: usize,
    /// Member rows without a score or outside the chamber filter.
    pub skipped_rows: usize,
}

fn read_members<R: Read>(input: R, format: &MemberFormat, skipped: &mut usize) -> Result<Vec<(i64, String, f64)>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    match format {
        MemberFormat::Tidy => {
            for rec in rdr.deserialize::<TidyRow>() {
                let rec = rec?;
                match rec.score {
                    Some(s) => out.push((rec.congress, rec.unit, s)),
                    None => *skipped += 1,
                }
            }
        }
        MemberFormat::Voteview { chamber } => {
            for rec in rdr.deserialize::<VoteviewRow>() {
                let rec = rec?;
                let keep = chamber.as_ref().is_none_or(|c| c.eq_ignore_ascii_case(&rec.chamber));
                match (keep, rec.nokken_poole_dim1) {
                    (true, Some(s)) => out.push((rec.congress, rec.state_abbrev, s)),
                    _ => *skipped += 1,
                }
            }
        }
    }
    Ok(out)
}

/// Reads the president table into `congress -> regime`.
pub fn read_presidents<R: Read>(input: R) -> Result<BTreeMap<i64, Regime>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut out = BTreeMap::new();
    for rec in rdr.deserialize::<PresidentRow>() {
        let rec = rec?;
        let regime = party_regime(&rec.party)?;
        if out.insert(rec.congress, regime).is_some_and(|r| r != regime) {
            return Err(Error::Input(format!("congress {} has two presidential parties", rec.congress)));
        }
    }
    Ok(out)
}

/// Averages member scores per unit and congress over `range` (inclusive),
/// clamps to `[-1, 1]` and drops units with any missing congress.
pub fn ingest_ideology<M: Read, P: Read>(
    members: M,
    presidents: P,
    format: &MemberFormat,
    range: (i64, i64),
) -> Result<(IdeologyPanel, IngestReport)> {
    let (first, last) = range;
    if first > last {
        return Err(Error::Input(format!("empty congress range {first}..={last}")));
    }
    let mut report = IngestReport::default();
    let rows = read_members(members, format, &mut report.skipped_rows)?;
    let parties = read_presidents(presidents)?;

    let congresses: Vec<i64> = (first..=last).collect();
    let regimes = congresses
        .iter()
        .map(|c| {
            parties
                .get(c)
                .copied()
                .ok_or_else(|| Error::Input(format!("no presidential party for congress {c}")))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut sums: BTreeMap<String, BTreeMap<i64, (f64, usize)>> = BTreeMap::new();
    for (congress, unit, score) in rows {
        if !(first..=last).contains(&congress) {
            continue;
        }
        if !score.is_finite() {
            return Err(Error::Input(format!("non-finite score for {unit} in congress {congress}")));
        }
        let cell = sums.entry(unit).or_default().entry(congress).or_insert((0.0, 0));
        cell.0 += score;
        cell.1 += 1;
    }

    let mut units = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for (unit, cells) in sums {
        let missing: Vec<i64> = congresses.iter().copied().filter(|c| !cells.contains_key(c)).collect();
        if !missing.is_empty() {
            report.dropped_units.push((unit, missing));
            continue;
        }
        let row = congresses
            .iter()
            .map(|c| {
                let (sum, count) = cells[c];
                let mean = sum / count as f64;
                if mean.abs() > 1.0 {
                    report.clamped += 1;
                }
                mean.clamp(-1.0, 1.0)
            })
            .collect();
        units.push(unit);
        columns.push(row);
    }
    if units.is_empty() {
        return Err(Error::Input(format!("no unit has scores for every congress in {first}..={last}")));
    }
    let values = DMatrix::from_fn(units.len(), congresses.len(), |u, c| columns[u][c]);
    Ok((
        IdeologyPanel {
            units,
            congresses,
            values,
            regimes,
        },
        report,
    ))
}

impl IdeologyPanel {
    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    fn column_of(&self, congress: i64) -> Result<usize> {
        self.congresses
            .iter()
            .position(|&c| c == congress)
            .ok_or_else(|| Error::Input(format!("congress {congress} is not in the panel")))
    }

    /// Congress columns `range` (inclusive).
    pub fn restrict(&self, range: (i64, i64)) -> Result<IdeologyPanel> {
        if range.0 > range.1 {
            return Err(Error::Input(format!("empty congress range {}..={}", range.0, range.1)));
        }
        let a = self.column_of(range.0)?;
        let b = self.column_of(range.1)?;
        Ok(IdeologyPanel {
            units: self.units.clone(),
            congresses: self.congresses[a..=b].to_vec(),
            values: self.values.columns(a, b - a + 1).into_owned(),
            regimes: self.regimes[a..=b].to_vec(),
        })
    }

    /// Keeps the listed units in the given order.
    pub fn select_units(&self, units: &[String]) -> Result<IdeologyPanel> {
        let idx = units
            .iter()
            .map(|u| {
                self.units
                    .iter()
                    .position(|x| x == u)
                    .ok_or_else(|| Error::Input(format!("unit {u} is not in the panel")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(IdeologyPanel {
            units: units.to_vec(),
            congresses: self.congresses.clone(),
            values: self.values.select_rows(&idx),
            regimes: self.regimes.clone(),
        })
    }

    /// Observations as a trajectory; step 1 is the first congress.
    pub fn to_trajectory(&self) -> Trajectory {
        Trajectory {
            x: Vec::new(),
            y: self.values.column_iter().map(|c| c.into_owned()).collect(),
            regimes: self.regimes.clone(),
            process_noise: None,
            observation_noise: None,
        }
    }

    pub fn observation(&self, congress: i64) -> Result<DVector<f64>> {
        Ok(self.values.column(self.column_of(congress)?).into_owned())
    }

    pub fn regime(&self, congress: i64) -> Result<Regime> {
        Ok(self.regimes[self.column_of(congress)?])
    }

    /// Long CSV `unit,congress,regime,value`, units then congresses in panel order.
    pub fn export<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["unit", "congress", "regime", "value"])?;
        for (u, unit) in self.units.iter().enumerate() {
            for (c, congress) in self.congresses.iter().enumerate() {
                w.write_record([
                    unit.clone(),
                    congress.to_string(),
                    self.regimes[c].to_string(),
                    format!("{:.17e}", self.values[(u, c)]),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PRES: &str = "congress,party\n40,R\n41,R\n42,D\n";

    #[test]
    fn members_are_averaged_per_unit() {
        let members = "congress,unit,score\n40,CA,0.2\n40,CA,0.4\n41,CA,0.1\n42,CA,0.0\n";
        let (panel, _) = ingest_ideology(members.as_bytes(), PRES.as_bytes(), &MemberFormat::Tidy, (40, 42)).unwrap();
        assert!((panel.values[(0, 0)] - 0.3).abs() < 1e-15);
        assert_eq!(panel.regimes, vec![Regime::Plus, Regime::Plus, Regime::Minus]);
    }

    #[test]
    fn out_of_range_scores_are_clamped() {
        let members = "congress,unit,score\n40,TX,1.3\n41,TX,0.1\n42,TX,-0.2\n";
        let (panel, report) = ingest_ideology(members.as_bytes(), PRES.as_bytes(), &MemberFormat::Tidy, (40, 42)).unwrap();
        assert_eq!(panel.values[(0, 0)], 1.0);
        assert_eq!(report.clamped, 1);
    }

    #[test]
    fn units_with_gaps_are_dropped() {
        let members = "congress,unit,score\n40,CA,0.1\n41,CA,0.1\n42,CA,0.1\n40,NY,0.2\n42,NY,0.3\n";
        let (panel, report) = ingest_ideology(members.as_bytes(), PRES.as_bytes(), &MemberFormat::Tidy, (40, 42)).unwrap();
        assert_eq!(panel.units, vec!["CA"]);
        assert_eq!(report.dropped_units, vec![("NY".to_string(), vec![41])]);
    }

    #[test]
    fn voteview_columns_and_chamber_filter() {
        let members = "congress,chamber,icpsr,state_abbrev,bioname,nokken_poole_dim1\n\
                       40,Senate,1,OH,A,0.5\n40,House,2,OH,B,-0.9\n41,Senate,1,OH,A,\n41,Senate,3,OH,C,0.3\n\
                       42,Senate,3,OH,C,0.1\n";
        let (panel, report) = ingest_ideology(
            members.as_bytes(),
            PRES.as_bytes(),
            &MemberFormat::voteview_senate(),
            (40, 42),
        )
        .unwrap();
        assert_eq!(panel.units, vec!["OH"]);
        assert_eq!(panel.values.row(0).iter().copied().collect::<Vec<_>>(), vec![0.5, 0.3, 0.1]);
        assert_eq!(report.skipped_rows, 2);
    }

    #[test]
    fn bad_inputs() {
        let members = "congress,unit,score\n40,CA,0.1\n";
        assert!(ingest_ideology(members.as_bytes(), PRES.as_bytes(), &MemberFormat::Tidy, (42, 40)).is_err());
        let bad_party = "congress,party\n40,Whig\n";
        assert!(ingest_ideology(members.as_bytes(), bad_party.as_bytes(), &MemberFormat::Tidy, (40, 40)).is_err());
        assert!(ingest_ideology("congress,unit\n40,CA\n".as_bytes(), PRES.as_bytes(), &MemberFormat::Tidy, (40, 40)).is_err());
    }

    #[test]
    fn export_is_deterministic() {
        let members = "congress,unit,score\n40,CA,0.1\n41,CA,0.2\n42,CA,0.3\n40,AZ,0.0\n41,AZ,-0.1\n42,AZ,0.4\n";
        let run = || {
            let (panel, _) = ingest_ideology(members.as_bytes(), PRES.as_bytes(), &MemberFormat::Tidy, (40, 42)).unwrap();
            let mut buf = Vec::new();
            panel.export(&mut buf).unwrap();
            buf
        };
        let a = run();
        assert_eq!(a, run());
        assert!(String::from_utf8(a).unwrap().starts_with("unit,congress,regime,value\nAZ,40,+1,"));
    }
}
