//! Model JSON and observation CSV formats.
//!
//! States are numbered from 1 in CSV files and from 0 in memory.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Family, ManifoldKind, ManifoldPoint};
use crate::hmm::{Emission, HmmParams, MStepFlag};
use crate::mrf::{FieldParams, GridGraph};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmissionRepr {
    pub ybar: ManifoldPoint,
    pub sigma: f64,
}

/// On-disk model; the optional blocks carry fit results and field potentials.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub family: String,
    pub states: usize,
    #[serde(rename = "P", default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi1: Option<Vec<f64>>,
    pub emissions: Vec<EmissionRepr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<[usize; 2]>,
    #[serde(rename = "V", default, skip_serializing_if = "Option::is_none")]
    pub v: Option<Vec<f64>>,
    #[serde(rename = "J", default, skip_serializing_if = "Option::is_none")]
    pub j: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loglik_trace: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flags: Option<Vec<FlagRecord>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlagRecord {
    pub iteration: usize,
    pub message: String,
}

impl FlagRecord {
    pub fn new(iteration: usize, flag: &MStepFlag) -> Self {
        FlagRecord {
            iteration,
            message: flag.to_string(),
        }
    }
}

fn emissions_repr(emissions: &[Emission]) -> Vec<EmissionRepr> {
    emissions
        .iter()
        .map(|e| EmissionRepr {
            ybar: e.ybar.clone(),
            sigma: e.sigma,
        })
        .collect()
}

impl ModelFile {
    pub fn from_hmm(params: &HmmParams) -> Self {
        ModelFile {
            family: params.family.tag().to_string(),
            states: params.n_states(),
            p: Some(params.p.clone()),
            pi1: Some(params.pi1.clone()),
            emissions: emissions_repr(&params.emissions),
            grid: None,
            v: None,
            j: None,
            loglik_trace: None,
            iterations: None,
            converged: None,
            flags: None,
        }
    }

    pub fn from_field(field: &FieldParams, grid: &GridGraph) -> Self {
        ModelFile {
            family: field.family.tag().to_string(),
            states: field.n_states(),
            p: None,
            pi1: None,
            emissions: emissions_repr(&field.emissions),
            grid: Some([grid.width, grid.height]),
            v: Some(field.v.clone()),
            j: Some(field.j.clone()),
            loglik_trace: None,
            iterations: None,
            converged: None,
            flags: None,
        }
    }

    fn family(&self) -> Result<Family> {
        let dim = self.emissions.first().map(|e| e.ybar.dim()).unwrap_or(0);
        let family = Family::from_tag(&self.family, dim)?;
        if self.states != self.emissions.len() {
            return Err(Error::InvalidParams(format!(
                "'states' is {} but {} emissions are listed",
                self.states,
                self.emissions.len()
            )));
        }
        Ok(family)
    }

    fn emissions(&self) -> Vec<Emission> {
        self.emissions
            .iter()
            .map(|e| Emission {
                ybar: e.ybar.clone(),
                sigma: e.sigma,
            })
            .collect()
    }

    pub fn to_hmm(&self) -> Result<HmmParams> {
        let family = self.family()?;
        let p = self
            .p
            .clone()
            .ok_or_else(|| Error::InvalidParams("model has no transition matrix 'P'".into()))?;
        let pi1 = self
            .pi1
            .clone()
            .ok_or_else(|| Error::InvalidParams("model has no initial law 'pi1'".into()))?;
        HmmParams::new(family, p, pi1, self.emissions())
    }

    pub fn to_field(&self) -> Result<(FieldParams, GridGraph)> {
        let family = self.family()?;
        let [w, h] = self
            .grid
            .ok_or_else(|| Error::InvalidParams("field model has no 'grid'".into()))?;
        let v = self
            .v
            .clone()
            .ok_or_else(|| Error::InvalidParams("field model has no 'V'".into()))?;
        let j = self
            .j
            .clone()
            .ok_or_else(|| Error::InvalidParams("field model has no 'J'".into()))?;
        Ok((
            FieldParams::new(family, v, j, self.emissions())?,
            GridGraph::new(w, h)?,
        ))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })
    }
}

/// Column names for the coordinates of a point.
pub fn coordinate_header(kind: ManifoldKind, dim: usize) -> Vec<String> {
    match kind {
        ManifoldKind::Disk => vec!["re".into(), "im".into()],
        ManifoldKind::Sphere => (0..dim).map(|i| format!("c{i}")).collect(),
        ManifoldKind::Spd => (0..dim)
            .flat_map(|i| (0..dim).map(move |j| format!("m{i}{j}")))
            .collect(),
    }
}

fn infer_kind(cols: &[String]) -> Result<(ManifoldKind, usize)> {
    let bad = || Error::Parse {
        line: 1,
        message: format!("unrecognized coordinate columns {cols:?}"),
    };
    if cols == ["re", "im"] {
        return Ok((ManifoldKind::Disk, 2));
    }
    if cols.len() >= 2 && coordinate_header(ManifoldKind::Sphere, cols.len()) == cols {
        return Ok((ManifoldKind::Sphere, cols.len()));
    }
    let d = (cols.len() as f64).sqrt().round() as usize;
    if d >= 1 && d * d == cols.len() && coordinate_header(ManifoldKind::Spd, d) == cols {
        return Ok((ManifoldKind::Spd, d));
    }
    Err(bad())
}

/// Observations with optional ground-truth states, indexed by time or by
/// grid site.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationTable {
    pub kind: ManifoldKind,
    pub dim: usize,
    /// Grid coordinates (x, y) for field data; `None` for sequences.
    pub sites: Option<Vec<(usize, usize)>>,
    pub states: Option<Vec<usize>>,
    pub obs: Vec<ManifoldPoint>,
}

pub fn write_observations<W: Write>(
    out: W,
    states: Option<&[usize]>,
    obs: &[ManifoldPoint],
) -> Result<()> {
    write_table(out, None, states, obs)
}

pub fn write_field_observations<W: Write>(
    out: W,
    grid: &GridGraph,
    states: Option<&[usize]>,
    obs: &[ManifoldPoint],
) -> Result<()> {
    write_table(out, Some(grid), states, obs)
}

fn write_table<W: Write>(
    out: W,
    grid: Option<&GridGraph>,
    states: Option<&[usize]>,
    obs: &[ManifoldPoint],
) -> Result<()> {
    let first = obs
        .first()
        .ok_or_else(|| Error::InvalidParams("no observations to write".into()))?;
    if let Some(s) = states {
        if s.len() != obs.len() {
            return Err(Error::LengthMismatch { expected: obs.len(), found: s.len() });
        }
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = match grid {
        Some(_) => vec!["x".into(), "y".into()],
        None => vec!["t".into()],
    };
    if states.is_some() {
        header.push("state".into());
    }
    header.extend(coordinate_header(first.kind(), first.dim()));
    w.write_record(&header).map_err(csv_error)?;
    for (i, y) in obs.iter().enumerate() {
        let mut rec: Vec<String> = match grid {
            Some(g) => {
                let (x, yy) = g.coords(i);
                vec![x.to_string(), yy.to_string()]
            }
            None => vec![(i + 1).to_string()],
        };
        if let Some(s) = states {
            rec.push((s[i] + 1).to_string());
        }
        rec.extend(y.coords().iter().map(|c| c.to_string()));
        w.write_record(&rec).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            line,
            message: format!("{other:?}"),
        },
    }
}

/// Reads a sequence or field table; the manifold is inferred from the
/// coordinate columns.
pub fn read_observations<R: Read>(input: R) -> Result<ObservationTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header: Vec<String> = rdr
        .headers()
        .map_err(csv_error)?
        .iter()
        .map(str::to_string)
        .collect();
    let (field, mut k) = match header.first().map(String::as_str) {
        Some("t") => (false, 1),
        Some("x") if header.get(1).map(String::as_str) == Some("y") => (true, 2),
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: "header must start with 't' or 'x,y'".into(),
            })
        }
    };
    let has_state = header.get(k).map(String::as_str) == Some("state");
    if has_state {
        k += 1;
    }
    let (kind, dim) = infer_kind(&header[k..])?;
    let mut sites = field.then(Vec::new);
    let mut states = has_state.then(Vec::new);
    let mut obs = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let perr = |message: String| Error::Parse { line, message };
        let int = |i: usize| -> Result<usize> {
            rec.get(i)
                .unwrap_or("")
                .parse::<usize>()
                .map_err(|e| perr(format!("column {}: {e}", header[i])))
        };
        if let Some(s) = sites.as_mut() {
            s.push((int(0)?, int(1)?));
        }
        if let Some(s) = states.as_mut() {
            let v = int(k - 1)?;
            if v == 0 {
                return Err(perr("states are numbered from 1".into()));
            }
            s.push(v - 1);
        }
        let coords = (k..rec.len())
            .map(|i| {
                rec[i]
                    .parse::<f64>()
                    .map_err(|e| perr(format!("column {}: {e}", header[i])))
            })
            .collect::<Result<Vec<_>>>()?;
        let y = ManifoldPoint::from_coords(kind, dim, &coords).map_err(|e| perr(e.to_string()))?;
        obs.push(y);
    }
    if obs.is_empty() {
        return Err(Error::Parse {
            line: 2,
            message: "no observations".into(),
        });
    }
    Ok(ObservationTable {
        kind,
        dim,
        sites,
        states,
        obs,
    })
}

impl ObservationTable {
    /// Observations reordered by site index for a grid.
    pub fn field_observations(&self, grid: &GridGraph) -> Result<Vec<ManifoldPoint>> {
        let sites = self
            .sites
            .as_ref()
            .ok_or_else(|| Error::InvalidParams("observations are not indexed by grid site".into()))?;
        let mut out: Vec<Option<ManifoldPoint>> = vec![None; grid.sites()];
        for (&(x, y), p) in sites.iter().zip(&self.obs) {
            if x >= grid.width || y >= grid.height {
                return Err(Error::InvalidParams(format!("site ({x}, {y}) is outside the grid")));
            }
            out[y * grid.width + x] = Some(p.clone());
        }
        out.into_iter()
            .enumerate()
            .map(|(z, p)| {
                p.ok_or_else(|| {
                    let (x, y) = grid.coords(z);
                    Error::InvalidParams(format!("no observation for site ({x}, {y})"))
                })
            })
            .collect()
    }
}
