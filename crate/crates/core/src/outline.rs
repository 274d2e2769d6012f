//! Digitized closed outlines and their CSV file format.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Minimum number of distinct points in an outline.
pub const MIN_POINTS: usize = 8;

/// Header of the outline CSV format.
pub const OUTLINE_CSV_HEADER: [&str; 7] = [
    "specimen_id",
    "tooth_type",
    "tribe",
    "species",
    "point_index",
    "x",
    "y",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ToothType {
    LM1,
    LM2,
    LM3,
    UM1,
    UM2,
    UM3,
}

impl ToothType {
    pub const ALL: [ToothType; 6] = [
        ToothType::LM1,
        ToothType::LM2,
        ToothType::LM3,
        ToothType::UM1,
        ToothType::UM2,
        ToothType::UM3,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ToothType::LM1 => "LM1",
            ToothType::LM2 => "LM2",
            ToothType::LM3 => "LM3",
            ToothType::UM1 => "UM1",
            ToothType::UM2 => "UM2",
            ToothType::UM3 => "UM3",
        }
    }

    pub fn index(self) -> usize {
        ToothType::ALL.iter().position(|&t| t == self).unwrap()
    }
}

impl fmt::Display for ToothType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ToothType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ToothType::ALL
            .iter()
            .copied()
            .find(|t| t.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidOutline(format!("unknown tooth type {s:?}")))
    }
}

/// A closed outline of one specimen. The last point connects back to the first.
///
/// Construction validates the point set and normalizes the winding to
/// counterclockwise, keeping the first point in place.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outline {
    points: Vec<Point>,
    pub specimen_id: String,
    pub tooth_type: ToothType,
    pub tribe: Option<String>,
    pub species: Option<String>,
}

/// Twice the signed area of the closed polygon (positive when counterclockwise).
pub fn signed_area2(points: &[Point]) -> f64 {
    let n = points.len();
    (0..n)
        .map(|i| {
            let [x0, y0] = points[i];
            let [x1, y1] = points[(i + 1) % n];
            x0 * y1 - x1 * y0
        })
        .sum()
}

fn check_points(points: &[Point]) -> Result<()> {
    if let Some(i) = points.iter().position(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(Error::InvalidOutline(format!("point {i} is not finite")));
    }
    let distinct: HashSet<(u64, u64)> = points
        .iter()
        .map(|p| ((p[0] + 0.0).to_bits(), (p[1] + 0.0).to_bits()))
        .collect();
    if distinct.len() < MIN_POINTS {
        return Err(Error::InvalidOutline(format!(
            "{} distinct points, at least {MIN_POINTS} required",
            distinct.len()
        )));
    }
    let n = points.len();
    for i in 0..n {
        if points[i] == points[(i + 1) % n] {
            return Err(Error::DegenerateOutline(format!(
                "points {i} and {} coincide",
                (i + 1) % n
            )));
        }
    }
    Ok(())
}

impl Outline {
    pub fn new(
        points: Vec<Point>,
        specimen_id: impl Into<String>,
        tooth_type: ToothType,
        tribe: Option<String>,
        species: Option<String>,
    ) -> Result<Self> {
        check_points(&points)?;
        let area2 = signed_area2(&points);
        if area2 == 0.0 || !area2.is_finite() {
            return Err(Error::DegenerateOutline("zero enclosed area".into()));
        }
        let points = if area2 < 0.0 {
            let mut rev = Vec::with_capacity(points.len());
            rev.push(points[0]);
            rev.extend(points[1..].iter().rev());
            rev
        } else {
            points
        };
        Ok(Outline {
            points,
            specimen_id: specimen_id.into(),
            tooth_type,
            tribe,
            species,
        })
    }

    /// Unlabeled outline, for prediction inputs and tests.
    pub fn unlabeled(points: Vec<Point>, tooth_type: ToothType) -> Result<Self> {
        Outline::new(points, "", tooth_type, None, None)
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.tribe.is_some() && self.species.is_some()
    }
}

fn parse_err(path: &str, row: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        row,
        message: message.into(),
    }
}

fn optional(field: &str) -> Option<String> {
    let t = field.trim();
    (!t.is_empty()).then(|| t.to_string())
}

/// Reads outlines from CSV. `source` names the input in error messages.
pub fn read_outlines_from<R: Read>(reader: R, source: &str) -> Result<Vec<Outline>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != OUTLINE_CSV_HEADER {
        return Err(parse_err(
            source,
            1,
            format!("expected header {}", OUTLINE_CSV_HEADER.join(",")),
        ));
    }

    struct Pending {
        id: String,
        tooth: ToothType,
        tribe: Option<String>,
        species: Option<String>,
        points: Vec<Point>,
        last_index: u64,
        first_row: usize,
    }

    let mut seen: HashSet<String> = HashSet::new();
    let mut out = Vec::new();
    let mut pending: Option<Pending> = None;

    let finish = |p: Pending, out: &mut Vec<Outline>| -> Result<()> {
        let outline = Outline::new(p.points, p.id, p.tooth, p.tribe, p.species)
            .map_err(|e| parse_err(source, p.first_row, e.to_string()))?;
        out.push(outline);
        Ok(())
    };

    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec?;
        if rec.len() != 7 {
            return Err(parse_err(source, row, format!("expected 7 fields, got {}", rec.len())));
        }
        let id = rec[0].to_string();
        if id.is_empty() {
            return Err(parse_err(source, row, "empty specimen_id"));
        }
        let tooth: ToothType = rec[1].parse().map_err(|e: Error| parse_err(source, row, e.to_string()))?;
        let index: u64 = rec[4]
            .parse()
            .map_err(|_| parse_err(source, row, format!("bad point_index {:?}", &rec[4])))?;
        let x: f64 = rec[5]
            .parse()
            .map_err(|_| parse_err(source, row, format!("bad x {:?}", &rec[5])))?;
        let y: f64 = rec[6]
            .parse()
            .map_err(|_| parse_err(source, row, format!("bad y {:?}", &rec[6])))?;

        match pending.as_mut() {
            Some(p) if p.id == id => {
                if index <= p.last_index {
                    return Err(parse_err(source, row, "point_index must be strictly increasing"));
                }
                if tooth != p.tooth || optional(&rec[2]) != p.tribe || optional(&rec[3]) != p.species {
                    return Err(parse_err(source, row, "labels change within a specimen"));
                }
                p.last_index = index;
                p.points.push([x, y]);
            }
            _ => {
                if let Some(p) = pending.take() {
                    finish(p, &mut out)?;
                }
                if !seen.insert(id.clone()) {
                    return Err(parse_err(
                        source,
                        row,
                        format!("rows of specimen {id:?} are not contiguous"),
                    ));
                }
                if index != 0 {
                    return Err(parse_err(source, row, "point_index must start at 0"));
                }
                pending = Some(Pending {
                    id,
                    tooth,
                    tribe: optional(&rec[2]),
                    species: optional(&rec[3]),
                    points: vec![[x, y]],
                    last_index: 0,
                    first_row: row,
                });
            }
        }
    }
    if let Some(p) = pending.take() {
        finish(p, &mut out)?;
    }
    Ok(out)
}

pub fn read_outlines(path: &Path) -> Result<Vec<Outline>> {
    let file = std::fs::File::open(path).map_err(|e| e_with_path(e, path))?;
    read_outlines_from(file, &path.display().to_string())
}

fn e_with_path(e: std::io::Error, path: &Path) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

pub fn write_outlines_to<W: Write>(writer: W, outlines: &[Outline]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(OUTLINE_CSV_HEADER)?;
    for o in outlines {
        for (i, p) in o.points.iter().enumerate() {
            wtr.write_record([
                o.specimen_id.as_str(),
                o.tooth_type.as_str(),
                o.tribe.as_deref().unwrap_or(""),
                o.species.as_deref().unwrap_or(""),
                &i.to_string(),
                &p[0].to_string(),
                &p[1].to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_outlines(path: &Path, outlines: &[Outline]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| e_with_path(e, path))?;
    write_outlines_to(std::io::BufWriter::new(file), outlines)
}
