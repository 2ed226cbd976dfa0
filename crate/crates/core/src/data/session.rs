//! Line-delimited JSON session files.
//!
//! One session per line:
//! `{"session_id": "...", "fps": 25, "persons": [{"id": "...", "frames": [[[x, y] | null; 78]; L]}; 2]}`
//! with `1 ≤ L ≤ 150`. A person record may carry `"predicted": true` when it
//! holds forecast output rather than observations.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{pad_sequence, DataError, DyadSample, LandmarkFrame, FPS, N_LANDMARKS, SEQ_LEN};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub fps: u32,
    pub persons: Vec<PersonRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PersonRecord {
    pub id: String,
    /// `frames[t][landmark]`, `None` where the landmark is missing.
    pub frames: Vec<Vec<Option<[f64; 2]>>>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub predicted: bool,
}

impl PersonRecord {
    pub fn from_frames(id: impl Into<String>, frames: &[LandmarkFrame], predicted: bool) -> Self {
        Self {
            id: id.into(),
            frames: frames
                .iter()
                .map(|f| f.points().iter().map(|p| Some(*p)).collect())
                .collect(),
            predicted,
        }
    }
}

fn parse_err(record: usize, field: impl Into<String>, message: impl Into<String>) -> DataError {
    DataError::Parse {
        record,
        field: field.into(),
        message: message.into(),
    }
}

fn parse_point(v: &Value, record: usize, field: &str) -> Result<Option<[f64; 2]>, DataError> {
    match v {
        Value::Null => Ok(None),
        Value::Array(xy) if xy.len() == 2 => {
            let mut out = [0.0; 2];
            for (o, c) in out.iter_mut().zip(xy) {
                *o = c
                    .as_f64()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| parse_err(record, field, format!("expected a finite number, got {c}")))?;
            }
            Ok(Some(out))
        }
        other => Err(parse_err(record, field, format!("expected [x, y] or null, got {other}"))),
    }
}

fn parse_person(v: &Value, record: usize, p: usize) -> Result<PersonRecord, DataError> {
    let field = |name: &str| format!("persons[{p}].{name}");
    let obj = v
        .as_object()
        .ok_or_else(|| parse_err(record, format!("persons[{p}]"), "expected an object"))?;
    let id = obj
        .get("id")
        .and_then(Value::as_str)
        .ok_or_else(|| parse_err(record, field("id"), "missing or not a string"))?
        .to_string();
    let predicted = match obj.get("predicted") {
        None => false,
        Some(Value::Bool(b)) => *b,
        Some(_) => return Err(parse_err(record, field("predicted"), "expected a boolean")),
    };
    let frames_v = obj
        .get("frames")
        .and_then(Value::as_array)
        .ok_or_else(|| parse_err(record, field("frames"), "missing or not an array"))?;
    if frames_v.is_empty() || frames_v.len() > SEQ_LEN {
        return Err(parse_err(
            record,
            field("frames"),
            format!("{} frames, expected between 1 and {SEQ_LEN}", frames_v.len()),
        ));
    }
    let mut frames = Vec::with_capacity(frames_v.len());
    for (t, fv) in frames_v.iter().enumerate() {
        let f = format!("persons[{p}].frames[{t}]");
        let pts = fv
            .as_array()
            .ok_or_else(|| parse_err(record, f.clone(), "expected an array of landmarks"))?;
        if pts.len() != N_LANDMARKS {
            return Err(DataError::LandmarkCount {
                record,
                expected: N_LANDMARKS,
                found: pts.len(),
            });
        }
        let frame = pts
            .iter()
            .enumerate()
            .map(|(j, pv)| parse_point(pv, record, &format!("{f}[{j}]")))
            .collect::<Result<Vec<_>, _>>()?;
        frames.push(frame);
    }
    Ok(PersonRecord { id, frames, predicted })
}

fn parse_record(line: &str, record: usize) -> Result<Session, DataError> {
    let v: Value = serde_json::from_str(line).map_err(|e| parse_err(record, "<record>", e.to_string()))?;
    let obj = v
        .as_object()
        .ok_or_else(|| parse_err(record, "<record>", "expected a JSON object"))?;
    let session_id = obj
        .get("session_id")
        .and_then(Value::as_str)
        .ok_or_else(|| parse_err(record, "session_id", "missing or not a string"))?
        .to_string();
    let fps = obj
        .get("fps")
        .and_then(Value::as_u64)
        .ok_or_else(|| parse_err(record, "fps", "missing or not an integer"))?;
    if fps != u64::from(FPS) {
        return Err(parse_err(record, "fps", format!("unsupported frame rate {fps}, expected {FPS}")));
    }
    let persons_v = obj
        .get("persons")
        .and_then(Value::as_array)
        .ok_or_else(|| parse_err(record, "persons", "missing or not an array"))?;
    if persons_v.len() != 2 {
        return Err(parse_err(
            record,
            "persons",
            format!("expected 2 persons, found {}", persons_v.len()),
        ));
    }
    let persons = persons_v
        .iter()
        .enumerate()
        .map(|(p, pv)| parse_person(pv, record, p))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Session {
        session_id,
        fps: FPS,
        persons,
    })
}

/// Parses a session stream. Blank lines are skipped; record indices count
/// non-blank lines from zero.
pub fn parse_sessions<R: BufRead>(reader: R, path: &Path) -> Result<Vec<Session>, DataError> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = out.len();
        out.push(parse_record(&line, record)?);
    }
    Ok(out)
}

pub fn read_sessions(path: &Path) -> Result<Vec<Session>, DataError> {
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_sessions(BufReader::new(file), path)
}

pub fn write_sessions_to<W: Write>(mut w: W, sessions: &[Session]) -> std::io::Result<()> {
    for s in sessions {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn write_sessions(path: &Path, sessions: &[Session]) -> Result<(), DataError> {
    let io = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io)?;
    write_sessions_to(BufWriter::new(file), sessions).map_err(io)
}

/// Dense frames for one person: missing points take the same landmark's
/// value from the nearest earlier frame, else the nearest later one.
fn fill_missing(person: &PersonRecord, record: usize, p: usize) -> Result<Vec<LandmarkFrame>, DataError> {
    let len = person.frames.len();
    let mut frames = vec![LandmarkFrame::default(); len];
    for j in 0..N_LANDMARKS {
        let first = person.frames.iter().position(|f| f[j].is_some()).ok_or(DataError::MissingLandmark {
            record,
            person: p,
            landmark: j,
        })?;
        let mut last = person.frames[first][j].unwrap_or_default();
        for (t, f) in person.frames.iter().enumerate() {
            if let Some(pt) = f[j] {
                last = pt;
            }
            frames[t].points_mut()[j] = last;
        }
    }
    Ok(frames)
}

/// Both role assignments of one session: each person is once the target and
/// once the partner.
pub fn session_to_samples(session: &Session, record: usize) -> Result<Vec<DyadSample>, DataError> {
    if session.persons.len() != 2 {
        return Err(parse_err(record, "persons", "expected 2 persons"));
    }
    let seqs = session
        .persons
        .iter()
        .enumerate()
        .map(|(p, person)| pad_sequence(fill_missing(person, record, p)?))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(vec![
        DyadSample::new(seqs[0].clone(), seqs[1].clone())?,
        DyadSample::new(seqs[1].clone(), seqs[0].clone())?,
    ])
}

/// Reads a session file into raw (unnormalized) dyad samples, two per session.
pub fn load_sessions(path: &Path) -> Result<Vec<DyadSample>, DataError> {
    let sessions = read_sessions(path)?;
    let mut out = Vec::with_capacity(2 * sessions.len());
    for (i, s) in sessions.iter().enumerate() {
        out.extend(session_to_samples(s, i)?);
    }
    Ok(out)
}
