//! CSV ingestion of recorded trajectories and external predictions.
//!
//! Trajectory rows are `frame_id, agent_id, x, y`; prediction rows are
//! `t, tau, agent_id, x, y`. Both accept an optional header line.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AgentId, ExternalPredictions, Timestep, TrajectoryError, TrajectorySource};
use crate::geom::Point;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsvOptions {
    /// Multiplier applied to every coordinate (world units to grid cells).
    pub scale: f64,
    /// Keep every `frame_stride`-th frame counted from the first frame.
    pub frame_stride: i64,
    pub has_header: bool,
    /// Field separator; `b' '` or `b'\t'` for whitespace-separated exports.
    pub delimiter: u8,
    /// Added to every coordinate after scaling.
    pub offset: (f64, f64),
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            scale: 1.0,
            frame_stride: 1,
            has_header: false,
            delimiter: b',',
            offset: (0.0, 0.0),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> TrajectoryError {
    TrajectoryError::Io(format!("{}: {e}", path.display()))
}

fn read_rows<R: Read>(
    reader: R,
    opts: &CsvOptions,
    width: usize,
) -> Result<Vec<(u64, Vec<f64>)>, TrajectoryError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(opts.has_header)
        .delimiter(opts.delimiter)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| TrajectoryError::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        // Collapse runs of whitespace delimiters.
        let fields: Vec<&str> = record.iter().filter(|f| !f.is_empty()).collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != width {
            return Err(TrajectoryError::Parse {
                line,
                message: format!("expected {width} fields, found {}", fields.len()),
            });
        }
        let values = fields
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|e| TrajectoryError::Parse {
                    line,
                    message: format!("'{f}': {e}"),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(TrajectoryError::Parse {
                line,
                message: "non-finite value".into(),
            });
        }
        rows.push((line, values));
    }
    Ok(rows)
}

/// Parses trajectory rows from any reader.
pub fn read_trajectories<R: Read>(
    reader: R,
    opts: &CsvOptions,
) -> Result<TrajectorySource, TrajectoryError> {
    let rows = read_rows(reader, opts, 4)?;
    let stride = opts.frame_stride.max(1);
    let first = rows.iter().map(|(_, v)| v[0] as i64).min().unwrap_or(0);
    let mut tracks: BTreeMap<AgentId, Vec<(Timestep, Point)>> = BTreeMap::new();
    let mut last_frame: BTreeMap<AgentId, i64> = BTreeMap::new();
    for (line, v) in rows {
        let frame = v[0] as i64;
        if v[0].fract() != 0.0 || v[1].fract() != 0.0 || v[1] < 0.0 {
            return Err(TrajectoryError::Parse {
                line,
                message: "frame and agent ids must be nonnegative integers".into(),
            });
        }
        let agent = v[1] as AgentId;
        if let Some(previous) = last_frame.insert(agent, frame) {
            if frame <= previous {
                return Err(TrajectoryError::NonMonotoneFrames {
                    agent,
                    previous,
                    frame,
                });
            }
        }
        if (frame - first) % stride != 0 {
            continue;
        }
        let t = (frame - first) / stride;
        let track = tracks.entry(agent).or_default();
        let p = Point::new(
            v[2] * opts.scale + opts.offset.0,
            v[3] * opts.scale + opts.offset.1,
        );
        track.push((t, p));
    }
    tracks.retain(|_, t| !t.is_empty());
    let mut source = TrajectorySource::new(tracks)?;
    source.scale = opts.scale;
    Ok(source)
}

pub fn load_trajectories(
    path: impl AsRef<Path>,
    opts: &CsvOptions,
) -> Result<TrajectorySource, TrajectoryError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    read_trajectories(file, opts)
}

/// Writes `frame_id,agent_id,x,y` rows, frames in time order.
pub fn write_trajectories<W: Write>(
    source: &TrajectorySource,
    writer: W,
) -> Result<(), TrajectoryError> {
    let mut rows: Vec<(Timestep, AgentId, Point)> = source
        .tracks()
        .iter()
        .flat_map(|(&id, track)| track.iter().map(move |&(t, p)| (t, id, p)))
        .collect();
    rows.sort_by_key(|&(t, id, _)| (t, id));
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| TrajectoryError::Io(e.to_string());
    w.write_record(["frame_id", "agent_id", "x", "y"]).map_err(err)?;
    for (t, id, p) in rows {
        w.write_record([t.to_string(), id.to_string(), p.x.to_string(), p.y.to_string()])
            .map_err(err)?;
    }
    w.flush().map_err(|e| TrajectoryError::Io(e.to_string()))
}

/// Loads `t, tau, agent_id, x, y` rows. Coordinates use the same scale and
/// offset as the trajectory file; `t` is the subsampled timestep.
pub fn load_external_predictions(
    path: impl AsRef<Path>,
    opts: &CsvOptions,
) -> Result<ExternalPredictions, TrajectoryError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut ext = ExternalPredictions::default();
    for (line, v) in read_rows(file, opts, 5)? {
        if v[1] < 1.0 || v[1].fract() != 0.0 {
            return Err(TrajectoryError::Parse {
                line,
                message: format!("tau must be a positive integer, got {}", v[1]),
            });
        }
        ext.insert(
            v[0] as Timestep,
            v[1] as usize,
            v[2] as AgentId,
            Point::new(
                v[3] * opts.scale + opts.offset.0,
                v[4] * opts.scale + opts.offset.1,
            ),
        );
    }
    Ok(ext)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{synth_trajectories, SynthModel, SynthSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_rows_one_agent() {
        let src = read_trajectories("10,3,1.0,2.0\n20,3,1.5,2.5\n".as_bytes(), &CsvOptions::default()).unwrap();
        assert_eq!(src.num_agents(), 1);
        assert_eq!(src.tracks()[&3].len(), 2);
        assert_eq!(src.tracks()[&3][1], (10, Point::new(1.5, 2.5)));
    }

    #[test]
    fn scale_and_stride() {
        let text = "frame,agent,x,y\n0,1,2.0,4.0\n10,1,3.0,5.0\n20,1,4.0,6.0\n";
        let opts = CsvOptions {
            scale: 0.5,
            frame_stride: 20,
            has_header: true,
            ..CsvOptions::default()
        };
        let src = read_trajectories(text.as_bytes(), &opts).unwrap();
        assert_eq!(
            src.tracks()[&1],
            vec![(0, Point::new(1.0, 2.0)), (1, Point::new(2.0, 3.0))]
        );
        assert_eq!(src.agents_at(1).unwrap().get(1), Some(Point::new(2.0, 3.0)));
    }

    #[test]
    fn whitespace_separated() {
        let opts = CsvOptions {
            delimiter: b' ',
            ..CsvOptions::default()
        };
        let src = read_trajectories("0   1  0.5 0.25\n1 1 0.75   0.5\n".as_bytes(), &opts).unwrap();
        assert_eq!(src.tracks()[&1].len(), 2);
    }

    #[test]
    fn parse_error_has_line() {
        let err = read_trajectories("0,1,0,0\n1,1,zero,0\n".as_bytes(), &CsvOptions::default()).unwrap_err();
        assert!(matches!(err, TrajectoryError::Parse { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn non_monotone_frames() {
        let err = read_trajectories("5,1,0,0\n3,1,1,1\n".as_bytes(), &CsvOptions::default()).unwrap_err();
        assert!(matches!(err, TrajectoryError::NonMonotoneFrames { agent: 1, .. }));
    }

    #[test]
    fn synthetic_round_trip() {
        let spec = SynthSpec {
            model: SynthModel::RandomWalk { step_sigma: 0.3 },
            agents: 4,
            length: 25,
            ..SynthSpec::default()
        };
        let src = synth_trajectories(&spec, &mut ChaCha8Rng::seed_from_u64(11));
        let mut buf = Vec::new();
        write_trajectories(&src, &mut buf).unwrap();
        let opts = CsvOptions {
            has_header: true,
            ..CsvOptions::default()
        };
        let back = read_trajectories(buf.as_slice(), &opts).unwrap();
        assert_eq!(back.tracks(), src.tracks());
    }

    #[test]
    fn agents_match_raw_rows_after_scaling() {
        let text = "0,1,2.0,4.0\n0,2,6.0,8.0\n1,2,7.0,9.0\n";
        let opts = CsvOptions {
            scale: 0.25,
            ..CsvOptions::default()
        };
        let src = read_trajectories(text.as_bytes(), &opts).unwrap();
        for row in text.lines() {
            let v: Vec<f64> = row.split(',').map(|f| f.parse().unwrap()).collect();
            let x = src.agents_at(v[0] as i64).unwrap();
            assert_eq!(x.get(v[1] as u64), Some(Point::new(v[2] * 0.25, v[3] * 0.25)));
        }
    }
}
