//! Argoverse-style trajectory CSVs: one row per (timestamp, track) with
//! columns `TIMESTAMP, TRACK_ID, OBJECT_TYPE, X, Y, CITY_NAME`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::lanes::LaneGraph;
use crate::trajectory::{AgentId, AgentTracks, Scene, TrajKind, TrajPoint, Trajectory, PAST_LEN, FUTURE_LEN, SAMPLE_DT};

/// Allowed deviation of a sampling step from 0.1 s.
pub const STEP_TOLERANCE_S: f64 = 0.010;

const COLUMNS: [&str; 6] = ["TIMESTAMP", "TRACK_ID", "OBJECT_TYPE", "X", "Y", "CITY_NAME"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedRow {
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvScene {
    pub scene: Scene,
    pub city: Option<String>,
    pub rejects: Vec<RejectedRow>,
}

struct Row {
    ts: f64,
    track: String,
    pos: Vec2,
}

fn field<'a>(rec: &'a csv::ByteRecord, idx: usize, name: &str) -> std::result::Result<&'a str, String> {
    let raw = rec.get(idx).ok_or_else(|| format!("missing {name}"))?;
    std::str::from_utf8(raw).map(str::trim).map_err(|_| format!("{name} is not UTF-8"))
}

fn number(rec: &csv::ByteRecord, idx: usize, name: &str) -> std::result::Result<f64, String> {
    let v: f64 = field(rec, idx, name)?.parse().map_err(|_| format!("{name} is not a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{name} is not finite"))
    }
}

/// Longest run of consecutive indices in `points` (sorted by index) that
/// satisfies `keep_last`: the suffix for past tracks, the prefix otherwise.
fn contiguous(points: &[TrajPoint], keep_last: bool) -> Vec<TrajPoint> {
    if points.is_empty() {
        return Vec::new();
    }
    if keep_last {
        let mut k = points.len() - 1;
        while k > 0 && points[k - 1].t_index + 1 == points[k].t_index {
            k -= 1;
        }
        points[k..].to_vec()
    } else {
        let mut k = 1;
        while k < points.len() && points[k - 1].t_index + 1 == points[k].t_index {
            k += 1;
        }
        points[..k].to_vec()
    }
}

/// Parses one CSV. Timestamps are ranked across the whole file; the first
/// 20 distinct instants form the past (`t_index` -19..=0), the next 30 the
/// future. Rows that cannot be parsed are returned as rejects.
pub fn parse_trajectory_reader<R: Read>(scene_id: &str, input: R, lanes: LaneGraph) -> Result<CsvScene> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).has_headers(true).from_reader(input);
    let headers = match reader.byte_headers() {
        Ok(h) => h.clone(),
        Err(e) => match e.into_kind() {
            csv::ErrorKind::Io(e) => return Err(Error::Io(e)),
            _ => csv::ByteRecord::new(),
        },
    };
    let mut idx = [0usize; 6];
    for (slot, name) in idx.iter_mut().zip(COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| std::str::from_utf8(h).map(str::trim) == Ok(name))
            .ok_or(Error::MissingColumn(name))?;
    }
    let [i_ts, i_track, i_type, i_x, i_y, i_city] = idx;

    let mut rows = Vec::new();
    let mut rejects = Vec::new();
    let mut target: Option<String> = None;
    let mut city: Option<String> = None;
    let mut rec = csv::ByteRecord::new();
    loop {
        let line = reader.position().line();
        match reader.read_byte_record(&mut rec) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                let reason = e.to_string();
                match e.into_kind() {
                    csv::ErrorKind::Io(e) => return Err(Error::Io(e)),
                    _ => {
                        rejects.push(RejectedRow { line, reason });
                        continue;
                    }
                }
            }
        }
        let line = rec.position().map_or(line, |p| p.line());
        let parsed = (|| {
            let ts = number(&rec, i_ts, "TIMESTAMP")?;
            let track = field(&rec, i_track, "TRACK_ID")?;
            if track.is_empty() {
                return Err("empty TRACK_ID".to_string());
            }
            let kind = field(&rec, i_type, "OBJECT_TYPE")?;
            let x = number(&rec, i_x, "X")?;
            let y = number(&rec, i_y, "Y")?;
            let c = field(&rec, i_city, "CITY_NAME")?;
            Ok((Row { ts, track: track.to_string(), pos: Vec2::new(x, y) }, kind == "AGENT", c.to_string()))
        })();
        match parsed {
            Ok((row, is_agent, c)) => {
                if is_agent && target.is_none() {
                    target = Some(row.track.clone());
                }
                city.get_or_insert(c);
                rows.push(row);
            }
            Err(reason) => rejects.push(RejectedRow { line, reason }),
        }
    }
    let target = target.ok_or(Error::NoTargetAgent)?;

    // Per-track order must follow file order.
    let mut last_ts: BTreeMap<&str, f64> = BTreeMap::new();
    for r in &rows {
        if let Some(prev) = last_ts.insert(&r.track, r.ts) {
            if r.ts <= prev {
                return Err(Error::NonMonotonicTimestamps(r.track.clone()));
            }
        }
    }

    let mut instants: Vec<f64> = rows.iter().map(|r| r.ts).collect();
    instants.sort_by(f64::total_cmp);
    instants.dedup();
    instants.truncate(PAST_LEN + FUTURE_LEN);
    for (rank, w) in instants.windows(2).enumerate() {
        let step = w[1] - w[0];
        if (step - SAMPLE_DT).abs() > STEP_TOLERANCE_S + 1e-9 {
            return Err(Error::IrregularSampling { rank: rank + 1, step_s: step });
        }
    }

    let mut tracks: BTreeMap<String, Vec<TrajPoint>> = BTreeMap::new();
    for r in &rows {
        let Ok(rank) = instants.binary_search_by(|t| t.total_cmp(&r.ts)) else { continue };
        let t_index = rank as i32 + 1 - PAST_LEN as i32;
        tracks.entry(r.track.clone()).or_default().push(TrajPoint { x: r.pos.x, y: r.pos.y, t_index });
    }

    let mut agents = Vec::with_capacity(tracks.len());
    for (id, points) in tracks {
        let split = points.partition_point(|p| p.t_index <= 0);
        let id = AgentId::new(id);
        let past = contiguous(&points[..split], true);
        let future = contiguous(&points[split..], false);
        if id.0 == target && past.len() < 2 {
            return Err(Error::TrajectoryTooShort { needed: 2, got: past.len() });
        }
        agents.push(AgentTracks::new(
            Trajectory::from_points(id.clone(), TrajKind::Past, past)?,
            Trajectory::from_points(id, TrajKind::Future, future)?,
        )?);
    }
    let scene = Scene::new(scene_id, AgentId::new(target), agents, lanes)?;
    Ok(CsvScene { scene, city, rejects })
}

/// Reads `path`, plus `<stem>.lanes.json` next to it when present.
pub fn parse_trajectory_csv(path: &Path) -> Result<CsvScene> {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scene").to_string();
    let lane_path = path.with_file_name(format!("{stem}.lanes.json"));
    let lanes = if lane_path.exists() {
        super::records::read_lane_graph(&lane_path)?
    } else {
        LaneGraph::default()
    };
    parse_trajectory_reader(&stem, File::open(path)?, lanes)
}

/// Renders a scene back into the CSV layout, starting at epoch `t0` seconds.
pub fn scene_to_csv(scene: &Scene, t0: f64, city: &str) -> String {
    let mut rows: Vec<(i32, &AgentId, Vec2)> = Vec::new();
    for (id, a) in &scene.agents {
        for p in a.past.points().iter().chain(a.future.points()) {
            rows.push((p.t_index, id, p.pos()));
        }
    }
    rows.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    let mut out = String::from("TIMESTAMP,TRACK_ID,OBJECT_TYPE,X,Y,CITY_NAME\n");
    for (t, id, p) in rows {
        let ts = t0 + f64::from(t + PAST_LEN as i32 - 1) * SAMPLE_DT;
        let kind = if *id == scene.target_id { "AGENT" } else { "OTHERS" };
        let _ = writeln!(out, "{ts:.6},{id},{kind},{:?},{:?},{city}", p.x, p.y);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate, ScenarioKind, ScenarioSpec};

    fn parse(text: &str) -> Result<CsvScene> {
        parse_trajectory_reader("s", text.as_bytes(), LaneGraph::default())
    }

    #[test]
    fn generated_scene_survives_csv() {
        let (mut scene, _) = generate(&ScenarioSpec::new(ScenarioKind::LeadFollow, 1)).unwrap();
        scene.lanes = LaneGraph::default();
        scene.scene_id = "s".into();
        let parsed = parse(&scene_to_csv(&scene, 315_969_625.0, "PIT")).unwrap();
        assert!(parsed.rejects.is_empty());
        assert_eq!(parsed.city.as_deref(), Some("PIT"));
        assert_eq!(parsed.scene, scene);
        let target = parsed.scene.target();
        assert_eq!((target.past.len(), target.future.len()), (20, 30));
        assert_eq!(target.past.first_index(), Some(-19));
    }

    #[test]
    fn missing_column() {
        let err = parse("TIMESTAMP,TRACK_ID,OBJECT_TYPE,Y,CITY_NAME\n0,a,AGENT,1,PIT\n").unwrap_err();
        assert!(matches!(err, Error::MissingColumn("X")));
        assert!(matches!(parse(""), Err(Error::MissingColumn("TIMESTAMP"))));
    }

    #[test]
    fn no_agent() {
        let text = "TIMESTAMP,TRACK_ID,OBJECT_TYPE,X,Y,CITY_NAME\n0.0,a,OTHERS,1,1,PIT\n0.1,a,OTHERS,1,2,PIT\n";
        assert!(matches!(parse(text), Err(Error::NoTargetAgent)));
    }

    #[test]
    fn bad_rows_rejected() {
        let text = "TIMESTAMP,TRACK_ID,OBJECT_TYPE,X,Y,CITY_NAME\n\
                    0.0,a,AGENT,0,0,PIT\n0.1,a,AGENT,nan,0,PIT\n0.1,a,AGENT,1,0,PIT\n0.2,a,AGENT,2\n0.2,a,AGENT,2,0,PIT\n";
        let s = parse(text).unwrap();
        assert_eq!(s.rejects.len(), 2);
        assert_eq!(s.rejects[0].line, 3);
        assert_eq!(s.scene.target().past.len(), 3);
    }

    #[test]
    fn non_monotonic_and_irregular() {
        let text = "TIMESTAMP,TRACK_ID,OBJECT_TYPE,X,Y,CITY_NAME\n0.1,a,AGENT,0,0,PIT\n0.0,a,AGENT,1,0,PIT\n";
        assert!(matches!(parse(text), Err(Error::NonMonotonicTimestamps(_))));
        let text = "TIMESTAMP,TRACK_ID,OBJECT_TYPE,X,Y,CITY_NAME\n0.0,a,AGENT,0,0,PIT\n0.3,a,AGENT,1,0,PIT\n";
        assert!(matches!(parse(text), Err(Error::IrregularSampling { rank: 1, .. })));
        // 8 ms jitter is tolerated.
        let text = "TIMESTAMP,TRACK_ID,OBJECT_TYPE,X,Y,CITY_NAME\n0.0,a,AGENT,0,0,PIT\n0.108,a,AGENT,1,0,PIT\n";
        assert!(parse(text).is_ok());
    }

    #[test]
    fn gaps_keep_contiguous_runs() {
        let mut text = String::from("TIMESTAMP,TRACK_ID,OBJECT_TYPE,X,Y,CITY_NAME\n");
        for k in 0..50 {
            let t = k as f64 * 0.1;
            let _ = writeln!(text, "{t:.1},a,AGENT,{k},0,PIT");
            if k != 5 && k != 30 {
                let _ = writeln!(text, "{t:.1},b,OTHERS,{k},5,PIT");
            }
        }
        let s = parse(&text).unwrap();
        let b = s.scene.agent(&"b".into()).unwrap();
        assert_eq!(b.past.first_index(), Some(-13));
        assert_eq!(b.future.len(), 10);
    }
}
