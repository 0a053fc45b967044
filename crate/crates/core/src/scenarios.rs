//! Synthetic sequential driving tasks, CSV export/ingestion and stream
//! assembly.
//!
//! Each generated sample is an episode: a target-vehicle track covering
//! `t_obs + t_pred` frames plus up to `k_sv` neighbor tracks covering the
//! history. Episodes occupy disjoint frame ranges, so an exported file can
//! be re-ingested with the same windowing used for external data.
//!
//! CSV schema (header required, UTF-8, comma separated, `.` decimal):
//!
//! ```text
//! track_id,frame,x,y,vx,vy,agent_role,task_label
//! ```
//!
//! `agent_role` is `tv` for tracks that produce samples and `sv` for
//! neighbor-only tracks. Any other track present over a full history
//! window may serve as a neighbor.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::{AgentState, GroundTruth, Sample, Scene, SceneGeometry};
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 8] = [
    "track_id",
    "frame",
    "x",
    "y",
    "vx",
    "vy",
    "agent_role",
    "task_label",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Constant velocity.
    Straight,
    /// Straight approach, then constant speed and curvature.
    Arc,
    /// Straight approach, then a constant-rate turn through a sampled
    /// heading change by the end of the horizon.
    Turn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub n_samples: usize,
    /// Standard deviation of position noise, meters.
    pub noise_sigma: f64,
    /// m/s, `[min, max]`.
    pub speed: [f64; 2],
    /// 1/m, positive turns left. Used by `Arc`.
    pub curvature: [f64; 2],
    /// Total heading change in radians, positive left. Used by `Turn`.
    pub turn_angle: [f64; 2],
    /// Steps before the current step at which an `Arc` or `Turn` begins.
    /// Zero hides the maneuver from the observed history.
    #[serde(default)]
    pub onset_lead: usize,
    pub seed: u64,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 1 {
            return Err(Error::Config("n_samples must be at least 1".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config("noise_sigma must be >= 0".into()));
        }
        for (name, r) in [
            ("speed", self.speed),
            ("curvature", self.curvature),
            ("turn_angle", self.turn_angle),
        ] {
            if !(r[0].is_finite() && r[1].is_finite()) || r[0] > r[1] {
                return Err(Error::Config(format!(
                    "degenerate {name} range [{}, {}]",
                    r[0], r[1]
                )));
            }
        }
        if self.speed[0] < 0.0 {
            return Err(Error::Config("speeds must be >= 0".into()));
        }
        Ok(())
    }

    pub fn straight(n_samples: usize, seed: u64) -> Self {
        TaskSpec {
            kind: TaskKind::Straight,
            n_samples,
            noise_sigma: 0.1,
            speed: [6.0, 9.0],
            curvature: [0.0, 0.0],
            turn_angle: [0.0, 0.0],
            onset_lead: 0,
            seed,
        }
    }

    pub fn arc(n_samples: usize, seed: u64) -> Self {
        TaskSpec {
            kind: TaskKind::Arc,
            n_samples,
            noise_sigma: 0.1,
            speed: [5.0, 8.0],
            curvature: [0.04, 0.07],
            turn_angle: [0.0, 0.0],
            onset_lead: 0,
            seed,
        }
    }

    pub fn turn(n_samples: usize, seed: u64) -> Self {
        TaskSpec {
            kind: TaskKind::Turn,
            n_samples,
            noise_sigma: 0.1,
            speed: [4.0, 7.0],
            curvature: [0.0, 0.0],
            turn_angle: [-1.6, -1.2],
            onset_lead: 0,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub tasks: Vec<TaskSpec>,
    pub seed: u64,
}

impl StreamSpec {
    /// Straight, left-arc and right-turn tasks of equal size.
    pub fn three_task(n_per_task: usize, seed: u64) -> Self {
        StreamSpec {
            tasks: vec![
                TaskSpec::straight(n_per_task, seed.wrapping_mul(3).wrapping_add(1)),
                TaskSpec::arc(n_per_task, seed.wrapping_mul(3).wrapping_add(2)),
                TaskSpec::turn(n_per_task, seed.wrapping_mul(3).wrapping_add(3)),
            ],
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::Config("stream needs at least one task".into()));
        }
        self.tasks.iter().try_for_each(TaskSpec::validate)
    }
}

/// Closed-form planar motion, time in seconds from the first frame.
#[derive(Clone, Copy, Debug)]
enum Motion {
    Straight { p0: [f64; 2], heading: f64, v: f64 },
    /// Straight until `t_start`, then constant angular rate.
    Bend { p0: [f64; 2], heading: f64, v: f64, t_start: f64, omega: f64 },
}

impl Motion {
    fn state(&self, t: f64) -> AgentState {
        match *self {
            Motion::Straight { p0, heading, v } => straight_state(p0, heading, v, t),
            Motion::Bend {
                p0,
                heading,
                v,
                t_start,
                omega,
            } => {
                if t <= t_start {
                    straight_state(p0, heading, v, t)
                } else {
                    let s = straight_state(p0, heading, v, t_start);
                    arc_state([s.x, s.y], heading, v, omega, t - t_start)
                }
            }
        }
    }
}

fn straight_state(p0: [f64; 2], heading: f64, v: f64, t: f64) -> AgentState {
    let (s, c) = heading.sin_cos();
    AgentState {
        x: p0[0] + v * t * c,
        y: p0[1] + v * t * s,
        vx: v * c,
        vy: v * s,
    }
}

fn arc_state(p0: [f64; 2], heading: f64, v: f64, omega: f64, t: f64) -> AgentState {
    if omega.abs() < 1e-12 {
        return straight_state(p0, heading, v, t);
    }
    let h = heading + omega * t;
    let r = v / omega;
    AgentState {
        x: p0[0] + r * (h.sin() - heading.sin()),
        y: p0[1] - r * (h.cos() - heading.cos()),
        vx: v * h.cos(),
        vy: v * h.sin(),
    }
}

/// Full tracks behind one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    /// `t_obs + t_pred` states.
    pub tv: Vec<AgentState>,
    /// Neighbors nearest first, each with `t_obs` states.
    pub svs: Vec<Vec<AgentState>>,
    /// Frame number of the first state.
    pub first_frame: i64,
    pub task_label: u32,
}

impl Episode {
    pub fn to_sample(&self, geometry: &SceneGeometry) -> Result<Sample> {
        let t_obs = geometry.t_obs;
        if self.tv.len() != geometry.span() {
            return Err(Error::Shape {
                what: "episode length",
                expected: geometry.span(),
                actual: self.tv.len(),
            });
        }
        let mut svs: Vec<Vec<AgentState>> = self.svs.iter().take(geometry.k_sv).cloned().collect();
        let mut mask = vec![true; svs.len()];
        while svs.len() < geometry.k_sv {
            svs.push(Vec::new());
            mask.push(false);
        }
        let now = self.tv[t_obs - 1];
        let end = self.tv[t_obs - 1 + geometry.t_pred];
        Sample::new(
            Scene::new(
                self.tv[..t_obs].to_vec(),
                svs,
                mask,
                self.first_frame + t_obs as i64 - 1,
            )?,
            GroundTruth::new([end.x, end.y], now.speed())?,
            self.task_label,
        )
    }
}

fn frame_stride(geometry: &SceneGeometry) -> i64 {
    (100 * geometry.span().div_ceil(100).max(1)) as i64
}

fn uniform<R: Rng>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

fn draw_motion<R: Rng>(
    spec: &TaskSpec,
    geometry: &SceneGeometry,
    rng: &mut R,
    p0: [f64; 2],
    heading: f64,
) -> Motion {
    let v = uniform(rng, spec.speed);
    let start_step = (geometry.t_obs - 1).saturating_sub(spec.onset_lead);
    let t_start = start_step as f64 * geometry.dt;
    match spec.kind {
        TaskKind::Straight => Motion::Straight { p0, heading, v },
        TaskKind::Arc => Motion::Bend {
            p0,
            heading,
            v,
            t_start,
            omega: v * uniform(rng, spec.curvature),
        },
        TaskKind::Turn => {
            let t_end = (geometry.span() - 1) as f64 * geometry.dt;
            Motion::Bend {
                p0,
                heading,
                v,
                t_start,
                omega: uniform(rng, spec.turn_angle) / (t_end - t_start),
            }
        }
    }
}

fn sample_track<R: Rng>(
    motion: &Motion,
    frames: usize,
    dt: f64,
    noise: Option<&Normal<f64>>,
    rng: &mut R,
) -> Vec<AgentState> {
    (0..frames)
        .map(|k| {
            let mut s = motion.state(k as f64 * dt);
            if let Some(n) = noise {
                s.x += n.sample(rng);
                s.y += n.sample(rng);
            }
            s
        })
        .collect()
}

pub fn generate_episodes(spec: &TaskSpec, task_label: u32, geometry: &SceneGeometry) -> Result<Vec<Episode>> {
    spec.validate()?;
    geometry.validate()?;
    if task_label < 1 {
        return Err(Error::Config("task labels start at 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = (spec.noise_sigma > 0.0)
        .then(|| Normal::new(0.0, spec.noise_sigma).expect("sigma checked above"));
    let stride = frame_stride(geometry);
    let t_c = geometry.t_obs - 1;
    let mut out = Vec::with_capacity(spec.n_samples);
    for k in 0..spec.n_samples {
        let p0 = [rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0)];
        let heading = rng.random_range(-PI..PI);
        let motion = draw_motion(spec, geometry, &mut rng, p0, heading);
        let tv = sample_track(&motion, geometry.span(), geometry.dt, noise.as_ref(), &mut rng);

        let n_candidates = rng.random_range(0..=geometry.k_sv + 1);
        let (sh, ch) = heading.sin_cos();
        let mut svs: Vec<Vec<AgentState>> = (0..n_candidates)
            .map(|_| {
                let lon = rng.random_range(-25.0..25.0);
                let lat = rng.random_range(-8.0..8.0);
                let q0 = [p0[0] + lon * ch - lat * sh, p0[1] + lon * sh + lat * ch];
                let h = heading + rng.random_range(-0.15..0.15);
                let m = draw_motion(spec, geometry, &mut rng, q0, h);
                sample_track(&m, geometry.t_obs, geometry.dt, noise.as_ref(), &mut rng)
            })
            .collect();
        let here = tv[t_c];
        let dist = |s: &Vec<AgentState>| (s[t_c].x - here.x).hypot(s[t_c].y - here.y);
        svs.sort_by(|a, b| dist(a).total_cmp(&dist(b)));
        svs.truncate(geometry.k_sv);

        out.push(Episode {
            tv,
            svs,
            first_frame: k as i64 * stride,
            task_label,
        });
    }
    Ok(out)
}

pub fn generate_task(spec: &TaskSpec, task_label: u32, geometry: &SceneGeometry) -> Result<Vec<Sample>> {
    generate_episodes(spec, task_label, geometry)?
        .iter()
        .map(|e| e.to_sample(geometry))
        .collect()
}

/// Shuffles each task's samples in place, in task order, from one seeded
/// generator, then concatenates them.
pub fn shuffle_within_tasks(tasks: Vec<Vec<Sample>>, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    tasks
        .into_iter()
        .flat_map(|mut t| {
            t.shuffle(&mut rng);
            t
        })
        .collect()
}

pub fn build_stream(spec: &StreamSpec, geometry: &SceneGeometry) -> Result<Vec<Sample>> {
    spec.validate()?;
    let tasks = spec
        .tasks
        .iter()
        .enumerate()
        .map(|(i, t)| generate_task(t, i as u32 + 1, geometry))
        .collect::<Result<Vec<_>>>()?;
    Ok(shuffle_within_tasks(tasks, spec.seed))
}

pub fn write_episodes_csv<W: Write>(out: W, episodes: &[Episode], geometry: &SceneGeometry) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::InvalidInput(format!("csv write: {e}"));
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    let per_episode = geometry.k_sv as i64 + 1;
    for (k, ep) in episodes.iter().enumerate() {
        let base = k as i64 * per_episode;
        let label = ep.task_label.to_string();
        let tracks = std::iter::once((base, &ep.tv, "tv"))
            .chain(ep.svs.iter().enumerate().map(|(j, t)| (base + 1 + j as i64, t, "sv")));
        for (id, track, role) in tracks {
            for (f, s) in track.iter().enumerate() {
                w.write_record([
                    id.to_string(),
                    (ep.first_frame + f as i64).to_string(),
                    s.x.to_string(),
                    s.y.to_string(),
                    s.vx.to_string(),
                    s.vy.to_string(),
                    role.to_string(),
                    label.clone(),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    w.flush().map_err(|e| Error::InvalidInput(format!("csv flush: {e}")))?;
    Ok(())
}

/// Samples read from a CSV file, plus windows skipped because of frame gaps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Ingested {
    pub samples: Vec<Sample>,
    pub dropped_windows: usize,
}

#[derive(Clone, Copy, Debug)]
struct Row {
    state: AgentState,
    is_target: bool,
    task_label: u32,
}

pub fn ingest_csv(path: &Path, geometry: &SceneGeometry) -> Result<Ingested> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(file, geometry)
}

pub fn ingest_reader<R: Read>(reader: R, geometry: &SceneGeometry) -> Result<Ingested> {
    geometry.validate()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Csv {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Ok(Ingested::default());
    }
    let mut col = [0usize; 8];
    for (slot, name) in col.iter_mut().zip(CSV_HEADER) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::InvalidInput(format!("missing required column `{name}`")))?;
    }

    let mut tracks: BTreeMap<i64, BTreeMap<i64, Row>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Csv {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let bad = |m: String| Error::Csv { line, message: m };
        let field = |i: usize| rec.get(col[i]).map(str::trim).unwrap_or("");
        let int = |i: usize| {
            field(i)
                .parse::<i64>()
                .map_err(|_| bad(format!("`{}` is not an integer: {:?}", CSV_HEADER[i], field(i))))
        };
        let real = |i: usize| {
            field(i)
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(format!("`{}` is not a finite number: {:?}", CSV_HEADER[i], field(i))))
        };
        let track = int(0)?;
        let frame = int(1)?;
        let state = AgentState {
            x: real(2)?,
            y: real(3)?,
            vx: real(4)?,
            vy: real(5)?,
        };
        let is_target = match field(6) {
            "tv" => true,
            "sv" => false,
            other => return Err(bad(format!("unknown agent_role {other:?}"))),
        };
        let task_label = int(7)?;
        if task_label < 1 || task_label > u32::MAX as i64 {
            return Err(bad(format!("task_label {task_label} must be >= 1")));
        }
        let row = Row {
            state,
            is_target,
            task_label: task_label as u32,
        };
        if tracks.entry(track).or_default().insert(frame, row).is_some() {
            return Err(bad(format!("duplicate frame {frame} for track {track}")));
        }
    }

    let mut at_frame: HashMap<i64, Vec<i64>> = HashMap::new();
    for (&id, frames) in &tracks {
        for &f in frames.keys() {
            at_frame.entry(f).or_default().push(id);
        }
    }

    let span = geometry.span() as i64;
    let t_obs = geometry.t_obs as i64;
    let mut out = Ingested::default();
    for (&id, frames) in &tracks {
        let Some((&first, first_row)) = frames.iter().next() else {
            continue;
        };
        if !first_row.is_target {
            continue;
        }
        let last = *frames.keys().next_back().expect("non-empty");
        for (&start, _) in frames.range(first..=last - span + 1) {
            let contiguous = (start..start + span).all(|f| frames.contains_key(&f));
            if !contiguous {
                out.dropped_windows += 1;
                continue;
            }
            let t_c = start + t_obs - 1;
            let history: Vec<AgentState> = (start..=t_c).map(|f| frames[&f].state).collect();
            let now = frames[&t_c];
            let end = frames[&(t_c + geometry.t_pred as i64)].state;

            let mut neighbors: Vec<(f64, i64)> = at_frame[&t_c]
                .iter()
                .filter(|&&other| other != id)
                .filter(|&&other| (start..=t_c).all(|f| tracks[&other].contains_key(&f)))
                .map(|&other| {
                    let s = tracks[&other][&t_c].state;
                    ((s.x - now.state.x).hypot(s.y - now.state.y), other)
                })
                .collect();
            neighbors.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            neighbors.truncate(geometry.k_sv);
            let mut svs: Vec<Vec<AgentState>> = neighbors
                .iter()
                .map(|(_, other)| (start..=t_c).map(|f| tracks[other][&f].state).collect())
                .collect();
            let mut mask = vec![true; svs.len()];
            while svs.len() < geometry.k_sv {
                svs.push(Vec::new());
                mask.push(false);
            }
            out.samples.push(Sample::new(
                Scene::new(history, svs, mask, t_c)?,
                GroundTruth::new([end.x, end.y], now.state.speed())?,
                now.task_label,
            )?);
        }
    }
    if out.dropped_windows > 0 {
        log::warn!("dropped {} windows with frame gaps", out.dropped_windows);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geometry() -> SceneGeometry {
        SceneGeometry::default()
    }

    fn noiseless(mut spec: TaskSpec) -> TaskSpec {
        spec.noise_sigma = 0.0;
        spec
    }

    #[test]
    fn noiseless_straight_goes_thirty_meters() {
        let mut spec = noiseless(TaskSpec::straight(20, 3));
        spec.speed = [10.0, 10.0];
        for s in generate_task(&spec, 1, &geometry()).unwrap() {
            let local = s.scene.agent_frame().to_local(s.truth.endpoint);
            assert!((local[0] - 30.0).abs() < 1e-9 && local[1].abs() < 1e-9, "{local:?}");
            assert!((s.truth.speed_v - 10.0).abs() < 1e-12);
        }
    }

    #[test]
    fn noiseless_arc_matches_circular_motion() {
        let mut spec = noiseless(TaskSpec::arc(20, 4));
        spec.speed = [5.0, 5.0];
        spec.curvature = [0.08, 0.08];
        let radius = 1.0 / 0.08;
        let angle = 5.0 * 0.08 * 3.0;
        for s in generate_task(&spec, 1, &geometry()).unwrap() {
            // rotate the current position about the turn center
            let now = s.scene.current();
            let h = [now.vx / 5.0, now.vy / 5.0];
            let center = [now.x - radius * h[1], now.y + radius * h[0]];
            let rel = [now.x - center[0], now.y - center[1]];
            let (sa, ca) = f64::sin_cos(angle);
            let expected = [
                center[0] + ca * rel[0] - sa * rel[1],
                center[1] + sa * rel[0] + ca * rel[1],
            ];
            assert!((s.truth.endpoint[0] - expected[0]).abs() < 1e-9);
            assert!((s.truth.endpoint[1] - expected[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = TaskSpec::turn(30, 9);
        assert_eq!(
            generate_task(&spec, 2, &geometry()).unwrap(),
            generate_task(&spec, 2, &geometry()).unwrap()
        );
    }

    #[test]
    fn degenerate_ranges_rejected() {
        let mut spec = TaskSpec::arc(5, 1);
        spec.curvature = [0.2, 0.1];
        assert!(generate_task(&spec, 1, &geometry()).is_err());
        let mut spec = TaskSpec::straight(0, 1);
        assert!(generate_task(&spec, 1, &geometry()).is_err());
        spec.n_samples = 1;
        spec.noise_sigma = -1.0;
        assert!(generate_task(&spec, 1, &geometry()).is_err());
    }

    #[test]
    fn neighbors_are_sorted_and_masked() {
        let g = geometry();
        for s in generate_task(&TaskSpec::straight(50, 2), 1, &g).unwrap() {
            let now = s.scene.current();
            let mut prev = 0.0;
            let mut seen_masked = false;
            for (h, &m) in s.scene.sv_histories().iter().zip(s.scene.sv_mask()) {
                if m {
                    assert!(!seen_masked, "valid slot after masked slot");
                    let d = (h[g.t_obs - 1].x - now.x).hypot(h[g.t_obs - 1].y - now.y);
                    assert!(d >= prev);
                    prev = d;
                } else {
                    seen_masked = true;
                    assert!(h.iter().all(|st| *st == AgentState::default()));
                }
            }
        }
    }

    #[test]
    fn stream_labels_and_sizes() {
        let mut spec = StreamSpec::three_task(3, 1);
        spec.tasks.truncate(2);
        spec.tasks[1].n_samples = 2;
        let stream = build_stream(&spec, &geometry()).unwrap();
        let labels: Vec<u32> = stream.iter().map(Sample::task_label).collect();
        assert_eq!(labels, vec![1, 1, 1, 2, 2]);
    }

    #[test]
    fn reshuffle_permutes_within_tasks_only() {
        let spec = StreamSpec::three_task(20, 5);
        let a = build_stream(&spec, &geometry()).unwrap();
        let b = build_stream(&StreamSpec { seed: 6, ..spec }, &geometry()).unwrap();
        assert_ne!(a, b);
        for task in 0..3 {
            let key = |s: &Sample| s.scene.t_c();
            let mut x: Vec<i64> = a[task * 20..(task + 1) * 20].iter().map(key).collect();
            let mut y: Vec<i64> = b[task * 20..(task + 1) * 20].iter().map(key).collect();
            x.sort_unstable();
            y.sort_unstable();
            assert_eq!(x, y);
        }
    }

    #[test]
    fn csv_round_trip_matches_memory() {
        let g = geometry();
        let episodes = generate_episodes(&TaskSpec::arc(15, 8), 3, &g).unwrap();
        let mut buf = Vec::new();
        write_episodes_csv(&mut buf, &episodes, &g).unwrap();
        let back = ingest_reader(buf.as_slice(), &g).unwrap();
        assert_eq!(back.dropped_windows, 0);
        let direct: Vec<Sample> = episodes.iter().map(|e| e.to_sample(&g).unwrap()).collect();
        assert_eq!(back.samples, direct);
    }

    #[test]
    fn empty_input_is_empty() {
        let got = ingest_reader("".as_bytes(), &geometry()).unwrap();
        assert!(got.samples.is_empty());
        let got = ingest_reader("track_id,frame,x,y,vx,vy,agent_role,task_label\n".as_bytes(), &geometry()).unwrap();
        assert!(got.samples.is_empty());
    }

    #[test]
    fn single_track_forty_frames_gives_one_sample() {
        let mut text = String::from("track_id,frame,x,y,vx,vy,agent_role,task_label\n");
        for f in 0..40 {
            text.push_str(&format!("7,{f},{},0,1,0,tv,1\n", f as f64 * 0.1));
        }
        let got = ingest_reader(text.as_bytes(), &geometry()).unwrap();
        assert_eq!(got.samples.len(), 1);
        let s = &got.samples[0];
        assert_eq!(s.scene.t_c(), 9);
        assert!((s.truth.endpoint[0] - 3.9).abs() < 1e-12);
        assert!(s.scene.sv_mask().iter().all(|m| !m));
    }

    #[test]
    fn missing_column_and_bad_rows() {
        let g = geometry();
        let err = ingest_reader("track_id,frame,x,y,vx,agent_role,task_label\n1,0,0,0,0,tv,1\n".as_bytes(), &g)
            .unwrap_err();
        assert!(err.to_string().contains("vy"), "{err}");
        let err = ingest_reader(
            "track_id,frame,x,y,vx,vy,agent_role,task_label\n1,0,0,0,0,0,tv,1\n1,1,abc,0,0,0,tv,1\n".as_bytes(),
            &g,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Csv { line: 3, .. }), "{err}");
        let err = ingest_reader(
            "track_id,frame,x,y,vx,vy,agent_role,task_label\n1,0,0,0,0,0,bus,1\n".as_bytes(),
            &g,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Csv { line: 2, .. }));
    }

    #[test]
    fn gaps_drop_windows() {
        let mut text = String::from("track_id,frame,x,y,vx,vy,agent_role,task_label\n");
        for f in (0..45).filter(|&f| f != 20) {
            text.push_str(&format!("1,{f},{f},0,10,0,tv,2\n"));
        }
        let got = ingest_reader(text.as_bytes(), &geometry()).unwrap();
        // starts 0..=5 all span frame 20
        assert_eq!(got.samples.len(), 0);
        assert_eq!(got.dropped_windows, 6);
    }
}
