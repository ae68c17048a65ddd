//! Motion sequences, sample windows, datasets and the zero-velocity baseline.
//!
//! A [`MotionSequence`] is a frames × channels matrix of exponential-map joint
//! angles (three channels per joint). Sequences are stored on disk in a small
//! CSV format: the first line is `frame_rate,C`, each following line holds the
//! `C` channel values of one frame.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{s, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, ParseError, Result};

/// Frame rate used by the synthetic generator (matches 25 fps mocap).
pub const SYNTH_FRAME_RATE: f64 = 25.0;

/// Names of the synthetic actions; index = action id.
pub const SYNTH_ACTIONS: [&str; 2] = ["slow", "fast"];
const SYNTH_ACTION_FREQ: [f64; 2] = [1.0, 1.6];

#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    values: Array2<f64>,
    frame_rate: f64,
}

impl MotionSequence {
    pub fn new(values: Array2<f64>, frame_rate: f64) -> Result<Self> {
        let (m, c) = values.dim();
        if m == 0 {
            return Err(Error::Data("sequence has no frames".into()));
        }
        if c < 3 || c % 3 != 0 {
            return Err(Error::Data(format!(
                "channel count {c} must be a positive multiple of 3"
            )));
        }
        if !(frame_rate.is_finite() && frame_rate > 0.0) {
            return Err(Error::Data(format!("frame rate {frame_rate} must be positive")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("sequence contains non-finite values".into()));
        }
        Ok(Self { values, frame_rate })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn channels(&self) -> usize {
        self.values.ncols()
    }

    pub fn joints(&self) -> usize {
        self.channels() / 3
    }

    /// Frames `start..end` as a new sequence.
    pub fn slice_frames(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.frames() {
            return Err(Error::Argument(format!(
                "frame range {start}..{end} invalid for {} frames",
                self.frames()
            )));
        }
        Ok(Self {
            values: self.values.slice(s![start..end, ..]).to_owned(),
            frame_rate: self.frame_rate,
        })
    }

    /// Appends `other`'s frames after this sequence's frames.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.channels() != other.channels() {
            return Err(Error::Shape {
                op: "concat",
                left: self.values.dim(),
                right: other.values.dim(),
            });
        }
        let values = ndarray::concatenate(Axis(0), &[self.values.view(), other.values.view()])
            .expect("column counts checked");
        Ok(Self {
            values,
            frame_rate: self.frame_rate,
        })
    }
}

/// Parses the motion CSV format.
pub fn parse_motion_file(text: &str) -> Result<MotionSequence, ParseError> {
    let mut lines = text
        .split('\n')
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());

    let (header_line, header) = lines.next().ok_or(ParseError::MalformedHeader {
        line: 1,
        reason: "missing header".into(),
    })?;
    let fields: Vec<&str> = header.split(',').map(str::trim).collect();
    if fields.len() != 2 {
        return Err(ParseError::MalformedHeader {
            line: header_line,
            reason: format!("expected `frame_rate,C`, found {} fields", fields.len()),
        });
    }
    let frame_rate: f64 = fields[0].parse().map_err(|_| ParseError::MalformedHeader {
        line: header_line,
        reason: format!("frame rate {:?} is not a number", fields[0]),
    })?;
    if !(frame_rate.is_finite() && frame_rate > 0.0) {
        return Err(ParseError::MalformedHeader {
            line: header_line,
            reason: format!("frame rate {frame_rate} must be positive"),
        });
    }
    let channels: usize = fields[1].parse().map_err(|_| ParseError::MalformedHeader {
        line: header_line,
        reason: format!("channel count {:?} is not a non-negative integer", fields[1]),
    })?;
    if channels == 0 || !channels.is_multiple_of(3) {
        return Err(ParseError::ChannelsNotTriple {
            line: header_line,
            channels,
        });
    }

    let mut data = Vec::new();
    let mut rows = 0;
    for (line, row) in lines {
        let cells: Vec<&str> = row.split(',').map(str::trim).collect();
        if cells.len() != channels {
            return Err(ParseError::RaggedRow {
                line,
                expected: channels,
                found: cells.len(),
            });
        }
        for cell in cells {
            let v: f64 = cell.parse().map_err(|_| ParseError::NonNumeric {
                line,
                cell: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(ParseError::NonFinite {
                    line,
                    value: cell.to_string(),
                });
            }
            data.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(ParseError::EmptyBody { line: header_line });
    }
    let values = Array2::from_shape_vec((rows, channels), data).expect("row lengths checked");
    Ok(MotionSequence { values, frame_rate })
}

/// Serializes a sequence in the motion CSV format. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn serialize_motion_file(seq: &MotionSequence) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{},{}", seq.frame_rate, seq.channels());
    for row in seq.values.rows() {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

pub fn read_motion_file(path: &Path) -> Result<MotionSequence> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_motion_file(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn write_motion_file(path: &Path, seq: &MotionSequence) -> Result<()> {
    fs::write(path, serialize_motion_file(seq)).map_err(|e| Error::io(path, e))
}

/// Appends `t` copies of the last frame of `history`.
pub fn pad_with_last_frame(history: &MotionSequence, t: usize) -> MotionSequence {
    let (n, c) = history.values.dim();
    let mut values = Array2::zeros((n + t, c));
    values.slice_mut(s![..n, ..]).assign(&history.values);
    let last = history.values.row(n - 1);
    for mut row in values.slice_mut(s![n.., ..]).rows_mut() {
        row.assign(&last);
    }
    MotionSequence {
        values,
        frame_rate: history.frame_rate,
    }
}

/// Predicts `t` frames, each a copy of the last observed frame.
pub fn zero_velocity_predict(history: &MotionSequence, t: usize) -> Result<MotionSequence> {
    if t == 0 {
        return Err(Error::Argument("prediction length must be positive".into()));
    }
    let padded = pad_with_last_frame(history, t);
    padded.slice_frames(history.frames(), history.frames() + t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleWindow {
    history: MotionSequence,
    future: MotionSequence,
    pub subject_id: u32,
    pub action_id: u32,
}

impl SampleWindow {
    pub fn new(
        history: MotionSequence,
        future: MotionSequence,
        subject_id: u32,
        action_id: u32,
    ) -> Result<Self> {
        if history.channels() != future.channels() {
            return Err(Error::Shape {
                op: "sample window",
                left: history.values.dim(),
                right: future.values.dim(),
            });
        }
        if history.frame_rate != future.frame_rate {
            return Err(Error::Data(format!(
                "history frame rate {} differs from future frame rate {}",
                history.frame_rate, future.frame_rate
            )));
        }
        Ok(Self {
            history,
            future,
            subject_id,
            action_id,
        })
    }

    pub fn history(&self) -> &MotionSequence {
        &self.history
    }

    pub fn future(&self) -> &MotionSequence {
        &self.future
    }

    /// History followed by future (N + T frames).
    pub fn full(&self) -> MotionSequence {
        self.history.concat(&self.future).expect("channels checked")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    windows: Vec<SampleWindow>,
    subject_ids: BTreeSet<u32>,
    actions: Vec<String>,
}

impl Dataset {
    /// `actions[i]` names action id `i`; every window's action id must index it.
    pub fn new(windows: Vec<SampleWindow>, actions: Vec<String>) -> Result<Self> {
        let first = windows
            .first()
            .ok_or_else(|| Error::Data("dataset has no windows".into()))?;
        let (n, t, c) = (
            first.history.frames(),
            first.future.frames(),
            first.history.channels(),
        );
        let rate = first.history.frame_rate;
        for (i, w) in windows.iter().enumerate() {
            if w.history.frames() != n || w.future.frames() != t || w.history.channels() != c {
                return Err(Error::Data(format!(
                    "window {i} has shape (N={}, T={}, C={}), expected (N={n}, T={t}, C={c})",
                    w.history.frames(),
                    w.future.frames(),
                    w.history.channels()
                )));
            }
            if w.history.frame_rate != rate {
                return Err(Error::Data(format!(
                    "window {i} frame rate {} differs from {rate}",
                    w.history.frame_rate
                )));
            }
            if w.action_id as usize >= actions.len() {
                return Err(Error::Data(format!(
                    "window {i} action id {} has no name",
                    w.action_id
                )));
            }
        }
        let subject_ids = windows.iter().map(|w| w.subject_id).collect();
        Ok(Self {
            windows,
            subject_ids,
            actions,
        })
    }

    pub fn windows(&self) -> &[SampleWindow] {
        &self.windows
    }

    pub fn subject_ids(&self) -> &BTreeSet<u32> {
        &self.subject_ids
    }

    pub fn actions(&self) -> &[String] {
        &self.actions
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn history_len(&self) -> usize {
        self.windows[0].history.frames()
    }

    pub fn future_len(&self) -> usize {
        self.windows[0].future.frames()
    }

    pub fn channels(&self) -> usize {
        self.windows[0].history.channels()
    }

    pub fn frame_rate(&self) -> f64 {
        self.windows[0].history.frame_rate
    }

    /// Windows whose subject is in `subjects`, in original order.
    pub fn filter_subjects(&self, subjects: &[u32]) -> Result<Self> {
        let windows = self
            .windows
            .iter()
            .filter(|w| subjects.contains(&w.subject_id))
            .cloned()
            .collect();
        Self::new(windows, self.actions.clone())
    }
}

/// One synthetic channel component: `amplitude · sin(2π · freq · t / fps + phase)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sinusoid {
    pub amplitude: f64,
    pub frequency_hz: f64,
    pub phase: f64,
}

/// Closed-form trajectory underlying one synthetic window.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTrajectory {
    pub subject_id: u32,
    pub action_id: u32,
    pub frame_rate: f64,
    /// Per-channel constant offset (the subject's mean pose).
    pub offsets: Vec<f64>,
    /// Per-channel pair of sinusoids.
    pub components: Vec<[Sinusoid; 2]>,
}

impl SynthTrajectory {
    /// Value of `channel` at 1-based time index `t`.
    pub fn value(&self, t: usize, channel: usize) -> f64 {
        let time = t as f64 / self.frame_rate;
        self.offsets[channel]
            + self.components[channel]
                .iter()
                .map(|s| s.amplitude * (2.0 * PI * s.frequency_hz * time + s.phase).sin())
                .sum::<f64>()
    }

    /// Frames at time indices `first..=last`.
    pub fn sample(&self, first: usize, last: usize) -> MotionSequence {
        let c = self.offsets.len();
        let values = Array2::from_shape_fn((last + 1 - first, c), |(i, ch)| {
            self.value(first + i, ch)
        });
        MotionSequence {
            values,
            frame_rate: self.frame_rate,
        }
    }
}

/// Parameters of the synthetic multi-subject dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthConfig {
    pub seed: u64,
    pub subjects: usize,
    pub windows_per_subject: usize,
    pub history: usize,
    pub future: usize,
    pub channels: usize,
}

struct SubjectProfile {
    offsets: Vec<f64>,
    amplitude: f64,
    base_freq: f64,
    harmonic: f64,
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.subjects < 2 {
            return Err(Error::Config(format!(
                "synthetic data needs at least 2 subjects, got {}",
                self.subjects
            )));
        }
        if self.windows_per_subject == 0 || self.history == 0 || self.future == 0 {
            return Err(Error::Config(
                "windows per subject, history and future lengths must be positive".into(),
            ));
        }
        if self.channels == 0 || !self.channels.is_multiple_of(3) {
            return Err(Error::Config(format!(
                "channel count {} must be a positive multiple of 3",
                self.channels
            )));
        }
        Ok(())
    }

    /// The closed-form trajectories, one per window, subject-major order.
    pub fn trajectories(&self) -> Result<Vec<SynthTrajectory>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let c = self.channels;
        let profiles: Vec<SubjectProfile> = (0..self.subjects)
            .map(|_| SubjectProfile {
                offsets: (0..c).map(|_| rng.random_range(-0.5..0.5)).collect(),
                amplitude: rng.random_range(0.1..0.4),
                base_freq: rng.random_range(0.4..1.2),
                harmonic: rng.random_range(1.8..2.6),
            })
            .collect();

        let mut out = Vec::with_capacity(self.subjects * self.windows_per_subject);
        for (subject, p) in profiles.iter().enumerate() {
            for w in 0..self.windows_per_subject {
                let action = w % SYNTH_ACTIONS.len();
                let freq = p.base_freq * SYNTH_ACTION_FREQ[action];
                let components = (0..c)
                    .map(|_| {
                        let a = p.amplitude * rng.random_range(0.5..1.5);
                        let f = freq * rng.random_range(0.8..1.2);
                        [
                            Sinusoid {
                                amplitude: a,
                                frequency_hz: f,
                                phase: rng.random_range(0.0..2.0 * PI),
                            },
                            Sinusoid {
                                amplitude: 0.5 * a * rng.random_range(0.5..1.5),
                                frequency_hz: f * p.harmonic,
                                phase: rng.random_range(0.0..2.0 * PI),
                            },
                        ]
                    })
                    .collect();
                out.push(SynthTrajectory {
                    subject_id: subject as u32,
                    action_id: action as u32,
                    frame_rate: SYNTH_FRAME_RATE,
                    offsets: p.offsets.clone(),
                    components,
                });
            }
        }
        Ok(out)
    }

    pub fn build(&self) -> Result<Dataset> {
        let windows = self
            .trajectories()?
            .into_iter()
            .map(|traj| {
                let history = traj.sample(1, self.history);
                let future = traj.sample(self.history + 1, self.history + self.future);
                SampleWindow::new(history, future, traj.subject_id, traj.action_id)
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(windows, SYNTH_ACTIONS.iter().map(|s| s.to_string()).collect())
    }
}

/// Deterministic synthetic dataset: every channel is a sum of two sinusoids
/// whose parameters come from subject-specific distributions.
pub fn synth_dataset(
    seed: u64,
    subjects: usize,
    windows_per_subject: usize,
    history: usize,
    future: usize,
    channels: usize,
) -> Result<Dataset> {
    SynthConfig {
        seed,
        subjects,
        windows_per_subject,
        history,
        future,
        channels,
    }
    .build()
}

/// Writes every window as `<root>/<subject>/<action>/<index>.csv`, each file
/// holding the window's full history + future sequence.
pub fn write_dataset_dir(ds: &Dataset, root: &Path) -> Result<()> {
    for (i, w) in ds.windows.iter().enumerate() {
        let dir = root
            .join(w.subject_id.to_string())
            .join(&ds.actions[w.action_id as usize]);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_motion_file(&dir.join(format!("{i:06}.csv")), &w.full())?;
    }
    Ok(())
}

fn subject_id_from_name(name: &str) -> Option<u32> {
    let digits: String = name
        .chars()
        .rev()
        .take_while(char::is_ascii_digit)
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    digits.parse().ok()
}

fn sorted_entries(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

/// Loads `<root>/<subject>/<action>/<trial>.csv`. Each trial is cut into
/// windows of `history + future` frames starting every `stride` frames.
/// Subject directories are identified by their trailing digits (`S11` → 11).
pub fn load_dataset_dir(root: &Path, history: usize, future: usize, stride: usize) -> Result<Dataset> {
    if history == 0 || future == 0 || stride == 0 {
        return Err(Error::Argument(
            "history, future and stride must be positive".into(),
        ));
    }
    let mut actions: Vec<String> = Vec::new();
    let mut trials = Vec::new();
    for subject_dir in sorted_entries(root)?.into_iter().filter(|p| p.is_dir()) {
        let name = subject_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let subject = subject_id_from_name(&name).ok_or_else(|| {
            Error::Data(format!(
                "{}: subject directory name has no numeric id",
                subject_dir.display()
            ))
        })?;
        for action_dir in sorted_entries(&subject_dir)?.into_iter().filter(|p| p.is_dir()) {
            let action = action_dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            if !actions.contains(&action) {
                actions.push(action.clone());
            }
            for trial in sorted_entries(&action_dir)?
                .into_iter()
                .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            {
                trials.push((subject, action.clone(), trial));
            }
        }
    }
    actions.sort();
    let mut windows = Vec::new();
    for (subject, action, path) in trials {
        let seq = read_motion_file(&path)?;
        let action_id = actions.iter().position(|a| *a == action).expect("collected") as u32;
        let span = history + future;
        let mut start = 0;
        while start + span <= seq.frames() {
            windows.push(SampleWindow::new(
                seq.slice_frames(start, start + history)?,
                seq.slice_frames(start + history, start + span)?,
                subject,
                action_id,
            )?);
            start += stride;
        }
    }
    if windows.is_empty() {
        return Err(Error::Data(format!(
            "{}: no trial has at least {} frames",
            root.display(),
            history + future
        )));
    }
    Dataset::new(windows, actions)
}
