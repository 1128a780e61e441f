//! Planning vocabulary: furthest trajectory sampling over demonstrations and
//! the Fourier action encoding.

use std::path::Path;

use autodiff::records::OffsetReader;

use crate::error::{Error, Result};
use crate::geometry::{ade_unchecked, Trajectory, Vec2};
use crate::persist::{read_file, write_atomic};

pub const MAGIC: &[u8; 4] = b"VPV1";
pub const VERSION: u32 = 1;
pub const DEFAULT_BANDS: usize = 8;
pub const DEFAULT_HORIZON: usize = 6;
pub const DEFAULT_DT_WP: f64 = 0.5;
/// A vocabulary action closer than this (ADE to standing still) counts as a stop.
pub const STOP_TOLERANCE: f64 = 0.1;

const BASE: f64 = 10000.0;

/// `(cos(pos / 10000^(2*pi*j/L)), sin(...))`.
pub fn fourier_encode_scalar(pos: f64, j: usize, l: usize) -> Result<(f64, f64)> {
    if j >= l {
        return Err(Error::BandRange { j, l });
    }
    let (s, c) = (pos / band_divisor(j, l)).sin_cos();
    Ok((c, s))
}

fn band_divisor(j: usize, l: usize) -> f64 {
    BASE.powf(2.0 * std::f64::consts::PI * j as f64 / l as f64)
}

/// All `L` bands of one coordinate, `2L` values.
pub fn encode_coordinate(pos: f64, l: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * l);
    encode_coordinate_into(pos, l, &mut out);
    out
}

fn encode_coordinate_into(pos: f64, l: usize, out: &mut Vec<f64>) {
    for j in 0..l {
        let (s, c) = (pos / band_divisor(j, l)).sin_cos();
        out.push(c);
        out.push(s);
    }
}

/// Concatenated coordinate encodings in `x_1, y_1, ..., x_T, y_T` order, `4TL` values.
pub fn encode_action(a: &Trajectory, l: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(4 * a.horizon() * l);
    for p in &a.points {
        encode_coordinate_into(p.x, l, &mut out);
        encode_coordinate_into(p.y, l, &mut out);
    }
    out
}

pub fn encode_action_f32(a: &Trajectory, l: usize) -> Vec<f32> {
    encode_action(a, l).into_iter().map(|v| v as f32).collect()
}

pub fn encoding_width(horizon: usize, l: usize) -> usize {
    4 * horizon * l
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanningVocabulary {
    actions: Vec<Trajectory>,
    horizon: usize,
    dt_wp: f64,
    bands: usize,
    /// Row-major `N x 4TL`.
    encodings: Vec<f32>,
}

impl PlanningVocabulary {
    pub fn new(actions: Vec<Trajectory>, dt_wp: f64, bands: usize) -> Result<Self> {
        if actions.len() < 2 {
            return Err(Error::Validation(format!(
                "vocabulary needs N >= 2, got {}",
                actions.len()
            )));
        }
        if bands == 0 {
            return Err(Error::Validation("vocabulary needs L >= 1".into()));
        }
        if !(dt_wp > 0.0 && dt_wp.is_finite()) {
            return Err(Error::Validation(format!("dt_wp must be positive, got {dt_wp}")));
        }
        let horizon = actions[0].horizon();
        for a in &actions {
            if a.horizon() != horizon {
                return Err(Error::HorizonMismatch {
                    expected: horizon,
                    found: a.horizon(),
                });
            }
            a.validate()?;
        }
        let encodings = actions.iter().flat_map(|a| encode_action_f32(a, bands)).collect();
        let v = Self {
            actions,
            horizon,
            dt_wp,
            bands,
            encodings,
        };
        v.check_distinct()?;
        Ok(v)
    }

    fn check_distinct(&self) -> Result<()> {
        let mut sorted: Vec<(usize, Vec<u64>)> = self
            .actions
            .iter()
            .enumerate()
            .map(|(i, a)| (i, a.coords().iter().map(|c| c.to_bits()).collect()))
            .collect();
        sorted.sort_by(|a, b| a.1.cmp(&b.1));
        for w in sorted.windows(2) {
            if w[0].1 == w[1].1 {
                return Err(Error::Validation(format!(
                    "vocabulary actions {} and {} are identical",
                    w[0].0.min(w[1].0),
                    w[0].0.max(w[1].0)
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn dt_wp(&self) -> f64 {
        self.dt_wp
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn actions(&self) -> &[Trajectory] {
        &self.actions
    }

    pub fn action(&self, i: usize) -> &Trajectory {
        &self.actions[i]
    }

    pub fn encoding_width(&self) -> usize {
        encoding_width(self.horizon, self.bands)
    }

    pub fn encodings(&self) -> &[f32] {
        &self.encodings
    }

    pub fn encoding(&self, i: usize) -> &[f32] {
        let w = self.encoding_width();
        &self.encodings[i * w..(i + 1) * w]
    }

    /// Index of the action closest to standing still (lowest index on ties).
    pub fn stop_index(&self) -> usize {
        let zero = vec![Vec2::ZERO; self.horizon];
        argmin_by(self.actions.iter().map(|a| ade_unchecked(&a.points, &zero)))
    }

    pub fn has_stop_action(&self) -> bool {
        let zero = Trajectory::zeros(self.horizon);
        ade_unchecked(&self.actions[self.stop_index()].points, &zero.points) < STOP_TOLERANCE
    }

    pub fn check_horizon(&self, expected: usize) -> Result<()> {
        if self.horizon != expected {
            return Err(Error::HorizonMismatch {
                expected,
                found: self.horizon,
            });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.len() * (self.horizon * 16 + self.encoding_width() * 4));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.horizon as u32).to_le_bytes());
        out.extend_from_slice(&self.dt_wp.to_le_bytes());
        out.extend_from_slice(&(self.bands as u32).to_le_bytes());
        for a in &self.actions {
            for c in a.coords() {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
        for e in &self.encodings {
            out.extend_from_slice(&e.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = OffsetReader::new(bytes);
        let magic = r.bytes::<4>()?;
        if &magic != MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: format!("bad magic {magic:?}, expected {MAGIC:?}"),
            });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format {
                offset: 4,
                message: format!("unsupported version {version}"),
            });
        }
        let n = r.u32()? as usize;
        let t = r.u32()? as usize;
        let dt_wp = r.f64()?;
        let l = r.u32()? as usize;
        let fits = n
            .checked_mul(t * 16 + 4 * encoding_width(t, l))
            .is_some_and(|b| b <= bytes.len());
        if !fits {
            return Err(Error::Format {
                offset: r.offset,
                message: format!("truncated: header declares N={n}, T={t}, L={l}"),
            });
        }
        let mut actions = Vec::with_capacity(n);
        for _ in 0..n {
            let mut pts = Vec::with_capacity(t);
            for _ in 0..t {
                let x = r.f64()?;
                let y = r.f64()?;
                pts.push(Vec2::new(x, y));
            }
            actions.push(Trajectory { points: pts });
        }
        let enc_offset = r.offset;
        let w = encoding_width(t, l);
        let mut stored = Vec::with_capacity(n * w);
        for _ in 0..n * w {
            stored.push(r.f32()?);
        }
        if !r.at_eof()? {
            return Err(Error::Format {
                offset: r.offset,
                message: "trailing bytes".into(),
            });
        }
        let v = Self::new(actions, dt_wp, l).map_err(|e| Error::Format {
            offset: 24,
            message: e.to_string(),
        })?;
        if let Some(i) = v
            .encodings
            .iter()
            .zip(&stored)
            .position(|(a, b)| a.to_bits() != b.to_bits())
        {
            return Err(Error::Format {
                offset: enc_offset + 4 * i as u64,
                message: "stored encoding disagrees with its action".into(),
            });
        }
        Ok(v)
    }
}

fn argmin_by(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, v) in values.enumerate() {
        if v < best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Greedy max-min selection of `n` indices. The first pick is the trajectory
/// closest to standing still; ties go to the lowest index throughout.
pub fn furthest_trajectory_sampling(demos: &[Trajectory], n: usize) -> Result<Vec<usize>> {
    if demos.len() < n {
        return Err(Error::InsufficientDemos {
            required: n,
            available: demos.len(),
        });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let t = demos[0].horizon();
    for d in demos {
        if d.horizon() != t {
            return Err(Error::HorizonMismatch {
                expected: t,
                found: d.horizon(),
            });
        }
    }
    let zero = vec![Vec2::ZERO; t];
    let first = argmin_by(demos.iter().map(|d| ade_unchecked(&d.points, &zero)));
    let mut picked = vec![first];
    let mut min_dist: Vec<f64> = demos
        .iter()
        .map(|d| ade_unchecked(&d.points, &demos[first].points))
        .collect();
    while picked.len() < n {
        let mut best = (usize::MAX, f64::NEG_INFINITY);
        for (i, &d) in min_dist.iter().enumerate() {
            if d > best.1 {
                best = (i, d);
            }
        }
        if best.1 <= 0.0 {
            return Err(Error::DegenerateInput(format!(
                "only {} distinct trajectories, {n} requested",
                picked.len()
            )));
        }
        let next = best.0;
        picked.push(next);
        let p = &demos[next].points;
        for (d, md) in demos.iter().zip(min_dist.iter_mut()) {
            let v = ade_unchecked(&d.points, p);
            if v < *md {
                *md = v;
            }
        }
    }
    Ok(picked)
}

pub fn build_vocabulary(demos: &[Trajectory], n: usize, dt_wp: f64, bands: usize) -> Result<PlanningVocabulary> {
    let idx = furthest_trajectory_sampling(demos, n)?;
    PlanningVocabulary::new(idx.into_iter().map(|i| demos[i].clone()).collect(), dt_wp, bands)
}

/// Largest distance from any demo to its nearest vocabulary action.
pub fn coverage(vocab: &PlanningVocabulary, demos: &[Trajectory]) -> f64 {
    demos
        .iter()
        .map(|d| {
            vocab
                .actions
                .iter()
                .map(|a| ade_unchecked(&a.points, &d.points))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

pub fn nearest_vocab_action(vocab: &PlanningVocabulary, a: &Trajectory) -> Result<usize> {
    vocab.check_horizon(a.horizon())?;
    Ok(argmin_by(
        vocab.actions.iter().map(|v| ade_unchecked(&v.points, &a.points)),
    ))
}

pub fn save_vocabulary(vocab: &PlanningVocabulary, path: &Path) -> Result<()> {
    write_atomic(path, &vocab.to_bytes())
}

pub fn load_vocabulary(path: &Path) -> Result<PlanningVocabulary> {
    PlanningVocabulary::from_bytes(&read_file(path)?)
}

/// Loads a vocabulary and rejects it unless its horizon equals `horizon`.
pub fn load_vocabulary_for(path: &Path, horizon: usize) -> Result<PlanningVocabulary> {
    let v = load_vocabulary(path)?;
    v.check_horizon(horizon)?;
    Ok(v)
}
