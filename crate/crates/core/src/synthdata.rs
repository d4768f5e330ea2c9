//! Synthetic audio-video-text triplets with known temporal event structure,
//! plus the binary dataset file format.
//!
//! A clip is `T` one-second rows. Each scripted event occupies an integer
//! span of rows and a class-specific frequency band in the mel-spectrogram;
//! the paired "video" is a per-frame feature matrix carrying the same class
//! pattern over the same rows. Every sample also gets a background ambience
//! drawn from a fixed palette: a low-energy spectral envelope under the mel
//! noise floor and a matching visual signature on otherwise silent frames.
//! The ambience is what makes silent seconds of different clips mutually
//! distinguishable across modalities.
//!
//! Rendering is a pure function of (script, seed, config); all rendered
//! values are rounded to f32 so a dataset file round-trips bit-exactly.

use crate::error::{Error, Result};
use crate::numerics::{l2_normalize, DenseMatrix, Rng};

use std::io::{Read, Write};
use std::path::Path;

/// Reserved substream index for palette construction.
pub const PALETTE_STREAM: u64 = 1 << 40;
/// Substream bases for the three dataset splits.
pub const TRAIN_STREAM_BASE: u64 = 0;
pub const VAL_STREAM_BASE: u64 = 1 << 41;
pub const TEST_STREAM_BASE: u64 = 1 << 42;

/// Token vocabulary: 0 = begin, 1 = end, 2..2+K = event classes.
pub const TOKEN_BOS: u32 = 0;
pub const TOKEN_EOS: u32 = 1;
pub const TOKEN_CLASS_BASE: u32 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Clip length in seconds (= mel rows).
    pub clip_len: usize,
    /// Mel frequency bins.
    pub freq_bins: usize,
    /// Per-frame video feature dimension.
    pub video_dim: usize,
    /// Number of event classes.
    pub num_classes: usize,
    /// Maximum events per clip.
    pub max_events: usize,
    /// Size of the background ambience palette.
    pub ambience_palette: usize,
    /// Seed the palette patterns are derived from.
    pub palette_seed: u64,
    /// Mel noise-floor level.
    pub noise_floor: f64,
    /// Mel energy of an active class band.
    pub event_amp: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            clip_len: 10,
            freq_bins: 64,
            video_dim: 32,
            num_classes: 8,
            max_events: 2,
            ambience_palette: 256,
            palette_seed: 0x5eed_9a17,
            noise_floor: 0.02,
            event_amp: 3.5,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clip_len < 1 {
            return Err(Error::config("clip_len must be >= 1"));
        }
        if self.num_classes < 1 || self.freq_bins < self.num_classes {
            return Err(Error::config("need freq_bins >= num_classes >= 1"));
        }
        if self.max_events < 1 {
            return Err(Error::config("max_events must be >= 1"));
        }
        if self.ambience_palette < 1 {
            return Err(Error::config("ambience_palette must be >= 1"));
        }
        if !(self.noise_floor > 0.0) || !(self.event_amp > 3.0 * self.noise_floor) {
            return Err(Error::config(
                "event_amp must dominate the noise floor for activity recovery",
            ));
        }
        Ok(())
    }

    pub fn vocab_size(&self) -> usize {
        self.num_classes + TOKEN_CLASS_BASE as usize
    }

    /// Frequency region `[lo, hi)` owned by a class.
    pub fn class_band(&self, class_id: u32) -> (usize, usize) {
        let k = self.num_classes;
        let c = class_id as usize;
        (c * self.freq_bins / k, (c + 1) * self.freq_bins / k)
    }

    /// Hot sub-band of an event: half the class region wide, sliding up the
    /// region with the event's onset. Event timing is thereby part of the
    /// clip's spectral content — the stand-in for how a passing source hits
    /// different frequencies at different times — so clip-level spectral
    /// summaries stay timing-aware.
    pub fn event_band(&self, class_id: u32, onset: f64) -> (usize, usize) {
        let (lo, hi) = self.class_band(class_id);
        let region = hi - lo;
        let width = (region / 2).max(1);
        let max_shift = (region - width) as f64;
        let span = (self.clip_len.saturating_sub(1)).max(1) as f64;
        let shift = (max_shift * onset / span).round() as usize;
        (lo + shift, lo + shift + width)
    }
}

/// One scripted sound event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    /// Start time in seconds from clip start.
    pub onset: f64,
    /// Length in seconds.
    pub duration: f64,
    pub class_id: u32,
}

/// Ground-truth temporal structure of one clip: events sorted by onset, each
/// contained in `[0, clip_len]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventScript {
    pub events: Vec<Event>,
}

impl EventScript {
    pub fn validate(&self, clip_len: usize, num_classes: usize) -> Result<()> {
        let mut prev_onset = f64::NEG_INFINITY;
        for (i, e) in self.events.iter().enumerate() {
            if !(e.onset >= 0.0) || !(e.duration > 0.0) {
                return Err(Error::invalid(format!("event {i} degenerate: {e:?}")));
            }
            if e.onset + e.duration > clip_len as f64 + 1e-9 {
                return Err(Error::invalid(format!(
                    "event {i} exceeds clip length {clip_len}: {e:?}"
                )));
            }
            if e.class_id as usize >= num_classes {
                return Err(Error::invalid(format!(
                    "event {i} class {} out of range [0, {num_classes})",
                    e.class_id
                )));
            }
            if e.onset < prev_onset {
                return Err(Error::invalid("events not sorted by onset"));
            }
            prev_onset = e.onset;
        }
        Ok(())
    }

    /// Rows in which any event is active.
    pub fn activity_mask(&self, clip_len: usize) -> Vec<bool> {
        let mut mask = vec![false; clip_len];
        for e in &self.events {
            let start = e.onset.floor() as usize;
            let end = ((e.onset + e.duration).ceil() as usize).min(clip_len);
            for m in mask.iter_mut().take(end).skip(start) {
                *m = true;
            }
        }
        mask
    }

    /// Onset of the first event, in seconds.
    pub fn first_onset(&self) -> Option<f64> {
        self.events.first().map(|e| e.onset)
    }

    /// Class with the largest total duration; ties go to the earlier onset.
    pub fn dominant_class(&self) -> Option<u32> {
        let mut best: Option<(u32, f64, f64)> = None; // (class, total_dur, first_onset)
        for e in &self.events {
            let mut total = 0.0;
            let mut first = f64::INFINITY;
            for e2 in &self.events {
                if e2.class_id == e.class_id {
                    total += e2.duration;
                    first = first.min(e2.onset);
                }
            }
            match best {
                None => best = Some((e.class_id, total, first)),
                Some((_, bt, bf)) => {
                    if total > bt + 1e-12 || ((total - bt).abs() <= 1e-12 && first < bf) {
                        best = Some((e.class_id, total, first));
                    }
                }
            }
        }
        best.map(|(c, _, _)| c)
    }
}

/// One synthetic triplet. `mel` is `clip_len x freq_bins`, `frame_features`
/// is `clip_len x video_dim`; row counts always match.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletSample {
    pub mel: DenseMatrix,
    pub frame_features: DenseMatrix,
    pub token_ids: Vec<u32>,
    pub script: EventScript,
}

/// Deterministic ambience/class pattern palette derived from a seed.
#[derive(Debug, Clone)]
pub struct Palette {
    /// Per-ambience spectral modulation in [-1, 1], length `freq_bins` each.
    pub envelopes: Vec<Vec<f64>>,
    /// Per-ambience visual signature, norm 0.5.
    pub visual_ambience: Vec<Vec<f64>>,
    /// Per-class visual pattern, unit norm.
    pub visual_class: Vec<Vec<f64>>,
}

/// Norm of the ambience visual signature rows.
pub const AMBIENCE_VIS_NORM: f64 = 0.5;
/// Row-norm threshold separating active from silent video frames.
pub const VIDEO_ACTIVITY_THRESHOLD: f64 = 0.75;

impl Palette {
    pub fn build(cfg: &SynthConfig) -> Palette {
        let mut envelopes = Vec::with_capacity(cfg.ambience_palette);
        let mut visual_ambience = Vec::with_capacity(cfg.ambience_palette);
        for a in 0..cfg.ambience_palette {
            let mut rng = Rng::substream(cfg.palette_seed, PALETTE_STREAM + a as u64);
            let env: Vec<f64> = (0..cfg.freq_bins).map(|_| rng.next_range(-1.0, 1.0)).collect();
            let raw: Vec<f64> = (0..cfg.video_dim).map(|_| rng.next_normal()).collect();
            let mut vis = l2_normalize(&raw).expect("normal draw is nonzero");
            for v in vis.iter_mut() {
                *v *= AMBIENCE_VIS_NORM;
            }
            envelopes.push(env);
            visual_ambience.push(vis);
        }
        let mut visual_class = Vec::with_capacity(cfg.num_classes);
        for c in 0..cfg.num_classes {
            let mut rng =
                Rng::substream(cfg.palette_seed, PALETTE_STREAM + (1 << 20) + c as u64);
            let raw: Vec<f64> = (0..cfg.video_dim).map(|_| rng.next_normal()).collect();
            visual_class.push(l2_normalize(&raw).expect("normal draw is nonzero"));
        }
        Palette {
            envelopes,
            visual_ambience,
            visual_class,
        }
    }
}

/// Draw a script with 1..=max_events non-overlapping integer-second events.
pub fn generate_script(
    rng: &mut Rng,
    clip_len: usize,
    max_events: usize,
    num_classes: usize,
) -> EventScript {
    assert!(clip_len >= 1 && max_events >= 1 && num_classes >= 1);
    let want = 1 + rng.next_below(max_events as u64) as usize;

    // Durations in {2, 3, 4} seconds, clamped to the clip.
    let mut durations: Vec<usize> = (0..want)
        .map(|_| (2 + rng.next_below(3) as usize).min(clip_len))
        .collect();
    // Drop events until the total fits.
    while durations.iter().sum::<usize>() > clip_len {
        durations.pop();
    }

    let total: usize = durations.iter().sum();
    let mut free = clip_len - total;
    let mut events = Vec::with_capacity(durations.len());
    let mut cursor = 0usize;
    for dur in durations {
        let gap = if free > 0 {
            rng.next_below(free as u64 + 1) as usize
        } else {
            0
        };
        free -= gap;
        cursor += gap;
        let class_id = rng.next_below(num_classes as u64) as u32;
        events.push(Event {
            onset: cursor as f64,
            duration: dur as f64,
            class_id,
        });
        cursor += dur;
    }
    EventScript { events }
}

/// Render the triplet for a script. Pure in (script, rng seed, cfg).
pub fn render_triplet(script: &EventScript, rng: &mut Rng, cfg: &SynthConfig) -> Result<TripletSample> {
    script.validate(cfg.clip_len, cfg.num_classes)?;
    let palette = Palette::build(cfg);
    render_triplet_with_palette(script, rng, cfg, &palette)
}

/// Same as [`render_triplet`] but reusing a prebuilt palette (bulk generation).
pub fn render_triplet_with_palette(
    script: &EventScript,
    rng: &mut Rng,
    cfg: &SynthConfig,
    palette: &Palette,
) -> Result<TripletSample> {
    script.validate(cfg.clip_len, cfg.num_classes)?;
    let t = cfg.clip_len;
    let f = cfg.freq_bins;
    let amb_id = rng.next_below(cfg.ambience_palette as u64) as usize;
    let env = &palette.envelopes[amb_id];

    // Noise floor shaped by the ambience envelope on silent rows; event rows
    // duck the background to a flat generic floor (loud sources mask the
    // ambience), so the sound of an active second is purely event content.
    // The band amplitude is modulated by the ambience envelope, and a
    // clip-wide loudness ramp makes event energy grow with absolute time, so
    // a clip's overall spectral summary depends on WHEN its events happen,
    // not just which ones.
    let activity = script.activity_mask(t);
    let mut mel = DenseMatrix::from_fn(t, f, |row, col| {
        if activity[row] {
            cfg.noise_floor
        } else {
            cfg.noise_floor * (1.0 + 0.6 * env[col])
        }
    });
    for e in &script.events {
        let (lo, hi) = cfg.event_band(e.class_id, e.onset);
        let start = e.onset.floor() as usize;
        let end = ((e.onset + e.duration).ceil() as usize).min(t);
        for row in start..end {
            let level = clip_loudness(row, t) * event_decay(row - start);
            for col in lo..hi {
                let v = mel.get(row, col)
                    + cfg.event_amp * (1.0 + 0.4 * env[col]) * level;
                mel.set(row, col, v);
            }
        }
        // Reverberant tail: the event's sub-band keeps ringing quietly after
        // it ends, well under the activity threshold. Post-event seconds are
        // thereby audibly different from pre-event seconds.
        for row in end..t {
            let ring = echo_level(row - end);
            for col in lo..hi {
                let v = mel.get(row, col)
                    + cfg.event_amp * (1.0 + 0.4 * env[col]) * ring;
                mel.set(row, col, v);
            }
        }
    }

    let amb_vis = &palette.visual_ambience[amb_id];
    let mut frames = DenseMatrix::zeros(t, cfg.video_dim);
    for row in 0..t {
        let dst = frames.row_mut(row);
        dst.copy_from_slice(amb_vis);
        if activity[row] {
            for e in &script.events {
                let start = e.onset.floor() as usize;
                let end = ((e.onset + e.duration).ceil() as usize).min(t);
                if row >= start && row < end {
                    let pat = &palette.visual_class[e.class_id as usize];
                    for (d, &p) in dst.iter_mut().zip(pat.iter()) {
                        *d += p;
                    }
                }
            }
        }
    }

    // Round to f32 so the dataset file round-trips bit-exactly.
    let mel = mel.map(|v| v as f32 as f64);
    let frames = frames.map(|v| v as f32 as f64);

    let mut token_ids = Vec::with_capacity(script.events.len() + 2);
    token_ids.push(TOKEN_BOS);
    for e in &script.events {
        token_ids.push(TOKEN_CLASS_BASE + e.class_id);
    }
    token_ids.push(TOKEN_EOS);

    Ok(TripletSample {
        mel,
        frame_features: frames,
        token_ids,
        script: script.clone(),
    })
}

/// Clip-wide loudness ramp applied to event bands: rises linearly from
/// 0.825 at the first second to 1.175 at the last.
pub fn clip_loudness(row: usize, clip_len: usize) -> f64 {
    if clip_len <= 1 {
        return 1.0;
    }
    1.0 + 0.35 * (row as f64 / (clip_len - 1) as f64 - 0.5)
}

/// Attack-decay envelope within an event: the first second is the loudest,
/// later seconds fall off geometrically.
pub fn event_decay(phase: usize) -> f64 {
    0.9f64.powi(phase as i32)
}

/// Echo tail level, relative to the event amplitude, `gap` seconds after the
/// event ends. Quiet enough that tail rows never cross the activity
/// threshold, loud enough to dominate the noise floor in its band.
pub fn echo_level(gap: usize) -> f64 {
    0.09 * 0.6f64.powi(gap as i32)
}

/// Rows whose mean mel energy exceeds 3x the nominal noise floor.
pub fn audio_activity_mask(mel: &DenseMatrix, noise_floor: f64) -> Vec<bool> {
    (0..mel.rows())
        .map(|r| {
            let row = mel.row(r);
            let mean = row.iter().sum::<f64>() / row.len() as f64;
            mean > 3.0 * noise_floor
        })
        .collect()
}

/// Rows whose frame-feature norm exceeds the activity threshold.
pub fn video_activity_mask(frames: &DenseMatrix) -> Vec<bool> {
    (0..frames.rows())
        .map(|r| crate::numerics::l2_norm(frames.row(r)) > VIDEO_ACTIVITY_THRESHOLD)
        .collect()
}

// ---------------------------------------------------------------------------
// Dataset file format
// ---------------------------------------------------------------------------

const MAGIC: &[u8; 8] = b"DAVADATA";
const VERSION: u32 = 1;

/// Little-endian binary dataset:
/// magic "DAVADATA", u32 version=1, u32 sample count, u32 T, u32 F, u32 D_v,
/// u32 K; per sample: u32 event count, events as (f32 onset, f32 duration,
/// u32 class), mel as T*F f32, frame features as T*D_v f32, u32 token count,
/// tokens as u32.
pub fn write_dataset(path: &Path, cfg: &SynthConfig, samples: &[TripletSample]) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(samples.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(cfg.clip_len as u32).to_le_bytes());
    buf.extend_from_slice(&(cfg.freq_bins as u32).to_le_bytes());
    buf.extend_from_slice(&(cfg.video_dim as u32).to_le_bytes());
    buf.extend_from_slice(&(cfg.num_classes as u32).to_le_bytes());

    for s in samples {
        if s.mel.rows() != cfg.clip_len
            || s.mel.cols() != cfg.freq_bins
            || s.frame_features.rows() != cfg.clip_len
            || s.frame_features.cols() != cfg.video_dim
        {
            return Err(Error::shape("sample shape disagrees with dataset header"));
        }
        buf.extend_from_slice(&(s.script.events.len() as u32).to_le_bytes());
        for e in &s.script.events {
            buf.extend_from_slice(&(e.onset as f32).to_le_bytes());
            buf.extend_from_slice(&(e.duration as f32).to_le_bytes());
            buf.extend_from_slice(&e.class_id.to_le_bytes());
        }
        for &v in s.mel.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        for &v in s.frame_features.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        buf.extend_from_slice(&(s.token_ids.len() as u32).to_le_bytes());
        for &tok in &s.token_ids {
            buf.extend_from_slice(&tok.to_le_bytes());
        }
    }

    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.offset + n > self.bytes.len() {
            return Err(Error::Format {
                offset: self.offset as u64,
                msg: format!(
                    "truncated file: needed {n} bytes for {what}, {} remain",
                    self.bytes.len() - self.offset
                ),
            });
        }
        let out = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        let b = self.take(4, what)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Read a dataset file, returning the header config and the samples.
pub fn read_dataset(path: &Path) -> Result<(SynthConfig, Vec<TripletSample>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cur = Cursor {
        bytes: &bytes,
        offset: 0,
    };

    let magic = cur.take(8, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: format!("bad magic {:02x?}", magic),
        });
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(Error::Format {
            offset: 8,
            msg: format!("unsupported version {version}, expected {VERSION}"),
        });
    }
    let count = cur.u32("sample count")? as usize;
    let t = cur.u32("T")? as usize;
    let f = cur.u32("F")? as usize;
    let d_v = cur.u32("D_v")? as usize;
    let k = cur.u32("K")? as usize;

    let cfg = SynthConfig {
        clip_len: t,
        freq_bins: f,
        video_dim: d_v,
        num_classes: k,
        ..SynthConfig::default()
    };

    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let n_events = cur.u32("event count")? as usize;
        let mut events = Vec::with_capacity(n_events);
        for _ in 0..n_events {
            let onset = cur.f32("event onset")? as f64;
            let duration = cur.f32("event duration")? as f64;
            let class_id = cur.u32("event class")?;
            events.push(Event {
                onset,
                duration,
                class_id,
            });
        }
        let mut mel_data = Vec::with_capacity(t * f);
        for _ in 0..t * f {
            mel_data.push(cur.f32("mel value")? as f64);
        }
        let mut frame_data = Vec::with_capacity(t * d_v);
        for _ in 0..t * d_v {
            frame_data.push(cur.f32("frame value")? as f64);
        }
        let n_tokens = cur.u32("token count")? as usize;
        let mut token_ids = Vec::with_capacity(n_tokens);
        for _ in 0..n_tokens {
            token_ids.push(cur.u32("token")?);
        }
        samples.push(TripletSample {
            mel: DenseMatrix::from_parts(t, f, mel_data),
            frame_features: DenseMatrix::from_parts(t, d_v, frame_data),
            token_ids,
            script: EventScript { events },
        });
    }
    if cur.offset != bytes.len() {
        return Err(Error::Format {
            offset: cur.offset as u64,
            msg: format!("{} trailing bytes after last sample", bytes.len() - cur.offset),
        });
    }
    Ok((cfg, samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SynthConfig {
        SynthConfig::default()
    }

    #[test]
    fn single_event_script_fits_clip() {
        let mut rng = Rng::from_seed(0);
        let s = generate_script(&mut rng, 10, 1, 8);
        assert_eq!(s.events.len(), 1);
        let e = s.events[0];
        assert!(e.onset + e.duration <= 10.0);
        s.validate(10, 8).unwrap();
    }

    #[test]
    fn script_generation_is_deterministic() {
        let a = generate_script(&mut Rng::from_seed(77), 10, 3, 8);
        let b = generate_script(&mut Rng::from_seed(77), 10, 3, 8);
        assert_eq!(a, b);
    }

    #[test]
    fn thousand_seeds_all_valid() {
        for seed in 0..1000u64 {
            let mut rng = Rng::from_seed(seed);
            let s = generate_script(&mut rng, 10, 3, 8);
            s.validate(10, 8)
                .unwrap_or_else(|e| panic!("seed {seed}: {e}"));
            assert!(!s.events.is_empty());
        }
    }

    #[test]
    fn active_rows_carry_energy() {
        let cfg = cfg();
        let script = EventScript {
            events: vec![Event {
                onset: 3.0,
                duration: 2.0,
                class_id: 5,
            }],
        };
        let mut rng = Rng::from_seed(1);
        let s = render_triplet(&script, &mut rng, &cfg).unwrap();
        let row_mean = |r: usize| {
            let row = s.mel.row(r);
            row.iter().sum::<f64>() / row.len() as f64
        };
        let active_mean = (row_mean(3) + row_mean(4)) / 2.0;
        let other_mean: f64 = (0..10)
            .filter(|r| *r != 3 && *r != 4)
            .map(row_mean)
            .sum::<f64>()
            / 8.0;
        assert!(
            active_mean > 5.0 * other_mean,
            "active {active_mean} vs floor {other_mean}"
        );
    }

    #[test]
    fn silent_rows_sit_at_noise_floor() {
        let cfg = cfg();
        let script = EventScript {
            events: vec![Event {
                onset: 0.0,
                duration: 2.0,
                class_id: 0,
            }],
        };
        let mut rng = Rng::from_seed(2);
        let s = render_triplet(&script, &mut rng, &cfg).unwrap();
        for r in 2..10 {
            let row = s.mel.row(r);
            let mean = row.iter().sum::<f64>() / row.len() as f64;
            assert!(mean < 2.0 * cfg.noise_floor, "row {r} mean {mean}");
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn activity_masks_match_script_across_seeds() {
        let cfg = cfg();
        let palette = Palette::build(&cfg);
        for seed in 0..100u64 {
            let mut rng = Rng::from_seed(seed);
            let script = generate_script(&mut rng, cfg.clip_len, cfg.max_events, cfg.num_classes);
            let s = render_triplet_with_palette(&script, &mut rng, &cfg, &palette).unwrap();
            let truth = script.activity_mask(cfg.clip_len);
            assert_eq!(audio_activity_mask(&s.mel, cfg.noise_floor), truth, "audio, seed {seed}");
            assert_eq!(video_activity_mask(&s.frame_features), truth, "video, seed {seed}");
        }
    }

    #[test]
    fn token_sequence_is_classes_plus_delimiters() {
        let cfg = cfg();
        let script = EventScript {
            events: vec![
                Event {
                    onset: 1.0,
                    duration: 2.0,
                    class_id: 3,
                },
                Event {
                    onset: 5.0,
                    duration: 3.0,
                    class_id: 7,
                },
            ],
        };
        let mut rng = Rng::from_seed(3);
        let s = render_triplet(&script, &mut rng, &cfg).unwrap();
        assert_eq!(s.token_ids, vec![TOKEN_BOS, 5, 9, TOKEN_EOS]);
        assert_eq!(s.token_ids.len(), script.events.len() + 2);
    }

    #[test]
    fn rendering_is_pure_in_script_seed_cfg() {
        let cfg = cfg();
        let script = generate_script(&mut Rng::from_seed(9), 10, 2, 8);
        let a = render_triplet(&script, &mut Rng::from_seed(4), &cfg).unwrap();
        let b = render_triplet(&script, &mut Rng::from_seed(4), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dataset_roundtrip_is_exact() {
        let cfg = cfg();
        let palette = Palette::build(&cfg);
        let mut samples = Vec::new();
        for seed in 0..16u64 {
            let mut rng = Rng::from_seed(seed);
            let script = generate_script(&mut rng, cfg.clip_len, cfg.max_events, cfg.num_classes);
            samples.push(render_triplet_with_palette(&script, &mut rng, &cfg, &palette).unwrap());
        }
        let dir = std::env::temp_dir().join("vata_synthdata_roundtrip");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ds.bin");
        write_dataset(&path, &cfg, &samples).unwrap();
        let (rcfg, rsamples) = read_dataset(&path).unwrap();
        assert_eq!(rcfg.clip_len, cfg.clip_len);
        assert_eq!(rcfg.num_classes, cfg.num_classes);
        assert_eq!(rsamples, samples);
    }

    #[test]
    fn truncated_file_is_a_format_error() {
        let cfg = cfg();
        let mut rng = Rng::from_seed(5);
        let script = generate_script(&mut rng, cfg.clip_len, cfg.max_events, cfg.num_classes);
        let sample = render_triplet(&script, &mut rng, &cfg).unwrap();
        let dir = std::env::temp_dir().join("vata_synthdata_trunc");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ds.bin");
        write_dataset(&path, &cfg, &[sample]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let cut = dir.join("cut.bin");
        std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
        match read_dataset(&cut) {
            Err(Error::Format { .. }) => {}
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        let dir = std::env::temp_dir().join("vata_synthdata_magic");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.bin");
        std::fs::write(&path, b"NOTACEAD0000000000000000000000").unwrap();
        match read_dataset(&path) {
            Err(Error::Format { offset: 0, .. }) => {}
            other => panic!("expected format error at 0, got {other:?}"),
        }
    }

    #[test]
    fn header_only_file_is_an_empty_dataset() {
        let cfg = cfg();
        let dir = std::env::temp_dir().join("vata_synthdata_empty");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("empty.bin");
        write_dataset(&path, &cfg, &[]).unwrap();
        let (_, samples) = read_dataset(&path).unwrap();
        assert!(samples.is_empty());
    }

    #[test]
    fn dominant_class_prefers_duration_then_onset() {
        let s = EventScript {
            events: vec![
                Event {
                    onset: 0.0,
                    duration: 2.0,
                    class_id: 1,
                },
                Event {
                    onset: 4.0,
                    duration: 3.0,
                    class_id: 2,
                },
            ],
        };
        assert_eq!(s.dominant_class(), Some(2));
        let tie = EventScript {
            events: vec![
                Event {
                    onset: 0.0,
                    duration: 2.0,
                    class_id: 4,
                },
                Event {
                    onset: 5.0,
                    duration: 2.0,
                    class_id: 3,
                },
            ],
        };
        assert_eq!(tie.dominant_class(), Some(4));
    }
}
