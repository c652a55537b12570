//! Multi-modal news data: sample model, seeded synthetic corpus
//! generator, event-disjoint splitting, and dataset IO (JSONL manifest +
//! binary PPM images).
//!
//! The generator plants two tunable class signals so modality dominance
//! can be dialed for bias experiments: fake images carry a bright
//! gradient motif in the top-left corner with probability
//! `image_signal`, and fake texts carry reserved marker tokens with
//! probability `text_signal`. Every event contributes its own background
//! texture so splits can be made event-disjoint and event-adversarial
//! training has something to unlearn.

use crate::alphabet::{Alphabet, SymbolId};
use crate::ces;
use crate::error::{Error, Result};
use crate::ppm;
use crate::rng::{self, derive_seed, streams};
use crate::tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// Side of the square class motif stamped on fake images.
pub const MOTIF_SIZE: usize = 6;

/// Reserved symbols that only fake texts carry (when the text signal
/// fires). All three have substitution neighbors in the default CES.
pub const FAKE_MARKERS: [char; 3] = ['!', '$', '#'];

const VOCAB: [&str; 28] = [
    "the", "a", "crowd", "official", "report", "video", "photo", "witness", "scene", "police",
    "city", "river", "bridge", "people", "night", "crash", "fire", "rescue", "local", "news",
    "today", "live", "breaking", "update", "area", "street", "home", "water",
];

const EVENT_WORDS: [&str; 12] = [
    "storm", "quake", "flood", "rally", "market", "launch", "strike", "derby", "summit",
    "eclipse", "wildfire", "blizzard",
];

/// One multi-modal item: character tokens, an RGB image, a binary label
/// and the event it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct NewsSample {
    pub id: String,
    pub tokens: Vec<SymbolId>,
    /// `[3, h, w]`, values in `[0,1]`.
    pub image: Tensor,
    /// 0 = real, 1 = fake.
    pub label: u8,
    pub event_id: u32,
}

/// Generator configuration; fully determines a dataset together with the
/// seed it carries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_samples: usize,
    pub image_h: usize,
    pub image_w: usize,
    pub n_events: u32,
    /// Probability that a fake image carries the class motif.
    pub image_signal: f32,
    /// Probability that a fake text carries marker tokens.
    pub text_signal: f32,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_samples: 2000,
            image_h: 32,
            image_w: 32,
            n_events: 8,
            image_signal: 0.9,
            text_signal: 0.5,
            max_len: 64,
            seed: 42,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.image_signal) || !(0.0..=1.0).contains(&self.text_signal) {
            return Err(Error::validation("signals must lie in [0,1]"));
        }
        if self.n_events < 2 {
            return Err(Error::validation("n_events must be >= 2"));
        }
        if self.image_h < 12 || self.image_w < 12 {
            return Err(Error::validation("images must be at least 12x12"));
        }
        if self.max_len < 16 {
            return Err(Error::validation("max_len must be >= 16"));
        }
        Ok(())
    }
}

/// Dataset metadata recorded alongside the samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub rng: String,
    pub config: GenConfig,
}

/// An immutable collection of samples plus the symbol table they are
/// encoded against.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<NewsSample>,
    pub alphabet: Alphabet,
    pub meta: DatasetMeta,
}

impl Dataset {
    /// Checks the documented invariants; used after load and in tests.
    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        let mut dims: Option<(usize, usize)> = None;
        for s in &self.samples {
            if !ids.insert(s.id.as_str()) {
                return Err(Error::validation(format!("duplicate sample id {}", s.id)));
            }
            if s.label > 1 {
                return Err(Error::validation(format!(
                    "sample {}: label {} not in {{0,1}}",
                    s.id, s.label
                )));
            }
            if s.tokens.is_empty() || s.tokens.len() > self.meta.config.max_len {
                return Err(Error::validation(format!(
                    "sample {}: token length {} out of 1..={}",
                    s.id,
                    s.tokens.len(),
                    self.meta.config.max_len
                )));
            }
            let sh = s.image.shape();
            if sh.len() != 3 || sh[0] != 3 {
                return Err(Error::dim(format!("sample {}: image shape {sh:?}", s.id)));
            }
            match dims {
                None => dims = Some((sh[1], sh[2])),
                Some(d) if d != (sh[1], sh[2]) => {
                    return Err(Error::validation(format!(
                        "sample {}: image size {}x{} differs from {}x{}",
                        s.id, sh[1], sh[2], d.0, d.1
                    )))
                }
                _ => {}
            }
            if s.image.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::validation(format!(
                    "sample {}: pixel out of [0,1]",
                    s.id
                )));
            }
            for &t in &s.tokens {
                if t as usize >= self.alphabet.len() {
                    return Err(Error::validation(format!(
                        "sample {}: token id {t} outside alphabet",
                        s.id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Distinct event ids in sample order of first appearance.
    pub fn event_ids(&self) -> Vec<u32> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for s in &self.samples {
            if seen.insert(s.event_id) {
                out.push(s.event_id);
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// The default alphabet: printable ASCII plus every extension codepoint
/// used by the shipped CES table.
pub fn default_alphabet() -> Alphabet {
    Alphabet::ascii_with_extensions(ces::default_table().all_chars())
}

fn event_texture_params(event: u32) -> (f32, f32, f32, [f32; 3]) {
    let s = derive_seed(0x9e_77, event as u64);
    let fx = 1.0 + (s & 3) as f32; // 1..=4 cycles across the image
    let fy = 1.0 + ((s >> 2) & 3) as f32;
    let phase = ((s >> 4) & 0xFFFF) as f32 / 65536.0 * std::f32::consts::TAU;
    let mut base = [0.0f32; 3];
    for (c, b) in base.iter_mut().enumerate() {
        *b = 0.16 + 0.26 * (((s >> (20 + 8 * c)) & 0xFF) as f32 / 255.0);
    }
    (fx, fy, phase, base)
}

fn render_image<R: Rng>(cfg: &GenConfig, event: u32, with_motif: bool, rng: &mut R) -> Tensor {
    let (h, w) = (cfg.image_h, cfg.image_w);
    let (fx, fy, phase, base) = event_texture_params(event);
    let mut data = vec![0.0f32; 3 * h * w];
    for c in 0..3 {
        for i in 0..h {
            for j in 0..w {
                let t = (std::f32::consts::TAU
                    * (fx * i as f32 / h as f32 + fy * j as f32 / w as f32)
                    + phase)
                    .sin();
                let noise: f32 = rng.gen_range(-0.06..0.06);
                let v = (base[c] + 0.18 * t + noise).clamp(0.02, 0.68);
                data[(c * h + i) * w + j] = v;
            }
        }
    }
    if with_motif {
        for c in 0..3 {
            for i in 0..MOTIF_SIZE {
                for j in 0..MOTIF_SIZE {
                    let v = 0.78 + 0.22 * (i + j) as f32 / (2 * (MOTIF_SIZE - 1)) as f32;
                    data[(c * h + i) * w + j] = v;
                }
            }
        }
    }
    // snap to the 8-bit grid so file round trips are lossless
    for v in &mut data {
        *v = ppm::dequantize(ppm::quantize(*v));
    }
    Tensor::new(vec![3, h, w], data).expect("render dims consistent")
}

fn render_text<R: Rng>(
    cfg: &GenConfig,
    alphabet: &Alphabet,
    event: u32,
    with_markers: bool,
    rng: &mut R,
) -> Vec<SymbolId> {
    let n_words = rng.gen_range(4..9usize);
    let mut words: Vec<String> = (0..n_words)
        .map(|_| VOCAB[rng.gen_range(0..VOCAB.len())].to_string())
        .collect();
    let ev_word = EVENT_WORDS[event as usize % EVENT_WORDS.len()].to_string();
    let pos = rng.gen_range(0..=words.len());
    words.insert(pos, ev_word);
    if with_markers {
        let n_markers = rng.gen_range(2..=3usize);
        for _ in 0..n_markers {
            let m = FAKE_MARKERS[rng.gen_range(0..FAKE_MARKERS.len())];
            let pos = rng.gen_range(0..=words.len());
            words.insert(pos, m.to_string());
        }
    }
    let mut text = words.join(" ");
    while text.chars().count() > cfg.max_len {
        match text.rfind(' ') {
            Some(cut) => text.truncate(cut),
            None => {
                text = text.chars().take(cfg.max_len).collect();
                break;
            }
        }
    }
    alphabet.encode(&text).expect("generator emits alphabet symbols")
}

/// Generates a balanced, event-tagged synthetic corpus. Byte-identical
/// output for identical `(config, seed)`.
pub fn generate_synthetic(cfg: &GenConfig) -> Result<Dataset> {
    cfg.validate()?;
    let alphabet = default_alphabet();
    let mut rng = rng::stream(cfg.seed, streams::CORPUS);
    let mut samples = Vec::with_capacity(cfg.n_samples);
    for i in 0..cfg.n_samples {
        let label = (i % 2) as u8; // 0 real, 1 fake; balanced within one
        let event = rng.gen_range(0..cfg.n_events);
        let with_motif = label == 1 && rng.gen::<f32>() < cfg.image_signal;
        let with_markers = label == 1 && rng.gen::<f32>() < cfg.text_signal;
        let image = render_image(cfg, event, with_motif, &mut rng);
        let tokens = render_text(cfg, &alphabet, event, with_markers, &mut rng);
        samples.push(NewsSample {
            id: format!("s{i:05}"),
            tokens,
            image,
            label,
            event_id: event,
        });
    }
    let ds = Dataset {
        samples,
        alphabet,
        meta: DatasetMeta {
            rng: rng::RNG_NAME.to_string(),
            config: cfg.clone(),
        },
    };
    ds.validate()?;
    Ok(ds)
}

/// Partitions events across (train, test, val) so no event spans two
/// splits and sample counts approximate the ratios.
///
/// Deterministic given dataset order: events are ranked by size then id,
/// each is assigned to the split with the largest remaining deficit, and
/// a final fix-up guarantees no split is left empty.
pub fn split_event_disjoint(
    ds: &Dataset,
    ratios: (f64, f64, f64),
) -> Result<(Dataset, Dataset, Dataset)> {
    let (r_train, r_test, r_val) = ratios;
    if r_train <= 0.0 || r_test <= 0.0 || r_val <= 0.0 {
        return Err(Error::validation("split ratios must be positive"));
    }
    if (r_train + r_test + r_val - 1.0).abs() > 1e-6 {
        return Err(Error::validation("split ratios must sum to 1"));
    }
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for s in &ds.samples {
        *counts.entry(s.event_id).or_insert(0) += 1;
    }
    if counts.len() < 3 {
        return Err(Error::validation(format!(
            "need at least 3 distinct events to make 3 event-disjoint splits, got {}",
            counts.len()
        )));
    }
    let mut events: Vec<(u32, usize)> = counts.into_iter().collect();
    events.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));

    let n = ds.samples.len() as f64;
    let targets = [r_train * n, r_test * n, r_val * n];
    let mut assigned = [0.0f64; 3];
    let mut members: [Vec<(u32, usize)>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for &(ev, count) in &events {
        let mut best = 0;
        for k in 1..3 {
            if targets[k] - assigned[k] > targets[best] - assigned[best] {
                best = k;
            }
        }
        assigned[best] += count as f64;
        members[best].push((ev, count));
    }
    // never leave a split empty: donate the smallest event from the split
    // holding the most events
    loop {
        let Some(empty) = (0..3).find(|&k| members[k].is_empty()) else {
            break;
        };
        let donor = (0..3)
            .filter(|&k| members[k].len() >= 2)
            .max_by_key(|&k| members[k].len())
            .ok_or_else(|| Error::validation("cannot populate all three splits"))?;
        let (idx, _) = members[donor]
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| a.1.cmp(&b.1).then(a.0.cmp(&b.0)))
            .expect("donor nonempty");
        let ev = members[donor].remove(idx);
        members[empty].push(ev);
    }

    let pick = |evs: &[(u32, usize)]| -> Dataset {
        let set: BTreeSet<u32> = evs.iter().map(|&(e, _)| e).collect();
        Dataset {
            samples: ds
                .samples
                .iter()
                .filter(|s| set.contains(&s.event_id))
                .cloned()
                .collect(),
            alphabet: ds.alphabet.clone(),
            meta: ds.meta.clone(),
        }
    };
    Ok((pick(&members[0]), pick(&members[1]), pick(&members[2])))
}

#[derive(Serialize, Deserialize)]
struct ManifestRow {
    id: String,
    tokens: String,
    label: u8,
    event: u32,
    image: String,
}

#[derive(Serialize, Deserialize)]
struct MetaFile {
    version: u32,
    rng: String,
    config: GenConfig,
    alphabet: String,
}

/// Writes `meta.json`, `manifest.jsonl` and one PPM per sample under
/// `dir`.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    let images = dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(images.display().to_string(), e))?;
    let meta = MetaFile {
        version: 1,
        rng: ds.meta.rng.clone(),
        config: ds.meta.config.clone(),
        alphabet: ds.alphabet.symbols().iter().collect(),
    };
    let meta_path = dir.join("meta.json");
    std::fs::write(
        &meta_path,
        serde_json::to_string_pretty(&meta).expect("meta serializes"),
    )
    .map_err(|e| Error::io(meta_path.display().to_string(), e))?;

    let manifest_path = dir.join("manifest.jsonl");
    let mut manifest = std::io::BufWriter::new(
        std::fs::File::create(&manifest_path)
            .map_err(|e| Error::io(manifest_path.display().to_string(), e))?,
    );
    for s in &ds.samples {
        let rel = format!("images/{}.ppm", s.id);
        ppm::write_ppm(&dir.join(&rel), &s.image)?;
        let row = ManifestRow {
            id: s.id.clone(),
            tokens: ds.alphabet.decode(&s.tokens)?,
            label: s.label,
            event: s.event_id,
            image: rel,
        };
        let line = serde_json::to_string(&row).expect("row serializes");
        manifest
            .write_all(line.as_bytes())
            .and_then(|_| manifest.write_all(b"\n"))
            .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    }
    manifest
        .flush()
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))
}

/// Loads a dataset written by [`save_dataset`]. The round trip is
/// lossless field-for-field.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let meta_path = dir.join("meta.json");
    let meta_bytes =
        std::fs::read(&meta_path).map_err(|e| Error::io(meta_path.display().to_string(), e))?;
    let meta: MetaFile = serde_json::from_slice(&meta_bytes).map_err(|e| Error::Parse {
        path: meta_path.display().to_string(),
        line: 0,
        msg: e.to_string(),
    })?;
    let alphabet = Alphabet::new(meta.alphabet.chars().collect())?;

    let manifest_path = dir.join("manifest.jsonl");
    let file = std::fs::File::open(&manifest_path)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    let mut samples = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: ManifestRow = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: manifest_path.display().to_string(),
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        if row.label > 1 {
            return Err(Error::Parse {
                path: manifest_path.display().to_string(),
                line: lineno + 1,
                msg: format!("label {} not in {{0,1}}", row.label),
            });
        }
        let tokens = alphabet.encode(&row.tokens)?;
        let image = ppm::read_ppm(&dir.join(&row.image))?;
        samples.push(NewsSample {
            id: row.id,
            tokens,
            image,
            label: row.label,
            event_id: row.event,
        });
    }
    let ds = Dataset {
        samples,
        alphabet,
        meta: DatasetMeta {
            rng: meta.rng,
            config: meta.config,
        },
    };
    ds.validate()?;
    Ok(ds)
}
