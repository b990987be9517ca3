//! Flat-file dataset store for paired samples with disjoint-seed splits.
//!
//! Layout under the dataset root:
//!
//! ```text
//! root/manifest.txt            split sections with ids and seed ranges
//! root/{split}/{id}/audio.f32  little-endian f32, interleaved L/R, 6400 values
//! root/{split}/{id}/depth.pgm16  16-bit PGM, value = round(depth * 65535)
//! root/{split}/{id}/gray.pgm16   16-bit PGM, same encoding
//! root/{split}/{id}/meta.txt     key=value: seed, scene_hash, onset_index,
//!                                plus sha256 checksums of the payload files
//! ```
//!
//! Splits are assigned by disjoint scene-seed ranges, so test scenes can
//! never leak into training.

use crate::render::{simulate_sample, RenderOptions};
use crate::scene::random_scene;
use crate::signal::{BinauralClip, DepthMap, GrayImage, Waveform};
use crate::{CLIP_LEN, MAX_RANGE_M, SAMPLE_RATE};
use ndarray::{Array2, Array3};
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Desk-scale default split sizes (train, val, test).
pub const DEFAULT_SPLIT_COUNTS: (usize, usize, usize) = (3950, 750, 504);

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("manifest already exists at {0} (pass force to overwrite)")]
    ManifestExists(PathBuf),
    #[error("manifest not found at {0}")]
    MissingManifest(PathBuf),
    #[error("dataset corrupt: {0}")]
    Corrupt(String),
    #[error("checksum mismatch for {file} of sample {id}")]
    ChecksumMismatch { id: String, file: &'static str },
    #[error("split seed ranges overlap: {0} and {1}")]
    SplitRangesOverlap(Split, Split),
    #[error("unknown split `{0}`")]
    BadSplit(String),
    #[error("depth resolution {have} cannot serve requested resolution {want}")]
    ResolutionMismatch { have: usize, want: usize },
    #[error(transparent)]
    Sim(#[from] crate::acoustics::SimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self, DatasetError> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(DatasetError::BadSplit(other.to_string())),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One stored sample: audio window, ground-truth images, and provenance.
#[derive(Debug, Clone)]
pub struct SampleRecord {
    pub id: String,
    pub clip: BinauralClip,
    pub depth: DepthMap,
    pub gray: GrayImage,
    pub scene_seed: u64,
    pub split: Split,
}

#[derive(Debug, Clone, Default)]
pub struct SplitEntry {
    pub ids: Vec<String>,
    pub seed_lo: u64,
    pub seed_hi: u64, // inclusive
}

/// Parsed manifest: ids per split plus the observed seed ranges.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub resolution: usize,
    pub splits: BTreeMap<Split, SplitEntry>,
}

impl Manifest {
    pub fn count(&self, split: Split) -> usize {
        self.splits.get(&split).map_or(0, |e| e.ids.len())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let out = h.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

// --- pgm16 ------------------------------------------------------------

/// Encodes a [0, 1] image as a 16-bit binary PGM (`P5`, maxval 65535,
/// big-endian samples per the Netpbm spec).
pub fn encode_pgm16(values: &Array2<f64>) -> Vec<u8> {
    let (h, w) = values.dim();
    let mut out = format!("P5\n{w} {h}\n65535\n").into_bytes();
    for v in values.iter() {
        let q = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    out
}

/// Decodes a 16-bit PGM produced by [`encode_pgm16`] back to [0, 1] values.
pub fn decode_pgm16(bytes: &[u8]) -> Result<Array2<f64>, DatasetError> {
    let corrupt = |m: &str| DatasetError::Corrupt(format!("pgm16: {m}"));
    // binary data starts after the whitespace that terminates the 4th field
    let mut fields = 0;
    let mut in_field = false;
    let mut header_end = None;
    for (i, &b) in bytes.iter().enumerate() {
        if b.is_ascii_whitespace() {
            if in_field {
                fields += 1;
                in_field = false;
                if fields == 4 {
                    header_end = Some(i + 1);
                    break;
                }
            }
        } else {
            in_field = true;
        }
    }
    let header_end = header_end.ok_or_else(|| corrupt("truncated header"))?;
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|_| corrupt("bad header"))?;
    let mut tokens = header.split_ascii_whitespace();
    if tokens.next() != Some("P5") {
        return Err(corrupt("not a P5 file"));
    }
    let w: usize = tokens
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| corrupt("bad width"))?;
    let h: usize = tokens
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| corrupt("bad height"))?;
    if tokens.next() != Some("65535") {
        return Err(corrupt("expected maxval 65535"));
    }
    let data = &bytes[header_end..];
    if data.len() != w * h * 2 {
        return Err(corrupt("payload size mismatch"));
    }
    let mut values = Array2::zeros((h, w));
    for (i, chunk) in data.chunks_exact(2).enumerate() {
        let q = u16::from_be_bytes([chunk[0], chunk[1]]);
        values[[i / w, i % w]] = q as f64 / 65535.0;
    }
    Ok(values)
}

// --- audio ------------------------------------------------------------

fn encode_audio(clip: &BinauralClip) -> Vec<u8> {
    let mut out = Vec::with_capacity(CLIP_LEN * 2 * 4);
    for i in 0..CLIP_LEN {
        out.extend_from_slice(&clip.left.samples[i].to_le_bytes());
        out.extend_from_slice(&clip.right.samples[i].to_le_bytes());
    }
    out
}

fn decode_audio(bytes: &[u8], onset_index: usize) -> Result<BinauralClip, DatasetError> {
    if bytes.len() != CLIP_LEN * 2 * 4 {
        return Err(DatasetError::Corrupt(format!(
            "audio.f32 must hold {} values, got {} bytes",
            CLIP_LEN * 2,
            bytes.len()
        )));
    }
    let mut left = Vec::with_capacity(CLIP_LEN);
    let mut right = Vec::with_capacity(CLIP_LEN);
    for pair in bytes.chunks_exact(8) {
        left.push(f32::from_le_bytes([pair[0], pair[1], pair[2], pair[3]]));
        right.push(f32::from_le_bytes([pair[4], pair[5], pair[6], pair[7]]));
    }
    BinauralClip::new(
        Waveform::new(left, SAMPLE_RATE),
        Waveform::new(right, SAMPLE_RATE),
        onset_index,
    )
    .map_err(|e| DatasetError::Corrupt(e.to_string()))
}

// --- writer -----------------------------------------------------------

/// Streaming single-writer for a dataset directory.
pub struct DatasetWriter {
    root: PathBuf,
    resolution: Option<usize>,
    splits: BTreeMap<Split, SplitEntry>,
}

impl DatasetWriter {
    /// Starts a dataset at `root`, refusing to clobber an existing manifest
    /// unless `force` is set.
    pub fn create(root: &Path, force: bool) -> Result<Self, DatasetError> {
        let manifest = root.join("manifest.txt");
        if manifest.exists() && !force {
            return Err(DatasetError::ManifestExists(manifest));
        }
        fs::create_dir_all(root).map_err(io_err(root))?;
        Ok(Self {
            root: root.to_path_buf(),
            resolution: None,
            splits: BTreeMap::new(),
        })
    }

    /// Writes one sample's files and records it for the manifest.
    pub fn add(&mut self, rec: &SampleRecord, scene_hash: &str) -> Result<(), DatasetError> {
        let res = rec.depth.resolution;
        match self.resolution {
            None => self.resolution = Some(res),
            Some(r) if r != res => {
                return Err(DatasetError::Corrupt(format!(
                    "mixed depth resolutions {r} and {res}"
                )))
            }
            _ => {}
        }
        let dir = self.root.join(rec.split.as_str()).join(&rec.id);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;

        let audio = encode_audio(&rec.clip);
        let depth = encode_pgm16(&rec.depth.values);
        let gray = encode_pgm16(&rec.gray.values);
        let meta = format!(
            "seed={}\nscene_hash={}\nonset_index={}\naudio_sha256={}\ndepth_sha256={}\ngray_sha256={}\n",
            rec.scene_seed,
            scene_hash,
            rec.clip.onset_index,
            sha256_hex(&audio),
            sha256_hex(&depth),
            sha256_hex(&gray),
        );
        for (name, bytes) in [
            ("audio.f32", audio.as_slice()),
            ("depth.pgm16", depth.as_slice()),
            ("gray.pgm16", gray.as_slice()),
            ("meta.txt", meta.as_bytes()),
        ] {
            let path = dir.join(name);
            fs::write(&path, bytes).map_err(io_err(&path))?;
        }

        let entry = self.splits.entry(rec.split).or_insert_with(|| SplitEntry {
            ids: Vec::new(),
            seed_lo: rec.scene_seed,
            seed_hi: rec.scene_seed,
        });
        entry.seed_lo = entry.seed_lo.min(rec.scene_seed);
        entry.seed_hi = entry.seed_hi.max(rec.scene_seed);
        entry.ids.push(rec.id.clone());
        Ok(())
    }

    /// Validates split disjointness and writes the manifest.
    pub fn finish(self) -> Result<Manifest, DatasetError> {
        let splits: Vec<(&Split, &SplitEntry)> = self.splits.iter().collect();
        for i in 0..splits.len() {
            for j in i + 1..splits.len() {
                let (a, ea) = splits[i];
                let (b, eb) = splits[j];
                if ea.seed_lo <= eb.seed_hi && eb.seed_lo <= ea.seed_hi {
                    return Err(DatasetError::SplitRangesOverlap(*a, *b));
                }
            }
        }
        let manifest = Manifest {
            resolution: self.resolution.unwrap_or(0),
            splits: self.splits,
        };
        let path = self.root.join("manifest.txt");
        let mut f = fs::File::create(&path).map_err(io_err(&path))?;
        let mut text = format!("format=e2d-dataset-v1\nresolution={}\n", manifest.resolution);
        for (split, entry) in &manifest.splits {
            text.push_str(&format!(
                "[{split}]\ncount={}\nseed_lo={}\nseed_hi={}\n",
                entry.ids.len(),
                entry.seed_lo,
                entry.seed_hi
            ));
            for id in &entry.ids {
                text.push_str(id);
                text.push('\n');
            }
        }
        f.write_all(text.as_bytes()).map_err(io_err(&path))?;
        Ok(manifest)
    }
}

/// Writes a whole dataset in one call; see [`DatasetWriter`] for streaming.
pub fn write_dataset<'a, I>(samples: I, root: &Path, force: bool) -> Result<Manifest, DatasetError>
where
    I: IntoIterator<Item = (&'a SampleRecord, &'a str)>,
{
    let mut w = DatasetWriter::create(root, force)?;
    for (rec, hash) in samples {
        w.add(rec, hash)?;
    }
    w.finish()
}

/// Parses `root/manifest.txt`.
pub fn read_manifest(root: &Path) -> Result<Manifest, DatasetError> {
    let path = root.join("manifest.txt");
    if !path.exists() {
        return Err(DatasetError::MissingManifest(path));
    }
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let mut resolution = 0usize;
    let mut splits: BTreeMap<Split, SplitEntry> = BTreeMap::new();
    let mut current: Option<Split> = None;
    let mut declared: BTreeMap<Split, usize> = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let split = Split::parse(name)?;
            current = Some(split);
            splits.entry(split).or_default();
            continue;
        }
        if let Some((key, value)) = line.split_once('=') {
            let parse_u64 = || {
                value
                    .parse::<u64>()
                    .map_err(|_| DatasetError::Corrupt(format!("bad number in `{line}`")))
            };
            match (key, current) {
                ("format", None) => {
                    if value != "e2d-dataset-v1" {
                        return Err(DatasetError::Corrupt(format!("unknown format `{value}`")));
                    }
                }
                ("resolution", None) => resolution = parse_u64()? as usize,
                ("count", Some(s)) => {
                    declared.insert(s, parse_u64()? as usize);
                }
                ("seed_lo", Some(s)) => splits.get_mut(&s).unwrap().seed_lo = parse_u64()?,
                ("seed_hi", Some(s)) => splits.get_mut(&s).unwrap().seed_hi = parse_u64()?,
                _ => return Err(DatasetError::Corrupt(format!("unexpected line `{line}`"))),
            }
            continue;
        }
        match current {
            Some(s) => splits.get_mut(&s).unwrap().ids.push(line.to_string()),
            None => return Err(DatasetError::Corrupt(format!("stray line `{line}`"))),
        }
    }
    for (split, entry) in &splits {
        let want = declared.get(split).copied().unwrap_or(0);
        if entry.ids.len() != want {
            return Err(DatasetError::Corrupt(format!(
                "{split} lists {} ids but declares count={want}",
                entry.ids.len()
            )));
        }
    }
    Ok(Manifest { resolution, splits })
}

fn read_meta(dir: &Path) -> Result<BTreeMap<String, String>, DatasetError> {
    let path = dir.join("meta.txt");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let mut out = BTreeMap::new();
    for line in text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            out.insert(k.to_string(), v.to_string());
        }
    }
    Ok(out)
}

fn read_sample(root: &Path, split: Split, id: &str) -> Result<SampleRecord, DatasetError> {
    let dir = root.join(split.as_str()).join(id);
    let meta = read_meta(&dir)?;
    let get = |k: &str| {
        meta.get(k)
            .ok_or_else(|| DatasetError::Corrupt(format!("{id}: meta missing `{k}`")))
    };
    let seed: u64 = get("seed")?
        .parse()
        .map_err(|_| DatasetError::Corrupt(format!("{id}: bad seed")))?;
    let onset: usize = get("onset_index")?
        .parse()
        .map_err(|_| DatasetError::Corrupt(format!("{id}: bad onset_index")))?;

    let load = |file: &'static str, key: &str| -> Result<Vec<u8>, DatasetError> {
        let path = dir.join(file);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        if sha256_hex(&bytes) != *get(key)? {
            return Err(DatasetError::ChecksumMismatch {
                id: id.to_string(),
                file,
            });
        }
        Ok(bytes)
    };
    let audio = load("audio.f32", "audio_sha256")?;
    let depth_bytes = load("depth.pgm16", "depth_sha256")?;
    let gray_bytes = load("gray.pgm16", "gray_sha256")?;

    let clip = decode_audio(&audio, onset)?;
    let depth_values = decode_pgm16(&depth_bytes)?;
    let gray_values = decode_pgm16(&gray_bytes)?;
    let resolution = depth_values.dim().0;
    Ok(SampleRecord {
        id: id.to_string(),
        clip,
        depth: DepthMap {
            values: depth_values,
            resolution,
            max_range_m: MAX_RANGE_M,
        },
        gray: GrayImage {
            values: gray_values,
            resolution,
        },
        scene_seed: seed,
        split,
    })
}

/// Iterator over a split's records in manifest order, verifying checksums.
pub struct DatasetReader {
    root: PathBuf,
    split: Split,
    ids: std::vec::IntoIter<String>,
}

impl Iterator for DatasetReader {
    type Item = Result<SampleRecord, DatasetError>;

    fn next(&mut self) -> Option<Self::Item> {
        let id = self.ids.next()?;
        Some(read_sample(&self.root, self.split, &id))
    }
}

/// Opens a split for reading; yields records in manifest order.
pub fn read_dataset(root: &Path, split: Split) -> Result<DatasetReader, DatasetError> {
    let manifest = read_manifest(root)?;
    let ids = manifest
        .splits
        .get(&split)
        .map(|e| e.ids.clone())
        .unwrap_or_default();
    Ok(DatasetReader {
        root: root.to_path_buf(),
        split,
        ids: ids.into_iter(),
    })
}

// --- training view ----------------------------------------------------

/// Which ground-truth image a model trains against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetKind {
    Depth,
    Grayscale,
}

impl TargetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TargetKind::Depth => "depth",
            TargetKind::Grayscale => "grayscale",
        }
    }
}

/// A split loaded into dense tensors for training and evaluation.
pub struct LoadedSplit {
    /// `[n, 2, CLIP_LEN]` waveforms.
    pub clips: Array3<f32>,
    /// `[n, res, res]` targets in [0, 1].
    pub targets: Array3<f32>,
    /// Chirp onset per clip, for jitter augmentation.
    pub onsets: Vec<usize>,
    pub ids: Vec<String>,
}

impl LoadedSplit {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Block-average downsample from the stored resolution to a smaller one.
fn downsample(values: &Array2<f64>, want: usize) -> Array2<f64> {
    let have = values.dim().0;
    let k = have / want;
    let mut out = Array2::zeros((want, want));
    for r in 0..want {
        for c in 0..want {
            let mut acc = 0.0;
            for i in 0..k {
                for j in 0..k {
                    acc += values[[r * k + i, c * k + j]];
                }
            }
            out[[r, c]] = acc / (k * k) as f64;
        }
    }
    out
}

/// Loads a split as dense tensors with targets at `resolution`, block-average
/// downsampling when the stored resolution is a larger multiple.
pub fn load_split(
    root: &Path,
    split: Split,
    resolution: usize,
    target: TargetKind,
) -> Result<LoadedSplit, DatasetError> {
    let manifest = read_manifest(root)?;
    let have = manifest.resolution;
    if have < resolution || have % resolution != 0 {
        return Err(DatasetError::ResolutionMismatch {
            have,
            want: resolution,
        });
    }
    let n = manifest.count(split);
    let mut clips = Array3::zeros((n, 2, CLIP_LEN));
    let mut targets = Array3::zeros((n, resolution, resolution));
    let mut onsets = Vec::with_capacity(n);
    let mut ids = Vec::with_capacity(n);
    for (i, rec) in read_dataset(root, split)?.enumerate() {
        let rec = rec?;
        for (j, &v) in rec.clip.left.samples.iter().enumerate() {
            clips[[i, 0, j]] = v;
        }
        for (j, &v) in rec.clip.right.samples.iter().enumerate() {
            clips[[i, 1, j]] = v;
        }
        let img = match target {
            TargetKind::Depth => &rec.depth.values,
            TargetKind::Grayscale => &rec.gray.values,
        };
        let img = if rec.depth.resolution == resolution {
            img.clone()
        } else {
            downsample(img, resolution)
        };
        for ((r, c), &v) in img.indexed_iter() {
            targets[[i, r, c]] = v as f32;
        }
        onsets.push(rec.clip.onset_index);
        ids.push(rec.id);
    }
    Ok(LoadedSplit {
        clips,
        targets,
        onsets,
        ids,
    })
}

// --- generation -------------------------------------------------------

/// Generates a dataset of randomized scenes with disjoint seed ranges
/// (train `[base, base+t)`, val `[base+t, base+t+v)`, test after that).
pub fn generate_dataset(
    root: &Path,
    counts: (usize, usize, usize),
    base_seed: u64,
    opts: &RenderOptions,
    force: bool,
) -> Result<Manifest, DatasetError> {
    let mut writer = DatasetWriter::create(root, force)?;
    let (t, v, s) = counts;
    let ranges = [
        (Split::Train, base_seed, t),
        (Split::Val, base_seed + t as u64, v),
        (Split::Test, base_seed + (t + v) as u64, s),
    ];
    for (split, start, count) in ranges {
        let seeds: Vec<u64> = (start..start + count as u64).collect();
        for chunk in seeds.chunks(64) {
            let rendered: Vec<_> = chunk
                .par_iter()
                .map(|&seed| {
                    let scene = random_scene(seed);
                    let hash = sha256_hex(crate::scene::write_scene_text(&scene).as_bytes());
                    simulate_sample(&scene, opts).map(|s| (seed, hash, s))
                })
                .collect::<Result<_, _>>()?;
            for (seed, hash, sample) in rendered {
                let rec = SampleRecord {
                    id: format!("s{seed:07}"),
                    clip: sample.clip,
                    depth: sample.depth,
                    gray: sample.gray,
                    scene_seed: seed,
                    split,
                };
                writer.add(&rec, &hash)?;
            }
        }
    }
    writer.finish()
}
