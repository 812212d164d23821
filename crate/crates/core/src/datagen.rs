//! Synthetic untrimmed-video benchmark and the binary snippet-feature
//! container.
//!
//! Each action class has a unit-norm prototype. Classes are grouped in
//! clusters that share a centre direction, so siblings inside a cluster are
//! easy to confuse. A snippet's feature is its class prototype (zero for
//! background) plus isotropic Gaussian noise.
//!
//! Ground truth for unlabeled training videos is kept in [`SealedTruth`],
//! which the training entry points never take as input.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::types::{snippet_labels, ActionInstance, Snippet, Supervision, VideoRecord};

const STREAM_PROTOTYPES: u64 = 1;
const STREAM_TRAIN: u64 = 2;
const STREAM_TEST: u64 = 3;
const STREAM_SPLIT: u64 = 4;

/// SplitMix64 finalizer; derives independent per-video seeds.
pub fn mix_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hidden annotations of unlabeled training videos.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SealedTruth {
    videos: BTreeMap<String, (Vec<ActionInstance>, Vec<usize>)>,
}

impl SealedTruth {
    pub fn insert(&mut self, id: &str, instances: Vec<ActionInstance>, labels: Vec<usize>) {
        self.videos.insert(id.to_string(), (instances, labels));
    }

    pub fn instances(&self, id: &str) -> Option<&[ActionInstance]> {
        self.videos.get(id).map(|v| v.0.as_slice())
    }

    /// Per-snippet class labels (background = `C`).
    pub fn labels(&self, id: &str) -> Option<&[usize]> {
        self.videos.get(id).map(|v| v.1.as_slice())
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub labeled: Vec<VideoRecord>,
    pub unlabeled: Vec<VideoRecord>,
    pub test: Vec<VideoRecord>,
    pub sealed: SealedTruth,
    pub prototypes: Vec<Vec<f64>>,
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Unit-norm class prototypes. Classes `k * cluster_size ..` share a centre.
pub fn class_prototypes(config: &ExperimentConfig) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, STREAM_PROTOTYPES, 0));
    let d = config.feature_dim;
    let clusters = config.class_count.div_ceil(config.cluster_size);
    let centres: Vec<Vec<f64>> = (0..clusters).map(|_| random_unit(&mut rng, d)).collect();
    (0..config.class_count)
        .map(|c| {
            let offset = random_unit(&mut rng, d);
            let centre = &centres[c / config.cluster_size];
            let raw: Vec<f64> = centre
                .iter()
                .zip(&offset)
                .map(|(a, b)| a + config.prototype_separation * b)
                .collect();
            let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
            raw.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}

/// Draws instance lengths, shrinking them until they fit with one-snippet gaps.
fn place_instances(
    rng: &mut ChaCha8Rng,
    config: &ExperimentConfig,
    video: usize,
) -> Result<Vec<(usize, usize)>> {
    let n = config.snippets_per_video;
    let count = rng.random_range(1..=config.max_instances_per_video);
    let q = 1.0 / config.mean_instance_length;
    let mut lengths: Vec<usize> = (0..count)
        .map(|_| {
            let u: f64 = rng.random_range(f64::EPSILON..1.0);
            if q >= 1.0 {
                1
            } else {
                1 + (u.ln() / (1.0 - q).ln()).floor() as usize
            }
        })
        .collect();
    for _ in 0..8 {
        let needed: usize = lengths.iter().sum::<usize>() + count - 1;
        if needed <= n {
            let free = n - needed;
            // Stars and bars: split the free snippets into count + 1 gaps.
            let mut cuts: Vec<usize> = (0..count).map(|_| rng.random_range(0..=free)).collect();
            cuts.sort_unstable();
            let mut spans = Vec::with_capacity(count);
            let mut cursor = 0;
            let mut prev_cut = 0;
            for (i, (&len, &cut)) in lengths.iter().zip(&cuts).enumerate() {
                cursor += cut - prev_cut + usize::from(i > 0);
                prev_cut = cut;
                spans.push((cursor, cursor + len - 1));
                cursor += len;
            }
            return Ok(spans);
        }
        for len in &mut lengths {
            *len = (*len).div_ceil(2);
        }
    }
    Err(Error::InfeasiblePlacement {
        video,
        instances: count,
        snippets: n,
    })
}

struct RawVideo {
    features: Vec<Vec<f64>>,
    instances: Vec<ActionInstance>,
    labels: Vec<usize>,
}

fn generate_video(
    config: &ExperimentConfig,
    prototypes: &[Vec<f64>],
    stream: u64,
    index: usize,
) -> Result<RawVideo> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, stream, index as u64));
    let spans = place_instances(&mut rng, config, index)?;
    let instances: Vec<ActionInstance> = spans
        .into_iter()
        .map(|(s, e)| {
            let class = rng.random_range(0..config.class_count);
            ActionInstance::ground_truth(s, e, class)
        })
        .collect::<Result<_>>()?;
    let labels = snippet_labels(&instances, config.snippets_per_video, config.class_count);
    let noise = Normal::new(0.0, config.noise_sigma).expect("validated sigma");
    let features = labels
        .iter()
        .map(|&label| {
            (0..config.feature_dim)
                .map(|k| {
                    let mean = if label < config.class_count {
                        prototypes[label][k]
                    } else {
                        0.0
                    };
                    mean + noise.sample(&mut rng)
                })
                .collect()
        })
        .collect();
    Ok(RawVideo {
        features,
        instances,
        labels,
    })
}

fn to_record(
    id: String,
    raw: RawVideo,
    labeled: bool,
    class_count: usize,
) -> Result<(VideoRecord, Vec<ActionInstance>, Vec<usize>)> {
    let snippets = raw
        .features
        .into_iter()
        .zip(&raw.labels)
        .map(|(f, &label)| {
            let sup = if labeled {
                Supervision::GroundTruth(label)
            } else {
                Supervision::Unlabeled
            };
            Snippet::new(f, sup)
        })
        .collect::<Result<Vec<_>>>()?;
    let visible = if labeled { raw.instances.clone() } else { Vec::new() };
    let record = VideoRecord::new(id, snippets, visible, labeled, class_count)?;
    Ok((record, raw.instances, raw.labels))
}

/// Number of training videos that keep their annotations.
pub fn labeled_count(config: &ExperimentConfig) -> usize {
    ((config.labeled_ratio * config.video_count as f64).round() as usize)
        .clamp(1, config.video_count)
}

pub fn generate_benchmark(config: &ExperimentConfig) -> Result<Benchmark> {
    config.validate()?;
    let prototypes = class_prototypes(config);
    let train: Vec<RawVideo> = (0..config.video_count)
        .into_par_iter()
        .map(|i| generate_video(config, &prototypes, STREAM_TRAIN, i))
        .collect::<Result<_>>()?;
    let test: Vec<RawVideo> = (0..config.test_video_count)
        .into_par_iter()
        .map(|i| generate_video(config, &prototypes, STREAM_TEST, i))
        .collect::<Result<_>>()?;

    let mut order: Vec<usize> = (0..config.video_count).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(
        config.seed,
        STREAM_SPLIT,
        0,
    )));
    let mut is_labeled = vec![false; config.video_count];
    for &i in &order[..labeled_count(config)] {
        is_labeled[i] = true;
    }

    let mut labeled = Vec::new();
    let mut unlabeled = Vec::new();
    let mut sealed = SealedTruth::default();
    for (i, raw) in train.into_iter().enumerate() {
        let id = format!("train-{i:04}");
        let (record, instances, labels) = to_record(id, raw, is_labeled[i], config.class_count)?;
        if is_labeled[i] {
            labeled.push(record);
        } else {
            sealed.insert(&record.id, instances, labels);
            unlabeled.push(record);
        }
    }
    let test = test
        .into_iter()
        .enumerate()
        .map(|(i, raw)| Ok(to_record(format!("test-{i:04}"), raw, true, config.class_count)?.0))
        .collect::<Result<_>>()?;
    Ok(Benchmark {
        labeled,
        unlabeled,
        test,
        sealed,
        prototypes,
    })
}

// Feature container, little-endian throughout:
//   magic "HPNLFEAT" | version u32 | feature_dim u32 | class_count u32 | video_count u32
//   per video:
//     id_len u32 | id utf-8 | snippet_count u32 | labeled u8 | instance_count u32
//     instance_count x (start u32 | end u32 | class u32, 1-based)
//     snippet_count x (row_len u32 | row_len x f64)
pub const FEATURE_MAGIC: &[u8; 8] = b"HPNLFEAT";
pub const FEATURE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub feature_dim: usize,
    pub class_count: usize,
    pub videos: Vec<VideoRecord>,
}

pub fn encode_features(videos: &[VideoRecord], feature_dim: usize, class_count: usize) -> Vec<u8> {
    let mut out = Vec::new();
    let put = |out: &mut Vec<u8>, v: u32| out.extend_from_slice(&v.to_le_bytes());
    out.extend_from_slice(FEATURE_MAGIC);
    put(&mut out, FEATURE_VERSION);
    put(&mut out, feature_dim as u32);
    put(&mut out, class_count as u32);
    put(&mut out, videos.len() as u32);
    for v in videos {
        put(&mut out, v.id.len() as u32);
        out.extend_from_slice(v.id.as_bytes());
        put(&mut out, v.snippets.len() as u32);
        out.push(u8::from(v.labeled));
        put(&mut out, v.instances.len() as u32);
        for inst in &v.instances {
            put(&mut out, inst.start as u32);
            put(&mut out, inst.end as u32);
            put(&mut out, inst.class as u32 + 1);
        }
        for s in &v.snippets {
            put(&mut out, s.feature().len() as u32);
            for x in s.feature() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    video: Option<String>,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::CorruptRecord {
                video: self.video.clone(),
                offset: self.pos as u64,
                reason: format!("truncated while reading {what}"),
            });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn corrupt(&self, offset: usize, reason: impl Into<String>) -> Error {
        Error::CorruptRecord {
            video: self.video.clone(),
            offset: offset as u64,
            reason: reason.into(),
        }
    }
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureFile> {
    if bytes.len() < FEATURE_MAGIC.len() || &bytes[..8] != FEATURE_MAGIC {
        return Err(Error::BadMagic);
    }
    let mut r = Reader {
        bytes,
        pos: 8,
        video: None,
    };
    let version = r.u32("version")?;
    if version != FEATURE_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FEATURE_VERSION,
        });
    }
    let dim = r.u32("feature dim")? as usize;
    let class_count = r.u32("class count")? as usize;
    let count = r.u32("video count")? as usize;
    let mut videos = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        r.video = None;
        let id_start = r.pos;
        let id_len = r.u32("id length")? as usize;
        let id = match std::str::from_utf8(r.take(id_len, "video id")?) {
            Ok(id) => id.to_string(),
            Err(_) => return Err(r.corrupt(id_start, "video id is not utf-8")),
        };
        r.video = Some(id.clone());
        let snippet_count = r.u32("snippet count")? as usize;
        let flag_at = r.pos;
        let labeled = match r.take(1, "labeled flag")?[0] {
            0 => false,
            1 => true,
            other => return Err(r.corrupt(flag_at, format!("labeled flag {other}"))),
        };
        let instance_count = r.u32("instance count")? as usize;
        let mut instances = Vec::with_capacity(instance_count.min(1 << 12));
        for _ in 0..instance_count {
            let at = r.pos;
            let start = r.u32("instance start")? as usize;
            let end = r.u32("instance end")? as usize;
            let class = r.u32("instance class")? as usize;
            if class == 0 || class > class_count {
                return Err(r.corrupt(at, format!("instance class {class} is not an action id")));
            }
            instances.push(
                ActionInstance::ground_truth(start, end, class - 1)
                    .map_err(|e| r.corrupt(at, e.to_string()))?,
            );
        }
        let mut features = Vec::with_capacity(snippet_count.min(1 << 16));
        for row in 0..snippet_count {
            let row_len = r.u32("row length")? as usize;
            if row_len != dim {
                return Err(Error::ShapeMismatch(format!(
                    "video {id}: snippet {row} has {row_len} features, header says {dim}"
                )));
            }
            let at = r.pos;
            let values: Vec<f64> = (0..dim).map(|_| r.f64("feature value")).collect::<Result<_>>()?;
            if values.iter().any(|v| !v.is_finite()) {
                return Err(r.corrupt(at, format!("non-finite feature in snippet {row}")));
            }
            features.push(values);
        }
        let labels = snippet_labels(&instances, snippet_count.max(1), class_count);
        let snippets = features
            .into_iter()
            .zip(labels)
            .map(|(f, label)| {
                let sup = if labeled {
                    Supervision::GroundTruth(label)
                } else {
                    Supervision::Unlabeled
                };
                Snippet::new(f, sup)
            })
            .collect::<Result<Vec<_>>>()?;
        let record = VideoRecord::new(id, snippets, instances, labeled, class_count)
            .map_err(|e| r.corrupt(id_start, e.to_string()))?;
        videos.push(record);
    }
    if r.pos != bytes.len() {
        return Err(r.corrupt(r.pos, "trailing bytes after last video"));
    }
    Ok(FeatureFile {
        feature_dim: dim,
        class_count,
        videos,
    })
}

pub fn write_feature_file(
    path: &Path,
    videos: &[VideoRecord],
    feature_dim: usize,
    class_count: usize,
) -> Result<()> {
    std::fs::write(path, encode_features(videos, feature_dim, class_count))
        .map_err(|e| Error::io(path, e))
}

pub fn load_feature_file(path: &Path) -> Result<FeatureFile> {
    let bytes = std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingArtifact {
                path: path.to_path_buf(),
            }
        } else {
            Error::io(path, e)
        }
    })?;
    decode_features(&bytes)
}

fn format_instances(instances: &[ActionInstance]) -> String {
    instances
        .iter()
        .map(|i| format!("{}-{}:{}", i.start, i.end, i.class + 1))
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_instances(field: &str, line: usize) -> Result<Vec<ActionInstance>> {
    let bad = || Error::CorruptRecord {
        video: None,
        offset: line as u64,
        reason: format!("bad instance list on line {}", line + 1),
    };
    if field.is_empty() {
        return Ok(Vec::new());
    }
    field
        .split(',')
        .map(|item| {
            let (span, class) = item.split_once(':').ok_or_else(bad)?;
            let (s, e) = span.split_once('-').ok_or_else(bad)?;
            let class: usize = class.parse().map_err(|_| bad())?;
            if class == 0 {
                return Err(bad());
            }
            ActionInstance::ground_truth(
                s.parse().map_err(|_| bad())?,
                e.parse().map_err(|_| bad())?,
                class - 1,
            )
        })
        .collect()
}

/// Tab-separated manifest: split, video id, labeled flag, snippet count and
/// visible annotations (`start-end:class`, 1-based classes).
pub fn write_manifest(out: &mut impl std::io::Write, splits: &[(&str, &[VideoRecord])]) -> std::io::Result<()> {
    writeln!(out, "split\tvideo\tlabeled\tsnippets\tinstances")?;
    for (split, videos) in splits {
        for v in *videos {
            writeln!(
                out,
                "{split}\t{}\t{}\t{}\t{}",
                v.id,
                u8::from(v.labeled),
                v.snippets.len(),
                format_instances(&v.instances)
            )?;
        }
    }
    Ok(())
}

/// Sealed annotations of the unlabeled split, same layout as the manifest.
pub fn write_sealed_truth(
    out: &mut impl std::io::Write,
    unlabeled: &[VideoRecord],
    sealed: &SealedTruth,
) -> std::io::Result<()> {
    writeln!(out, "video\tsnippets\tinstances")?;
    for v in unlabeled {
        let instances = sealed.instances(&v.id).unwrap_or(&[]);
        writeln!(out, "{}\t{}\t{}", v.id, v.snippets.len(), format_instances(instances))?;
    }
    Ok(())
}

pub fn read_sealed_truth(text: &str, class_count: usize) -> Result<SealedTruth> {
    let mut sealed = SealedTruth::default();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::CorruptRecord {
                video: None,
                offset: n as u64,
                reason: format!("expected 3 fields on line {}", n + 1),
            });
        }
        let snippets: usize = fields[1].parse().map_err(|_| Error::CorruptRecord {
            video: Some(fields[0].to_string()),
            offset: n as u64,
            reason: "bad snippet count".into(),
        })?;
        let instances = parse_instances(fields[2], n)?;
        let labels = snippet_labels(&instances, snippets, class_count);
        sealed.insert(fields[0], instances, labels);
    }
    Ok(sealed)
}

pub fn write_text(path: &Path, writer: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    writer(&mut buf).map_err(|e| Error::io(path, e))?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub const TRAIN_FEATURES: &str = "train.feat";
pub const TEST_FEATURES: &str = "test.feat";
pub const MANIFEST: &str = "manifest.tsv";
pub const SEALED_TRUTH: &str = "sealed_truth.tsv";

/// Writes a benchmark as a dataset directory: train and test feature files,
/// the manifest and the sealed annotations of the unlabeled split.
pub fn save_benchmark(dir: &Path, bench: &Benchmark, feature_dim: usize, class_count: usize) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let train: Vec<VideoRecord> = bench.labeled.iter().chain(&bench.unlabeled).cloned().collect();
    write_feature_file(&dir.join(TRAIN_FEATURES), &train, feature_dim, class_count)?;
    write_feature_file(&dir.join(TEST_FEATURES), &bench.test, feature_dim, class_count)?;
    write_text(&dir.join(MANIFEST), |w| {
        write_manifest(
            w,
            &[("train", &bench.labeled), ("train", &bench.unlabeled), ("test", &bench.test)],
        )
    })?;
    write_text(&dir.join(SEALED_TRUTH), |w| {
        write_sealed_truth(w, &bench.unlabeled, &bench.sealed)
    })
}

/// Reads a dataset directory written by [`save_benchmark`]. The sealed
/// annotations are optional; without them the audit channel is empty.
pub fn load_benchmark(dir: &Path) -> Result<(Benchmark, usize, usize)> {
    let train = load_feature_file(&dir.join(TRAIN_FEATURES))?;
    let test = load_feature_file(&dir.join(TEST_FEATURES))?;
    if (train.feature_dim, train.class_count) != (test.feature_dim, test.class_count) {
        return Err(Error::ShapeMismatch(format!(
            "train features are {}-d with {} classes, test features are {}-d with {} classes",
            train.feature_dim, train.class_count, test.feature_dim, test.class_count
        )));
    }
    let sealed_path = dir.join(SEALED_TRUTH);
    let sealed = match std::fs::read_to_string(&sealed_path) {
        Ok(text) => read_sealed_truth(&text, train.class_count)?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => SealedTruth::default(),
        Err(e) => return Err(Error::io(&sealed_path, e)),
    };
    let (labeled, unlabeled) = train.videos.into_iter().partition(|v| v.labeled);
    Ok((
        Benchmark {
            labeled,
            unlabeled,
            test: test.videos,
            sealed,
            prototypes: Vec::new(),
        },
        train.feature_dim,
        train.class_count,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            video_count: 20,
            test_video_count: 5,
            snippets_per_video: 60,
            ..Default::default()
        }
    }

    #[test]
    fn full_ratio_has_no_unlabeled() {
        let b = generate_benchmark(&ExperimentConfig {
            labeled_ratio: 1.0,
            ..small()
        })
        .unwrap();
        assert!(b.unlabeled.is_empty());
        assert_eq!(b.labeled.len(), 20);
        assert!(b.sealed.is_empty());
    }

    #[test]
    fn split_sizes_and_sealing() {
        let b = generate_benchmark(&ExperimentConfig {
            labeled_ratio: 0.25,
            ..small()
        })
        .unwrap();
        assert_eq!(b.labeled.len(), 5);
        assert_eq!(b.unlabeled.len(), 15);
        for v in &b.unlabeled {
            assert!(v.instances.is_empty());
            assert!(!v.labeled);
            assert!(v.snippets.iter().all(|s| *s.supervision() == Supervision::Unlabeled));
            assert!(!b.sealed.instances(&v.id).unwrap().is_empty());
        }
    }

    #[test]
    fn instances_never_overlap_or_use_background() {
        let config = small();
        let b = generate_benchmark(&config).unwrap();
        for v in b.labeled.iter().chain(&b.test) {
            assert!(!v.instances.is_empty() && v.instances.len() <= 5);
            let mut spans: Vec<_> = v.instances.iter().map(|i| (i.start, i.end)).collect();
            spans.sort();
            assert!(spans.windows(2).all(|w| w[0].1 < w[1].0));
            assert!(v.instances.iter().all(|i| i.class < config.class_count));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_benchmark(&small()).unwrap();
        let b = generate_benchmark(&small()).unwrap();
        let c = small();
        assert_eq!(
            encode_features(&a.labeled, c.feature_dim, c.class_count),
            encode_features(&b.labeled, c.feature_dim, c.class_count)
        );
        assert_eq!(a.sealed, b.sealed);
        let other = generate_benchmark(&ExperimentConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a.test, other.test);
    }

    #[test]
    fn noiseless_features_are_nearest_prototype_separable() {
        let config = ExperimentConfig {
            noise_sigma: 0.0,
            ..small()
        };
        let b = generate_benchmark(&config).unwrap();
        let mut centres = b.prototypes.clone();
        centres.push(vec![0.0; config.feature_dim]);
        for v in &b.labeled {
            for s in &v.snippets {
                let Supervision::GroundTruth(label) = s.supervision() else {
                    panic!()
                };
                let nearest = (0..centres.len())
                    .min_by(|&a, &b| {
                        let da: f64 = centres[a].iter().zip(s.feature()).map(|(x, y)| (x - y).powi(2)).sum();
                        let db: f64 = centres[b].iter().zip(s.feature()).map(|(x, y)| (x - y).powi(2)).sum();
                        da.total_cmp(&db)
                    })
                    .unwrap();
                assert_eq!(nearest, *label);
            }
        }
    }

    #[test]
    fn placement_reports_infeasible() {
        let config = ExperimentConfig {
            snippets_per_video: 3,
            max_instances_per_video: 5,
            mean_instance_length: 1.0,
            ..small()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut saw_error = false;
        for video in 0..50 {
            match place_instances(&mut rng, &config, video) {
                Ok(spans) => assert!(spans.len() * 2 - 1 <= 3),
                Err(Error::InfeasiblePlacement { .. }) => saw_error = true,
                Err(e) => panic!("{e}"),
            }
        }
        assert!(saw_error);
    }

    #[test]
    fn manifest_and_sealed_round_trip() {
        let config = ExperimentConfig {
            labeled_ratio: 0.5,
            ..small()
        };
        let b = generate_benchmark(&config).unwrap();
        let mut buf = Vec::new();
        write_sealed_truth(&mut buf, &b.unlabeled, &b.sealed).unwrap();
        let back = read_sealed_truth(std::str::from_utf8(&buf).unwrap(), config.class_count).unwrap();
        assert_eq!(back, b.sealed);
        let mut buf = Vec::new();
        write_manifest(&mut buf, &[("labeled", &b.labeled)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), b.labeled.len() + 1);
    }
}
