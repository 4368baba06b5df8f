//! Data sets: dense features with integer class labels, seeded 2-D
//! generators, IDX and Semeion readers, train/test splits and a binary cache.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{format_err, invalid, io_at, Error, Result};
use crate::objectives::Example;
use crate::selection::{seeded_rng, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Test,
}

/// `n × d` row-major features, labels in `0..num_classes`, optional real
/// targets, optional split tags and optional generator component ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    d: usize,
    labels: Vec<usize>,
    num_classes: usize,
    targets: Option<(Vec<f64>, usize)>,
    split: Option<Vec<Split>>,
    components: Option<Vec<usize>>,
    provenance: String,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        d: usize,
        labels: Vec<usize>,
        num_classes: usize,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if d == 0 {
            return Err(Error::Data("feature dimension must be positive".into()));
        }
        if features.len() != labels.len() * d {
            return Err(Error::Data(format!(
                "{} feature values do not form {} rows of width {d}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite feature in row {}", i / d)));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Data(format!("label {y} outside 0..{num_classes}")));
        }
        Ok(Dataset {
            features,
            d,
            labels,
            num_classes,
            targets: None,
            split: None,
            components: None,
            provenance: provenance.into(),
        })
    }

    /// Attaches real-valued targets (`n × width`), used by the squared loss.
    pub fn with_targets(mut self, targets: Vec<f64>, width: usize) -> Result<Self> {
        if width == 0 || targets.len() != self.len() * width {
            return Err(Error::Data("target matrix does not match row count".into()));
        }
        self.targets = Some((targets, width));
        Ok(self)
    }

    pub fn with_components(mut self, components: Vec<usize>) -> Result<Self> {
        if components.len() != self.len() {
            return Err(Error::Data("component tags do not match row count".into()));
        }
        self.components = Some(components);
        Ok(self)
    }

    pub fn with_split(mut self, split: Vec<Split>) -> Result<Self> {
        if split.len() != self.len() {
            return Err(Error::Data("split tags do not match row count".into()));
        }
        self.split = Some(split);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn y(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn target_width(&self) -> Option<usize> {
        self.targets.as_ref().map(|t| t.1)
    }

    pub fn example(&self, i: usize) -> Example<'_> {
        Example {
            x: self.x(i),
            y: self.labels[i],
            target: self.targets.as_ref().map(|(t, w)| &t[i * w..(i + 1) * w]),
        }
    }

    pub fn split_tags(&self) -> Option<&[Split]> {
        self.split.as_deref()
    }

    pub fn components(&self) -> Option<&[usize]> {
        self.components.as_deref()
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &y in &self.labels {
            h[y] += 1;
        }
        h
    }

    /// Rows `indices` in the given order; split tags are dropped.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            features.extend_from_slice(self.x(i));
        }
        Dataset {
            features,
            d: self.d,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            targets: self.targets.as_ref().map(|(t, w)| {
                let mut out = Vec::with_capacity(indices.len() * w);
                for &i in indices {
                    out.extend_from_slice(&t[i * w..(i + 1) * w]);
                }
                (out, *w)
            }),
            split: None,
            components: self.components.as_ref().map(|c| indices.iter().map(|&i| c[i]).collect()),
            provenance: self.provenance.clone(),
        }
    }

    /// Rows tagged `part`; the whole set for `Train` when untagged.
    pub fn part(&self, part: Split) -> Dataset {
        match &self.split {
            None if part == Split::Train => self.subset(&(0..self.len()).collect::<Vec<_>>()),
            None => self.subset(&[]),
            Some(tags) => {
                let idx: Vec<usize> = (0..self.len()).filter(|&i| tags[i] == part).collect();
                self.subset(&idx)
            }
        }
    }
}

/// One Gaussian blob of the clusters geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub label: usize,
    pub center: [f64; 2],
    pub std: f64,
    pub count: usize,
    /// Small sub-cluster rather than a class's majority blob.
    pub minority: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClustersSpec {
    pub n_total: usize,
    pub blobs: Vec<Blob>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ring {
    pub radius: f64,
    pub count: usize,
    pub label: usize,
}

/// Concentric noisy circles, listed innermost first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RingsSpec {
    pub n_total: usize,
    pub noise: f64,
    pub rings: Vec<Ring>,
}

impl RingsSpec {
    /// The inner (minority) rings: all but the two outermost.
    pub fn inner_ring_ids(&self) -> std::ops::Range<usize> {
        0..self.rings.len().saturating_sub(2)
    }
}

#[derive(Debug, Clone, Deserialize)]
struct SyntheticDefaults {
    version: u32,
    clusters: ClustersSpec,
    rings: RingsSpec,
}

const SYNTHETIC_V1: &str = include_str!("../specs/synthetic-v1.toml");

fn synthetic_defaults() -> SyntheticDefaults {
    let d: SyntheticDefaults = toml::from_str(SYNTHETIC_V1).expect("bundled synthetic spec parses");
    debug_assert_eq!(d.version, 1);
    d
}

impl Default for ClustersSpec {
    fn default() -> Self {
        synthetic_defaults().clusters
    }
}

impl Default for RingsSpec {
    fn default() -> Self {
        synthetic_defaults().rings
    }
}

/// Gaussian blobs; component id = index into `spec.blobs`.
pub fn gen_clusters_2d(seed: u64, spec: &ClustersSpec) -> Result<Dataset> {
    let total: usize = spec.blobs.iter().map(|b| b.count).sum();
    if total != spec.n_total {
        return Err(invalid(format!("blob counts sum to {total}, expected {}", spec.n_total)));
    }
    if spec.blobs.iter().filter(|b| !b.minority).count() < 2 {
        return Err(invalid("need at least two majority blobs"));
    }
    let num_classes = spec.blobs.iter().map(|b| b.label + 1).max().unwrap_or(0);
    for class in 0..num_classes {
        if !spec.blobs.iter().any(|b| b.minority && b.label == class) {
            return Err(invalid(format!("class {class} has no sub-cluster")));
        }
    }
    if spec.blobs.iter().any(|b| !(b.std > 0.0)) {
        return Err(invalid("blob std must be positive"));
    }
    let mut rng = seeded_rng(seed, stream::DATA);
    let mut features = Vec::with_capacity(2 * total);
    let mut labels = Vec::with_capacity(total);
    let mut comps = Vec::with_capacity(total);
    for (id, blob) in spec.blobs.iter().enumerate() {
        let normal = Normal::new(0.0, blob.std).expect("positive std");
        for _ in 0..blob.count {
            features.push(blob.center[0] + normal.sample(&mut rng));
            features.push(blob.center[1] + normal.sample(&mut rng));
            labels.push(blob.label);
            comps.push(id);
        }
    }
    Dataset::new(features, 2, labels, num_classes, format!("clusters-2d(v1, seed={seed})"))?
        .with_components(comps)
}

/// Concentric circles with uniform angles and Gaussian radial noise;
/// component id = ring index (0 innermost).
pub fn gen_rings_2d(seed: u64, spec: &RingsSpec) -> Result<Dataset> {
    let total: usize = spec.rings.iter().map(|r| r.count).sum();
    if total != spec.n_total {
        return Err(invalid(format!("ring counts sum to {total}, expected {}", spec.n_total)));
    }
    if spec.rings.len() < 2 {
        return Err(invalid("need at least two rings"));
    }
    if spec.rings.windows(2).any(|w| !(w[0].radius < w[1].radius)) || spec.rings[0].radius <= 0.0 {
        return Err(invalid("ring radii must be positive and strictly increasing"));
    }
    if !(spec.noise >= 0.0) {
        return Err(invalid("ring noise must be non-negative"));
    }
    let num_classes = spec.rings.iter().map(|r| r.label + 1).max().unwrap_or(0);
    let mut rng = seeded_rng(seed, stream::DATA);
    let normal = Normal::new(0.0, spec.noise).map_err(|e| invalid(e.to_string()))?;
    let mut features = Vec::with_capacity(2 * total);
    let mut labels = Vec::with_capacity(total);
    let mut comps = Vec::with_capacity(total);
    for (id, ring) in spec.rings.iter().enumerate() {
        for _ in 0..ring.count {
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let r = ring.radius + normal.sample(&mut rng);
            features.push(r * angle.cos());
            features.push(r * angle.sin());
            labels.push(ring.label);
            comps.push(id);
        }
    }
    Dataset::new(features, 2, labels, num_classes, format!("rings-2d(v1, seed={seed})"))?
        .with_components(comps)
}

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], offset: usize, what: &str, file: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| {
            format_err(
                format!("{file} byte {offset}"),
                format!("truncated while reading {what}"),
            )
        })
}

/// Parses IDX image and label buffers (MNIST layout). Pixels are scaled by
/// 1/255; the class count is the largest label plus one.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let magic = be_u32(images, 0, "magic number", "images")?;
    if magic != IDX_IMAGES {
        return Err(format_err(
            "images byte 0",
            format!("magic {magic:#010x}, expected {IDX_IMAGES:#010x}"),
        ));
    }
    let count = be_u32(images, 4, "image count", "images")? as usize;
    let rows = be_u32(images, 8, "row count", "images")? as usize;
    let cols = be_u32(images, 12, "column count", "images")? as usize;
    let pixels = rows * cols;
    if pixels == 0 {
        return Err(format_err("images byte 8", "zero-sized images"));
    }
    let expected = 16 + count * pixels;
    if images.len() < expected {
        return Err(format_err(
            format!("images byte {}", images.len()),
            format!("truncated pixel data: {count} images of {rows}x{cols} need {expected} bytes"),
        ));
    }

    let magic = be_u32(labels, 0, "magic number", "labels")?;
    if magic != IDX_LABELS {
        return Err(format_err(
            "labels byte 0",
            format!("magic {magic:#010x}, expected {IDX_LABELS:#010x}"),
        ));
    }
    let label_count = be_u32(labels, 4, "label count", "labels")? as usize;
    if label_count != count {
        return Err(format_err(
            "labels byte 4",
            format!("{label_count} labels for {count} images"),
        ));
    }
    if labels.len() < 8 + count {
        return Err(format_err(
            format!("labels byte {}", labels.len()),
            format!("truncated label data: need {} bytes", 8 + count),
        ));
    }
    let features = images[16..expected].iter().map(|&p| f64::from(p) / 255.0).collect();
    let ys: Vec<usize> = labels[8..8 + count].iter().map(|&b| usize::from(b)).collect();
    let k = ys.iter().max().map_or(1, |m| m + 1);
    Dataset::new(features, pixels, ys, k, format!("idx({count}x{rows}x{cols})"))
}

pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let img = fs::read(images).map_err(io_at(images))?;
    let lab = fs::read(labels).map_err(io_at(labels))?;
    let mut ds = parse_idx(&img, &lab)?;
    ds.provenance = format!("idx:{}", images.display());
    Ok(ds)
}

pub const SEMEION_PIXELS: usize = 256;
pub const SEMEION_CLASSES: usize = 10;

/// Parses Semeion text: per line 256 pixel values then a 10-wide one-hot
/// label block, whitespace separated.
pub fn parse_semeion<R: BufRead>(reader: R) -> Result<Dataset> {
    let width = SEMEION_PIXELS + SEMEION_CLASSES;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|_| format_err(format!("line {lineno}"), format!("not a number: {tok:?}")))
            })
            .collect::<Result<_>>()?;
        if values.len() != width {
            return Err(format_err(
                format!("line {lineno}"),
                format!("expected {width} columns, found {}", values.len()),
            ));
        }
        let (pixels, onehot) = values.split_at(SEMEION_PIXELS);
        if onehot.iter().any(|&v| v != 0.0 && v != 1.0) || onehot.iter().sum::<f64>() != 1.0 {
            return Err(format_err(
                format!("line {lineno}"),
                "label block is not one-hot",
            ));
        }
        features.extend_from_slice(pixels);
        labels.push(onehot.iter().position(|&v| v == 1.0).expect("one-hot"));
    }
    Dataset::new(features, SEMEION_PIXELS, labels, SEMEION_CLASSES, "semeion")
}

pub fn load_semeion(path: &Path) -> Result<Dataset> {
    let f = fs::File::open(path).map_err(io_at(path))?;
    let mut ds = parse_semeion(BufReader::new(f))?;
    ds.provenance = format!("semeion:{}", path.display());
    Ok(ds)
}

/// Tags `⌊n·test_fraction⌋` rows as test after a seeded shuffle.
///
/// With `stratified`, each class gets `⌊c_k·f⌋` test rows and the
/// remaining quota goes to the classes with the largest fractional parts
/// (ties to the smaller class), so every class is within one row of the
/// global fraction and the total still equals `⌊n·f⌋`.
pub fn split_dataset(ds: &Dataset, test_fraction: f64, seed: u64, stratified: bool) -> Result<Dataset> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(invalid(format!("test fraction must lie in (0, 1), got {test_fraction}")));
    }
    let n = ds.len();
    let n_test = (n as f64 * test_fraction).floor() as usize;
    if n_test == 0 || n_test == n {
        return Err(invalid(format!("a {test_fraction} split of {n} rows leaves an empty part")));
    }
    let mut rng = seeded_rng(seed, stream::SPLIT);
    let mut tags = vec![Split::Train; n];
    if stratified {
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes()];
        for i in 0..n {
            by_class[ds.y(i)].push(i);
        }
        let mut quota: Vec<usize> = by_class
            .iter()
            .map(|c| (c.len() as f64 * test_fraction).floor() as usize)
            .collect();
        let mut rest: Vec<(f64, usize)> = by_class
            .iter()
            .enumerate()
            .map(|(k, c)| (c.len() as f64 * test_fraction - quota[k] as f64, k))
            .collect();
        rest.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let missing = n_test - quota.iter().sum::<usize>();
        for &(_, k) in rest.iter().take(missing) {
            quota[k] += 1;
        }
        for (members, q) in by_class.iter_mut().zip(quota) {
            members.shuffle(&mut rng);
            for &i in &members[..q] {
                tags[i] = Split::Test;
            }
        }
    } else {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        for &i in &idx[..n_test] {
            tags[i] = Split::Test;
        }
    }
    ds.clone().with_split(tags)
}

const CACHE_MAGIC: &[u8; 8] = b"OSGDDS\x00\x01";

/// Writes the binary cache format:
///
/// ```text
/// magic      8 bytes  "OSGDDS\0\x01"
/// n, d, num_classes, target_width (0 = none)     u64 LE each
/// flags      u8       bit 0: split tags, bit 1: component ids
/// provenance u64 LE length + UTF-8 bytes
/// features   n·d f64 LE
/// labels     n u64 LE
/// targets    n·target_width f64 LE
/// split      n u8 (0 train, 1 test)        if flag bit 0
/// components n u64 LE                      if flag bit 1
/// ```
pub fn write_cache<W: Write>(ds: &Dataset, mut w: W) -> Result<()> {
    let tw = ds.target_width().unwrap_or(0);
    w.write_all(CACHE_MAGIC)?;
    for v in [ds.len(), ds.d, ds.num_classes, tw] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    let flags = u8::from(ds.split.is_some()) | (u8::from(ds.components.is_some()) << 1);
    w.write_all(&[flags])?;
    w.write_all(&(ds.provenance.len() as u64).to_le_bytes())?;
    w.write_all(ds.provenance.as_bytes())?;
    for v in &ds.features {
        w.write_all(&v.to_le_bytes())?;
    }
    for &y in &ds.labels {
        w.write_all(&(y as u64).to_le_bytes())?;
    }
    if let Some((t, _)) = &ds.targets {
        for v in t {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    if let Some(split) = &ds.split {
        let bytes: Vec<u8> = split.iter().map(|s| u8::from(*s == Split::Test)).collect();
        w.write_all(&bytes)?;
    }
    if let Some(c) = &ds.components {
        for &v in c {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
    }
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            format_err(format!("cache byte {}", self.pos), format!("truncated while reading {what}"))
        })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        usize::try_from(self.u64(what)?).map_err(|_| format_err(format!("cache byte {}", self.pos), "length overflow"))
    }

    fn f64s(&mut self, count: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(count.checked_mul(8).ok_or_else(|| invalid("size overflow"))?, what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn read_cache<R: Read>(mut r: R) -> Result<Dataset> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    if c.take(8, "magic")? != CACHE_MAGIC {
        return Err(format_err("cache byte 0", "bad magic"));
    }
    let n = c.len("row count")?;
    let d = c.len("feature width")?;
    let k = c.len("class count")?;
    let tw = c.len("target width")?;
    let flags = c.take(1, "flags")?[0];
    let plen = c.len("provenance length")?;
    let provenance = String::from_utf8(c.take(plen, "provenance")?.to_vec())
        .map_err(|_| format_err(format!("cache byte {}", c.pos), "provenance is not UTF-8"))?;
    let features = c.f64s(n * d, "features")?;
    let labels = (0..n)
        .map(|_| c.len("labels"))
        .collect::<Result<Vec<usize>>>()?;
    let mut ds = Dataset::new(features, d, labels, k, provenance)?;
    if tw > 0 {
        let t = c.f64s(n * tw, "targets")?;
        ds = ds.with_targets(t, tw)?;
    }
    if flags & 1 != 0 {
        let tags = c
            .take(n, "split tags")?
            .iter()
            .map(|&b| if b == 0 { Split::Train } else { Split::Test })
            .collect();
        ds = ds.with_split(tags)?;
    }
    if flags & 2 != 0 {
        let comps = (0..n).map(|_| c.len("components")).collect::<Result<Vec<_>>>()?;
        ds = ds.with_components(comps)?;
    }
    if c.pos != buf.len() {
        return Err(format_err(format!("cache byte {}", c.pos), "trailing bytes"));
    }
    Ok(ds)
}
