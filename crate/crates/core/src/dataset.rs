//! Synthetic datasets: binary shards of simulated signals with their ground
//! truth spin lists, a JSON manifest per dataset directory, and rasterised
//! truth images.
//!
//! Shard layout (all integers and floats little-endian):
//!
//! ```text
//! header   magic "SIGDS", u16 version, [u8; 32] config hash, u64 master seed,
//!          u32 shard index, u64 first sample index, u64 record count,
//!          u32 grid count, then per grid: u32 N, u32 point count, u64 τ (ns)...
//! record   u32 body length, then body:
//!          u64 sample index, u64 sample seed, u32 bath index (u32::MAX = none),
//!          u32 spin count, (f64 A^z, f64 A^⊥) per spin (Hz),
//!          f32 signal per grid point, grids in header order
//! ```

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::acquisition::{noisy_signal, AcquisitionGrid, ShotNoiseConfig};
use crate::error::{Error, Result};
use crate::prior::Interval;
use crate::seed::{tag, Seed};
use crate::simulate::Simulator;
use crate::spin_model::{HyperfineCoupling, SpinCluster};

pub const SHARD_MAGIC: &[u8; 5] = b"SIGDS";
pub const SHARD_VERSION: u16 = 1;
pub const RASTER_MAGIC: &[u8; 5] = b"SIGIM";
pub const RASTER_VERSION: u16 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEFAULT_SHARD_SIZE: u64 = 10_000;

const NO_BATH: u32 = u32::MAX;
/// Records simulated in parallel before being appended to the shard.
const WRITE_BATCH: usize = 256;
/// Gaussian tails beyond this many σ are not drawn.
const PEAK_WINDOW_SIGMAS: f64 = 6.0;

// ---------------------------------------------------------------- images

/// Pixel grid of a truth image: A^z along rows, A^⊥ along columns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageSpec {
    pub height: usize,
    pub width: usize,
    /// Hz, mapped onto rows (row 0 at the low edge).
    pub az_extent: Interval,
    /// Hz, mapped onto columns.
    pub aperp_extent: Interval,
    /// Peak standard deviation in pixels.
    pub peak_sigma: f64,
}

impl Default for ImageSpec {
    fn default() -> Self {
        Self {
            height: 204,
            width: 160,
            az_extent: Interval::khz(-50.0, 50.0),
            aperp_extent: Interval::khz(2.0, 80.0),
            peak_sigma: 1.0,
        }
    }
}

impl ImageSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::config("image height and width must be at least 1"));
        }
        if !(self.peak_sigma.is_finite() && self.peak_sigma > 0.0) {
            return Err(Error::config("peak_sigma must be positive"));
        }
        for extent in [self.az_extent, self.aperp_extent] {
            extent.validate()?;
            if extent.width() <= 0.0 {
                return Err(Error::config("image extents must have positive width"));
            }
        }
        Ok(())
    }

    pub fn pitch_az(&self) -> f64 {
        self.az_extent.width() / self.height as f64
    }

    pub fn pitch_aperp(&self) -> f64 {
        self.aperp_extent.width() / self.width as f64
    }

    pub fn contains(&self, a_par: f64, a_perp: f64) -> bool {
        self.az_extent.contains(a_par) && self.aperp_extent.contains(a_perp)
    }

    /// Continuous (row, col) of a coupling; integer values are pixel centres.
    pub fn to_pixel(&self, a_par: f64, a_perp: f64) -> (f64, f64) {
        (
            (a_par - self.az_extent.low) / self.pitch_az() - 0.5,
            (a_perp - self.aperp_extent.low) / self.pitch_aperp() - 0.5,
        )
    }

    /// Inverse of [`ImageSpec::to_pixel`].
    pub fn to_coupling(&self, row: f64, col: f64) -> (f64, f64) {
        (
            self.az_extent.low + (row + 0.5) * self.pitch_az(),
            self.aperp_extent.low + (col + 0.5) * self.pitch_aperp(),
        )
    }
}

/// Row-major image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

/// Additive amplitude-1 Gaussian per spin. Spins outside the extents are
/// not drawn.
pub fn rasterize_truth(cluster: &SpinCluster, spec: &ImageSpec) -> Image {
    let mut img = Image::zeros(spec.height, spec.width);
    let sigma = spec.peak_sigma;
    let reach = (PEAK_WINDOW_SIGMAS * sigma).ceil() as i64;
    let inv_two_var = 1.0 / (2.0 * sigma * sigma);
    for spin in cluster.iter() {
        if !spec.contains(spin.a_par, spin.a_perp) {
            continue;
        }
        let (r0, c0) = spec.to_pixel(spin.a_par, spin.a_perp);
        let (rc, cc) = (r0.round() as i64, c0.round() as i64);
        let rows = (rc - reach).max(0)..=(rc + reach).min(spec.height as i64 - 1);
        let cols = (cc - reach).max(0)..=(cc + reach).min(spec.width as i64 - 1);
        for r in rows {
            let dr = r as f64 - r0;
            let line = &mut img.data[r as usize * spec.width..(r as usize + 1) * spec.width];
            for c in cols.clone() {
                let dc = c as f64 - c0;
                line[c as usize] += (-(dr * dr + dc * dc) * inv_two_var).exp();
            }
        }
    }
    img
}

// ---------------------------------------------------------------- records

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridDescriptor {
    pub n_pulses: u32,
    pub taus_ns: Vec<u64>,
}

impl From<&AcquisitionGrid> for GridDescriptor {
    fn from(g: &AcquisitionGrid) -> Self {
        Self {
            n_pulses: g.n_pulses,
            taus_ns: g.taus_ns.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShardHeader {
    pub version: u16,
    pub config_hash: [u8; 32],
    pub master_seed: Seed,
    pub shard_index: u32,
    pub first_index: u64,
    pub n_records: u64,
    pub grids: Vec<GridDescriptor>,
}

impl ShardHeader {
    fn encode(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(SHARD_MAGIC);
        b.extend_from_slice(&self.version.to_le_bytes());
        b.extend_from_slice(&self.config_hash);
        b.extend_from_slice(&self.master_seed.0.to_le_bytes());
        b.extend_from_slice(&self.shard_index.to_le_bytes());
        b.extend_from_slice(&self.first_index.to_le_bytes());
        b.extend_from_slice(&self.n_records.to_le_bytes());
        b.extend_from_slice(&(self.grids.len() as u32).to_le_bytes());
        for g in &self.grids {
            b.extend_from_slice(&g.n_pulses.to_le_bytes());
            b.extend_from_slice(&(g.taus_ns.len() as u32).to_le_bytes());
            for t in &g.taus_ns {
                b.extend_from_slice(&t.to_le_bytes());
            }
        }
        b
    }

    fn signal_lengths(&self) -> impl Iterator<Item = usize> + '_ {
        self.grids.iter().map(|g| g.taus_ns.len())
    }
}

/// One simulated sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub sample_index: u64,
    pub seed: Seed,
    pub bath_index: Option<u32>,
    pub cluster: SpinCluster,
    /// One vector per grid.
    pub signals: Vec<Vec<f32>>,
}

impl Record {
    fn encode_body(&self, out: &mut Vec<u8>) {
        out.clear();
        out.extend_from_slice(&self.sample_index.to_le_bytes());
        out.extend_from_slice(&self.seed.0.to_le_bytes());
        out.extend_from_slice(&self.bath_index.unwrap_or(NO_BATH).to_le_bytes());
        out.extend_from_slice(&(self.cluster.len() as u32).to_le_bytes());
        for s in self.cluster.iter() {
            out.extend_from_slice(&s.a_par.to_le_bytes());
            out.extend_from_slice(&s.a_perp.to_le_bytes());
        }
        for sig in &self.signals {
            for v in sig {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
}

// ---------------------------------------------------------------- writing

struct HashingWriter {
    inner: BufWriter<File>,
    hasher: Sha256,
}

impl Write for HashingWriter {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.hasher.update(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

/// Streams records into a shard file and hashes its bytes on the way.
pub struct ShardWriter {
    path: PathBuf,
    out: HashingWriter,
    header: ShardHeader,
    written: u64,
    body: Vec<u8>,
}

impl ShardWriter {
    pub fn create(path: impl Into<PathBuf>, header: ShardHeader) -> Result<Self> {
        let path = path.into();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = HashingWriter {
            inner: BufWriter::new(file),
            hasher: Sha256::new(),
        };
        out.write_all(&header.encode()).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            path,
            out,
            header,
            written: 0,
            body: Vec::new(),
        })
    }

    pub fn push(&mut self, record: &Record) -> Result<()> {
        if self.written == self.header.n_records {
            return Err(Error::format(&self.path, "more records than declared in header"));
        }
        let lengths_match = record.signals.len() == self.header.grids.len()
            && record.signals.iter().zip(self.header.signal_lengths()).all(|(s, n)| s.len() == n);
        if !lengths_match {
            return Err(Error::format(&self.path, "signal lengths do not match header grids"));
        }
        record.encode_body(&mut self.body);
        let len = u32::try_from(self.body.len()).map_err(|_| Error::format(&self.path, "record too large"))?;
        self.out.write_all(&len.to_le_bytes()).map_err(|e| Error::io(&self.path, e))?;
        self.out.write_all(&self.body).map_err(|e| Error::io(&self.path, e))?;
        self.written += 1;
        Ok(())
    }

    /// Flush and return the SHA-256 of the file contents (hex).
    pub fn finish(mut self) -> Result<String> {
        if self.written != self.header.n_records {
            return Err(Error::format(
                &self.path,
                format!("wrote {} of {} declared records", self.written, self.header.n_records),
            ));
        }
        self.out.flush().map_err(|e| Error::io(&self.path, e))?;
        Ok(hex::encode(self.out.hasher.finalize()))
    }
}

pub fn write_shard(path: &Path, header: ShardHeader, records: &[Record]) -> Result<String> {
    let mut w = ShardWriter::create(path, header)?;
    for r in records {
        w.push(r)?;
    }
    w.finish()
}

// ---------------------------------------------------------------- reading

fn read_bytes<R: Read>(r: &mut R, n: usize) -> io::Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

/// Little-endian cursor over an in-memory record body.
struct Cursor<'a> {
    buf: &'a [u8],
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Option<[u8; N]> {
        let (head, rest) = self.buf.split_first_chunk::<N>()?;
        self.buf = rest;
        Some(*head)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Option<u64> {
        self.take().map(u64::from_le_bytes)
    }

    fn f64(&mut self) -> Option<f64> {
        self.take().map(f64::from_le_bytes)
    }

    fn f32(&mut self) -> Option<f32> {
        self.take().map(f32::from_le_bytes)
    }
}

/// Sequential record iterator over one shard.
pub struct ShardReader {
    path: PathBuf,
    input: BufReader<File>,
    header: ShardHeader,
    next: u64,
    done: bool,
}

impl ShardReader {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut input = BufReader::new(file);
        let header = Self::read_header(&path, &mut input)?;
        Ok(Self {
            path,
            input,
            header,
            next: 0,
            done: false,
        })
    }

    pub fn header(&self) -> &ShardHeader {
        &self.header
    }

    fn read_header(path: &Path, input: &mut BufReader<File>) -> Result<ShardHeader> {
        let short = |e: io::Error| {
            if e.kind() == io::ErrorKind::UnexpectedEof {
                Error::format(path, "file too short for a shard header")
            } else {
                Error::io(path, e)
            }
        };
        let mut magic = [0u8; 5];
        input.read_exact(&mut magic).map_err(short)?;
        if &magic != SHARD_MAGIC {
            return Err(Error::format(path, "bad magic, not a shard file"));
        }
        let fixed = read_bytes(input, 2 + 32 + 8 + 4 + 8 + 8 + 4).map_err(short)?;
        let mut c = Cursor { buf: &fixed };
        let version = u16::from_le_bytes(c.take().unwrap());
        if version != SHARD_VERSION {
            return Err(Error::format(path, format!("unsupported shard version {version}")));
        }
        let config_hash: [u8; 32] = c.take().unwrap();
        let master_seed = Seed(c.u64().unwrap());
        let shard_index = c.u32().unwrap();
        let first_index = c.u64().unwrap();
        let n_records = c.u64().unwrap();
        let n_grids = c.u32().unwrap();
        let mut grids = Vec::with_capacity(n_grids.min(1024) as usize);
        for _ in 0..n_grids {
            let head = read_bytes(input, 8).map_err(short)?;
            let mut c = Cursor { buf: &head };
            let n_pulses = c.u32().unwrap();
            let len = c.u32().unwrap() as usize;
            let raw = read_bytes(input, len * 8).map_err(short)?;
            let taus_ns = raw.chunks_exact(8).map(|b| u64::from_le_bytes(b.try_into().unwrap())).collect();
            grids.push(GridDescriptor { n_pulses, taus_ns });
        }
        Ok(ShardHeader {
            version,
            config_hash,
            master_seed,
            shard_index,
            first_index,
            n_records,
            grids,
        })
    }

    fn read_record(&mut self) -> Result<Record> {
        let index = self.next;
        let truncated = |e: io::Error, path: &Path| {
            if e.kind() == io::ErrorKind::UnexpectedEof {
                Error::Truncated {
                    path: path.to_path_buf(),
                    record: index,
                }
            } else {
                Error::io(path, e)
            }
        };
        let mut len = [0u8; 4];
        self.input.read_exact(&mut len).map_err(|e| truncated(e, &self.path))?;
        let body = read_bytes(&mut self.input, u32::from_le_bytes(len) as usize).map_err(|e| truncated(e, &self.path))?;

        let bad = |what: &str| Error::format(&self.path, format!("record {index}: {what}"));
        let mut c = Cursor { buf: &body };
        let sample_index = c.u64().ok_or_else(|| bad("short body"))?;
        let seed = Seed(c.u64().ok_or_else(|| bad("short body"))?);
        let bath = c.u32().ok_or_else(|| bad("short body"))?;
        let n_spins = c.u32().ok_or_else(|| bad("short body"))? as usize;
        let expected = 24 + 16 * n_spins + 4 * self.header.signal_lengths().sum::<usize>();
        if body.len() != expected {
            return Err(bad(&format!("body is {} bytes, expected {expected}", body.len())));
        }
        let mut spins = Vec::with_capacity(n_spins);
        for _ in 0..n_spins {
            let (a_par, a_perp) = (c.f64().unwrap(), c.f64().unwrap());
            spins.push(HyperfineCoupling::new(a_par, a_perp).map_err(|_| bad("non-finite coupling"))?);
        }
        let mut signals = Vec::with_capacity(self.header.grids.len());
        for n in self.header.signal_lengths() {
            let sig: Vec<f32> = (0..n).map(|_| c.f32().unwrap()).collect();
            if sig.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(bad("signal value outside [0, 1]"));
            }
            signals.push(sig);
        }
        Ok(Record {
            sample_index,
            seed,
            bath_index: (bath != NO_BATH).then_some(bath),
            cluster: SpinCluster::new(spins),
            signals,
        })
    }
}

impl Iterator for ShardReader {
    type Item = Result<Record>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        if self.next == self.header.n_records {
            self.done = true;
            let mut probe = [0u8; 1];
            return match self.input.read(&mut probe) {
                Ok(0) => None,
                Ok(_) => Some(Err(Error::format(&self.path, "trailing bytes after last record"))),
                Err(e) => Some(Err(Error::io(&self.path, e))),
            };
        }
        let r = self.read_record();
        if r.is_err() {
            self.done = true;
        }
        self.next += 1;
        Some(r)
    }
}

/// Header and every record of a shard.
pub fn read_shard(path: &Path) -> Result<(ShardHeader, Vec<Record>)> {
    let reader = ShardReader::open(path)?;
    let header = reader.header().clone();
    let records = reader.collect::<Result<Vec<_>>>()?;
    Ok((header, records))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    io::copy(&mut file, &mut hasher).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(hasher.finalize()))
}

/// [`read_shard`] after checking the file against its manifest hash.
pub fn read_shard_verified(path: &Path, sha256: &str) -> Result<(ShardHeader, Vec<Record>)> {
    let found = file_sha256(path)?;
    if found != sha256 {
        return Err(Error::HashMismatch {
            path: path.to_path_buf(),
            expected: sha256.to_string(),
            found,
        });
    }
    read_shard(path)
}

// ---------------------------------------------------------------- manifest

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardEntry {
    /// File name relative to the manifest directory.
    pub file: String,
    pub index: u32,
    pub first_index: u64,
    pub n_records: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u16,
    pub config_hash: String,
    pub master_seed: Seed,
    pub n_samples: u64,
    pub config: serde_json::Value,
    pub shards: Vec<ShardEntry>,
}

impl Manifest {
    pub fn path(dir: &Path) -> PathBuf {
        dir.join(MANIFEST_FILE)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = Self::path(dir);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))
    }

    /// Written to a temporary file and renamed, so a crash never leaves a
    /// half-written manifest.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = Self::path(dir);
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::format(&path, e.to_string()))?;
        fs::write(&tmp, text + "\n").map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }

    /// Shard paths in sample order.
    pub fn shard_paths(&self, dir: &Path) -> Vec<PathBuf> {
        self.shards.iter().map(|s| dir.join(&s.file)).collect()
    }

    /// All records of the dataset, with every shard checked against its hash.
    pub fn read_all(&self, dir: &Path) -> Result<Vec<Record>> {
        let mut out = Vec::new();
        for s in &self.shards {
            let (_, records) = read_shard_verified(&dir.join(&s.file), &s.sha256)?;
            out.extend(records);
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------- generation

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetOptions {
    pub shard_size: u64,
    /// 0 = default thread count.
    pub workers: usize,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        Self {
            shard_size: DEFAULT_SHARD_SIZE,
            workers: 0,
        }
    }
}

/// Everything that determines the content of a record, as hashed into shard
/// headers and the manifest.
pub fn dataset_config(sim: &Simulator, shot: &ShotNoiseConfig) -> serde_json::Value {
    serde_json::json!({
        "model": sim.model(),
        "grids": sim.grids(),
        "shot": shot,
    })
}

pub fn config_hash(config: &serde_json::Value) -> [u8; 32] {
    Sha256::digest(config.to_string().as_bytes()).into()
}

/// Simulate sample `index`: draw, ideal signal per grid, then shot noise
/// keyed by (sample seed, grid).
pub fn simulate_record(sim: &Simulator, shot: &ShotNoiseConfig, index: u64) -> Result<Record> {
    let draw = sim.draw(sim.master_seed().sample(index));
    let mut ideal = Vec::new();
    let mut signals = Vec::with_capacity(sim.grids().len());
    for g in 0..sim.grids().len() {
        sim.ideal_signal(&draw.cluster, draw.bath_index, g, &mut ideal)?;
        let values = if shot.enabled {
            noisy_signal(&ideal, shot, draw.seed.derive(tag::NOISE, g as u64))?
        } else {
            ideal.clone()
        };
        signals.push(values.into_iter().map(|v| v as f32).collect());
    }
    Ok(Record {
        sample_index: index,
        seed: draw.seed,
        bath_index: draw.bath_index,
        cluster: draw.cluster,
        signals,
    })
}

/// Generate `n_samples` records into `out_dir`, appending to an existing
/// dataset there when its configuration and seed match.
///
/// The master seed is the one `sim` was built with. Shard bytes depend only
/// on (configuration, seed, shard size), never on the worker count.
pub fn generate_dataset(
    sim: &Simulator,
    shot: &ShotNoiseConfig,
    n_samples: u64,
    out_dir: &Path,
    options: DatasetOptions,
) -> Result<Manifest> {
    if options.shard_size == 0 {
        return Err(Error::config("shard_size must be at least 1"));
    }
    shot.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let config = dataset_config(sim, shot);
    let hash = config_hash(&config);
    let hash_hex = hex::encode(hash);
    let seed = sim.master_seed();

    let mut manifest = if Manifest::path(out_dir).exists() {
        let m = Manifest::load(out_dir)?;
        if m.config_hash != hash_hex {
            return Err(Error::HashMismatch {
                path: Manifest::path(out_dir),
                expected: m.config_hash,
                found: hash_hex,
            });
        }
        if m.master_seed != seed {
            return Err(Error::config(format!(
                "dataset in {} was generated with seed {}, not {}",
                out_dir.display(),
                m.master_seed.0,
                seed.0
            )));
        }
        m
    } else {
        Manifest {
            format: String::from_utf8_lossy(SHARD_MAGIC).into_owned(),
            version: SHARD_VERSION,
            config_hash: hash_hex,
            master_seed: seed,
            n_samples: 0,
            config,
            shards: Vec::new(),
        }
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers)
        .build()
        .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?;
    let grids: Vec<GridDescriptor> = sim.grids().iter().map(GridDescriptor::from).collect();

    let end = manifest.n_samples + n_samples;
    while manifest.n_samples < end {
        let first = manifest.n_samples;
        let count = options.shard_size.min(end - first);
        let index = manifest.shards.len() as u32;
        let file = format!("shard-{index:05}.sigds");
        let header = ShardHeader {
            version: SHARD_VERSION,
            config_hash: hash,
            master_seed: seed,
            shard_index: index,
            first_index: first,
            n_records: count,
            grids: grids.clone(),
        };
        let mut writer = ShardWriter::create(out_dir.join(&file), header)?;
        let indices: Vec<u64> = (first..first + count).collect();
        for batch in indices.chunks(WRITE_BATCH) {
            let records = pool.install(|| {
                batch
                    .par_iter()
                    .map(|&i| simulate_record(sim, shot, i))
                    .collect::<Result<Vec<_>>>()
            })?;
            for r in &records {
                writer.push(r)?;
            }
        }
        let sha256 = writer.finish()?;
        log::info!("wrote {file} ({count} records)");
        manifest.shards.push(ShardEntry {
            file,
            index,
            first_index: first,
            n_records: count,
            sha256,
        });
        manifest.n_samples += count;
        manifest.save(out_dir)?;
    }
    Ok(manifest)
}

// ---------------------------------------------------------------- raster export

/// Flat binary image export: magic "SIGIM", u16 version, u32 height,
/// u32 width, u64 count, then per image a u64 sample index and
/// height·width f32 values in row-major order.
pub struct RasterWriter {
    path: PathBuf,
    out: BufWriter<File>,
    height: usize,
    width: usize,
    count: u64,
}

const RASTER_COUNT_OFFSET: u64 = 5 + 2 + 4 + 4;

impl RasterWriter {
    pub fn create(path: impl Into<PathBuf>, height: usize, width: usize) -> Result<Self> {
        let path = path.into();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = BufWriter::new(file);
        let mut head = Vec::new();
        head.extend_from_slice(RASTER_MAGIC);
        head.extend_from_slice(&RASTER_VERSION.to_le_bytes());
        head.extend_from_slice(&(height as u32).to_le_bytes());
        head.extend_from_slice(&(width as u32).to_le_bytes());
        head.extend_from_slice(&0u64.to_le_bytes());
        out.write_all(&head).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            path,
            out,
            height,
            width,
            count: 0,
        })
    }

    pub fn push(&mut self, sample_index: u64, image: &Image) -> Result<()> {
        if image.height != self.height || image.width != self.width {
            return Err(Error::domain(format!(
                "image is {}x{}, export expects {}x{}",
                image.height, image.width, self.height, self.width
            )));
        }
        let mut buf = Vec::with_capacity(8 + 4 * image.data.len());
        buf.extend_from_slice(&sample_index.to_le_bytes());
        for &v in &image.data {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        self.out.write_all(&buf).map_err(|e| Error::io(&self.path, e))?;
        self.count += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<u64> {
        let io = |e| Error::io(&self.path, e);
        self.out.seek(SeekFrom::Start(RASTER_COUNT_OFFSET)).map_err(io)?;
        self.out.write_all(&self.count.to_le_bytes()).map_err(io)?;
        self.out.flush().map_err(io)?;
        Ok(self.count)
    }
}

/// Read a raster export back. Values are widened from f32.
pub fn read_rasters(path: &Path) -> Result<Vec<(u64, Image)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |what: &str| Error::format(path, what.to_string());
    let mut c = Cursor { buf: &bytes };
    let magic: [u8; 5] = c.take().ok_or_else(|| bad("file too short for a raster header"))?;
    if &magic != RASTER_MAGIC {
        return Err(bad("bad magic, not a raster export"));
    }
    let version = c.take::<2>().map(u16::from_le_bytes).ok_or_else(|| bad("short header"))?;
    if version != RASTER_VERSION {
        return Err(bad(&format!("unsupported raster version {version}")));
    }
    let height = c.u32().ok_or_else(|| bad("short header"))? as usize;
    let width = c.u32().ok_or_else(|| bad("short header"))? as usize;
    let count = c.u64().ok_or_else(|| bad("short header"))?;
    let mut out = Vec::new();
    for record in 0..count {
        let truncated = || Error::Truncated {
            path: path.to_path_buf(),
            record,
        };
        let index = c.u64().ok_or_else(truncated)?;
        let mut data = Vec::with_capacity(height * width);
        for _ in 0..height * width {
            data.push(c.f32().ok_or_else(truncated)? as f64);
        }
        out.push((index, Image { height, width, data }));
    }
    if !c.buf.is_empty() {
        return Err(bad("trailing bytes after last image"));
    }
    Ok(out)
}

/// CSV export: one line per image, `sample_index` then the row-major pixels.
pub fn write_rasters_csv<'a>(
    path: &Path,
    images: impl IntoIterator<Item = (u64, &'a Image)>,
) -> Result<u64> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let mut count = 0;
    for (index, img) in images {
        if count == 0 {
            write!(out, "sample_index").map_err(io)?;
            for r in 0..img.height {
                for c in 0..img.width {
                    write!(out, ",r{r}c{c}").map_err(io)?;
                }
            }
            writeln!(out).map_err(io)?;
        }
        write!(out, "{index}").map_err(io)?;
        for &v in &img.data {
            write!(out, ",{}", v as f32).map_err(io)?;
        }
        writeln!(out).map_err(io)?;
        count += 1;
    }
    out.flush().map_err(io)?;
    Ok(count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acquisition::make_grid_ns;
    use crate::prior::{BathConfig, PriorConfig};
    use crate::simulate::SignalModel;
    use crate::spin_model::{survival_probability, DecoherenceModel, FieldConfig, PulseSequence};

    fn sim(prior: PriorConfig, bath: Option<BathConfig>, seed: u64) -> Simulator {
        let model = SignalModel {
            prior,
            bath,
            field: FieldConfig::carbon13_gauss(404.0).unwrap(),
            decoherence: DecoherenceModel::default(),
        };
        let grids = vec![
            make_grid_ns(32, 6_000, 6_400, 4).unwrap(),
            make_grid_ns(256, 10_000, 10_200, 4).unwrap(),
        ];
        Simulator::new(model, grids, Seed(seed)).unwrap()
    }

    fn small_bath() -> Option<BathConfig> {
        Some(BathConfig {
            n_configs: 4,
            spins_per_config: 50,
            ..BathConfig::default()
        })
    }

    #[test]
    fn pixel_mapping_round_trip() {
        let spec = ImageSpec::default();
        assert!((spec.pitch_az() - 100e3 / 204.0).abs() < 1e-9);
        assert!((spec.pitch_aperp() - 78e3 / 160.0).abs() < 1e-9);
        let (r, c) = spec.to_pixel(-50e3, 2e3);
        assert_eq!((r, c), (-0.5, -0.5));
        let (az, ap) = spec.to_coupling(10.0, 20.0);
        let (r, c) = spec.to_pixel(az, ap);
        assert!((r - 10.0).abs() < 1e-9 && (c - 20.0).abs() < 1e-9);
    }

    #[test]
    fn raster_conventions() {
        let spec = ImageSpec::default();
        assert_eq!(rasterize_truth(&SpinCluster::empty(), &spec).max(), 0.0);

        let (az, ap) = spec.to_coupling(100.0, 80.0);
        let one = SpinCluster::new(vec![HyperfineCoupling::new(az, ap).unwrap()]);
        let img = rasterize_truth(&one, &spec);
        assert_eq!(img.get(100, 80), 1.0);
        assert_eq!(img.max(), 1.0);
        let two_pi = 2.0 * std::f64::consts::PI;
        assert!((img.sum() - two_pi).abs() / two_pi < 0.01);

        let outside = SpinCluster::new(vec![HyperfineCoupling::from_khz(60.0, 40.0).unwrap()]);
        assert_eq!(rasterize_truth(&outside, &spec).max(), 0.0);
    }

    #[test]
    fn shard_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let s = sim(PriorConfig::default(), small_bath(), 5);
        let m = generate_dataset(
            &s,
            &ShotNoiseConfig::default(),
            100,
            dir.path(),
            DatasetOptions {
                shard_size: 64,
                workers: 2,
            },
        )
        .unwrap();
        assert_eq!(m.shards.len(), 2);
        let records = m.read_all(dir.path()).unwrap();
        assert_eq!(records.len(), 100);
        for (i, r) in records.iter().enumerate() {
            assert_eq!(r.sample_index, i as u64);
            assert_eq!(*r, simulate_record(&s, &ShotNoiseConfig::default(), i as u64).unwrap());
        }

        let path = dir.path().join(&m.shards[0].file);
        let bytes = fs::read(&path).unwrap();
        let cut = dir.path().join("cut.sigds");
        let (header, _) = read_shard(&path).unwrap();
        let mut offset = header.encode().len();
        for _ in 0..10 {
            offset += 4 + u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap()) as usize;
        }
        fs::write(&cut, &bytes[..offset + 7]).unwrap();
        match read_shard(&cut) {
            Err(Error::Truncated { record, .. }) => assert_eq!(record, 10),
            other => panic!("expected truncation, got {other:?}"),
        }

        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        fs::write(&cut, &wrong).unwrap();
        assert!(matches!(read_shard(&cut), Err(Error::Format { .. })));

        assert!(matches!(
            read_shard_verified(&path, &"0".repeat(64)),
            Err(Error::HashMismatch { .. })
        ));
    }

    #[test]
    fn append_continues_and_checks_config() {
        let dir = tempfile::tempdir().unwrap();
        let s = sim(PriorConfig::default(), None, 9);
        let shot = ShotNoiseConfig::default();
        let opts = DatasetOptions {
            shard_size: 30,
            workers: 1,
        };
        generate_dataset(&s, &shot, 30, dir.path(), opts).unwrap();
        let m = generate_dataset(&s, &shot, 20, dir.path(), opts).unwrap();
        assert_eq!(m.n_samples, 50);
        assert_eq!(m.shards[1].first_index, 30);

        let fresh = tempfile::tempdir().unwrap();
        let all = generate_dataset(&s, &shot, 50, fresh.path(), opts).unwrap();
        assert_eq!(m.read_all(dir.path()).unwrap(), all.read_all(fresh.path()).unwrap());

        let other = sim(PriorConfig { n_max: 3, ..PriorConfig::default() }, None, 9);
        assert!(matches!(
            generate_dataset(&other, &shot, 5, dir.path(), opts),
            Err(Error::HashMismatch { .. })
        ));
    }

    #[test]
    fn noiseless_single_sample_matches_direct_evaluation() {
        let prior = PriorConfig {
            n_min: 2,
            n_max: 2,
            az_range: Interval::khz(12.0, 12.0),
            aperp_range: Interval::khz(35.0, 35.0),
        };
        let s = sim(prior, None, 3);
        let shot = ShotNoiseConfig {
            enabled: false,
            ..ShotNoiseConfig::default()
        };
        let r = simulate_record(&s, &shot, 0).unwrap();
        let field = s.model().field;
        let dec = s.model().decoherence;
        for (g, grid) in s.grids().iter().enumerate() {
            for (i, tau) in grid.taus().enumerate() {
                let seq = PulseSequence::new(grid.n_pulses, tau).unwrap();
                let p = survival_probability(&r.cluster, &seq, &field, &dec).unwrap();
                assert_eq!(r.signals[g][i], p as f32);
            }
        }
    }

    #[test]
    fn raster_export_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ImageSpec {
            height: 12,
            width: 9,
            ..ImageSpec::default()
        };
        let c = SpinCluster::new(vec![HyperfineCoupling::from_khz(3.0, 40.0).unwrap()]);
        let img = rasterize_truth(&c, &spec);
        let path = dir.path().join("r.sigim");
        let mut w = RasterWriter::create(&path, 12, 9).unwrap();
        w.push(7, &img).unwrap();
        w.push(8, &Image::zeros(12, 9)).unwrap();
        assert_eq!(w.finish().unwrap(), 2);
        let back = read_rasters(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].0, 7);
        for (a, b) in back[0].1.data.iter().zip(&img.data) {
            assert_eq!(*a, *b as f32 as f64);
        }
        let csv = dir.path().join("r.csv");
        assert_eq!(write_rasters_csv(&csv, [(7, &img)]).unwrap(), 1);
        let text = fs::read_to_string(&csv).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(text.lines().nth(1).unwrap().split(',').count(), 1 + 12 * 9);
    }
}
