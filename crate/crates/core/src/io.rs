//! File formats: binary signals (`CLSG`) and shape banks (`CLSH`),
//! activation CSV and JSON metadata sidecars.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::signal::{MultichannelSignal, ShapeBank, SparseActivation, Spike};

pub const SIGNAL_MAGIC: &[u8; 4] = b"CLSG";
pub const SHAPES_MAGIC: &[u8; 4] = b"CLSH";
pub const FORMAT_VERSION: u16 = 1;
pub const ACTIVATION_HEADER: [&str; 3] = ["neuron", "time", "amplitude"];

fn read_exact<const K: usize>(r: &mut impl Read) -> Result<[u8; K]> {
    let mut buf = [0u8; K];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("file truncated".into()),
        _ => Error::Io(e),
    })?;
    Ok(buf)
}

fn read_header(r: &mut impl Read, magic: &[u8; 4]) -> Result<()> {
    let m = read_exact::<4>(r)?;
    if &m != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&m),
            String::from_utf8_lossy(magic)
        )));
    }
    let v = u16::from_le_bytes(read_exact::<2>(r)?);
    if v != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {v}")));
    }
    Ok(())
}

fn read_f64s(r: &mut impl Read, count: usize) -> Result<Vec<f64>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != count * 8 {
        return Err(Error::Format(format!(
            "payload has {} bytes, expected {}",
            bytes.len(),
            count * 8
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

fn write_f64s(w: &mut impl Write, data: &[f64]) -> Result<()> {
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_signal<W: Write>(y: &MultichannelSignal, mut w: W) -> Result<()> {
    w.write_all(SIGNAL_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    let e = u32::try_from(y.n_electrodes()).map_err(|_| Error::Format("too many electrodes".into()))?;
    w.write_all(&e.to_le_bytes())?;
    w.write_all(&(y.n_samples() as u64).to_le_bytes())?;
    write_f64s(&mut w, y.data())?;
    w.flush()?;
    Ok(())
}

pub fn read_signal<R: Read>(mut r: R) -> Result<MultichannelSignal> {
    read_header(&mut r, SIGNAL_MAGIC)?;
    let e = u32::from_le_bytes(read_exact::<4>(&mut r)?) as usize;
    let t = u64::from_le_bytes(read_exact::<8>(&mut r)?);
    let t = usize::try_from(t).map_err(|_| Error::Format(format!("sample count {t} too large")))?;
    let count = e
        .checked_mul(t)
        .ok_or_else(|| Error::Format("signal size overflows".into()))?;
    let data = read_f64s(&mut r, count)?;
    MultichannelSignal::new(e, t, data).map_err(|err| Error::Format(err.to_string()))
}

pub fn write_shapes<W: Write>(s: &ShapeBank, mut w: W) -> Result<()> {
    w.write_all(SHAPES_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    for v in [s.n_neurons(), s.n_electrodes(), s.shape_len()] {
        let v = u32::try_from(v).map_err(|_| Error::Format("shape bank dimension too large".into()))?;
        w.write_all(&v.to_le_bytes())?;
    }
    write_f64s(&mut w, s.data())?;
    w.flush()?;
    Ok(())
}

pub fn read_shapes<R: Read>(mut r: R) -> Result<ShapeBank> {
    read_header(&mut r, SHAPES_MAGIC)?;
    let n = u32::from_le_bytes(read_exact::<4>(&mut r)?) as usize;
    let e = u32::from_le_bytes(read_exact::<4>(&mut r)?) as usize;
    let l = u32::from_le_bytes(read_exact::<4>(&mut r)?) as usize;
    let count = n
        .checked_mul(e)
        .and_then(|v| v.checked_mul(l))
        .ok_or_else(|| Error::Format("shape bank size overflows".into()))?;
    let data = read_f64s(&mut r, count)?;
    ShapeBank::new(n, e, l, data).map_err(|err| Error::Format(err.to_string()))
}

pub fn write_activation<W: Write>(a: &SparseActivation, w: W) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(ACTIVATION_HEADER).map_err(csv_err)?;
    for s in a.entries() {
        out.serialize(s).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads an activation CSV; the sizes are not stored in the file.
pub fn read_activation<R: Read>(r: R, n_neurons: usize, n_samples: usize) -> Result<SparseActivation> {
    let mut rd = csv::Reader::from_reader(r);
    let header = rd.headers().map_err(csv_err)?.clone();
    if header.iter().collect::<Vec<_>>() != ACTIVATION_HEADER {
        return Err(Error::Format(format!("activation header {:?}", header)));
    }
    let spikes = rd
        .deserialize::<Spike>()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(csv_err)?;
    SparseActivation::new(n_neurons, n_samples, spikes).map_err(|e| Error::Format(e.to_string()))
}

fn csv_err(e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            _ => unreachable!(),
        }
    } else {
        Error::Format(e.to_string())
    }
}

/// Provenance written next to every output file as `<file>.meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub library_version: String,
    pub rng: String,
    pub config_digest: String,
    pub config: serde_json::Value,
}

impl Meta {
    pub fn new<C: Serialize>(config: &C, rng: &str) -> Result<Self> {
        let config = serde_json::to_value(config).map_err(|e| Error::Format(e.to_string()))?;
        Ok(Meta {
            library_version: env!("CARGO_PKG_VERSION").to_string(),
            rng: rng.to_string(),
            config_digest: config_digest(&config),
            config,
        })
    }
}

/// SHA-256 of the compact JSON form (object keys sorted).
pub fn config_digest(config: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(config.to_string().as_bytes()))
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

pub fn write_sidecar(path: &Path, meta: &Meta) -> Result<()> {
    let f = BufWriter::new(File::create(sidecar_path(path))?);
    serde_json::to_writer_pretty(f, meta).map_err(|e| Error::Format(e.to_string()))
}

pub fn read_sidecar(path: &Path) -> Result<Meta> {
    let f = BufReader::new(File::open(sidecar_path(path))?);
    serde_json::from_reader(f).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_signal(path: &Path, y: &MultichannelSignal) -> Result<()> {
    write_signal(y, BufWriter::new(File::create(path)?))
}

pub fn load_signal(path: &Path) -> Result<MultichannelSignal> {
    read_signal(BufReader::new(File::open(path)?))
}

pub fn save_shapes(path: &Path, s: &ShapeBank) -> Result<()> {
    write_shapes(s, BufWriter::new(File::create(path)?))
}

pub fn load_shapes(path: &Path) -> Result<ShapeBank> {
    read_shapes(BufReader::new(File::open(path)?))
}

pub fn save_activation(path: &Path, a: &SparseActivation) -> Result<()> {
    write_activation(a, BufWriter::new(File::create(path)?))
}

pub fn load_activation(path: &Path, n_neurons: usize, n_samples: usize) -> Result<SparseActivation> {
    read_activation(BufReader::new(File::open(path)?), n_neurons, n_samples)
}
