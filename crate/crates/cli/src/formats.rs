//! Binary sample and parameter files, CSV emission and PGM graymaps.
//!
//! All binary formats are little-endian and start with a four-byte magic
//! followed by a `u16` version.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use lrflow_core::linalg::Matrix;
use lrflow_core::mcmc::SampleSet;
use lrflow_core::rbm::RbmParams;
use lrflow_core::thermometer::ThermometerModel;
use lrflow_core::{LatticeGeometry, SpinGrid};

use crate::error::{CliError, CliResult};

pub const FORMAT_VERSION: u16 = 1;
pub const SPNL_MAGIC: &[u8; 4] = b"SPNL";
pub const RBMW_MAGIC: &[u8; 4] = b"RBMW";
pub const THRM_MAGIC: &[u8; 4] = b"THRM";

/// Header fields of a sample file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpnlHeader {
    pub side: u32,
    pub count: u32,
    pub temperature: f64,
    pub alpha: f64,
    pub seed: u64,
}

struct Writer(Vec<u8>);

impl Writer {
    fn new(magic: &[u8; 4]) -> Self {
        let mut w = Self(Vec::new());
        w.0.extend_from_slice(magic);
        w.0.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        w
    }
    fn u32(&mut self, x: usize) -> CliResult<()> {
        let v = u32::try_from(x).map_err(|_| CliError::Config(format!("{x} does not fit a u32 field")))?;
        self.0.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }
    fn u64(&mut self, x: u64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn f64s(&mut self, xs: &[f64]) {
        xs.iter().for_each(|x| self.0.extend_from_slice(&x.to_le_bytes()));
    }
}

struct Reader<'a> {
    path: &'a Path,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn open(path: &'a Path, buf: &'a [u8], magic: &[u8; 4]) -> CliResult<Self> {
        let mut r = Self { path, buf, pos: 0 };
        if r.take(4)? != magic {
            return Err(CliError::format(path, format!("expected magic {}", String::from_utf8_lossy(magic))));
        }
        let version = u16::from_le_bytes(r.take(2)?.try_into().expect("two bytes"));
        if version != FORMAT_VERSION {
            return Err(CliError::format(path, format!("unsupported version {version}")));
        }
        Ok(r)
    }
    fn take(&mut self, n: usize) -> CliResult<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| CliError::format(self.path, "truncated file"))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u32(&mut self) -> CliResult<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }
    fn u64(&mut self) -> CliResult<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("eight bytes")))
    }
    fn f64(&mut self) -> CliResult<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("eight bytes")))
    }
    fn f64s(&mut self, n: usize) -> CliResult<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| CliError::format(self.path, "array too large"))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes"))).collect())
    }
    fn finish(self) -> CliResult<()> {
        if self.pos != self.buf.len() {
            return Err(CliError::format(self.path, "trailing bytes"));
        }
        Ok(())
    }
}

fn read(path: &Path, producer: &'static str) -> CliResult<Vec<u8>> {
    match fs::read(path) {
        Ok(b) => Ok(b),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(CliError::missing(path, producer)),
        Err(e) => Err(CliError::io(path, e)),
    }
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn encode_samples(samples: &SampleSet, seed: u64) -> CliResult<Vec<u8>> {
    let side = samples.geometry().side();
    let mut w = Writer::new(SPNL_MAGIC);
    w.u32(side)?;
    w.u32(samples.len())?;
    w.f64s(&[samples.temperature(), samples.geometry().alpha()]);
    w.u64(seed);
    for g in samples.grids() {
        w.0.extend(g.spins().iter().map(|&s| u8::from(s > 0)));
    }
    Ok(w.0)
}

/// Decodes a sample file; `mu` is not stored and comes from the caller.
pub fn decode_samples(path: &Path, bytes: &[u8], mu: f64) -> CliResult<(SpnlHeader, SampleSet)> {
    let mut r = Reader::open(path, bytes, SPNL_MAGIC)?;
    let header = SpnlHeader { side: r.u32()?, count: r.u32()?, temperature: r.f64()?, alpha: r.f64()?, seed: r.u64()? };
    let side = header.side as usize;
    let sites = side.checked_mul(side).ok_or_else(|| CliError::format(path, "lattice too large"))?;
    let mut grids = Vec::with_capacity(header.count as usize);
    for _ in 0..header.count {
        let raw = r.take(sites)?;
        let spins = raw
            .iter()
            .map(|&b| match b {
                0 => Ok(-1),
                1 => Ok(1),
                other => Err(CliError::format(path, format!("spin byte {other:#04x}"))),
            })
            .collect::<CliResult<Vec<i8>>>()?;
        grids.push(SpinGrid::from_spins(side, spins)?);
    }
    r.finish()?;
    let geom = LatticeGeometry::new(side, header.alpha, mu)?;
    Ok((header, SampleSet::new(geom, header.temperature, grids)?))
}

pub fn write_samples(path: &Path, samples: &SampleSet, seed: u64) -> CliResult<()> {
    write_bytes(path, &encode_samples(samples, seed)?)
}

pub fn read_samples(path: &Path, mu: f64) -> CliResult<(SpnlHeader, SampleSet)> {
    decode_samples(path, &read(path, "sample")?, mu)
}

pub fn encode_rbm(params: &RbmParams) -> CliResult<Vec<u8>> {
    let mut w = Writer::new(RBMW_MAGIC);
    w.u32(params.n_visible())?;
    w.u32(params.n_hidden())?;
    w.f64s(params.weights.as_slice());
    w.f64s(&params.visible_bias);
    w.f64s(&params.hidden_bias);
    Ok(w.0)
}

pub fn decode_rbm(path: &Path, bytes: &[u8]) -> CliResult<RbmParams> {
    let mut r = Reader::open(path, bytes, RBMW_MAGIC)?;
    let (nv, nh) = (r.u32()? as usize, r.u32()? as usize);
    let w = r.f64s(nv.saturating_mul(nh))?;
    let bv = r.f64s(nv)?;
    let bh = r.f64s(nh)?;
    r.finish()?;
    Ok(RbmParams::from_parts(Matrix::from_vec(nv, nh, w), bv, bh)?)
}

pub fn write_rbm(path: &Path, params: &RbmParams) -> CliResult<()> {
    write_bytes(path, &encode_rbm(params)?)
}

pub fn read_rbm(path: &Path, producer: &'static str) -> CliResult<RbmParams> {
    decode_rbm(path, &read(path, producer)?)
}

pub fn encode_thermometer(model: &ThermometerModel) -> CliResult<Vec<u8>> {
    let mut w = Writer::new(THRM_MAGIC);
    w.u32(model.input_dim())?;
    w.u32(model.width())?;
    w.u32(model.n_classes())?;
    w.f64s(&model.classes);
    w.f64s(model.w1.as_slice());
    w.f64s(&model.b1);
    w.f64s(model.w2.as_slice());
    w.f64s(&model.b2);
    Ok(w.0)
}

pub fn decode_thermometer(path: &Path, bytes: &[u8]) -> CliResult<ThermometerModel> {
    let mut r = Reader::open(path, bytes, THRM_MAGIC)?;
    let (n, h, k) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let classes = r.f64s(k)?;
    let w1 = r.f64s(h.saturating_mul(n))?;
    let b1 = r.f64s(h)?;
    let w2 = r.f64s(k.saturating_mul(h))?;
    let b2 = r.f64s(k)?;
    r.finish()?;
    Ok(ThermometerModel { classes, w1: Matrix::from_vec(h, n, w1), b1, w2: Matrix::from_vec(k, h, w2), b2 })
}

pub fn write_thermometer(path: &Path, model: &ThermometerModel) -> CliResult<()> {
    write_bytes(path, &encode_thermometer(model)?)
}

pub fn read_thermometer(path: &Path) -> CliResult<ThermometerModel> {
    decode_thermometer(path, &read(path, "thermo")?)
}

/// One CSV cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(u64),
    Float(f64),
    Text(String),
    Empty,
}

impl From<u64> for Cell {
    fn from(x: u64) -> Self {
        Self::Int(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Self::Int(x as u64)
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Self::Float(x)
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Self::Empty, Self::Float)
    }
}

impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Self::Text(x.to_owned())
    }
}

/// CSV text with a `# config_hash=... seed=...` comment line, a header
/// row and shortest round-trip float formatting.
#[derive(Debug, Clone)]
pub struct Csv {
    text: String,
    columns: usize,
}

impl Csv {
    pub fn new(config_hash: &str, seed: u64, header: &[&str]) -> Self {
        let mut text = format!("# config_hash={config_hash} seed={seed}\n");
        text.push_str(&header.join(","));
        text.push('\n');
        Self { text, columns: header.len() }
    }

    pub fn with_columns(config_hash: &str, seed: u64, header: Vec<String>) -> Self {
        let refs: Vec<&str> = header.iter().map(String::as_str).collect();
        Self::new(config_hash, seed, &refs)
    }

    /// Appends a row; panics if the cell count differs from the header.
    pub fn row(&mut self, cells: impl IntoIterator<Item = Cell>) {
        let mut n = 0;
        for (k, c) in cells.into_iter().enumerate() {
            if k > 0 {
                self.text.push(',');
            }
            match c {
                Cell::Int(x) => write!(self.text, "{x}").expect("string write"),
                Cell::Float(x) => write!(self.text, "{x}").expect("string write"),
                Cell::Text(s) => self.text.push_str(&s),
                Cell::Empty => {}
            }
            n += 1;
        }
        assert_eq!(n, self.columns, "CSV row width");
        self.text.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        write_bytes(path, self.text.as_bytes())
    }
}

/// Maps `[-1, 1]` linearly onto `0..=255`, clamping outside values.
pub fn gray_level(x: f64) -> u8 {
    let y = ((x.clamp(-1.0, 1.0) + 1.0) * 127.5).round();
    y as u8
}

/// Binary (P5) portable graymap of a row-major `side x side` field.
pub fn encode_pgm(values: &[f64], side: usize) -> Vec<u8> {
    assert_eq!(values.len(), side * side, "PGM field size");
    let mut out = format!("P5\n{side} {side}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| gray_level(v)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use lrflow_core::rng::seeded;

    fn set() -> SampleSet {
        let mut rng = seeded(3);
        let geom = LatticeGeometry::new(3, 3.0, 0.25).unwrap();
        let grids = (0..4).map(|_| SpinGrid::random(3, &mut rng)).collect();
        SampleSet::new(geom, 7.7, grids).unwrap()
    }

    #[test]
    fn spnl_layout_is_bit_exact() {
        let geom = LatticeGeometry::new(2, 3.0, 0.0).unwrap();
        let s = SampleSet::new(geom, 0.5, vec![SpinGrid::from_spins(2, vec![1, -1, -1, 1]).unwrap()]).unwrap();
        let b = encode_samples(&s, 9).unwrap();
        let mut expect = b"SPNL".to_vec();
        expect.extend_from_slice(&1u16.to_le_bytes());
        expect.extend_from_slice(&2u32.to_le_bytes());
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&0.5f64.to_le_bytes());
        expect.extend_from_slice(&3.0f64.to_le_bytes());
        expect.extend_from_slice(&9u64.to_le_bytes());
        expect.extend_from_slice(&[1, 0, 0, 1]);
        assert_eq!(b, expect);
        assert_eq!(b.len(), 4 + 2 + 4 + 4 + 8 + 8 + 8 + 4);
    }

    #[test]
    fn spnl_round_trip() {
        let s = set();
        let b = encode_samples(&s, 42).unwrap();
        let (h, back) = decode_samples(Path::new("x"), &b, 0.25).unwrap();
        assert_eq!(back, s);
        assert_eq!((h.side, h.count, h.seed), (3, 4, 42));
    }

    #[test]
    fn corrupt_files_rejected() {
        let b = encode_samples(&set(), 1).unwrap();
        let p = Path::new("x");
        assert!(decode_samples(p, &b[..b.len() - 1], 0.0).is_err());
        let mut extra = b.clone();
        extra.push(0);
        assert!(decode_samples(p, &extra, 0.0).is_err());
        let mut bad = b.clone();
        *bad.last_mut().unwrap() = 2;
        assert!(decode_samples(p, &bad, 0.0).is_err());
        let mut magic = b.clone();
        magic[0] = b'X';
        assert!(decode_samples(p, &magic, 0.0).is_err());
        let mut version = b;
        version[4] = 2;
        assert!(decode_samples(p, &version, 0.0).is_err());
    }

    #[test]
    fn rbm_and_thermometer_round_trip() {
        let mut rng = seeded(1);
        let p = RbmParams::random(6, 4, 0.3, &mut rng);
        let b = encode_rbm(&p).unwrap();
        assert_eq!(&b[..4], b"RBMW");
        assert_eq!(b.len(), 6 + 8 + 8 * (24 + 6 + 4));
        assert_eq!(decode_rbm(Path::new("x"), &b).unwrap(), p);

        let m = ThermometerModel::new(9, 5, vec![0.0, 1.0, 2.0], &mut rng);
        let b = encode_thermometer(&m).unwrap();
        assert_eq!(&b[..4], b"THRM");
        assert_eq!(b.len(), 6 + 12 + 8 * (3 + 45 + 5 + 15 + 3));
        assert_eq!(decode_thermometer(Path::new("x"), &b).unwrap(), m);
        assert!(decode_rbm(Path::new("x"), &b).is_err());
    }

    #[test]
    fn csv_format() {
        let mut c = Csv::new("abc", 7, &["T", "delta", "note"]);
        c.row([Cell::from(0.1), Cell::from(None), Cell::from("x")]);
        c.row([Cell::from(3usize), Cell::from(1e-7), Cell::from(f64::NAN)]);
        assert_eq!(c.as_str(), "# config_hash=abc seed=7\nT,delta,note\n0.1,,x\n3,0.0000001,NaN\n");
        let x = 0.1 + 0.2;
        let mut d = Csv::new("h", 0, &["x"]);
        d.row([Cell::from(x)]);
        let printed: f64 = d.as_str().lines().nth(2).unwrap().parse().unwrap();
        assert_eq!(printed, x);
    }

    #[test]
    fn pgm_quantization() {
        assert_eq!(gray_level(-1.0), 0);
        assert_eq!(gray_level(1.0), 255);
        assert_eq!(gray_level(0.0), 128);
        assert_eq!(gray_level(5.0), 255);
        let img = encode_pgm(&[-1.0, 0.0, 0.5, 1.0], 2);
        assert_eq!(img, [b"P5\n2 2\n255\n".as_slice(), &[0, 128, 191, 255]].concat());
    }
}
