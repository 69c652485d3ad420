//! DFS1 feature-stream container.
//!
//! Layout (all integers little-endian, floats IEEE-754 binary32):
//!
//! ```text
//! header: "DFS1" | version u32 (=1) | L u32 | L x dim u32 | C u32 | label_flag u8
//! batch:  t u32 | N u32 | L x (N*dim f32, row-major) | N*C f32 logits | N u8 labels
//! ```
//!
//! Batches follow the header back-to-back until end of file. Logits are present
//! iff `C > 0`, labels iff `label_flag == 1`.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"DFS1";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("bad magic {0:?}, expected \"DFS1\"")]
    BadMagic([u8; 4]),
    #[error("unsupported stream version {0}")]
    UnsupportedVersion(u32),
    #[error("stream truncated inside batch {batch}")]
    Truncated { batch: usize },
    #[error("stream header truncated")]
    TruncatedHeader,
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("batch {batch}: dimension mismatch: {detail}")]
    DimensionMismatch { batch: usize, detail: String },
    #[error("batch {batch}: non-finite value in {what}")]
    NonFinite { batch: usize, what: String },
    #[error("batch {batch}: invalid label byte {value}")]
    InvalidLabel { batch: usize, value: u8 },
    #[error("stream contains no batches")]
    Empty,
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, StreamError>;

/// Dense row-major `f32` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    /// Panics if `data.len() != rows * cols`.
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix buffer does not match shape");
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> {
        // chunks_exact(0) panics; a zero-width matrix has no meaningful rows here.
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Ground-truth annotation carried in-band. Only evaluation code reads it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GroundTruth {
    Id,
    Ood,
    Unknown,
}

impl GroundTruth {
    pub fn to_byte(self) -> u8 {
        match self {
            GroundTruth::Id => 0,
            GroundTruth::Ood => 1,
            GroundTruth::Unknown => 255,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(GroundTruth::Id),
            1 => Some(GroundTruth::Ood),
            255 => Some(GroundTruth::Unknown),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamHeader {
    pub layer_dims: Vec<u32>,
    /// Logit width; 0 when logits are absent.
    pub num_classes: u32,
    pub has_labels: bool,
}

impl StreamHeader {
    pub fn new(layer_dims: Vec<u32>, num_classes: u32, has_labels: bool) -> Result<Self> {
        let h = Self {
            layer_dims,
            num_classes,
            has_labels,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn num_layers(&self) -> usize {
        self.layer_dims.len()
    }

    pub fn has_logits(&self) -> bool {
        self.num_classes > 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.is_empty() {
            return Err(StreamError::InvalidHeader("at least one layer required".into()));
        }
        if let Some(l) = self.layer_dims.iter().position(|&d| d == 0) {
            return Err(StreamError::InvalidHeader(format!("layer {l} has dimension 0")));
        }
        Ok(())
    }

    /// Encoded size in bytes.
    pub fn byte_len(&self) -> usize {
        4 + 4 + 4 + 4 * self.layer_dims.len() + 4 + 1
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        self.validate()?;
        w.write_all(&MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.layer_dims.len() as u32).to_le_bytes())?;
        for d in &self.layer_dims {
            w.write_all(&d.to_le_bytes())?;
        }
        w.write_all(&self.num_classes.to_le_bytes())?;
        w.write_all(&[u8::from(self.has_labels)])?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_header_bytes(r, &mut magic)?;
        if magic != MAGIC {
            return Err(StreamError::BadMagic(magic));
        }
        let version = read_header_u32(r)?;
        if version != VERSION {
            return Err(StreamError::UnsupportedVersion(version));
        }
        let num_layers = read_header_u32(r)?;
        let mut layer_dims = Vec::with_capacity(num_layers.min(4096) as usize);
        for _ in 0..num_layers {
            layer_dims.push(read_header_u32(r)?);
        }
        let num_classes = read_header_u32(r)?;
        let mut flag = [0u8; 1];
        read_header_bytes(r, &mut flag)?;
        let has_labels = match flag[0] {
            0 => false,
            1 => true,
            other => {
                return Err(StreamError::InvalidHeader(format!("label flag {other}")));
            }
        };
        let header = Self {
            layer_dims,
            num_classes,
            has_labels,
        };
        header.validate()?;
        Ok(header)
    }
}

fn read_header_bytes<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => StreamError::TruncatedHeader,
        _ => StreamError::Io(e),
    })
}

fn read_header_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_header_bytes(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    pub index: u32,
    pub layers: Vec<Matrix>,
    pub logits: Option<Matrix>,
    pub labels: Option<Vec<GroundTruth>>,
}

/// The label-free part of a batch: what a detector is allowed to see.
#[derive(Debug, Clone, Copy)]
pub struct BatchView<'a> {
    pub layers: &'a [Matrix],
    pub logits: Option<&'a Matrix>,
}

impl BatchView<'_> {
    pub fn len(&self) -> usize {
        self.layers.first().map_or(0, Matrix::rows)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl FeatureBatch {
    pub fn len(&self) -> usize {
        self.layers.first().map_or(0, Matrix::rows)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn detector_view(&self) -> BatchView<'_> {
        BatchView {
            layers: &self.layers,
            logits: self.logits.as_ref(),
        }
    }

    /// Checks the batch against `header`. `position` is the ordinal used in errors.
    pub fn validate(&self, header: &StreamHeader, position: usize) -> Result<()> {
        let mismatch = |detail: String| StreamError::DimensionMismatch {
            batch: position,
            detail,
        };
        let n = self.len();
        if n == 0 {
            return Err(mismatch("batch has no samples".into()));
        }
        if self.layers.len() != header.num_layers() {
            return Err(mismatch(format!(
                "{} layers, header declares {}",
                self.layers.len(),
                header.num_layers()
            )));
        }
        for (l, (m, &dim)) in self.layers.iter().zip(&header.layer_dims).enumerate() {
            if m.cols() != dim as usize {
                return Err(mismatch(format!("layer {l} has dim {}, header declares {dim}", m.cols())));
            }
            if m.rows() != n {
                return Err(mismatch(format!("layer {l} has {} rows, expected {n}", m.rows())));
            }
            if !m.all_finite() {
                return Err(StreamError::NonFinite {
                    batch: position,
                    what: format!("layer {l}"),
                });
            }
        }
        match (&self.logits, header.num_classes) {
            (None, 0) => {}
            (Some(m), c) if c > 0 => {
                if m.cols() != c as usize || m.rows() != n {
                    return Err(mismatch(format!(
                        "logits are {}x{}, expected {n}x{c}",
                        m.rows(),
                        m.cols()
                    )));
                }
                if !m.all_finite() {
                    return Err(StreamError::NonFinite {
                        batch: position,
                        what: "logits".into(),
                    });
                }
            }
            (Some(_), _) => return Err(mismatch("logits present but header declares C=0".into())),
            (None, c) => return Err(mismatch(format!("logits missing, header declares C={c}"))),
        }
        match (&self.labels, header.has_labels) {
            (None, false) => {}
            (Some(l), true) if l.len() == n => {}
            (Some(l), true) => {
                return Err(mismatch(format!("{} labels for {n} samples", l.len())));
            }
            (Some(_), false) => return Err(mismatch("labels present but header flag is 0".into())),
            (None, true) => return Err(mismatch("labels missing but header flag is 1".into())),
        }
        Ok(())
    }

    pub fn byte_len(&self) -> usize {
        let floats: usize = self.layers.iter().map(|m| m.as_slice().len()).sum::<usize>()
            + self.logits.as_ref().map_or(0, |m| m.as_slice().len());
        8 + 4 * floats + self.labels.as_ref().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestMarker {
    pub batch: u32,
    pub kind: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamManifest {
    pub path: PathBuf,
    pub header: StreamHeader,
    pub num_batches: usize,
    pub batch_sizes: Vec<u32>,
    pub description: String,
    /// Schedule events (shift onsets, OOD-source switches) when the stream is synthetic.
    #[serde(default)]
    pub markers: Vec<ManifestMarker>,
}

impl StreamManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

/// Sequential DFS1 writer. The header is written on construction.
pub struct StreamWriter<W: Write> {
    inner: W,
    header: StreamHeader,
    batch_sizes: Vec<u32>,
}

impl<W: Write> StreamWriter<W> {
    pub fn new(mut inner: W, header: StreamHeader) -> Result<Self> {
        header.write_to(&mut inner)?;
        Ok(Self {
            inner,
            header,
            batch_sizes: Vec::new(),
        })
    }

    pub fn header(&self) -> &StreamHeader {
        &self.header
    }

    pub fn write_batch(&mut self, batch: &FeatureBatch) -> Result<()> {
        let position = self.batch_sizes.len();
        batch.validate(&self.header, position)?;
        let n = batch.len() as u32;
        let w = &mut self.inner;
        w.write_all(&batch.index.to_le_bytes())?;
        w.write_all(&n.to_le_bytes())?;
        for m in &batch.layers {
            write_f32s(w, m.as_slice())?;
        }
        if let Some(m) = &batch.logits {
            write_f32s(w, m.as_slice())?;
        }
        if let Some(labels) = &batch.labels {
            let bytes: Vec<u8> = labels.iter().map(|l| l.to_byte()).collect();
            w.write_all(&bytes)?;
        }
        self.batch_sizes.push(n);
        Ok(())
    }

    pub fn batch_sizes(&self) -> &[u32] {
        &self.batch_sizes
    }

    /// Flushes and returns the sink together with the per-batch sizes written.
    pub fn finish(mut self) -> Result<(W, Vec<u32>)> {
        self.inner.flush()?;
        Ok((self.inner, self.batch_sizes))
    }
}

fn write_f32s<W: Write>(w: &mut W, values: &[f32]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Writes a complete stream to `path`.
pub fn write_stream<'a, I>(
    header: &StreamHeader,
    batches: I,
    path: &Path,
    description: &str,
) -> Result<StreamManifest>
where
    I: IntoIterator<Item = &'a FeatureBatch>,
{
    let file = BufWriter::new(File::create(path)?);
    let mut writer = StreamWriter::new(file, header.clone())?;
    for b in batches {
        writer.write_batch(b)?;
    }
    let (_, batch_sizes) = writer.finish()?;
    if batch_sizes.is_empty() {
        return Err(StreamError::Empty);
    }
    Ok(StreamManifest {
        path: path.to_path_buf(),
        header: header.clone(),
        num_batches: batch_sizes.len(),
        batch_sizes,
        description: description.to_string(),
        markers: Vec::new(),
    })
}

/// Lazy DFS1 reader. Holds at most one decoded batch at a time.
pub struct StreamReader<R: Read> {
    inner: R,
    header: StreamHeader,
    position: usize,
    done: bool,
}

impl StreamReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self> {
        Self::new(BufReader::new(File::open(path)?))
    }
}

impl<R: Read> StreamReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let header = StreamHeader::read_from(&mut inner)?;
        Ok(Self {
            inner,
            header,
            position: 0,
            done: false,
        })
    }

    pub fn header(&self) -> &StreamHeader {
        &self.header
    }

    fn read_batch(&mut self) -> Result<Option<FeatureBatch>> {
        let position = self.position;
        let truncated = |e: io::Error| match e.kind() {
            io::ErrorKind::UnexpectedEof => StreamError::Truncated { batch: position },
            _ => StreamError::Io(e),
        };

        // A clean end of stream is EOF exactly at a batch boundary.
        let mut first = [0u8; 4];
        let mut got = 0;
        while got < 4 {
            match self.inner.read(&mut first[got..]) {
                Ok(0) if got == 0 => return Ok(None),
                Ok(0) => return Err(StreamError::Truncated { batch: position }),
                Ok(k) => got += k,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(StreamError::Io(e)),
            }
        }
        let index = u32::from_le_bytes(first);
        let mut nb = [0u8; 4];
        self.inner.read_exact(&mut nb).map_err(truncated)?;
        let n = u32::from_le_bytes(nb) as usize;
        if n == 0 {
            return Err(StreamError::DimensionMismatch {
                batch: position,
                detail: "batch has no samples".into(),
            });
        }

        let mut layers = Vec::with_capacity(self.header.num_layers());
        for (l, &dim) in self.header.layer_dims.iter().enumerate() {
            let data = read_f32s(&mut self.inner, n * dim as usize).map_err(truncated)?;
            let m = Matrix::new(n, dim as usize, data);
            if !m.all_finite() {
                return Err(StreamError::NonFinite {
                    batch: position,
                    what: format!("layer {l}"),
                });
            }
            layers.push(m);
        }
        let logits = if self.header.has_logits() {
            let c = self.header.num_classes as usize;
            let m = Matrix::new(n, c, read_f32s(&mut self.inner, n * c).map_err(truncated)?);
            if !m.all_finite() {
                return Err(StreamError::NonFinite {
                    batch: position,
                    what: "logits".into(),
                });
            }
            Some(m)
        } else {
            None
        };
        let labels = if self.header.has_labels {
            let mut raw = vec![0u8; n];
            self.inner.read_exact(&mut raw).map_err(truncated)?;
            let mut labels = Vec::with_capacity(n);
            for b in raw {
                labels.push(GroundTruth::from_byte(b).ok_or(StreamError::InvalidLabel {
                    batch: position,
                    value: b,
                })?);
            }
            Some(labels)
        } else {
            None
        };
        self.position += 1;
        Ok(Some(FeatureBatch {
            index,
            layers,
            logits,
            labels,
        }))
    }
}

fn read_f32s<R: Read>(r: &mut R, count: usize) -> io::Result<Vec<f32>> {
    let mut raw = vec![0u8; count * 4];
    r.read_exact(&mut raw)?;
    Ok(raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

impl<R: Read> Iterator for StreamReader<R> {
    type Item = Result<FeatureBatch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.read_batch() {
            Ok(Some(b)) => Some(Ok(b)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

/// Opens `path` and returns the header plus a lazy batch iterator.
pub fn read_stream(path: &Path) -> Result<(StreamHeader, StreamReader<BufReader<File>>)> {
    let reader = StreamReader::open(path)?;
    Ok((reader.header().clone(), reader))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn tiny() -> (StreamHeader, FeatureBatch) {
        let header = StreamHeader::new(vec![2], 2, true).unwrap();
        let batch = FeatureBatch {
            index: 0,
            layers: vec![Matrix::from_rows(&[[1.0f32, 2.0], [3.0, 4.0]])],
            logits: Some(Matrix::from_rows(&[[0.5f32, -0.5], [1.5, 2.5]])),
            labels: Some(vec![GroundTruth::Id, GroundTruth::Ood]),
        };
        (header, batch)
    }

    fn encode(header: &StreamHeader, batches: &[FeatureBatch]) -> Vec<u8> {
        let mut w = StreamWriter::new(Vec::new(), header.clone()).unwrap();
        for b in batches {
            w.write_batch(b).unwrap();
        }
        w.finish().unwrap().0
    }

    #[test]
    fn byte_layout_size() {
        let (h, b) = tiny();
        let bytes = encode(&h, &[b]);
        // header 4+4+4+4+4+1, batch 4+4 + 2*2*4 + 2*2*4 + 2
        assert_eq!(bytes.len(), 21 + 42);
        assert_eq!(&bytes[..4], b"DFS1");
        assert_eq!(bytes[20], 1);
    }

    #[test]
    fn round_trip() {
        let (h, b) = tiny();
        let mut b2 = b.clone();
        b2.index = 1;
        let bytes = encode(&h, &[b.clone(), b2.clone()]);
        let reader = StreamReader::new(Cursor::new(bytes)).unwrap();
        assert_eq!(reader.header(), &h);
        let got: Vec<_> = reader.collect::<Result<_>>().unwrap();
        assert_eq!(got, vec![b, b2]);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let (h, mut b) = tiny();
        b.layers[0] = Matrix::from_rows(&[[1.0f32, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        let mut w = StreamWriter::new(Vec::new(), h).unwrap();
        assert!(matches!(w.write_batch(&b), Err(StreamError::DimensionMismatch { .. })));
    }

    #[test]
    fn non_finite_rejected() {
        let (h, mut b) = tiny();
        b.layers[0].row_mut(1)[0] = f32::NAN;
        let mut w = StreamWriter::new(Vec::new(), h).unwrap();
        assert!(matches!(w.write_batch(&b), Err(StreamError::NonFinite { .. })));
    }

    #[test]
    fn bad_magic() {
        let (h, b) = tiny();
        let mut bytes = encode(&h, &[b]);
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(
            StreamReader::new(Cursor::new(bytes)),
            Err(StreamError::BadMagic(m)) if &m == b"XXXX"
        ));
    }

    #[test]
    fn unsupported_version() {
        let (h, b) = tiny();
        let mut bytes = encode(&h, &[b]);
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            StreamReader::new(Cursor::new(bytes)),
            Err(StreamError::UnsupportedVersion(2))
        ));
    }

    #[test]
    fn truncation_names_batch() {
        let (h, b) = tiny();
        let bytes = encode(&h, &[b.clone(), b]);
        // cut inside the second batch's feature matrix
        let cut = 21 + 42 + 8 + 6;
        let reader = StreamReader::new(Cursor::new(bytes[..cut].to_vec())).unwrap();
        let results: Vec<_> = reader.collect();
        assert_eq!(results.len(), 2);
        assert!(results[0].is_ok());
        assert!(matches!(results[1], Err(StreamError::Truncated { batch: 1 })));
    }

    #[test]
    fn invalid_label_byte() {
        let (h, b) = tiny();
        let mut bytes = encode(&h, &[b]);
        let last = bytes.len() - 1;
        bytes[last] = 7;
        let mut reader = StreamReader::new(Cursor::new(bytes)).unwrap();
        assert!(matches!(
            reader.next(),
            Some(Err(StreamError::InvalidLabel { batch: 0, value: 7 }))
        ));
    }

    #[test]
    fn logits_absent_layout() {
        let header = StreamHeader::new(vec![3, 1], 0, false).unwrap();
        let batch = FeatureBatch {
            index: 9,
            layers: vec![
                Matrix::from_rows(&[[1.0f32, 2.0, 3.0]]),
                Matrix::from_rows(&[[4.0f32]]),
            ],
            logits: None,
            labels: None,
        };
        let bytes = encode(&header, std::slice::from_ref(&batch));
        assert_eq!(bytes.len(), header.byte_len() + batch.byte_len());
        assert_eq!(batch.byte_len(), 8 + 16);
        let got: Vec<_> = StreamReader::new(Cursor::new(bytes))
            .unwrap()
            .collect::<Result<_>>()
            .unwrap();
        assert_eq!(got, vec![batch]);
    }

    #[test]
    fn header_rejects_zero_dim() {
        assert!(StreamHeader::new(vec![], 2, false).is_err());
        assert!(StreamHeader::new(vec![4, 0], 2, false).is_err());
    }
}
