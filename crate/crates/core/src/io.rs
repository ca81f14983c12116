//! Binary and text formats.
//!
//! All binary formats are little-endian. A tensor file is three `u64`
//! dimensions `I, J, K` followed by the `IJK` `f64` entries in storage order
//! (frontal slice by frontal slice, each slice row-major), so slice `k` of a
//! file can be read without touching the others.
//!
//! Factor files start with the 8-byte tag `BTDFACT1`, then `I, J, K, R` and
//! the `R` block widths as `u64`, then `A`, `B`, `C` row-major.
//!
//! Checkpoints start with `BTDCKPT1`, then the configuration, the step
//! counter, `I, J, R`, the block widths, and the matrices `A, B, V_A, G_A,
//! V_B, G_B` followed by the energies. The diagnostics history is not stored.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{BtdError, Result};
use crate::factors::{BlockLayout, BtdFactors};
use crate::online::{OnlineConfig, OnlineState};
use crate::tensor::Tensor3;

const FACTORS_TAG: &[u8; 8] = b"BTDFACT1";
const CHECKPOINT_TAG: &[u8; 8] = b"BTDCKPT1";
/// Size of the tensor header in bytes.
pub const TENSOR_HEADER_BYTES: u64 = 24;

fn put_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn get_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn get_usize<R: Read>(r: &mut R, what: &str) -> Result<usize> {
    let v = get_u64(r)?;
    // Guard against absurd sizes from corrupt headers before allocating.
    if v > (1 << 40) {
        return Err(BtdError::Format(format!("implausible {what}: {v}")));
    }
    Ok(v as usize)
}

fn get_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

fn put_f64s<'a, W: Write>(w: &mut W, values: impl IntoIterator<Item = &'a f64>) -> Result<()> {
    for v in values {
        put_f64(w, *v)?;
    }
    Ok(())
}

fn get_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)?;
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

fn put_matrix<W: Write>(w: &mut W, m: &Array2<f64>) -> Result<()> {
    put_f64s(w, m.iter())
}

fn get_matrix<R: Read>(r: &mut R, rows: usize, cols: usize) -> Result<Array2<f64>> {
    let data = get_f64s(r, rows * cols)?;
    Ok(Array2::from_shape_vec((rows, cols), data).expect("length checked"))
}

fn check_tag<R: Read>(r: &mut R, tag: &[u8; 8]) -> Result<()> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    if &buf != tag {
        return Err(BtdError::Format(format!(
            "expected tag {:?}, found {:?}",
            String::from_utf8_lossy(tag),
            String::from_utf8_lossy(&buf)
        )));
    }
    Ok(())
}

fn expect_eof<R: Read>(r: &mut R) -> Result<()> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe)? {
        0 => Ok(()),
        _ => Err(BtdError::Format("trailing bytes after payload".into())),
    }
}

/// Exact byte size of a tensor file with the given dimensions.
pub fn tensor_file_size(dims: (usize, usize, usize)) -> u64 {
    TENSOR_HEADER_BYTES + 8 * (dims.0 * dims.1 * dims.2) as u64
}

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor3) -> Result<()> {
    let (i, j, k) = t.dims();
    for d in [i, j, k] {
        put_u64(w, d as u64)?;
    }
    let mut bytes = Vec::with_capacity(t.len() * 8);
    for v in t.as_slice() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    Ok(w.write_all(&bytes)?)
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor3> {
    let dims = read_tensor_header(r)?;
    let data = get_f64s(r, dims.0 * dims.1 * dims.2)?;
    expect_eof(r)?;
    Tensor3::from_vec(dims, data)
}

fn read_tensor_header<R: Read>(r: &mut R) -> Result<(usize, usize, usize)> {
    let i = get_usize(r, "dimension")?;
    let j = get_usize(r, "dimension")?;
    let k = get_usize(r, "dimension")?;
    if i == 0 || j == 0 || k == 0 {
        return Err(BtdError::Format(format!("zero dimension in header {i}x{j}x{k}")));
    }
    Ok((i, j, k))
}

pub fn save_tensor(path: impl AsRef<Path>, t: &Tensor3) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, t)?;
    Ok(w.flush()?)
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor3> {
    read_tensor(&mut BufReader::new(File::open(path)?))
}

/// Reads frontal slices one at a time from a tensor file.
pub struct SliceReader<R> {
    inner: R,
    dims: (usize, usize, usize),
    next: usize,
}

impl SliceReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(BufReader::new(File::open(path)?))
    }
}

impl<R: Read> SliceReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let dims = read_tensor_header(&mut inner)?;
        Ok(Self { inner, dims, next: 0 })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    /// Index of the next slice to be returned.
    pub fn position(&self) -> usize {
        self.next
    }

    /// Reads the next `count` slices (fewer at the end) as a tensor.
    pub fn read_block(&mut self, count: usize) -> Result<Option<Tensor3>> {
        let n = count.min(self.dims.2 - self.next);
        if n == 0 {
            return Ok(None);
        }
        let data = get_f64s(&mut self.inner, self.dims.0 * self.dims.1 * n)?;
        self.next += n;
        Tensor3::from_vec((self.dims.0, self.dims.1, n), data).map(Some)
    }
}

impl<R: Read + Seek> SliceReader<R> {
    /// Positions the reader at slice `k`.
    pub fn seek_slice(&mut self, k: usize) -> Result<()> {
        if k > self.dims.2 {
            return Err(BtdError::DimensionMismatch(format!("slice {k} beyond K = {}", self.dims.2)));
        }
        let offset = TENSOR_HEADER_BYTES + 8 * (k * self.dims.0 * self.dims.1) as u64;
        self.inner.seek(SeekFrom::Start(offset))?;
        self.next = k;
        Ok(())
    }
}

impl<R: Read> Iterator for SliceReader<R> {
    type Item = Result<Array2<f64>>;

    fn next(&mut self) -> Option<Self::Item> {
        match self.read_block(1) {
            Ok(Some(t)) => Some(Ok(t.slice(0).to_owned())),
            Ok(None) => None,
            Err(e) => Some(Err(e)),
        }
    }
}

fn put_layout<W: Write>(w: &mut W, layout: &BlockLayout) -> Result<()> {
    for &width in layout.widths() {
        put_u64(w, width as u64)?;
    }
    Ok(())
}

fn get_layout<R: Read>(r: &mut R, blocks: usize) -> Result<BlockLayout> {
    let widths = (0..blocks).map(|_| get_usize(r, "block width")).collect::<Result<Vec<_>>>()?;
    BlockLayout::from_widths(widths).map_err(|e| BtdError::Format(e.to_string()))
}

pub fn write_factors<W: Write>(w: &mut W, f: &BtdFactors) -> Result<()> {
    w.write_all(FACTORS_TAG)?;
    let (i, j, k) = f.dims();
    for d in [i, j, k, f.blocks()] {
        put_u64(w, d as u64)?;
    }
    put_layout(w, f.layout())?;
    put_matrix(w, &f.a)?;
    put_matrix(w, &f.b)?;
    put_matrix(w, &f.c)
}

pub fn read_factors<R: Read>(r: &mut R) -> Result<BtdFactors> {
    check_tag(r, FACTORS_TAG)?;
    let i = get_usize(r, "I")?;
    let j = get_usize(r, "J")?;
    let k = get_usize(r, "K")?;
    let blocks = get_usize(r, "R")?;
    let layout = get_layout(r, blocks)?;
    let cols = layout.columns();
    let a = get_matrix(r, i, cols)?;
    let b = get_matrix(r, j, cols)?;
    let c = get_matrix(r, k, blocks)?;
    expect_eof(r)?;
    BtdFactors::with_layout(a, b, c, layout)
}

pub fn save_factors(path: impl AsRef<Path>, f: &BtdFactors) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_factors(&mut w, f)?;
    Ok(w.flush()?)
}

pub fn load_factors(path: impl AsRef<Path>) -> Result<BtdFactors> {
    read_factors(&mut BufReader::new(File::open(path)?))
}

pub fn write_checkpoint<W: Write>(w: &mut W, s: &OnlineState) -> Result<()> {
    w.write_all(CHECKPOINT_TAG)?;
    let c = &s.cfg;
    for v in [c.xi, c.lambda, c.mu, c.eta2, c.rank_threshold] {
        put_f64(w, v)?;
    }
    for v in [c.warmup_slices, c.r_ini, c.l_ini, c.history_len] {
        put_u64(w, v as u64)?;
    }
    put_u64(w, s.k)?;
    for d in [s.a.nrows(), s.b.nrows(), s.layout.blocks()] {
        put_u64(w, d as u64)?;
    }
    put_layout(w, &s.layout)?;
    for m in [&s.a, &s.b, &s.v_a, &s.g_a, &s.v_b, &s.g_b] {
        put_matrix(w, m)?;
    }
    put_f64s(w, s.c_energy.iter())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<OnlineState> {
    check_tag(r, CHECKPOINT_TAG)?;
    let xi = get_f64(r)?;
    let lambda = get_f64(r)?;
    let mu = get_f64(r)?;
    let eta2 = get_f64(r)?;
    let rank_threshold = get_f64(r)?;
    let warmup_slices = get_usize(r, "warmup_slices")?;
    let r_ini = get_usize(r, "r_ini")?;
    let l_ini = get_usize(r, "l_ini")?;
    let history_len = get_usize(r, "history_len")?;
    let cfg = OnlineConfig {
        xi,
        lambda,
        mu,
        eta2,
        warmup_slices,
        r_ini,
        l_ini,
        rank_threshold,
        history_len,
    };
    cfg.validate().map_err(|e| BtdError::Format(format!("checkpoint config: {e}")))?;
    let k = get_u64(r)?;
    let i = get_usize(r, "I")?;
    let j = get_usize(r, "J")?;
    let blocks = get_usize(r, "R")?;
    let layout = get_layout(r, blocks)?;
    let n = layout.columns();
    let a = get_matrix(r, i, n)?;
    let b = get_matrix(r, j, n)?;
    let v_a = get_matrix(r, n, n)?;
    let g_a = get_matrix(r, i, n)?;
    let v_b = get_matrix(r, n, n)?;
    let g_b = get_matrix(r, j, n)?;
    let c_energy = Array1::from(get_f64s(r, blocks)?);
    expect_eof(r)?;
    Ok(OnlineState {
        history: VecDeque::with_capacity(cfg.history_len),
        cfg,
        layout,
        a,
        b,
        v_a,
        g_a,
        v_b,
        g_b,
        c_energy,
        k,
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, s: &OnlineState) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, s)?;
    Ok(w.flush()?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<OnlineState> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}

/// Writes frontal slice `k` as CSV (one row of the slice per line).
pub fn write_slice_csv<W: Write>(w: &mut W, t: &Tensor3, k: usize) -> Result<()> {
    if k >= t.dims().2 {
        return Err(BtdError::DimensionMismatch(format!("slice {k} beyond K = {}", t.dims().2)));
    }
    for row in t.slice(k).rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

/// Writes `header` followed by `(index, value)` lines, the index starting at
/// `first_index`.
pub fn write_series_csv<W: Write>(w: &mut W, header: &str, first_index: usize, values: &[f64]) -> Result<()> {
    writeln!(w, "{header}")?;
    for (n, v) in values.iter().enumerate() {
        writeln!(w, "{},{v:e}", first_index + n)?;
    }
    Ok(())
}

/// Objective trace as CSV with columns `iter,objective` (iteration 0 is
/// the initial point).
pub fn write_trace_csv<W: Write>(w: &mut W, trace: &[f64]) -> Result<()> {
    write_series_csv(w, "iter,objective", 0, trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multilinear::reconstruct;
    use crate::online::init_online;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::io::Cursor;

    fn sample() -> BtdFactors {
        let layout = BlockLayout::from_widths(vec![2, 1, 3]).unwrap();
        BtdFactors::random((4, 3, 5), layout, &mut ChaCha8Rng::seed_from_u64(1))
    }

    #[test]
    fn single_entry_tensor_is_32_bytes() {
        let mut buf = Vec::new();
        write_tensor(&mut buf, &Tensor3::from_vec((1, 1, 1), vec![2.5]).unwrap()).unwrap();
        assert_eq!(buf.len(), 32);
        assert_eq!(tensor_file_size((1, 1, 1)), 32);
        assert_eq!(&buf[..8], &1u64.to_le_bytes());
        assert_eq!(&buf[24..], &2.5f64.to_le_bytes());
    }

    #[test]
    fn tensor_roundtrip_is_bit_exact() {
        let t = reconstruct(&sample());
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert_eq!(buf.len() as u64, tensor_file_size(t.dims()));
        assert_eq!(read_tensor(&mut Cursor::new(buf)).unwrap(), t);
    }

    #[test]
    fn slice_reader_streams_in_order() {
        let t = reconstruct(&sample());
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        let reader = SliceReader::new(Cursor::new(buf.clone())).unwrap();
        let slices: Vec<_> = reader.map(|s| s.unwrap()).collect();
        assert_eq!(slices.len(), 5);
        for (k, s) in slices.iter().enumerate() {
            assert_eq!(s.view(), t.slice(k));
        }
        let mut reader = SliceReader::new(Cursor::new(buf)).unwrap();
        let warm = reader.read_block(2).unwrap().unwrap();
        assert_eq!(warm, t.sub_slices(0, 2).unwrap());
        reader.seek_slice(4).unwrap();
        assert_eq!(reader.next().unwrap().unwrap().view(), t.slice(4));
        assert!(reader.next().is_none());
    }

    #[test]
    fn truncated_and_trailing_data_rejected() {
        let t = reconstruct(&sample());
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert!(read_tensor(&mut Cursor::new(buf[..buf.len() - 1].to_vec())).is_err());
        let mut longer = buf.clone();
        longer.push(0);
        assert!(matches!(read_tensor(&mut Cursor::new(longer)), Err(BtdError::Format(_))));
    }

    #[test]
    fn factors_roundtrip_with_ragged_layout() {
        let f = sample();
        let mut buf = Vec::new();
        write_factors(&mut buf, &f).unwrap();
        assert_eq!(read_factors(&mut Cursor::new(buf.clone())).unwrap(), f);
        buf[0] = b'X';
        assert!(matches!(read_factors(&mut Cursor::new(buf)), Err(BtdError::Format(_))));
    }

    #[test]
    fn checkpoint_resume_is_bit_exact() {
        let f = sample();
        let y = reconstruct(&f);
        let mut st = init_online(&y, &f, &OnlineConfig::new(0.95, 0.2, 0.3, 3, 3)).unwrap();
        st.step(&y.slice(1)).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &st).unwrap();
        let mut resumed = read_checkpoint(&mut Cursor::new(buf)).unwrap();
        let a = st.step(&y.slice(2)).unwrap();
        let b = resumed.step(&y.slice(2)).unwrap();
        assert_eq!(a.gamma, b.gamma);
        assert_eq!(st.a(), resumed.a());
        assert_eq!(st.v_b(), resumed.v_b());
        assert_eq!(st.steps(), resumed.steps());
    }

    #[test]
    fn csv_outputs() {
        let mut out = Vec::new();
        write_trace_csv(&mut out, &[3.0, 2.5]).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "iter,objective\n0,3e0\n1,2.5e0\n");
        let t = Tensor3::from_fn((2, 2, 1), |i, j, _| (i * 2 + j) as f64);
        let mut out = Vec::new();
        write_slice_csv(&mut out, &t, 0).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "0e0,1e0\n2e0,3e0\n");
    }
}
