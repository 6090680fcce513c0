//! Dense signed-8-bit tensors and the on-disk tensor image format.
//!
//! The file format is little-endian: a header of four `u32` dimensions
//! followed by the payload as signed 8-bit entries in row-major order.
//! A file may contain several tensors back to back; readers consume them
//! in sequence until end of file.

use std::io::{self, Read, Write};

/// Row-major signed 8-bit tensor with a fixed 4-axis header.
///
/// Trailing axes of length 1 pad lower-rank data (a conv kernel is stored
/// as `[out_channels, in_channels, kernel, 1]`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct I8Tensor {
    pub dims: [u32; 4],
    pub data: Vec<i8>,
}

impl I8Tensor {
    pub fn new(dims: [u32; 4], data: Vec<i8>) -> Self {
        assert_eq!(
            dims.iter().map(|&d| d as usize).product::<usize>(),
            data.len(),
            "dims {:?} do not match payload length {}",
            dims,
            data.len()
        );
        Self { dims, data }
    }

    pub fn zeros(dims: [u32; 4]) -> Self {
        let n = dims.iter().map(|&d| d as usize).product();
        Self {
            dims,
            data: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Entry at `[a, b, c, d]`.
    pub fn get(&self, a: usize, b: usize, c: usize, d: usize) -> i8 {
        self.data[self.offset(a, b, c, d)]
    }

    pub fn set(&mut self, a: usize, b: usize, c: usize, d: usize, v: i8) {
        let off = self.offset(a, b, c, d);
        self.data[off] = v;
    }

    fn offset(&self, a: usize, b: usize, c: usize, d: usize) -> usize {
        let [_, d1, d2, d3] = self.dims.map(|x| x as usize);
        ((a * d1 + b) * d2 + c) * d3 + d
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        for d in self.dims {
            w.write_all(&d.to_le_bytes())?;
        }
        // i8 -> u8 reinterpretation keeps the byte values
        let bytes: Vec<u8> = self.data.iter().map(|&v| v as u8).collect();
        w.write_all(&bytes)
    }

    pub fn read_from<R: Read>(r: &mut R) -> io::Result<Self> {
        let mut hdr = [0u8; 16];
        r.read_exact(&mut hdr)?;
        let mut dims = [0u32; 4];
        for (i, d) in dims.iter_mut().enumerate() {
            *d = u32::from_le_bytes(hdr[i * 4..i * 4 + 4].try_into().unwrap());
        }
        let n: usize = dims.iter().map(|&d| d as usize).product();
        let mut payload = vec![0u8; n];
        r.read_exact(&mut payload)?;
        Ok(Self {
            dims,
            data: payload.into_iter().map(|b| b as i8).collect(),
        })
    }
}

/// Write a sequence of tensors as one image file.
pub fn write_tensor_image<W: Write>(w: &mut W, tensors: &[I8Tensor]) -> io::Result<()> {
    for t in tensors {
        t.write_to(w)?;
    }
    Ok(())
}

/// Read tensors until end of file.
pub fn read_tensor_image<R: Read>(r: &mut R) -> io::Result<Vec<I8Tensor>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut out = Vec::new();
    let mut cursor = io::Cursor::new(buf);
    loop {
        let pos = cursor.position();
        match I8Tensor::read_from(&mut cursor) {
            Ok(t) => out.push(t),
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof && pos == cursor.position() => {
                break
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Binary spike train indexed by `(timestep, channel, position)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpikeTensor {
    pub timesteps: usize,
    pub channels: usize,
    pub length: usize,
    data: Vec<u8>,
}

impl SpikeTensor {
    pub fn zeros(timesteps: usize, channels: usize, length: usize) -> Self {
        Self {
            timesteps,
            channels,
            length,
            data: vec![0; timesteps * channels * length],
        }
    }

    pub fn get(&self, t: usize, ch: usize, pos: usize) -> bool {
        self.data[(t * self.channels + ch) * self.length + pos] != 0
    }

    pub fn set(&mut self, t: usize, ch: usize, pos: usize, v: bool) {
        self.data[(t * self.channels + ch) * self.length + pos] = v as u8;
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().map(|&b| b as usize).sum()
    }

    pub fn is_all_zero(&self) -> bool {
        self.data.iter().all(|&b| b == 0)
    }

    /// Flat view in `(t, ch, pos)` order, one byte per spike.
    pub fn raw(&self) -> &[u8] {
        &self.data
    }

    pub fn to_i8_tensor(&self) -> I8Tensor {
        I8Tensor::new(
            [
                self.timesteps as u32,
                self.channels as u32,
                self.length as u32,
                1,
            ],
            self.data.iter().map(|&b| b as i8).collect(),
        )
    }

    pub fn from_i8_tensor(t: &I8Tensor) -> Self {
        let [ts, ch, len, one] = t.dims.map(|x| x as usize);
        assert_eq!(one, 1, "spike tensor image must have trailing axis 1");
        Self {
            timesteps: ts,
            channels: ch,
            length: len,
            data: t.data.iter().map(|&v| (v != 0) as u8).collect(),
        }
    }
}
