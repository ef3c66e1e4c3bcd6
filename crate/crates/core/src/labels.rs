use crate::error::{shape_err, Result};
use crate::tensor::{Scalar, Tensor};

/// Label value excluded from losses and metrics.
pub const IGNORE_LABEL: u8 = 255;

/// Per-pixel class indices, `(n, h, w)` row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    dims: [usize; 3],
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(dims: [usize; 3], data: Vec<u8>) -> Result<Self> {
        if data.len() != dims.iter().product::<usize>() {
            return Err(shape_err!("label dims {dims:?} need {} entries, got {}", dims.iter().product::<usize>(), data.len()));
        }
        Ok(Self { dims, data })
    }

    pub fn filled(dims: [usize; 3], label: u8) -> Self {
        Self {
            dims,
            data: vec![label; dims.iter().product()],
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn height(&self) -> usize {
        self.dims[1]
    }

    pub fn width(&self) -> usize {
        self.dims[2]
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn at(&self, n: usize, y: usize, x: usize) -> u8 {
        self.data[(n * self.dims[1] + y) * self.dims[2] + x]
    }

    /// Stacks single-sample maps along the batch axis.
    pub fn stack(maps: &[&LabelMap]) -> Result<Self> {
        let first = maps.first().ok_or_else(|| shape_err!("stack of no label maps"))?;
        let [_, h, w] = first.dims;
        let mut data = Vec::new();
        let mut n = 0;
        for m in maps {
            if m.dims[1] != h || m.dims[2] != w {
                return Err(shape_err!("label maps disagree: {:?} vs {:?}", m.dims, first.dims));
            }
            n += m.dims[0];
            data.extend_from_slice(&m.data);
        }
        Self::new([n, h, w], data)
    }

    /// Sample `n` as its own map.
    pub fn sample(&self, n: usize) -> LabelMap {
        let hw = self.dims[1] * self.dims[2];
        LabelMap {
            dims: [1, self.dims[1], self.dims[2]],
            data: self.data[n * hw..(n + 1) * hw].to_vec(),
        }
    }

    /// Channel argmax of a score map; ties resolve to the lowest class.
    pub fn argmax<T: Scalar>(scores: &Tensor<T>) -> Self {
        let [n, c, h, w] = scores.dims();
        let hw = h * w;
        let mut data = Vec::with_capacity(n * hw);
        for b in 0..n {
            for p in 0..hw {
                let mut best = 0;
                let mut best_v = scores.data()[b * c * hw + p];
                for ch in 1..c {
                    let v = scores.data()[(b * c + ch) * hw + p];
                    if v > best_v {
                        best = ch;
                        best_v = v;
                    }
                }
                data.push(best as u8);
            }
        }
        LabelMap { dims: [n, h, w], data }
    }
}
