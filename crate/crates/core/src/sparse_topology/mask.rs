use serde::{Deserialize, Serialize};

use crate::numerics::Matrix;

/// Dense binary mask with the same shape as the weight matrix it gates.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn ones(rows: usize, cols: usize) -> Self {
        Mask {
            rows,
            cols,
            bits: vec![true; rows * cols],
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mask {
            rows,
            cols,
            bits: vec![false; rows * cols],
        }
    }

    pub fn from_bits(rows: usize, cols: usize, bits: Vec<bool>) -> Option<Self> {
        (bits.len() == rows * cols).then_some(Mask { rows, cols, bits })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.cols + c]
    }

    #[inline]
    pub fn get_flat(&self, i: usize) -> bool {
        self.bits[i]
    }

    #[inline]
    pub fn set_flat(&mut self, i: usize, on: bool) {
        self.bits[i] = on;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Zeroes `m` wherever the mask is off.
    pub fn apply(&self, m: &mut Matrix) {
        debug_assert_eq!(m.shape(), self.shape());
        for (v, &on) in m.as_mut_slice().iter_mut().zip(&self.bits) {
            if !on {
                *v = 0.0;
            }
        }
    }

    /// One line of `0`/`1` per row (output dimension).
    pub fn to_bitmap(&self) -> String {
        let mut s = String::with_capacity(self.rows * (self.cols + 1));
        for r in 0..self.rows {
            for c in 0..self.cols {
                s.push(if self.get(r, c) { '1' } else { '0' });
            }
            s.push('\n');
        }
        s
    }

    pub fn from_bitmap(text: &str) -> Option<Self> {
        let lines: Vec<&str> = text.lines().filter(|l| !l.is_empty()).collect();
        let cols = lines.first().map_or(0, |l| l.len());
        let mut bits = Vec::with_capacity(lines.len() * cols);
        for l in &lines {
            if l.len() != cols {
                return None;
            }
            for ch in l.chars() {
                match ch {
                    '1' => bits.push(true),
                    '0' => bits.push(false),
                    _ => return None,
                }
            }
        }
        Mask::from_bits(lines.len(), cols, bits)
    }
}
