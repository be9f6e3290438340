use crate::error::{ensure_param, Result};
use crate::tensor::Tensor;

/// Row-major bit-packed `±1` matrix.
///
/// Bit `j % 64` of word `j / 64` in a row is set iff element `j` is `+1`.
/// Bits past `cols` in the last word of each row are always zero.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackedSignMatrix {
    rows: usize,
    cols: usize,
    words_per_row: usize,
    words: Vec<u64>,
}

impl PackedSignMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of valid bits per row.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn words_per_row(&self) -> usize {
        self.words_per_row
    }

    #[inline]
    pub fn row_words(&self, r: usize) -> &[u64] {
        &self.words[r * self.words_per_row..(r + 1) * self.words_per_row]
    }

    /// Mask of valid bits in word `w` of any row.
    #[inline]
    pub fn valid_mask(&self, w: usize) -> u64 {
        let rem = self.cols - w * 64;
        if rem >= 64 {
            u64::MAX
        } else {
            (1u64 << rem) - 1
        }
    }

    pub fn unpack(&self) -> Tensor {
        let mut out = Tensor::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            let words = self.row_words(r);
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = if words[c / 64] >> (c % 64) & 1 == 1 {
                    1.0
                } else {
                    -1.0
                };
            }
        }
        out
    }

    /// Packs `rows x cols` elements produced by `bit(r, c)` (true ⇔ +1).
    pub(crate) fn from_fn(rows: usize, cols: usize, bit: impl Fn(usize, usize) -> bool) -> Self {
        let words_per_row = cols.div_ceil(64);
        let mut words = vec![0u64; rows * words_per_row];
        for r in 0..rows {
            let row = &mut words[r * words_per_row..(r + 1) * words_per_row];
            for c in 0..cols {
                if bit(r, c) {
                    row[c / 64] |= 1 << (c % 64);
                }
            }
        }
        PackedSignMatrix {
            rows,
            cols,
            words_per_row,
            words,
        }
    }
}

fn check_signs(signs: &Tensor) -> Result<()> {
    for (i, &v) in signs.data().iter().enumerate() {
        ensure_param!(
            v == 1.0 || v == -1.0,
            "bitpack expects ±1 entries, found {v} at flat index {i}"
        );
    }
    Ok(())
}

/// Packs each row of a `±1` matrix.
pub fn bitpack(signs: &Tensor) -> Result<PackedSignMatrix> {
    check_signs(signs)?;
    Ok(PackedSignMatrix::from_fn(
        signs.rows(),
        signs.cols(),
        |r, c| signs[(r, c)] > 0.0,
    ))
}

/// Packs each column of a `±1` matrix, i.e. `bitpack(signsᵀ)`.
pub fn bitpack_columns(signs: &Tensor) -> Result<PackedSignMatrix> {
    check_signs(signs)?;
    Ok(PackedSignMatrix::from_fn(
        signs.cols(),
        signs.rows(),
        |r, c| signs[(c, r)] > 0.0,
    ))
}
