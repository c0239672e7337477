//! Run-length wire format for masks.
//!
//! Row-major scan; runs alternate background/foreground and always start with
//! a (possibly zero-length) background run. The header carries the grid shape.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::Mask;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    pub height: usize,
    pub width: usize,
    pub runs: Vec<usize>,
}

impl RleMask {
    pub fn encode(mask: &Mask) -> Self {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0usize;
        for &v in mask.data() {
            if v == current {
                len += 1;
            } else {
                runs.push(len);
                current = v;
                len = 1;
            }
        }
        runs.push(len);
        RleMask {
            height: mask.height(),
            width: mask.width(),
            runs,
        }
    }

    pub fn decode(&self) -> Result<Mask> {
        let total: usize = self.runs.iter().sum();
        if total != self.height * self.width {
            return Err(Error::Shape(format!(
                "runs cover {total} pixels, header declares {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(total);
        for (i, &n) in self.runs.iter().enumerate() {
            data.extend(std::iter::repeat_n(i % 2 == 1, n));
        }
        Mask::from_vec(self.height, self.width, data)
    }
}
