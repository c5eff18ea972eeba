use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// LLM judgement on whether a recognised object belongs in the scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Certain,
    Possible,
    Unlikely,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Certain => "certain",
            Verdict::Possible => "possible",
            Verdict::Unlikely => "unlikely",
        }
    }

    pub fn score(self) -> LikelihoodScore {
        match self {
            Verdict::Certain => LikelihoodScore::Two,
            Verdict::Possible => LikelihoodScore::Half,
            Verdict::Unlikely => LikelihoodScore::Zero,
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Verdict {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "certain" => Ok(Verdict::Certain),
            "possible" => Ok(Verdict::Possible),
            "unlikely" => Ok(Verdict::Unlikely),
            other => Err(Error::protocol(
                "verdict",
                format!("`{other}` is not one of certain, possible, unlikely"),
            )),
        }
    }
}

/// Per-object likelihood score. Only the three legal values exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub enum LikelihoodScore {
    Zero,
    Half,
    Two,
}

impl LikelihoodScore {
    pub const ALL: [LikelihoodScore; 3] = [
        LikelihoodScore::Zero,
        LikelihoodScore::Half,
        LikelihoodScore::Two,
    ];

    pub fn value(self) -> f64 {
        match self {
            LikelihoodScore::Zero => 0.0,
            LikelihoodScore::Half => 0.5,
            LikelihoodScore::Two => 2.0,
        }
    }

    pub fn is_positive(self) -> bool {
        self != LikelihoodScore::Zero
    }
}

impl From<LikelihoodScore> for f64 {
    fn from(s: LikelihoodScore) -> f64 {
        s.value()
    }
}

impl TryFrom<f64> for LikelihoodScore {
    type Error = String;

    fn try_from(v: f64) -> std::result::Result<Self, String> {
        LikelihoodScore::ALL
            .into_iter()
            .find(|s| s.value() == v)
            .ok_or_else(|| format!("{v} is not a legal likelihood score"))
    }
}

/// Maps a scorer verdict for `tag` to its likelihood score.
pub fn assign_score(tag: &str, verdict: &str) -> Result<LikelihoodScore> {
    verdict
        .parse::<Verdict>()
        .map(Verdict::score)
        .map_err(|e| match e {
            Error::Protocol { message, .. } => Error::protocol(format!("{tag}.verdict"), message),
            other => other,
        })
}

/// Row-major binary grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "MaskRle", into = "MaskRle")]
pub struct BinaryMask {
    height: usize,
    width: usize,
    cells: Vec<bool>,
}

impl BinaryMask {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            cells: vec![false; height * width],
        }
    }

    pub fn from_cells(height: usize, width: usize, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != height * width {
            return Err(Error::shape(
                "mask cells",
                &[height * width],
                &[cells.len()],
            ));
        }
        Ok(Self {
            height,
            width,
            cells,
        })
    }

    /// Mask that is set on `[y0, y1) × [x0, x1)`, clipped to the grid.
    pub fn rect(height: usize, width: usize, y0: usize, y1: usize, x0: usize, x1: usize) -> Self {
        let mut m = Self::empty(height, width);
        for y in y0..y1.min(height) {
            for x in x0..x1.min(width) {
                m.cells[y * width + x] = true;
            }
        }
        m
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.cells[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, value: bool) {
        self.cells[y * self.width + x] = value;
    }

    /// Cells in query order `p = y * width + x`.
    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn area(&self) -> usize {
        self.cells.iter().filter(|c| **c).count()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    /// Nearest-neighbour resampling of the grid to `height × width`. A target
    /// cell is set when any source cell it overlaps is set.
    pub fn resample(&self, height: usize, width: usize) -> Result<BinaryMask> {
        if height == 0 || width == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::shape(
                "mask resample",
                &[self.height, self.width],
                &[height, width],
            ));
        }
        if (height, width) == self.dims() {
            return Ok(self.clone());
        }
        let span = |i: usize, src: usize, dst: usize| {
            let lo = i * src / dst;
            let hi = ((i + 1) * src).div_ceil(dst).max(lo + 1);
            lo..hi.min(src)
        };
        let mut out = BinaryMask::empty(height, width);
        for ty in 0..height {
            for tx in 0..width {
                let hit = span(ty, self.height, height)
                    .any(|sy| span(tx, self.width, width).any(|sx| self.get(sy, sx)));
                out.set(ty, tx, hit);
            }
        }
        Ok(out)
    }

    pub fn to_rle(&self) -> MaskRle {
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0usize;
        for &c in &self.cells {
            if c == current {
                run += 1;
            } else {
                counts.push(run);
                current = c;
                run = 1;
            }
        }
        counts.push(run);
        MaskRle {
            height: self.height,
            width: self.width,
            counts,
        }
    }
}

/// Run-length encoded mask: alternating runs over the row-major cells,
/// starting with a (possibly empty) run of unset cells.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskRle {
    pub height: usize,
    pub width: usize,
    pub counts: Vec<usize>,
}

impl MaskRle {
    pub fn decode(&self) -> Result<BinaryMask> {
        let total: usize = self.counts.iter().sum();
        if total != self.height * self.width {
            return Err(Error::protocol(
                "mask.counts",
                format!(
                    "runs cover {total} cells, grid is {}x{}",
                    self.height, self.width
                ),
            ));
        }
        let mut cells = Vec::with_capacity(total);
        for (i, &n) in self.counts.iter().enumerate() {
            cells.extend(std::iter::repeat_n(i % 2 == 1, n));
        }
        BinaryMask::from_cells(self.height, self.width, cells)
    }
}

impl TryFrom<MaskRle> for BinaryMask {
    type Error = String;

    fn try_from(rle: MaskRle) -> std::result::Result<Self, String> {
        rle.decode().map_err(|e| e.to_string())
    }
}

impl From<BinaryMask> for MaskRle {
    fn from(m: BinaryMask) -> MaskRle {
        m.to_rle()
    }
}

/// One recognised object with its score, local caption and mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectAnnotation {
    pub object_index: usize,
    pub tag: String,
    pub local_caption: String,
    pub score: LikelihoodScore,
    pub mask: BinaryMask,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl ObjectAnnotation {
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.mask.dims() != (height, width) {
            return Err(Error::shape(
                format!("mask of `{}`", self.tag),
                &[height, width],
                &[self.mask.height(), self.mask.width()],
            ));
        }
        if self.score.is_positive() && self.local_caption.trim().is_empty() {
            return Err(Error::Consistency(format!(
                "object `{}` has score {} but no local caption",
                self.tag,
                self.score.value()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn verdict_scores() {
        assert_eq!(assign_score("book", "certain").unwrap().value(), 2.0);
        assert_eq!(assign_score("desk", "possible").unwrap().value(), 0.5);
        assert_eq!(assign_score("banana", "unlikely").unwrap().value(), 0.0);
    }

    #[test]
    fn unknown_verdict_names_the_tag() {
        match assign_score("pen", "maybe") {
            Err(Error::Protocol { field, .. }) => assert_eq!(field, "pen.verdict"),
            other => panic!("{other:?}"),
        }
        assert!(assign_score("pen", "Certain").is_err());
    }

    #[test]
    fn score_serde_rejects_illegal_values() {
        assert_eq!(
            serde_json::to_string(&LikelihoodScore::Half).unwrap(),
            "0.5"
        );
        assert_eq!(
            serde_json::from_str::<LikelihoodScore>("2.0").unwrap(),
            LikelihoodScore::Two
        );
        assert!(serde_json::from_str::<LikelihoodScore>("1.0").is_err());
    }

    #[test]
    fn rle_known_encoding() {
        let m = BinaryMask::rect(2, 3, 0, 1, 1, 3);
        assert_eq!(m.to_rle().counts, vec![1, 2, 3]);
        let full = BinaryMask::rect(1, 2, 0, 1, 0, 2);
        assert_eq!(full.to_rle().counts, vec![0, 2]);
        let bad = MaskRle {
            height: 2,
            width: 2,
            counts: vec![1, 1],
        };
        assert!(matches!(bad.decode(), Err(Error::Protocol { .. })));
    }

    #[test]
    fn resample_marks_any_covered_cell() {
        let mut m = BinaryMask::empty(8, 8);
        m.set(5, 2, true);
        let down = m.resample(4, 4).unwrap();
        assert_eq!(down.area(), 1);
        assert!(down.get(2, 1));
        let up = down.resample(8, 8).unwrap();
        assert_eq!(up.area(), 4);
        assert!(up.get(4, 2) && up.get(5, 3));
        let odd = m.resample(3, 3).unwrap();
        assert!(odd.area() >= 1);
        assert!(BinaryMask::empty(4, 4).resample(2, 2).unwrap().is_empty());
    }

    proptest! {
        #[test]
        fn rle_roundtrip(h in 1usize..10, w in 1usize..10, bits in proptest::collection::vec(any::<bool>(), 100)) {
            let cells = bits[..h * w].to_vec();
            let m = BinaryMask::from_cells(h, w, cells).unwrap();
            let json = serde_json::to_string(&m).unwrap();
            let back: BinaryMask = serde_json::from_str(&json).unwrap();
            prop_assert_eq!(back, m);
        }

        #[test]
        fn downsample_keeps_nonempty(h in 1usize..12, w in 1usize..12, y in 0usize..12, x in 0usize..12, th in 1usize..12, tw in 1usize..12) {
            let mut m = BinaryMask::empty(h, w);
            m.set(y % h, x % w, true);
            prop_assert!(m.resample(th, tw).unwrap().area() >= 1);
        }
    }
}
