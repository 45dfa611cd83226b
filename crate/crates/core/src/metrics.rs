//! Overlap metrics for binary masks and the soft Dice training loss.
//!
//! Reported Dice and Jaccard are computed from integer pixel counts of
//! binarized masks. The training loss is the smoothed soft Dice on
//! probabilities (see [`soft_dice_loss`]).

use std::fmt::Write as _;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_SMOOTH: f64 = 1.0;

/// Binary mask with values strictly in `{0, 1}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::DataLength {
                shape: vec![height, width],
                expected: height * width,
                found: bits.len(),
            });
        }
        if let Some(bad) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::Contract(format!("mask value {bad} is not 0 or 1")));
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![0; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(y, x) as u8);
            }
        }
        Self {
            height,
            width,
            bits,
        }
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

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x] == 1
    }

    pub fn set(&mut self, y: usize, x: usize, on: bool) {
        self.bits[y * self.width + x] = on as u8;
    }

    /// Foreground pixel count.
    pub fn count(&self) -> u64 {
        self.bits.iter().map(|&b| b as u64).sum()
    }

    pub fn complement(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().map(|&b| 1 - b).collect(),
        }
    }

    /// `[1, 1, H, W]` tensor of 0.0 / 1.0.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![1, 1, self.height, self.width],
            self.bits.iter().map(|&b| b as f64).collect(),
        )
        .expect("mask dims are consistent")
    }

    /// Foreground centroid `(y, x)`, `None` when empty.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut sy, mut sx, mut n) = (0.0, 0.0, 0.0);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(y, x) {
                    sy += y as f64;
                    sx += x as f64;
                    n += 1.0;
                }
            }
        }
        (n > 0.0).then(|| (sy / n, sx / n))
    }

    fn check_dims(&self, other: &BinaryMask, op: &'static str) -> Result<()> {
        if self.height != other.height {
            return Err(Error::Dimension {
                op,
                axis: "height",
                expected: self.height,
                found: other.height,
            });
        }
        if self.width != other.width {
            return Err(Error::Dimension {
                op,
                axis: "width",
                expected: self.width,
                found: other.width,
            });
        }
        Ok(())
    }
}

/// `(|A ∩ B|, |A ∪ B|)` in pixels.
pub fn areas(a: &BinaryMask, b: &BinaryMask) -> Result<(u64, u64)> {
    a.check_dims(b, "areas")?;
    let (mut inter, mut union) = (0u64, 0u64);
    for (&x, &y) in a.bits.iter().zip(&b.bits) {
        inter += (x & y) as u64;
        union += (x | y) as u64;
    }
    Ok((inter, union))
}

fn dice_from_counts(inter: u64, union: u64) -> f64 {
    // |X| + |Y| = |X ∩ Y| + |X ∪ Y|
    let total = inter + union;
    if total == 0 {
        1.0
    } else {
        2.0 * inter as f64 / total as f64
    }
}

fn jaccard_from_counts(inter: u64, union: u64) -> f64 {
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// `2|X ∩ Y| / (|X| + |Y|)`; two empty masks score 1.
pub fn dice_coefficient(x: &BinaryMask, y: &BinaryMask) -> Result<f64> {
    let (i, u) = areas(x, y)?;
    Ok(dice_from_counts(i, u))
}

/// `|A ∩ B| / |A ∪ B|`; two empty masks score 1.
pub fn jaccard(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let (i, u) = areas(a, b)?;
    Ok(jaccard_from_counts(i, u))
}

/// Pixel is foreground iff `p >= threshold`. `pred` must hold exactly one
/// image; its last two axes are taken as height and width.
pub fn binarize(pred: &Tensor, threshold: f64) -> Result<BinaryMask> {
    let shape = pred.shape();
    if shape.len() < 2 {
        return Err(Error::Rank {
            op: "binarize",
            expected: 2,
            found: shape.to_vec(),
        });
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    if pred.numel() != h * w {
        return Err(Error::Contract(format!(
            "binarize expects a single-channel single image, got {shape:?}"
        )));
    }
    Ok(BinaryMask {
        height: h,
        width: w,
        bits: pred.data().iter().map(|&p| (p >= threshold) as u8).collect(),
    })
}

fn check_smooth(smooth: f64) -> Result<()> {
    if smooth.is_nan() || smooth <= 0.0 {
        return Err(Error::Contract(format!("smooth must be positive, got {smooth}")));
    }
    Ok(())
}

/// Stacks one mask per sample into a tensor shaped like `pred`.
fn target_tensor(pred: &Tensor, targets: &[&BinaryMask]) -> Result<Tensor> {
    let (n, c, h, w) = pred.dims4("soft_dice_loss")?;
    if n != targets.len() {
        return Err(Error::Dimension {
            op: "soft_dice_loss",
            axis: "batch",
            expected: n,
            found: targets.len(),
        });
    }
    let mut data = Vec::with_capacity(n * c * h * w);
    for t in targets {
        if t.dims() != (h, w) || c != 1 {
            return Err(Error::Contract(format!(
                "soft_dice_loss: prediction {:?} does not match mask {}x{}",
                pred.shape(),
                t.height,
                t.width
            )));
        }
        data.extend(t.bits.iter().map(|&b| b as f64));
    }
    Tensor::new(pred.shape().to_vec(), data)
}

/// Smoothed soft Dice loss of a `[N, 1, H, W]` probability map against one
/// mask per sample, averaged over the batch.
pub fn soft_dice_loss(tape: &mut Tape<'_>, pred: Var, targets: &[&BinaryMask], smooth: f64) -> Result<Var> {
    check_smooth(smooth)?;
    let target = target_tensor(tape.value(pred), targets)?;
    tape.soft_dice(pred, target, smooth)
}

/// Value of [`soft_dice_loss`] without recording anything.
pub fn soft_dice_value(pred: &Tensor, targets: &[&BinaryMask], smooth: f64) -> Result<f64> {
    check_smooth(smooth)?;
    let target = target_tensor(pred, targets)?;
    Ok(crate::autodiff::soft_dice_mean(pred, &target, smooth))
}

/// One row of the per-image report.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub image_id: String,
    pub intersection_area: u64,
    pub union_area: u64,
    pub jaccard: f64,
    pub dice: f64,
}

impl MetricsRow {
    pub fn from_counts(image_id: impl Into<String>, intersection: u64, union: u64) -> Self {
        Self {
            image_id: image_id.into(),
            intersection_area: intersection,
            union_area: union,
            jaccard: jaccard_from_counts(intersection, union),
            dice: dice_from_counts(intersection, union),
        }
    }

    pub fn of(image_id: impl Into<String>, pred: &BinaryMask, truth: &BinaryMask) -> Result<Self> {
        let (i, u) = areas(pred, truth)?;
        Ok(Self::from_counts(image_id, i, u))
    }

    /// Checks `dice = 2J / (1 + J)` in exact rational arithmetic on the counts.
    pub fn identity_holds_exactly(&self) -> bool {
        let (i, u) = (self.intersection_area as u128, self.union_area as u128);
        if u == 0 {
            return self.dice == 1.0 && self.jaccard == 1.0;
        }
        // dice = 2i/(i+u); J = i/u  =>  2J/(1+J) = 2i/(u+i)
        let (dn, dd) = (2 * i, i + u);
        let (jn, jd) = (i, u);
        dn * (jd + jn) == 2 * jn * dd
    }
}

/// Per-image rows plus unweighted averages.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
    pub average_jaccard: f64,
    pub average_dice: f64,
}

pub const REPORT_HEADER: &str = "image_id,intersection_area,unit_area,jaccard,dice";

impl MetricsReport {
    pub fn from_rows(rows: Vec<MetricsRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Contract("cannot summarise an empty set of images".into()));
        }
        let n = rows.len() as f64;
        let average_jaccard = rows.iter().map(|r| r.jaccard).sum::<f64>() / n;
        let average_dice = rows.iter().map(|r| r.dice).sum::<f64>() / n;
        Ok(Self {
            rows,
            average_jaccard,
            average_dice,
        })
    }

    /// Per-image table, header named after the reporting columns.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(REPORT_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.image_id, r.intersection_area, r.union_area, r.jaccard, r.dice
            );
        }
        s
    }

    pub fn summary_text(&self) -> String {
        format!(
            "images: {}\naverage jaccard: {:.4}\naverage dice: {:.4}\n",
            self.rows.len(),
            self.average_jaccard,
            self.average_dice
        )
    }

    /// Parses the output of [`to_csv`](Self::to_csv).
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(REPORT_HEADER) {
            return Err(Error::Contract("metrics CSV has an unexpected header".into()));
        }
        let mut rows = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::Contract(format!("malformed metrics row `{line}`"));
            if f.len() != 5 {
                return Err(bad());
            }
            rows.push(MetricsRow {
                image_id: f[0].to_string(),
                intersection_area: f[1].parse().map_err(|_| bad())?,
                union_area: f[2].parse().map_err(|_| bad())?,
                jaccard: f[3].parse().map_err(|_| bad())?,
                dice: f[4].parse().map_err(|_| bad())?,
            });
        }
        Self::from_rows(rows)
    }
}

/// Scores each `(id, prediction, truth)` triple, rows in input order.
pub fn evaluate_set<S: AsRef<str>>(pairs: &[(S, BinaryMask, BinaryMask)]) -> Result<MetricsReport> {
    if pairs.is_empty() {
        return Err(Error::Contract("evaluate_set needs at least one pair".into()));
    }
    let rows = pairs
        .iter()
        .map(|(id, p, t)| MetricsRow::of(id.as_ref(), p, t))
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::from_rows(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;
    use proptest::prelude::*;

    fn mask_from_bits(h: usize, w: usize, pattern: u32) -> BinaryMask {
        BinaryMask::from_fn(h, w, |y, x| pattern >> (y * w + x) & 1 == 1)
    }

    #[test]
    fn rejects_non_binary() {
        assert!(BinaryMask::new(1, 2, vec![0, 2]).is_err());
    }

    #[test]
    fn identical_and_disjoint() {
        let a = mask_from_bits(3, 3, 0b000_110_011);
        assert_eq!(dice_coefficient(&a, &a).unwrap(), 1.0);
        assert_eq!(jaccard(&a, &a).unwrap(), 1.0);
        let b = a.complement();
        assert_eq!(dice_coefficient(&a, &b).unwrap(), 0.0);
        assert_eq!(jaccard(&a, &b).unwrap(), 0.0);
        assert_eq!(areas(&a, &b).unwrap(), (0, 9));
        assert_eq!(areas(&a, &a).unwrap(), (4, 4));
    }

    #[test]
    fn empty_masks_agree_perfectly() {
        let z = BinaryMask::zeros(4, 4);
        assert_eq!(dice_coefficient(&z, &z).unwrap(), 1.0);
        assert_eq!(jaccard(&z, &z).unwrap(), 1.0);
        let one = mask_from_bits(4, 4, 1);
        assert_eq!(jaccard(&z, &one).unwrap(), 0.0);
        assert_eq!(dice_coefficient(&z, &one).unwrap(), 0.0);
    }

    #[test]
    fn table_cells_from_counts() {
        let r = MetricsRow::from_counts("noisy-lumen", 2168, 2355);
        assert!((r.jaccard - 0.9205).abs() < 1e-3);
        assert!((r.dice - 0.9586).abs() < 1e-3);
        let r = MetricsRow::from_counts("lumen", 5959, 6418);
        assert!((r.jaccard - 0.9284).abs() < 1e-3);
    }

    #[test]
    fn dimension_mismatch() {
        let a = BinaryMask::zeros(2, 3);
        let b = BinaryMask::zeros(3, 3);
        assert!(matches!(
            areas(&a, &b),
            Err(Error::Dimension { axis: "height", .. })
        ));
    }

    #[test]
    fn binarize_threshold_rule() {
        let p = Tensor::full(&[1, 1, 2, 2], 0.7);
        assert_eq!(binarize(&p, 0.5).unwrap().count(), 4);
        let edge = Tensor::full(&[1, 1, 2, 2], 0.5);
        assert_eq!(binarize(&edge, 0.5).unwrap().count(), 4);
        let m = binarize(&Tensor::from_fn(&[1, 1, 3, 3], |i| i as f64 / 8.0), 0.5).unwrap();
        assert_eq!(binarize(&m.to_tensor(), 0.5).unwrap(), m);
    }

    #[test]
    fn evaluate_averages() {
        let a = mask_from_bits(2, 2, 0b1011);
        let r = evaluate_set(&[("x", a.clone(), a)]).unwrap();
        assert_eq!((r.average_jaccard, r.average_dice), (1.0, 1.0));
        let r = MetricsReport::from_rows(vec![
            MetricsRow::from_counts("a", 2168, 2355),
            MetricsRow::from_counts("b", 5959, 6418),
        ])
        .unwrap();
        let want = (2168.0 / 2355.0 + 5959.0 / 6418.0) / 2.0;
        assert!((r.average_jaccard - want).abs() < 1e-12);
        assert!((r.average_jaccard - 0.92445).abs() < 1e-3);
        assert!(evaluate_set::<&str>(&[]).is_err());
    }

    #[test]
    fn csv_round_trip_keeps_rows() {
        let r = MetricsReport::from_rows(vec![
            MetricsRow::from_counts("a", 1, 3),
            MetricsRow::from_counts("b", 5, 5),
        ])
        .unwrap();
        let text = r.to_csv();
        assert!(text.starts_with("image_id,intersection_area,unit_area,jaccard,dice\n"));
        assert_eq!(MetricsReport::from_csv(&text).unwrap(), r);
    }

    #[test]
    fn soft_dice_loss_checks_shapes() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let p = tape.constant(Tensor::full(&[1, 1, 2, 2], 0.5));
        let m = BinaryMask::zeros(2, 3);
        assert!(soft_dice_loss(&mut tape, p, &[&m], 1.0).is_err());
        let m = BinaryMask::zeros(2, 2);
        assert!(soft_dice_loss(&mut tape, p, &[&m], 0.0).is_err());
        let z = tape.constant(Tensor::zeros(&[1, 1, 2, 2]));
        let l = soft_dice_loss(&mut tape, z, &[&m], 1.0).unwrap();
        assert_eq!(tape.value(l).item().unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn symmetric_bounded_and_linked(a in 0u32..(1 << 16), b in 0u32..(1 << 16)) {
            let x = mask_from_bits(4, 4, a);
            let y = mask_from_bits(4, 4, b);
            let d = dice_coefficient(&x, &y).unwrap();
            let j = jaccard(&x, &y).unwrap();
            prop_assert_eq!(d, dice_coefficient(&y, &x).unwrap());
            prop_assert_eq!(j, jaccard(&y, &x).unwrap());
            prop_assert!((0.0..=1.0).contains(&d) && (0.0..=1.0).contains(&j));
            prop_assert!((d - 2.0 * j / (1.0 + j)).abs() <= 1e-15);
            let row = MetricsRow::of("p", &x, &y).unwrap();
            prop_assert!(row.identity_holds_exactly());
            prop_assert!(row.intersection_area <= row.union_area);
            if x.count() > 0 || y.count() > 0 {
                prop_assert_eq!(d == 1.0, x == y);
            }
        }

        #[test]
        fn correct_pixel_never_hurts(a in 0u32..(1 << 16), b in 0u32..(1 << 16), k in 0usize..16) {
            let pred = mask_from_bits(4, 4, a);
            let truth = mask_from_bits(4, 4, b);
            let (y, x) = (k / 4, k % 4);
            let mut better = pred.clone();
            better.set(y, x, truth.get(y, x));
            prop_assert!(dice_coefficient(&better, &truth).unwrap() >= dice_coefficient(&pred, &truth).unwrap());
            prop_assert!(jaccard(&better, &truth).unwrap() >= jaccard(&pred, &truth).unwrap());
        }
    }
}
