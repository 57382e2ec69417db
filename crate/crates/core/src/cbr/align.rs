//! Alignment of detected boxes with the transcription.

use crate::raster::BBox;
use crate::segmenter::{DetectedBox, Recognition};

use super::{CbrError, Fallback};

/// A detected box together with the part of the transcription it covers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub bbox: BBox,
    pub text: Vec<char>,
}

impl Segment {
    pub fn is_merged(&self) -> bool {
        self.text.len() > 1
    }
}

/// Weight of the width prior in the fallback alignment. Small enough that a
/// single character of recognition evidence outweighs it.
const WIDTH_PRIOR: f64 = 0.25;

/// Splits `total` into integer shares proportional to `weights`, each share
/// at least `min_each` (largest remainder; ties go to the earlier entry).
pub fn apportion(total: usize, weights: &[f64], min_each: usize) -> Vec<usize> {
    let n = weights.len();
    assert!(
        total >= n * min_each,
        "cannot give {min_each} to each of {n}"
    );
    if n == 0 {
        return Vec::new();
    }
    let spare = total - n * min_each;
    let sum: f64 = weights.iter().map(|w| w.max(0.0)).sum();
    let ideal: Vec<f64> = weights
        .iter()
        .map(|w| {
            if sum > 0.0 {
                spare as f64 * w.max(0.0) / sum
            } else {
                spare as f64 / n as f64
            }
        })
        .collect();
    let mut shares: Vec<usize> = ideal.iter().map(|v| v.floor() as usize).collect();
    let mut left = spare - shares.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| {
        (ideal[*b] - ideal[*b].floor())
            .total_cmp(&(ideal[*a] - ideal[*a].floor()))
            .then(a.cmp(b))
    });
    for i in order {
        if left == 0 {
            break;
        }
        shares[i] += 1;
        left -= 1;
    }
    shares.iter().map(|s| s + min_each).collect()
}

fn recognized_len(r: &Option<Recognition>) -> Option<usize> {
    let n = r
        .as_ref()?
        .text
        .chars()
        .filter(|c| !c.is_whitespace())
        .count();
    (n > 0).then_some(n)
}

fn width_along(b: &BBox, horizontal: bool) -> f64 {
    if horizontal {
        b.width() as f64
    } else {
        b.height() as f64
    }
}

/// Greedy alignment: boxes in reading order claim as many characters as
/// their recognition holds; boxes whose recognition failed share what is
/// left in proportion to their width. `None` when the claims do not add up.
fn greedy_lengths(
    boxes: &[DetectedBox],
    recognitions: &[Option<Recognition>],
    n: usize,
    horizontal: bool,
) -> Option<(Vec<usize>, bool)> {
    let known: Vec<Option<usize>> = recognitions.iter().map(recognized_len).collect();
    let claimed: usize = known.iter().flatten().sum();
    let unresolved: Vec<usize> = (0..boxes.len()).filter(|i| known[*i].is_none()).collect();
    if claimed > n || n - claimed < unresolved.len() || (unresolved.is_empty() && claimed != n) {
        return None;
    }
    let weights: Vec<f64> = unresolved
        .iter()
        .map(|i| width_along(&boxes[*i].bbox, horizontal))
        .collect();
    let shares = apportion(n - claimed, &weights, 1);
    let mut lengths: Vec<usize> = known.iter().map(|k| k.unwrap_or(0)).collect();
    for (i, s) in unresolved.iter().zip(shares) {
        lengths[*i] = s;
    }
    Some((lengths, !unresolved.is_empty()))
}

/// Fallback alignment: contiguous nonempty spans minimizing the edit
/// distance between each box's recognition and its span, plus a width prior.
/// With no usable recognition this is width apportionment.
fn fallback_lengths(
    boxes: &[DetectedBox],
    recognitions: &[Option<Recognition>],
    chars: &[char],
    horizontal: bool,
) -> Vec<usize> {
    let (m, n) = (boxes.len(), chars.len());
    let widths: Vec<f64> = boxes
        .iter()
        .map(|b| width_along(&b.bbox, horizontal))
        .collect();
    let total_width: f64 = widths.iter().sum::<f64>().max(1.0);
    let texts: Vec<String> = recognitions
        .iter()
        .map(|r| {
            r.as_ref()
                .map(|r| r.text.chars().filter(|c| !c.is_whitespace()).collect())
                .unwrap_or_default()
        })
        .collect();
    let cost = |i: usize, start: usize, end: usize| {
        let span: String = chars[start..end].iter().collect();
        let expected = n as f64 * widths[i] / total_width;
        strsim::levenshtein(&texts[i], &span) as f64
            + WIDTH_PRIOR * ((end - start) as f64 - expected).abs()
    };
    // best[i][c]: first i boxes covering the first c characters.
    let mut best = vec![vec![f64::INFINITY; n + 1]; m + 1];
    let mut back = vec![vec![0usize; n + 1]; m + 1];
    best[0][0] = 0.0;
    for i in 1..=m {
        for c in i..=(n - (m - i)) {
            for start in (i - 1)..c {
                let prev = best[i - 1][start];
                if !prev.is_finite() {
                    continue;
                }
                let v = prev + cost(i - 1, start, c);
                if v < best[i][c] {
                    best[i][c] = v;
                    back[i][c] = start;
                }
            }
        }
    }
    let mut lengths = vec![0; m];
    let mut c = n;
    for i in (1..=m).rev() {
        let start = back[i][c];
        lengths[i - 1] = c - start;
        c = start;
    }
    lengths
}

/// Pairs each detected box (reading order) with its substring of `chars`.
///
/// `recognitions[i]` is the recognizer output for box `i`, `None` when the
/// call failed. Errors when there are more boxes than characters.
pub fn detect_merges(
    boxes: &[DetectedBox],
    chars: &[char],
    recognitions: &[Option<Recognition>],
    horizontal: bool,
) -> Result<Vec<Segment>, CbrError> {
    detect_merges_traced(boxes, chars, recognitions, horizontal).map(|(s, _)| s)
}

pub(crate) fn detect_merges_traced(
    boxes: &[DetectedBox],
    chars: &[char],
    recognitions: &[Option<Recognition>],
    horizontal: bool,
) -> Result<(Vec<Segment>, Option<Fallback>), CbrError> {
    assert_eq!(
        boxes.len(),
        recognitions.len(),
        "one recognition slot per box"
    );
    if boxes.is_empty() || boxes.len() > chars.len() {
        return Err(CbrError::AlignmentFailed {
            boxes: boxes.len(),
            chars: chars.len(),
        });
    }
    let (lengths, fallback) = match greedy_lengths(boxes, recognitions, chars.len(), horizontal) {
        Some((l, apportioned)) => (l, apportioned.then_some(Fallback::WidthApportioned)),
        None => {
            log::debug!(
                "recognized lengths do not add up to {}, using fallback alignment",
                chars.len()
            );
            (
                fallback_lengths(boxes, recognitions, chars, horizontal),
                Some(Fallback::Reconciled),
            )
        }
    };
    let mut at = 0;
    let segments = boxes
        .iter()
        .zip(lengths)
        .map(|(b, len)| {
            let text = chars[at..at + len].to_vec();
            at += len;
            Segment { bbox: b.bbox, text }
        })
        .collect();
    Ok((segments, fallback))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn boxes(widths: &[i32]) -> Vec<DetectedBox> {
        let mut x = 0;
        widths
            .iter()
            .map(|w| {
                let b = BBox::new(x, 0, x + w, 20).unwrap();
                x += w + 2;
                DetectedBox {
                    bbox: b,
                    confidence: 1.0,
                }
            })
            .collect()
    }

    fn rec(t: &str) -> Option<Recognition> {
        Some(Recognition {
            text: t.into(),
            confidences: vec![1.0; t.chars().count()],
        })
    }

    fn texts(segs: &[Segment]) -> Vec<String> {
        segs.iter().map(|s| s.text.iter().collect()).collect()
    }

    #[test]
    fn singletons_and_merge() {
        let chars: Vec<char> = "Movie".chars().collect();
        let five = detect_merges(
            &boxes(&[10; 5]),
            &chars,
            &["M", "o", "v", "i", "e"].map(rec),
            true,
        )
        .unwrap();
        assert_eq!(texts(&five), ["M", "o", "v", "i", "e"]);
        assert!(five.iter().all(|s| !s.is_merged()));
        let four = detect_merges(
            &boxes(&[10, 10, 18, 10]),
            &chars,
            &["M", "o", "vi", "e"].map(rec),
            true,
        )
        .unwrap();
        assert_eq!(texts(&four), ["M", "o", "vi", "e"]);
        assert!(four[2].is_merged());
    }

    #[test]
    fn empty_recognition_uses_widths() {
        let chars: Vec<char> = "ab".chars().collect();
        let segs = detect_merges(&boxes(&[10, 12]), &chars, &[rec(""), rec("")], true).unwrap();
        assert_eq!(texts(&segs), ["a", "b"]);
        let chars: Vec<char> = "abcd".chars().collect();
        let segs = detect_merges(&boxes(&[10, 31]), &chars, &[None, None], true).unwrap();
        assert_eq!(texts(&segs), ["a", "bcd"]);
        // One known claim, the rest goes to the failed box.
        let segs = detect_merges(
            &boxes(&[10, 20, 10]),
            &chars,
            &[rec("a"), None, rec("d")],
            true,
        )
        .unwrap();
        assert_eq!(texts(&segs), ["a", "bc", "d"]);
    }

    #[test]
    fn neighbour_bleed_is_reconciled() {
        let chars: Vec<char> = "Movie".chars().collect();
        let segs = detect_merges(
            &boxes(&[10, 10, 18, 10]),
            &chars,
            &["M", "o", "vie", "e"].map(rec),
            true,
        )
        .unwrap();
        assert_eq!(texts(&segs), ["M", "o", "vi", "e"]);
    }

    #[test]
    fn too_many_boxes_fail() {
        let chars: Vec<char> = "ab".chars().collect();
        assert!(matches!(
            detect_merges(&boxes(&[5, 5, 5]), &chars, &[None, None, None], true),
            Err(CbrError::AlignmentFailed { boxes: 3, chars: 2 })
        ));
    }

    #[test]
    fn apportion_examples() {
        assert_eq!(apportion(5, &[1.0, 1.0], 1), vec![3, 2]);
        assert_eq!(apportion(4, &[1.0, 3.0], 0), vec![1, 3]);
        assert_eq!(apportion(2, &[0.0, 0.0], 1), vec![1, 1]);
    }

    proptest! {
        #[test]
        fn segments_always_concatenate(
            widths in proptest::collection::vec(1i32..40, 1..6),
            extra in 0usize..5,
            recs in proptest::collection::vec(proptest::option::of("[a-z]{0,3}"), 6),
        ) {
            let n = widths.len() + extra;
            let chars: Vec<char> = (0..n).map(|i| (b'a' + (i % 26) as u8) as char).collect();
            let r: Vec<Option<Recognition>> = recs[..widths.len()].iter().map(|t| t.as_deref().and_then(rec)).collect();
            let segs = detect_merges(&boxes(&widths), &chars, &r, true).unwrap();
            prop_assert!(segs.iter().all(|s| !s.text.is_empty()));
            let joined: Vec<char> = segs.iter().flat_map(|s| s.text.clone()).collect();
            prop_assert_eq!(joined, chars);
        }
    }
}
