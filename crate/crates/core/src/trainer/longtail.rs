use rand::seq::SliceRandom;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

/// Per-class sample counts of an exponential long-tail profile:
/// `round(n_head * ratio^(-c / (C - 1)))` for `c = 0..C`.
pub fn longtail_counts(n_head: usize, num_classes: usize, imbalance_ratio: f64) -> Result<Vec<usize>> {
    if !(imbalance_ratio >= 1.0 && imbalance_ratio.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "imbalance ratio must be >= 1, got {imbalance_ratio}"
        )));
    }
    if num_classes < 2 {
        return Ok(vec![n_head; num_classes]);
    }
    let last = (num_classes - 1) as f64;
    Ok((0..num_classes)
        .map(|c| (n_head as f64 * imbalance_ratio.powf(-(c as f64) / last)).round() as usize)
        .collect())
}

/// Subsamples `data` so class 0 is the head (all of its samples kept) and the
/// counts decay exponentially to `n_head / ratio` at the last class.
///
/// Rows are drawn without replacement under `seed` and returned in source order.
pub fn make_longtail(data: &Dataset, imbalance_ratio: f64, seed: u64) -> Result<Dataset> {
    let available = data.class_counts();
    let n_head = available[0];
    let targets = longtail_counts(n_head, data.num_classes(), imbalance_ratio)?;
    for (c, (&want, &have)) in targets.iter().zip(&available).enumerate() {
        if have < want {
            return Err(Error::InvalidConfig(format!(
                "class {c} has {have} samples, long-tail profile needs {want}"
            )));
        }
    }
    let mut rng = stream(seed, Stream::Subsample);
    let mut keep = Vec::new();
    for (c, &want) in targets.iter().enumerate() {
        let mut rows: Vec<usize> = (0..data.len()).filter(|&i| data.labels()[i] == c).collect();
        rows.shuffle(&mut rng);
        keep.extend_from_slice(&rows[..want]);
    }
    keep.sort_unstable();
    Ok(data.subset(&keep, format!("longtail ratio {imbalance_ratio} (seed {seed})")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_blobs;

    #[test]
    fn counts_follow_the_profile() {
        assert_eq!(longtail_counts(100, 3, 100.0).unwrap(), vec![100, 10, 1]);
        let c = longtail_counts(1000, 10, 100.0).unwrap();
        assert_eq!(c[0], 1000);
        assert_eq!(c[9], 10);
        assert!(c.windows(2).all(|w| w[0] >= w[1]));
        assert_eq!(longtail_counts(50, 4, 1.0).unwrap(), vec![50; 4]);
        assert!(longtail_counts(50, 4, 0.5).is_err());
    }

    #[test]
    fn ratio_one_keeps_everything() {
        let d = gen_blobs(1, 3, 20, 2, 3.0, 1.0).unwrap();
        let lt = make_longtail(&d, 1.0, 5).unwrap();
        assert_eq!(lt.features(), d.features());
        assert_eq!(lt.labels(), d.labels());
    }

    #[test]
    fn subsamples_deterministically() {
        let d = gen_blobs(1, 3, 100, 2, 3.0, 1.0).unwrap();
        let lt = make_longtail(&d, 100.0, 5).unwrap();
        assert_eq!(lt.class_counts(), vec![100, 10, 1]);
        assert_eq!(lt, make_longtail(&d, 100.0, 5).unwrap());
    }

    #[test]
    fn insufficient_samples() {
        let d = gen_blobs(1, 3, 10, 2, 3.0, 1.0).unwrap();
        let tail = d.subset(&(0..25).collect::<Vec<_>>(), "drop");
        assert!(make_longtail(&tail, 1.0, 0).is_err());
    }
}
