//! k-means++ seeding and Lloyd refinement, used to initialize EM.

use rand::Rng;

use crate::features::FeatureSequence;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Pick `k` initial centres from the frames of `data` by D² sampling.
pub(crate) fn plus_plus<R: Rng>(data: &FeatureSequence, k: usize, rng: &mut R) -> Vec<f64> {
    let n = data.len();
    let dim = data.dim();
    let mut centres = Vec::with_capacity(k * dim);
    centres.extend_from_slice(data.frame(rng.gen_range(0..n)));

    let mut nearest: Vec<f64> = data.frames().map(|x| sq_dist(x, &centres[..dim])).collect();
    while centres.len() < k * dim {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, d) in nearest.iter().enumerate() {
                if target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let start = centres.len();
        centres.extend_from_slice(data.frame(pick));
        let c = &centres[start..];
        for (d, x) in nearest.iter_mut().zip(data.frames()) {
            *d = d.min(sq_dist(x, c));
        }
    }
    centres
}

/// Index of the closest centre; ties go to the lower index.
pub(crate) fn nearest_centre(x: &[f64], centres: &[f64], dim: usize) -> usize {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centres.chunks_exact(dim).enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best.0
}

/// Run `iterations` Lloyd steps in place and return the final assignment.
/// A centre that loses all its points stays where it was.
pub(crate) fn lloyd(data: &FeatureSequence, centres: &mut [f64], iterations: usize) -> Vec<usize> {
    let dim = data.dim();
    let k = centres.len() / dim;
    let assign = |centres: &[f64]| -> Vec<usize> {
        data.frames()
            .map(|x| nearest_centre(x, centres, dim))
            .collect()
    };
    let mut labels = assign(centres);
    for _ in 0..iterations {
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (x, &l) in data.frames().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l * dim..(l + 1) * dim].iter_mut().zip(x) {
                *s += v;
            }
        }
        for (j, &c) in counts.iter().enumerate() {
            if c > 0 {
                for (dst, s) in centres[j * dim..(j + 1) * dim]
                    .iter_mut()
                    .zip(&sums[j * dim..(j + 1) * dim])
                {
                    *dst = s / c as f64;
                }
            }
        }
        let next = assign(centres);
        if next == labels {
            break;
        }
        labels = next;
    }
    labels
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn separates_obvious_clusters() {
        let frames: Vec<[f64; 2]> = (0..40)
            .map(|i| {
                let off = if i % 2 == 0 { -10.0 } else { 10.0 };
                [off + (i as f64) * 1e-3, off]
            })
            .collect();
        let data = FeatureSequence::from_frames(&frames, "k").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut centres = plus_plus(&data, 2, &mut rng);
        let labels = lloyd(&data, &mut centres, 10);
        for (i, l) in labels.iter().enumerate() {
            assert_eq!(*l, labels[i % 2]);
        }
        assert_ne!(labels[0], labels[1]);
    }

    #[test]
    fn duplicate_points_do_not_hang() {
        let frames = vec![[1.0, 1.0]; 10];
        let data = FeatureSequence::from_frames(&frames, "k").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let centres = plus_plus(&data, 4, &mut rng);
        assert_eq!(centres, vec![1.0; 8]);
    }
}
