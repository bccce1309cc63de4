use crate::error::{Error, Result};
use crate::tensor::Tensor;

const BINS: usize = 64;

/// Shannon entropy (bits) of each depth slice's 64-bin histogram, with bins
/// spanning the whole volume's intensity range. A constant volume scores 0
/// everywhere.
pub fn slice_entropy(volume: &Tensor) -> Result<Vec<f64>> {
    let [d, h, w] = *volume.shape() else {
        return Err(Error::dim(format!(
            "slice ranking expects D×H×W, got {:?}",
            volume.shape()
        )));
    };
    let data = volume.data();
    let lo = data.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if range <= 0.0 {
        return Ok(vec![0.0; d]);
    }
    let per_slice = h * w;
    let scores = data
        .chunks(per_slice)
        .map(|slice| {
            let mut counts = [0usize; BINS];
            for &v in slice {
                let b = (((v - lo) / range) * BINS as f64) as usize;
                counts[b.min(BINS - 1)] += 1;
            }
            counts
                .iter()
                .filter(|&&c| c > 0)
                .map(|&c| {
                    let p = c as f64 / per_slice as f64;
                    -p * p.log2()
                })
                .sum()
        })
        .collect();
    Ok(scores)
}

/// Keeps the `k` highest-entropy depth slices, emitted in original order.
/// Equal scores prefer the lower slice index.
pub fn slice_rank_select(volume: &Tensor, k: usize) -> Result<Tensor> {
    let scores = slice_entropy(volume)?;
    let d = scores.len();
    if k == 0 || k > d {
        return Err(Error::contract(format!(
            "cannot keep {k} slices of a volume with depth {d}"
        )));
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut keep = order[..k].to_vec();
    keep.sort_unstable();

    let per_slice = volume.shape()[1] * volume.shape()[2];
    let mut out = Vec::with_capacity(k * per_slice);
    for &i in &keep {
        out.extend_from_slice(&volume.data()[i * per_slice..(i + 1) * per_slice]);
    }
    Tensor::new(&[k, volume.shape()[1], volume.shape()[2]], out)
}
