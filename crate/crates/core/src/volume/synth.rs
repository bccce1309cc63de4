use rand::Rng;
use rand_distr::StandardNormal;

use crate::labels::Diagnosis;
use crate::rng::{rng_for, stream};
use crate::tensor::Tensor;

use super::VolumeSample;

/// Phantom head volumes of side `size`: an ellipsoidal brain with a central
/// dark ventricle whose radius grows with disease stage, plus a few random
/// bright blobs and mild voxel noise. Labels cycle CN, MCI, AD.
pub fn synthetic_volumes(n: usize, size: usize, seed: u64) -> Vec<VolumeSample> {
    let subjects: Vec<(String, Diagnosis)> = (0..n)
        .map(|i| (format!("vol{i:03}"), Diagnosis::ALL[i % 3]))
        .collect();
    phantom_volumes(&subjects, size, seed)
}

/// One phantom per `(sample_id, label)`; the ventricle grows from CN to AD.
pub fn phantom_volumes(
    subjects: &[(String, Diagnosis)],
    size: usize,
    seed: u64,
) -> Vec<VolumeSample> {
    let mut rng = rng_for(seed, stream::VOLUMES);
    subjects
        .iter()
        .map(|(id, label)| {
            let stage = Diagnosis::ALL
                .iter()
                .position(|d| d == label)
                .expect("known label");
            let volume = phantom(size, stage, &mut rng);
            VolumeSample::new(id.clone(), volume, *label).expect("finite phantom")
        })
        .collect()
}

fn phantom(size: usize, stage: usize, rng: &mut impl Rng) -> Tensor {
    let s = size as f64;
    let c = (s - 1.0) / 2.0;
    let brain_r = 0.42 * s * rng.random_range(0.9..1.05);
    let vent_r = s * (0.06 + 0.05 * stage as f64) * rng.random_range(0.85..1.15);
    let blobs: Vec<([f64; 3], f64, f64)> = (0..3)
        .map(|_| {
            let p = [0, 1, 2].map(|_| c + rng.random_range(-0.25..0.25) * s);
            (
                p,
                0.08 * s * rng.random_range(0.7..1.3),
                rng.random_range(0.3..0.6),
            )
        })
        .collect();
    let mut data = Vec::with_capacity(size * size * size);
    for z in 0..size {
        for y in 0..size {
            for x in 0..size {
                let p = [z as f64, y as f64, x as f64];
                let r = dist(p, [c, c, c]);
                let mut v = if r < brain_r { 0.6 } else { 0.05 };
                if r < vent_r {
                    v = 0.15;
                }
                for (bc, br, amp) in &blobs {
                    let d = dist(p, *bc) / br;
                    v += amp * (-d * d).exp();
                }
                let noise: f64 = rng.sample(StandardNormal);
                data.push(v + 0.02 * noise);
            }
        }
    }
    Tensor::new(&[size, size, size], data).expect("cube")
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    a.iter()
        .zip(&b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
