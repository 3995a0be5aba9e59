//! Quadratic surface estimation from a rolling buffer of noisy range
//! samples, including the rank reduction for points on a line.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use taskmpc::estimator::{fit_points, MeasurementBuffer, SurfaceModel};

fn main() -> taskmpc::Result<()> {
    let truth = SurfaceModel::new([-0.3, 0.1, -0.05, 0.02, 0.4, -0.2])?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut buf = MeasurementBuffer::new(100)?;
    for _ in 0..250 {
        let (x, y) = (rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
        let noise = rng.random_range(-1e-4..1e-4);
        buf.push(&[[x, y, truth.height(x, y) + noise]])?;
    }
    let fit = buf.fit()?;
    println!("buffer holds {} of 250 samples", buf.len());
    println!("true   {:+.4?}", truth.a);
    println!("fitted {:+.4?}  rank {}", fit.model.a, fit.rank());

    // samples along y = 0 only determine the x part of the model
    let line: Vec<[f64; 3]> = (0..20)
        .map(|i| {
            let x = -0.5 + i as f64 / 19.0;
            [x, 0.0, truth.height(x, 0.0)]
        })
        .collect();
    let fit = fit_points(&line)?;
    println!("line samples: basis {:?}, coefficients {:+.4?}", fit.basis, fit.model.a);
    Ok(())
}
