//! The two-group artificial dataset with uniform background noise.

use std::io::Write;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CnError, Result};
use crate::mvn::{open_unit, standard_normal};

pub const GROUP_SIZE: usize = 200;
pub const NOISE_SIZE: usize = 20;
const MEANS: [[f64; 2]; 2] = [[2.0, 2.0], [-2.0, -2.0]];
const VARIANCES: [f64; 2] = [5.0, 0.5];
const NOISE_RANGE: f64 = 20.0;

/// 420 rows: 200 from each Gaussian group, then 20 uniform noise rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulated {
    /// `n × 2`.
    pub x: DMatrix<f64>,
    /// 1 and 2 for the groups, 3 for noise.
    pub truth: Vec<usize>,
}

pub fn simulate(seed: u64) -> Simulated {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 2 * GROUP_SIZE + NOISE_SIZE;
    let mut x = DMatrix::zeros(n, 2);
    let mut truth = Vec::with_capacity(n);
    let mut i = 0;
    for (k, mean) in MEANS.iter().enumerate() {
        for _ in 0..GROUP_SIZE {
            for j in 0..2 {
                x[(i, j)] = mean[j] + VARIANCES[j].sqrt() * standard_normal(&mut rng);
            }
            truth.push(k + 1);
            i += 1;
        }
    }
    for _ in 0..NOISE_SIZE {
        for j in 0..2 {
            x[(i, j)] = -NOISE_RANGE + 2.0 * NOISE_RANGE * open_unit(&mut rng);
        }
        truth.push(3);
        i += 1;
    }
    Simulated { x, truth }
}

/// Writes `X1,X2,group` rows.
pub fn write_csv<W: Write>(sim: &Simulated, out: W) -> Result<()> {
    let io = |e: csv::Error| CnError::Input(format!("cannot write CSV: {e}"));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["X1", "X2", "group"]).map_err(io)?;
    for (i, g) in sim.truth.iter().enumerate() {
        w.write_record([sim.x[(i, 0)].to_string(), sim.x[(i, 1)].to_string(), g.to_string()]).map_err(io)?;
    }
    w.flush().map_err(|e| CnError::Input(format!("cannot write CSV: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_noise_range() {
        let s = simulate(1);
        assert_eq!(s.x.shape(), (420, 2));
        assert_eq!(s.truth.iter().filter(|&&t| t == 3).count(), 20);
        assert!(s.x.rows(400, 20).iter().all(|v| v.abs() <= 20.0));
    }

    #[test]
    fn group_means_within_clt_bound() {
        for seed in 0..5 {
            let s = simulate(seed);
            for (k, mean) in MEANS.iter().enumerate() {
                let block = s.x.rows(k * GROUP_SIZE, GROUP_SIZE);
                for j in 0..2 {
                    let m = block.column(j).mean();
                    let bound = 4.0 * (VARIANCES[j] / GROUP_SIZE as f64).sqrt();
                    assert!((m - mean[j]).abs() < bound, "seed {seed} group {k} coord {j}: {m}");
                }
            }
        }
    }

    #[test]
    fn csv_is_reproducible() {
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_csv(&simulate(42), &mut a).unwrap();
        write_csv(&simulate(42), &mut b).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with("X1,X2,group\n"));
        assert_eq!(text.lines().count(), 421);
    }
}
