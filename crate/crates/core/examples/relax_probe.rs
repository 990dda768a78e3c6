use std::time::Instant;
use swarmflow_core::constitutive::InteractionKernel;
use swarmflow_core::particles::relax_to_flock;

fn semicircle_cdf(x: f64) -> f64 {
    let r = 2.0f64.sqrt();
    if x <= -r {
        0.0
    } else if x >= r {
        1.0
    } else {
        0.5 + (x * (2.0 - x * x).sqrt() / 2.0 + (x / r).asin()) / std::f64::consts::PI
    }
}

fn main() {
    let n = 2000;
    let kernel = InteractionKernel::PowerLaw { attract_exp: 2.0, repulse_exp: 0.0 };

    for tol in [1e-3f64, 1e-4, 1e-5] {
        let t0 = Instant::now();
        match relax_to_flock(kernel, 1, n, tol, 400_000, 2026) {
            Ok(r) => {
                let mut xs: Vec<f64> = r.positions.iter().map(|p| p[0]).collect();
                let mean = xs.iter().sum::<f64>() / n as f64;
                for x in &mut xs {
                    *x -= mean;
                }
                xs.sort_by(f64::total_cmp);
                let mut sup = 0.0f64;
                for (k, &x) in xs.iter().enumerate() {
                    let f = semicircle_cdf(x);
                    sup = sup.max((f - k as f64 / n as f64).abs());
                    sup = sup.max((f - (k + 1) as f64 / n as f64).abs());
                }
                println!(
                    "1D tol={tol:.0e}: {} sweeps, residual {:.2e}, supCDF {:.4}, {:.1} s",
                    r.iterations,
                    r.max_force,
                    sup,
                    t0.elapsed().as_secs_f64()
                );
            }
            Err(e) => println!("1D tol={tol:.0e}: FAILED {e:?} after {:.1} s", t0.elapsed().as_secs_f64()),
        }
    }

    for tol in [1e-3f64, 1e-4, 3e-5] {
        let t0 = Instant::now();
        match relax_to_flock(kernel, 2, n, tol, 400_000, 2026) {
            Ok(r) => {
                let secs = t0.elapsed().as_secs_f64();
                let mut com = [0.0f64; 2];
                for p in &r.positions {
                    com[0] += p[0] / n as f64;
                    com[1] += p[1] / n as f64;
                }
                let mut rad: Vec<f64> = r
                    .positions
                    .iter()
                    .map(|p| ((p[0] - com[0]).powi(2) + (p[1] - com[1]).powi(2)).sqrt())
                    .collect();
                let mut sorted = rad.clone();
                sorted.sort_by(f64::total_cmp);
                let r90 = sorted[(0.9 * n as f64) as usize];
                let rmax = sorted[n - 1];

                // Equal-area annuli inside r90.
                for bins in [6usize, 8, 10] {
                    let mut counts = vec![0usize; bins];
                    for &rr in &rad {
                        if rr < r90 {
                            let k = ((rr * rr) / (r90 * r90) * bins as f64) as usize;
                            counts[k.min(bins - 1)] += 1;
                        }
                    }
                    let m = counts.iter().sum::<usize>() as f64 / bins as f64;
                    let var = counts.iter().map(|&c| (c as f64 - m).powi(2)).sum::<f64>()
                        / bins as f64;
                    println!("  annuli[{bins}] CV {:.4}", var.sqrt() / m);
                }

                // Square quadrats fully inside r90.
                for denom in [3.5f64, 4.5, 5.5] {
                    let s = r90 / denom;
                    let half = (r90 / s).ceil() as i64;
                    let mut counts = std::collections::HashMap::new();
                    for p in &r.positions {
                        let ix = ((p[0] - com[0]) / s).floor() as i64;
                        let iy = ((p[1] - com[1]) / s).floor() as i64;
                        counts.entry((ix, iy)).or_insert(0usize);
                        *counts.get_mut(&(ix, iy)).unwrap() += 1;
                    }
                    let mut vals = Vec::new();
                    for ix in -half..half {
                        for iy in -half..half {
                            // Keep only squares whose far corner stays inside r90.
                            let cx = (ix as f64 + 0.5) * s;
                            let cy = (iy as f64 + 0.5) * s;
                            let corner =
                                ((cx.abs() + 0.5 * s).powi(2) + (cy.abs() + 0.5 * s).powi(2)).sqrt();
                            if corner <= r90 {
                                vals.push(*counts.get(&(ix, iy)).unwrap_or(&0) as f64);
                            }
                        }
                    }
                    let m = vals.iter().sum::<f64>() / vals.len() as f64;
                    let var = vals.iter().map(|&c| (c - m).powi(2)).sum::<f64>() / vals.len() as f64;
                    println!(
                        "  quadrat[s=r90/{denom}] {} squares, mean {:.1}, CV {:.4}",
                        vals.len(),
                        m,
                        var.sqrt() / m
                    );
                }
                rad.sort_by(f64::total_cmp);
                println!(
                    "2D tol={tol:.0e}: {} sweeps, residual {:.2e}, r90 {:.4}, rmax {:.4}, {:.1} s",
                    r.iterations, r.max_force, r90, rmax, secs
                );
            }
            Err(e) => println!("2D tol={tol:.0e}: FAILED {e:?} after {:.1} s", t0.elapsed().as_secs_f64()),
        }
    }
}
