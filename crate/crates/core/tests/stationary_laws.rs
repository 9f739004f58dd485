//! Long-run averages against the scaling laws, at reduced run length.

use fragsim::{run, Algorithm, RunConfig, SummaryStats};

fn summary(alpha: f64, alg: Algorithm) -> SummaryStats {
    run(&RunConfig::new(alpha, alg, 2024).events(600_000, 200_000)).unwrap()
}

#[test]
fn small_requests() {
    let alpha = 0.05;
    for alg in Algorithm::ALL {
        let s = summary(alpha, alg);
        assert!((s.mean_g_over_r - 0.5).abs() < 0.02, "{alg}: G/R {}", s.mean_g_over_r);
        assert!((s.mean_r - 2.0 / alpha).abs() / (2.0 / alpha) < 0.05, "{alg}: R {}", s.mean_r);
        if alg != Algorithm::Lfs {
            assert!(s.type_fractions[2] > 0.9, "{alg}: {:?}", s.type_fractions);
        }
        assert!(s.mean_gap_size < 5.0 * alpha * alpha, "{alg}: gap {}", s.mean_gap_size);
    }
}

#[test]
fn gap_and_fragment_sizes_are_close() {
    for alpha in [0.05, 0.1] {
        for alg in [Algorithm::Ls, Algorithm::Cs] {
            let s = summary(alpha, alg);
            let rel = (s.mean_gap_size - s.mean_fragment_size).abs() / s.mean_fragment_size;
            assert!(rel < 0.2, "{alg} {alpha}: {} vs {}", s.mean_gap_size, s.mean_fragment_size);
        }
    }
}

#[test]
fn linear_scan_first_gap() {
    for alpha in [0.05, 0.1, 0.2] {
        let s = summary(alpha, Algorithm::Ls);
        assert!((s.mean_first_gap_lo - 0.64).abs() < 0.02, "{alpha}: {}", s.mean_first_gap_lo);
    }
}
