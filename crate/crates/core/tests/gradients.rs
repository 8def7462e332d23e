mod common;

use pinc::neural::Architecture;

#[test]
fn loss_gradient_matches_finite_differences_on_small_networks() {
    for arch in [Architecture::Skip, Architecture::Dense] {
        for seed in 0..5 {
            let err = common::loss_gradient_error(arch, 2, 3, seed, None);
            assert!(err <= 1e-4, "{arch:?} seed {seed}: {err:e}");
        }
    }
}

#[test]
fn loss_gradient_matches_finite_differences_on_full_size_networks() {
    for arch in [Architecture::Skip, Architecture::Dense] {
        for seed in 0..5 {
            let err = common::loss_gradient_error(arch, 6, 30, seed, Some(60));
            assert!(err <= 1e-4, "{arch:?} seed {seed}: {err:e}");
        }
    }
}

#[test]
fn time_tangent_matches_finite_differences() {
    for arch in [Architecture::Skip, Architecture::Dense] {
        for (layers, neurons) in [(2, 3), (6, 30)] {
            let err = common::time_tangent_error(arch, layers, neurons, 7);
            assert!(err <= 1e-6, "{arch:?} {layers}x{neurons}: {err:e}");
        }
    }
}
