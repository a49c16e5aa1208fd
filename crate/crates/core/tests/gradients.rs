use sparlow::pipeline::check_grad::{check_grad, GradCheckConfig};
use sparlow::Variant;

fn run(variant: Variant, seeds: std::ops::Range<u64>, mu: Option<(f64, f64)>) {
    for seed in seeds {
        let mut cfg = GradCheckConfig::new(variant);
        cfg.seed = seed;
        if let Some((mu1, mu2)) = mu {
            cfg.mu1 = mu1;
            cfg.mu2 = mu2;
        }
        let report = check_grad(None, &cfg).unwrap();
        assert!(report.passes(1e-4), "{variant} seed {seed}: {report:?}");
        assert!(report.skipped <= 1, "{variant} seed {seed}: {report:?}");
    }
}

#[test]
fn pca_gradients() {
    run(Variant::Pca, 0..20, None);
}

#[test]
fn pca_gradients_without_regularizers() {
    run(Variant::Pca, 100..110, Some((0.0, 0.0)));
}

#[test]
fn lda_gradients() {
    run(Variant::Lda, 0..20, None);
}

#[test]
fn laplacian_gradients() {
    run(Variant::Laplacian, 0..20, None);
}

#[test]
fn mvr_gradients() {
    run(Variant::Mvr, 0..20, None);
}

#[test]
fn remaining_variant_gradients() {
    for v in [
        Variant::Lle,
        Variant::Mfa,
        Variant::Sda,
        Variant::Slap,
        Variant::Smvr,
    ] {
        run(v, 0..8, None);
    }
}

#[test]
fn strong_regularizers_gradients() {
    run(Variant::Lda, 200..205, Some((0.5, 2.0)));
}

#[test]
fn corrupted_gradient_is_flagged() {
    let mut cfg = GradCheckConfig::new(Variant::Lda);
    cfg.corrupt = true;
    let report = check_grad(None, &cfg).unwrap();
    assert!(report.grad_d > 1e-2, "{report:?}");
}
