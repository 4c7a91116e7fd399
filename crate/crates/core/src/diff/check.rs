//! Central finite-difference gradient verification.

/// Compares an analytic gradient against central differences for a scalar
/// function of flat parameter vectors.
///
/// `f` evaluates the function at the given parameter values; `analytic` is
/// the full gradient (same concatenated layout as `params`). Returns the max
/// over coordinates of |analytic - fd| / max(|analytic|, |fd|, 1e-8).
///
/// Panics with a numeric-fault message if `f` returns a non-finite value at
/// any probe point.
pub fn grad_check(
    mut f: impl FnMut(&[Vec<f64>]) -> f64,
    params: &[Vec<f64>],
    analytic: &[Vec<f64>],
    epsilon: f64,
) -> f64 {
    assert_eq!(params.len(), analytic.len());
    let mut probe: Vec<Vec<f64>> = params.to_vec();
    let mut worst = 0.0f64;
    for pi in 0..params.len() {
        assert_eq!(params[pi].len(), analytic[pi].len());
        for k in 0..params[pi].len() {
            let orig = probe[pi][k];
            probe[pi][k] = orig + epsilon;
            let fp = f(&probe);
            probe[pi][k] = orig - epsilon;
            let fm = f(&probe);
            probe[pi][k] = orig;
            assert!(
                fp.is_finite() && fm.is_finite(),
                "numeric fault: non-finite objective at probe ({pi},{k})"
            );
            let fd = (fp - fm) / (2.0 * epsilon);
            let a = analytic[pi][k];
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
            if err > worst {
                worst = err;
            }
        }
    }
    worst
}
