//! Normal, gamma and beta variates built on `libm`, so a seed produces the
//! same draws regardless of which float backend the rest of the build uses.

use rand::Rng;

/// Standard normal draw by the Marsaglia polar method. The second variate of
/// each accepted pair is discarded, so every call is independent of the last.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u = 2.0 * rng.random::<f64>() - 1.0;
        let v = 2.0 * rng.random::<f64>() - 1.0;
        let s = u * u + v * v;
        if s > 0.0 && s < 1.0 {
            return u * libm::sqrt(-2.0 * libm::log(s) / s);
        }
    }
}

/// `Gamma(shape, 1)` draw by Marsaglia and Tsang, with the usual power boost
/// for `shape < 1`. `shape` must be positive and finite.
pub fn gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64) -> f64 {
    if shape < 1.0 {
        let u: f64 = rng.random();
        return gamma(rng, shape + 1.0) * libm::pow(u, 1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / libm::sqrt(9.0 * d);
    loop {
        let x = standard_normal(rng);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u: f64 = rng.random();
        if u < 1.0 - 0.0331 * x * x * x * x || libm::log(u) < 0.5 * x * x + d * (1.0 - v + libm::log(v)) {
            return d * v;
        }
    }
}

/// `Beta(a, b)` draw as `X / (X + Y)` with independent gamma variates.
pub fn beta<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    let x = gamma(rng, a);
    let y = gamma(rng, b);
    if x + y == 0.0 {
        // both underflowed; only possible for tiny shapes
        return if rng.random::<bool>() { 1.0 } else { 0.0 };
    }
    x / (x + y)
}
