//! Error-function family and Gaussian exponential-moment identities.
//!
//! `erf`/`erfc` are a port of the FreeBSD msun rational approximations
//! (via Go's math package), accurate to within one ulp. `erfcx` is the
//! scaled complementary error function exp(x^2)*erfc(x), which stays
//! finite for large arguments and is what the policy formulas divide by.

use crate::error::{Error, Result};

const ERX: f64 = 8.45062911510467529297e-01;

// coefficients for approximation to erf in [0, 0.84375]
const EFX: f64 = 1.28379167095512586316e-01;
const EFX8: f64 = 1.02703333676410069053e+00;
const PP0: f64 = 1.28379167095512558561e-01;
const PP1: f64 = -3.25042107247001499370e-01;
const PP2: f64 = -2.84817495755985104766e-02;
const PP3: f64 = -5.77027029648944159157e-03;
const PP4: f64 = -2.37630166566501626084e-05;
const QQ1: f64 = 3.97917223959155352819e-01;
const QQ2: f64 = 6.50222499887672944485e-02;
const QQ3: f64 = 5.08130628187576562776e-03;
const QQ4: f64 = 1.32494738004321644526e-04;
const QQ5: f64 = -3.96022827877536812320e-06;

// coefficients for approximation to erf in [0.84375, 1.25]
const PA0: f64 = -2.36211856075265944077e-03;
const PA1: f64 = 4.14856118683748331666e-01;
const PA2: f64 = -3.72207876035701323847e-01;
const PA3: f64 = 3.18346619901161753674e-01;
const PA4: f64 = -1.10894694282396677476e-01;
const PA5: f64 = 3.54783043256182359371e-02;
const PA6: f64 = -2.16637559486879084300e-03;
const QA1: f64 = 1.06420880400844228286e-01;
const QA2: f64 = 5.40397917702171048937e-01;
const QA3: f64 = 7.18286544141962662868e-02;
const QA4: f64 = 1.26171219808761642112e-01;
const QA5: f64 = 1.36370839120290507362e-02;
const QA6: f64 = 1.19844998467991074170e-02;

// coefficients for approximation to erfc in [1.25, 1/0.35]
const RA0: f64 = -9.86494403484714822705e-03;
const RA1: f64 = -6.93858572707181764372e-01;
const RA2: f64 = -1.05586262253232909814e+01;
const RA3: f64 = -6.23753324503260060396e+01;
const RA4: f64 = -1.62396669462573470355e+02;
const RA5: f64 = -1.84605092906711035994e+02;
const RA6: f64 = -8.12874355063065934246e+01;
const RA7: f64 = -9.81432934416914548592e+00;
const SA1: f64 = 1.96512716674392571292e+01;
const SA2: f64 = 1.37657754143519042600e+02;
const SA3: f64 = 4.34565877475229228821e+02;
const SA4: f64 = 6.45387271733267880336e+02;
const SA5: f64 = 4.29008140027567833386e+02;
const SA6: f64 = 1.08635005541779435134e+02;
const SA7: f64 = 6.57024977031928170135e+00;
const SA8: f64 = -6.04244152148580987438e-02;

// coefficients for approximation to erfc in [1/.35, 28]
const RB0: f64 = -9.86494292470009928597e-03;
const RB1: f64 = -7.99283237680523006574e-01;
const RB2: f64 = -1.77579549177547519889e+01;
const RB3: f64 = -1.60636384855821916062e+02;
const RB4: f64 = -6.37566443368389627722e+02;
const RB5: f64 = -1.02509513161107724954e+03;
const RB6: f64 = -4.83519191608651397019e+02;
const SB1: f64 = 3.03380607434824582924e+01;
const SB2: f64 = 3.25792512996573918826e+02;
const SB3: f64 = 1.53672958608443695994e+03;
const SB4: f64 = 3.19985821950859553908e+03;
const SB5: f64 = 2.55305040643316442583e+03;
const SB6: f64 = 4.74528541206955367215e+02;
const SB7: f64 = -2.24409524465858183362e+01;

const VERY_TINY: f64 = 2.848094538889218e-306; // 0x0080000000000000
const TINY: f64 = 1.3877787807814457e-17; // 2^-56
const SMALL: f64 = 3.725290298461914e-9; // 2^-28

/// erf(x) = (2/sqrt(pi)) * integral of exp(-t^2) from 0 to x.
pub fn erf(x: f64) -> f64 {
    if f64::is_nan(x) {
        return f64::NAN;
    } else if x == f64::INFINITY {
        return 1.0;
    } else if x == f64::NEG_INFINITY {
        return -1.0;
    }
    let mut sign = false;
    let mut x = x;
    if x < 0.0 {
        x = -x;
        sign = true;
    }
    if x < 0.84375 {
        let temp: f64;
        if x < SMALL {
            if x < VERY_TINY {
                temp = 0.125 * (8.0 * x + EFX8 * x); // avoid underflow
            } else {
                temp = x + EFX * x;
            }
        } else {
            let z = x * x;
            let r = PP0 + z * (PP1 + z * (PP2 + z * (PP3 + z * PP4)));
            let s = 1.0 + z * (QQ1 + z * (QQ2 + z * (QQ3 + z * (QQ4 + z * QQ5))));
            let y = r / s;
            temp = x + x * y;
        }
        return if sign { -temp } else { temp };
    }
    if x < 1.25 {
        let s = x - 1.0;
        let p = PA0 + s * (PA1 + s * (PA2 + s * (PA3 + s * (PA4 + s * (PA5 + s * PA6)))));
        let q = 1.0 + s * (QA1 + s * (QA2 + s * (QA3 + s * (QA4 + s * (QA5 + s * QA6)))));
        return if sign { -ERX - p / q } else { ERX + p / q };
    }
    if x >= 6.0 {
        return if sign { -1.0 } else { 1.0 };
    }
    let r = erfc_tail(x);
    if sign {
        r / x - 1.0
    } else {
        1.0 - r / x
    }
}

/// erfc(x) = 1 - erf(x), computed without cancellation for large x.
pub fn erfc(x: f64) -> f64 {
    if f64::is_nan(x) {
        return f64::NAN;
    } else if x == f64::INFINITY {
        return 0.0;
    } else if x == f64::NEG_INFINITY {
        return 2.0;
    }
    let mut sign = false;
    let mut x = x;
    if x < 0.0 {
        x = -x;
        sign = true;
    }
    if x < 0.84375 {
        let temp: f64;
        if x < TINY {
            temp = x;
        } else {
            let z = x * x;
            let r = PP0 + z * (PP1 + z * (PP2 + z * (PP3 + z * PP4)));
            let s = 1.0 + z * (QQ1 + z * (QQ2 + z * (QQ3 + z * (QQ4 + z * QQ5))));
            let y = r / s;
            if x < 0.25 {
                temp = x + x * y;
            } else {
                temp = 0.5 + (x * y + (x - 0.5));
            }
        }
        return if sign { 1.0 + temp } else { 1.0 - temp };
    }
    if x < 1.25 {
        let s = x - 1.0;
        let p = PA0 + s * (PA1 + s * (PA2 + s * (PA3 + s * (PA4 + s * (PA5 + s * PA6)))));
        let q = 1.0 + s * (QA1 + s * (QA2 + s * (QA3 + s * (QA4 + s * (QA5 + s * QA6)))));
        return if sign { 1.0 + ERX + p / q } else { 1.0 - ERX - p / q };
    }
    if x < 28.0 {
        if sign && x > 6.0 {
            return 2.0;
        }
        let r = erfc_tail(x);
        return if sign { 2.0 - r / x } else { r / x };
    }
    if sign {
        2.0
    } else {
        0.0
    }
}

// x*erfc(x) for 1.25 <= x < 28, the shared tail of erf/erfc.
fn erfc_tail(x: f64) -> f64 {
    let s = 1.0 / (x * x);
    let r;
    let sq;
    if x < 1.0 / 0.35 {
        r = RA0 + s * (RA1 + s * (RA2 + s * (RA3 + s * (RA4 + s * (RA5 + s * (RA6 + s * RA7))))));
        sq = 1.0
            + s * (SA1
                + s * (SA2 + s * (SA3 + s * (SA4 + s * (SA5 + s * (SA6 + s * (SA7 + s * SA8)))))));
    } else {
        r = RB0 + s * (RB1 + s * (RB2 + s * (RB3 + s * (RB4 + s * (RB5 + s * RB6)))));
        sq = 1.0 + s * (SB1 + s * (SB2 + s * (SB3 + s * (SB4 + s * (SB5 + s * (SB6 + s * SB7))))));
    }
    // split x into a pseudo-single-precision head so -x*x can be computed exactly
    let z = f64::from_bits(f64::to_bits(x) & 0xffff_ffff_0000_0000);
    f64::exp(-z * z - 0.5625) * f64::exp((z - x) * (z + x) + r / sq)
}

/// Scaled complementary error function, erfcx(x) = exp(x^2) * erfc(x).
///
/// For large positive x this decays like 1/(x*sqrt(pi)) and is evaluated
/// through a continued fraction, so it never overflows or underflows where
/// the unscaled erfc already has.
pub fn erfcx(x: f64) -> f64 {
    if f64::is_nan(x) {
        return f64::NAN;
    }
    if x < 0.0 {
        // erfcx(-x) = 2 exp(x^2) - erfcx(x); overflows for x << -26, as it must
        return 2.0 * f64::exp(x * x) - erfcx(-x);
    }
    if x < 12.0 {
        return f64::exp(x * x) * erfc(x);
    }
    // Laplace continued fraction: erfcx(x) = (1/sqrt(pi)) / (x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
    // Evaluated bottom-up with enough terms for full double precision at x >= 12.
    let mut f = 0.0;
    let mut k = 20;
    while k >= 1 {
        f = (k as f64 / 2.0) / (x + f);
        k -= 1;
    }
    std::f64::consts::FRAC_2_SQRT_PI / 2.0 / (x + f)
}

/// Mean/variance pair of a scalar Gaussian.
#[derive(Debug, Clone, Copy)]
pub struct GaussianParams {
    pub mu: f64,
    pub sigma2: f64,
}

impl GaussianParams {
    pub fn new(mu: f64, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0) || !mu.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "GaussianParams requires finite mu and sigma2 > 0, got mu = {mu}, sigma2 = {sigma2}"
            )));
        }
        Ok(Self { mu, sigma2 })
    }
}

/// E[exp(alpha*Y - (1/2)*gamma*Y^2)] for Y ~ N(mu, sigma2).
///
/// Requires rho = 1 + gamma*sigma2 > 0, otherwise the integral diverges.
pub fn gaussian_exp_quad_moment(g: GaussianParams, alpha: f64, gamma: f64) -> Result<f64> {
    let rho = 1.0 + gamma * g.sigma2;
    if rho <= 0.0 {
        return Err(Error::Domain(format!(
            "gaussian_exp_quad_moment: rho = 1 + gamma*sigma2 = {rho} <= 0"
        )));
    }
    let num = gamma * g.mu * g.mu - 2.0 * alpha * g.mu - alpha * alpha * g.sigma2;
    Ok(rho.powf(-0.5) * f64::exp(-num / (2.0 * rho)))
}

/// E[Y * exp(-(1/2)*gamma*Y^2)] for Y ~ N(mu, sigma2).
pub fn gaussian_linear_exp_moment(g: GaussianParams, gamma: f64) -> Result<f64> {
    let rho = 1.0 + gamma * g.sigma2;
    if rho <= 0.0 {
        return Err(Error::Domain(format!(
            "gaussian_linear_exp_moment: rho = 1 + gamma*sigma2 = {rho} <= 0"
        )));
    }
    Ok(g.mu * rho.powf(-1.5) * f64::exp(-gamma * g.mu * g.mu / (2.0 * rho)))
}
