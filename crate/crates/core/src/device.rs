//! Subthreshold bit-cell current model, per-cell mismatch sampling and the
//! distributed supply regulator.
//!
//! The bit cell is modeled as a single weak-inversion transistor: current is
//! exponential in the supply-to-threshold overdrive with temperature entering
//! through both the thermal voltage and the threshold-voltage drift. The
//! regulator servos the array supply until the mean monitor-cell current
//! matches the global reference.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Boltzmann constant over electron charge, V/K.
const K_OVER_Q: f64 = 8.617_333_262e-5;
const ZERO_C_IN_K: f64 = 273.15;

/// Supply rail ceiling; the regulator searches below this.
pub const V_SUPPLY_MAX: f64 = 0.9;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct DeviceParams {
    /// Current scale of the exponential law, A.
    pub i0: f64,
    /// Subthreshold slope factor, dimensionless.
    pub n: f64,
    /// Threshold voltage at 25 C, V.
    pub vth0: f64,
    /// Threshold temperature coefficient, V per degree C.
    pub dvth_dt: f64,
    /// Lognormal sigma of per-cell current mismatch.
    pub sigma_mismatch: f64,
    /// Supported temperature range, degrees C.
    pub t_min: f64,
    pub t_max: f64,
    /// Regulated unit cell current target, A.
    pub i_unit_target: f64,
    /// Off-cell leakage as a fraction of the on-cell current.
    pub leak_fraction: f64,
}

impl Default for DeviceParams {
    fn default() -> Self {
        // i0 calibrated so the regulator lands near 0.29 V at 25 C for a
        // 200 nA unit target.
        Self {
            i0: 2.4e-5,
            n: 1.3,
            vth0: 0.45,
            dvth_dt: -1.0e-3,
            sigma_mismatch: 0.1,
            t_min: -20.0,
            t_max: 100.0,
            i_unit_target: 200e-9,
            leak_fraction: 1.0e-4,
        }
    }
}

impl DeviceParams {
    pub fn validate(&self) -> Result<(), DeviceError> {
        if self.i0 <= 0.0 || self.i_unit_target <= 0.0 {
            return Err(DeviceError::BadParams("currents must be positive"));
        }
        if self.n < 1.0 {
            return Err(DeviceError::BadParams("slope factor must be >= 1"));
        }
        if self.sigma_mismatch < 0.0 {
            return Err(DeviceError::BadParams("sigma must be >= 0"));
        }
        Ok(())
    }

    fn thermal_voltage(&self, temp_c: f64) -> f64 {
        K_OVER_Q * (temp_c + ZERO_C_IN_K)
    }

    fn vth(&self, temp_c: f64) -> f64 {
        self.vth0 + self.dvth_dt * (temp_c - 25.0)
    }
}

#[derive(Debug, Error)]
pub enum DeviceError {
    #[error("invalid device parameters: {0}")]
    BadParams(&'static str),
    #[error(
        "regulator target {target:.3e} A unreachable within [0, {vmax}] V at {temp} C \
         (bracket currents {lo:.3e}..{hi:.3e} A)"
    )]
    TargetUnreachable {
        target: f64,
        vmax: f64,
        temp: f64,
        lo: f64,
        hi: f64,
    },
    #[error("monitor gain list is empty")]
    NoMonitors,
}

/// Cell read current at a given supply and temperature.
///
/// `gain` is the per-cell mismatch multiplier; a stored '0' contributes
/// through [`leakage_current`] instead.
pub fn cell_current(v_supply: f64, temp_c: f64, gain: f64, params: &DeviceParams) -> f64 {
    if gain == 0.0 {
        return 0.0;
    }
    let vt = params.thermal_voltage(temp_c);
    let overdrive = v_supply - params.vth(temp_c);
    gain * params.i0 * (overdrive / (params.n * vt)).exp()
}

/// Aggregate leakage of `off_cells` non-conducting cells.
pub fn leakage_current(off_cells: usize, v_supply: f64, temp_c: f64, params: &DeviceParams) -> f64 {
    off_cells as f64 * params.leak_fraction * cell_current(v_supply, temp_c, 1.0, params)
}

/// Steady-state output of the regulation loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegulatorSolution {
    /// Regulated supply, V.
    pub v_r: f64,
    /// Relative error of the mean monitor current against the target.
    pub residual_error: f64,
    pub iterations: u32,
}

/// Relative tolerance of the solved monitor current.
pub const REGULATOR_TOLERANCE: f64 = 1e-5;

/// Solve for the supply voltage that pins the mean monitor-cell current to
/// `params.i_unit_target`, by bisection over `[0, 0.9]` V.
pub fn solve_regulator(
    temp_c: f64,
    monitor_gains: &[f64],
    params: &DeviceParams,
) -> Result<RegulatorSolution, DeviceError> {
    if monitor_gains.is_empty() {
        return Err(DeviceError::NoMonitors);
    }
    let mean_current = |v: f64| -> f64 {
        let sum: f64 = monitor_gains
            .iter()
            .map(|&g| cell_current(v, temp_c, g, params))
            .sum();
        sum / monitor_gains.len() as f64
    };

    let target = params.i_unit_target;
    let (mut lo, mut hi) = (0.0f64, V_SUPPLY_MAX);
    let (i_lo, i_hi) = (mean_current(lo), mean_current(hi));
    if !(i_lo <= target && target <= i_hi) {
        return Err(DeviceError::TargetUnreachable {
            target,
            vmax: V_SUPPLY_MAX,
            temp: temp_c,
            lo: i_lo,
            hi: i_hi,
        });
    }

    let mut iterations = 0u32;
    loop {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        let i_mid = mean_current(mid);
        let rel = (i_mid - target) / target;
        if rel.abs() <= REGULATOR_TOLERANCE || iterations >= 200 {
            return Ok(RegulatorSolution {
                v_r: mid,
                residual_error: rel.abs(),
                iterations,
            });
        }
        if i_mid < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}

/// Per-cell lognormal current-gain multipliers, reproducible from the seed.
#[derive(Debug, Clone, PartialEq)]
pub struct MismatchSample {
    pub rows: usize,
    pub cols: usize,
    pub seed: u64,
    gains: Vec<f64>,
}

impl MismatchSample {
    pub fn gain(&self, row: usize, col: usize) -> f64 {
        self.gains[row * self.cols + col]
    }

    pub fn gains(&self) -> &[f64] {
        &self.gains
    }
}

/// Draw i.i.d. lognormal(0, sigma) gain multipliers for a rows x cols array.
/// `sigma = 0` yields exactly 1.0 everywhere; the median gain is 1.
pub fn sample_mismatch(rows: usize, cols: usize, sigma: f64, seed: u64) -> MismatchSample {
    assert!(sigma >= 0.0, "sigma must be >= 0");
    let n = rows * cols;
    let gains = if sigma == 0.0 {
        vec![1.0; n]
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma).expect("sigma validated");
        (0..n).map(|_| normal.sample(&mut rng).exp()).collect()
    };
    MismatchSample {
        rows,
        cols,
        seed,
        gains,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn dead_cell_draws_nothing() {
        let p = DeviceParams::default();
        assert_eq!(cell_current(0.29, 25.0, 0.0, &p), 0.0);
    }

    #[test]
    fn current_increases_with_supply_and_temperature() {
        let p = DeviceParams::default();
        let mut last = 0.0;
        for mv in (0..=90).map(|x| x as f64 * 0.01) {
            let i = cell_current(mv, 25.0, 1.0, &p);
            assert!(i > last);
            last = i;
        }
        let mut last = 0.0;
        for t in (-20..=100).step_by(10) {
            let i = cell_current(0.29, t as f64, 1.0, &p);
            assert!(i > last, "not increasing at {t} C");
            last = i;
        }
    }

    #[test]
    fn regulator_lands_near_290_mv_at_room_temperature() {
        let p = DeviceParams::default();
        let sol = solve_regulator(25.0, &[1.0; 10], &p).unwrap();
        assert!(sol.v_r > 0.2 && sol.v_r < 0.35, "v_r = {}", sol.v_r);
        let i = cell_current(sol.v_r, 25.0, 1.0, &p);
        assert_relative_eq!(i, 200e-9, max_relative = 1e-5);
        assert!(sol.residual_error <= REGULATOR_TOLERANCE);
    }

    #[test]
    fn regulated_current_is_flat_across_temperature() {
        let p = DeviceParams::default();
        let mut v_last = f64::INFINITY;
        for k in 0..13 {
            let t = -20.0 + 10.0 * k as f64;
            let sol = solve_regulator(t, &[1.0; 10], &p).unwrap();
            let i = cell_current(sol.v_r, t, 1.0, &p);
            assert!((i - 200e-9).abs() / 200e-9 <= 0.01, "{} A at {} C", i, t);
            // v_r falls monotonically as temperature rises
            assert!(sol.v_r < v_last, "v_r not monotonic at {t} C");
            v_last = sol.v_r;
        }
    }

    #[test]
    fn doubled_monitor_gains_lower_the_solution() {
        let p = DeviceParams::default();
        let base = solve_regulator(25.0, &[1.0; 10], &p).unwrap();
        let doubled = solve_regulator(25.0, &[2.0; 10], &p).unwrap();
        assert!(doubled.v_r < base.v_r);
    }

    #[test]
    fn unregulated_supply_drifts_hard() {
        let p = DeviceParams::default();
        let v_fixed = solve_regulator(25.0, &[1.0; 10], &p).unwrap().v_r;
        let cold = cell_current(v_fixed, -20.0, 1.0, &p);
        let hot = cell_current(v_fixed, 100.0, 1.0, &p);
        assert!(hot / cold >= 5.0, "ratio {}", hot / cold);
    }

    #[test]
    fn dynamic_range_against_nominal_supply() {
        let p = DeviceParams::default();
        let v_r = solve_regulator(25.0, &[1.0; 10], &p).unwrap().v_r;
        let ratio = cell_current(0.9, 25.0, 1.0, &p) / cell_current(v_r, 25.0, 1.0, &p);
        assert!(ratio >= 50.0, "ratio {}", ratio);
    }

    #[test]
    fn regulator_is_repeatable_to_sub_microvolt() {
        let p = DeviceParams::default();
        let a = solve_regulator(60.0, &[1.1, 0.9, 1.0, 1.05], &p).unwrap();
        let b = solve_regulator(60.0, &[1.1, 0.9, 1.0, 1.05], &p).unwrap();
        assert!((a.v_r - b.v_r).abs() < 1e-6);
    }

    #[test]
    fn regulator_rejects_unreachable_target() {
        let p = DeviceParams {
            i_unit_target: 10.0, // amps; far beyond the exponential at 0.9 V
            ..DeviceParams::default()
        };
        let err = solve_regulator(25.0, &[1.0; 10], &p).unwrap_err();
        assert!(matches!(err, DeviceError::TargetUnreachable { .. }));
        assert!(matches!(
            solve_regulator(25.0, &[], &DeviceParams::default()).unwrap_err(),
            DeviceError::NoMonitors
        ));
    }

    #[test]
    fn mismatch_sigma_zero_is_exactly_one() {
        let s = sample_mismatch(4, 4, 0.0, 9);
        assert!(s.gains().iter().all(|&g| g == 1.0));
    }

    #[test]
    fn mismatch_is_deterministic_per_seed() {
        let a = sample_mismatch(8, 8, 0.1, 42);
        let b = sample_mismatch(8, 8, 0.1, 42);
        assert_eq!(a, b);
        let c = sample_mismatch(8, 8, 0.1, 43);
        assert_ne!(a, c);
    }

    #[test]
    fn mismatch_median_is_one_at_scale() {
        let s = sample_mismatch(1000, 100, 0.1, 5);
        let mut g = s.gains().to_vec();
        g.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = g[g.len() / 2];
        assert!((0.99..=1.01).contains(&median), "median {}", median);
        assert!(g.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn leakage_is_linear_and_suppressed_by_regulation() {
        let p = DeviceParams::default();
        assert_eq!(leakage_current(0, 0.29, 25.0, &p), 0.0);
        let one = leakage_current(100, 0.29, 25.0, &p);
        let two = leakage_current(200, 0.29, 25.0, &p);
        assert_relative_eq!(two, 2.0 * one, max_relative = 1e-12);

        let v_r = solve_regulator(25.0, &[1.0; 10], &p).unwrap().v_r;
        let regulated = leakage_current(1024, v_r, 25.0, &p);
        let nominal = leakage_current(1024, 0.9, 25.0, &p);
        assert!(
            regulated <= 0.2 * nominal,
            "reduction {}",
            1.0 - regulated / nominal
        );
    }
}
