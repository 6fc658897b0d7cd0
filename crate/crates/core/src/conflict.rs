//! Rational conflict resolution.
//!
//! A matched production of value `V` fires once the expected gain of waiting
//! for a better one drops to the waiting cost `tau`:
//!
//! ```text
//! gain(t) = ∫_V^G (x - V) Z_t(x; V) dx,   Z_t(x; V) = e^(-(G-x)/(t(G-V))) / (t(G-V))
//! ```
//!
//! which has the closed form `(G - V) (1 - t (1 - e^(-1/t)))`. The gain is
//! strictly decreasing in `t`, so the stopping rule is equivalent to a fixed
//! waiting window `T` solving `gain(T) = tau`.

use std::cmp::Ordering;

use thiserror::Error;

use crate::procedural::Instantiation;
use crate::utility::UtilityStats;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConflictParams {
    pub goal_value_g: f64,
    pub waiting_cost_tau: f64,
}

impl Default for ConflictParams {
    fn default() -> Self {
        ConflictParams {
            goal_value_g: 20.0,
            waiting_cost_tau: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConflictError {
    #[error("domain error: {0}")]
    Domain(&'static str),
    #[error("no matching production")]
    NoMatch,
}

/// `V = p G - C` with `p = q r`.
pub fn expected_value(stats: &UtilityStats, params: &ConflictParams, spent_cost: f64) -> f64 {
    stats.estimate_p(spent_cost) * params.goal_value_g - stats.estimate_c()
}

fn check_domain(v: f64, g: f64, t: f64, strict: bool) -> Result<(), ConflictError> {
    if t.is_nan() || t <= 0.0 {
        return Err(ConflictError::Domain("t must be positive"));
    }
    if v > g || (strict && v == g) || v.is_nan() || !g.is_finite() {
        return Err(ConflictError::Domain("V must lie below G"));
    }
    Ok(())
}

/// Density of the value `x` of a future match, given the current best `V`.
pub fn z_density(x: f64, v: f64, g: f64, t: f64) -> Result<f64, ConflictError> {
    check_domain(v, g, t, true)?;
    if x > g {
        return Err(ConflictError::Domain("x must not exceed G"));
    }
    let scale = t * (g - v);
    Ok((-(g - x) / scale).exp() / scale)
}

/// `1 - t (1 - e^(-1/t))`, the gain per unit of `G - V`.
fn gain_fraction(t: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let u = 1.0 / t;
    if u < 1e-2 {
        // series of 1 - (1 - e^-u)/u, avoids cancellation for large t
        let mut term = u / 2.0;
        let mut sum = 0.0;
        let mut k = 2.0;
        for _ in 0..8 {
            sum += term;
            k += 1.0;
            term *= -u / k;
        }
        sum
    } else {
        1.0 + (-u).exp_m1() / u
    }
}

/// Expected gain of waiting at clock `t`, in closed form.
pub fn expected_gain(v: f64, g: f64, t: f64) -> Result<f64, ConflictError> {
    check_domain(v, g, t, false)?;
    if v == g {
        return Ok(0.0);
    }
    Ok((g - v) * gain_fraction(t))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Fire,
    Wait,
}

/// The stopping rule evaluated `t` seconds after the best match arrived.
pub fn decide(value: f64, t: f64, params: &ConflictParams) -> Result<Decision, ConflictError> {
    let gain = expected_gain(value, params.goal_value_g, t)?;
    Ok(if gain <= params.waiting_cost_tau {
        Decision::Fire
    } else {
        Decision::Wait
    })
}

/// The window `T` after which the stopping rule fires: the root of
/// `gain(V, G, T) = tau`, found by bisection.
pub fn waiting_window(v: f64, g: f64, params: &ConflictParams) -> f64 {
    let tau = params.waiting_cost_tau;
    let delta = g - v;
    if delta <= 0.0 || tau >= delta {
        return 0.0;
    }
    if tau <= 0.0 {
        return f64::INFINITY;
    }
    let target = tau / delta;
    let mut lo = 0.0_f64;
    let mut hi = (1.0 / target).max(1.0);
    while gain_fraction(hi) > target {
        hi *= 2.0;
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if gain_fraction(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValuedMatch {
    pub inst: Instantiation,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resolution {
    /// Index of the winner in the input slice.
    pub winner: usize,
    pub fire_time: f64,
    /// Indices of every match that arrived before the winner fired, in
    /// arrival order.
    pub arrived: Vec<usize>,
}

fn arrival_order(a: &ValuedMatch, b: &ValuedMatch) -> Ordering {
    a.inst
        .match_time
        .total_cmp(&b.inst.match_time)
        .then(a.inst.production.cmp(&b.inst.production))
        .then_with(|| a.inst.bindings.cmp(&b.inst.bindings))
        .then_with(|| a.inst.matched.cmp(&b.inst.matched))
}

/// Pick the match that fires. Matches are replayed in arrival order; a
/// strictly better arrival restarts the clock. The best-so-far fires when
/// its waiting window elapses with no better arrival, or as soon as the
/// last known match has arrived.
pub fn resolve(
    matches: &[ValuedMatch],
    params: &ConflictParams,
) -> Result<Resolution, ConflictError> {
    if matches.is_empty() {
        return Err(ConflictError::NoMatch);
    }
    if matches.iter().any(|m| !m.inst.match_time.is_finite()) {
        return Err(ConflictError::Domain("match times must be finite"));
    }
    let mut order: Vec<usize> = (0..matches.len()).collect();
    order.sort_by(|&a, &b| arrival_order(&matches[a], &matches[b]));

    let mut best = order[0];
    let mut origin = matches[best].inst.match_time;
    let mut window = waiting_window(matches[best].value, params.goal_value_g, params);
    let mut arrived = vec![best];
    let mut fire_time = origin;
    let mut expired = false;
    for &i in &order[1..] {
        let m = &matches[i];
        if m.inst.match_time > origin + window {
            expired = true;
            break;
        }
        arrived.push(i);
        fire_time = m.inst.match_time;
        if m.value > matches[best].value {
            best = i;
            origin = m.inst.match_time;
            window = waiting_window(m.value, params.goal_value_g, params);
        }
    }
    if expired {
        fire_time = origin + window;
    }
    Ok(Resolution {
        winner: best,
        fire_time,
        arrived,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::Bindings;

    fn vm(production: usize, value: f64, match_time: f64) -> ValuedMatch {
        ValuedMatch {
            inst: Instantiation {
                production,
                name: format!("P{production}"),
                bindings: Bindings::new(),
                matched: Vec::new(),
                available_time: 0.0,
                match_time,
            },
            value,
        }
    }

    #[test]
    fn expected_value_points() {
        let p = ConflictParams {
            goal_value_g: 20.0,
            waiting_cost_tau: 0.1,
        };
        let mut u = UtilityStats::new(1e9, 1e-9, 0.0, crate::utility::RMode::Constant(1.0));
        assert!((expected_value(&u, &p, 0.0) - 20.0).abs() < 1e-6);
        // p = 0.8, C = 5
        u = UtilityStats::new(4.0, 1.0, 5.0, crate::utility::RMode::Constant(1.0));
        assert!((expected_value(&u, &p, 0.0) - 11.0).abs() < 1e-12);
        u = UtilityStats::new(4.0, 1.0, 5.0, crate::utility::RMode::Constant(0.0));
        assert_eq!(expected_value(&u, &p, 0.0), -5.0);
    }

    #[test]
    fn z_density_at_g() {
        let d = z_density(20.0, 15.0, 20.0, 2.0).unwrap();
        assert!((d - 1.0 / (2.0 * 5.0)).abs() < 1e-15);
        assert!(z_density(1.0, 20.0, 20.0, 1.0).is_err());
        assert!(z_density(1.0, 5.0, 20.0, 0.0).is_err());
        assert!(z_density(21.0, 5.0, 20.0, 1.0).is_err());
        assert!(z_density(-5.0, 5.0, 20.0, 1.0).unwrap() < z_density(5.0, 5.0, 20.0, 1.0).unwrap());
    }

    #[test]
    fn gain_points() {
        assert_eq!(expected_gain(20.0, 20.0, 3.0).unwrap(), 0.0);
        let g = expected_gain(19.0, 20.0, 1.0).unwrap();
        assert!((g - (-1f64).exp()).abs() < 1e-15);
        assert!((expected_gain(10.0, 11.0, 1e-4).unwrap() - 1.0).abs() < 1e-3);
        assert!(expected_gain(10.0, 11.0, 1e4).unwrap() < 1e-3);
        assert!(expected_gain(21.0, 20.0, 1.0).is_err());
    }

    #[test]
    fn series_branch_is_continuous() {
        let a = gain_fraction(100.0 - 1e-7);
        let b = gain_fraction(100.0 + 1e-7);
        assert!((a - b).abs() < 1e-10);
        let t: f64 = 100.0;
        let direct = 1.0 - t * (1.0 - (-1.0 / t).exp());
        assert!((gain_fraction(t) - direct).abs() < 1e-12);
    }

    #[test]
    fn decide_points() {
        let p = ConflictParams {
            goal_value_g: 20.0,
            waiting_cost_tau: 0.5,
        };
        assert_eq!(decide(19.0, 1.0, &p).unwrap(), Decision::Fire);
        let p0 = ConflictParams {
            goal_value_g: 20.0,
            waiting_cost_tau: 0.0,
        };
        assert_eq!(decide(20.0, 1.0, &p0).unwrap(), Decision::Fire);
        assert_eq!(decide(19.0, 1e6, &p0).unwrap(), Decision::Wait);
    }

    #[test]
    fn window_inverts_gain() {
        let p = ConflictParams {
            goal_value_g: 20.0,
            waiting_cost_tau: (-1f64).exp(),
        };
        assert!((waiting_window(19.0, 20.0, &p) - 1.0).abs() < 1e-12);
        let p = ConflictParams {
            goal_value_g: 20.0,
            waiting_cost_tau: 2.0,
        };
        assert_eq!(waiting_window(19.0, 20.0, &p), 0.0);
        let p = ConflictParams {
            goal_value_g: 20.0,
            waiting_cost_tau: 0.0,
        };
        assert_eq!(waiting_window(19.0, 20.0, &p), f64::INFINITY);
    }

    #[test]
    fn resolve_single_and_empty() {
        let p = ConflictParams::default();
        let r = resolve(&[vm(0, 5.0, 1.0)], &p).unwrap();
        assert_eq!((r.winner, r.fire_time), (0, 1.0));
        assert_eq!(resolve(&[], &p), Err(ConflictError::NoMatch));
    }

    #[test]
    fn resolve_later_better_match_wins() {
        let p = ConflictParams {
            goal_value_g: 20.0,
            waiting_cost_tau: 0.01,
        };
        let ms = [vm(0, 5.0, 1.0), vm(1, 9.0, 1.2)];
        let r = resolve(&ms, &p).unwrap();
        assert_eq!(r.winner, 1);
        assert_eq!(r.fire_time, 1.2);
        assert_eq!(r.arrived, vec![0, 1]);
    }

    #[test]
    fn resolve_window_expires_before_better_arrival() {
        // tau >= G - V means the first match fires immediately
        let p = ConflictParams {
            goal_value_g: 20.0,
            waiting_cost_tau: 100.0,
        };
        let ms = [vm(0, 5.0, 1.0), vm(1, 9.0, 1.2)];
        let r = resolve(&ms, &p).unwrap();
        assert_eq!(r.winner, 0);
        assert_eq!(r.fire_time, 1.0);
        assert_eq!(r.arrived, vec![0]);
    }

    #[test]
    fn resolve_ties() {
        let p = ConflictParams::default();
        let ms = [vm(1, 7.0, 2.0), vm(0, 7.0, 1.0)];
        assert_eq!(resolve(&ms, &p).unwrap().winner, 1);
        let ms = [vm(1, 7.0, 1.0), vm(0, 7.0, 1.0)];
        assert_eq!(resolve(&ms, &p).unwrap().winner, 1);
    }
}
