//! Aggregated trajectory reward: collapse a trajectory's per-step scores
//! into one terminal scalar through an asymmetric transition matrix, and
//! machine-check the dissipativity property that matrix is chosen for.
//!
//! Each consecutive score pair is classified by its gradient: an increase
//! is an improvement (Low→High entry), a decrease a degradation (High→Low
//! entry), and a near-zero change a stagnation whose state comes from the
//! threshold `tau`. Because the degradation entry outweighs the improvement
//! entry, any closed loop of scores accumulates strictly negative shaping
//! reward — oscillating policies cannot break even. [`verify_dissipativity`]
//! proves this exhaustively over a score grid instead of taking it on faith.

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AtrError {
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error("score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("enumeration budget exceeded: {attempted} sequences requested, budget {budget}")]
    BudgetExceeded { attempted: u128, budget: u128 },
    #[error("unknown preset: {0} (expected eq2 or figure)")]
    UnknownPreset(String),
    #[error("unknown config field: {0}")]
    UnknownField(String),
}

/// Binary semantic state of a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StateLabel {
    Low,
    High,
}

/// How a step was classified from its score gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransitionKind {
    Improve,
    Degrade,
    Stagnate,
}

/// Shaping parameters: the transition matrix, the stagnation rule, and the
/// terminal/turn/clip terms that complete the trajectory total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtrConfig {
    /// Matrix entry for Low→Low (stagnating below `tau`).
    pub m_ll: f64,
    /// Matrix entry for Low→High (improvement).
    pub m_lh: f64,
    /// Matrix entry for High→Low (degradation).
    pub m_hl: f64,
    /// Matrix entry for High→High (stagnating above `tau`).
    pub m_hh: f64,
    /// Stagnation threshold deciding the sustained state.
    pub tau: f64,
    /// Gradients with |Δ| at or below this count as stagnation.
    pub eps_stag: f64,
    /// Penalty per turn beyond the first.
    pub c_turn: f64,
    /// Weight of the final score in the total.
    pub w_term: f64,
    /// The total is clipped to `[-clip_b, clip_b]`.
    pub clip_b: f64,
    /// Scale transition entries by |Δ|; stagnation entries always use 1.0.
    pub scale_by_delta: bool,
}

impl AtrConfig {
    pub fn validate(&self) -> Result<(), AtrError> {
        let fields = [
            self.m_ll, self.m_lh, self.m_hl, self.m_hh, self.tau, self.eps_stag, self.c_turn,
            self.w_term, self.clip_b,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(AtrError::InvalidConfig("non-finite field".to_string()));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(AtrError::InvalidConfig(format!(
                "tau must be in (0, 1), got {}",
                self.tau
            )));
        }
        if self.eps_stag <= 0.0 {
            return Err(AtrError::InvalidConfig("eps_stag must be > 0".to_string()));
        }
        if self.c_turn < 0.0 {
            return Err(AtrError::InvalidConfig("c_turn must be >= 0".to_string()));
        }
        if self.clip_b <= 0.0 {
            return Err(AtrError::InvalidConfig("clip_b must be > 0".to_string()));
        }
        Ok(())
    }

    /// The sufficient condition for strictly negative cycles: the up/down
    /// pair nets negative and stagnation never pays.
    pub fn is_dissipative(&self) -> bool {
        self.m_lh + self.m_hl < 0.0 && self.m_ll <= 0.0 && self.m_hh <= 0.0
    }

    /// Matrix entry for a (previous, current) state pair.
    pub fn matrix_entry(&self, prev: StateLabel, cur: StateLabel) -> f64 {
        match (prev, cur) {
            (StateLabel::Low, StateLabel::Low) => self.m_ll,
            (StateLabel::Low, StateLabel::High) => self.m_lh,
            (StateLabel::High, StateLabel::Low) => self.m_hl,
            (StateLabel::High, StateLabel::High) => self.m_hh,
        }
    }

    /// Override one field by name (`m_ll`, `m_lh`, `m_hl`, `m_hh`, `tau`,
    /// `eps_stag`, `c_turn`, `w_term`, `clip_b`, `scale_by_delta`).
    pub fn set_field(&mut self, key: &str, value: &str) -> Result<(), AtrError> {
        let parse_f64 = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| AtrError::InvalidConfig(format!("{key}: not a number: {v}")))
        };
        match key {
            "m_ll" => self.m_ll = parse_f64(value)?,
            "m_lh" => self.m_lh = parse_f64(value)?,
            "m_hl" => self.m_hl = parse_f64(value)?,
            "m_hh" => self.m_hh = parse_f64(value)?,
            "tau" => self.tau = parse_f64(value)?,
            "eps_stag" => self.eps_stag = parse_f64(value)?,
            "c_turn" => self.c_turn = parse_f64(value)?,
            "w_term" => self.w_term = parse_f64(value)?,
            "clip_b" => self.clip_b = parse_f64(value)?,
            "scale_by_delta" => {
                self.scale_by_delta = value.parse::<bool>().map_err(|_| {
                    AtrError::InvalidConfig(format!("scale_by_delta: not a bool: {value}"))
                })?
            }
            other => return Err(AtrError::UnknownField(other.to_string())),
        }
        Ok(())
    }
}

/// Named parameter sets.
///
/// `Eq2` is the training configuration: ±-asymmetric matrix (+1.0 / −1.5),
/// |Δ|-scaled transitions, near-zero turn penalty. `Figure` is the 0/1
/// reward-analysis configuration: unscaled entries (0 / −0.5, diagonal
/// 0 / −0.2) with a 0.1 turn penalty. Both satisfy [`AtrConfig::is_dissipative`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AtrPreset {
    Eq2,
    Figure,
}

impl AtrPreset {
    pub fn config(self) -> AtrConfig {
        match self {
            AtrPreset::Eq2 => AtrConfig {
                m_ll: 0.0,
                m_lh: 1.0,
                m_hl: -1.5,
                m_hh: 0.0,
                tau: 0.6,
                eps_stag: 1e-6,
                c_turn: 0.0001,
                w_term: 1.0,
                clip_b: 2.0,
                scale_by_delta: true,
            },
            AtrPreset::Figure => AtrConfig {
                m_ll: 0.0,
                m_lh: 0.0,
                m_hl: -0.5,
                m_hh: -0.2,
                tau: 0.6,
                eps_stag: 1e-6,
                c_turn: 0.1,
                w_term: 1.0,
                clip_b: 2.0,
                scale_by_delta: false,
            },
        }
    }
}

impl std::str::FromStr for AtrPreset {
    type Err = AtrError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "eq2" => Ok(AtrPreset::Eq2),
            "figure" => Ok(AtrPreset::Figure),
            other => Err(AtrError::UnknownPreset(other.to_string())),
        }
    }
}

/// Full decomposition of one trajectory's aggregated reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtrBreakdown {
    /// Per-turn state labels `s_1..s_K`.
    pub states: Vec<StateLabel>,
    /// Shaping values for steps `t = 2..K`.
    pub step_rewards: Vec<f64>,
    /// `w_term · R_K`.
    pub terminal: f64,
    /// `c_turn · (K − 1)`.
    pub turn_penalty: f64,
    /// `clamp(terminal + Σ step_rewards − turn_penalty, −clip_b, clip_b)`.
    pub total: f64,
}

/// Classify one step from its gradient. An increase beyond `eps_stag` is an
/// improvement landing High, a decrease a degradation landing Low; anything
/// else stagnates and the state is sustained by the `tau` threshold.
///
/// The previous label is accepted for signature completeness but does not
/// influence the classification.
pub fn classify_step(
    r_prev: f64,
    r_cur: f64,
    _s_prev: StateLabel,
    cfg: &AtrConfig,
) -> (StateLabel, TransitionKind) {
    let delta = r_cur - r_prev;
    if delta > cfg.eps_stag {
        (StateLabel::High, TransitionKind::Improve)
    } else if delta < -cfg.eps_stag {
        (StateLabel::Low, TransitionKind::Degrade)
    } else if r_cur > cfg.tau {
        (StateLabel::High, TransitionKind::Stagnate)
    } else {
        (StateLabel::Low, TransitionKind::Stagnate)
    }
}

/// Shaping value for one step: the matrix entry for the state pair, scaled
/// by |Δ| only when the states differ and `scale_by_delta` is set. Equal
/// states (every stagnation) always use factor 1.0.
pub fn shaping(s_prev: StateLabel, s_cur: StateLabel, delta: f64, cfg: &AtrConfig) -> f64 {
    let factor = if s_prev != s_cur && cfg.scale_by_delta {
        delta.abs()
    } else {
        1.0
    };
    cfg.matrix_entry(s_prev, s_cur) * factor
}

/// Matrix state pair implied by a step classification: improvements are
/// Low→High, degradations High→Low, stagnations stay on the diagonal of the
/// sustained state.
fn matrix_pair(kind: TransitionKind, cur: StateLabel) -> (StateLabel, StateLabel) {
    match kind {
        TransitionKind::Improve => (StateLabel::Low, StateLabel::High),
        TransitionKind::Degrade => (StateLabel::High, StateLabel::Low),
        TransitionKind::Stagnate => (cur, cur),
    }
}

fn check_scores(scores: &[f64]) -> Result<(), AtrError> {
    if scores.is_empty() {
        return Err(AtrError::EmptyTrajectory);
    }
    for &s in scores {
        if !s.is_finite() || !(0.0..=1.0).contains(&s) {
            return Err(AtrError::ScoreOutOfRange(s));
        }
    }
    Ok(())
}

/// Sum of shaping values over consecutive score pairs, without terminal and
/// turn-penalty terms. This is the quantity the dissipativity check bounds.
fn shaping_sum(scores: &[f64], cfg: &AtrConfig) -> f64 {
    let mut state = if scores[0] > cfg.tau {
        StateLabel::High
    } else {
        StateLabel::Low
    };
    let mut sum = 0.0;
    for window in scores.windows(2) {
        let (next, kind) = classify_step(window[0], window[1], state, cfg);
        let (from, to) = matrix_pair(kind, next);
        sum += shaping(from, to, window[1] - window[0], cfg);
        state = next;
    }
    sum
}

/// Aggregate a trajectory's per-step scores into its terminal reward.
pub fn atr_total(scores: &[f64], cfg: &AtrConfig) -> Result<AtrBreakdown, AtrError> {
    check_scores(scores)?;
    cfg.validate()?;

    let mut states = Vec::with_capacity(scores.len());
    states.push(if scores[0] > cfg.tau {
        StateLabel::High
    } else {
        StateLabel::Low
    });
    let mut step_rewards = Vec::with_capacity(scores.len().saturating_sub(1));
    for t in 1..scores.len() {
        let (next, kind) = classify_step(scores[t - 1], scores[t], states[t - 1], cfg);
        let (from, to) = matrix_pair(kind, next);
        step_rewards.push(shaping(from, to, scores[t] - scores[t - 1], cfg));
        states.push(next);
    }

    let terminal = cfg.w_term * scores[scores.len() - 1];
    let turn_penalty = cfg.c_turn * (scores.len() - 1) as f64;
    let raw = terminal + step_rewards.iter().sum::<f64>() - turn_penalty;
    let total = raw.clamp(-cfg.clip_b, cfg.clip_b);
    Ok(AtrBreakdown {
        states,
        step_rewards,
        terminal,
        turn_penalty,
        total,
    })
}

/// Semantic error energy `V = 1 − score`: zero exactly at a perfect score.
pub fn lyapunov_energy(score: f64) -> f64 {
    1.0 - score
}

/// One cyclic sequence whose shaping sum failed to be strictly negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleViolation {
    pub scores: Vec<f64>,
    pub shaping_sum: f64,
    /// `zero_sum` marks break-even cycles (the Lagrange-stable failure
    /// mode); `positive` marks cycles that actually pay.
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    ZeroSum,
    Positive,
}

/// Outcome of exhaustive cycle enumeration over a score grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissipativityReport {
    /// Number of closed sequences that met the cycle conditions.
    pub cycles_checked: u64,
    /// All sequences enumerated (including filtered-out ones).
    pub sequences_enumerated: u64,
    pub violations: Vec<CycleViolation>,
    /// True iff no violation was found: strictly dissipative over the grid.
    pub certified: bool,
}

const ENUMERATION_BUDGET: u128 = 50_000_000;

/// Enumerate every score sequence over `grid` with length ≤ `max_len` whose
/// first and last scores coincide and which moves at least once beyond
/// `eps_stag`, and report each one whose shaping sum is ≥ 0.
///
/// An empty violation list certifies the config strictly dissipative over
/// the grid. Violations come out in (length, lexicographic) order.
pub fn verify_dissipativity(
    cfg: &AtrConfig,
    max_len: usize,
    grid: &[f64],
) -> Result<DissipativityReport, AtrError> {
    cfg.validate()?;
    if max_len < 2 {
        return Err(AtrError::InvalidConfig("max_len must be >= 2".to_string()));
    }
    if grid.is_empty() {
        return Err(AtrError::InvalidConfig("empty grid".to_string()));
    }
    for &g in grid {
        if !g.is_finite() || !(0.0..=1.0).contains(&g) {
            return Err(AtrError::ScoreOutOfRange(g));
        }
    }

    let n = grid.len() as u128;
    let mut attempted: u128 = 0;
    for len in 2..=max_len {
        attempted = attempted.saturating_add(n.saturating_pow(len as u32 - 1));
    }
    if attempted > ENUMERATION_BUDGET {
        return Err(AtrError::BudgetExceeded {
            attempted,
            budget: ENUMERATION_BUDGET,
        });
    }

    let mut report = DissipativityReport {
        cycles_checked: 0,
        sequences_enumerated: 0,
        violations: Vec::new(),
        certified: true,
    };

    let mut scores = Vec::with_capacity(max_len);
    for len in 2..=max_len {
        // Odometer over the first len-1 positions; the last repeats the first.
        let mut indices = vec![0usize; len - 1];
        loop {
            scores.clear();
            scores.extend(indices.iter().map(|&i| grid[i]));
            scores.push(grid[indices[0]]);
            report.sequences_enumerated += 1;

            let moves = scores
                .windows(2)
                .any(|w| (w[1] - w[0]).abs() > cfg.eps_stag);
            if moves {
                report.cycles_checked += 1;
                let sum = shaping_sum(&scores, cfg);
                if sum >= 0.0 {
                    let kind = if sum.abs() <= 1e-12 {
                        ViolationKind::ZeroSum
                    } else {
                        ViolationKind::Positive
                    };
                    report.violations.push(CycleViolation {
                        scores: scores.clone(),
                        shaping_sum: sum,
                        kind,
                    });
                }
            }

            // Advance the odometer (most significant digit first gives
            // lexicographic order in the sequence).
            let mut pos = len - 1;
            loop {
                if pos == 0 {
                    break;
                }
                pos -= 1;
                indices[pos] += 1;
                if indices[pos] < grid.len() {
                    break;
                }
                indices[pos] = 0;
            }
            if pos == 0 && indices[0] == 0 {
                break;
            }
        }
    }

    report.certified = report.violations.is_empty();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eq2() -> AtrConfig {
        AtrPreset::Eq2.config()
    }

    fn figure() -> AtrConfig {
        AtrPreset::Figure.config()
    }

    #[test]
    fn classify_improvement_and_degradation() {
        let cfg = eq2();
        assert_eq!(
            classify_step(0.0, 1.0, StateLabel::Low, &cfg),
            (StateLabel::High, TransitionKind::Improve)
        );
        assert_eq!(
            classify_step(0.9, 0.2, StateLabel::High, &cfg),
            (StateLabel::Low, TransitionKind::Degrade)
        );
    }

    #[test]
    fn classify_stagnation_uses_tau() {
        let cfg = eq2();
        assert_eq!(
            classify_step(0.7, 0.7, StateLabel::High, &cfg),
            (StateLabel::High, TransitionKind::Stagnate)
        );
        assert_eq!(
            classify_step(0.3, 0.3, StateLabel::Low, &cfg),
            (StateLabel::Low, TransitionKind::Stagnate)
        );
        // Exactly tau is not "above".
        assert_eq!(
            classify_step(0.6, 0.6, StateLabel::High, &cfg),
            (StateLabel::Low, TransitionKind::Stagnate)
        );
    }

    #[test]
    fn shaping_scales_transitions_by_delta() {
        let cfg = eq2();
        assert_eq!(shaping(StateLabel::Low, StateLabel::High, 1.0, &cfg), 1.0);
        assert!(
            (shaping(StateLabel::High, StateLabel::Low, -0.4, &cfg) - (-0.6)).abs() < 1e-12
        );
        // Stagnation ignores delta scaling.
        assert_eq!(
            shaping(StateLabel::High, StateLabel::High, 0.0, &figure()),
            -0.2
        );
    }

    #[test]
    fn shaping_unscaled_when_disabled() {
        let cfg = figure();
        assert_eq!(shaping(StateLabel::High, StateLabel::Low, -0.3, &cfg), -0.5);
    }

    #[test]
    fn atr_total_eq2_probe_then_solve() {
        // [0, 1]: terminal 1.0 + improvement 1.0 − one turn penalty.
        let b = atr_total(&[0.0, 1.0], &eq2()).unwrap();
        assert!((b.total - 1.9999).abs() < 1e-12);
        assert_eq!(b.states, vec![StateLabel::Low, StateLabel::High]);
    }

    #[test]
    fn atr_total_figure_rows() {
        let cfg = figure();
        let rows: &[(&[f64], f64)] = &[
            (&[1.0], 1.00),
            (&[1.0, 0.0, 1.0], 0.30),
            (&[1.0, 1.0, 0.0], -0.90),
        ];
        for (scores, expected) in rows {
            let b = atr_total(scores, &cfg).unwrap();
            assert!(
                (b.total - expected).abs() < 1e-12,
                "{scores:?}: got {}, want {expected}",
                b.total
            );
        }
    }

    #[test]
    fn atr_total_clips() {
        let mut cfg = eq2();
        cfg.clip_b = 0.5;
        let b = atr_total(&[0.0, 1.0], &cfg).unwrap();
        assert_eq!(b.total, 0.5);
        let b = atr_total(&[1.0, 0.0], &cfg).unwrap();
        assert_eq!(b.total, -0.5);
    }

    #[test]
    fn atr_total_rejects_bad_input() {
        assert_eq!(atr_total(&[], &eq2()).unwrap_err(), AtrError::EmptyTrajectory);
        assert_eq!(
            atr_total(&[1.5], &eq2()).unwrap_err(),
            AtrError::ScoreOutOfRange(1.5)
        );
    }

    #[test]
    fn monotone_increase_sums_to_net_gain() {
        // Every increment is an improvement entry at +1 × |Δ|, so the
        // shaping sum telescopes to R_K − R_1.
        let scores = [0.1, 0.25, 0.5, 0.55, 0.9];
        let b = atr_total(&scores, &eq2()).unwrap();
        let sum: f64 = b.step_rewards.iter().sum();
        assert!((sum - (0.9 - 0.1)).abs() < 1e-12);
    }

    #[test]
    fn lyapunov_energy_zero_at_equilibrium() {
        assert_eq!(lyapunov_energy(1.0), 0.0);
        assert_eq!(lyapunov_energy(0.0), 1.0);
        assert!((lyapunov_energy(0.8) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn eq2_binary_grid_has_no_cycles() {
        let report = verify_dissipativity(&eq2(), 4, &[0.0, 1.0]).unwrap();
        assert!(report.certified, "violations: {:?}", report.violations);
        // The canonical up-down cycle pays 1.0 − 1.5.
        assert!((shaping_sum(&[0.0, 1.0, 0.0], &eq2()) - (-0.5)).abs() < 1e-12);
    }

    #[test]
    fn symmetric_matrix_reports_zero_sum_cycles() {
        let mut cfg = eq2();
        cfg.m_hl = -1.0;
        let report = verify_dissipativity(&cfg, 4, &[0.0, 1.0]).unwrap();
        assert!(!report.certified);
        assert!(report
            .violations
            .iter()
            .all(|v| v.kind == ViolationKind::ZeroSum));
        let updown = report
            .violations
            .iter()
            .find(|v| v.scores == vec![0.0, 1.0, 0.0])
            .expect("up-down cycle reported");
        assert_eq!(updown.shaping_sum, 0.0);
    }

    #[test]
    fn figure_grid_has_no_cycles() {
        let report = verify_dissipativity(&figure(), 6, &[0.0, 1.0]).unwrap();
        assert!(report.certified, "violations: {:?}", report.violations);
    }

    #[test]
    fn budget_guard_trips() {
        let grid: Vec<f64> = (0..100).map(|i| i as f64 / 99.0).collect();
        let err = verify_dissipativity(&eq2(), 6, &grid).unwrap_err();
        assert!(matches!(err, AtrError::BudgetExceeded { .. }));
    }

    #[test]
    fn preset_parsing() {
        assert_eq!("eq2".parse::<AtrPreset>().unwrap(), AtrPreset::Eq2);
        assert_eq!("FIGURE".parse::<AtrPreset>().unwrap(), AtrPreset::Figure);
        assert!("other".parse::<AtrPreset>().is_err());
    }

    #[test]
    fn both_presets_satisfy_dissipativity_conditions() {
        assert!(eq2().is_dissipative());
        assert!(figure().is_dissipative());
    }

    #[test]
    fn override_fields() {
        let mut cfg = eq2();
        cfg.set_field("c_turn", "0.05").unwrap();
        cfg.set_field("scale_by_delta", "false").unwrap();
        assert_eq!(cfg.c_turn, 0.05);
        assert!(!cfg.scale_by_delta);
        assert!(matches!(
            cfg.set_field("m_xy", "1"),
            Err(AtrError::UnknownField(_))
        ));
    }
}
