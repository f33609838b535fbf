use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::LogoRecord;
use crate::layout::{LayoutParams, LayoutSequence, CANVAS_SIZE};

use super::EvalError;

const MARGIN: f64 = 4.0;
const MAX_SIDE: f64 = 48.0;
/// Smallest gap between neighbouring boxes; bilinear placement spreads ink
/// at most one pixel past a box edge.
pub const MIN_GAP: f64 = 2.0;

/// Heuristic line arrangements used as comparison baselines.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rule {
    /// One centered horizontal line.
    A,
    /// One centered line, horizontal or vertical with equal probability.
    B,
    /// One line per token, orientation and spacings drawn at random.
    C,
}

impl std::str::FromStr for Rule {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "a" | "A" => Ok(Rule::A),
            "b" | "B" => Ok(Rule::B),
            "c" | "C" => Ok(Rule::C),
            other => Err(EvalError::Argument(format!("unknown rule '{other}' (expected a, b or c)"))),
        }
    }
}

impl std::fmt::Display for Rule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Rule::A => "a",
            Rule::B => "b",
            Rule::C => "c",
        })
    }
}

pub fn rule_layout(record: &LogoRecord, rule: Rule, seed: u64) -> Result<LayoutSequence, EvalError> {
    rule_layout_for(record.len(), &record.tokens, rule, seed)
}

/// Rule layout for `n` units grouped by `tokens` (half-open unit ranges).
pub fn rule_layout_for(n: usize, tokens: &[(usize, usize)], rule: Rule, seed: u64) -> Result<LayoutSequence, EvalError> {
    if n == 0 {
        return Err(EvalError::Argument("no glyphs to arrange".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = match rule {
        Rule::A => single_line(n, true),
        Rule::B => single_line(n, rng.random_bool(0.5)),
        Rule::C => {
            let groups: Vec<(usize, usize)> = if tokens.is_empty() { vec![(0, n)] } else { tokens.to_vec() };
            if groups.last().map(|t| t.1) != Some(n) {
                return Err(EvalError::Argument(format!("tokens do not cover {n} units")));
            }
            token_lines(&groups, &mut rng)
        }
    };
    Ok(LayoutSequence::new(params))
}

fn place(along: f64, cross: f64, side: f64, horizontal: bool) -> LayoutParams {
    if horizontal {
        LayoutParams::new(along, cross, side, side)
    } else {
        LayoutParams::new(cross, along, side, side)
    }
}

fn single_line(n: usize, horizontal: bool) -> Vec<LayoutParams> {
    let c = CANVAS_SIZE as f64;
    let room = c - 2.0 * MARGIN;
    let nf = n as f64;
    let mut side = (room / (nf + 0.15 * (nf - 1.0))).min(MAX_SIDE);
    let mut gap = 0.15 * side;
    if gap < MIN_GAP {
        gap = MIN_GAP;
        side = ((room - (nf - 1.0) * gap) / nf).min(MAX_SIDE);
    }
    let total = nf * side + (nf - 1.0) * gap;
    let start = (c - total) / 2.0 + side / 2.0;
    (0..n)
        .map(|i| place(start + i as f64 * (side + gap), c / 2.0, side, horizontal))
        .collect()
}

fn token_lines(groups: &[(usize, usize)], rng: &mut ChaCha8Rng) -> Vec<LayoutParams> {
    let c = CANVAS_SIZE as f64;
    let room = c - 2.0 * MARGIN;
    let horizontal = rng.random_bool(0.5);
    let gaps: Vec<f64> = groups.iter().map(|_| rng.random_range(MIN_GAP..6.0)).collect();
    let line_gap = rng.random_range(MIN_GAP..10.0);
    let k = groups.len() as f64;
    let mut side = ((room - (k - 1.0) * line_gap) / k).min(MAX_SIDE);
    for (&(s, e), &g) in groups.iter().zip(&gaps) {
        let count = (e - s) as f64;
        side = side.min((room - (count - 1.0) * g) / count);
    }
    let block = k * side + (k - 1.0) * line_gap;
    let first_cross = (c - block) / 2.0 + side / 2.0;
    let mut out = Vec::new();
    for (line, (&(s, e), &g)) in groups.iter().zip(&gaps).enumerate() {
        let count = (e - s) as f64;
        let total = count * side + (count - 1.0) * g;
        let start = (c - total) / 2.0 + side / 2.0;
        let cross = first_cross + line as f64 * (side + line_gap);
        out.extend((0..e - s).map(|i| place(start + i as f64 * (side + g), cross, side, horizontal)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::composition::hard_overlap;
    use crate::composition::place_glyph;
    use crate::raster::{Raster, V_MAX};
    use proptest::prelude::*;

    fn solid_overlap(layout: &LayoutSequence) -> f64 {
        let g = Raster::filled(64, 64, V_MAX);
        let placed: Vec<_> = layout.params.iter().map(|p| place_glyph(&g, p, (128, 128))).collect();
        hard_overlap(&placed, V_MAX)
    }

    #[test]
    fn rule_a_is_collinear_and_evenly_spaced() {
        let l = rule_layout_for(4, &[], Rule::A, 0).unwrap();
        let xs: Vec<f64> = l.params.iter().map(|p| p.x_c).collect();
        assert!(l.params.iter().all(|p| p.y_c == l.params[0].y_c));
        let d = xs[1] - xs[0];
        assert!(xs.windows(2).all(|w| (w[1] - w[0] - d).abs() < 1e-9));
        // Centered.
        assert!(((xs[0] + xs[3]) / 2.0 - 64.0).abs() < 1e-9);
    }

    #[test]
    fn rule_b_is_deterministic_and_uses_both_orientations() {
        let a = rule_layout_for(3, &[], Rule::B, 11).unwrap();
        assert_eq!(a, rule_layout_for(3, &[], Rule::B, 11).unwrap());
        let vertical = (0..20)
            .filter(|&s| {
                let l = rule_layout_for(3, &[], Rule::B, s).unwrap();
                l.params[0].x_c == l.params[1].x_c
            })
            .count();
        assert!(vertical > 0 && vertical < 20);
    }

    #[test]
    fn unknown_rule_name() {
        assert!("d".parse::<Rule>().is_err());
        assert_eq!("c".parse::<Rule>().unwrap(), Rule::C);
    }

    proptest! {
        #[test]
        fn rules_fit_and_never_overlap(n in 1usize..=20, seed in 0u64..1000, cut in 0usize..20) {
            let tokens = if cut > 0 && cut < n { vec![(0, cut), (cut, n)] } else { vec![(0, n)] };
            for rule in [Rule::A, Rule::B, Rule::C] {
                let l = rule_layout_for(n, &tokens, rule, seed).unwrap();
                prop_assert_eq!(l.len(), n);
                for (i, p) in l.params.iter().enumerate() {
                    prop_assert!(p.check_on_canvas(i, (128, 128)).is_ok());
                }
                prop_assert_eq!(solid_overlap(&l), 0.0);
            }
        }

        #[test]
        fn rule_c_keeps_tokens_on_one_line(n in 2usize..=12, cut in 1usize..11, seed in 0u64..1000) {
            prop_assume!(cut < n);
            let l = rule_layout_for(n, &[(0, cut), (cut, n)], Rule::C, seed).unwrap();
            let p = &l.params;
            let lines_along = |cross: fn(&LayoutParams) -> f64| {
                p[..cut].iter().all(|q| (cross(q) - cross(&p[0])).abs() < 1e-9)
                    && p[cut..].iter().all(|q| (cross(q) - cross(&p[cut])).abs() < 1e-9)
                    && (cross(&p[0]) - cross(&p[cut])).abs() > 1.0
            };
            prop_assert!(lines_along(|q| q.y_c) || lines_along(|q| q.x_c));
        }
    }
}
