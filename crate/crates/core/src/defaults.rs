//! Default experiment constants.

/// Monte-Carlo dropout forward passes per instance.
pub const MC_RUNS: usize = 10;

/// Equal-width bins used by the ECE loss.
pub const ECE_BINS: usize = 10;

/// Candidate weights for the confident-error regularizer.
pub const CER_WEIGHTS: [f64; 4] = [0.01, 0.05, 0.1, 0.5];

/// Candidate rejection rewards for Gambler's loss.
///
/// `1.0` is kept as a preset even though [`crate::losses::gambler_loss`]
/// only accepts rewards strictly above one.
pub const GAMBLER_REWARDS: [f64; 4] = [1.0, 5.0, 6.5, 14.0];

/// Upper bounds of the label-frequency buckets.
pub const BUCKET_BOUNDARIES: [f64; 4] = [0.01, 0.10, 0.20, 0.40];

/// Hard decision threshold; probabilities at or above it predict positive.
pub const DECISION_THRESHOLD: f64 = 0.5;

/// Renders a float grid as `{a, b, c}` keeping one decimal on integers.
pub fn format_grid(values: &[f64]) -> String {
    let items: Vec<String> = values.iter().map(|v| format!("{v:?}")).collect();
    format!("{{{}}}", items.join(", "))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids_render_verbatim() {
        assert_eq!(format_grid(&CER_WEIGHTS), "{0.01, 0.05, 0.1, 0.5}");
        assert_eq!(format_grid(&GAMBLER_REWARDS), "{1.0, 5.0, 6.5, 14.0}");
    }
}
