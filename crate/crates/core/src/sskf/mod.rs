//! Switching state-space inference: filter, smoother, EM and regime decoding.

mod em;
mod filter;
mod model;
mod smoother;

use nalgebra::DMatrix;

pub use em::{e_step, em_fit, em_fit_from, m_step, EmConfig, EmFit};
pub use filter::{skf_filter, FilterOutput};
pub use model::{RegimeParams, RegimeParamsFile, SwitchingSsm};
pub use smoother::{sks_smooth, InferenceResult};

/// Probabilities are floored here before divisions and logarithms.
pub const PROB_FLOOR: f64 = 1e-300;

/// Most probable regime per row; ties go to the lowest index.
pub fn decode_states(probs: &DMatrix<f64>) -> Vec<usize> {
    probs
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decode_picks_argmax_with_low_tie_break() {
        let p = DMatrix::from_row_slice(3, 2, &[0.9, 0.1, 0.2, 0.8, 0.5, 0.5]);
        assert_eq!(decode_states(&p), vec![0, 1, 0]);
        let single = DMatrix::from_element(4, 1, 1.0);
        assert_eq!(decode_states(&single), vec![0; 4]);
    }
}
