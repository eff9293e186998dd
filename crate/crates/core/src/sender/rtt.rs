//! Smoothed round-trip time estimation (Jacobson/Karels, RFC 6298 gains).

/// Smoothed RTT and its mean deviation, in virtual milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RttEstimator {
    srtt: Option<f64>,
    rttvar: f64,
}

impl RttEstimator {
    const ALPHA: f64 = 1.0 / 8.0;
    const BETA: f64 = 1.0 / 4.0;
    const K: f64 = 4.0;

    pub fn srtt(&self) -> Option<f64> {
        self.srtt
    }

    pub fn rttvar(&self) -> f64 {
        self.rttvar
    }

    /// Folds in a new sample. The caller guarantees `sample > 0`.
    pub fn sample(&mut self, sample: f64) {
        match self.srtt {
            None => {
                self.srtt = Some(sample);
                self.rttvar = sample / 2.0;
            }
            Some(srtt) => {
                // rttvar uses the previous srtt
                self.rttvar = (1.0 - Self::BETA) * self.rttvar + Self::BETA * (srtt - sample).abs();
                self.srtt = Some((1.0 - Self::ALPHA) * srtt + Self::ALPHA * sample);
            }
        }
    }

    /// Unclamped timeout, `None` until the first sample.
    pub fn raw_rto(&self) -> Option<f64> {
        self.srtt.map(|srtt| srtt + Self::K * self.rttvar)
    }
}
