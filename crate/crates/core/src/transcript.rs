//! Per-oracle records and session summaries shared by both protocols.

/// Statistics of one draft → upload → verify → update round.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OracleRecord {
    /// Tokens appended to the prefix (accepted drafts plus one).
    pub n_generated: usize,
    /// Verification attempts: draft positions checked, or tree nodes visited.
    pub attempts: usize,
    pub accepts: usize,
    /// Sum over attempts of the exact acceptance probability.
    pub analytic_accept_sum: f64,
    /// Sum over attempts of the truncated mass `σ` of the draft distribution.
    pub discarded_mass_sum: f64,
    /// (value, id) pairs sent uplink.
    pub uplink_entries: usize,
    pub payload_bits: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    pub oracles: Vec<OracleRecord>,
    /// Generated tokens, prefix excluded.
    pub generated: Vec<usize>,
}

/// Pooled counts over any number of transcripts.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SessionTotals {
    pub oracles: u64,
    pub tokens: u64,
    pub tokens_sq: f64,
    pub attempts: u64,
    pub accepts: u64,
    pub analytic_accept_sum: f64,
    pub discarded_mass_sum: f64,
    pub payload_bits: u64,
}

impl SessionTotals {
    pub fn add(&mut self, t: &Transcript) {
        for r in &t.oracles {
            self.oracles += 1;
            self.tokens += r.n_generated as u64;
            self.tokens_sq += (r.n_generated * r.n_generated) as f64;
            self.attempts += r.attempts as u64;
            self.accepts += r.accepts as u64;
            self.analytic_accept_sum += r.analytic_accept_sum;
            self.discarded_mass_sum += r.discarded_mass_sum;
            self.payload_bits += r.payload_bits;
        }
    }

    pub fn merge(&mut self, other: &SessionTotals) {
        self.oracles += other.oracles;
        self.tokens += other.tokens;
        self.tokens_sq += other.tokens_sq;
        self.attempts += other.attempts;
        self.accepts += other.accepts;
        self.analytic_accept_sum += other.analytic_accept_sum;
        self.discarded_mass_sum += other.discarded_mass_sum;
        self.payload_bits += other.payload_bits;
    }

    /// Measured acceptance frequency.
    pub fn acceptance_rate(&self) -> f64 {
        ratio(self.accepts as f64, self.attempts)
    }

    /// Binomial standard error of [`Self::acceptance_rate`].
    pub fn acceptance_stderr(&self) -> f64 {
        let a = self.acceptance_rate();
        if self.attempts == 0 {
            return 0.0;
        }
        (a * (1.0 - a) / self.attempts as f64).sqrt()
    }

    /// Mean exact acceptance probability over the attempts actually made.
    pub fn analytic_acceptance(&self) -> f64 {
        ratio(self.analytic_accept_sum, self.attempts)
    }

    pub fn mean_discarded_mass(&self) -> f64 {
        ratio(self.discarded_mass_sum, self.attempts)
    }

    pub fn mean_tokens_per_oracle(&self) -> f64 {
        ratio(self.tokens as f64, self.oracles)
    }

    pub fn tokens_per_oracle_stderr(&self) -> f64 {
        if self.oracles < 2 {
            return 0.0;
        }
        let n = self.oracles as f64;
        let mean = self.mean_tokens_per_oracle();
        let var = (self.tokens_sq / n - mean * mean).max(0.0) * n / (n - 1.0);
        (var / n).sqrt()
    }

    pub fn mean_payload_bits(&self) -> f64 {
        ratio(self.payload_bits as f64, self.oracles)
    }
}

fn ratio(num: f64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num / den as f64
    }
}

impl Transcript {
    pub fn totals(&self) -> SessionTotals {
        let mut t = SessionTotals::default();
        t.add(self);
        t
    }
}
