//! Per-(agent, scenario) evaluation metrics and CSV emission.

use serde::Serialize;

use super::env::EpisodeOutcome;

/// Aggregated metrics over a batch of evaluation episodes.
///
/// SR and PLR are complementary by construction; mean delay is defined as
/// mean successful-flow hops times the average per-hop propagation delay.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsRecord {
    pub agent: String,
    pub scenario: String,
    pub episodes: usize,
    pub sr: f64,
    pub plr: f64,
    pub cv_mean: f64,
    pub delay_ms_mean: f64,
    pub hops_mean: f64,
}

impl MetricsRecord {
    pub fn aggregate(
        agent: &str,
        scenario: &str,
        outcomes: &[EpisodeOutcome],
        per_hop_delay_ms: f64,
    ) -> Self {
        let episodes = outcomes.len();
        let requests: usize = outcomes.iter().map(|o| o.requests).sum();
        let successes: usize = outcomes.iter().map(|o| o.successes).sum();
        let success_hops: usize = outcomes.iter().map(|o| o.success_hops).sum();
        let sr = if requests == 0 {
            1.0
        } else {
            successes as f64 / requests as f64
        };
        let plr = 1.0 - sr;
        let cv_mean = if episodes == 0 {
            0.0
        } else {
            outcomes.iter().map(|o| o.mean_cv).sum::<f64>() / episodes as f64
        };
        let hops_mean = if successes == 0 {
            0.0
        } else {
            success_hops as f64 / successes as f64
        };
        MetricsRecord {
            agent: agent.to_string(),
            scenario: scenario.to_string(),
            episodes,
            sr,
            plr,
            cv_mean,
            delay_ms_mean: hops_mean * per_hop_delay_ms,
            hops_mean,
        }
    }
}

/// Results CSV: one row per (agent, scenario).
pub fn write_results_csv<W: std::io::Write>(mut w: W, records: &[MetricsRecord]) -> std::io::Result<()> {
    writeln!(w, "agent,scenario,episodes,sr,plr,cv_mean,delay_ms_mean,hops_mean")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.agent, r.scenario, r.episodes, r.sr, r.plr, r.cv_mean, r.delay_ms_mean, r.hops_mean
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(requests: usize, successes: usize, hops: usize, cv: f64) -> EpisodeOutcome {
        EpisodeOutcome {
            requests,
            successes,
            success_hops: hops,
            mean_cv: cv,
            flow_rewards: Vec::new(),
            trace_hash: 0,
            fault_events: Vec::new(),
            flow_log: Vec::new(),
        }
    }

    #[test]
    fn sr_plr_complementary_and_delay_identity() {
        let outcomes = vec![outcome(10, 7, 21, 0.5), outcome(10, 9, 18, 0.3)];
        let r = MetricsRecord::aggregate("dtar", "normal", &outcomes, 6.81);
        assert!((r.sr + r.plr - 1.0).abs() < 1e-15);
        assert!((r.sr - 16.0 / 20.0).abs() < 1e-12);
        assert!((r.hops_mean - 39.0 / 16.0).abs() < 1e-12);
        assert_eq!(r.delay_ms_mean, r.hops_mean * 6.81);
        assert!((r.cv_mean - 0.4).abs() < 1e-12);
    }

    #[test]
    fn csv_shape() {
        let outcomes = vec![outcome(4, 4, 8, 0.1)];
        let r = MetricsRecord::aggregate("dijkstra", "fault", &outcomes, 10.0);
        let mut buf = Vec::new();
        write_results_csv(&mut buf, &[r]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "agent,scenario,episodes,sr,plr,cv_mean,delay_ms_mean,hops_mean"
        );
        assert!(lines.next().unwrap().starts_with("dijkstra,fault,1,1,0,"));
    }
}
