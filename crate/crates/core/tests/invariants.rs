use lorasim::energy::{simulate_soc, EnergyState, HarvestTrace, HarvesterSpec, SocParams};
use lorasim::freqsel::select::{online_select, rank_by_noise};
use lorasim::freqsel::{LinkId, LinkIntervalMetrics, LinkWeighting, NoiseTerm, Scope, ScoreOptions};
use lorasim::mlmodel::footprint::{footprint_table, ConvStackSpec, Quant};
use lorasim::mlmodel::pca_fit;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn record() -> impl Strategy<Value = LinkIntervalMetrics> {
    (1u32..5, 1u32..5, 0usize..4, 0u32..6, -120.0f64..-70.0, -15.0f64..15.0, -120.0f64..-60.0, 1u32..20)
        .prop_flat_map(|(s, d, f, i, n, snr, rssi, tx)| {
            (0..=tx).prop_map(move |rx| LinkIntervalMetrics {
                link_id: LinkId::new(s, d + 4),
                freq_hz: 902_250_000 + 500_000 * f as u64,
                interval: i,
                noise_p95_dbm: Some(n),
                snr_p5_db: (rx > 0).then_some(snr),
                rssi_p5_dbm: (rx > 0).then_some(rssi),
                tx,
                rx,
            })
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn soc_stays_in_bounds_and_ledger_balances(
        cap in 1.0f64..50.0,
        frac in 0.0f64..=1.0,
        load_mw in 0.0f64..400.0,
        days in prop::collection::vec(0.0f64..8.0, 1..6),
        step in prop::sample::select(vec![0.25, 0.5, 1.0]),
    ) {
        let state = EnergyState::new(cap, cap * frac).unwrap();
        let params = SocParams { step_h: step, horizon_days: days.len() as f64, ..SocParams::default() };
        let run = simulate_soc(&state, load_mw * 1e-3, &HarvesterSpec::default(), &HarvestTrace::Daily(days), &params).unwrap();
        let mut last = -1.0;
        for s in &run.samples {
            prop_assert!(s.t_h > last);
            last = s.t_h;
            prop_assert!((-1e-9..=1.0 + 1e-9).contains(&s.soc), "soc {}", s.soc);
        }
        prop_assert!(run.ledger.residual().abs() <= 1e-9 * (1.0 + run.ledger.harvested_wh + cap));
        for o in &run.outages {
            prop_assert!(o.end_h.is_none_or(|e| e >= o.start_h));
        }
    }

    #[test]
    fn online_scores_ignore_record_order(recs in prop::collection::vec(record(), 1..30), seed in any::<u64>()) {
        let opts = ScoreOptions { noise_term: NoiseTerm::Inverted, link_weighting: LinkWeighting::PerLink, n_intervals: None };
        let Ok(a) = online_select(&recs, Scope::NetworkWide, &opts) else { return Ok(()) };
        let mut shuffled = recs.clone();
        let n = shuffled.len();
        for i in (1..n).rev() {
            shuffled.swap(i, (seed.wrapping_mul(i as u64 + 7) % (i as u64 + 1)) as usize);
        }
        let b = online_select(&shuffled, Scope::NetworkWide, &opts).unwrap();
        prop_assert_eq!(a.ranking.len(), b.ranking.len());
        for ra in &a.ranking {
            let rb = b.ranking.iter().find(|r| r.freq_hz == ra.freq_hz).unwrap();
            prop_assert!((ra.score - rb.score).abs() <= 1e-9 * (1.0 + ra.score.abs()));
        }
        prop_assert_eq!(a.ranking[0].freq_hz, a.freq_hz);
    }

    #[test]
    fn noise_ranking_is_sorted_and_normalized(recs in prop::collection::vec(record(), 1..30)) {
        let r = rank_by_noise(&recs, Scope::NetworkWide, None);
        prop_assert!(r.windows(2).all(|w| w[0].1 <= w[1].1));
        prop_assert!(r.iter().all(|&(_, v)| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn pca_axes_are_orthonormal(rows in 6usize..20, cols in 2usize..6, seed in any::<u32>()) {
        let mut s = u64::from(seed) | 1;
        let x = DMatrix::from_fn(rows, cols, |_, _| {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s % 10_000) as f64 / 100.0
        });
        let p = pca_fit(&x, cols.min(rows - 1)).unwrap();
        prop_assert!(p.orthonormality_error() < 1e-8);
        prop_assert!(p.explained_variance.iter().all(|&v| v >= -1e-9));
    }

    #[test]
    fn int8_never_needs_more_memory(h in 16u32..128, w in 16u32..128, f0 in 1u32..64) {
        let spec = ConvStackSpec { name: "p".into(), input_hw: (h, w), block_filters: [f0, 2 * f0, 4 * f0, 8 * f0], ..ConvStackSpec::l3() };
        let a = footprint_table(&spec, Quant::F32).unwrap();
        let b = footprint_table(&spec, Quant::I8).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!((x.height, x.width, x.channels), (y.height, y.width, y.channels));
            prop_assert!(y.kib <= x.kib);
        }
    }
}
