use fedmark::rng::rng_for;
use fedmark::sysim::*;
use fedmark::Modality;
use proptest::prelude::*;

#[test]
fn transmission_reference() {
    assert!((transmission_time(75_000_000, 6.0).unwrap() - 100.0).abs() < 1e-9);
    assert!(transmission_time(1, 0.0).is_err());
}

#[test]
fn deployed_band_selection() {
    let bands = default_bands();
    assert_eq!(select_band(Direction::Upload, &bands).unwrap().name, "B3");
    assert_eq!(select_band(Direction::Download, &bands).unwrap().name, "B40");
}

#[test]
fn calibrated_pipeline_rate() {
    let fps = pipeline_throughput(&PipelineSpec::default(), PipelineMode::Pipelined).unwrap();
    assert!((fps - 9.45).abs() <= 0.01, "{fps}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn pipelining_never_loses(c in 1e-3f64..1.0, d in 1e-3f64..1.0, r in 1e-3f64..1.0, a in 1e-3f64..1.0, i in 1e-3f64..1.0) {
        let spec = PipelineSpec {
            collect_s: c,
            preprocess_s: [(Modality::Depth, d), (Modality::Radar, r), (Modality::Audio, a)].into_iter().collect(),
            infer_s: i,
        };
        let p = pipeline_throughput(&spec, PipelineMode::Pipelined).unwrap();
        let s = pipeline_throughput(&spec, PipelineMode::Sequential).unwrap();
        let slowest = c.max(d).max(r).max(a).max(i);
        prop_assert!((p - 1.0 / slowest).abs() <= 1e-12 * p);
        prop_assert!(p >= s);
        prop_assert!(p / s <= 3.0 + 1e-12);
    }
}

#[test]
fn nights_are_faster_than_days() {
    let trace = BandwidthTrace::new(TraceParams::default(), 7.0 * 86_400.0, &mut rng_for(5, &[])).unwrap();
    let rows = trace.rows(7.0 * 24.0);
    let mean = |day: bool| {
        let v: Vec<f64> = rows
            .iter()
            .filter(|(t, _)| {
                let h = t.rem_euclid(86_400.0) / 3600.0;
                (7.0..22.0).contains(&h) == day
            })
            .map(|(_, f)| *f)
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    assert!(mean(false) > mean(true));
    assert!(rows.iter().all(|(_, f)| (0.0..=1.0).contains(f)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn round_time_dominates_every_surviving_node(
        computes in prop::collection::vec(0.0f64..600.0, 1..8),
        payload in 1u64..50_000_000,
        start_h in 0.0f64..24.0,
        seed in any::<u64>(),
    ) {
        let trace = BandwidthTrace::new(TraceParams::default(), 3.0 * 86_400.0, &mut rng_for(seed, &[])).unwrap();
        let nodes: Vec<RoundNode> = computes
            .iter()
            .enumerate()
            .map(|(k, &c)| RoundNode { node_id: k as u32, compute_s: c, upload_bytes: payload })
            .collect();
        let net = NetworkParams::default();
        let out = simulate_round(&nodes, start_h * 3600.0, &trace, &net, payload).unwrap();
        let ideal_up = transmission_time(payload, 21.0).unwrap();
        for t in &out.nodes {
            prop_assert!(!t.dropped);
            let up = t.upload_s.unwrap();
            // the trace factor never exceeds one
            prop_assert!(up >= ideal_up - 1e-9);
            prop_assert!(out.round_time_s >= t.compute_s + up + net.aggregation_s + out.download_s - 1e-6);
        }
        prop_assert!(out.events.windows(2).all(|w| w[0].t_s <= w[1].t_s));
    }

    #[test]
    fn failure_intervals_are_disjoint_per_sensor(seed in any::<u64>(), days in 0.5f64..10.0) {
        let sched = failure_schedule(&SensorFailureProcess::default(), &Modality::ALL, days, &mut rng_for(seed, &[])).unwrap();
        for m in Modality::ALL {
            let iv: Vec<&SensorFailure> = sched.iter().filter(|f| f.sensor == m).collect();
            for f in &iv {
                let len = f.up_s - f.down_s;
                // the last repair may be cut off by the horizon
                let clipped = f.up_s == days * 86_400.0;
                prop_assert!((clipped || len >= 60.0 - 1e-9) && len <= 600.0 + 1e-9 && len >= 0.0);
                prop_assert!(f.down_s < days * 86_400.0);
            }
            prop_assert!(iv.windows(2).all(|w| w[0].up_s <= w[1].down_s));
        }
    }
}
