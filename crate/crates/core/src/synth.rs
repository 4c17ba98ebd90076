//! Small synthetic scenarios for tests, benchmarks and oracles.

use rand::Rng;

use crate::netmodel::{
    Bus, BusId, BusKind, Device, DeviceParams, EssParams, Horizon, LoadParams, Line, MtParams,
    PolygonPairing, ResParams, Scenario,
};

pub fn horizon(steps: usize, lookahead: usize) -> Horizon {
    Horizon {
        steps,
        dt: 1.0,
        v_min: 0.95,
        v_max: 1.05,
        epsilon: 0.02,
        mpc_lookahead: lookahead.min(steps),
        cpo_lookahead: lookahead,
        polygon_sides: 9,
        polygon_pairing: PolygonPairing::Independent,
        rng_seed: 7,
    }
}

pub fn default_device(kind: BusKind, series_len: usize) -> DeviceParams {
    match kind {
        BusKind::Load => DeviceParams::Load(LoadParams {
            p_demand: vec![0.05; series_len],
            q_demand: vec![0.03; series_len],
            priority: 1.0,
        }),
        BusKind::Microturbine => DeviceParams::Microturbine(MtParams {
            p_min: 0.0,
            p_max: 0.3,
            ramp_up_max: 0.15,
            ramp_down_min: -0.1,
            tau: 0.8,
            fuel_init: 2.0,
            cost_coeff: 0.1,
            q_max: 0.3,
        }),
        BusKind::Renewable => DeviceParams::Renewable(ResParams {
            forecast_mean: 0.07,
            forecast_sd: 0.01,
            q_max: 0.1,
        }),
        BusKind::Storage => DeviceParams::Storage(EssParams {
            p_ch_max: 0.2,
            p_dis_max: 0.15,
            soc_min: 1.0,
            soc_max: 5.0,
            soc_init: 2.0,
            eta_ch: 0.8,
            eta_dis: 0.8,
            q_max: 0.2,
        }),
    }
}

/// A radial network where bus `i > 0` hangs off `parents[i - 1]`, bus 0 is
/// the slack. Every line gets the given impedance.
pub fn radial(
    parents: &[usize],
    kinds: &[BusKind],
    impedances: &[(f64, f64)],
    horizon: Horizon,
) -> Scenario {
    assert_eq!(parents.len() + 1, kinds.len());
    assert_eq!(parents.len(), impedances.len());
    let series_len = horizon.steps + horizon.mpc_lookahead.max(horizon.cpo_lookahead);
    let buses: Vec<Bus> = kinds
        .iter()
        .enumerate()
        .map(|(i, &kind)| Bus { id: BusId(i as u32 + 1), kind })
        .collect();
    let lines = parents
        .iter()
        .zip(impedances)
        .enumerate()
        .map(|(i, (&p, &(r, x)))| Line {
            from: BusId(p as u32 + 1),
            to: BusId(i as u32 + 2),
            r,
            x,
            l_max: 1.0,
        })
        .collect();
    let devices = buses
        .iter()
        .map(|b| Device { bus: b.id, params: default_device(b.kind, series_len) })
        .collect();
    Scenario::new("synthetic".into(), BusId(1), buses, lines, devices, horizon)
        .expect("synthetic scenario is valid")
}

/// A chain feeder: microturbine at the slack bus, loads elsewhere.
pub fn chain(n: usize, r: f64, x: f64) -> Scenario {
    let parents: Vec<usize> = (0..n - 1).collect();
    let mut kinds = vec![BusKind::Load; n];
    kinds[0] = BusKind::Microturbine;
    radial(&parents, &kinds, &vec![(r, x); n - 1], horizon(1, 0))
}

/// Random tree with `n` buses, a microturbine at the slack bus, exactly one
/// load bus, and the remaining buses drawn among generation and storage.
pub fn random_single_load<R: Rng + ?Sized>(rng: &mut R, n: usize, steps: usize) -> Scenario {
    assert!(n >= 2);
    let parents: Vec<usize> = (1..n).map(|i| rng.gen_range(0..i)).collect();
    let mut kinds = vec![BusKind::Microturbine; n];
    let load = rng.gen_range(1..n);
    for (i, kind) in kinds.iter_mut().enumerate().skip(1) {
        *kind = if i == load {
            BusKind::Load
        } else {
            match rng.gen_range(0..3) {
                0 => BusKind::Microturbine,
                1 => BusKind::Renewable,
                _ => BusKind::Storage,
            }
        };
    }
    let imp: Vec<(f64, f64)> = (1..n)
        .map(|_| (rng.gen_range(0.001..0.02), rng.gen_range(0.001..0.02)))
        .collect();
    radial(&parents, &kinds, &imp, horizon(steps.max(1), 0))
}
