//! Post-processing over run outputs: lane aggregates, headways, K-S tests,
//! fuel distributions, communication and network indicators.

use std::collections::BTreeMap;
use std::path::Path;

use serde::ser::SerializeStruct;
use serde::{Deserialize, Serialize, Serializer};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::energy::{fuel_rate, VtMicroCoefficients};
use crate::engine::{CommRecord, DetectorRecord, KpiRecord, RawResults};
use crate::io::{write_csv, IoError};
use crate::ms_to_kmh;
use crate::scenario::VehicleClass;

/// Aggregation interval, s.
pub const BIN_SECONDS: f64 = 300.0;

/// Headways above this are not car following, s.
pub const HEADWAY_CUTOFF: f64 = 10.0;

/// Histogram bin width for the mode count, s.
pub const HIST_BIN: f64 = 0.2;

/// Histogram range for the mode count, s.
pub const HIST_MAX: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("empty sample")]
    EmptySample,
}

/// Counts and speeds at one detector lane over one 5-minute interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneAggregate {
    pub detector: usize,
    pub lane: u8,
    pub interval_start: f64,
    pub count: u64,
    pub flow_vph: f64,
    /// Harmonic mean of crossing speeds, km/h.
    pub speed_kmh: Option<f64>,
    pub arithmetic_speed_kmh: Option<f64>,
    pub hv: u64,
    pub cav: u64,
}

/// Bins detector crossings into 5-minute intervals starting at `origin`.
pub fn lane_aggregates(records: &[DetectorRecord], origin: f64) -> Vec<LaneAggregate> {
    let mut bins: BTreeMap<(usize, u8, i64), (u64, f64, f64, u64, u64)> = BTreeMap::new();
    for r in records {
        let k = ((r.time - origin) / BIN_SECONDS).floor() as i64;
        let e = bins.entry((r.detector, r.lane, k)).or_default();
        e.0 += 1;
        let kmh = ms_to_kmh(r.speed);
        e.1 += 1.0 / kmh.max(1e-6);
        e.2 += kmh;
        match r.class {
            VehicleClass::Hv => e.3 += 1,
            VehicleClass::Cav => e.4 += 1,
        }
    }
    bins.into_iter()
        .map(|((detector, lane, k), (count, inv, sum, hv, cav))| LaneAggregate {
            detector,
            lane,
            interval_start: origin + k as f64 * BIN_SECONDS,
            count,
            flow_vph: count as f64 * 3600.0 / BIN_SECONDS,
            speed_kmh: (count > 0).then(|| count as f64 / inv),
            arithmetic_speed_kmh: (count > 0).then(|| sum / count as f64),
            hv,
            cav,
        })
        .collect()
}

/// Which crossings a headway series is drawn from. Empty fields match all.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Selection {
    pub detector: Option<usize>,
    pub lane: Option<u8>,
    pub class: Option<VehicleClass>,
}

impl Selection {
    pub fn lane(lane: u8) -> Self {
        Self { lane: Some(lane), ..Self::default() }
    }

    pub fn class(class: VehicleClass) -> Self {
        Self { class: Some(class), ..Self::default() }
    }

    fn matches(&self, r: &DetectorRecord) -> bool {
        self.detector.is_none_or(|d| d == r.detector)
            && self.lane.is_none_or(|l| l == r.lane)
            && self.class.is_none_or(|c| c == r.class)
    }
}

/// Time gaps between successive crossings of the same detector lane. The
/// class filter applies to the following vehicle; the first crossing of each
/// detector lane and gaps above [`HEADWAY_CUTOFF`] are dropped.
pub fn headway_series(records: &[DetectorRecord], sel: Selection) -> Vec<f64> {
    let mut groups: BTreeMap<(usize, u8), Vec<&DetectorRecord>> = BTreeMap::new();
    for r in records {
        if sel.detector.is_none_or(|d| d == r.detector) && sel.lane.is_none_or(|l| l == r.lane) {
            groups.entry((r.detector, r.lane)).or_default().push(r);
        }
    }
    let mut out = Vec::new();
    for mut g in groups.into_values() {
        g.sort_by(|a, b| a.time.total_cmp(&b.time));
        for w in g.windows(2) {
            let h = w[1].time - w[0].time;
            if sel.matches(w[1]) && h <= HEADWAY_CUTOFF {
                out.push(h);
            }
        }
    }
    out
}

pub fn mean(xs: &[f64]) -> Result<f64, MetricsError> {
    if xs.is_empty() {
        return Err(MetricsError::EmptySample);
    }
    Ok(xs.iter().sum::<f64>() / xs.len() as f64)
}

pub fn mean_headway(records: &[DetectorRecord], sel: Selection) -> Result<f64, MetricsError> {
    mean(&headway_series(records, sel))
}

/// Right-continuous empirical distribution function.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn new(samples: &[f64]) -> Result<Self, MetricsError> {
        if samples.is_empty() {
            return Err(MetricsError::EmptySample);
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self { sorted })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn samples(&self) -> &[f64] {
        &self.sorted
    }

    /// Fraction of samples `<= x`.
    pub fn eval(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&s| s <= x) as f64 / self.sorted.len() as f64
    }

    /// Smallest sample `s` with `F(s) >= p`.
    pub fn quantile(&self, p: f64) -> f64 {
        let n = self.sorted.len();
        let k = ((p * n as f64).ceil() as usize).clamp(1, n);
        self.sorted[k - 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub d: f64,
    pub p_value: f64,
}

impl KsResult {
    /// Whether the two samples differ at the 5% level.
    pub fn rejects(&self) -> bool {
        self.p_value < 0.05
    }
}

/// Kolmogorov survival function `Q(λ) = P(K > λ)`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        let pi2 = std::f64::consts::PI * std::f64::consts::PI;
        let y = (-pi2 / (8.0 * lambda * lambda)).exp();
        let s: f64 = (0..8).map(|k| y.powi((2 * k + 1) * (2 * k + 1))).sum();
        (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s).clamp(0.0, 1.0)
    } else {
        let s: f64 = (1..=100)
            .map(|k| {
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * (k * k) as f64 * lambda * lambda).exp()
            })
            .sum();
        (2.0 * s).clamp(0.0, 1.0)
    }
}

/// Two-sample Kolmogorov-Smirnov statistic with the asymptotic p-value at
/// effective size `n_a n_b / (n_a + n_b)`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult, MetricsError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::EmptySample);
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < na && j < nb {
        let x = a[i].min(b[j]);
        while i < na && a[i] <= x {
            i += 1;
        }
        while j < nb && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    let ne = (na * nb) as f64 / (na + nb) as f64;
    Ok(KsResult { d, p_value: kolmogorov_q(ne.sqrt() * d) })
}

/// Headway histogram with [`HIST_BIN`] bins over `[0, HIST_MAX)`.
pub fn headway_histogram(headways: &[f64]) -> Vec<u64> {
    let n = (HIST_MAX / HIST_BIN).round() as usize;
    let mut h = vec![0; n];
    for &x in headways {
        if (0.0..HIST_MAX).contains(&x) {
            h[((x / HIST_BIN) as usize).min(n - 1)] += 1;
        }
    }
    h
}

/// Number of distinct modes: local maxima holding at least 5% of the
/// largest bin, where two neighbouring maxima only count separately if the
/// lowest bin between them is at least 10% below both.
pub fn count_modes(hist: &[u64]) -> usize {
    let Some(&top) = hist.iter().max() else { return 0 };
    if top == 0 {
        return 0;
    }
    let floor = 0.05 * top as f64;
    let n = hist.len();
    let mut peaks = Vec::new();
    let mut i = 0;
    while i < n {
        // plateau [i, j)
        let mut j = i + 1;
        while j < n && hist[j] == hist[i] {
            j += 1;
        }
        let left_lower = i == 0 || hist[i - 1] < hist[i];
        let right_lower = j == n || hist[j] < hist[i];
        if left_lower && right_lower && hist[i] as f64 >= floor {
            peaks.push((i, hist[i]));
        }
        i = j;
    }
    let mut modes: Vec<(usize, u64)> = Vec::new();
    for (idx, h) in peaks {
        match modes.last_mut() {
            None => modes.push((idx, h)),
            Some(last) => {
                let trough = *hist[last.0..=idx].iter().min().expect("non-empty range") as f64;
                if trough <= 0.9 * last.1.min(h) as f64 {
                    modes.push((idx, h));
                } else if h > last.1 {
                    *last = (idx, h);
                }
            }
        }
    }
    modes.len()
}

/// Bin index with the most headways, and its lower edge in s.
pub fn modal_bin(hist: &[u64]) -> Option<(usize, f64)> {
    let (k, &c) = hist.iter().enumerate().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))?;
    (c > 0).then(|| (k, k as f64 * HIST_BIN))
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && xs[idx[j]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j - 1) as f64 / 2.0 + 1.0;
        for &k in &idx[i..j] {
            r[k] = avg;
        }
        i = j;
    }
    r
}

/// Spearman rank correlation with a two-sided p-value from the t
/// approximation. `None` for fewer than three pairs or constant input.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len();
    if n < 3 || n != y.len() {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let mx = rx.iter().sum::<f64>() / n as f64;
    let my = ry.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for k in 0..n {
        let (dx, dy) = (rx[k] - mx, ry[k] - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    let rho = sxy / (sxx * syy).sqrt();
    let df = (n - 2) as f64;
    let p = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("valid t distribution");
        2.0 * (1.0 - dist.cdf(t.abs()))
    };
    Some((rho, p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedFlowPoint {
    pub detector: usize,
    pub lane: u8,
    pub interval_start: f64,
    pub flow_vph: f64,
    pub speed_kmh: f64,
}

/// One point per nonempty detector-lane interval.
pub fn speed_flow_points(aggs: &[LaneAggregate]) -> Vec<SpeedFlowPoint> {
    aggs.iter()
        .filter_map(|a| {
            a.speed_kmh.map(|speed_kmh| SpeedFlowPoint {
                detector: a.detector,
                lane: a.lane,
                interval_start: a.interval_start,
                flow_vph: a.flow_vph,
                speed_kmh,
            })
        })
        .collect()
}

/// Instantaneous fuel rates (ml/s) of the selected crossings.
pub fn fuel_samples(records: &[DetectorRecord], sel: Selection, coeffs: &VtMicroCoefficients) -> Vec<f64> {
    records.iter().filter(|r| sel.matches(r)).map(|r| fuel_rate(r.speed, r.accel, coeffs)).collect()
}

/// The nine deciles 10%..90% of a sample.
pub fn deciles(samples: &[f64]) -> Result<[f64; 9], MetricsError> {
    let cdf = EmpiricalCdf::new(samples)?;
    Ok(std::array::from_fn(|k| cdf.quantile((k + 1) as f64 / 10.0)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkKpi {
    pub interval_start: f64,
    pub interval_end: f64,
    pub throughput_vph: f64,
    /// Delay per vehicle in the network or exited, s.
    pub avg_delay_s: f64,
    /// Distance-weighted mean speed, km/h.
    pub avg_speed_kmh: f64,
}

fn kpi_of(start: f64, end: f64, exited: u64, present: u64, vkt: f64, vht: f64, delay: f64) -> NetworkKpi {
    let hours = (end - start) / 3600.0;
    let denom = (present + exited) as f64;
    NetworkKpi {
        interval_start: start,
        interval_end: end,
        throughput_vph: if hours > 0.0 { exited as f64 / hours } else { 0.0 },
        avg_delay_s: if denom > 0.0 { delay / denom } else { 0.0 },
        avg_speed_kmh: if vht > 0.0 { vkt / vht } else { 0.0 },
    }
}

/// Per-interval indicators followed by one whole-run row.
pub fn network_kpis(kpi: &[KpiRecord]) -> Vec<NetworkKpi> {
    let mut out: Vec<NetworkKpi> = kpi
        .iter()
        .map(|k| kpi_of(k.interval_start, k.interval_end, k.exited, k.present, k.vkt, k.vht, k.delay))
        .collect();
    if let (Some(first), Some(last)) = (kpi.first(), kpi.last()) {
        out.push(kpi_of(
            first.interval_start,
            last.interval_end,
            kpi.iter().map(|k| k.exited).sum(),
            last.present,
            kpi.iter().map(|k| k.vkt).sum(),
            kpi.iter().map(|k| k.vht).sum(),
            kpi.iter().map(|k| k.delay).sum(),
        ));
    }
    out
}

/// Whole-run network indicators.
pub fn run_kpi(kpi: &[KpiRecord]) -> Option<NetworkKpi> {
    if kpi.is_empty() {
        return None;
    }
    network_kpis(kpi).pop()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommKpi {
    pub updates: usize,
    pub max_density: f64,
    pub mean_density: f64,
    /// Mean single-attempt reception probability over leader-follower pairs.
    pub mean_reception: Option<f64>,
    /// Fraction of pairs with at least one delivered attempt.
    pub success_rate: Option<f64>,
    pub xi_cap_hits: u64,
    pub p_clamp_hits: u64,
}

/// Aggregates over all updates of a run; `None` without CAVs.
pub fn comm_kpis(comm: &[CommRecord]) -> Option<CommKpi> {
    if comm.is_empty() {
        return None;
    }
    let n = comm.len();
    let pairs: usize = comm.iter().map(|c| c.pairs).sum();
    let weighted = |f: fn(&CommRecord) -> Option<f64>| {
        (pairs > 0).then(|| comm.iter().filter_map(|c| f(c).map(|v| v * c.pairs as f64)).sum::<f64>() / pairs as f64)
    };
    Some(CommKpi {
        updates: n,
        max_density: comm.iter().map(|c| c.max_density).fold(0.0, f64::max),
        mean_density: comm.iter().map(|c| c.mean_density).sum::<f64>() / n as f64,
        mean_reception: weighted(|c| c.mean_reception),
        success_rate: weighted(|c| c.success_rate),
        xi_cap_hits: comm.iter().map(|c| c.xi_cap_hits).sum(),
        p_clamp_hits: comm.iter().map(|c| c.p_clamp_hits).sum(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeadwayRow {
    pub seed: u64,
    pub lane: u8,
    pub class: VehicleClass,
    pub headway: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CdfRow {
    pub lane: u8,
    pub headway: f64,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KsRow {
    pub lane_a: u8,
    pub lane_b: u8,
    pub d: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeedFlowRow {
    pub seed: u64,
    pub point: SpeedFlowPoint,
}

impl Serialize for SpeedFlowRow {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let p = &self.point;
        let mut st = s.serialize_struct("SpeedFlowRow", 6)?;
        st.serialize_field("seed", &self.seed)?;
        st.serialize_field("detector", &p.detector)?;
        st.serialize_field("lane", &p.lane)?;
        st.serialize_field("interval_start", &p.interval_start)?;
        st.serialize_field("flow_vph", &p.flow_vph)?;
        st.serialize_field("speed_kmh", &p.speed_kmh)?;
        st.end()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FuelRow {
    pub group: String,
    pub decile: u8,
    pub fuel_ml_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommKpiRow {
    pub seed: u64,
    pub kpi: CommKpi,
}

impl Serialize for CommKpiRow {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let k = &self.kpi;
        let mut st = s.serialize_struct("CommKpiRow", 8)?;
        st.serialize_field("seed", &self.seed)?;
        st.serialize_field("updates", &k.updates)?;
        st.serialize_field("max_density", &k.max_density)?;
        st.serialize_field("mean_density", &k.mean_density)?;
        st.serialize_field("mean_reception", &k.mean_reception)?;
        st.serialize_field("success_rate", &k.success_rate)?;
        st.serialize_field("xi_cap_hits", &k.xi_cap_hits)?;
        st.serialize_field("p_clamp_hits", &k.p_clamp_hits)?;
        st.end()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkKpiRow {
    pub seed: u64,
    /// `interval` or `run`.
    pub scope: &'static str,
    pub kpi: NetworkKpi,
}

impl Serialize for NetworkKpiRow {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let k = &self.kpi;
        let mut st = s.serialize_struct("NetworkKpiRow", 7)?;
        st.serialize_field("seed", &self.seed)?;
        st.serialize_field("scope", self.scope)?;
        st.serialize_field("interval_start", &k.interval_start)?;
        st.serialize_field("interval_end", &k.interval_end)?;
        st.serialize_field("throughput_vph", &k.throughput_vph)?;
        st.serialize_field("avg_delay_s", &k.avg_delay_s)?;
        st.serialize_field("avg_speed_kmh", &k.avg_speed_kmh)?;
        st.end()
    }
}

/// Analysis tables of one (policy, MPR) cell pooled over its replications.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CellAnalysis {
    pub headways: Vec<HeadwayRow>,
    pub cdf: Vec<CdfRow>,
    pub ks: Vec<KsRow>,
    pub speedflow: Vec<SpeedFlowRow>,
    pub fuel: Vec<FuelRow>,
    pub comm: Vec<CommKpiRow>,
    pub network: Vec<NetworkKpiRow>,
}

/// Builds every analysis table for the replications of one cell.
/// `origin` is the start of the measured window.
pub fn analyze_cell(runs: &[RawResults], lane_count: u8, origin: f64, fuel: &VtMicroCoefficients) -> CellAnalysis {
    let mut out = CellAnalysis::default();
    let mut by_lane: BTreeMap<u8, Vec<f64>> = BTreeMap::new();
    for r in runs {
        let seed = r.summary.seed;
        for lane in 1..=lane_count {
            for class in [VehicleClass::Hv, VehicleClass::Cav] {
                let sel = Selection { lane: Some(lane), class: Some(class), ..Selection::default() };
                for h in headway_series(&r.detectors, sel) {
                    out.headways.push(HeadwayRow { seed, lane, class, headway: h });
                    by_lane.entry(lane).or_default().push(h);
                }
            }
        }
        for point in speed_flow_points(&lane_aggregates(&r.detectors, origin)) {
            out.speedflow.push(SpeedFlowRow { seed, point });
        }
        if let Some(kpi) = comm_kpis(&r.comm) {
            out.comm.push(CommKpiRow { seed, kpi });
        }
        let rows = network_kpis(&r.kpi);
        let last = rows.len().saturating_sub(1);
        for (k, kpi) in rows.into_iter().enumerate() {
            out.network.push(NetworkKpiRow { seed, scope: if k == last { "run" } else { "interval" }, kpi });
        }
    }
    let grid: Vec<f64> = (0..=100).map(|k| k as f64 * 0.1).collect();
    for (&lane, hs) in &by_lane {
        if let Ok(cdf) = EmpiricalCdf::new(hs) {
            for &x in &grid {
                out.cdf.push(CdfRow { lane, headway: x, probability: cdf.eval(x) });
            }
        }
    }
    for (&a, ha) in &by_lane {
        for (&b, hb) in &by_lane {
            if let Ok(ks) = ks_two_sample(ha, hb) {
                out.ks.push(KsRow { lane_a: a, lane_b: b, d: ks.d, p_value: ks.p_value });
            }
        }
    }
    let all: Vec<&DetectorRecord> = runs.iter().flat_map(|r| &r.detectors).collect();
    let mut groups: Vec<(String, Selection)> = (1..=lane_count).map(|l| (format!("lane{l}"), Selection::lane(l))).collect();
    groups.push(("HV".into(), Selection::class(VehicleClass::Hv)));
    groups.push(("CAV".into(), Selection::class(VehicleClass::Cav)));
    for (name, sel) in groups {
        let samples: Vec<f64> = all.iter().filter(|r| sel.matches(r)).map(|r| fuel_rate(r.speed, r.accel, fuel)).collect();
        if let Ok(ds) = deciles(&samples) {
            for (k, v) in ds.into_iter().enumerate() {
                out.fuel.push(FuelRow { group: name.clone(), decile: (k + 1) as u8 * 10, fuel_ml_s: v });
            }
        }
    }
    out
}

pub const HEADWAYS_CSV: &str = "headways.csv";
pub const CDF_CSV: &str = "cdf.csv";
pub const KS_MATRIX_CSV: &str = "ks_matrix.csv";
pub const SPEEDFLOW_CSV: &str = "speedflow.csv";
pub const FUEL_CDF_CSV: &str = "fuel_cdf.csv";
pub const COMM_KPI_CSV: &str = "comm_kpi.csv";
pub const NETWORK_KPI_CSV: &str = "network_kpi.csv";

pub fn write_cell_analysis(dir: &Path, a: &CellAnalysis) -> Result<(), IoError> {
    std::fs::create_dir_all(dir)?;
    write_csv(&dir.join(HEADWAYS_CSV), &a.headways)?;
    write_csv(&dir.join(CDF_CSV), &a.cdf)?;
    write_csv(&dir.join(KS_MATRIX_CSV), &a.ks)?;
    write_csv(&dir.join(SPEEDFLOW_CSV), &a.speedflow)?;
    write_csv(&dir.join(FUEL_CDF_CSV), &a.fuel)?;
    write_csv(&dir.join(COMM_KPI_CSV), &a.comm)?;
    write_csv(&dir.join(NETWORK_KPI_CSV), &a.network)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{Policy, Scenario};

    #[test]
    fn cell_analysis_writes_every_table() {
        let mut s = Scenario::default().with(Policy::Cav1, 0.5, 2);
        s.config.warmup_duration = 30.0;
        s.config.measured_duration = 300.0;
        let scn = s.validate().unwrap();
        let runs = vec![crate::engine::run_replication(&scn, 2).unwrap()];
        let a = analyze_cell(&runs, 4, 30.0, &VtMicroCoefficients::builtin());
        assert!(!a.speedflow.is_empty() && !a.comm.is_empty() && !a.network.is_empty());
        let dir = tempfile::tempdir().unwrap();
        write_cell_analysis(dir.path(), &a).unwrap();
        let net = std::fs::read_to_string(dir.path().join(NETWORK_KPI_CSV)).unwrap();
        assert!(net.starts_with("seed,scope,interval_start,interval_end,throughput_vph,avg_delay_s,avg_speed_kmh\n"));
        let comm = std::fs::read_to_string(dir.path().join(COMM_KPI_CSV)).unwrap();
        assert_eq!(comm.lines().count(), 2);
    }

    fn rec(lane: u8, time: f64, class: VehicleClass, speed: f64) -> DetectorRecord {
        DetectorRecord { detector: 0, lane, vehicle: 0, class, time, speed, accel: 0.0, headway: None }
    }

    #[test]
    fn headways_from_crossings() {
        let rs: Vec<_> = [5.0, 6.0, 7.2].iter().map(|&t| rec(1, t, VehicleClass::Cav, 20.0)).collect();
        let h = headway_series(&rs, Selection::default());
        assert_eq!(h.len(), 2);
        assert!((h[0] - 1.0).abs() < 1e-12 && (h[1] - 1.2).abs() < 1e-12);
        assert!(headway_series(&rs[..1], Selection::default()).is_empty());
        assert!(headway_series(&[], Selection::default()).is_empty());
    }

    #[test]
    fn headway_cutoff_and_class_filter() {
        let rs = vec![
            rec(1, 0.0, VehicleClass::Hv, 20.0),
            rec(1, 1.0, VehicleClass::Cav, 20.0),
            rec(1, 12.0, VehicleClass::Cav, 20.0),
            rec(1, 13.5, VehicleClass::Hv, 20.0),
            rec(2, 0.5, VehicleClass::Cav, 20.0),
        ];
        assert_eq!(headway_series(&rs, Selection::default()), vec![1.0, 1.5]);
        assert_eq!(headway_series(&rs, Selection::class(VehicleClass::Cav)), vec![1.0]);
        assert_eq!(headway_series(&rs, Selection::lane(2)), Vec::<f64>::new());
        assert!(mean_headway(&rs, Selection::lane(2)).is_err());
    }

    #[test]
    fn aggregates_flow_and_speed() {
        let rs: Vec<_> = (0..150).map(|k| rec(1, k as f64, VehicleClass::Hv, 10.0 + (k % 2) as f64 * 10.0)).collect();
        let a = lane_aggregates(&rs, 0.0);
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].flow_vph, 1800.0);
        let h = a[0].speed_kmh.unwrap();
        let m = a[0].arithmetic_speed_kmh.unwrap();
        assert!((h - 2.0 / (1.0 / 36.0 + 1.0 / 72.0)).abs() < 1e-9);
        assert!(h <= m);
        assert_eq!(speed_flow_points(&a).len(), 1);
    }

    #[test]
    fn cdf_basics() {
        let c = EmpiricalCdf::new(&[3.0, 1.0, 2.0, 2.0]).unwrap();
        assert_eq!(c.eval(0.5), 0.0);
        assert_eq!(c.eval(2.0), 0.75);
        assert_eq!(c.eval(3.0), 1.0);
        assert_eq!(c.quantile(0.5), 2.0);
        assert_eq!(c.quantile(1.0), 3.0);
        assert!(EmpiricalCdf::new(&[]).is_err());
    }

    #[test]
    fn ks_cases() {
        let same = ks_two_sample(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(same.d, 0.0);
        assert_eq!(same.p_value, 1.0);
        assert_eq!(ks_two_sample(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap().d, 1.0);
        assert_eq!(ks_two_sample(&[1.0, 2.0], &[2.0, 3.0]).unwrap().d, 0.5);
        assert_eq!(ks_two_sample(&[], &[1.0]), Err(MetricsError::EmptySample));
    }

    #[test]
    fn kolmogorov_tail_values() {
        // P(K > 1.36) ~ 0.0494, the familiar 5% critical value
        assert!((kolmogorov_q(1.358) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_q(1.0) - 0.2700).abs() < 1e-3);
        // both series agree at the switch point
        let a = kolmogorov_q(1.18 - 1e-12);
        let b = kolmogorov_q(1.18);
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn mode_counting() {
        assert_eq!(count_modes(&[0, 2, 9, 3, 1, 0, 0]), 1);
        assert_eq!(count_modes(&[0, 10, 2, 0, 8, 1]), 2);
        // shallow dip is one mode
        assert_eq!(count_modes(&[0, 20, 19, 20, 0]), 1);
        // tiny bump below 5% of the maximum is ignored
        assert_eq!(count_modes(&[100, 50, 0, 3, 0]), 1);
        assert_eq!(count_modes(&[0, 0]), 0);
        assert_eq!(modal_bin(&[0, 3, 7, 7, 1]), Some((2, 0.4)));
    }

    #[test]
    fn spearman_signs() {
        let x = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        let (r, p) = spearman(&x, &[9.0, 8.0, 7.0, 6.0, 5.0, 1.0]).unwrap();
        assert_eq!(r, -1.0);
        assert_eq!(p, 0.0);
        let (r, _) = spearman(&x, &[1.0, 3.0, 2.0, 5.0, 4.0, 6.0]).unwrap();
        assert!(r > 0.8);
        assert!(spearman(&x, &[1.0; 6]).is_none());
    }

    #[test]
    fn kpi_denominators() {
        let k = KpiRecord {
            interval_start: 0.0,
            interval_end: 300.0,
            exited: 50,
            present: 50,
            latent: 0,
            vkt: 100.0,
            vht: 1.0,
            delay: 500.0,
        };
        let rows = network_kpis(&[k.clone(), KpiRecord { interval_start: 300.0, interval_end: 600.0, ..k }]);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].throughput_vph, 600.0);
        assert_eq!(rows[0].avg_delay_s, 5.0);
        assert_eq!(rows[0].avg_speed_kmh, 100.0);
        assert_eq!(rows[2].throughput_vph, 600.0);
        assert!((rows[2].avg_delay_s - 1000.0 / 150.0).abs() < 1e-12);
    }

    #[test]
    fn comm_kpi_single_cav() {
        let c = CommRecord {
            time: 0.0,
            cavs: 1,
            mean_density: 1.0 / 0.6,
            max_density: 1.0 / 0.6,
            pairs: 0,
            mean_reception: None,
            success_rate: None,
            xi_cap_hits: 0,
            p_clamp_hits: 0,
        };
        let k = comm_kpis(&[c.clone(), c]).unwrap();
        assert!((k.mean_density - 1.6667).abs() < 1e-4);
        assert_eq!(k.mean_reception, None);
        assert!(comm_kpis(&[]).is_none());
    }
}
