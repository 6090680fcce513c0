//! Integrate-and-fire neuron semantics over the analog dot products: charge
//! integration, replica-current thresholding, spike/reset, and the batched
//! multi-timestep phase protocol.
//!
//! The membrane recurrence is
//! `V[t] = V[t-1] * (1 - S[t-1]) + sum_i W_i * IN_i[t]`, with a spike when
//! `V[t]` reaches the threshold charge (inclusive). One threshold injection
//! happens per batch; the membrane resets on spike or at batch end.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use thiserror::Error;

use crate::array::{ArrayError, CimArrayState, MacResult, REPLICA_CELLS};
use crate::ir::{LayerKind, MappingPlan, NetworkIR};
use crate::tensor::SpikeTensor;

/// Slicer resolution floor in unit-current-cycles. Charge differences below
/// this are indistinguishable to the comparator; it also absorbs float
/// round-off so ideal-valued charges compare like integers.
pub const COMPARATOR_EPSILON_UNITS: f64 = 1e-9;

/// Ideal firing threshold in unit currents (five replica cells).
pub const THRESHOLD_UNITS: i64 = REPLICA_CELLS as i64;

pub const DEFAULT_OFFSET_SIGMA_MV: f64 = 7.28;
pub const DEFAULT_NOISE_MV_RMS: f64 = 1.0;
/// Comparator-input millivolts per unit-current-cycle of charge.
pub const DEFAULT_MV_PER_UNIT: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Phase {
    Preset,
    Integrate,
    Compare,
    Hold,
}

#[derive(Debug, Error)]
pub enum NeuronError {
    #[error("phase violation: neuron stepped in {0:?}")]
    PhaseViolation(Phase),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("layer kind {0} is not executable here")]
    UnsupportedLayer(LayerKind),
    #[error(transparent)]
    Array(#[from] ArrayError),
}

/// Per-neuron integration state in unit-current-cycles.
#[derive(Debug, Clone)]
pub struct NeuronState {
    pub v_mem: f64,
    pub threshold_charge: f64,
    pub phase: Phase,
    pub t_in_batch: usize,
    pub last_spike: bool,
    pub sa_offset: f64,
    rng: ChaCha8Rng,
}

/// One comparator decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SpikeRecord {
    pub neuron_index: usize,
    pub timestep: usize,
    pub fired: bool,
}

impl NeuronState {
    pub fn new(sa_offset: f64, noise_seed: u64) -> Self {
        Self {
            v_mem: 0.0,
            threshold_charge: THRESHOLD_UNITS as f64,
            phase: Phase::Preset,
            t_in_batch: 0,
            last_spike: false,
            sa_offset,
            rng: ChaCha8Rng::seed_from_u64(noise_seed),
        }
    }

    /// Run one preset/integrate/compare cycle on a normalized net charge.
    ///
    /// `threshold_units` is injected once per batch, during the first cycle.
    /// The phase wraps back to `Preset` after the batch's last cycle.
    pub fn step_units(
        &mut self,
        net_units: f64,
        threshold_units: f64,
        noise_sigma: f64,
        timesteps: usize,
        neuron_index: usize,
    ) -> Result<SpikeRecord, NeuronError> {
        match self.phase {
            Phase::Preset => {
                // batch boundary: membrane cleared, threshold injected
                self.v_mem = 0.0;
                self.last_spike = false;
                self.t_in_batch = 0;
                self.threshold_charge = threshold_units;
                self.phase = Phase::Integrate;
            }
            Phase::Integrate => {}
            other => return Err(NeuronError::PhaseViolation(other)),
        }

        self.v_mem = self.v_mem * (1.0 - self.last_spike as u8 as f64) + net_units;
        self.phase = Phase::Compare;
        let noise = if noise_sigma > 0.0 {
            let normal = Normal::new(0.0, noise_sigma).expect("sigma >= 0");
            normal.sample(&mut self.rng)
        } else {
            0.0
        };
        let fired =
            self.v_mem + self.sa_offset + noise - self.threshold_charge >= -COMPARATOR_EPSILON_UNITS;
        self.last_spike = fired;
        let record = SpikeRecord {
            neuron_index,
            timestep: self.t_in_batch,
            fired,
        };
        if self.t_in_batch + 1 == timesteps {
            self.phase = Phase::Preset;
        } else {
            self.t_in_batch += 1;
            self.phase = Phase::Integrate;
        }
        Ok(record)
    }
}

/// Spec-level step: normalize a differential MAC current against the unit
/// current and the replica threshold current, then advance the neuron.
pub fn neuron_step(
    state: &mut NeuronState,
    mac: &MacResult,
    i_th: f64,
    unit_current: f64,
    noise_sigma: f64,
    timesteps: usize,
    neuron_index: usize,
) -> Result<SpikeRecord, NeuronError> {
    let net_units = (mac.i_pos - mac.i_neg) / unit_current;
    let threshold_units = i_th / unit_current;
    state.step_units(net_units, threshold_units, noise_sigma, timesteps, neuron_index)
}

// ---------------------------------------------------------------------------
// Sense-amplifier nonidealities
// ---------------------------------------------------------------------------

/// Static comparator offsets and the rms noise level, in charge units.
#[derive(Debug, Clone, PartialEq)]
pub struct SaProfile {
    pub offsets_units: Vec<f64>,
    pub noise_sigma_units: f64,
    pub mv_per_unit: f64,
    pub seed: u64,
}

impl SaProfile {
    /// Noise-free, offset-free comparators.
    pub fn ideal(n_neurons: usize) -> Self {
        Self {
            offsets_units: vec![0.0; n_neurons],
            noise_sigma_units: 0.0,
            mv_per_unit: DEFAULT_MV_PER_UNIT,
            seed: 0,
        }
    }

    pub fn offset(&self, neuron: usize) -> f64 {
        self.offsets_units[neuron % self.offsets_units.len()]
    }

    /// Seed of neuron `i`'s private noise stream; parallel evaluation order
    /// cannot change the draws.
    pub fn noise_seed(&self, neuron: usize) -> u64 {
        self.seed ^ (neuron as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }
}

/// Draw per-neuron static offsets (`N(0, offset_sigma_mV)`) and fix the
/// per-comparison noise level (`N(0, noise_mV_rms)`), both converted to
/// charge units through `mv_per_unit`.
pub fn sample_sa_nonidealities(
    n_neurons: usize,
    offset_sigma_mv: f64,
    noise_mv_rms: f64,
    mv_per_unit: f64,
    seed: u64,
) -> SaProfile {
    assert!(mv_per_unit > 0.0, "mv_per_unit must be positive");
    let offsets_units = if offset_sigma_mv == 0.0 {
        vec![0.0; n_neurons]
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, offset_sigma_mv).expect("sigma >= 0");
        (0..n_neurons)
            .map(|_| normal.sample(&mut rng) / mv_per_unit)
            .collect()
    };
    SaProfile {
        offsets_units,
        noise_sigma_units: noise_mv_rms / mv_per_unit,
        mv_per_unit,
        seed,
    }
}

// ---------------------------------------------------------------------------
// Variation instances (regulation-normalized gain tables)
// ---------------------------------------------------------------------------

/// Hardware nonideality knobs used for Monte-Carlo instances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VariationProfile {
    pub mismatch_sigma: f64,
    pub offset_sigma_mv: f64,
    pub noise_mv_rms: f64,
    pub mv_per_unit: f64,
}

impl Default for VariationProfile {
    fn default() -> Self {
        Self {
            mismatch_sigma: 0.1,
            offset_sigma_mv: DEFAULT_OFFSET_SIGMA_MV,
            noise_mv_rms: DEFAULT_NOISE_MV_RMS,
            mv_per_unit: DEFAULT_MV_PER_UNIT,
        }
    }
}

impl VariationProfile {
    pub fn zero() -> Self {
        Self {
            mismatch_sigma: 0.0,
            offset_sigma_mv: 0.0,
            noise_mv_rms: 0.0,
            mv_per_unit: DEFAULT_MV_PER_UNIT,
        }
    }
}

/// One sampled chip: per-weight-cell current gains, per-site replica
/// thresholds and comparator offsets, with supply regulation assumed ideal
/// (gains are unit-normalized).
#[derive(Debug, Clone)]
pub struct VariationInstance {
    /// Per weighted layer, `[out * fan_in]` gains for the positive cells.
    pub pos_gains: Vec<Vec<f64>>,
    pub neg_gains: Vec<Vec<f64>>,
    /// Per neuron site: threshold in units (sum of five replica gains).
    pub theta_units: Vec<f64>,
    /// Per neuron site static offset, units.
    pub sa_offsets: Vec<f64>,
    pub noise_sigma_units: f64,
    pub seed: u64,
}

/// Sample a hardware instance for `net` with `sites` shared neuron cells.
pub fn sample_variation_instance(
    net: &NetworkIR,
    profile: &VariationProfile,
    sites: usize,
    seed: u64,
) -> VariationInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lognormal = |rng: &mut ChaCha8Rng, sigma: f64| -> f64 {
        if sigma == 0.0 {
            1.0
        } else {
            Normal::new(0.0, sigma).unwrap().sample(rng).exp()
        }
    };
    let mut pos_gains = Vec::new();
    let mut neg_gains = Vec::new();
    for (i, layer) in net.layers.iter().enumerate() {
        // the classifier runs digitally, outside the array
        if layer.kind != LayerKind::Conv1d {
            continue;
        }
        let _ = i;
        let n = layer.out_channels * layer.fan_in();
        pos_gains.push(
            (0..n)
                .map(|_| lognormal(&mut rng, profile.mismatch_sigma))
                .collect(),
        );
        neg_gains.push(
            (0..n)
                .map(|_| lognormal(&mut rng, profile.mismatch_sigma))
                .collect(),
        );
    }
    let theta_units = (0..sites)
        .map(|_| {
            (0..REPLICA_CELLS)
                .map(|_| lognormal(&mut rng, profile.mismatch_sigma))
                .sum()
        })
        .collect();
    let sa_offsets = if profile.offset_sigma_mv == 0.0 {
        vec![0.0; sites]
    } else {
        let normal = Normal::new(0.0, profile.offset_sigma_mv).unwrap();
        (0..sites)
            .map(|_| normal.sample(&mut rng) / profile.mv_per_unit)
            .collect()
    };
    VariationInstance {
        pos_gains,
        neg_gains,
        theta_units,
        sa_offsets,
        noise_sigma_units: profile.noise_mv_rms / profile.mv_per_unit,
        seed,
    }
}

// ---------------------------------------------------------------------------
// Layer and network evaluation
// ---------------------------------------------------------------------------

/// Where the analog arithmetic comes from.
#[derive(Clone, Copy)]
pub enum DevicePlane<'a> {
    /// Exact integer recurrence with the five-unit threshold.
    Ideal,
    /// A programmed, regulated array.
    Array {
        array: &'a CimArrayState,
        plan: &'a MappingPlan,
        temp_c: f64,
        sa: &'a SaProfile,
    },
    /// Direct gain tables (fast Monte-Carlo path).
    Sampled(&'a VariationInstance),
}

/// Real-valued channel map (accumulate-head and classifier outputs).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RealMap {
    pub channels: usize,
    pub length: usize,
    pub data: Vec<f64>,
}

impl RealMap {
    pub fn get(&self, ch: usize, pos: usize) -> f64 {
        self.data[ch * self.length + pos]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerOutput {
    Spikes(SpikeTensor),
    Real(RealMap),
}

/// Evaluate one spiking conv layer: Eq-style integrate/fire per output
/// position batch, all `T` timesteps consecutively per position.
pub fn run_conv_spiking(
    net: &NetworkIR,
    layer_idx: usize,
    input: &SpikeTensor,
    plane: &DevicePlane,
) -> Result<SpikeTensor, NeuronError> {
    let layer = &net.layers[layer_idx];
    let t_total = net.timesteps;
    check_input(layer.in_channels, input, t_total)?;
    let out_len = layer
        .out_len(input.length)
        .map_err(NeuronError::ShapeMismatch)?;
    let widx = net.weight_index(layer_idx).expect("conv is weighted");
    let weights = &net.weights[widx];
    let k = layer.kernel;
    let mut out = SpikeTensor::zeros(t_total, layer.out_channels, out_len);

    match plane {
        DevicePlane::Ideal => {
            for oc in 0..layer.out_channels {
                for p in 0..out_len {
                    let mut v: i64 = 0;
                    let mut last = false;
                    for t in 0..t_total {
                        let mut net_sum: i64 = 0;
                        for ic in 0..layer.in_channels {
                            for kk in 0..k {
                                if input.get(t, ic, p * layer.stride + kk) {
                                    net_sum += weights.get(oc, ic, kk, 0) as i64;
                                }
                            }
                        }
                        v = if last { 0 } else { v } + net_sum;
                        let fired = v >= THRESHOLD_UNITS;
                        last = fired;
                        out.set(t, oc, p, fired);
                    }
                }
            }
        }
        DevicePlane::Array {
            array,
            plan,
            temp_c,
            sa,
        } => {
            let placement = plan
                .placements
                .iter()
                .find(|pl| pl.layer == layer_idx)
                .ok_or_else(|| NeuronError::ShapeMismatch("layer not in plan".into()))?;
            let unit = array.unit_current(*temp_c)?;
            for oc in 0..layer.out_channels {
                let theta = array.threshold_units(oc, *temp_c)?;
                let mut state = NeuronState::new(sa.offset(oc), sa.noise_seed(oc));
                for p in 0..out_len {
                    for t in 0..t_total {
                        let mut mask = vec![false; placement.rows];
                        for ic in 0..layer.in_channels {
                            for kk in 0..k {
                                mask[ic * k + kk] = input.get(t, ic, p * layer.stride + kk);
                            }
                        }
                        let mac = array.mac(placement, &mask, oc, *temp_c)?;
                        let net_units = (mac.i_pos - mac.i_neg) / unit;
                        let rec = state.step_units(
                            net_units,
                            theta,
                            sa.noise_sigma_units,
                            t_total,
                            oc,
                        )?;
                        out.set(t, oc, p, rec.fired);
                    }
                }
            }
        }
        DevicePlane::Sampled(inst) => {
            let widx_conv = conv_index(net, layer_idx);
            let pos = &inst.pos_gains[widx_conv];
            let neg = &inst.neg_gains[widx_conv];
            let fan_in = layer.fan_in();
            for oc in 0..layer.out_channels {
                let theta = inst.theta_units[oc % inst.theta_units.len()];
                let offset = inst.sa_offsets[oc % inst.sa_offsets.len()];
                let mut state = NeuronState::new(
                    offset,
                    inst.seed ^ (oc as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15),
                );
                for p in 0..out_len {
                    for t in 0..t_total {
                        let mut net_sum = 0.0;
                        for ic in 0..layer.in_channels {
                            for kk in 0..k {
                                if input.get(t, ic, p * layer.stride + kk) {
                                    let w = weights.get(oc, ic, kk, 0);
                                    let cell = oc * fan_in + ic * k + kk;
                                    if w > 0 {
                                        net_sum += pos[cell];
                                    } else if w < 0 {
                                        net_sum -= neg[cell];
                                    }
                                }
                            }
                        }
                        let rec = state.step_units(
                            net_sum,
                            theta,
                            inst.noise_sigma_units,
                            t_total,
                            oc,
                        )?;
                        out.set(t, oc, p, rec.fired);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Evaluate the final conv in accumulate mode: the membrane integrates every
/// timestep without firing or resetting, yielding real-valued potentials.
pub fn run_conv_accumulate(
    net: &NetworkIR,
    layer_idx: usize,
    input: &SpikeTensor,
    plane: &DevicePlane,
) -> Result<RealMap, NeuronError> {
    let layer = &net.layers[layer_idx];
    let t_total = net.timesteps;
    check_input(layer.in_channels, input, t_total)?;
    let out_len = layer
        .out_len(input.length)
        .map_err(NeuronError::ShapeMismatch)?;
    let widx = net.weight_index(layer_idx).expect("conv is weighted");
    let weights = &net.weights[widx];
    let k = layer.kernel;
    let mut data = vec![0.0f64; layer.out_channels * out_len];

    for oc in 0..layer.out_channels {
        for p in 0..out_len {
            let mut acc = 0.0f64;
            for t in 0..t_total {
                match plane {
                    DevicePlane::Ideal => {
                        let mut net_sum: i64 = 0;
                        for ic in 0..layer.in_channels {
                            for kk in 0..k {
                                if input.get(t, ic, p * layer.stride + kk) {
                                    net_sum += weights.get(oc, ic, kk, 0) as i64;
                                }
                            }
                        }
                        acc += net_sum as f64;
                    }
                    DevicePlane::Array {
                        array,
                        plan,
                        temp_c,
                        ..
                    } => {
                        let placement = plan
                            .placements
                            .iter()
                            .find(|pl| pl.layer == layer_idx)
                            .ok_or_else(|| {
                                NeuronError::ShapeMismatch("layer not in plan".into())
                            })?;
                        let unit = array.unit_current(*temp_c)?;
                        let mut mask = vec![false; placement.rows];
                        for ic in 0..layer.in_channels {
                            for kk in 0..k {
                                mask[ic * k + kk] = input.get(t, ic, p * layer.stride + kk);
                            }
                        }
                        let mac = array.mac(placement, &mask, oc, *temp_c)?;
                        acc += (mac.i_pos - mac.i_neg) / unit;
                    }
                    DevicePlane::Sampled(inst) => {
                        let widx_conv = conv_index(net, layer_idx);
                        let pos = &inst.pos_gains[widx_conv];
                        let neg = &inst.neg_gains[widx_conv];
                        let fan_in = layer.fan_in();
                        let mut net_sum = 0.0;
                        for ic in 0..layer.in_channels {
                            for kk in 0..k {
                                if input.get(t, ic, p * layer.stride + kk) {
                                    let w = weights.get(oc, ic, kk, 0);
                                    let cell = oc * fan_in + ic * k + kk;
                                    if w > 0 {
                                        net_sum += pos[cell];
                                    } else if w < 0 {
                                        net_sum -= neg[cell];
                                    }
                                }
                            }
                        }
                        acc += net_sum;
                    }
                }
            }
            data[oc * out_len + p] = acc;
        }
    }
    Ok(RealMap {
        channels: layer.out_channels,
        length: out_len,
        data,
    })
}

/// OR-combine max pooling of binary spikes.
pub fn run_maxpool(layer_pool: usize, input: &SpikeTensor) -> Result<SpikeTensor, NeuronError> {
    if input.length % layer_pool != 0 {
        return Err(NeuronError::ShapeMismatch(format!(
            "pool {} does not divide length {}",
            layer_pool, input.length
        )));
    }
    let out_len = input.length / layer_pool;
    let mut out = SpikeTensor::zeros(input.timesteps, input.channels, out_len);
    for t in 0..input.timesteps {
        for ch in 0..input.channels {
            for p in 0..out_len {
                let any = (0..layer_pool).any(|j| input.get(t, ch, p * layer_pool + j));
                out.set(t, ch, p, any);
            }
        }
    }
    Ok(out)
}

fn check_input(
    in_channels: usize,
    input: &SpikeTensor,
    timesteps: usize,
) -> Result<(), NeuronError> {
    if input.channels != in_channels || input.timesteps != timesteps {
        return Err(NeuronError::ShapeMismatch(format!(
            "input is {} channels x {} timesteps, layer expects {} x {}",
            input.channels, input.timesteps, in_channels, timesteps
        )));
    }
    Ok(())
}

fn conv_index(net: &NetworkIR, layer_idx: usize) -> usize {
    net.layers[..layer_idx]
        .iter()
        .filter(|l| l.kind == LayerKind::Conv1d)
        .count()
}

/// Spec-level layer dispatch.
pub fn run_layer(
    net: &NetworkIR,
    layer_idx: usize,
    input: &SpikeTensor,
    plane: &DevicePlane,
) -> Result<LayerOutput, NeuronError> {
    let layer = &net.layers[layer_idx];
    match layer.kind {
        LayerKind::Conv1d => {
            let feeds_head = net
                .layers
                .get(layer_idx + 1)
                .is_some_and(|l| l.kind == LayerKind::AccumulateHead);
            if feeds_head {
                Ok(LayerOutput::Real(run_conv_accumulate(
                    net, layer_idx, input, plane,
                )?))
            } else {
                Ok(LayerOutput::Spikes(run_conv_spiking(
                    net, layer_idx, input, plane,
                )?))
            }
        }
        LayerKind::Maxpool => Ok(LayerOutput::Spikes(run_maxpool(layer.pool, input)?)),
        other => Err(NeuronError::UnsupportedLayer(other)),
    }
}

/// Full forward pass with per-layer outputs and classifier scores.
#[derive(Debug, Clone)]
pub struct NetworkRun {
    pub per_layer: Vec<LayerOutput>,
    pub scores: Option<Vec<f64>>,
    pub prediction: Option<usize>,
}

impl NetworkRun {
    /// Spike tensors feeding each conv layer, in conv order (for synaptic
    /// operation counting).
    pub fn conv_inputs<'a>(
        &'a self,
        net: &NetworkIR,
        input: &'a SpikeTensor,
    ) -> Vec<&'a SpikeTensor> {
        let mut out = Vec::new();
        for (i, layer) in net.layers.iter().enumerate() {
            if layer.kind != LayerKind::Conv1d {
                continue;
            }
            let feed = if i == 0 {
                input
            } else {
                match &self.per_layer[i - 1] {
                    LayerOutput::Spikes(s) => s,
                    LayerOutput::Real(_) => continue,
                }
            };
            out.push(feed);
        }
        out
    }
}

/// Run the entire network. The accumulate head averages the final conv's
/// accumulated potentials; the classifier is a digital ternary dot product
/// over the head output.
pub fn run_network(
    net: &NetworkIR,
    input: &SpikeTensor,
    plane: &DevicePlane,
) -> Result<NetworkRun, NeuronError> {
    let mut per_layer: Vec<LayerOutput> = Vec::with_capacity(net.layers.len());
    let mut spikes = input.clone();
    let mut real: Option<RealMap> = None;
    let mut scores = None;

    for (i, layer) in net.layers.iter().enumerate() {
        let out = match layer.kind {
            LayerKind::Conv1d => run_layer(net, i, &spikes, plane)?,
            LayerKind::Maxpool => run_layer(net, i, &spikes, plane)?,
            LayerKind::AccumulateHead => {
                let m = real.take().ok_or_else(|| {
                    NeuronError::ShapeMismatch("accumulate-head needs a preceding conv".into())
                })?;
                if m.length % layer.pool != 0 {
                    return Err(NeuronError::ShapeMismatch(format!(
                        "head pool {} does not divide length {}",
                        layer.pool, m.length
                    )));
                }
                let out_len = m.length / layer.pool;
                let mut data = vec![0.0; m.channels * out_len];
                for ch in 0..m.channels {
                    for p in 0..out_len {
                        let sum: f64 =
                            (0..layer.pool).map(|j| m.get(ch, p * layer.pool + j)).sum();
                        data[ch * out_len + p] = sum / layer.pool as f64;
                    }
                }
                LayerOutput::Real(RealMap {
                    channels: m.channels,
                    length: out_len,
                    data,
                })
            }
            LayerKind::Classifier => {
                let m = real.take().ok_or_else(|| {
                    NeuronError::ShapeMismatch("classifier needs the head output".into())
                })?;
                let widx = net.weight_index(i).expect("classifier is weighted");
                let w = &net.weights[widx];
                let mut s = vec![0.0f64; layer.out_channels];
                for (cls, sc) in s.iter_mut().enumerate() {
                    for ch in 0..layer.in_channels {
                        let mut feat = 0.0;
                        for p in 0..m.length {
                            feat += m.get(ch, p);
                        }
                        *sc += w.get(cls, ch, 0, 0) as f64 * feat;
                    }
                }
                let pred = s
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(i, _)| i);
                scores = Some(s.clone());
                let out = LayerOutput::Real(RealMap {
                    channels: layer.out_channels,
                    length: 1,
                    data: s,
                });
                per_layer.push(out);
                return Ok(NetworkRun {
                    per_layer,
                    scores,
                    prediction: pred,
                });
            }
            LayerKind::Avgpool => return Err(NeuronError::UnsupportedLayer(layer.kind)),
        };
        match &out {
            LayerOutput::Spikes(s) => spikes = s.clone(),
            LayerOutput::Real(m) => real = Some(m.clone()),
        }
        per_layer.push(out);
    }

    Ok(NetworkRun {
        per_layer,
        scores,
        prediction: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{build_network, LayerSpec};
    use crate::tensor::I8Tensor;

    fn step_net(state: &mut NeuronState, net: f64, t_total: usize) -> bool {
        state
            .step_units(net, 5.0, 0.0, t_total, 0)
            .unwrap()
            .fired
    }

    #[test]
    fn accumulates_to_spike_on_third_cycle() {
        let mut s = NeuronState::new(0.0, 0);
        assert!(!step_net(&mut s, 2.0, 3)); // 2
        assert!(!step_net(&mut s, 2.0, 3)); // 4
        assert!(step_net(&mut s, 2.0, 3)); // 6 >= 5
    }

    #[test]
    fn zero_net_never_fires() {
        let mut s = NeuronState::new(0.0, 0);
        for _ in 0..12 {
            assert!(!step_net(&mut s, 0.0, 3));
        }
    }

    #[test]
    fn threshold_is_inclusive_at_single_timestep() {
        let mut s = NeuronState::new(0.0, 0);
        assert!(step_net(&mut s, 5.0, 1));
    }

    #[test]
    fn membrane_clears_after_spike() {
        let mut s = NeuronState::new(0.0, 0);
        assert!(step_net(&mut s, 6.0, 3));
        // previous charge is gone: 4 alone stays under threshold
        assert!(!step_net(&mut s, 4.0, 3));
        assert_eq!(s.v_mem, 4.0);
    }

    #[test]
    fn batch_end_resets_for_next_batch() {
        let mut s = NeuronState::new(0.0, 0);
        assert!(!step_net(&mut s, 4.0, 2));
        assert!(step_net(&mut s, 4.0, 2)); // 8 >= 5, batch ends
        assert!(!step_net(&mut s, 4.0, 2)); // fresh batch: 4 < 5
    }

    #[test]
    fn stepping_in_wrong_phase_is_an_error() {
        let mut s = NeuronState::new(0.0, 0);
        s.phase = Phase::Hold;
        assert!(matches!(
            s.step_units(1.0, 5.0, 0.0, 3, 0),
            Err(NeuronError::PhaseViolation(Phase::Hold))
        ));
    }

    #[test]
    fn sa_sampling_is_deterministic_and_scaled() {
        let a = sample_sa_nonidealities(64, 7.28, 1.0, 10.0, 5);
        let b = sample_sa_nonidealities(64, 7.28, 1.0, 10.0, 5);
        assert_eq!(a, b);
        assert_eq!(a.noise_sigma_units, 0.1);
        let ideal = sample_sa_nonidealities(64, 0.0, 0.0, 10.0, 5);
        assert!(ideal.offsets_units.iter().all(|&o| o == 0.0));
        assert_eq!(ideal.noise_sigma_units, 0.0);
    }

    #[test]
    fn offset_population_sigma_matches_at_scale() {
        let prof = sample_sa_nonidealities(100_000, 7.28, 1.0, 10.0, 17);
        let mv: Vec<f64> = prof
            .offsets_units
            .iter()
            .map(|o| o * prof.mv_per_unit)
            .collect();
        let mean = mv.iter().sum::<f64>() / mv.len() as f64;
        let sd =
            (mv.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (mv.len() - 1) as f64).sqrt();
        assert!((sd - 7.28).abs() / 7.28 <= 0.02, "sd {}", sd);
    }

    fn two_layer_net() -> NetworkIR {
        // conv(2 -> 2, k2) + maxpool(2)
        let layers = vec![LayerSpec::conv1d(2, 2, 2), LayerSpec::maxpool(2, 2)];
        let w = I8Tensor::new([2, 2, 2, 1], vec![1, 1, 1, 1, 1, -1, 0, 1]);
        build_network(layers, 2, 2, 5, vec![w]).unwrap()
    }

    #[test]
    fn all_zero_input_stays_silent() {
        let net = two_layer_net();
        let input = SpikeTensor::zeros(2, 2, 5);
        let run = run_network(&net, &input, &DevicePlane::Ideal).unwrap();
        for out in &run.per_layer {
            if let LayerOutput::Spikes(s) = out {
                assert!(s.is_all_zero());
            }
        }
    }

    #[test]
    fn maxpool_is_an_or_gate() {
        let mut input = SpikeTensor::zeros(1, 1, 4);
        input.set(0, 0, 1, true);
        let out = run_maxpool(2, &input).unwrap();
        assert!(out.get(0, 0, 0));
        assert!(!out.get(0, 0, 1));
    }

    #[test]
    fn batching_never_loses_spikes_under_nonnegative_input() {
        // with nonnegative nets, accumulation across a batch fires at least
        // wherever single-cycle batches would
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        for _ in 0..200 {
            let nets: Vec<f64> = (0..3).map(|_| rng.gen_range(0..8) as f64).collect();
            let mut batched = NeuronState::new(0.0, 0);
            let mut single = NeuronState::new(0.0, 0);
            let mut count3 = 0;
            let mut count1 = 0;
            for &n in &nets {
                if batched.step_units(n, 5.0, 0.0, 3, 0).unwrap().fired {
                    count3 += 1;
                }
                if single.step_units(n, 5.0, 0.0, 1, 0).unwrap().fired {
                    count1 += 1;
                }
            }
            assert!(count3 >= count1, "nets {:?}", nets);
        }
    }

    #[test]
    fn offset_shifts_the_decision_boundary_only() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let nets: Vec<f64> = (0..6).map(|_| rng.gen_range(-3..6) as f64).collect();
            let c = rng.gen_range(-2.0..2.0);
            let mut with_offset = NeuronState::new(c, 0);
            let mut lowered = NeuronState::new(0.0, 0);
            for &n in &nets {
                let a = with_offset.step_units(n, 5.0, 0.0, 3, 0).unwrap().fired;
                let b = lowered.step_units(n, 5.0 - c, 0.0, 3, 0).unwrap().fired;
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn noise_free_runs_are_bit_identical() {
        let net = two_layer_net();
        let mut input = SpikeTensor::zeros(2, 2, 5);
        input.set(0, 0, 0, true);
        input.set(1, 1, 2, true);
        input.set(0, 1, 4, true);
        let a = run_network(&net, &input, &DevicePlane::Ideal).unwrap();
        let b = run_network(&net, &input, &DevicePlane::Ideal).unwrap();
        for (x, y) in a.per_layer.iter().zip(&b.per_layer) {
            assert_eq!(x, y);
        }
    }
}
