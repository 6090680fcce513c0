//! Differential SRAM array: weight programming, current-mode dot products
//! and the replica-cell threshold generator.
//!
//! The array is split into column-group subbanks, each regulated by its own
//! supply solution. The first column of every subbank is the monitor column:
//! rows 0..10 hold the always-'1' sensor cells the regulator servos on, and
//! the rows below host the five replica cells per neuron site that generate
//! the firing-threshold current.

use serde::Serialize;
use thiserror::Error;

use crate::device::{
    cell_current, leakage_current, sample_mismatch, solve_regulator, DeviceError, DeviceParams,
    MismatchSample, RegulatorSolution,
};
use crate::ir::{LayerPlacement, MappingPlan, NetworkIR};
use crate::tensor::I8Tensor;

/// Monitor cells per subbank.
pub const MONITOR_CELLS: usize = 10;
/// Replica cells summed into one threshold current.
pub const REPLICA_CELLS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ArrayGeometry {
    pub rows: usize,
    pub cols: usize,
    pub subbanks: usize,
    pub neurons: usize,
}

impl Default for ArrayGeometry {
    fn default() -> Self {
        Self {
            rows: 1024,
            cols: 1304,
            subbanks: 64,
            neurons: 128,
        }
    }
}

impl ArrayGeometry {
    pub fn subbank_width(&self) -> usize {
        self.cols / self.subbanks
    }

    /// Monitor column of subbank `s` (its first column).
    pub fn monitor_col(&self, s: usize) -> usize {
        s * self.subbank_width()
    }

    pub fn subbank_of_col(&self, col: usize) -> usize {
        (col / self.subbank_width()).min(self.subbanks - 1)
    }

    /// Columns available for weight cells: every subbank column except the
    /// monitor column. Columns past the last full subbank are spare.
    pub fn data_columns(&self) -> Vec<usize> {
        let w = self.subbank_width();
        let mut out = Vec::with_capacity(self.subbanks * (w - 1));
        for s in 0..self.subbanks {
            for c in s * w + 1..(s + 1) * w {
                out.push(c);
            }
        }
        out
    }

    /// Cell coordinates of replica `j` for neuron site `n`. Replicas stack
    /// below the monitor cells of subbank `n % subbanks`.
    pub fn replica_cell(&self, neuron: usize, j: usize) -> (usize, usize) {
        let col = self.monitor_col(neuron % self.subbanks);
        let row = MONITOR_CELLS + REPLICA_CELLS * (neuron / self.subbanks) + j;
        (row, col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ArrayMode {
    DataAccess,
    Cim,
}

/// Logged supply-switch activity, including the guard tick between the
/// write-mode and compute-mode enables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum ModeEvent {
    WriteModeEnable,
    GuardTime { cycles: u64 },
    CimModeEnable,
    DataAccessRestore,
}

#[derive(Debug, Error)]
pub enum ArrayError {
    #[error("mode violation: {action} requires {needs:?} mode but the array is in {have:?}")]
    ModeViolation {
        action: &'static str,
        needs: ArrayMode,
        have: ArrayMode,
    },
    #[error("regulator not solved for {requested} C (solved: {solved:?})")]
    RegulatorUnsolved {
        requested: f64,
        solved: Option<f64>,
    },
    #[error("input mask length {len} exceeds {rows} rows")]
    MaskTooLong { len: usize, rows: usize },
    #[error("neuron index {neuron} out of range for layer with {sites} sites")]
    NeuronOutOfRange { neuron: usize, sites: usize },
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Mapping(#[from] crate::ir::IrError),
}

/// Current-mode dot-product readout of one neuron's differential column pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MacResult {
    pub i_pos: f64,
    pub i_neg: f64,
    pub activated_rows: usize,
}

#[derive(Debug, Clone)]
struct SolvedPoint {
    temp_c: f64,
    solutions: Vec<RegulatorSolution>,
    /// Unit-gain cell current per subbank at its regulated supply.
    base: Vec<f64>,
    /// Mean monitor-cell current across all subbanks.
    unit_current: f64,
}

/// Programmed array with sampled mismatch and per-subbank regulation state.
#[derive(Debug, Clone)]
pub struct CimArrayState {
    pub geometry: ArrayGeometry,
    pub device: DeviceParams,
    pub mismatch: MismatchSample,
    pub mode: ArrayMode,
    pub events: Vec<ModeEvent>,
    cells: Vec<bool>,
    solved: Option<SolvedPoint>,
}

impl CimArrayState {
    /// Fresh array in data-access mode with monitor cells programmed and
    /// mismatch drawn from `seed` at the device's `sigma_mismatch`.
    pub fn new(geometry: ArrayGeometry, device: DeviceParams, seed: u64) -> Self {
        let mismatch = sample_mismatch(geometry.rows, geometry.cols, device.sigma_mismatch, seed);
        let mut cells = vec![false; geometry.rows * geometry.cols];
        for s in 0..geometry.subbanks {
            let col = geometry.monitor_col(s);
            for r in 0..MONITOR_CELLS {
                cells[r * geometry.cols + col] = true;
            }
        }
        // replica threshold cells also store '1'
        for n in 0..geometry.neurons {
            for j in 0..REPLICA_CELLS {
                let (r, c) = geometry.replica_cell(n, j);
                cells[r * geometry.cols + c] = true;
            }
        }
        Self {
            geometry,
            device,
            mismatch,
            mode: ArrayMode::DataAccess,
            events: Vec::new(),
            cells,
            solved: None,
        }
    }

    pub fn cell(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.geometry.cols + col]
    }

    fn set_cell(&mut self, row: usize, col: usize, v: bool) {
        self.cells[row * self.geometry.cols + col] = v;
    }

    /// Mapping plan for `net` on this array's data columns.
    pub fn plan(&self, net: &NetworkIR) -> Result<MappingPlan, crate::ir::IrError> {
        crate::ir::validate_cim_mappability(
            net,
            self.geometry.rows,
            &self.geometry.data_columns(),
            self.geometry.neurons,
        )
    }

    /// Write ternary weights into the planned cell pairs: `+1` sets the
    /// positive-column cell, `-1` the negative-column cell, `0` neither.
    pub fn program_weights(
        &mut self,
        plan: &MappingPlan,
        weights: &[I8Tensor],
    ) -> Result<(), ArrayError> {
        if self.mode != ArrayMode::DataAccess {
            return Err(ArrayError::ModeViolation {
                action: "program_weights",
                needs: ArrayMode::DataAccess,
                have: self.mode,
            });
        }
        for (placement, tensor) in plan.placements.iter().zip(weights) {
            let [out, inc, k, _] = tensor.dims.map(|x| x as usize);
            debug_assert_eq!(out, placement.neuron_columns.len());
            debug_assert_eq!(inc * k, placement.rows);
            for (n, &(pos_col, neg_col)) in placement.neuron_columns.iter().enumerate() {
                for ic in 0..inc {
                    for kk in 0..k {
                        let row = ic * k + kk;
                        let w = tensor.get(n, ic, kk, 0);
                        self.set_cell(row, pos_col, w > 0);
                        self.set_cell(row, neg_col, w < 0);
                    }
                }
            }
        }
        Ok(())
    }

    /// Read programmed weights back out of the cell pairs.
    pub fn readback(
        &self,
        placement: &LayerPlacement,
        in_channels: usize,
        kernel: usize,
    ) -> I8Tensor {
        let out = placement.neuron_columns.len();
        let mut t = I8Tensor::zeros([out as u32, in_channels as u32, kernel as u32, 1]);
        for (n, &(pos_col, neg_col)) in placement.neuron_columns.iter().enumerate() {
            for ic in 0..in_channels {
                for kk in 0..kernel {
                    let row = ic * kernel + kk;
                    let w = match (self.cell(row, pos_col), self.cell(row, neg_col)) {
                        (true, false) => 1,
                        (false, true) => -1,
                        _ => 0,
                    };
                    t.set(n, ic, kk, 0, w);
                }
            }
        }
        t
    }

    /// Switch the supply into compute mode: write-mode enable first, a guard
    /// tick while the reference settles, then compute-mode enable.
    pub fn enter_cim_mode(&mut self) {
        if self.mode == ArrayMode::Cim {
            return;
        }
        self.events.push(ModeEvent::WriteModeEnable);
        self.events.push(ModeEvent::GuardTime { cycles: 1 });
        self.events.push(ModeEvent::CimModeEnable);
        self.mode = ArrayMode::Cim;
    }

    pub fn enter_data_access_mode(&mut self) {
        if self.mode == ArrayMode::DataAccess {
            return;
        }
        self.events.push(ModeEvent::DataAccessRestore);
        self.mode = ArrayMode::DataAccess;
        self.solved = None;
    }

    /// Solve every subbank's regulator for `temp_c`.
    pub fn solve_for(&mut self, temp_c: f64) -> Result<(), ArrayError> {
        if self.mode != ArrayMode::Cim {
            return Err(ArrayError::ModeViolation {
                action: "solve_for",
                needs: ArrayMode::Cim,
                have: self.mode,
            });
        }
        let mut solutions = Vec::with_capacity(self.geometry.subbanks);
        let mut base = Vec::with_capacity(self.geometry.subbanks);
        let mut unit_sum = 0.0;
        for s in 0..self.geometry.subbanks {
            let gains = self.monitor_gains(s);
            let sol = solve_regulator(temp_c, &gains, &self.device)?;
            let mean_gain: f64 = gains.iter().sum::<f64>() / gains.len() as f64;
            let c = cell_current(sol.v_r, temp_c, 1.0, &self.device);
            unit_sum += mean_gain * c;
            base.push(c);
            solutions.push(sol);
        }
        self.solved = Some(SolvedPoint {
            temp_c,
            solutions,
            base,
            unit_current: unit_sum / self.geometry.subbanks as f64,
        });
        Ok(())
    }

    pub fn monitor_gains(&self, subbank: usize) -> Vec<f64> {
        let col = self.geometry.monitor_col(subbank);
        (0..MONITOR_CELLS)
            .map(|r| self.mismatch.gain(r, col))
            .collect()
    }

    pub fn solutions(&self) -> Option<&[RegulatorSolution]> {
        self.solved.as_ref().map(|s| s.solutions.as_slice())
    }

    fn solved_for(&self, temp_c: f64) -> Result<&SolvedPoint, ArrayError> {
        match &self.solved {
            Some(p) if p.temp_c == temp_c => Ok(p),
            other => Err(ArrayError::RegulatorUnsolved {
                requested: temp_c,
                solved: other.as_ref().map(|p| p.temp_c),
            }),
        }
    }

    /// Regulated unit current (mean monitor-cell current over all subbanks).
    pub fn unit_current(&self, temp_c: f64) -> Result<f64, ArrayError> {
        Ok(self.solved_for(temp_c)?.unit_current)
    }

    /// Column readout in local unit-current multiples: summed mismatch gains
    /// of the conducting cells plus the off-cell leakage fraction. The
    /// subbank's regulated base current converts this to amps.
    fn column_units(&self, col: usize, mask: &[bool], rows: usize) -> f64 {
        let mut sum = 0.0;
        let mut conducting = 0usize;
        for (row, &active) in mask.iter().enumerate().take(rows) {
            if active && self.cell(row, col) {
                sum += self.mismatch.gain(row, col);
                conducting += 1;
            }
        }
        let off = self.geometry.rows - conducting;
        sum + off as f64 * self.device.leak_fraction
    }

    /// Differential dot-product currents for one neuron of a placed layer,
    /// over the wordlines raised by `input_mask`.
    pub fn mac(
        &self,
        placement: &LayerPlacement,
        input_mask: &[bool],
        neuron: usize,
        temp_c: f64,
    ) -> Result<MacResult, ArrayError> {
        if self.mode != ArrayMode::Cim {
            return Err(ArrayError::ModeViolation {
                action: "mac",
                needs: ArrayMode::Cim,
                have: self.mode,
            });
        }
        if input_mask.len() > self.geometry.rows {
            return Err(ArrayError::MaskTooLong {
                len: input_mask.len(),
                rows: self.geometry.rows,
            });
        }
        let point = self.solved_for(temp_c)?;
        let &(pos_col, neg_col) = placement.neuron_columns.get(neuron).ok_or(
            ArrayError::NeuronOutOfRange {
                neuron,
                sites: placement.neuron_columns.len(),
            },
        )?;
        let (i_pos, _) = self.column_current(point, pos_col, input_mask, placement.rows);
        let (i_neg, _) = self.column_current(point, neg_col, input_mask, placement.rows);
        Ok(MacResult {
            i_pos,
            i_neg,
            activated_rows: input_mask.iter().filter(|&&b| b).count(),
        })
    }

    /// Firing-threshold current of a neuron site: the summed read current of
    /// its five replica cells at the replica subbank's regulated supply.
    pub fn threshold_current(&self, neuron: usize, temp_c: f64) -> Result<f64, ArrayError> {
        let point = self.solved_for(temp_c)?;
        let mut sum = 0.0;
        for j in 0..REPLICA_CELLS {
            let (row, col) = self.geometry.replica_cell(neuron, j);
            let v_r = point.solutions[self.geometry.subbank_of_col(col)].v_r;
            sum += cell_current(v_r, point.temp_c, self.mismatch.gain(row, col), &self.device);
        }
        Ok(sum)
    }

    /// Threshold in unit-current multiples; exactly `REPLICA_CELLS` when
    /// mismatch is disabled.
    pub fn threshold_units(&self, neuron: usize, temp_c: f64) -> Result<f64, ArrayError> {
        let point = self.solved_for(temp_c)?;
        let mut gain_sum = 0.0;
        let mut current = 0.0;
        for j in 0..REPLICA_CELLS {
            let (row, col) = self.geometry.replica_cell(neuron, j);
            let v_r = point.solutions[self.geometry.subbank_of_col(col)].v_r;
            gain_sum += self.mismatch.gain(row, col);
            current += cell_current(v_r, point.temp_c, self.mismatch.gain(row, col), &self.device);
        }
        // at sigma = 0 the replica supply equals the monitor supply, so the
        // gain sum is the exact unit-normalized threshold
        if self.device.sigma_mismatch == 0.0 {
            Ok(gain_sum)
        } else {
            Ok(current / point.unit_current)
        }
    }
}

/// Array with weights programmed and supply switched to compute mode.
pub fn programmed_array(
    net: &NetworkIR,
    geometry: ArrayGeometry,
    device: DeviceParams,
    seed: u64,
    temp_c: f64,
) -> Result<(CimArrayState, MappingPlan), ArrayError> {
    let mut array = CimArrayState::new(geometry, device, seed);
    let plan = array.plan(net)?;
    array.program_weights(&plan, &net.weights)?;
    array.enter_cim_mode();
    array.solve_for(temp_c)?;
    Ok((array, plan))
}
