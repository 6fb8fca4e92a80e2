use super::layers::{conv, conv_silu, init_conv};
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tape, Tensor, Var};

pub const EVENT_ENCODER: &str = "event";

/// Recurrent hidden map of one ETF unit.
#[derive(Clone, Debug, PartialEq)]
pub struct EtfState {
    pub hidden: Tensor,
}

impl EtfState {
    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        EtfState {
            hidden: Tensor::zeros(&[h, w, c]),
        }
    }
}

/// Inserts the three conv blocks of a gated fusion unit over `c` channels.
pub fn init_etf(store: &mut ParamStore, seed: u64, prefix: &str, c: usize) {
    init_conv(store, seed, &format!("{prefix}.x"), 3, c, c);
    init_conv(store, seed, &format!("{prefix}.h"), 3, c, c);
    init_conv(store, seed, &format!("{prefix}.g"), 3, 2 * c, c);
}

/// Fusion gate `g = σ(conv_g([conv_x(x) ‖ conv_h(h)]))`.
pub fn etf_gate(tape: &mut Tape, store: &ParamStore, prefix: &str, x: Var, h: Var) -> Result<Var> {
    if tape.shape(x) != tape.shape(h) {
        return Err(Error::Shape {
            op: "etf",
            lhs: tape.shape(x).to_vec(),
            rhs: tape.shape(h).to_vec(),
        });
    }
    let fx = conv(tape, store, &format!("{prefix}.x"), x)?;
    let fh = conv(tape, store, &format!("{prefix}.h"), h)?;
    let cat = tape.concat(&[fx, fh])?;
    let logits = conv(tape, store, &format!("{prefix}.g"), cat)?;
    Ok(tape.sigmoid(logits))
}

/// `y = g ⊙ x + (1 − g) ⊙ h`; `y` is also the next hidden state.
pub fn etf_forward(tape: &mut Tape, store: &ParamStore, prefix: &str, x: Var, h: Var) -> Result<Var> {
    let g = etf_gate(tape, store, prefix, x, h)?;
    let gx = tape.mul(g, x)?;
    let ng = tape.one_minus(g);
    let gh = tape.mul(ng, h)?;
    tape.add(gx, gh)
}

/// Tensor-level convenience: one ETF step from an explicit state.
pub fn etf_step(store: &ParamStore, prefix: &str, x: &Tensor, state: &EtfState) -> Result<(Tensor, EtfState)> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let hv = tape.constant(state.hidden.clone());
    let y = etf_forward(&mut tape, store, prefix, xv, hv)?;
    let y = tape.value(y).clone();
    Ok((y.clone(), EtfState { hidden: y }))
}

/// Voxel grid encoder: stem, ETF at full resolution, 2× downsample, ETF at
/// half resolution, head producing `(mean, logvar)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvEncoder {
    pub bins: usize,
    pub hidden: usize,
    pub latent: usize,
}

/// Hidden maps of both ETF units.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderState {
    pub etf: [EtfState; 2],
}

impl EvEncoder {
    pub fn init(&self, store: &mut ParamStore, seed: u64) {
        let (p, c) = (EVENT_ENCODER, self.hidden);
        init_conv(store, seed, &format!("{p}.stem"), 3, self.bins, c);
        init_etf(store, seed, &format!("{p}.etf0"), c);
        init_conv(store, seed, &format!("{p}.mid"), 3, c, c);
        init_etf(store, seed, &format!("{p}.etf1"), c);
        init_conv(store, seed, &format!("{p}.head"), 3, c, 2 * self.latent);
    }

    pub fn zero_state(&self, h: usize, w: usize) -> EncoderState {
        EncoderState {
            etf: [
                EtfState::zeros(h, w, self.hidden),
                EtfState::zeros(h / 2, w / 2, self.hidden),
            ],
        }
    }

    /// One recurrent step on the tape. `hidden` holds the two ETF states and is
    /// replaced by the new ones.
    pub fn step(&self, tape: &mut Tape, store: &ParamStore, voxel: Var, hidden: &mut [Var; 2]) -> Result<(Var, Var)> {
        let s = tape.shape(voxel).to_vec();
        if s.len() != 3 || s[2] != self.bins || s[0] % 2 != 0 || s[1] % 2 != 0 {
            return Err(Error::invalid(format!(
                "voxel input must be even-sized h×w×{}, got {s:?}",
                self.bins
            )));
        }
        let p = EVENT_ENCODER;
        let x = conv_silu(tape, store, &format!("{p}.stem"), voxel)?;
        let y0 = etf_forward(tape, store, &format!("{p}.etf0"), x, hidden[0])?;
        let m = conv_silu(tape, store, &format!("{p}.mid"), y0)?;
        let m = tape.downsample2(m)?;
        let y1 = etf_forward(tape, store, &format!("{p}.etf1"), m, hidden[1])?;
        *hidden = [y0, y1];
        let o = conv(tape, store, &format!("{p}.head"), y1)?;
        Ok((tape.slice(o, 0, self.latent)?, tape.slice(o, self.latent, self.latent)?))
    }

    /// Whole-sequence pass keeping the full graph for backpropagation through time.
    /// Starts from `initial` (treated as a constant) or from a zero state.
    pub fn encode_sequence(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        voxels: &[Var],
        initial: Option<&EncoderState>,
    ) -> Result<Vec<(Var, Var)>> {
        let first = voxels.first().ok_or_else(|| Error::invalid("empty voxel sequence"))?;
        let s = tape.shape(*first).to_vec();
        if s.len() != 3 {
            return Err(Error::invalid(format!("voxel input must be h×w×bins, got {s:?}")));
        }
        let zero;
        let st = match initial {
            Some(st) => {
                let hs = st.etf[0].hidden.shape();
                if hs[0] != s[0] || hs[1] != s[1] {
                    return Err(Error::invalid("initial state does not match the voxel size"));
                }
                st
            }
            None => {
                zero = self.zero_state(s[0], s[1]);
                &zero
            }
        };
        let mut hidden = [
            tape.constant(st.etf[0].hidden.clone()),
            tape.constant(st.etf[1].hidden.clone()),
        ];
        let mut out = Vec::with_capacity(voxels.len());
        for &v in voxels {
            if tape.shape(v) != &s[..] {
                return Err(Error::invalid("voxel grids in a sequence must share a shape"));
            }
            out.push(self.step(tape, store, v, &mut hidden)?);
        }
        Ok(out)
    }

    /// Streaming inference step with an explicit state; no graph is retained.
    pub fn step_tensor(&self, store: &ParamStore, voxel: &Tensor, state: &EncoderState) -> Result<(Tensor, Tensor, EncoderState)> {
        let mut tape = Tape::new();
        let v = tape.constant(voxel.clone());
        let mut hidden = [
            tape.constant(state.etf[0].hidden.clone()),
            tape.constant(state.etf[1].hidden.clone()),
        ];
        let (mean, logvar) = self.step(&mut tape, store, v, &mut hidden)?;
        let next = EncoderState {
            etf: [
                EtfState {
                    hidden: tape.value(hidden[0]).clone(),
                },
                EtfState {
                    hidden: tape.value(hidden[1]).clone(),
                },
            ],
        };
        Ok((tape.value(mean).clone(), tape.value(logvar).clone(), next))
    }
}
