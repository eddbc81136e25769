//! Layer helpers built on the tape: affine layers, stacked MLPs, and a
//! gated recurrent cell.

use super::{Init, ParamStore, Tape, TensorError, ValueId};

/// Smooth activations only: every layer stays finite-difference checkable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Sigmoid,
    Softplus,
}

fn apply(tape: &mut Tape, act: Activation, x: ValueId) -> ValueId {
    match act {
        Activation::Tanh => tape.tanh(x),
        Activation::Sigmoid => tape.sigmoid(x),
        Activation::Softplus => tape.softplus(x),
    }
}

/// y = W x + b with W of shape `[out, in]` under `{name}.w` and b of
/// shape `[out]` under `{name}.b`. Weights are Glorot-initialized on first use, biases zero.
pub fn linear(
    tape: &mut Tape,
    params: &mut ParamStore,
    name: &str,
    x: ValueId,
    out: usize,
) -> Result<ValueId, TensorError> {
    let inp = tape.value(x).len();
    let w = tape.param(
        params,
        &format!("{name}.w"),
        &[out, inp],
        Init::Glorot {
            fan_in: inp,
            fan_out: out,
        },
    )?;
    let b = tape.param(params, &format!("{name}.b"), &[out], Init::Zeros)?;
    let wx = tape.matvec(w, x)?;
    tape.add(wx, b)
}

/// Stacked linear layers with the given output sizes; the activation is
/// applied after every layer except the last.
pub fn mlp(
    tape: &mut Tape,
    params: &mut ParamStore,
    name: &str,
    layer_sizes: &[usize],
    act: Activation,
    x: ValueId,
) -> Result<ValueId, TensorError> {
    assert!(!layer_sizes.is_empty(), "mlp needs at least one layer");
    let mut h = x;
    for (i, &out) in layer_sizes.iter().enumerate() {
        h = linear(tape, params, &format!("{name}.l{i}"), h, out)?;
        if i + 1 < layer_sizes.len() {
            h = apply(tape, act, h);
        }
    }
    Ok(h)
}

/// One gated-recurrent update:
/// z = s(Wz x + Uz h + bz), r = s(Wr x + Ur h + br),
/// hc = tanh(Wh x + Uh (r . h) + bh), h' = (1 - z) . h + z . hc.
pub fn gru_step(
    tape: &mut Tape,
    params: &mut ParamStore,
    name: &str,
    x: ValueId,
    h: ValueId,
) -> Result<ValueId, TensorError> {
    let inp = tape.value(x).len();
    let hid = tape.value(h).len();

    let gate_pre = |tape: &mut Tape,
                    params: &mut ParamStore,
                    g: &str,
                    xin: ValueId,
                    hin: ValueId|
     -> Result<ValueId, TensorError> {
        let w = tape.param(
            params,
            &format!("{name}.w{g}"),
            &[hid, inp],
            Init::Glorot {
                fan_in: inp,
                fan_out: hid,
            },
        )?;
        let u = tape.param(
            params,
            &format!("{name}.u{g}"),
            &[hid, hid],
            Init::Glorot {
                fan_in: hid,
                fan_out: hid,
            },
        )?;
        let b = tape.param(params, &format!("{name}.b{g}"), &[hid], Init::Zeros)?;
        let wx = tape.matvec(w, xin)?;
        let uh = tape.matvec(u, hin)?;
        let s = tape.add(wx, uh)?;
        tape.add(s, b)
    };

    let z_pre = gate_pre(tape, params, "z", x, h)?;
    let z = tape.sigmoid(z_pre);
    let r_pre = gate_pre(tape, params, "r", x, h)?;
    let r = tape.sigmoid(r_pre);
    let rh = tape.mul(r, h)?;
    let c_pre = gate_pre(tape, params, "h", x, rh)?;
    let c = tape.tanh(c_pre);

    let one_minus_z = tape.affine(z, -1.0, 1.0);
    let keep = tape.mul(one_minus_z, h)?;
    let update = tape.mul(z, c)?;
    tape.add(keep, update)
}
