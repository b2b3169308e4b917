//! Binary checkpoint format for optimizer states and parameters.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! state  := "FPST" u16:version u8:variant u64:steps hyper u32:layers
//!           (u32:rows u32:cols){layers} f64*            -- tensors, canonical order
//! hyper  := f64:beta1 f64:beta2 f64:eps f64:clip_rho
//!           u64:precond_freq u64:hessian_freq u64:ns_steps
//!           u8:ns_variant u8:dim_scaling u8:bias_correction
//! params := "FPPM" u16:version u32:layers (u32:rows u32:cols){layers} f64*
//! ```

use std::io::{Read, Write};

use super::{OptimizerHyper, PreconditionerState, Variant};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, NsVariant};
use crate::params::ModelParams;

const STATE_MAGIC: &[u8; 4] = b"FPST";
const PARAMS_MAGIC: &[u8; 4] = b"FPPM";
const VERSION: u16 = 1;

fn variant_tag(v: Variant) -> u8 {
    match v {
        Variant::Sophia => 0,
        Variant::Muon => 1,
        Variant::Soap => 2,
    }
}

fn tag_variant(t: u8) -> Result<Variant> {
    match t {
        0 => Ok(Variant::Sophia),
        1 => Ok(Variant::Muon),
        2 => Ok(Variant::Soap),
        _ => Err(Error::Format(format!("unknown variant tag {t}"))),
    }
}

struct Reader<R>(R);

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0.read_exact(&mut b)?;
        Ok(b)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes()?))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        if &self.bytes::<4>()? != magic {
            return Err(Error::Format("bad magic".into()));
        }
        let v = self.u16()?;
        if v != VERSION {
            return Err(Error::Format(format!("unsupported version {v}")));
        }
        Ok(())
    }
    fn shapes(&mut self) -> Result<Vec<(usize, usize)>> {
        let n = self.u32()? as usize;
        (0..n)
            .map(|_| Ok((self.u32()? as usize, self.u32()? as usize)))
            .collect()
    }
    fn fill(&mut self, m: &mut Matrix) -> Result<()> {
        for x in m.data_mut() {
            *x = self.f64()?;
        }
        Ok(())
    }
}

fn write_shapes<W: Write>(w: &mut W, shapes: &[(usize, usize)]) -> Result<()> {
    w.write_all(&(shapes.len() as u32).to_le_bytes())?;
    for &(r, c) in shapes {
        w.write_all(&(r as u32).to_le_bytes())?;
        w.write_all(&(c as u32).to_le_bytes())?;
    }
    Ok(())
}

fn write_floats<W: Write>(w: &mut W, m: &Matrix) -> Result<()> {
    for x in m.data() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_state<W: Write>(mut w: W, state: &PreconditionerState) -> Result<()> {
    w.write_all(STATE_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[variant_tag(state.variant())])?;
    w.write_all(&state.steps.to_le_bytes())?;
    let h = &state.hyper;
    for x in [h.beta1, h.beta2, h.eps, h.clip_rho] {
        w.write_all(&x.to_le_bytes())?;
    }
    for x in [h.precond_freq, h.hessian_freq, h.ns_steps as u64] {
        w.write_all(&x.to_le_bytes())?;
    }
    let ns = match h.ns_variant {
        NsVariant::Quintic => 0u8,
        NsVariant::Classic => 1u8,
    };
    w.write_all(&[ns, h.dim_scaling as u8, h.bias_correction as u8])?;
    write_shapes(&mut w, &state.layer_shapes())?;
    for t in state.tensors() {
        write_floats(&mut w, t)?;
    }
    Ok(())
}

pub fn read_state<R: Read>(r: R) -> Result<PreconditionerState> {
    let mut r = Reader(r);
    r.header(STATE_MAGIC)?;
    let variant = tag_variant(r.u8()?)?;
    let steps = r.u64()?;
    let (beta1, beta2, eps, clip_rho) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
    let (precond_freq, hessian_freq, ns_steps) = (r.u64()?, r.u64()?, r.u64()? as usize);
    let ns_variant = match r.u8()? {
        0 => NsVariant::Quintic,
        1 => NsVariant::Classic,
        t => return Err(Error::Format(format!("unknown newton-schulz tag {t}"))),
    };
    let (dim_scaling, bias_correction) = (r.u8()? != 0, r.u8()? != 0);
    let hyper = OptimizerHyper {
        beta1,
        beta2,
        eps,
        clip_rho,
        precond_freq,
        hessian_freq,
        ns_steps,
        ns_variant,
        dim_scaling,
        bias_correction,
    };
    let shapes = r.shapes()?;
    let mut state = PreconditionerState::zeros(variant, &shapes, hyper);
    state.steps = steps;
    for t in state.tensors_mut() {
        r.fill(t)?;
    }
    Ok(state)
}

pub fn write_params<W: Write>(mut w: W, params: &ModelParams) -> Result<()> {
    w.write_all(PARAMS_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    write_shapes(&mut w, &params.shapes())?;
    for l in &params.layers {
        write_floats(&mut w, l)?;
    }
    Ok(())
}

pub fn read_params<R: Read>(r: R) -> Result<ModelParams> {
    let mut r = Reader(r);
    r.header(PARAMS_MAGIC)?;
    let shapes = r.shapes()?;
    let mut params = ModelParams::zeros_like(&shapes);
    for l in params.layers.iter_mut() {
        r.fill(l)?;
    }
    Ok(params)
}
