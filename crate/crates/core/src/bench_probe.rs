//! Internal timing probe (dev builds only).
use crate::condense::{condense_element, TraceSystem};
use crate::darcy::{assemble_darcy, solve_trace, recover_volume, DarcyInput};
use crate::transport::{TransportOperator, TransportState};
use std::time::Instant;

pub fn time_darcy_pieces(input: &DarcyInput) {
    let t0 = Instant::now();
    let asm = assemble_darcy(input).unwrap();
    println!("  darcy assemble+condense (par): {:?}", t0.elapsed());
    let t0 = Instant::now();
    let tr = solve_trace(&asm, input.skel).unwrap();
    println!("  darcy trace solve: {:?}", t0.elapsed());
    let t0 = Instant::now();
    let _ = recover_volume(&asm, input.refel, &tr);
    println!("  darcy recover: {:?}", t0.elapsed());
}

pub fn time_newton_pieces(op: &TransportOperator, st: &TransportState) {
    let t0 = Instant::now();
    let blocks = op.assemble_jacobian_blocks(st).unwrap();
    println!("  assemble J: {:?}", t0.elapsed());
    let t0 = Instant::now();
    let condensed: Vec<_> = blocks
        .iter()
        .enumerate()
        .map(|(el, b)| condense_element(b.element_system(), el).unwrap())
        .collect();
    println!("  condense (serial): {:?}", t0.elapsed());
    let t0 = Instant::now();
    let mut ts = TraceSystem::new(op.dof_map.n_dofs);
    for ce in &condensed {
        ts.add_element(ce);
    }
    println!("  scatter: {:?}", t0.elapsed());
    let t0 = Instant::now();
    let x = ts.solve().unwrap();
    println!("  trace solve: {:?}", t0.elapsed());
    let t0 = Instant::now();
    let _r: Vec<_> = condensed.iter().map(|ce| ce.recover(&x)).collect();
    println!("  recover (serial): {:?}", t0.elapsed());
}
