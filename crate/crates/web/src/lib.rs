//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export returns flat arrays so the page can draw them straight into
//! canvas pixels.

use dualrecon::data::{generate_phantom, PhantomSpec};
use dualrecon::feasibility::feasibility_grid;
use dualrecon::fourier::{fft2c, ifft2c, make_cartesian_mask, undersample, ComplexTensor};
use wasm_bindgen::prelude::*;

fn js_err(e: dualrecon::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Feasibility probabilities for `k` in `k_lo..=k_hi` and integer `a` in
/// `a_lo..=a_hi`, row-major with one row per acceleration.
#[wasm_bindgen]
pub fn feasibility(
    k_lo: usize,
    k_hi: usize,
    a_lo: u32,
    a_hi: u32,
    acs: f64,
) -> Result<Vec<f64>, JsError> {
    let accels: Vec<f64> = (a_lo..=a_hi).map(f64::from).collect();
    let cells = feasibility_grid(k_lo..=k_hi, &accels, acs).map_err(js_err)?;
    Ok(cells.into_iter().map(|c| c.p_feasible).collect())
}

/// One byte per phase-encode line, 1 where sampled.
#[wasm_bindgen]
pub fn mask_lines(height: usize, accel: f64, acs: f64, seed: u64) -> Result<Vec<u8>, JsError> {
    let m = make_cartesian_mask(height, accel, acs, seed).map_err(js_err)?;
    Ok(m.lines().iter().map(|&b| u8::from(b)).collect())
}

fn phantom_image(size: usize, seed: u64) -> Result<ComplexTensor, JsError> {
    let spec = PhantomSpec {
        size,
        seed,
        paired_contrast: false,
        ..PhantomSpec::default()
    };
    Ok(generate_phantom(&spec).map_err(js_err)?.0)
}

/// Magnitude of a `size x size` phantom, row-major.
#[wasm_bindgen]
pub fn phantom(size: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    Ok(phantom_image(size, seed)?.magnitude())
}

/// Magnitude of the inverse transform of the masked k-space of the phantom.
#[wasm_bindgen]
pub fn zero_filled(
    size: usize,
    seed: u64,
    accel: f64,
    acs: f64,
    mask_seed: u64,
) -> Result<Vec<f64>, JsError> {
    let img = phantom_image(size, seed)?;
    let mask = make_cartesian_mask(size, accel, acs, mask_seed).map_err(js_err)?;
    let k = undersample(&fft2c(&img).map_err(js_err)?, &mask).map_err(js_err)?;
    Ok(ifft2c(&k).map_err(js_err)?.magnitude())
}
