//! Browser bindings for the SDGNN demo page. Results cross the boundary as
//! JSON strings.

mod demo;

use wasm_bindgen::prelude::*;

use sdgnn::model::Mode;

pub use demo::{compare_mechanisms, EpochReport, MechanismComparison, SynthRun, TwinView};

fn to_js<T: serde::Serialize>(value: demo::DemoResult<T>) -> Result<String, JsError> {
    let value = value.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

/// Attention weights and gates on the edges into one node of a random star.
#[wasm_bindgen(js_name = compareMechanisms)]
pub fn compare_mechanisms_js(seed: u32, neighbors: u32, scale: f64) -> Result<String, JsError> {
    to_js(compare_mechanisms(u64::from(seed), neighbors as usize, scale))
}

#[wasm_bindgen]
pub struct Trainer {
    run: SynthRun,
}

#[wasm_bindgen]
impl Trainer {
    /// `mode` is `attention`, `gating` or `collapsed`.
    #[wasm_bindgen(constructor)]
    pub fn new(mode: &str, seed: u32, n_train: u32, lr: f64) -> Result<Trainer, JsError> {
        let mode: Mode = mode.parse().map_err(|e: sdgnn::Error| JsError::new(&e.to_string()))?;
        let run = SynthRun::new(mode, u64::from(seed), n_train as usize, lr).map_err(|e| JsError::new(&e))?;
        Ok(Trainer { run })
    }

    /// Runs one epoch; returns `{epoch, loss, test_auroc}`.
    pub fn step(&mut self) -> Result<String, JsError> {
        to_js(self.run.step())
    }

    pub fn pairs(&self) -> u32 {
        self.run.pairs() as u32
    }

    /// The positive and negative twin of a held-out pair, with attention.
    pub fn twins(&self, pair: u32) -> Result<String, JsError> {
        to_js(self.run.twins(pair as usize))
    }
}
