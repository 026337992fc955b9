//! WebAssembly bindings for the static page in `www/`.

pub mod view;

use bertdesk::tokenizer::Vocabulary;
use wasm_bindgen::prelude::*;

fn js(e: bertdesk::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// A vocabulary trained in the browser.
#[wasm_bindgen]
pub struct Tokenizer {
    vocab: Vocabulary,
}

#[wasm_bindgen]
impl Tokenizer {
    #[wasm_bindgen(constructor)]
    pub fn new(corpus: &str, vocab_size: usize, cased: bool) -> Result<Tokenizer, JsError> {
        Ok(Tokenizer {
            vocab: view::train(corpus, vocab_size, cased).map_err(js)?,
        })
    }

    pub fn size(&self) -> usize {
        self.vocab.len()
    }

    pub fn alignment(&self, text: &str) -> String {
        view::alignment(&self.vocab, text)
    }

    pub fn masking(&self, text: &str, seed: u32, select_prob: f64) -> Result<String, JsError> {
        view::masking(&self.vocab, text, seed.into(), select_prob).map_err(js)
    }
}

#[wasm_bindgen(js_name = lrCurve)]
pub fn lr_curve(total: u32, warmup: u32, base_lr: f64) -> Result<Vec<f64>, JsError> {
    view::lr_curve(total.into(), warmup.into(), base_lr).map_err(js)
}
