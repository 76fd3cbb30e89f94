use wasm_bindgen::prelude::*;

fn js(e: String) -> JsError {
    JsError::new(&e)
}

#[wasm_bindgen(js_name = flopProfile)]
pub fn flop_profile(config_json: &str, height: usize, width: usize) -> Result<String, JsError> {
    crate::flop_profile_json(config_json, height, width).map_err(js)
}

#[wasm_bindgen]
pub struct Demo(crate::Demo);

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(model_seed: u32, clip_seed: u32) -> Result<Demo, JsError> {
        crate::Demo::new(model_seed as u64, clip_seed as u64).map(Demo).map_err(js)
    }

    #[wasm_bindgen(js_name = loadCheckpoint)]
    pub fn load_checkpoint(&mut self, bytes: &[u8]) -> Result<(), JsError> {
        self.0.load_checkpoint(bytes).map_err(js)
    }

    #[wasm_bindgen(js_name = setClip)]
    pub fn set_clip(&mut self, seed: u32) -> Result<(), JsError> {
        self.0.set_clip(seed as u64).map_err(js)
    }

    #[wasm_bindgen(getter)]
    pub fn trained(&self) -> bool {
        self.0.trained()
    }

    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.0.width()
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.0.height()
    }

    #[wasm_bindgen(getter)]
    pub fn frames(&self) -> usize {
        self.0.frames()
    }

    #[wasm_bindgen(js_name = truthRgba)]
    pub fn truth_rgba(&self, t: usize) -> Result<Vec<u8>, JsError> {
        self.0.truth_rgba(t).map_err(js)
    }

    #[wasm_bindgen(js_name = trackedRgba)]
    pub fn tracked_rgba(&mut self, t: usize) -> Result<Vec<u8>, JsError> {
        self.0.tracked_rgba(t).map_err(js)
    }

    #[wasm_bindgen(js_name = heatmapRgba)]
    pub fn heatmap_rgba(&self, foreground: bool) -> Result<Vec<u8>, JsError> {
        self.0.heatmap_rgba(foreground).map_err(js)
    }
}
