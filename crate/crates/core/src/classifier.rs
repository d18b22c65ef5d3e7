//! Image-classifier branch: activation utilities, frame preprocessing and the
//! pluggable backends that turn a frame into a sleepiness probability.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ingest::FrameRecord;

/// Side length of the square network input.
pub const INPUT_SIZE: usize = 224;
pub const INPUT_CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("probability {0} outside [0, 1]")]
pub struct ProbabilityError(pub f64);

/// A value in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Probability(f64);

impl Probability {
    pub const ZERO: Probability = Probability(0.0);
    pub const ONE: Probability = Probability(1.0);

    pub fn new(value: f64) -> Result<Self, ProbabilityError> {
        if (0.0..=1.0).contains(&value) {
            Ok(Self(value))
        } else {
            Err(ProbabilityError(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Probability {
    type Error = ProbabilityError;
    fn try_from(value: f64) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<Probability> for f64 {
    fn from(p: Probability) -> f64 {
        p.0
    }
}

impl fmt::Display for Probability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Logistic function, evaluated without overflow for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn swish(x: f64) -> f64 {
    x * sigmoid(x)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PixelError {
    #[error("image has zero dimension ({width}x{height})")]
    ZeroDimension { width: usize, height: usize },
    #[error("pixel buffer has {actual} bytes, expected {expected}")]
    BufferLength { expected: usize, actual: usize },
}

/// Row-major interleaved RGB bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FramePixels {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl FramePixels {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, PixelError> {
        if width == 0 || height == 0 {
            return Err(PixelError::ZeroDimension { width, height });
        }
        let expected = width * height * INPUT_CHANNELS;
        if data.len() != expected {
            return Err(PixelError::BufferLength {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Result<Self, PixelError> {
        let mut data = Vec::with_capacity(width * height * INPUT_CHANNELS);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    fn at(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * INPUT_CHANNELS + c] as f32
    }
}

/// Network input: `224 x 224 x 3`, row-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessedFrame {
    tensor: Vec<f32>,
}

impl PreprocessedFrame {
    pub const LEN: usize = INPUT_SIZE * INPUT_SIZE * INPUT_CHANNELS;

    pub fn as_slice(&self) -> &[f32] {
        &self.tensor
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.tensor[(y * INPUT_SIZE + x) * INPUT_CHANNELS + c]
    }

    pub fn shape(&self) -> [usize; 3] {
        [INPUT_SIZE, INPUT_SIZE, INPUT_CHANNELS]
    }
}

/// Source coordinate and blend weight for one output axis, using
/// half-pixel centres clamped to the image edge.
fn sample_axis(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f32) {
    let scale = src_len as f64 / dst_len as f64;
    let s = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
    let lo = (s.floor() as usize).min(src_len - 1);
    let hi = (lo + 1).min(src_len - 1);
    (lo, hi, (s - lo as f64) as f32)
}

// Exact when both ends agree, so flat regions stay flat.
fn lerp(a: f32, b: f32, w: f32) -> f32 {
    a + (b - a) * w
}

/// Bilinear resize to the network input size, then rescale by 1/255.
pub fn preprocess(frame: &FramePixels) -> PreprocessedFrame {
    let xs: Vec<_> = (0..INPUT_SIZE).map(|x| sample_axis(x, frame.width, INPUT_SIZE)).collect();
    let ys: Vec<_> = (0..INPUT_SIZE).map(|y| sample_axis(y, frame.height, INPUT_SIZE)).collect();
    let mut tensor = Vec::with_capacity(PreprocessedFrame::LEN);
    for &(y0, y1, wy) in &ys {
        for &(x0, x1, wx) in &xs {
            for c in 0..INPUT_CHANNELS {
                let top = lerp(frame.at(x0, y0, c), frame.at(x1, y0, c), wx);
                let bottom = lerp(frame.at(x0, y1, c), frame.at(x1, y1, c), wx);
                let v = lerp(top, bottom, wy) / 255.0;
                tensor.push(v.clamp(0.0, 1.0));
            }
        }
    }
    PreprocessedFrame { tensor }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Scripted,
    Constant,
    Model,
}

impl Backend {
    pub fn name(self) -> &'static str {
        match self {
            Backend::Scripted => "scripted",
            Backend::Constant => "constant",
            Backend::Model => "model",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    #[serde(default)]
    pub backend: Backend,
    #[serde(default = "default_constant")]
    pub constant_value: Probability,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_path: Option<PathBuf>,
}

fn default_constant() -> Probability {
    Probability::ZERO
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Scripted,
            constant_value: Probability::ZERO,
            model_path: None,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        match (self.backend, &self.model_path) {
            (Backend::Model, None) => Err(ClassifierError::Config(
                "model backend requires model_path".into(),
            )),
            (Backend::Scripted | Backend::Constant, Some(_)) => Err(ClassifierError::Config(format!(
                "model_path is only valid for the model backend, not {}",
                self.backend.name()
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ClassifierError {
    #[error("classifier config: {0}")]
    Config(String),
    #[error("{backend} backend: frame at t_ms={t_ms} carries no probability")]
    MissingProbability { backend: &'static str, t_ms: u64 },
    #[error("{backend} backend: frame at t_ms={t_ms} carries no image reference")]
    MissingImage { backend: &'static str, t_ms: u64 },
    #[error("{backend} backend: cannot read image {path}: {message}")]
    Image {
        backend: &'static str,
        path: PathBuf,
        message: String,
    },
    #[error("{backend} backend: {message}")]
    Model { backend: &'static str, message: String },
    #[error("{backend} backend: output {value} is not a probability")]
    InvalidOutput { backend: &'static str, value: f64 },
    #[error("{backend} backend: preprocessed input not supported")]
    Unsupported { backend: &'static str },
}

/// What a backend is asked to classify.
#[derive(Debug, Clone, Copy)]
pub enum ClassifierInput<'a> {
    Record(&'a FrameRecord),
    Pixels(&'a PreprocessedFrame),
}

/// A per-frame sleepiness classifier. Instances are not shared between
/// threads concurrently; the pipeline serializes calls.
pub trait Classifier: Send {
    fn backend(&self) -> Backend;
    fn classify(&mut self, input: ClassifierInput<'_>) -> Result<Probability, ClassifierError>;
}

/// Echoes the probability embedded in each stream record.
#[derive(Debug, Default, Clone, Copy)]
pub struct ScriptedClassifier;

impl Classifier for ScriptedClassifier {
    fn backend(&self) -> Backend {
        Backend::Scripted
    }

    fn classify(&mut self, input: ClassifierInput<'_>) -> Result<Probability, ClassifierError> {
        match input {
            ClassifierInput::Record(rec) => rec.probability.ok_or(ClassifierError::MissingProbability {
                backend: "scripted",
                t_ms: rec.t_ms,
            }),
            ClassifierInput::Pixels(_) => Err(ClassifierError::Unsupported { backend: "scripted" }),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantClassifier(pub Probability);

impl Classifier for ConstantClassifier {
    fn backend(&self) -> Backend {
        Backend::Constant
    }

    fn classify(&mut self, _input: ClassifierInput<'_>) -> Result<Probability, ClassifierError> {
        Ok(self.0)
    }
}

/// Loads an image file and converts it to RGB pixels.
pub fn load_pixels(path: &Path) -> Result<FramePixels, ClassifierError> {
    let err = |message: String| ClassifierError::Image {
        backend: "model",
        path: path.to_path_buf(),
        message,
    };
    let img = image::open(path).map_err(|e| err(e.to_string()))?.to_rgb8();
    let (w, h) = img.dimensions();
    FramePixels::new(w as usize, h as usize, img.into_raw()).map_err(|e| err(e.to_string()))
}

#[cfg(feature = "onnx")]
pub use model::ModelClassifier;

#[cfg(feature = "onnx")]
mod model {
    use std::path::{Path, PathBuf};

    use tract_onnx::prelude::*;

    use super::*;

    pub const INPUT_NAME: &str = "input";
    pub const OUTPUT_NAME: &str = "prob";

    type Plan = std::sync::Arc<TypedRunnableModel>;

    /// Runs an exported network (`input`: 1x224x224x3, `prob`: 1x1).
    pub struct ModelClassifier {
        plan: Plan,
        image_root: PathBuf,
    }

    fn model_err(e: impl std::fmt::Display) -> ClassifierError {
        ClassifierError::Model {
            backend: "model",
            message: e.to_string(),
        }
    }

    impl ModelClassifier {
        /// `image_root` resolves relative `img` references of stream records.
        pub fn load(path: &Path, image_root: impl Into<PathBuf>) -> Result<Self, ClassifierError> {
            let model = tract_onnx::onnx()
                .model_for_path(path)
                .map_err(|e| model_err(format!("{}: {e}", path.display())))?;
            let inputs = model.input_outlets().map_err(model_err)?;
            let outputs = model.output_outlets().map_err(model_err)?;
            if inputs.len() != 1 || model.node(inputs[0].node).name != INPUT_NAME {
                return Err(model_err(format!("expected a single input named {INPUT_NAME:?}")));
            }
            let out_name = model.outlet_label(outputs[0]).unwrap_or(&model.node(outputs[0].node).name);
            if outputs.len() != 1 || out_name != OUTPUT_NAME {
                return Err(model_err(format!("expected a single output named {OUTPUT_NAME:?}, found {out_name:?}")));
            }
            let plan = model
                .with_input_fact(0, f32::fact([1, INPUT_SIZE, INPUT_SIZE, INPUT_CHANNELS]).into())
                .and_then(|m| m.into_optimized())
                .and_then(|m| m.into_runnable())
                .map_err(model_err)?;
            Ok(Self {
                plan,
                image_root: image_root.into(),
            })
        }

        pub fn infer(&self, frame: &PreprocessedFrame) -> Result<Probability, ClassifierError> {
            let input = tract_ndarray::Array4::from_shape_vec(
                (1, INPUT_SIZE, INPUT_SIZE, INPUT_CHANNELS),
                frame.as_slice().to_vec(),
            )
            .map_err(model_err)?;
            let outputs = self
                .plan
                .run(tvec!(Tensor::from(input).into()))
                .map_err(model_err)?;
            let view = outputs[0].to_plain_array_view::<f32>().map_err(model_err)?;
            if view.len() != 1 {
                return Err(model_err(format!("output has {} elements, expected 1", view.len())));
            }
            let value = *view.iter().next().expect("one element") as f64;
            Probability::new(value).map_err(|_| ClassifierError::InvalidOutput { backend: "model", value })
        }
    }

    impl Classifier for ModelClassifier {
        fn backend(&self) -> Backend {
            Backend::Model
        }

        fn classify(&mut self, input: ClassifierInput<'_>) -> Result<Probability, ClassifierError> {
            match input {
                ClassifierInput::Pixels(frame) => self.infer(frame),
                ClassifierInput::Record(rec) => {
                    let rel = rec.image_ref.as_ref().ok_or(ClassifierError::MissingImage {
                        backend: "model",
                        t_ms: rec.t_ms,
                    })?;
                    let pixels = load_pixels(&self.image_root.join(rel))?;
                    self.infer(&preprocess(&pixels))
                }
            }
        }
    }
}

/// Builds the backend named by `cfg`. Relative paths resolve against `base_dir`.
pub fn build_classifier(cfg: &ClassifierConfig, base_dir: &Path) -> Result<Box<dyn Classifier>, ClassifierError> {
    cfg.validate()?;
    match cfg.backend {
        Backend::Scripted => Ok(Box::new(ScriptedClassifier)),
        Backend::Constant => Ok(Box::new(ConstantClassifier(cfg.constant_value))),
        Backend::Model => build_model(cfg, base_dir),
    }
}

#[cfg(feature = "onnx")]
fn build_model(cfg: &ClassifierConfig, base_dir: &Path) -> Result<Box<dyn Classifier>, ClassifierError> {
    let path = base_dir.join(cfg.model_path.as_ref().expect("validated"));
    Ok(Box::new(ModelClassifier::load(&path, base_dir)?))
}

#[cfg(not(feature = "onnx"))]
fn build_model(_cfg: &ClassifierConfig, _base_dir: &Path) -> Result<Box<dyn Classifier>, ClassifierError> {
    Err(ClassifierError::Model {
        backend: "model",
        message: "built without the `onnx` feature".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sigmoid_fixtures() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(1.0) - 0.731_058_578_630_004_9).abs() < 1e-6);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }

    #[test]
    fn swish_fixtures() {
        assert_eq!(swish(0.0), 0.0);
        assert!((swish(1.0) - 0.731_058_578_630_004_9).abs() < 1e-6);
        assert!((swish(-1.0) + 0.268_941_421_369_995_1).abs() < 1e-6);
    }

    #[test]
    fn swish_grid_minimum_and_asymptote() {
        let min = (0..=200_000)
            .map(|i| swish(-10.0 + i as f64 * 1e-4))
            .fold(f64::INFINITY, f64::min);
        assert!(min >= -0.2785, "{min}");
        for x in [10.0, 50.0, 100.0] {
            assert!((swish(x) / x - 1.0).abs() < 1e-4);
        }
    }

    proptest! {
        #[test]
        fn sigmoid_symmetry(x in -50.0f64..50.0) {
            prop_assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() <= 1e-12);
            prop_assert!((swish(x) - x * sigmoid(x)).abs() <= 1e-12);
        }

        #[test]
        fn sigmoid_monotone(a in -30.0f64..30.0, d in 1e-3f64..5.0) {
            prop_assert!(sigmoid(a) < sigmoid(a + d));
        }
    }

    #[test]
    fn probability_bounds() {
        assert!(Probability::new(1.0).is_ok());
        assert!(Probability::new(-0.01).is_err());
        assert!(Probability::new(f64::NAN).is_err());
        assert!(serde_json::from_str::<Probability>("1.5").is_err());
    }

    #[test]
    fn pixels_reject_zero_dimension() {
        assert_eq!(
            FramePixels::new(0, 4, vec![]),
            Err(PixelError::ZeroDimension { width: 0, height: 4 })
        );
        assert!(matches!(FramePixels::new(2, 2, vec![0; 11]), Err(PixelError::BufferLength { .. })));
    }

    #[test]
    fn constant_white_image() {
        let img = FramePixels::new(64, 64, vec![255; 64 * 64 * 3]).unwrap();
        let out = preprocess(&img);
        assert_eq!(out.shape(), [224, 224, 3]);
        assert_eq!(out.as_slice().len(), PreprocessedFrame::LEN);
        assert!(out.as_slice().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn same_size_resize_is_identity() {
        let img = FramePixels::from_fn(224, 224, |x, y| [(x % 256) as u8, (y % 256) as u8, ((x * y) % 256) as u8]).unwrap();
        let out = preprocess(&img);
        for (i, &b) in img.data().iter().enumerate() {
            assert_eq!(out.as_slice()[i], b as f32 / 255.0);
        }
    }

    #[test]
    fn backend_errors_name_backend() {
        let rec = FrameRecord::probability_only(7, None);
        let err = ScriptedClassifier.classify(ClassifierInput::Record(&rec)).unwrap_err();
        assert!(err.to_string().starts_with("scripted backend"), "{err}");
        let cfg = ClassifierConfig {
            backend: Backend::Model,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(ClassifierError::Config(_))));
    }

    #[test]
    fn scripted_and_constant() {
        let rec = FrameRecord::probability_only(0, Some(Probability::new(0.87).unwrap()));
        assert_eq!(ScriptedClassifier.classify(ClassifierInput::Record(&rec)).unwrap().value(), 0.87);
        let mut c = ConstantClassifier(Probability::ZERO);
        assert_eq!(c.classify(ClassifierInput::Record(&rec)).unwrap(), Probability::ZERO);
    }
}
