//! Python bindings. Images cross the boundary as `Image` objects built from
//! flat row-major RGB float lists; feature rows and labels are plain lists.

use std::path::PathBuf;

use exemplar::augment::{self, ColorPCABasis};
use exemplar::experiment::{self, EvalData, PipelineConfig};
use exemplar::features;
use exemplar::imaging::{self, LabeledImage, Rect};
use exemplar::net::{self, NetworkSpec};
use exemplar::sampler::{self, SamplerConfig, SeedPatch};
use exemplar::svm;
use exemplar::synth;
use exemplar::trainer::{self, TrainConfig, TrainLog};
use exemplar::Error;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Contract(_) => PyValueError::new_err(e.to_string()),
        Error::Io { .. } | Error::Format { .. } => PyOSError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for exemplar::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// RGB image with values in [0, 1].
#[pyclass(name = "Image", from_py_object)]
#[derive(Clone)]
pub struct PyImage {
    inner: imaging::Image,
}

#[pymethods]
impl PyImage {
    /// `data` holds `height * width * 3` values, row-major with interleaved channels.
    #[new]
    fn new(height: usize, width: usize, data: Vec<f32>) -> PyResult<Self> {
        Ok(PyImage { inner: imaging::Image::from_vec(height, width, data).py()? })
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    fn data(&self) -> Vec<f32> {
        self.inner.data().to_vec()
    }

    fn pixel(&self, y: usize, x: usize) -> PyResult<[f32; 3]> {
        if y >= self.inner.height() || x >= self.inner.width() {
            return Err(PyValueError::new_err("pixel index out of range"));
        }
        Ok(self.inner.get(y, x))
    }

    fn __repr__(&self) -> String {
        format!("Image({}x{})", self.inner.height(), self.inner.width())
    }
}

fn images(list: &[PyImage]) -> Vec<imaging::Image> {
    list.iter().map(|i| i.inner.clone()).collect()
}

fn wrap(list: Vec<imaging::Image>) -> Vec<PyImage> {
    list.into_iter().map(|inner| PyImage { inner }).collect()
}

/// Random transformation parameters.
#[pyclass(name = "TransformSpec", from_py_object)]
#[derive(Clone)]
pub struct PyTransformSpec {
    inner: augment::TransformSpec,
}

#[pymethods]
impl PyTransformSpec {
    #[new]
    #[pyo3(signature = (dx=0.0, dy=0.0, scale=1.0, color_factors=[1.0, 1.0, 1.0], contrast_power=1.0))]
    fn new(dx: f32, dy: f32, scale: f32, color_factors: [f32; 3], contrast_power: f32) -> Self {
        PyTransformSpec {
            inner: augment::TransformSpec { dx, dy, scale, color_factors, contrast_power },
        }
    }

    #[staticmethod]
    fn identity() -> Self {
        PyTransformSpec { inner: augment::TransformSpec::IDENTITY }
    }

    /// `n` specs drawn from stream `stream` of `seed`.
    #[staticmethod]
    #[pyo3(signature = (n, seed, stream=0))]
    fn sample(n: usize, seed: u64, stream: u64) -> Vec<Self> {
        let mut rng = exemplar::rng::substream(seed, stream);
        (0..n).map(|_| PyTransformSpec { inner: augment::sample_transform_spec(&mut rng) }).collect()
    }

    fn is_valid(&self) -> bool {
        self.inner.is_valid()
    }

    fn to_list(&self) -> [f32; 7] {
        self.inner.to_array()
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

/// Principal color directions of a set of patches.
#[pyclass(name = "ColorBasis", from_py_object)]
#[derive(Clone)]
pub struct PyColorBasis {
    inner: ColorPCABasis,
}

fn as_seed_patches(patches: &[PyImage]) -> Vec<SeedPatch> {
    patches
        .iter()
        .enumerate()
        .map(|(i, p)| SeedPatch {
            pixels: p.inner.clone(),
            source_image_index: i,
            source_rect: Rect::full(&p.inner),
            source_scale: 1.0,
            energy: 0.0,
            fallback: false,
        })
        .collect()
}

#[pymethods]
impl PyColorBasis {
    #[staticmethod]
    fn fit(patches: Vec<PyImage>) -> PyResult<Self> {
        Ok(PyColorBasis { inner: augment::fit_color_pca(&as_seed_patches(&patches)).py()? })
    }

    #[getter]
    fn components(&self) -> [[f64; 3]; 3] {
        self.inner.components
    }

    #[getter]
    fn eigenvalues(&self) -> [f64; 3] {
        self.inner.eigenvalues
    }

    #[getter]
    fn mean_rgb(&self) -> [f64; 3] {
        self.inner.mean_rgb
    }
}

#[pyfunction]
fn apply_transform(patch: &PyImage, spec: &PyTransformSpec, basis: &PyColorBasis) -> PyResult<PyImage> {
    Ok(PyImage { inner: augment::apply_transform(&patch.inner, &spec.inner, &basis.inner).py()? })
}

/// Surrogate classes built from seed patches.
#[pyclass(name = "SurrogateDataset")]
pub struct PySurrogateDataset {
    inner: augment::SurrogateDataset,
}

#[pymethods]
impl PySurrogateDataset {
    /// `k` samples for each of `n_classes` seed patches sampled from `corpus`.
    #[staticmethod]
    fn build(py: Python<'_>, corpus: Vec<PyImage>, n_classes: usize, k: usize, seed: u64) -> PyResult<Self> {
        let corpus = images(&corpus);
        let inner = py
            .detach(|| experiment::build_surrogate(&corpus, n_classes, k, &SamplerConfig::default(), seed))
            .py()?;
        Ok(PySurrogateDataset { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PySurrogateDataset { inner: augment::load_dataset(&path).py()? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        augment::save_dataset(&self.inner, &path).py()
    }

    #[getter]
    fn n_classes(&self) -> usize {
        self.inner.n_classes
    }

    #[getter]
    fn per_class_count(&self) -> usize {
        self.inner.per_class_count
    }

    #[getter]
    fn patch_size(&self) -> usize {
        self.inner.patch_size
    }

    #[getter]
    fn pixel_mean(&self) -> Vec<f32> {
        self.inner.pixel_mean.clone()
    }

    fn labels(&self) -> Vec<u32> {
        self.inner.labels.clone()
    }

    /// Channel-planar, mean-subtracted sample `i`.
    fn sample(&self, i: usize) -> PyResult<Vec<f32>> {
        if i >= self.inner.len() {
            return Err(PyValueError::new_err("sample index out of range"));
        }
        Ok(self.inner.sample(i).to_vec())
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

fn log_dict<'py>(py: Python<'py>, log: &TrainLog) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("epochs", log.epochs.len())?;
    d.set_item("lr", log.epochs.iter().map(|r| r.lr).collect::<Vec<_>>())?;
    d.set_item("train_loss", log.epochs.iter().map(|r| r.train_loss).collect::<Vec<_>>())?;
    d.set_item("train_err", log.epochs.iter().map(|r| r.train_err).collect::<Vec<_>>())?;
    d.set_item("val_err", log.epochs.iter().map(|r| r.val_err).collect::<Vec<_>>())?;
    d.set_item("lr_drops", log.lr_drops.clone())?;
    d.set_item("pretrain_epochs", log.pretrain_epochs.len())?;
    d.set_item("best_val_err", log.best_val_err)?;
    d.set_item("status", format!("{:?}", log.status))?;
    Ok(d)
}

/// Trained (or random) network together with the pixel mean its inputs need.
#[pyclass(name = "Network")]
pub struct PyNetwork {
    inner: net::Network<f32>,
    pixel_mean: Vec<f32>,
}

#[pymethods]
impl PyNetwork {
    /// Untrained default network with `Normal(0, std^2)` weights.
    #[staticmethod]
    #[pyo3(signature = (n_classes, seed, std=net::INIT_STD))]
    fn random(n_classes: usize, seed: u64, std: f64) -> PyResult<Self> {
        let inner = net::Network::init(NetworkSpec::default_for(n_classes), std, seed).py()?;
        let pixel_mean = vec![0.0; inner.spec().input.0 * inner.spec().input.1 * inner.spec().input.2];
        Ok(PyNetwork { inner, pixel_mean })
    }

    /// Train the default network on `dataset`. Returns the network and its log.
    #[staticmethod]
    #[pyo3(signature = (dataset, seed=0, max_epochs=60, batch_size=128, pretrain=true))]
    fn train<'py>(
        py: Python<'py>,
        dataset: &PySurrogateDataset,
        seed: u64,
        max_epochs: usize,
        batch_size: usize,
        pretrain: bool,
    ) -> PyResult<(Self, Bound<'py, PyDict>)> {
        let cfg = TrainConfig { rng_seed: seed, max_epochs, batch_size, pretrain, ..TrainConfig::default() };
        let ds = &dataset.inner;
        let out = py.detach(|| trainer::train(&NetworkSpec::default_for(ds.n_classes), ds, &cfg)).py()?;
        let log = log_dict(py, &out.log)?;
        Ok((PyNetwork { inner: out.net, pixel_mean: ds.pixel_mean.clone() }, log))
    }

    /// Load a checkpoint; the pixel mean comes from the dataset file it was trained on.
    #[staticmethod]
    fn load(path: PathBuf, dataset_path: PathBuf) -> PyResult<Self> {
        let inner = net::load_checkpoint(&path).py()?;
        let (_, pixel_mean) = augment::read_dataset_mean(&dataset_path).py()?;
        Ok(PyNetwork { inner, pixel_mean })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        net::save_checkpoint(&self.inner, &path).py()
    }

    #[getter]
    fn n_classes(&self) -> usize {
        self.inner.n_classes()
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        features::feature_dim(&self.inner)
    }

    /// Class probabilities for one training-size patch.
    fn predict_probs(&self, patch: &PyImage) -> PyResult<Vec<f32>> {
        let (c, h, w) = self.inner.spec().input;
        if patch.inner.height() != h || patch.inner.width() != w {
            return Err(PyValueError::new_err(format!("expected a {h}x{w} patch")));
        }
        let planar: Vec<f32> = patch.inner.to_planar().iter().zip(&self.pixel_mean).map(|(v, m)| v - m).collect();
        let x = net::Tensor4::from_vec(1, c, h, w, planar).py()?;
        Ok(self.inner.predict_probs(&x).py()?.data)
    }

    fn extract_features(&self, image: &PyImage) -> PyResult<Vec<f32>> {
        features::extract_features(&self.inner, &image.inner, &self.pixel_mean).py()
    }

    fn extract_batch(&self, py: Python<'_>, images_in: Vec<PyImage>) -> PyResult<Vec<Vec<f32>>> {
        let imgs = images(&images_in);
        py.detach(|| features::extract_batch(&self.inner, &imgs, &self.pixel_mean)).py()
    }
}

/// One-vs-rest linear SVM.
#[pyclass(name = "LinearModel")]
pub struct PyLinearModel {
    inner: svm::LinearModel,
}

#[pymethods]
impl PyLinearModel {
    #[staticmethod]
    #[pyo3(signature = (rows, labels, c, seed=0, steps=svm::DEFAULT_STEPS))]
    fn train(py: Python<'_>, rows: Vec<Vec<f32>>, labels: Vec<u32>, c: f64, seed: u64, steps: usize) -> PyResult<Self> {
        let inner = py.detach(|| svm::train_svm(&rows, &labels, c, steps, seed)).py()?;
        Ok(PyLinearModel { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyLinearModel { inner: svm::load_model(&path).py()? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        svm::save_model(&self.inner, &path).py()
    }

    #[getter]
    fn classes(&self) -> Vec<u32> {
        self.inner.classes.clone()
    }

    fn predict(&self, rows: Vec<Vec<f32>>) -> Vec<u32> {
        self.inner.predict_all(&rows)
    }

    fn evaluate(&self, rows: Vec<Vec<f32>>, labels: Vec<u32>) -> PyResult<f64> {
        svm::evaluate(&self.inner, &rows, &labels).py()
    }
}

/// Best C by stratified k-fold cross-validation; returns `(best_c, [(c, mean accuracy)])`.
#[pyfunction]
#[pyo3(signature = (rows, labels, c_grid=None, folds=svm::DEFAULT_FOLDS, steps=svm::DEFAULT_STEPS, seed=0))]
fn cross_validate_c(
    py: Python<'_>,
    rows: Vec<Vec<f32>>,
    labels: Vec<u32>,
    c_grid: Option<Vec<f64>>,
    folds: usize,
    steps: usize,
    seed: u64,
) -> PyResult<(f64, Vec<(f64, f64)>)> {
    let grid = c_grid.unwrap_or_else(svm::default_c_grid);
    let cv = py.detach(|| svm::cross_validate_c(&rows, &labels, &grid, folds, steps, seed)).py()?;
    Ok((cv.best_c, cv.scores))
}

/// Seed patches sampled from `corpus`, together with the energy threshold used.
#[pyfunction]
#[pyo3(signature = (corpus, n_patches, seed=0, patch_size=32))]
fn sample_patches(corpus: Vec<PyImage>, n_patches: usize, seed: u64, patch_size: usize) -> PyResult<(Vec<PyImage>, f64)> {
    let cfg = SamplerConfig { n_patches, patch_size, rng_seed: seed, ..SamplerConfig::default() };
    let out = sampler::sample(&images(&corpus), &cfg).py()?;
    Ok((wrap(out.patches.into_iter().map(|p| p.pixels).collect()), out.threshold))
}

#[pyfunction]
fn textured_corpus(n: usize, height: usize, width: usize, seed: u64) -> Vec<PyImage> {
    wrap(synth::textured_corpus(n, height, width, seed))
}

/// Labeled 4-class shape images: `(images, labels)`.
#[pyfunction]
#[pyo3(signature = (per_class, seed, side=32))]
fn shape_classes(per_class: usize, seed: u64, side: usize) -> (Vec<PyImage>, Vec<u32>) {
    let set = synth::shape_classes(per_class, side, seed);
    let labels = set.iter().map(|l| l.label.unwrap_or(0)).collect();
    (wrap(set.into_iter().map(|l| l.image).collect()), labels)
}

fn labeled(imgs: &[PyImage], labels: &[u32]) -> PyResult<Vec<LabeledImage>> {
    if imgs.len() != labels.len() {
        return Err(PyValueError::new_err("images and labels differ in length"));
    }
    Ok(imgs.iter().zip(labels).map(|(i, &l)| LabeledImage { image: i.inner.clone(), label: Some(l) }).collect())
}

/// Full run: surrogate data, training, features and SVM accuracy on the
/// downstream split. Returns a dict with the log and the accuracy.
#[pyfunction]
#[pyo3(signature = (corpus, n_classes, k, train_images, train_labels, test_images, test_labels, seed=0, max_epochs=60))]
#[allow(clippy::too_many_arguments)]
fn run_pipeline<'py>(
    py: Python<'py>,
    corpus: Vec<PyImage>,
    n_classes: usize,
    k: usize,
    train_images: Vec<PyImage>,
    train_labels: Vec<u32>,
    test_images: Vec<PyImage>,
    test_labels: Vec<u32>,
    seed: u64,
    max_epochs: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let eval = EvalData { train: labeled(&train_images, &train_labels)?, test: labeled(&test_images, &test_labels)? };
    let corpus = images(&corpus);
    let mut cfg = PipelineConfig::default();
    cfg.train.max_epochs = max_epochs;
    let run = py.detach(|| experiment::run_pipeline(&corpus, n_classes, k, Some(&eval), &cfg, seed)).py()?;
    let d = log_dict(py, &run.log)?;
    let down = run.downstream.expect("evaluation data was given");
    d.set_item("accuracy", down.accuracy)?;
    d.set_item("best_c", down.best_c)?;
    Ok(d)
}

#[pymodule]
pub fn exemplar_cnn(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyImage>()?;
    m.add_class::<PyTransformSpec>()?;
    m.add_class::<PyColorBasis>()?;
    m.add_class::<PySurrogateDataset>()?;
    m.add_class::<PyNetwork>()?;
    m.add_class::<PyLinearModel>()?;
    m.add_function(wrap_pyfunction!(apply_transform, m)?)?;
    m.add_function(wrap_pyfunction!(cross_validate_c, m)?)?;
    m.add_function(wrap_pyfunction!(sample_patches, m)?)?;
    m.add_function(wrap_pyfunction!(textured_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(shape_classes, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
