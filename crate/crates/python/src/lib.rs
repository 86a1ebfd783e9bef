//! Python bindings: `import rigidity`.

use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;

use rigidity_core::error::Error;
use rigidity_core::filters::{self, FilterParams, SeriesKind};
use rigidity_core::panel::{self, LoadOptions, Price};
use rigidity_core::report::{self, Config};
use rigidity_core::{inference, magnitude, rigidity as rig, simgen};

fn to_py(e: impl Into<Error>) -> PyErr {
    let e = e.into();
    let msg = format!("[{}] {e}", e.stage());
    if e.is_numerical() {
        PyArithmeticError::new_err(msg)
    } else {
        PyValueError::new_err(msg)
    }
}

fn prices(v: &[i64]) -> Vec<Price> {
    v.iter().map(|&c| Price(c)).collect()
}

fn cents(v: &[Price]) -> Vec<i64> {
    v.iter().map(|p| p.0).collect()
}

/// Sales filter A on minor-unit prices. Returns (filtered, sale_flags).
#[pyfunction]
#[pyo3(signature = (prices_minor, max_sale_len = 6))]
fn filter_sales_a(prices_minor: Vec<i64>, max_sale_len: usize) -> PyResult<(Vec<i64>, Vec<bool>)> {
    let (f, flags) = filters::filter_sales_a(&prices(&prices_minor), max_sale_len).map_err(to_py)?;
    Ok((cents(&f), flags))
}

/// Rolling-mode reference prices on minor-unit prices.
#[pyfunction]
#[pyo3(signature = (prices_minor, window = 13, align_radius = 6))]
fn reference_prices(prices_minor: Vec<i64>, window: usize, align_radius: usize) -> PyResult<Vec<i64>> {
    let r = filters::reference_prices(&prices(&prices_minor), window, align_radius).map_err(to_py)?;
    Ok(cents(&r))
}

#[pyfunction]
fn implied_duration(f: f64) -> PyResult<f64> {
    rig::implied_duration(f).map_err(to_py)
}

/// Returns (weeks, n_retained, n_dropped).
#[pyfunction]
fn expected_duration(freqs: Vec<f64>) -> PyResult<(f64, usize, usize)> {
    let e = rig::expected_duration(&freqs).map_err(to_py)?;
    Ok((e.weeks, e.n_retained, e.n_dropped))
}

#[pyfunction]
fn kurtosis(x: Vec<f64>) -> PyResult<f64> {
    magnitude::kurtosis(&x).map_err(to_py)
}

/// Returns (chi2, p_value).
#[pyfunction]
fn chi2_proportions(c1: u64, n1: u64, c2: u64, n2: u64) -> PyResult<(f64, f64)> {
    let r = inference::chi2_proportions(c1, n1, c2, n2).map_err(to_py)?;
    Ok((r.chi2, r.p_value))
}

/// Returns (w, z, p_value).
#[pyfunction]
fn wilcoxon_rank_sum(x: Vec<f64>, y: Vec<f64>) -> PyResult<(f64, f64, f64)> {
    let r = inference::wilcoxon_rank_sum(&x, &y).map_err(to_py)?;
    Ok((r.w, r.z, r.p_value))
}

/// Synchronization index of a stores x weeks change matrix; None if undefined.
#[pyfunction]
fn fk_index(changes: Vec<Vec<bool>>) -> PyResult<Option<f64>> {
    inference::fk_index(&changes).map_err(to_py)
}

/// A validated weekly price panel.
#[pyclass(name = "PricePanel", frozen)]
struct PyPricePanel {
    inner: panel::PricePanel,
}

#[pymethods]
impl PyPricePanel {
    #[staticmethod]
    #[pyo3(signature = (path, delimiter = ",", minor_units = false, fill_missing = false))]
    fn load(path: &str, delimiter: &str, minor_units: bool, fill_missing: bool) -> PyResult<Self> {
        let cfg = report::InputConfig {
            delimiter: delimiter.into(),
            minor_units,
            fill_missing,
            ..Default::default()
        };
        let opts: LoadOptions = cfg.load_options().map_err(to_py)?;
        let file = std::fs::File::open(path).map_err(|e| PyValueError::new_err(format!("{path}: {e}")))?;
        Ok(Self { inner: panel::load_panel(file, &opts).map_err(to_py)? })
    }

    #[staticmethod]
    #[pyo3(signature = (preset = "canadian", seed = 0))]
    fn simulate(preset: &str, seed: u64) -> PyResult<Self> {
        let cfg = simgen::SimConfig::named(preset).map_err(to_py)?;
        let (inner, _) = simgen::simulate_panel(&cfg, seed).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn n_observations(&self) -> usize {
        self.inner.n_observations()
    }

    #[getter]
    fn stores(&self) -> Vec<String> {
        self.inner.stores.keys().cloned().collect()
    }

    /// (store, product) keys in panel order.
    #[getter]
    fn products(&self) -> Vec<(String, String)> {
        self.inner.products.iter().map(|p| (p.key.store.clone(), p.key.product.clone())).collect()
    }

    fn to_csv(&self, path: &str) -> PyResult<()> {
        let file = std::fs::File::create(path).map_err(|e| PyValueError::new_err(format!("{path}: {e}")))?;
        panel::write_panel(&self.inner, file).map_err(to_py)
    }

    /// Share of each final-digit string, pooled over the panel.
    #[pyo3(signature = (n_digits = 1))]
    fn price_endings(&self, n_digits: u32) -> PyResult<Vec<(String, f64)>> {
        Ok(panel::price_ending_histogram(&self.inner, n_digits).map_err(to_py)?.into_iter().collect())
    }

    /// Change frequency per store for one series kind: {store: (changes, transitions)}.
    #[pyo3(signature = (kind = "transaction", max_sale_len = 6))]
    fn change_counts(&self, kind: &str, max_sale_len: usize) -> PyResult<Vec<(String, usize, usize)>> {
        let kind = SeriesKind::ALL
            .into_iter()
            .find(|k| k.as_str() == kind)
            .ok_or_else(|| PyValueError::new_err(format!("unknown series kind `{kind}`")))?;
        let params = FilterParams { max_sale_len, ..Default::default() };
        let results = report::filter_panel(&self.inner, &params, filters::EndpointPolicy::None).map_err(to_py)?;
        let table = rig::rigidity_table(&results, rig::Grouping::Store, &[kind]).map_err(to_py)?;
        Ok(table
            .into_iter()
            .map(|r| (r.group.store.unwrap_or_default(), r.n_changes, r.n_transitions))
            .collect())
    }

    /// Runs the full pipeline; returns the bundle as a JSON string.
    #[pyo3(signature = (config_toml = None))]
    fn analyze(&self, py: Python<'_>, config_toml: Option<&str>) -> PyResult<String> {
        let cfg = match config_toml {
            Some(t) => Config::from_toml(t).map_err(to_py)?,
            None => Config::default(),
        };
        let bundle = py
            .detach(|| report::analyze_panel(&self.inner, String::new(), &cfg))
            .map_err(to_py)?;
        Ok(bundle.to_json())
    }

    fn __len__(&self) -> usize {
        self.inner.products.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "PricePanel(stores={}, products={}, observations={})",
            self.inner.stores.len(),
            self.inner.products.len(),
            self.inner.n_observations()
        )
    }
}

/// Runs the pipeline from a TOML config; returns the bundle as JSON.
#[pyfunction]
fn run_pipeline(py: Python<'_>, config_toml: &str) -> PyResult<String> {
    let cfg = Config::from_toml(config_toml).map_err(to_py)?;
    let bundle = py.detach(|| report::run_pipeline(&cfg)).map_err(to_py)?;
    Ok(bundle.to_json())
}

#[pymodule]
pub fn rigidity(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPricePanel>()?;
    m.add_function(wrap_pyfunction!(filter_sales_a, m)?)?;
    m.add_function(wrap_pyfunction!(reference_prices, m)?)?;
    m.add_function(wrap_pyfunction!(implied_duration, m)?)?;
    m.add_function(wrap_pyfunction!(expected_duration, m)?)?;
    m.add_function(wrap_pyfunction!(kurtosis, m)?)?;
    m.add_function(wrap_pyfunction!(chi2_proportions, m)?)?;
    m.add_function(wrap_pyfunction!(wilcoxon_rank_sum, m)?)?;
    m.add_function(wrap_pyfunction!(fk_index, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn price_conversions_roundtrip() {
        let v = vec![199, 1000, 1];
        assert_eq!(cents(&prices(&v)), v);
    }

    #[test]
    fn numerical_errors_map_to_arithmetic_error() {
        Python::initialize();
        Python::attach(|py| {
            let e = to_py(rigidity_core::error::StatsError::ZeroVariance);
            assert!(e.is_instance_of::<PyArithmeticError>(py));
            assert!(e.to_string().contains("[statistics]"));
            let e = to_py(rigidity_core::error::PanelError::Empty);
            assert!(e.is_instance_of::<PyValueError>(py));
        });
    }
}
