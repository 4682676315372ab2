//! Experiment configuration: a TOML document with one table per stage.
//!
//! Values are in engineering units (km, dB, dBm, ps/(nm km), GBaud) and are
//! converted to SI only when the simulation objects are built. Every field
//! has a default, so a file only needs the keys it changes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::{convert_units, EngineeringFiber, LinkConfig, PolarizationModel};
use crate::dataset::{tokens_per_sequence, FEATURES_PER_TOKEN};
use crate::dsp::{DspChainConfig, DspMode};
use crate::nn::{AdamConfig, Architecture, FcnnConfig, TrainConfig, TransformerConfig};
use crate::txrx::PulseShape;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkSection {
    pub n_spans: usize,
    pub span_km: f64,
    pub attenuation_db_per_km: f64,
    pub dispersion_ps_per_nm_km: f64,
    pub beta3_ps3_per_km: f64,
    pub n2_m2_per_w: f64,
    pub core_area_um2: f64,
    pub noise_figure_db: f64,
    /// Set to false for a noiseless amplifier chain.
    pub ase: bool,
    pub ssfm_step_m: f64,
    /// `"manakov"` or `"independent-scalar"`.
    pub polarization_model: String,
}

impl Default for LinkSection {
    fn default() -> Self {
        Self {
            n_spans: 4,
            span_km: 80.0,
            attenuation_db_per_km: 0.2,
            dispersion_ps_per_nm_km: 17.0,
            beta3_ps3_per_km: 0.0,
            n2_m2_per_w: 2.6e-20,
            core_area_um2: 80.0,
            noise_figure_db: 4.5,
            ase: true,
            ssfm_step_m: 100.0,
            polarization_model: "manakov".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TxSection {
    pub symbol_rate_gbaud: f64,
    pub launch_power_dbm: f64,
    pub rolloff: f64,
    pub sps: usize,
    pub filter_span_symbols: usize,
    pub linewidth_hz: f64,
    pub wavelength_nm: f64,
    pub frequency_offset_hz: f64,
}

impl Default for TxSection {
    fn default() -> Self {
        Self {
            symbol_rate_gbaud: 10.0,
            launch_power_dbm: 0.0,
            rolloff: 0.18,
            sps: 8,
            filter_span_symbols: 16,
            linewidth_hz: 1e5,
            wavelength_nm: 1550.0,
            frequency_offset_hz: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RxSection {
    /// Adds white noise before the receiver DSP so that the electrical SNR
    /// over the symbol-rate bandwidth equals `snr_db`. This stands in for
    /// the transceiver noise floor.
    pub noise_loading: bool,
    pub snr_db: f64,
}

impl Default for RxSection {
    fn default() -> Self {
        Self {
            noise_loading: true,
            snr_db: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DspSection {
    pub dbp_steps_per_span: usize,
    pub dbp_nl_scaling: f64,
    pub cpr_test_phases: usize,
    pub cpr_window: usize,
    pub frequency_offset_compensation: bool,
    /// Symbols dropped at each frame end before metrics are computed.
    pub edge_guard: usize,
}

impl Default for DspSection {
    fn default() -> Self {
        Self {
            dbp_steps_per_span: 10,
            dbp_nl_scaling: 1.0,
            cpr_test_phases: 64,
            cpr_window: 32,
            frequency_offset_compensation: true,
            edge_guard: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Half-width `n` of the symbol window; each sequence spans `2n + 1`
    /// symbols and `2(2n + 1)` tokens.
    pub window_n: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub fcnn_hidden: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub chunk_size: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            window_n: 2,
            n_heads: 8,
            n_layers: 1,
            d_ff: 1024,
            dropout: 0.1,
            fcnn_hidden: 100,
            batch_size: 1024,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 100,
            chunk_size: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    pub n_symbols: usize,
    /// Any of `"linear-eq"`, `"dbp"`, `"fcnn"`, `"transformer"`.
    pub methods: Vec<String>,
    /// `"launch_power_dbm"` or `"n_spans"`.
    pub sweep_variable: String,
    pub sweep_values: Vec<f64>,
    /// Write measured runtimes into the results CSV. Off by default so that
    /// identical configurations produce identical files; runtimes then go
    /// to a separate `runtime.csv`.
    pub runtime_in_csv: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 1,
            n_symbols: 1 << 15,
            methods: vec!["linear-eq".into(), "dbp".into(), "fcnn".into(), "transformer".into()],
            sweep_variable: "launch_power_dbm".into(),
            sweep_values: vec![-4.0, -3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0],
            runtime_in_csv: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub link: LinkSection,
    pub tx: TxSection,
    pub rx: RxSection,
    pub dsp: DspSection,
    pub model: ModelSection,
    pub run: RunSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    LinearEq,
    Dbp,
    Fcnn,
    Transformer,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::LinearEq, Method::Dbp, Method::Fcnn, Method::Transformer];

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "linear-eq" => Method::LinearEq,
            "dbp" => Method::Dbp,
            "fcnn" => Method::Fcnn,
            "transformer" => Method::Transformer,
            other => return Err(Error::Config(format!("unknown method {other:?}"))),
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::LinearEq => "linear-eq",
            Method::Dbp => "dbp",
            Method::Fcnn => "fcnn",
            Method::Transformer => "transformer",
        }
    }

    pub fn is_neural(self) -> bool {
        matches!(self, Method::Fcnn | Method::Transformer)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVariable {
    LaunchPowerDbm,
    NSpans,
}

impl SweepVariable {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "launch_power_dbm" => Ok(Self::LaunchPowerDbm),
            "n_spans" => Ok(Self::NSpans),
            other => Err(Error::Config(format!("unknown sweep variable {other:?}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::LaunchPowerDbm => "launch_power_dbm",
            Self::NSpans => "n_spans",
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration always serializes")
    }

    /// FNV-1a hash of the canonical TOML form, used to tag errors and
    /// outputs with the configuration that produced them.
    pub fn hash(&self) -> u64 {
        crate::dataset::fnv1a(self.to_toml().as_bytes())
    }

    /// Applies `section.key=value` overrides. Values are parsed as TOML
    /// literals, falling back to a plain string.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut doc: toml::Table = toml::from_str(&self.to_toml()).expect("round trip");
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            let value = parse_literal(raw.trim());
            let path: Vec<&str> = key.trim().split('.').collect();
            let (last, parents) = path.split_last().expect("split yields at least one item");
            let mut table = &mut doc;
            for p in parents {
                table = table
                    .get_mut(*p)
                    .and_then(toml::Value::as_table_mut)
                    .ok_or_else(|| Error::Config(format!("unknown section {p:?} in override {o:?}")))?;
            }
            if !table.contains_key(*last) {
                return Err(Error::Config(format!("unknown key {key:?} in override")));
            }
            // Integers are accepted where floats are expected.
            let value = match (&table[*last], value) {
                (toml::Value::Float(_), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
                (_, v) => v,
            };
            table.insert((*last).to_string(), value);
        }
        let text = toml::to_string(&doc).expect("table serializes");
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        // TOML integers are signed 64-bit.
        if self.run.seed > i64::MAX as u64 {
            return bad(format!("run.seed {} exceeds {}", self.run.seed, i64::MAX));
        }
        let l = &self.link;
        if l.n_spans == 0 {
            return bad("link.n_spans must be at least 1".into());
        }
        for (name, v) in [
            ("link.span_km", l.span_km),
            ("link.core_area_um2", l.core_area_um2),
            ("link.ssfm_step_m", l.ssfm_step_m),
            ("tx.symbol_rate_gbaud", self.tx.symbol_rate_gbaud),
            ("tx.wavelength_nm", self.tx.wavelength_nm),
            ("model.learning_rate", self.model.learning_rate),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("link.attenuation_db_per_km", l.attenuation_db_per_km),
            ("link.n2_m2_per_w", l.n2_m2_per_w),
            ("tx.linewidth_hz", self.tx.linewidth_hz),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if l.ssfm_step_m > l.span_km * 1e3 {
            return bad("link.ssfm_step_m exceeds the span length".into());
        }
        PolarizationModel::parse(&l.polarization_model).map_err(|e| Error::Config(e.to_string()))?;
        self.pulse_shape().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.dsp_config(DspMode::Dbp).validate().map_err(|e| Error::Config(e.to_string()))?;
        let r = &self.run;
        if r.n_symbols == 0 || !r.n_symbols.is_power_of_two() {
            return bad(format!("run.n_symbols must be a power of two, got {}", r.n_symbols));
        }
        if r.n_symbols <= 2 * (self.dsp.edge_guard.max(self.model.window_n)) {
            return bad("run.n_symbols too small for the edge guard".into());
        }
        if self.dsp.edge_guard < self.model.window_n {
            return bad("dsp.edge_guard must be at least model.window_n".into());
        }
        if r.methods.is_empty() {
            return bad("run.methods is empty".into());
        }
        self.methods()?;
        SweepVariable::parse(&r.sweep_variable)?;
        if r.sweep_values.is_empty() {
            return bad("run.sweep_values is empty".into());
        }
        if r.sweep_values.iter().any(|v| !v.is_finite()) {
            return bad("run.sweep_values must be finite".into());
        }
        self.transformer_config().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.train_config(0).validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn methods(&self) -> Result<Vec<Method>> {
        let mut m = self.run.methods.iter().map(|s| Method::parse(s)).collect::<Result<Vec<_>>>()?;
        m.sort();
        m.dedup();
        Ok(m)
    }

    pub fn sweep_variable(&self) -> Result<SweepVariable> {
        SweepVariable::parse(&self.run.sweep_variable)
    }

    /// Copy of the configuration with the sweep variable set to `value`.
    pub fn at_point(&self, var: SweepVariable, value: f64) -> Result<Self> {
        let mut c = self.clone();
        match var {
            SweepVariable::LaunchPowerDbm => c.tx.launch_power_dbm = value,
            SweepVariable::NSpans => {
                if !(value >= 1.0 && value.fract() == 0.0) {
                    return Err(Error::Config(format!("n_spans sweep value {value} is not a positive integer")));
                }
                c.link.n_spans = value as usize;
            }
        }
        Ok(c)
    }

    pub fn symbol_rate(&self) -> f64 {
        self.tx.symbol_rate_gbaud * 1e9
    }

    pub fn wavelength(&self) -> f64 {
        self.tx.wavelength_nm * 1e-9
    }

    pub fn pulse_shape(&self) -> PulseShape {
        PulseShape {
            rolloff: self.tx.rolloff,
            sps: self.tx.sps,
            span_symbols: self.tx.filter_span_symbols,
        }
    }

    pub fn link_config(&self) -> Result<LinkConfig> {
        let l = &self.link;
        let span = convert_units(&EngineeringFiber {
            attenuation_db_per_km: l.attenuation_db_per_km,
            dispersion_ps_per_nm_km: l.dispersion_ps_per_nm_km,
            beta3_ps3_per_km: l.beta3_ps3_per_km,
            n2: l.n2_m2_per_w,
            core_area_um2: l.core_area_um2,
            wavelength_nm: self.tx.wavelength_nm,
            length_km: l.span_km,
        })?;
        let nf = if l.ase { l.noise_figure_db } else { f64::NEG_INFINITY };
        let link = LinkConfig::new(
            span,
            l.n_spans,
            nf,
            self.wavelength(),
            l.ssfm_step_m,
            PolarizationModel::parse(&l.polarization_model)?,
        );
        link.validate()?;
        Ok(link)
    }

    pub fn dsp_config(&self, mode: DspMode) -> DspChainConfig {
        DspChainConfig {
            mode,
            dbp_steps_per_span: self.dsp.dbp_steps_per_span,
            dbp_nl_scaling: self.dsp.dbp_nl_scaling,
            cpr_test_phases: self.dsp.cpr_test_phases,
            cpr_window: self.dsp.cpr_window,
        }
    }

    pub fn transformer_config(&self) -> TransformerConfig {
        TransformerConfig {
            seq_len: tokens_per_sequence(self.model.window_n),
            d_model: FEATURES_PER_TOKEN,
            n_heads: self.model.n_heads,
            n_layers: self.model.n_layers,
            d_ff: self.model.d_ff,
            dropout: self.model.dropout,
            d_out: 2,
        }
    }

    pub fn architecture(&self, method: Method) -> Option<Architecture> {
        match method {
            Method::Transformer => Some(Architecture::Transformer(self.transformer_config())),
            Method::Fcnn => Some(Architecture::Fcnn(FcnnConfig {
                input_dim: tokens_per_sequence(self.model.window_n) * FEATURES_PER_TOKEN,
                hidden: self.model.fcnn_hidden,
                d_out: 2,
            })),
            _ => None,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let m = &self.model;
        TrainConfig {
            batch_size: m.batch_size,
            adam: AdamConfig {
                learning_rate: m.learning_rate,
                beta1: m.beta1,
                beta2: m.beta2,
                eps: m.eps,
            },
            epochs: m.epochs,
            seed,
            chunk_size: m.chunk_size,
        }
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), cfg);
    }

    #[test]
    fn overrides_touch_one_key() {
        let cfg = ExperimentConfig::default();
        let o = cfg
            .with_overrides(&["run.n_symbols=4096", "link.polarization_model=independent-scalar", "tx.launch_power_dbm=2"])
            .unwrap();
        assert_eq!(o.run.n_symbols, 4096);
        assert_eq!(o.link.polarization_model, "independent-scalar");
        assert_eq!(o.tx.launch_power_dbm, 2.0);
        assert_eq!(o.link, LinkSection { polarization_model: "independent-scalar".into(), ..cfg.link.clone() });
        assert!(cfg.with_overrides(&["run.nope=1"]).is_err());
        assert!(cfg.with_overrides(&["nope.n=1"]).is_err());
        assert!(cfg.with_overrides(&["run.n_symbols"]).is_err());
        assert!(cfg.with_overrides(&["run.n_symbols=1000"]).is_err());
    }

    #[test]
    fn rejects_unknown_fields_and_bad_values() {
        assert!(ExperimentConfig::from_toml("[link]\nspans = 3\n").is_err());
        assert!(ExperimentConfig::from_toml("[link]\nspan_km = -1.0\n").is_err());
        assert!(ExperimentConfig::from_toml("[run]\nmethods = [\"magic\"]\n").is_err());
        assert!(ExperimentConfig::from_toml("[run]\nsweep_values = []\n").is_err());
        assert!(ExperimentConfig::from_toml("[model]\nn_heads = 5\n").is_err());
    }

    #[test]
    fn table_values_reach_the_simulation() {
        let cfg = ExperimentConfig::default();
        let link = cfg.link_config().unwrap();
        assert_eq!(link.n_spans, 4);
        assert!((link.span.length - 80e3).abs() < 1e-9);
        assert!((link.amplifier.gain_db - 16.0).abs() < 1e-9);
        assert_eq!(cfg.transformer_config(), TransformerConfig::default());
        assert_eq!(cfg.symbol_rate(), 10e9);
    }
}
