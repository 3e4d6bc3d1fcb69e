use crate::diffusion::{NoiseSchedule, PriorConfig};
use crate::error::{Error, Result};
use crate::scan::ScanDirection;

/// Which optional components take part in the model and the objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Flags {
    /// Diffusion prior injected into every encoder stage.
    pub dsp: bool,
    /// Prompt modulation of the scan parameters.
    pub asp: bool,
    /// Multi-scale, four-direction scanning (single-scale left-to-right
    /// otherwise).
    pub msss: bool,
    /// Boundary-aware refinement head.
    pub barh: bool,
    /// Iterative prior-conditioned refinement.
    pub imdr: bool,
    /// Self-distillation towards the deepest stage.
    pub kd: bool,
}

impl Flags {
    pub const NAMES: [&'static str; 6] = ["dsp", "asp", "msss", "barh", "imdr", "kd"];

    pub fn full() -> Self {
        Self { dsp: true, asp: true, msss: true, barh: true, imdr: true, kd: true }
    }

    pub fn baseline() -> Self {
        Self { dsp: false, asp: false, msss: false, barh: false, imdr: false, kd: false }
    }

    pub fn get(&self, name: &str) -> Option<bool> {
        Some(match name {
            "dsp" => self.dsp,
            "asp" => self.asp,
            "msss" => self.msss,
            "barh" => self.barh,
            "imdr" => self.imdr,
            "kd" => self.kd,
            _ => return None,
        })
    }

    pub fn set(&mut self, name: &str, on: bool) -> Result<()> {
        let slot = match name {
            "dsp" => &mut self.dsp,
            "asp" => &mut self.asp,
            "msss" => &mut self.msss,
            "barh" => &mut self.barh,
            "imdr" => &mut self.imdr,
            "kd" => &mut self.kd,
            _ => return Err(Error::Config(format!("unknown component flag {name:?}"))),
        };
        *slot = on;
        Ok(())
    }

    /// Cumulative ablation ladder, each row adding one component.
    pub fn ladder() -> [(&'static str, Flags); 7] {
        let mut rows = [("State-space baseline", Self::baseline()); 7];
        let labels = ["+DSP", "+ASP", "+MS-SS", "+BARH", "+IMDR", "Full (+KD)"];
        let mut cur = Self::baseline();
        for (i, (label, name)) in labels.iter().zip(Self::NAMES).enumerate() {
            cur.set(name, true).expect("known flag");
            rows[i + 1] = (label, cur);
        }
        rows
    }

    /// Whether the diffusion prior has to be computed at all.
    pub fn needs_prior(&self) -> bool {
        self.dsp || self.imdr
    }
}

impl Default for Flags {
    fn default() -> Self {
        Self::full()
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub aux_channels: usize,
    pub stem_width: usize,
    pub widths: Vec<usize>,
    pub state_dim: usize,
    pub prompt_dim: usize,
    pub latent_channels: usize,
    pub decoder_width: usize,
    pub refine_iters: usize,
    pub scales: Vec<usize>,
    pub directions: Vec<ScanDirection>,
    pub embed_dim: usize,
    pub schedule_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub noise_step: usize,
    pub reverse_steps: usize,
    pub flags: Flags,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            aux_channels: 1,
            stem_width: 16,
            widths: vec![16, 32, 64, 128],
            state_dim: 16,
            prompt_dim: 32,
            latent_channels: 4,
            decoder_width: 16,
            refine_iters: 3,
            scales: vec![1, 2, 4],
            directions: ScanDirection::ALL.to_vec(),
            embed_dim: 64,
            schedule_steps: 100,
            beta_start: 1e-4,
            beta_end: 0.02,
            noise_step: 50,
            reverse_steps: 25,
            flags: Flags::full(),
        }
    }
}

impl NetworkConfig {
    pub fn depth(&self) -> usize {
        self.widths.len()
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.schedule_steps, self.beta_start, self.beta_end)
    }

    pub fn prior(&self) -> PriorConfig {
        PriorConfig {
            latent_channels: self.latent_channels,
            noise_step: self.noise_step,
            reverse_steps: self.reverse_steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.widths.is_empty() || self.widths.contains(&0) {
            return fail(format!("widths must be non-empty and positive: {:?}", self.widths));
        }
        for (name, v) in [
            ("stem_width", self.stem_width),
            ("state_dim", self.state_dim),
            ("prompt_dim", self.prompt_dim),
            ("latent_channels", self.latent_channels),
            ("decoder_width", self.decoder_width),
            ("embed_dim", self.embed_dim),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        crate::scan::MultiScaleConfig::new(self.scales.clone(), self.directions.clone())
            .map_err(|e| Error::Config(e.to_string()))?;
        self.schedule().map_err(|e| Error::Config(e.to_string()))?;
        if self.reverse_steps > self.noise_step || self.noise_step > self.schedule_steps {
            return fail(format!(
                "need reverse_steps <= noise_step <= schedule_steps, got {} / {} / {}",
                self.reverse_steps, self.noise_step, self.schedule_steps
            ));
        }
        Ok(())
    }

    /// Checks that an `h×w` input fits the encoder and latent strides.
    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let stride = (1 << (self.depth() - 1)).max(crate::diffusion::LATENT_STRIDE);
        if h == 0 || w == 0 || !h.is_multiple_of(stride) || !w.is_multiple_of(stride) {
            return Err(Error::Invalid(format!("input {h}x{w} must be a positive multiple of {stride}")));
        }
        Ok(())
    }

    /// Key/value pairs recorded in checkpoints.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let mut out = vec![
            ("aux_channels", self.aux_channels.to_string()),
            ("stem_width", self.stem_width.to_string()),
            ("widths", join(&self.widths)),
            ("state_dim", self.state_dim.to_string()),
            ("prompt_dim", self.prompt_dim.to_string()),
            ("latent_channels", self.latent_channels.to_string()),
            ("decoder_width", self.decoder_width.to_string()),
            ("refine_iters", self.refine_iters.to_string()),
            ("scales", join(&self.scales)),
            (
                "directions",
                self.directions.iter().map(|d| d.name()).collect::<Vec<_>>().join(","),
            ),
            ("embed_dim", self.embed_dim.to_string()),
            ("schedule_steps", self.schedule_steps.to_string()),
            ("beta_start", format!("{:e}", self.beta_start)),
            ("beta_end", format!("{:e}", self.beta_end)),
            ("noise_step", self.noise_step.to_string()),
            ("reverse_steps", self.reverse_steps.to_string()),
        ];
        for name in Flags::NAMES {
            out.push((name, self.flags.get(name).expect("known flag").to_string()));
        }
        out.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// Applies one `key = value` setting. Returns `false` for keys that do
    /// not belong to the network.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let bad = |what: &str| Error::Config(format!("{key}: expected {what}, got {value:?}"));
        let int = || value.trim().parse::<usize>().map_err(|_| bad("a non-negative integer"));
        let float = || value.trim().parse::<f64>().map_err(|_| bad("a number"));
        let list = || -> Result<Vec<usize>> {
            value.split(',').map(|s| s.trim().parse::<usize>().map_err(|_| bad("a comma-separated integer list"))).collect()
        };
        let boolean = || match value.trim() {
            "true" | "on" | "1" => Ok(true),
            "false" | "off" | "0" => Ok(false),
            _ => Err(bad("true/false")),
        };
        match key {
            "aux_channels" => self.aux_channels = int()?,
            "stem_width" => self.stem_width = int()?,
            "widths" => self.widths = list()?,
            "state_dim" => self.state_dim = int()?,
            "prompt_dim" => self.prompt_dim = int()?,
            "latent_channels" => self.latent_channels = int()?,
            "decoder_width" => self.decoder_width = int()?,
            "refine_iters" => self.refine_iters = int()?,
            "scales" => self.scales = list()?,
            "directions" => {
                self.directions = value
                    .split(',')
                    .map(|s| s.trim().parse::<ScanDirection>().map_err(|e| Error::Config(e.to_string())))
                    .collect::<Result<_>>()?
            }
            "embed_dim" => self.embed_dim = int()?,
            "schedule_steps" => self.schedule_steps = int()?,
            "beta_start" => self.beta_start = float()?,
            "beta_end" => self.beta_end = float()?,
            "noise_step" => self.noise_step = int()?,
            "reverse_steps" => self.reverse_steps = int()?,
            k if Flags::NAMES.contains(&k) => self.flags.set(k, boolean()?)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in pairs {
            if !cfg.set(k, v)? {
                return Err(Error::Config(format!("unknown network key {k:?}")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
