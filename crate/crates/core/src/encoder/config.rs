use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::numerics::AttnWindow;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextKind {
    Full,
    Causal,
    CausalLookahead,
}

/// Attention visibility: which neighbouring positions an output may see.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextMode {
    pub kind: ContextKind,
    /// Past positions visible besides the current one; `None` is unlimited.
    #[serde(default)]
    pub left_window: Option<usize>,
    #[serde(default)]
    pub right_window: usize,
}

impl ContextMode {
    pub const DEFAULT_LEFT: usize = 64;
    pub const DEFAULT_LOOKAHEAD: usize = 3;

    pub fn full() -> Self {
        Self {
            kind: ContextKind::Full,
            left_window: None,
            right_window: 0,
        }
    }

    pub fn causal(left_window: Option<usize>) -> Self {
        Self {
            kind: ContextKind::Causal,
            left_window,
            right_window: 0,
        }
    }

    pub fn causal_lookahead(left_window: Option<usize>, right_window: usize) -> Self {
        Self {
            kind: ContextKind::CausalLookahead,
            left_window,
            right_window,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ContextKind::Full if self.left_window.is_some() || self.right_window != 0 => {
                Err(config_err!("full context takes no windows"))
            }
            ContextKind::Causal if self.right_window != 0 => Err(config_err!("causal context needs right_window = 0")),
            _ => Ok(()),
        }
    }

    /// Number of future positions an output can depend on; `None` if
    /// unbounded.
    pub fn lookahead(&self) -> Option<usize> {
        match self.kind {
            ContextKind::Full => None,
            ContextKind::Causal => Some(0),
            ContextKind::CausalLookahead => Some(self.right_window),
        }
    }

    /// Visibility of attention layer `layer`. Only the first layer looks
    /// ahead, so the stacked encoder's total lookahead equals `right_window`
    /// instead of growing with depth.
    pub fn layer_window(&self, layer: usize) -> AttnWindow {
        let w = self.window();
        match self.kind {
            ContextKind::CausalLookahead if layer > 0 => AttnWindow {
                left: w.left,
                right: Some(0),
            },
            _ => w,
        }
    }

    pub fn window(&self) -> AttnWindow {
        match self.kind {
            ContextKind::Full => AttnWindow::FULL,
            ContextKind::Causal => AttnWindow {
                left: self.left_window,
                right: Some(0),
            },
            ContextKind::CausalLookahead => AttnWindow {
                left: self.left_window,
                right: Some(self.right_window),
            },
        }
    }
}

impl Default for ContextMode {
    fn default() -> Self {
        Self::full()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub d_model: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub input_dim: usize,
    pub vocab_size: usize,
    #[serde(default)]
    pub context_mode: ContextMode,
    #[serde(default)]
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            num_layers: 4,
            d_model: 128,
            num_heads: 4,
            ffn_dim: 512,
            input_dim: 80,
            vocab_size: 256,
            context_mode: ContextMode::full(),
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.num_heads == 0 || self.ffn_dim == 0 || self.input_dim == 0 || self.vocab_size == 0 {
            return Err(config_err!("encoder sizes must be positive: {self:?}"));
        }
        if self.d_model % self.num_heads != 0 {
            return Err(config_err!(
                "d_model {} is not divisible by num_heads {}",
                self.d_model,
                self.num_heads
            ));
        }
        self.context_mode.validate()
    }

    /// Closed-form parameter count of the encoder plus its vocabulary head.
    pub fn parameter_count(&self) -> usize {
        let (d, f, i, v) = (self.d_model, self.ffn_dim, self.input_dim, self.vocab_size);
        let block = 2 * d + 3 * d * d + (d * d + d) + 2 * d + (d * f + f) + (f * d + d);
        (i * d + d) + self.num_layers * block + 2 * d + (d * v + v)
    }
}
