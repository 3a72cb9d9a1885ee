"""End-to-end forecaster: embedding, dual branches, fusion, QFM, head."""
from __future__ import annotations

import numpy as np

from .checkpoint import load_state, save_state
from .fusion import FusionBlock, FusionConfig
from .head import ForecastHead, LossConfig, total_loss
from .model import BarTrace, DualBranch, ModelConfig, PatchEmbed
from .nn import ParamStore
from .numcore import Tensor, no_grad
from .qfm import QfmBlock, QfmConfig


class Forecaster:
    """The full window -> (cos, sin) model with owned parameters."""

    def __init__(
        self,
        model_cfg: ModelConfig,
        fusion_cfg: FusionConfig,
        qfm_cfg: QfmConfig,
        loss_cfg: LossConfig | None = None,
        n_channels: int = 9,
        init_seed: int = 42,
    ):
        model_cfg.validate()
        fusion_cfg.validate()
        qfm_cfg.validate()
        self.model_cfg = model_cfg
        self.fusion_cfg = fusion_cfg
        self.qfm_cfg = qfm_cfg
        self.loss_cfg = loss_cfg or LossConfig()
        self.n_channels = n_channels

        self.store = ParamStore(np.random.default_rng(init_seed))
        self.embed = PatchEmbed(self.store, "patch", model_cfg, n_channels)
        self.branches = DualBranch(self.store, model_cfg)
        self.fusion = FusionBlock(
            self.store, "fusion", fusion_cfg, in_channels=2 * model_cfg.d_model
        )
        self.qfm = QfmBlock(self.store, "qfm", qfm_cfg, d_in=fusion_cfg.d_out)
        self.head = ForecastHead(
            self.store, "head", qfm_cfg.d_q, model_cfg.head_hidden, eps=model_cfg.eps_div
        )
        self.training = False
        self._drop_rng: np.random.Generator | None = None

    # -- modes -----------------------------------------------------------------

    def train_mode(self, drop_rng: np.random.Generator | None) -> None:
        self.training = True
        self._drop_rng = drop_rng

    def eval_mode(self) -> None:
        self.training = False
        self._drop_rng = None

    # -- forward ----------------------------------------------------------------

    def forward(self, windows: np.ndarray | Tensor) -> tuple[Tensor, dict]:
        """Map (B, L, M) windows to normalized (B, 2) predictions."""
        x = windows if isinstance(windows, Tensor) else Tensor(windows)
        tokens = self.embed(x)
        h1, h2, trace1, trace2 = self.branches.branch_outputs(
            tokens, training=self.training, drop_rng=self._drop_rng
        )
        fused = self.fusion([h1, h2])
        enhanced, maps = self.qfm(fused, training=self.training)
        pred = self.head(enhanced)
        diag = {
            "trace_branch1": trace1,
            "trace_branch2": trace2,
            "measurement_maps": [m.data for m in maps],
            "fused": fused.data,
            "qfm_latent": enhanced.data,
        }
        return pred, diag

    def loss(self, windows: np.ndarray, targets: np.ndarray) -> Tensor:
        pred, _ = self.forward(windows)
        return total_loss(pred, targets, self.loss_cfg)

    def predict_phi(self, windows: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """Reconstructed phase predictions without gradient tracking."""
        was_training = self.training
        self.eval_mode()
        phis = []
        with no_grad():
            for start in range(0, windows.shape[0], batch_size):
                pred, _ = self.forward(windows[start : start + batch_size])
                phis.append(np.arctan2(pred.data[:, 1], pred.data[:, 0]))
        if was_training:
            self.train_mode(self._drop_rng)
        return np.concatenate(phis) if phis else np.zeros(0)

    # -- persistence ------------------------------------------------------------

    def save(self, path) -> None:
        save_state(path, self.store.state_dict())

    def load(self, path) -> None:
        self.store.load_state(load_state(path))


def branch_traces(diag: dict) -> tuple[BarTrace, BarTrace]:
    return diag["trace_branch1"], diag["trace_branch2"]
