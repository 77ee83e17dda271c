"""Match-vs-mismatch networks built from declarative spec strings.

Grammar: ``["O"] "E" <eeg-tokens> "V" <video-tokens> ["-768"]`` with tokens

* ``C``  temporal convolution, kernel 40, stride 40, out = feature_dim;
  when immediately followed by ``D`` it becomes a point-wise (kernel 1)
  convolution that keeps its input channels,
* ``D<n>`` stack of n dilated convolutions (kernel 5, dilation 5^i, padding
  floor((4*5^i+1)/2), ReLU after each); temporal strides (5, 4, 2) take a
  3 s / 1 kHz input from 3000 to 75 steps,
* ``G`` / ``L``  GRU / LSTM along time, hidden size = feature_dim,
* ``T``  3 transformer encoder layers, 1 attention head, width = feature_dim,
  feed-forward 4x, dropout 0.2, sinusoidal position encoding.

A leading ``O`` selects the one-way variant (single video port);
``O-baseline`` is shorthand for the one-way counterpart of ``ECVG``.
Feature dimension is 256, or 768 with the ``-768`` suffix.

Both branches must land on the same temporal length (75 for 3 s inputs);
per feature channel, cosine similarity over time feeds a final linear unit.
The video branch is applied to both ports of a two-way model with shared
weights.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .core import Checkpoint, ConfigError

DEFAULT_FEATURE_DIM = 256
WIDE_FEATURE_DIM = 768
DEFAULT_DILATED_STRIDES = (5, 4, 2)

_TOKEN_RE = re.compile(r"([CDGLT])(\d*)")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    repeat: int = 1
    pointwise: bool = False

    def __post_init__(self) -> None:
        if self.kind not in "CDGLT":
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.repeat < 1:
            raise ConfigError(f"layer repeat must be >= 1, got {self.repeat}")
        if self.pointwise and self.kind != "C":
            raise ConfigError("only C layers can be point-wise")


@dataclass
class ModelSpec:
    spec_string: str
    eeg_branch: list[LayerSpec] = field(default_factory=list)
    video_branch: list[LayerSpec] = field(default_factory=list)
    feature_dim: int = DEFAULT_FEATURE_DIM
    mode: str = "two_way"


def _parse_branch(text: str, where: str) -> list[LayerSpec]:
    if not text or not re.fullmatch(r"(?:[CDGLT]\d*)+", text):
        raise ConfigError(
            f"malformed {where} branch {text!r}: tokens must be C, D<n>, G, L, T"
        )
    layers: list[LayerSpec] = []
    for kind, digits in _TOKEN_RE.findall(text):
        if digits and kind != "D":
            raise ConfigError(f"{where} branch: only D takes a repeat count, got {kind}{digits}")
        layers.append(LayerSpec(kind=kind, repeat=int(digits) if digits else 1))
    out: list[LayerSpec] = []
    for i, layer in enumerate(layers):
        if layer.kind == "D":
            if i == 0 or layers[i - 1].kind != "C":
                raise ConfigError(
                    f"{where} branch: D requires an immediately preceding C "
                    f"(the point-wise convolution)"
                )
            out[-1] = LayerSpec(kind="C", pointwise=True)
        out.append(layer)
    return out


def parse_spec(spec_string: str) -> ModelSpec:
    """Parse a model spec string; raises ConfigError with a grammar diagnostic."""
    s = spec_string.strip()
    if not s:
        raise ConfigError("empty model spec")
    if s == "O-baseline":
        s = "OECVG"
    mode = "two_way"
    if s.startswith("O"):
        mode = "one_way"
        s = s[1:]
    feature_dim = DEFAULT_FEATURE_DIM
    if s.endswith("-768"):
        feature_dim = WIDE_FEATURE_DIM
        s = s[: -len("-768")]
    m = re.fullmatch(r"E(?P<eeg>[A-Z0-9]*)V(?P<video>[A-Z0-9]*)", s)
    if m is None:
        raise ConfigError(
            f"malformed model spec {spec_string!r}: expected "
            f"[O]E<tokens>V<tokens>[-768]"
        )
    spec = ModelSpec(
        spec_string="",
        eeg_branch=_parse_branch(m.group("eeg"), "EEG"),
        video_branch=_parse_branch(m.group("video"), "video"),
        feature_dim=feature_dim,
        mode=mode,
    )
    spec.spec_string = render_spec(spec)
    return spec


def render_spec(spec: ModelSpec) -> str:
    """Canonical string for a ModelSpec (parse -> render -> parse round-trips)."""

    def branch(layers: list[LayerSpec]) -> str:
        parts = []
        for layer in layers:
            if layer.kind == "D" and layer.repeat != 1:
                parts.append(f"D{layer.repeat}")
            else:
                parts.append(layer.kind)
        return "".join(parts)

    out = f"E{branch(spec.eeg_branch)}V{branch(spec.video_branch)}"
    if spec.mode == "one_way":
        out = "O" + out
    if spec.feature_dim != DEFAULT_FEATURE_DIM:
        out += f"-{spec.feature_dim}"
    return out


class SinusoidalPositionEncoding(nn.Module):
    """Classic fixed sin/cos position table, added to [B x T x D] inputs."""

    def __init__(self, d_model: int, max_len: int = 4096):
        super().__init__()
        position = torch.arange(max_len, dtype=torch.float64).unsqueeze(1)
        div = torch.exp(
            torch.arange(0, d_model, 2, dtype=torch.float64) * (-math.log(10000.0) / d_model)
        )
        angles = position * div
        pe = torch.zeros(max_len, d_model, dtype=torch.float64)
        pe[:, 0::2] = torch.sin(angles)
        pe[:, 1::2] = torch.cos(angles[:, : d_model // 2])
        self.register_buffer("pe", pe.to(torch.float32), persistent=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] > self.pe.shape[0]:
            raise ConfigError(f"sequence length {x.shape[1]} exceeds position table")
        return x + self.pe[: x.shape[1]].to(dtype=x.dtype)


class _Recurrent(nn.Module):
    """GRU/LSTM over time for [B x C x T] tensors, emitting hidden per step."""

    def __init__(self, kind: str, in_channels: int, hidden: int):
        super().__init__()
        cls = nn.GRU if kind == "G" else nn.LSTM
        self.rnn = cls(input_size=in_channels, hidden_size=hidden, batch_first=True)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out, _ = self.rnn(x.transpose(1, 2))
        return out.transpose(1, 2)


class _TransformerStack(nn.Module):
    def __init__(
        self,
        in_channels: int,
        feature_dim: int,
        n_layers: int = 3,
        n_heads: int = 1,
        dropout: float = 0.2,
    ):
        super().__init__()
        self.in_proj = (
            nn.Linear(in_channels, feature_dim) if in_channels != feature_dim else None
        )
        self.pos = SinusoidalPositionEncoding(feature_dim)
        self.drop = nn.Dropout(dropout)
        layer = nn.TransformerEncoderLayer(
            d_model=feature_dim,
            nhead=n_heads,
            dim_feedforward=4 * feature_dim,
            dropout=dropout,
            batch_first=True,
        )
        self.encoder = nn.TransformerEncoder(layer, n_layers, enable_nested_tensor=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = x.transpose(1, 2)
        if self.in_proj is not None:
            h = self.in_proj(h)
        h = self.drop(self.pos(h))
        return self.encoder(h).transpose(1, 2)


def build_branch(
    layers: list[LayerSpec],
    in_channels: int,
    feature_dim: int,
    dilated_strides: tuple[int, ...] = DEFAULT_DILATED_STRIDES,
) -> nn.Sequential:
    """Stack of [B x C x T] -> [B x C' x T'] modules ending at feature_dim channels."""
    modules: list[nn.Module] = []
    cur = in_channels
    for layer in layers:
        if layer.kind == "C":
            if layer.pointwise:
                modules.append(nn.Conv1d(cur, cur, kernel_size=1, stride=1))
            else:
                modules.append(nn.Conv1d(cur, feature_dim, kernel_size=40, stride=40))
                cur = feature_dim
        elif layer.kind == "D":
            if len(dilated_strides) != layer.repeat:
                raise ConfigError(
                    f"D{layer.repeat} needs {layer.repeat} temporal strides, "
                    f"got {dilated_strides}"
                )
            for i in range(layer.repeat):
                dilation = 5**i
                modules.append(
                    nn.Conv1d(
                        cur,
                        feature_dim,
                        kernel_size=5,
                        stride=dilated_strides[i],
                        dilation=dilation,
                        padding=(4 * dilation + 1) // 2,
                    )
                )
                modules.append(nn.ReLU())
                cur = feature_dim
        elif layer.kind in ("G", "L"):
            modules.append(_Recurrent(layer.kind, cur, feature_dim))
            cur = feature_dim
        elif layer.kind == "T":
            modules.append(_TransformerStack(cur, feature_dim))
            cur = feature_dim
    if cur != feature_dim:
        raise ConfigError("branch does not end at the model feature dimension")
    return nn.Sequential(*modules)


def cosine_head(eeg_feat: torch.Tensor, video_feat: torch.Tensor) -> torch.Tensor:
    """Per-channel cosine similarity along time: [... x F x T] -> [... x F].

    Zero-norm rows score 0 (neutral evidence); outputs are clamped into
    [-1, 1] so rounding can never push them outside the cosine range.
    """
    if eeg_feat.shape != video_feat.shape:
        raise ConfigError(
            f"cosine head shape mismatch: {tuple(eeg_feat.shape)} vs "
            f"{tuple(video_feat.shape)}"
        )
    num = (eeg_feat * video_feat).sum(dim=-1)
    den = eeg_feat.norm(dim=-1) * video_feat.norm(dim=-1)
    den = den.clamp_min(torch.finfo(eeg_feat.dtype).tiny)
    return (num / den).clamp(-1.0, 1.0)


class MatchModel(nn.Module):
    """Dual-branch network with the per-channel cosine similarity head.

    Two-way mode scores whether port a holds the matching video (the video
    branch processes both ports with the same weights); one-way mode scores
    whether the single video matches the EEG.  ``forward`` returns logits;
    apply a sigmoid for probabilities.
    """

    def __init__(
        self,
        spec: ModelSpec,
        eeg_channels: int = 64,
        video_dim: int = 768,
        dilated_strides: tuple[int, ...] = DEFAULT_DILATED_STRIDES,
    ):
        super().__init__()
        self.spec = spec
        self.eeg_channels = eeg_channels
        self.video_dim = video_dim
        self.eeg_branch = build_branch(
            spec.eeg_branch, eeg_channels, spec.feature_dim, dilated_strides
        )
        self.video_branch = build_branch(
            spec.video_branch, video_dim, spec.feature_dim, dilated_strides
        )
        in_features = spec.feature_dim * (2 if spec.mode == "two_way" else 1)
        self.fc = nn.Linear(in_features, 1)
        # Channel-resolved activation for attribution: the point-wise conv
        # output when the EEG branch starts with one, otherwise the input.
        self.tap_is_pointwise = bool(spec.eeg_branch and spec.eeg_branch[0].pointwise)

    def eeg_activation(self, eeg: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """(64-channel attribution tap, final EEG features)."""
        if self.tap_is_pointwise:
            tap = self.eeg_branch[0](eeg)
            return tap, self.eeg_branch[1:](tap)
        return eeg, self.eeg_branch(eeg)

    def forward(
        self,
        eeg: torch.Tensor,
        video_a: torch.Tensor,
        video_b: torch.Tensor | None = None,
    ) -> torch.Tensor:
        two_way = self.spec.mode == "two_way"
        if two_way and video_b is None:
            raise ConfigError("two-way model needs video_b")
        if not two_way and video_b is not None:
            raise ConfigError("one-way model takes a single video")
        ef = self.eeg_branch(eeg)
        va = self.video_branch(video_a)
        sims = cosine_head(ef, va)
        if two_way:
            vb = self.video_branch(video_b)
            sims = torch.cat([sims, cosine_head(ef, vb)], dim=-1)
        return self.fc(sims).squeeze(-1)


def build_model(
    spec: str | ModelSpec,
    eeg_channels: int = 64,
    video_dim: int = 768,
    dilated_strides: tuple[int, ...] = DEFAULT_DILATED_STRIDES,
    check_compat: bool = True,
    eeg_samples: int = 3000,
    video_frames: int = 75,
) -> MatchModel:
    """Construct a model and verify both branches agree on temporal length."""
    if isinstance(spec, str):
        spec = parse_spec(spec)
    model = MatchModel(spec, eeg_channels, video_dim, dilated_strides)
    if check_compat:
        model.eval()
        with torch.no_grad():
            t_eeg = model.eeg_branch(torch.zeros(1, eeg_channels, eeg_samples)).shape[-1]
            t_vid = model.video_branch(torch.zeros(1, video_dim, video_frames)).shape[-1]
        if t_eeg != t_vid:
            raise ConfigError(
                f"incompatible temporal dims for {spec.spec_string!r}: "
                f"EEG branch gives T={t_eeg}, video branch T={t_vid}"
            )
    return model


def model_from_checkpoint(checkpoint: Checkpoint, **kwargs) -> MatchModel:
    model = build_model(checkpoint.model_spec, **kwargs)
    model.load_state_dict(checkpoint.state)
    model.eval()
    return model


def _as_batch(x: np.ndarray | torch.Tensor, want_dims: int = 3) -> tuple[torch.Tensor, bool]:
    t = torch.as_tensor(np.asarray(x), dtype=torch.float32)
    if t.dim() == want_dims - 1:
        return t.unsqueeze(0), True
    if t.dim() != want_dims:
        raise ConfigError(f"expected {want_dims - 1}-D or {want_dims}-D input, got {t.dim()}-D")
    return t, False


def forward_two_way(model: MatchModel, eeg, video_a, video_b):
    """Probability that port a holds the matching video; accepts single
    samples ([C x T]) or batches, numpy or torch."""
    e, single = _as_batch(eeg)
    va, _ = _as_batch(video_a)
    vb, _ = _as_batch(video_b)
    model.eval()
    with torch.no_grad():
        p = torch.sigmoid(model(e, va, vb))
    return float(p[0]) if single else p.numpy()


def forward_one_way(model: MatchModel, eeg, video):
    """Probability that the single video matches the EEG segment."""
    e, single = _as_batch(eeg)
    v, _ = _as_batch(video)
    model.eval()
    with torch.no_grad():
        p = torch.sigmoid(model(e, v))
    return float(p[0]) if single else p.numpy()


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)
