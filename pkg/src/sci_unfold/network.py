"""K-phase dense unfolding network: data step, adapted dense features, learned prior."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import __version__
from .data_module import ETA_INIT, PhaseParams, residual_update
from .dfma import DFMA
from .forward import adjoint, normalize_measurement
from .prior import PriorNet, count_parameters
from .tensor_io import load_tensor, save_tensor

CHECKPOINT_VERSION = 1


@dataclass
class NetworkConfig:
    K: int = 10
    conv_mode: str = "3d"
    dfm_branches: tuple = (1, 2, 3)
    dfma_enabled: bool = True
    residual_init: str = "zero"
    widths: tuple = (32, 64, 128)
    weight_sharing: bool = False
    n_f: int = 3
    eta_init: float = ETA_INIT

    def __post_init__(self):
        self.dfm_branches = tuple(sorted(set(self.dfm_branches)))
        self.widths = tuple(int(w) for w in self.widths)
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if len(self.widths) != 3 or min(self.widths) < 1:
            raise ValueError(f"widths must be three positive ints, got {self.widths}")
        if self.conv_mode not in ("3d", "2d"):
            raise ValueError(f"conv_mode must be '3d' or '2d', got {self.conv_mode!r}")
        if not set(self.dfm_branches) <= {1, 2, 3}:
            raise ValueError(f"dfm_branches must be a subset of {{1, 2, 3}}, got {self.dfm_branches}")
        if self.dfma_enabled and not self.dfm_branches:
            raise ValueError("dfma_enabled requires at least one dfm branch")
        if self.residual_init not in ("zero", "measurement"):
            raise ValueError(f"residual_init must be 'zero' or 'measurement', got {self.residual_init!r}")
        if self.n_f % 2 != 1:
            raise ValueError(f"n_f must be odd, got {self.n_f}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dfm_branches"] = list(self.dfm_branches)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown network config keys: {sorted(unknown)}")
        return cls(**d)


def init_state(y, masks, cfg: NetworkConfig):
    """``x0 = Phi^T y`` and ``r0 = 0`` (or ``y`` with ``residual_init='measurement'``); no dense map yet."""
    x0 = adjoint(y, masks)
    r0 = y.clone() if cfg.residual_init == "measurement" else torch.zeros_like(y)
    return x0, r0, None


class Phase(nn.Module):
    def __init__(self, cfg: NetworkConfig, prior: Optional[PriorNet], dfma: Optional[DFMA]):
        super().__init__()
        self.data = PhaseParams(cfg.eta_init)
        # with weight sharing these live on the parent network instead
        self.prior = prior
        self.dfma = dfma


class DenseUnfoldingNet(nn.Module):
    """Parameter registry and forward pass for the whole unrolled reconstruction.

    Parameter names are stable: ``phases.<k>.data.eta_raw``,
    ``phases.<k>.prior.*``, ``phases.<k>.dfma.*`` (or ``shared.*`` with weight
    sharing enabled).
    """

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg

        def make_prior():
            return PriorNet(cfg.widths, cfg.dfm_branches, cfg.conv_mode)

        def make_dfma():
            return DFMA(cfg.widths, cfg.dfm_branches, cfg.n_f) if cfg.dfma_enabled else None

        if cfg.weight_sharing:
            self.shared = nn.ModuleDict({"prior": make_prior()})
            if cfg.dfma_enabled and cfg.K > 1:
                self.shared["dfma"] = make_dfma()
            self.phases = nn.ModuleList(Phase(cfg, None, None) for _ in range(cfg.K))
        else:
            self.shared = None
            # phase 1 has no incoming dense map, so it carries no gate generators
            self.phases = nn.ModuleList(
                Phase(cfg, make_prior(), make_dfma() if k > 0 else None) for k in range(cfg.K)
            )

    def prior_of(self, k: int) -> PriorNet:
        return self.shared["prior"] if self.shared is not None else self.phases[k].prior

    def dfma_of(self, k: int) -> Optional[DFMA]:
        if k == 0 or not self.cfg.dfma_enabled:
            return None
        return self.shared["dfma"] if self.shared is not None else self.phases[k].dfma

    def etas(self) -> list[torch.Tensor]:
        return [p.data.eta for p in self.phases]

    def forward(self, y, masks, return_states: bool = False):
        """Reconstruct (N, B, H, W) from measurements (N, H, W) and masks (B, H, W) or (N, B, H, W).

        Sizes not divisible by 4 are reflect-padded and cropped back.  With
        ``return_states`` the list of per-phase ``(v^k, x^k)`` is returned too.
        """
        h, w = y.shape[-2:]
        ph, pw = (-h) % 4, (-w) % 4
        if ph or pw:
            y, masks = _reflect_pad(y, ph, pw), _reflect_pad(masks, ph, pw)
        masks = masks.to(y.dtype)
        msum = masks.sum(-3)
        ybar = normalize_measurement(y, masks)
        x, r, f = init_state(y, masks, self.cfg)
        states = []
        for k, phase in enumerate(self.phases):
            r = residual_update(r, y, x, masks)
            v = phase.data(x, r, masks, msum)
            f_hat = f
            if f is not None:
                f_hat = _keep_branches(f, self.cfg.dfm_branches)
                dfma = self.dfma_of(k)
                if dfma is not None:
                    f_hat = dfma(f_hat, ybar)
            x, f = self.prior_of(k)(v, ybar, f_hat)
            if return_states:
                states.append((v, x))
        if ph or pw:
            x = x[..., :h, :w]
            states = [(v[..., :h, :w], xs[..., :h, :w]) for v, xs in states]
        return (x, states) if return_states else x

    def reconstruct(self, y, masks, clamp: bool = False):
        """Inference helper taking unbatched (H, W) / (B, H, W) numpy or torch inputs."""
        p = next(self.parameters())
        y_t = torch.as_tensor(np.array(y) if not isinstance(y, torch.Tensor) else y, dtype=p.dtype, device=p.device)
        m_t = torch.as_tensor(np.array(masks) if not isinstance(masks, torch.Tensor) else masks, dtype=p.dtype, device=p.device)
        unbatched = y_t.ndim == 2
        if unbatched:
            y_t = y_t.unsqueeze(0)
        with torch.no_grad():
            x = self(y_t, m_t)
        if clamp:
            x = x.clamp(0.0, 1.0)
        return x[0] if unbatched else x


def _keep_branches(f, branches):
    return type(f)(*(e if (i + 1) in branches else None for i, e in enumerate(f)))


def _reflect_pad(t, ph, pw):
    lead = t.shape[:-2]
    flat = t.reshape(-1, 1, *t.shape[-2:])
    mode = "reflect" if min(t.shape[-2:]) > max(ph, pw) else "replicate"
    out = F.pad(flat, (0, pw, 0, ph), mode=mode)
    return out.reshape(*lead, *out.shape[-2:])


def build_network(cfg: NetworkConfig, seed: Optional[int] = None, dtype=torch.float32) -> DenseUnfoldingNet:
    if seed is not None:
        torch.manual_seed(seed)
    return DenseUnfoldingNet(cfg).to(dtype)


def parameter_count(cfg: NetworkConfig) -> int:
    return count_parameters(DenseUnfoldingNet(cfg))


# --- checkpoints -----------------------------------------------------------

def _group_of(name: str) -> str:
    if name.startswith("phases."):
        return f"phase_{int(name.split('.')[1]):02d}"
    return "shared"


def save_checkpoint(net: DenseUnfoldingNet, directory, extra: Optional[dict] = None) -> Path:
    """Write ``manifest.json`` plus one flat parameter blob per phase (and ``shared`` if used)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    groups: dict[str, list] = {}
    for name, tensor in net.state_dict().items():
        groups.setdefault(_group_of(name), []).append((name, tensor.detach().cpu()))
    dtype = next(net.parameters()).dtype
    np_dtype = np.float64 if dtype == torch.float64 else np.float32
    blobs = {}
    for group, items in sorted(groups.items()):
        entries, offset, chunks = [], 0, []
        for name, tensor in items:
            arr = tensor.numpy().astype(np_dtype).reshape(-1)
            entries.append({"name": name, "shape": list(tensor.shape), "offset": offset})
            offset += arr.size
            chunks.append(arr)
        save_tensor(directory / f"{group}.ten", np.concatenate(chunks) if chunks else np.zeros(0, np_dtype))
        blobs[group] = {"file": f"{group}.ten", "params": entries}
    manifest = {
        "format": "sci_unfold-checkpoint",
        "version": CHECKPOINT_VERSION,
        "package_version": __version__,
        "phases": net.cfg.K,
        "widths": list(net.cfg.widths),
        "conv_mode": net.cfg.conv_mode,
        "dtype": "f64" if np_dtype is np.float64 else "f32",
        "config": net.cfg.to_dict(),
        "blobs": blobs,
    }
    if extra:
        manifest["extra"] = extra
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return directory


def load_checkpoint(directory, device=None) -> DenseUnfoldingNet:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.is_file():
        raise FileNotFoundError(f"no manifest.json in {directory}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {manifest.get('version')}")
    cfg = NetworkConfig.from_dict(manifest["config"])
    dtype = torch.float64 if manifest.get("dtype") == "f64" else torch.float32
    net = DenseUnfoldingNet(cfg).to(dtype)
    state = {}
    for group in manifest["blobs"].values():
        flat = load_tensor(directory / group["file"])
        for entry in group["params"]:
            n = int(np.prod(entry["shape"], dtype=np.int64))
            chunk = flat[entry["offset"]:entry["offset"] + n].reshape(entry["shape"])
            state[entry["name"]] = torch.from_numpy(np.array(chunk)).to(dtype)
    net.load_state_dict(state, strict=True)
    if device is not None:
        net = net.to(device)
    net.eval()
    return net
