"""Benchmark scoring and ablation grids."""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np
import torch

from .forward import MaskSet, compress
from .metrics import frame_scores, psnr
from .network import DenseUnfoldingNet, NetworkConfig, parameter_count
from .tensor_io import load_tensor

ABLATION_AXES = ("conv_mode", "dfm_branches", "dfma", "phase_count")
PHASE_COUNTS = (2, 4, 6, 8, 10)


@dataclass
class SceneResult:
    name: str
    psnr: list
    ssim: list
    seconds: float
    psnr_mean: float = field(init=False)
    ssim_mean: float = field(init=False)

    def __post_init__(self):
        self.psnr_mean = float(np.mean(self.psnr))
        self.ssim_mean = float(np.mean(self.ssim))


@dataclass
class Scene:
    name: str
    gt: np.ndarray
    masks: np.ndarray
    measurement: np.ndarray


def load_scene(directory) -> Scene:
    directory = Path(directory)
    for required in ("gt.ten", "masks.ten"):
        if not (directory / required).is_file():
            raise FileNotFoundError(f"scene {directory} is missing {required}")
    gt = load_tensor(directory / "gt.ten").astype(np.float64)
    if gt.max() > 1.0 + 1e-6:
        gt = gt / 255.0
    masks = MaskSet(load_tensor(directory / "masks.ten"))
    if gt.shape != masks.shape:
        raise ValueError(f"scene {directory.name}: ground truth {gt.shape} vs masks {masks.shape}")
    meas_path = directory / "measurement.ten"
    if meas_path.is_file():
        y = load_tensor(meas_path).astype(np.float64)
        if y.shape != gt.shape[1:]:
            raise ValueError(f"scene {directory.name}: measurement {y.shape} vs frames {gt.shape[1:]}")
    else:
        y = compress(gt, masks)
    return Scene(directory.name, gt, masks.as_array(), y)


def list_scenes(dataset) -> list[Path]:
    dataset = Path(dataset)
    if not dataset.is_dir():
        raise FileNotFoundError(f"benchmark directory {dataset} does not exist")
    scenes = sorted(p for p in dataset.iterdir() if (p / "gt.ten").is_file())
    if not scenes:
        raise FileNotFoundError(f"no scenes with gt.ten under {dataset}")
    return scenes


Reconstructor = Union[DenseUnfoldingNet, Callable[[np.ndarray, np.ndarray], np.ndarray]]


def _as_callable(rec: Reconstructor):
    if isinstance(rec, DenseUnfoldingNet):
        rec.eval()
        return lambda y, m: rec.reconstruct(y, m).cpu().numpy()
    return rec


def evaluate_benchmark(rec: Reconstructor, dataset, clamp: bool = True,
                       per_measurement: bool = False) -> tuple[list[SceneResult], SceneResult]:
    """Score every scene; the aggregate row averages per-frame values over all scenes.

    With ``per_measurement`` the PSNR is computed once on the whole block
    instead of per frame (reported as a single-entry list).
    """
    fn = _as_callable(rec)
    results = []
    for path in list_scenes(dataset):
        scene = load_scene(path)
        t0 = time.perf_counter()
        x = np.asarray(fn(scene.measurement, scene.masks), dtype=np.float64)
        seconds = time.perf_counter() - t0
        if x.shape != scene.gt.shape:
            raise ValueError(f"scene {scene.name}: reconstruction {x.shape} vs ground truth {scene.gt.shape}")
        if clamp:
            x = np.clip(x, 0.0, 1.0)
        p, s = frame_scores(x, scene.gt)
        if per_measurement:
            p = [psnr(x, scene.gt)]
        results.append(SceneResult(scene.name, p, s, seconds))
    avg = SceneResult(
        "Average",
        [v for r in results for v in r.psnr],
        [v for r in results for v in r.ssim],
        float(np.mean([r.seconds for r in results])),
    )
    return results, avg


def format_table(results, aggregate) -> str:
    rows = [(r.name, f"{r.psnr_mean:.2f}", f"{r.ssim_mean:.3f}", f"{r.seconds:.3f}") for r in [*results, aggregate]]
    head = ("Scene", "PSNR", "SSIM", "Time(s)")
    widths = [max(len(row[i]) for row in [head, *rows]) for i in range(4)]
    line = lambda row: "  ".join(c.ljust(widths[0]) if i == 0 else c.rjust(widths[i]) for i, c in enumerate(row))
    sep = "-" * len(line(head))
    out = [line(head), sep, *(line(r) for r in rows[:-1]), sep, line(rows[-1])]
    return "\n".join(out) + "\n"


def results_json(results, aggregate) -> dict:
    return {"scenes": [asdict(r) for r in results], "average": asdict(aggregate)}


def write_results(path, results, aggregate) -> None:
    Path(path).write_text(json.dumps(results_json(results, aggregate), indent=2) + "\n")


# --- ablations -------------------------------------------------------------

@dataclass
class Variant:
    label: str
    cfg: NetworkConfig
    params: int = 0
    psnr: Optional[float] = None
    ssim: Optional[float] = None


def ablation_variants(axis: str, base: NetworkConfig) -> list[Variant]:
    if axis == "conv_mode":
        plain = replace(base, dfm_branches=(), dfma_enabled=False)
        return [Variant("2DCN", replace(plain, conv_mode="2d")), Variant("3DCN", replace(plain, conv_mode="3d"))]
    if axis == "dfm_branches":
        plain = replace(base, conv_mode="3d", dfm_branches=(), dfma_enabled=False)
        out = [Variant("3DCN", plain)]
        for branches in ((1,), (1, 2), (1, 2, 3)):
            name = "3DCN+" + "+".join(f"DFM{b}" for b in branches)
            out.append(Variant(name, replace(plain, dfm_branches=branches)))
            out.append(Variant(name + "+DFMA", replace(plain, dfm_branches=branches, dfma_enabled=True)))
        return out
    if axis == "dfma":
        full = replace(base, dfm_branches=base.dfm_branches or (1, 2, 3))
        return [Variant("DFM", replace(full, dfma_enabled=False)), Variant("DFM+DFMA", replace(full, dfma_enabled=True))]
    if axis == "phase_count":
        return [Variant(f"K={k}", replace(base, K=k)) for k in PHASE_COUNTS]
    raise ValueError(f"unknown ablation axis {axis!r}; expected one of {ABLATION_AXES}")


def _count(cfg: NetworkConfig) -> int:
    with torch.device("meta"):
        return parameter_count(cfg)


def check_structure(axis: str, variants: list[Variant]) -> None:
    """Raise ``AssertionError`` unless parameter counts grow along the axis as expected."""
    for v in variants:
        v.params = _count(v.cfg)
    by = {v.label: v.params for v in variants}
    if axis == "conv_mode":
        assert by["2DCN"] < by["3DCN"], f"2d ({by['2DCN']}) must have fewer parameters than 3d ({by['3DCN']})"
    elif axis == "dfm_branches":
        chain = [v for v in variants if not v.cfg.dfma_enabled]
        for a, b in zip(chain, chain[1:]):
            assert a.params < b.params, f"{b.label} must add parameters over {a.label}"
        for v in variants:
            if v.cfg.dfma_enabled:
                off = by[v.label[:-len("+DFMA")]]
                assert off < v.params, f"{v.label} must add parameters over its DFMA-off twin"
    elif axis == "dfma":
        assert by["DFM"] < by["DFM+DFMA"], "DFMA must add parameters"
    elif axis == "phase_count":
        counts = [v.params for v in variants]
        assert all(a < b for a, b in zip(counts, counts[1:])), f"parameter count must grow with K: {counts}"


def run_ablation(axis: str, base: NetworkConfig, budget: int = 0, train_cfg=None, masks: Optional[MaskSet] = None,
                 corpus=None, bench=None, device="cpu") -> list[Variant]:
    """Materialise the variant grid for ``axis``, check its structure and optionally train/score each variant.

    ``budget`` is the optimizer-step budget per variant; 0 means structure only.
    Every variant trains from the same seed on the same clips and masks.
    """
    variants = ablation_variants(axis, base)
    check_structure(axis, variants)
    if budget <= 0:
        return variants
    from .training import sample_clips, train

    if train_cfg is None or masks is None or corpus is None or bench is None:
        raise ValueError("training ablations need train_cfg, masks, corpus and bench")
    tcfg = replace(train_cfg, max_steps=budget)
    clips = sample_clips(corpus, tcfg)
    for v in variants:
        net, _ = train(tcfg, v.cfg, masks, clips=clips, device=device)
        _, avg = evaluate_benchmark(net, bench)
        v.psnr, v.ssim = avg.psnr_mean, avg.ssim_mean
    return variants


def format_ablation(axis: str, variants: list[Variant]) -> str:
    lines = [f"ablation: {axis}", f"{'variant':<28}{'params':>12}{'PSNR':>9}{'SSIM':>8}"]
    for v in variants:
        p = f"{v.psnr:.2f}" if v.psnr is not None else "-"
        s = f"{v.ssim:.3f}" if v.ssim is not None else "-"
        lines.append(f"{v.label:<28}{v.params:>12}{p:>9}{s:>8}")
    return "\n".join(lines) + "\n"
